#pragma once

#include "svp/rng.hpp"
#include "svp/tensor.hpp"

namespace svp {

// Diagonal Gaussian parameterized by mean and log-variance. Networks clamp
// log_var to [-10, 10] before constructing one of these.
struct DiagGaussian {
    Tensor mean;
    Tensor log_var;

    DiagGaussian() = default;
    DiagGaussian(Tensor mean_, Tensor log_var_);

    // N(0, I) of the given shape.
    static DiagGaussian standard(Shape shape);
};

inline constexpr double kLogVarClamp = 10.0;
inline constexpr double kSigmaVaeVarFloor = 1e-6;

// mean + exp(log_var / 2) .* noise; the identity path through the mean.
Tensor reparam_sample(const DiagGaussian& g, const Tensor& noise);
// draws noise from the stream, then reparameterizes
Tensor reparam_sample(const DiagGaussian& g, RngStream& rng);

// Analytic KL(q || p), summed over dimensions; non-negative.
Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p);

// KL(q || N(0, I)) computed directly.
Tensor kl_standard(const DiagGaussian& q);

// Sum of elementwise log N(x; mean, exp(log_var)); includes the log(2*pi)
// constants, which training losses elsewhere drop.
Tensor gauss_log_prob(const DiagGaussian& g, const Tensor& x);

// Calibrated Gaussian reconstruction loss: the decoder variance is set to
// max(MSE, floor) as a function of the prediction, and gradients flow through
// both the log-variance term and the scaled error term. The additive
// D/2*log(2*pi) constant is dropped.
struct SigmaVaeResult {
    Tensor loss;
    double calibrated_var;
};
SigmaVaeResult sigma_vae_nll(const Tensor& pred, const Tensor& target,
                             double var_floor = kSigmaVaeVarFloor);

}  // namespace svp
