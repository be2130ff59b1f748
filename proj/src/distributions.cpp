#include "svp/distributions.hpp"

namespace svp {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

DiagGaussian::DiagGaussian(Tensor mean_, Tensor log_var_)
    : mean(std::move(mean_)), log_var(std::move(log_var_)) {
    check(mean.shape() == log_var.shape(),
          "DiagGaussian: mean/log_var shapes differ, " + shape_str(mean.shape()) +
              " vs " + shape_str(log_var.shape()));
    ensure_finite(log_var.data(), log_var.size(), "DiagGaussian log_var");
}

DiagGaussian DiagGaussian::standard(Shape shape) {
    return DiagGaussian(Tensor(shape), Tensor(shape));
}

Tensor reparam_sample(const DiagGaussian& g, const Tensor& noise) {
    check(noise.shape() == g.mean.shape(), "reparam_sample: noise shape mismatch");
    return g.mean + exp(g.log_var * 0.5) * noise;
}

Tensor reparam_sample(const DiagGaussian& g, RngStream& rng) {
    Tensor noise(g.mean.shape());
    double* p = noise.data();
    for (int64_t i = 0; i < noise.size(); ++i) p[i] = rng.normal();
    return reparam_sample(g, noise);
}

Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
    check(q.mean.shape() == p.mean.shape(), "kl_diag: shape mismatch");
    Tensor dl = q.log_var - p.log_var;
    Tensor dm = q.mean - p.mean;
    return 0.5 * sum(exp(dl) + square(dm) * exp(-p.log_var) - 1.0 + p.log_var -
                     q.log_var);
}

Tensor kl_standard(const DiagGaussian& q) {
    return 0.5 * sum(exp(q.log_var) + square(q.mean) - 1.0 - q.log_var);
}

Tensor gauss_log_prob(const DiagGaussian& g, const Tensor& x) {
    check(x.shape() == g.mean.shape(), "gauss_log_prob: shape mismatch");
    return -0.5 * sum(square(x - g.mean) * exp(-g.log_var) + g.log_var + kLog2Pi);
}

SigmaVaeResult sigma_vae_nll(const Tensor& pred, const Tensor& target,
                             double var_floor) {
    check(pred.shape() == target.shape(), "sigma_vae_nll: shape mismatch");
    double d = static_cast<double>(pred.size());
    Tensor mse = mean(square(pred - target));
    Tensor var = clamp_min(mse, var_floor);
    Tensor loss = (d / 2.0) * (log(var) + mse / var);
    return {loss, var.item()};
}

}  // namespace svp
