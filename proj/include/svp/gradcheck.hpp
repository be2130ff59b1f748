#pragma once

#include <functional>
#include <string>
#include <vector>

#include "svp/rng.hpp"
#include "svp/tensor.hpp"

namespace svp {

// Central finite differences at perturbation eps against reverse-mode
// gradients, in 64-bit. Returns the worst
// |analytic - fd| / max(1, |analytic|) over the checked components.
// `loss` must rebuild the graph on every call. When max_checks_per_input > 0
// only that many randomly chosen components per input are perturbed.
double fd_worst_rel_err(const std::function<Tensor()>& loss,
                        std::vector<Tensor> inputs, double eps = 1e-5,
                        int max_checks_per_input = -1,
                        RngStream* picker = nullptr);

struct GradCheckCase {
    std::string name;
    std::function<double()> run;  // worst relative error
};

struct GradCheckReport {
    std::string name;
    double worst_rel_err;
    bool pass;
};

inline constexpr double kGradCheckTol = 1e-4;

// Every differentiable operation once, plus one end-to-end training loss per
// model kind.
std::vector<GradCheckCase> all_gradchecks();
std::vector<GradCheckReport> run_gradchecks();

}  // namespace svp
