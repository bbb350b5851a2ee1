#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "msxt/tensor.hpp"

// Finite-difference verification of backward rules. The callable rebuilds the
// forward graph from the current leaf values and returns a scalar loss; leaves
// are perturbed in place through leaf_value().

namespace msxt {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_param = 0;  // index into the checked-leaf list
    std::size_t worst_index = 0;  // flat index within that leaf
    double analytic = 0.0;        // gradient at the worst coordinate
    double numeric = 0.0;         // central difference at the worst coordinate
};

// Relative error with an absolute floor so near-zero pairs compare cleanly.
inline double grad_rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    return std::fabs(analytic - numeric) / denom;
}

// Compares analytic gradients of `f` against central differences for every
// coordinate of every leaf in `leaves`. `f` must be a pure function of the
// leaf values (re-seed any internal RNG on each call).
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>*> leaves, double h = 1e-5) {
    if (leaves.empty()) throw ContractError("grad_check: no leaves");
    for (auto* leaf : leaves) {
        if (!leaf->requires_grad()) throw ContractError("grad_check: leaf does not require grad");
        leaf->zero_grad();
    }

    auto loss = f();
    backward(loss);

    std::vector<std::vector<double>> analytic(leaves.size());
    for (std::size_t p = 0; p < leaves.size(); ++p)
        analytic[p] = leaves[p]->has_grad() ? leaves[p]->grad() : std::vector<double>(leaves[p]->size(), 0.0);

    GradCheckResult res;
    NoGradGuard no_grad;
    for (std::size_t p = 0; p < leaves.size(); ++p) {
        auto& vals = leaves[p]->leaf_value();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double fp = f().item();
            vals[i] = orig - h;
            const double fm = f().item();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = grad_rel_err(analytic[p][i], numeric);
            if (err > res.max_rel_err) {
                res.max_rel_err = err;
                res.worst_param = p;
                res.worst_index = i;
                res.analytic = analytic[p][i];
                res.numeric = numeric;
            }
        }
    }
    return res;
}

inline GradCheckResult grad_check(const std::function<Tensor<double>()>& f, Tensor<double>& leaf,
                                  double h = 1e-5) {
    return grad_check(f, std::vector<Tensor<double>*>{&leaf}, h);
}

}  // namespace msxt
