#pragma once

#include <functional>
#include <vector>

#include "cerberus/tensor.hpp"

namespace cerberus {

// Scalar-valued, deterministic function of one tensor. The callable must
// build its graph from the tensor it is given (ops record onto whatever tape
// is active when it runs).
using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares reverse-mode gradients of f at x against central finite
// differences (f(x+h e_i) - f(x-h e_i)) / 2h over the given coordinates
// (all coordinates when `coords` is empty). Returns the maximum relative
// error, with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h,
                         const std::vector<long>& coords = {});

// Same check for a function of several tensors, differentiating w.r.t.
// params[param_index] at the given coordinates.
double finite_diff_check_multi(const std::function<Tensor()>& f, std::vector<Tensor> params,
                               std::size_t param_index, double h,
                               const std::vector<long>& coords = {});

}  // namespace cerberus
