#include "cerberus/grad_check.hpp"

#include <cmath>

namespace cerberus {

namespace {

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h,
                         const std::vector<long>& coords) {
  Tensor probe = x;
  probe.set_requires_grad(true);
  probe.zero_grad();

  Eigen::ArrayXd analytic;
  {
    GradientTape tape;
    Tensor loss = f(probe);
    tape.backward(loss);
    analytic = probe.grad();
    tape.clear();
  }

  std::vector<long> idx = coords;
  if (idx.empty()) {
    idx.resize(static_cast<std::size_t>(x.size()));
    for (long i = 0; i < x.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  }

  double max_err = 0.0;
  for (long i : idx) {
    const double saved = probe.array()[i];
    probe.array()[i] = saved + h;
    const double fp = f(probe).item();
    probe.array()[i] = saved - h;
    const double fm = f(probe).item();
    probe.array()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    max_err = std::max(max_err, relative_error(analytic[i], numeric));
  }
  return max_err;
}

double finite_diff_check_multi(const std::function<Tensor()>& f, std::vector<Tensor> params,
                               std::size_t param_index, double h,
                               const std::vector<long>& coords) {
  Tensor probe = params[param_index];
  for (Tensor& p : params) p.zero_grad();

  Eigen::ArrayXd analytic;
  {
    GradientTape tape;
    Tensor loss = f();
    tape.backward(loss);
    analytic = probe.grad();
    tape.clear();
  }

  std::vector<long> idx = coords;
  if (idx.empty()) {
    idx.resize(static_cast<std::size_t>(probe.size()));
    for (long i = 0; i < probe.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  }

  double max_err = 0.0;
  for (long i : idx) {
    const double saved = probe.array()[i];
    probe.array()[i] = saved + h;
    const double fp = f().item();
    probe.array()[i] = saved - h;
    const double fm = f().item();
    probe.array()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

}  // namespace cerberus
