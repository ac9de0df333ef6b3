#include "cerberus/tensor.hpp"

#include <cmath>
#include <sstream>

namespace cerberus {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

long shape_numel(const Shape& shape) {
  long n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative extent in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  const long n = shape_numel(shape);
  node->shape = std::move(shape);
  node->data = Eigen::ArrayXd::Zero(n);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  const long n = shape_numel(shape);
  node->shape = std::move(shape);
  node->data = Eigen::ArrayXd::Constant(n, value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full(Shape{}, value, requires_grad);
}

Tensor Tensor::from_array(Shape shape, Eigen::ArrayXd values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& values, bool requires_grad) {
  Eigen::ArrayXd arr(static_cast<long>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) arr[static_cast<long>(i)] = values[i];
  return from_array(std::move(shape), std::move(arr), requires_grad);
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() requires a size-1 tensor, got shape " + shape_to_string(shape()));
  }
  return node_->data[0];
}

Eigen::ArrayXd& Tensor::grad() {
  if (node_->grad.size() == 0) node_->grad = Eigen::ArrayXd::Zero(node_->data.size());
  return node_->grad;
}

const Eigen::ArrayXd& Tensor::grad() const {
  if (node_->grad.size() == 0) node_->grad = Eigen::ArrayXd::Zero(node_->data.size());
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad.size() > 0) node_->grad.setZero();
}

void Tensor::accumulate_grad(const Eigen::ArrayXd& g) {
  if (g.size() != node_->data.size()) {
    throw DimensionError("gradient length " + std::to_string(g.size()) +
                         " does not match tensor of shape " + shape_to_string(shape()));
  }
  if (node_->grad.size() == 0) {
    node_->grad = g;
  } else {
    node_->grad += g;
  }
}

void Tensor::check_finite(const char* what) const {
  if (!node_->data.isFinite().all()) {
    throw NumericError(std::string(what) + " produced a non-finite value");
  }
}

namespace {
thread_local GradientTape* g_active_tape = nullptr;
}

GradientTape::GradientTape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

GradientTape::~GradientTape() { g_active_tape = previous_; }

GradientTape* GradientTape::active() { return g_active_tape; }

void GradientTape::record(std::function<void()> backward_step) {
  steps_.push_back(std::move(backward_step));
}

void GradientTape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward() requires a scalar loss, got shape " +
                         shape_to_string(loss.shape()));
  }
  loss.check_finite("loss");
  Tensor mutable_loss = loss;
  mutable_loss.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void GradientTape::clear() { steps_.clear(); }

}  // namespace cerberus
