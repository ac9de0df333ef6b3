#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cerberus/errors.hpp"

namespace cerberus {

using Shape = std::vector<int>;

std::string shape_to_string(const Shape& shape);
long shape_numel(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  Eigen::ArrayXd data;   // row-major flattening of `shape`
  bool requires_grad = false;
  Eigen::ArrayXd grad;   // empty until first accumulation
};

}  // namespace detail

// Dense f64 array with value semantics on a shared node, so that recorded
// operations and the caller observe the same gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_array(Shape shape, Eigen::ArrayXd values, bool requires_grad = false);
  static Tensor from_vector(Shape shape, const std::vector<double>& values,
                            bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  long size() const { return node_->data.size(); }

  Eigen::ArrayXd& array() { return node_->data; }
  const Eigen::ArrayXd& array() const { return node_->data; }
  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }

  // Value of a size-1 tensor.
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  // Gradient buffer; allocates zeros on first access.
  Eigen::ArrayXd& grad();
  const Eigen::ArrayXd& grad() const;
  bool has_grad() const { return node_->grad.size() > 0; }
  void zero_grad();
  void accumulate_grad(const Eigen::ArrayXd& g);

  // Same underlying node?
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Throws NumericError if any entry is NaN/Inf.
  void check_finite(const char* what) const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of executed operations. Constructing a tape makes it the
// active recorder for the current thread; ops append backward steps that are
// replayed in exact reverse order by backward().
class GradientTape {
 public:
  GradientTape();
  ~GradientTape();

  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  void record(std::function<void()> backward_step);

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The loss must
  // be a size-1 tensor recorded on this tape.
  void backward(const Tensor& loss);

  // Frees all recorded state.
  void clear();

  std::size_t size() const { return steps_.size(); }

  // The tape currently recording on this thread, or nullptr.
  static GradientTape* active();

 private:
  std::vector<std::function<void()>> steps_;
  GradientTape* previous_ = nullptr;
};

}  // namespace cerberus
