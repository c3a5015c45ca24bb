#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "mclone/errors.hpp"

namespace mclone {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& dims);

class Tensor;

namespace detail {

// Receives the gradient flowing into a node and one grad buffer per parent
// (nullptr for parents that are not tracked).
using BackwardFn =
    std::function<void(std::span<const float> grad_out, std::span<float* const> parent_grads)>;

struct TapeNode {
  std::size_t size = 0;
  std::vector<int> parents;
  BackwardFn backward;
  std::vector<float> grad;
};

struct TapeState {
  std::vector<TapeNode> nodes;
  bool consumed = false;
  std::size_t visited = 0;

  float* grad_buffer(int id);
};

}  // namespace detail

/// Dense row-major float tensor. Data is immutable and shared between copies;
/// ops always produce fresh tensors. A tensor produced under a Tape carries a
/// handle to its node so gradients can flow back through it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape dims, std::vector<float> data);

  static Tensor zeros(Shape dims);
  static Tensor full(Shape dims, float value);
  static Tensor ones(Shape dims) { return full(std::move(dims), 1.0f); }
  static Tensor scalar(float value) { return Tensor({}, {value}); }
  static Tensor randn(Shape dims, std::mt19937_64& rng, float stddev = 1.0f);

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  /// Size along `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool empty() const { return !data_; }

  std::span<const float> data() const;
  const std::vector<float>& vec() const;
  std::shared_ptr<const std::vector<float>> shared_data() const { return data_; }
  float operator[](std::size_t i) const { return (*data_)[i]; }
  /// Value of a single-element tensor.
  float item() const;
  /// Like item(), but reductions also keep their double-precision total,
  /// which finite-difference checks need to resolve small perturbations.
  double scalar_value() const;

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }
  /// Same values, no tape handle.
  Tensor detach() const;

  bool bit_equal(const Tensor& other) const;

 private:
  friend class Tape;
  friend void detail_set_precise(Tensor& t, double v);
  friend Tensor record_op(Shape dims, std::vector<float> data, std::initializer_list<const Tensor*> inputs,
                          const char* op, detail::BackwardFn backward);

  Shape dims_;
  std::shared_ptr<const std::vector<float>> data_;
  std::shared_ptr<detail::TapeState> tape_;
  int node_ = -1;
  double precise_ = std::numeric_limits<double>::quiet_NaN();
};

/// Attaches the double-precision value of a scalar reduction result.
void detail_set_precise(Tensor& t, double v);

/// Builds the result tensor of an op. Rejects non-finite values and, when any
/// input is tracked, appends a node to that input's tape.
Tensor record_op(Shape dims, std::vector<float> data, std::initializer_list<const Tensor*> inputs,
                 const char* op, detail::BackwardFn backward);

/// Define-by-run recording scope. Leaves enter through `watch`; every op
/// touching a watched tensor is recorded in order, so parents always precede
/// children. One backward pass per recording.
class Tape {
 public:
  Tape();

  Tensor watch(const Tensor& leaf);
  void backward(const Tensor& root);
  /// Gradient accumulated on a watched tensor (zeros if it never received any).
  Tensor grad(const Tensor& watched) const;

  std::size_t node_count() const { return state_->nodes.size(); }
  std::size_t visited_count() const { return state_->visited; }

 private:
  std::shared_ptr<detail::TapeState> state_;
};

}  // namespace mclone
