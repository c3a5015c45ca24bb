#include "mclone/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace mclone {

std::string dims_to_string(const std::vector<std::int64_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& dims) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

float* detail::TapeState::grad_buffer(int id) {
  auto& node = nodes[static_cast<std::size_t>(id)];
  if (node.grad.empty()) node.grad.assign(node.size, 0.0f);
  return node.grad.data();
}

Tensor::Tensor(Shape dims, std::vector<float> data) : dims_(std::move(dims)) {
  for (auto d : dims_) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims_));
  }
  if (shape_numel(dims_) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor dims " + dims_to_string(dims_) + " do not match " +
                     std::to_string(data.size()) + " values");
  }
  data_ = std::make_shared<const std::vector<float>>(std::move(data));
}

Tensor Tensor::zeros(Shape dims) { return full(std::move(dims), 0.0f); }

Tensor Tensor::full(Shape dims, float value) {
  auto n = static_cast<std::size_t>(shape_numel(dims));
  return Tensor(std::move(dims), std::vector<float>(n, value));
}

Tensor Tensor::randn(Shape dims, std::mt19937_64& rng, float stddev) {
  std::normal_distribution<float> normal(0.0f, stddev);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(dims)));
  for (auto& x : v) x = normal(rng);
  return Tensor(std::move(dims), std::move(v));
}

std::int64_t Tensor::dim(int axis) const {
  int r = static_cast<int>(dims_.size());
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + dims_to_string(dims_));
  return dims_[static_cast<std::size_t>(a)];
}

std::span<const float> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

const std::vector<float>& Tensor::vec() const {
  static const std::vector<float> kEmpty;
  return data_ ? *data_ : kEmpty;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor with dims " + dims_to_string(dims_));
  return (*data_)[0];
}

double Tensor::scalar_value() const {
  float v = item();
  return std::isnan(precise_) ? static_cast<double>(v) : precise_;
}

void detail_set_precise(Tensor& t, double v) { t.precise_ = v; }

Tensor Tensor::detach() const {
  Tensor t;
  t.dims_ = dims_;
  t.data_ = data_;
  t.precise_ = precise_;
  return t;
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (dims_ != other.dims_ || numel() != other.numel()) return false;
  if (numel() == 0) return true;
  return std::memcmp(data_->data(), other.data_->data(), numel() * sizeof(float)) == 0;
}

Tensor record_op(Shape dims, std::vector<float> data, std::initializer_list<const Tensor*> inputs,
                 const char* op, detail::BackwardFn backward) {
  for (float v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Tensor out(std::move(dims), std::move(data));

  std::shared_ptr<detail::TapeState> tape;
  for (const Tensor* in : inputs) {
    if (!in->tracked()) continue;
    if (tape && tape != in->tape_) throw TapeError(std::string(op) + ": inputs recorded on different tapes");
    tape = in->tape_;
  }
  if (!tape) return out;
  if (tape->consumed) throw TapeError(std::string(op) + ": tape already consumed by backward()");

  detail::TapeNode node;
  node.size = out.numel();
  for (const Tensor* in : inputs) node.parents.push_back(in->tracked() ? in->node_ : -1);
  node.backward = std::move(backward);
  tape->nodes.push_back(std::move(node));
  out.tape_ = tape;
  out.node_ = static_cast<int>(tape->nodes.size()) - 1;
  return out;
}

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tensor Tape::watch(const Tensor& leaf) {
  if (leaf.empty()) throw TapeError("cannot watch an empty tensor");
  if (state_->consumed) throw TapeError("watch() on a consumed tape");
  detail::TapeNode node;
  node.size = leaf.numel();
  state_->nodes.push_back(std::move(node));
  Tensor t = leaf.detach();
  t.tape_ = state_;
  t.node_ = static_cast<int>(state_->nodes.size()) - 1;
  return t;
}

void Tape::backward(const Tensor& root) {
  if (!root.tracked() || root.tape_ != state_) throw TapeError("backward(): root was not recorded on this tape");
  if (root.numel() != 1) throw TapeError("backward(): root must be a scalar, got dims " + dims_to_string(root.dims()));
  if (state_->consumed) throw TapeError("backward(): tape already consumed; re-record the forward pass");
  state_->consumed = true;
  state_->visited = 0;

  auto& nodes = state_->nodes;
  state_->grad_buffer(root.node())[0] = 1.0f;
  std::vector<float*> parent_grads;
  for (int i = root.node(); i >= 0; --i) {
    ++state_->visited;
    auto& node = nodes[static_cast<std::size_t>(i)];
    if (!node.backward || node.grad.empty()) continue;
    parent_grads.clear();
    for (int p : node.parents) parent_grads.push_back(p >= 0 ? state_->grad_buffer(p) : nullptr);
    node.backward(std::span<const float>(node.grad), std::span<float* const>(parent_grads));
  }
  // Nodes recorded after the root cannot contribute; count them as visited.
  state_->visited += nodes.size() - static_cast<std::size_t>(root.node()) - 1;
}

Tensor Tape::grad(const Tensor& watched) const {
  if (!watched.tracked() || watched.tape_ != state_) throw TapeError("grad(): tensor was not watched on this tape");
  const auto& node = state_->nodes[static_cast<std::size_t>(watched.node())];
  if (node.grad.empty()) return Tensor::zeros(watched.dims());
  return Tensor(watched.dims(), node.grad);
}

}  // namespace mclone
