#pragma once

// Define-by-run reverse-mode differentiation.
//
// A Tape records every primitive evaluated on it together with the cached
// forward value. Leaves created with Tape::leaf are differentiable; this
// includes network inputs, which the boundary attack differentiates against.
// Records are rebuilt per forward call and are not thread-safe; independent
// tapes may be used concurrently.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bssd/tensor.hpp"

namespace bssd::ad {

class Tape;

// Lightweight handle to a node on a Tape. The tape must outlive the handle.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// What a primitive's backward rule sees. input_grads[i] is null when input i
// does not need a gradient; otherwise the rule accumulates into it.
struct BackwardContext {
  const Tensor& grad_out;
  const Tensor& output;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Gradients of one scalar with respect to the requested leaves.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const;
  bool contains(Var leaf) const noexcept;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  friend class Tape;
  std::vector<std::pair<std::size_t, Tensor>> entries_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Appends a primitive. `op` must have static storage duration. Throws
  // NonFiniteError naming the primitive if the value is not finite.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  const char* op_name(Var v) const;
  bool is_leaf(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep from a scalar output. Every entry of `leaves` must be a
  // differentiable leaf of this tape.
  Gradients backward(Var output, std::span<const Var> leaves) const;
  Gradients backward(Var output, std::initializer_list<Var> leaves) const {
    return backward(output, std::span<const Var>(leaves.begin(), leaves.size()));
  }

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
    bool leaf;
  };

  void check_owned(Var v, const char* where) const;

  std::deque<Node> nodes_;
};

// Primitives. Shape violations raise ShapeError naming the primitive.

// x: (B, in), weight: (out, in), bias: (out) -> (B, out)
Var affine(Var x, Var weight, Var bias);
// x: (B, C, H, W), kernel: (O, C, kh, kw), bias: (O) -> (B, O, H', W'); stride 1.
Var conv2d(Var x, Var kernel, Var bias, std::size_t padding = 0);
// Non-overlapping square windows over the last two axes of a rank-4 tensor.
Var max_pool2d(Var x, std::size_t window);
Var mean_pool2d(Var x, std::size_t window);

Var relu(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

// Along the last axis.
Var softmax(Var x);
Var log_softmax(Var x);
Var row_sum(Var x);

// Reductions to a rank-0 scalar.
Var sum(Var x);
Var mean(Var x);

Var reshape(Var x, Shape shape);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double k, Var x) { return scale(x, k); }
inline Var operator*(Var x, double k) { return scale(x, k); }

}  // namespace bssd::ad
