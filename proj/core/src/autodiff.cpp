#include "bssd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bssd/error.hpp"

namespace bssd::ad {

const Tensor& Var::value() const {
  if (!tape_) throw Error("autodiff: use of an unbound variable");
  return tape_->value(*this);
}

const Tensor& Gradients::operator[](Var leaf) const {
  for (const auto& [id, grad] : entries_) {
    if (id == leaf.id()) return grad;
  }
  throw Error("autodiff: no gradient recorded for node " + std::to_string(leaf.id()));
}

bool Gradients::contains(Var leaf) const noexcept {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == leaf.id(); });
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("autodiff: non-finite leaf value");
  nodes_.push_back(Node{"leaf", std::move(value), {}, {}, true, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("autodiff: non-finite constant value");
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, false, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string(op) + ": non-finite output");
  }
  Node node{op, std::move(value), {}, std::move(backward), false, false};
  node.inputs.reserve(inputs.size());
  for (Var in : inputs) {
    check_owned(in, op);
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v, const char* where) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw Error(std::string(where) + ": variable does not belong to this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check_owned(v, "value");
  return nodes_[v.id()].value;
}

const char* Tape::op_name(Var v) const {
  check_owned(v, "op_name");
  return nodes_[v.id()].op;
}

bool Tape::is_leaf(Var v) const {
  check_owned(v, "is_leaf");
  return nodes_[v.id()].leaf;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v, "requires_grad");
  return nodes_[v.id()].requires_grad;
}

Gradients Tape::backward(Var output, std::span<const Var> leaves) const {
  check_owned(output, "backward");
  const Node& out = nodes_[output.id()];
  if (out.value.size() != 1) {
    throw ShapeError("backward: output must be scalar, got shape " + to_string(out.value.shape()));
  }
  for (Var l : leaves) {
    check_owned(l, "backward");
    const Node& n = nodes_[l.id()];
    if (!n.leaf || !n.requires_grad) {
      throw Error("backward: node " + std::to_string(l.id()) + " (" + n.op + ") is not a differentiable leaf");
    }
  }

  const std::size_t n = output.id() + 1;
  std::vector<Tensor> grads(n);
  std::vector<char> has(n, 0);
  grads[output.id()] = Tensor(out.value.shape(), 1.0);
  has[output.id()] = 1;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = n; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!has[i] || node.leaf || !node.requires_grad || !node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t p : node.inputs) {
      in_values.push_back(&nodes_[p].value);
      if (nodes_[p].requires_grad) {
        if (!has[p]) {
          grads[p] = Tensor(nodes_[p].value.shape());
          has[p] = 1;
        }
        in_grads.push_back(&grads[p]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardContext{grads[i], node.value, in_values, in_grads});
  }

  Gradients result;
  result.entries_.reserve(leaves.size());
  for (Var l : leaves) {
    if (std::any_of(result.entries_.begin(), result.entries_.end(),
                    [&](const auto& e) { return e.first == l.id(); })) {
      continue;
    }
    Tensor g = (l.id() < n && has[l.id()]) ? grads[l.id()] : Tensor(nodes_[l.id()].value.shape());
    result.entries_.emplace_back(l.id(), std::move(g));
  }
  return result;
}

namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

void same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
}

template <class Fn, class Deriv>
Var unary(const char* op, Var x, Fn fn, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fn(xv[i]);
  return x.tape().record(op, std::move(out), {x}, [deriv](const BackwardContext& c) {
    if (Tensor* gx = c.input_grads[0]) {
      const Tensor& in = *c.inputs[0];
      for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += c.grad_out[i] * deriv(in[i], c.output[i]);
    }
  });
}

struct Rows {
  std::size_t count;
  std::size_t width;
};

Rows last_axis(const Tensor& t, const char* op) {
  require(t.rank() >= 1 && t.shape().back() > 0, op, "needs a non-empty last axis, got " + to_string(t.shape()));
  const std::size_t width = t.shape().back();
  return {t.size() / width, width};
}

}  // namespace

Var affine(Var x, Var weight, Var bias) {
  same_tape(x, weight, "affine");
  same_tape(x, bias, "affine");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require(xv.rank() == 2, "affine", "input must be (B, in), got " + to_string(xv.shape()));
  require(wv.rank() == 2, "affine", "weight must be (out, in), got " + to_string(wv.shape()));
  require(wv.dim(1) == xv.dim(1), "affine",
          "input " + to_string(xv.shape()) + " does not match weight " + to_string(wv.shape()));
  require(bv.rank() == 1 && bv.dim(0) == wv.dim(0), "affine", "bias must be (out), got " + to_string(bv.shape()));

  const std::size_t batch = xv.dim(0), in = xv.dim(1), out_n = wv.dim(0);
  Tensor out(Shape{batch, out_n});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = xv.data() + b * in;
    for (std::size_t o = 0; o < out_n; ++o) {
      const double* wr = wv.data() + o * in;
      double s = bv[o];
      for (std::size_t i = 0; i < in; ++i) s += xr[i] * wr[i];
      out[b * out_n + o] = s;
    }
  }
  return x.tape().record("affine", std::move(out), {x, weight, bias}, [batch, in, out_n](const BackwardContext& c) {
    const Tensor& xv = *c.inputs[0];
    const Tensor& wv = *c.inputs[1];
    const Tensor& g = c.grad_out;
    if (Tensor* gx = c.input_grads[0]) {
      for (std::size_t b = 0; b < batch; ++b) {
        double* gr = gx->data() + b * in;
        for (std::size_t o = 0; o < out_n; ++o) {
          const double go = g[b * out_n + o];
          const double* wr = wv.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gr[i] += go * wr[i];
        }
      }
    }
    if (Tensor* gw = c.input_grads[1]) {
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xr = xv.data() + b * in;
        for (std::size_t o = 0; o < out_n; ++o) {
          const double go = g[b * out_n + o];
          double* gr = gw->data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gr[i] += go * xr[i];
        }
      }
    }
    if (Tensor* gb = c.input_grads[2]) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out_n; ++o) (*gb)[o] += g[b * out_n + o];
    }
  });
}

Var conv2d(Var x, Var kernel, Var bias, std::size_t padding) {
  same_tape(x, kernel, "conv2d");
  same_tape(x, bias, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  const Tensor& bv = bias.value();
  require(xv.rank() == 4, "conv2d", "input must be (B, C, H, W), got " + to_string(xv.shape()));
  require(kv.rank() == 4, "conv2d", "kernel must be (O, C, kh, kw), got " + to_string(kv.shape()));
  require(kv.dim(1) == xv.dim(1), "conv2d",
          "input channels " + to_string(xv.shape()) + " vs kernel " + to_string(kv.shape()));
  require(bv.rank() == 1 && bv.dim(0) == kv.dim(0), "conv2d", "bias must be (O), got " + to_string(bv.shape()));
  const std::size_t batch = xv.dim(0), chans = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t outc = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  require(h + 2 * padding >= kh && w + 2 * padding >= kw, "conv2d", "kernel larger than padded input");
  const std::size_t oh = h + 2 * padding - kh + 1, ow = w + 2 * padding - kw + 1;

  // Visits every (output, input, kernel) triple that touches the unpadded input.
  auto for_each_tap = [=](auto&& visit) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < outc; ++o)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::size_t out_idx = ((b * outc + o) * oh + y) * ow + xo;
            for (std::size_t ci = 0; ci < chans; ++ci)
              for (std::size_t dy = 0; dy < kh; ++dy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dx = 0; dx < kw; ++dx) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(xo + dx) - static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t in_idx = ((b * chans + ci) * h + static_cast<std::size_t>(iy)) * w +
                                             static_cast<std::size_t>(ix);
                  const std::size_t k_idx = ((o * chans + ci) * kh + dy) * kw + dx;
                  visit(out_idx, in_idx, k_idx);
                }
              }
          }
  };

  Tensor out(Shape{batch, outc, oh, ow});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < outc; ++o)
      std::fill_n(out.data() + (b * outc + o) * oh * ow, oh * ow, bv[o]);
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t ki) { out[oi] += xv[ii] * kv[ki]; });

  return x.tape().record("conv2d", std::move(out), {x, kernel, bias},
                         [for_each_tap, batch, outc, oh, ow](const BackwardContext& c) {
                           const Tensor& xv = *c.inputs[0];
                           const Tensor& kv = *c.inputs[1];
                           const Tensor& g = c.grad_out;
                           Tensor* gx = c.input_grads[0];
                           Tensor* gk = c.input_grads[1];
                           if (gx || gk) {
                             for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t ki) {
                               if (gx) (*gx)[ii] += g[oi] * kv[ki];
                               if (gk) (*gk)[ki] += g[oi] * xv[ii];
                             });
                           }
                           if (Tensor* gb = c.input_grads[2]) {
                             for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t o = 0; o < outc; ++o)
                                 for (std::size_t i = 0; i < oh * ow; ++i) (*gb)[o] += g[(b * outc + o) * oh * ow + i];
                           }
                         });
}

namespace {

Var pool2d(Var x, std::size_t window, bool take_max) {
  const char* op = take_max ? "max_pool2d" : "mean_pool2d";
  const Tensor& xv = x.value();
  require(xv.rank() == 4, op, "input must be (B, C, H, W), got " + to_string(xv.shape()));
  require(window >= 1 && xv.dim(2) >= window && xv.dim(3) >= window, op,
          "window " + std::to_string(window) + " does not fit " + to_string(xv.shape()));
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  Tensor out(Shape{xv.dim(0), xv.dim(1), oh, ow});
  // For max pooling, the input offset that won each window (first maximum).
  std::vector<std::size_t> argmax(take_max ? out.size() : 0);
  const double inv = 1.0 / static_cast<double>(window * window);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const std::size_t oi = (p * oh + y) * ow + xo;
        double acc = take_max ? -std::numeric_limits<double>::infinity() : 0.0;
        std::size_t best = 0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t ii = (p * h + y * window + dy) * w + xo * window + dx;
            if (take_max) {
              if (xv[ii] > acc) {
                acc = xv[ii];
                best = ii;
              }
            } else {
              acc += xv[ii];
            }
          }
        if (take_max) {
          out[oi] = acc;
          argmax[oi] = best;
        } else {
          out[oi] = acc * inv;
        }
      }
  if (take_max) {
    return x.tape().record(op, std::move(out), {x}, [argmax = std::move(argmax)](const BackwardContext& c) {
      if (Tensor* gx = c.input_grads[0]) {
        for (std::size_t oi = 0; oi < argmax.size(); ++oi) (*gx)[argmax[oi]] += c.grad_out[oi];
      }
    });
  }
  return x.tape().record(op, std::move(out), {x}, [planes, h, w, oh, ow, window, inv](const BackwardContext& c) {
    if (Tensor* gx = c.input_grads[0]) {
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const double g = c.grad_out[(p * oh + y) * ow + xo] * inv;
            for (std::size_t dy = 0; dy < window; ++dy)
              for (std::size_t dx = 0; dx < window; ++dx) (*gx)[(p * h + y * window + dy) * w + xo * window + dx] += g;
          }
    }
  });
}

}  // namespace

Var max_pool2d(Var x, std::size_t window) { return pool2d(x, window, true); }
Var mean_pool2d(Var x, std::size_t window) { return pool2d(x, window, false); }

Var relu(Var x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

Var exp(Var x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Var log(Var x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw NonFiniteError("log: non-positive input");
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double in, double) { return 1.0 / in; });
}

Var scale(Var x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

namespace {

template <class Fn>
Var binary(const char* op, Var a, Var b, Fn fn, double sign_b) {
  same_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.shape() == bv.shape(), op, to_string(av.shape()) + " vs " + to_string(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i], bv[i]);
  return a.tape().record(op, std::move(out), {a, b}, [sign_b](const BackwardContext& c) {
    if (Tensor* ga = c.input_grads[0]) *ga += c.grad_out;
    if (Tensor* gb = c.input_grads[1]) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += sign_b * c.grad_out[i];
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, 1.0);
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, -1.0);
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.shape() == bv.shape(), "mul", to_string(av.shape()) + " vs " + to_string(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](const BackwardContext& c) {
    const Tensor& av = *c.inputs[0];
    const Tensor& bv = *c.inputs[1];
    if (Tensor* ga = c.input_grads[0]) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += c.grad_out[i] * bv[i];
    }
    if (Tensor* gb = c.input_grads[1]) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += c.grad_out[i] * av[i];
    }
  });
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  const auto [rows, width] = last_axis(xv, "softmax");
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* o = out.data() + r * width;
    const double m = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += (o[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < width; ++j) o[j] /= z;
  }
  return x.tape().record("softmax", std::move(out), {x}, [rows, width](const BackwardContext& c) {
    if (Tensor* gx = c.input_grads[0]) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = c.output.data() + r * width;
        const double* g = c.grad_out.data() + r * width;
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += g[j] * y[j];
        double* gr = gx->data() + r * width;
        for (std::size_t j = 0; j < width; ++j) gr[j] += y[j] * (g[j] - s);
      }
    }
  });
}

Var log_softmax(Var x) {
  const Tensor& xv = x.value();
  const auto [rows, width] = last_axis(xv, "log_softmax");
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* o = out.data() + r * width;
    const double m = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += std::exp(in[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < width; ++j) o[j] = in[j] - lse;
  }
  return x.tape().record("log_softmax", std::move(out), {x}, [rows, width](const BackwardContext& c) {
    if (Tensor* gx = c.input_grads[0]) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = c.output.data() + r * width;
        const double* g = c.grad_out.data() + r * width;
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += g[j];
        double* gr = gx->data() + r * width;
        for (std::size_t j = 0; j < width; ++j) gr[j] += g[j] - std::exp(y[j]) * s;
      }
    }
  });
}

Var row_sum(Var x) {
  const Tensor& xv = x.value();
  const auto [rows, width] = last_axis(xv, "row_sum");
  Shape shape(xv.shape().begin(), xv.shape().end() - 1);
  Tensor out(std::move(shape));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += xv[r * width + j];
    out[r] = s;
  }
  return x.tape().record("row_sum", std::move(out), {x}, [rows, width](const BackwardContext& c) {
    if (Tensor* gx = c.input_grads[0]) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) (*gx)[r * width + j] += c.grad_out[r];
    }
  });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  return x.tape().record("sum", Tensor::scalar(s), {x}, [](const BackwardContext& c) {
    if (Tensor* gx = c.input_grads[0]) {
      const double g = c.grad_out[0];
      for (double& v : gx->values()) v += g;
    }
  });
}

Var mean(Var x) {
  const Tensor& xv = x.value();
  require(xv.size() > 0, "mean", "empty input");
  const double n = static_cast<double>(xv.size());
  double s = 0.0;
  for (double v : xv.values()) s += v;
  return x.tape().record("mean", Tensor::scalar(s / n), {x}, [n](const BackwardContext& c) {
    if (Tensor* gx = c.input_grads[0]) {
      const double g = c.grad_out[0] / n;
      for (double& v : gx->values()) v += g;
    }
  });
}

Var reshape(Var x, Shape shape) {
  const Tensor& xv = x.value();
  require(volume(shape) == xv.size(), "reshape", to_string(xv.shape()) + " -> " + to_string(shape));
  return x.tape().record("reshape", xv.reshaped(std::move(shape)), {x}, [](const BackwardContext& c) {
    if (Tensor* gx = c.input_grads[0]) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += c.grad_out[i];
    }
  });
}

}  // namespace bssd::ad
