#include "bssd/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bssd/error.hpp"

namespace bssd {

namespace {

bool has_parameters(LayerKind kind) { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }

std::string layer_label(std::size_t index) { return "layer " + std::to_string(index); }

}  // namespace

std::vector<Shape> ClassifierSpec::layer_shapes() const {
  if (input_shape.empty() || volume(input_shape) == 0) {
    throw ValidationError("spec: input shape must be non-empty, got " + to_string(input_shape));
  }
  std::vector<Shape> shapes{input_shape};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const Shape& in = shapes.back();
    switch (l.kind) {
      case LayerKind::Dense:
        if (in.size() != 1) throw ValidationError(layer_label(i) + ": dense layer needs a flat input, got " + to_string(in));
        if (l.units == 0) throw ValidationError(layer_label(i) + ": dense width must be positive");
        shapes.push_back(Shape{l.units});
        break;
      case LayerKind::Conv2d: {
        if (in.size() != 3) throw ValidationError(layer_label(i) + ": conv needs (C,H,W), got " + to_string(in));
        if (l.units == 0 || l.kernel == 0) throw ValidationError(layer_label(i) + ": conv channels and kernel must be positive");
        if (in[1] + 2 * l.padding < l.kernel || in[2] + 2 * l.padding < l.kernel) {
          throw ValidationError(layer_label(i) + ": kernel larger than padded input " + to_string(in));
        }
        shapes.push_back(Shape{l.units, in[1] + 2 * l.padding - l.kernel + 1, in[2] + 2 * l.padding - l.kernel + 1});
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::MeanPool:
        if (in.size() != 3) throw ValidationError(layer_label(i) + ": pooling needs (C,H,W), got " + to_string(in));
        if (l.kernel == 0 || in[1] < l.kernel || in[2] < l.kernel) {
          throw ValidationError(layer_label(i) + ": pooling window does not fit " + to_string(in));
        }
        shapes.push_back(Shape{in[0], in[1] / l.kernel, in[2] / l.kernel});
        break;
      case LayerKind::Flatten:
        shapes.push_back(Shape{volume(in)});
        break;
      default:
        throw ValidationError(layer_label(i) + ": unknown layer kind");
    }
    if (!has_parameters(l.kind) && l.activation != Activation::None) {
      throw ValidationError(layer_label(i) + ": only dense and conv layers take an activation");
    }
  }
  return shapes;
}

void ClassifierSpec::validate() const {
  if (num_classes < 2) throw ValidationError("spec: need at least two classes");
  if (layers.empty()) throw ValidationError("spec: no layers");
  const auto shapes = layer_shapes();
  if (shapes.back() != Shape{num_classes}) {
    throw ValidationError("spec: final output " + to_string(shapes.back()) + " does not equal class count " +
                          std::to_string(num_classes));
  }
}

std::vector<Shape> ClassifierSpec::parameter_shapes() const {
  const auto shapes = layer_shapes();
  std::vector<Shape> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::Dense) {
      out.push_back(Shape{l.units, shapes[i][0]});
      out.push_back(Shape{l.units});
    } else if (l.kind == LayerKind::Conv2d) {
      out.push_back(Shape{l.units, shapes[i][0], l.kernel, l.kernel});
      out.push_back(Shape{l.units});
    }
  }
  return out;
}

ClassifierSpec mlp_spec(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t num_classes,
                        Activation activation) {
  ClassifierSpec spec;
  spec.input_shape = {input_dim};
  spec.num_classes = num_classes;
  for (std::size_t width : hidden) spec.layers.push_back({LayerKind::Dense, width, 0, 0, activation});
  spec.layers.push_back({LayerKind::Dense, num_classes, 0, 0, Activation::None});
  return spec;
}

ClassifierSpec mlp_spec(std::size_t input_dim, std::initializer_list<std::size_t> hidden, std::size_t num_classes,
                        Activation activation) {
  return mlp_spec(input_dim, std::span<const std::size_t>(hidden.begin(), hidden.size()), num_classes, activation);
}

ClassifierSpec tiny_cnn_spec(std::size_t channels, std::size_t height, std::size_t width, std::size_t conv1,
                             std::size_t conv2, std::size_t num_classes) {
  ClassifierSpec spec;
  spec.input_shape = {channels, height, width};
  spec.num_classes = num_classes;
  spec.layers = {
      {LayerKind::Conv2d, conv1, 3, 1, Activation::Relu},
      {LayerKind::MaxPool, 0, 2, 0, Activation::None},
      {LayerKind::Conv2d, conv2, 3, 1, Activation::Relu},
      {LayerKind::MaxPool, 0, 2, 0, Activation::None},
      {LayerKind::Flatten, 0, 0, 0, Activation::None},
      {LayerKind::Dense, num_classes, 0, 0, Activation::None},
  };
  return spec;
}

ClassifierModel ClassifierModel::init(const ClassifierSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<Tensor> params;
  const auto shapes = spec.layer_shapes();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!has_parameters(l.kind)) continue;
    Shape wshape = l.kind == LayerKind::Dense ? Shape{l.units, shapes[i][0]}
                                              : Shape{l.units, shapes[i][0], l.kernel, l.kernel};
    const std::size_t fan_in = volume(wshape) / l.units;
    const double gain = l.activation == Activation::Relu ? 2.0 : 1.0;
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
    Tensor w(wshape);
    for (double& v : w.values()) v = dist(rng);
    params.push_back(std::move(w));
    params.emplace_back(Shape{l.units});
  }
  return ClassifierModel(spec, std::move(params), Provenance{seed, {}});
}

ClassifierModel::ClassifierModel(ClassifierSpec spec, std::vector<Tensor> parameters, Provenance provenance)
    : spec_(std::move(spec)), parameters_(std::move(parameters)), provenance_(std::move(provenance)) {
  spec_.validate();
  const auto shapes = spec_.parameter_shapes();
  if (shapes.size() != parameters_.size()) {
    throw ValidationError("model: expected " + std::to_string(shapes.size()) + " parameter tensors, got " +
                          std::to_string(parameters_.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (parameters_[i].shape() != shapes[i]) {
      throw ValidationError("model: parameter " + std::to_string(i) + " has shape " +
                            to_string(parameters_[i].shape()) + ", spec requires " + to_string(shapes[i]));
    }
    if (!parameters_[i].all_finite()) throw NonFiniteError("model: parameter " + std::to_string(i) + " not finite");
  }
}

std::size_t ClassifierModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters_) n += p.size();
  return n;
}

std::vector<ad::Var> ClassifierModel::bind(ad::Tape& tape, bool trainable) const {
  std::vector<ad::Var> vars;
  vars.reserve(parameters_.size());
  for (const auto& p : parameters_) vars.push_back(trainable ? tape.leaf(p) : tape.constant(p));
  return vars;
}

ad::Var ClassifierModel::forward(ad::Var x, std::span<const ad::Var> bound) const {
  if (bound.size() != parameters_.size()) throw Error("forward: parameter binding has the wrong length");
  const Shape& xs = x.shape();
  if (xs.size() != spec_.input_shape.size() + 1 || !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), xs.begin() + 1)) {
    throw ShapeError("forward: input " + to_string(xs) + " does not match (B," +
                     to_string(spec_.input_shape).substr(1));
  }
  const std::size_t batch = xs[0];
  std::size_t p = 0;
  ad::Var h = x;
  for (const LayerSpec& l : spec_.layers) {
    switch (l.kind) {
      case LayerKind::Dense:
        h = ad::affine(h, bound[p], bound[p + 1]);
        p += 2;
        break;
      case LayerKind::Conv2d:
        h = ad::conv2d(h, bound[p], bound[p + 1], l.padding);
        p += 2;
        break;
      case LayerKind::MaxPool:
        h = ad::max_pool2d(h, l.kernel);
        break;
      case LayerKind::MeanPool:
        h = ad::mean_pool2d(h, l.kernel);
        break;
      case LayerKind::Flatten:
        h = ad::reshape(h, Shape{batch, h.value().size() / std::max<std::size_t>(batch, 1)});
        break;
    }
    if (l.activation == Activation::Relu) h = ad::relu(h);
    if (l.activation == Activation::Tanh) h = ad::tanh(h);
  }
  return h;
}

ad::Var ClassifierModel::forward(ad::Var x) const {
  const auto bound = bind(x.tape(), false);
  return forward(x, bound);
}

Tensor ClassifierModel::logits(const Tensor& x) const {
  const bool single = x.shape() == spec_.input_shape;
  Shape batched = x.shape();
  if (single) batched.insert(batched.begin(), 1);
  ad::Tape tape;
  ad::Var in = tape.constant(single ? x.reshaped(batched) : x);
  Tensor out = forward(in).value();
  return single ? out.reshaped(Shape{spec_.num_classes}) : out;
}

Tensor ClassifierModel::class_probabilities(const Tensor& x, double temperature) const {
  return softmax_with_temperature(logits(x), temperature);
}

std::vector<std::size_t> ClassifierModel::predict_batch(const Tensor& x) const { return argmax_rows(logits(x)); }

std::size_t ClassifierModel::predict(const Tensor& x) const {
  const Tensor z = logits(x);
  if (z.rank() != 1) throw ShapeError("predict: expects a single unbatched input");
  return argmax(z.values());
}

Tensor softmax_with_temperature(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("softmax: temperature must be positive");
  if (logits.rank() == 0) throw ShapeError("softmax: needs at least one axis");
  const std::size_t width = logits.shape().back();
  Tensor out(logits.shape());
  for (std::size_t r = 0; r * width < logits.size(); ++r) {
    const double* z = logits.data() + r * width;
    double* o = out.data() + r * width;
    const double m = *std::max_element(z, z + width);
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += (o[j] = std::exp((z[j] - m) / temperature));
    for (std::size_t j = 0; j < width; ++j) o[j] /= s;
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ShapeError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() == 0) throw ShapeError("argmax_rows: needs at least one axis");
  const std::size_t width = logits.shape().back();
  std::vector<std::size_t> out;
  out.reserve(logits.size() / width);
  for (std::size_t r = 0; r * width < logits.size(); ++r) {
    out.push_back(argmax(logits.values().subspan(r * width, width)));
  }
  return out;
}

}  // namespace bssd
