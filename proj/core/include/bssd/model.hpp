#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bssd/autodiff.hpp"
#include "bssd/tensor.hpp"

namespace bssd {

enum class LayerKind : std::uint8_t { Dense = 0, Conv2d = 1, MaxPool = 2, MeanPool = 3, Flatten = 4 };
enum class Activation : std::uint8_t { None = 0, Relu = 1, Tanh = 2 };

// `units` is the width of a dense layer or the output channels of a conv;
// `kernel` is the conv kernel side or the pooling window.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t units = 0;
  std::size_t kernel = 0;
  std::size_t padding = 0;
  Activation activation = Activation::None;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ClassifierSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;

  // Throws ValidationError when K < 2, there are no layers, consecutive shapes
  // do not conform, or the final output is not (K).
  void validate() const;
  // Per-sample shape after each layer, starting with the input shape.
  std::vector<Shape> layer_shapes() const;
  // Parameter tensor shapes in storage order (weight then bias per layer).
  std::vector<Shape> parameter_shapes() const;

  friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

// Dense hidden layers with the given activation, then a linear K-way head.
ClassifierSpec mlp_spec(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t num_classes,
                        Activation activation = Activation::Relu);
ClassifierSpec mlp_spec(std::size_t input_dim, std::initializer_list<std::size_t> hidden, std::size_t num_classes,
                        Activation activation = Activation::Relu);
// conv(3x3, pad 1) -> relu -> maxpool(2) -> conv -> relu -> maxpool(2) -> dense(K)
ClassifierSpec tiny_cnn_spec(std::size_t channels, std::size_t height, std::size_t width, std::size_t conv1,
                             std::size_t conv2, std::size_t num_classes);

struct Provenance {
  std::uint64_t seed = 0;
  std::string run_id;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

class ClassifierModel {
 public:
  // Fan-in scaled normal weights, zero biases; deterministic in `seed`.
  static ClassifierModel init(const ClassifierSpec& spec, std::uint64_t seed);
  ClassifierModel(ClassifierSpec spec, std::vector<Tensor> parameters, Provenance provenance = {});

  const ClassifierSpec& spec() const noexcept { return spec_; }
  std::size_t num_classes() const noexcept { return spec_.num_classes; }
  const Provenance& provenance() const noexcept { return provenance_; }
  void set_run_id(std::string id) { provenance_.run_id = std::move(id); }

  std::span<const Tensor> parameters() const noexcept { return parameters_; }
  std::span<Tensor> mutable_parameters() noexcept { return parameters_; }
  std::size_t parameter_count() const;

  // Puts the parameters on `tape`, as leaves when `trainable`, else constants.
  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const;
  // Raw logits for a batch x of shape (B, input_shape...), using parameters
  // previously bound on x's tape.
  ad::Var forward(ad::Var x, std::span<const ad::Var> bound) const;
  // Binds the parameters as constants first.
  ad::Var forward(ad::Var x) const;

  // Batch (B, input...) -> (B, K); a single unbatched input -> (K).
  Tensor logits(const Tensor& x) const;
  Tensor class_probabilities(const Tensor& x, double temperature) const;
  std::vector<std::size_t> predict_batch(const Tensor& x) const;
  std::size_t predict(const Tensor& x) const;

  friend bool operator==(const ClassifierModel&, const ClassifierModel&) = default;

 private:
  ClassifierSpec spec_;
  std::vector<Tensor> parameters_;
  Provenance provenance_;
};

// Softmax of logits / T along the last axis. Throws ValidationError if T <= 0.
Tensor softmax_with_temperature(const Tensor& logits, double temperature);
// Argmax along the last axis; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);
std::vector<std::size_t> argmax_rows(const Tensor& logits);

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);
std::string serialize_model(const ClassifierModel& model);
ClassifierModel deserialize_model(std::string_view bytes);

}  // namespace bssd
