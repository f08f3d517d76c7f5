#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bssd/tensor.hpp"

namespace bssd {

struct Split {
  Tensor inputs;                    // (N, feature shape...)
  std::vector<std::size_t> labels;  // class index per row

  std::size_t size() const noexcept { return labels.size(); }
  Shape feature_shape() const;
};

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  // Features whose variance was floored at kVarianceFloor.
  std::vector<std::size_t> flagged_features;
};

inline constexpr double kVarianceFloor = 1e-8;

struct Dataset {
  Split train;
  Split test;
  std::size_t num_classes = 0;
  std::optional<NormalizationStats> normalization;

  bool normalized() const noexcept { return normalization.has_value(); }
  // Labels below K, inputs and labels agree in row count, splits share features.
  void validate() const;
};

// Isotropic or correlated Gaussian classes. `centers` is (K, d) and
// `covariance` (d, d) must be positive definite.
Dataset generate_gaussians(std::size_t num_classes, std::size_t per_class, const Tensor& centers,
                           const Tensor& covariance, std::uint64_t seed, std::optional<std::size_t> test_per_class = {});

struct SpiralOptions {
  double turns = 1.0;          // revolutions of each arm
  double radius_start = 0.1;   // arm parameter t is drawn from [radius_start, 1]
};

// Interleaved 2-D spiral arms, one class per arm: for class c and t in
// [radius_start, 1], angle = 2*pi*(turns*t + c/K), point = t*(cos, sin) + noise.
Dataset generate_spirals(std::size_t num_classes, std::size_t per_class, double noise, std::uint64_t seed,
                         std::optional<std::size_t> test_per_class = {}, const SpiralOptions& options = {});

// Per-feature standardization with statistics from the training split,
// applied to both splits. Throws ValidationError on a second call.
Dataset normalize(Dataset dataset);

// Class-stratified subsample of the training split; nested in `fraction`
// for a fixed seed. The test split is untouched.
Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed);

// Unsigned-byte IDX arrays.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  friend bool operator==(const IdxArray&, const IdxArray&) = default;
};

inline constexpr std::uint8_t kIdxUnsignedByte = 0x08;

IdxArray parse_idx(std::string_view bytes);
std::string encode_idx(const IdxArray& array);
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

// Images scaled to [0, 1]; the training split holds the file contents.
// K defaults to max label + 1 (at least 2).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> num_classes = {});

// (N, H, W) -> (N, 1, H, W) for the convolutional model.
Split with_channel_axis(Split split);

}  // namespace bssd
