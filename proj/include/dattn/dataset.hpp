#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dattn/tensor.hpp"

namespace dattn {

/// Labelled images, each C x H x W with values in [0, 1].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string provenance;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  /// Throws DataError on label/pixel range violations or ragged shapes.
  void validate() const;
  Dataset slice(std::size_t begin, std::size_t count) const;
};

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarPixels = kCifarChannels * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

/// Reads the CIFAR-10 binary layout: per record one label byte followed by
/// the R, G and B planes of a 32x32 image, row-major. Pixels scale by 1/255.
/// `limit` caps the number of records read (0 reads all).
Dataset load_cifar10(const std::filesystem::path& path, std::size_t limit = 0);
Dataset parse_cifar10(const std::vector<std::uint8_t>& bytes, std::size_t limit = 0);

/// Inverse of parse_cifar10 for one image; pixels are rounded to the
/// nearest multiple of 1/255.
std::vector<std::uint8_t> encode_cifar10_record(const Tensor& image, std::size_t label);

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t samples = 2000;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  /// Side of the class signal square.
  std::size_t signal_size = 8;
  /// Amplitude of the class signal around the 0.5 background.
  double signal_strength = 0.25;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  /// Index of the first generated sample. Splits drawn with disjoint index
  /// ranges share class templates but not noise.
  std::size_t first_sample = 0;
};

/// Class y's images are a fixed random +/- signal square on a gray
/// background plus i.i.d. Gaussian noise, clipped to [0, 1]. Sample i draws
/// its label and noise from stream 1 + first_sample + i.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Noise-free class templates.
std::vector<Tensor> synthetic_templates(const SyntheticSpec& spec);

/// Noise level below which the nearest-template rule separates the classes
/// with a four-sigma margin: min_{a!=b} ||t_a - t_b|| / 8.
double synthetic_noise_threshold(const SyntheticSpec& spec);

}  // namespace dattn
