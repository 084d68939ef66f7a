#include "dattn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "dattn/error.hpp"
#include "dattn/rng.hpp"

namespace dattn {

void Dataset::validate() const {
  if (images.size() != labels.size()) throw DataError("dataset: image and label counts differ");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
    if (images[i].shape() != images.front().shape()) throw DataError("dataset: sample " + std::to_string(i) + " has a different shape");
    for (double v : images[i].data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("dataset: sample " + std::to_string(i) + " has pixels outside [0, 1]");
    }
  }
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin > size()) throw DataError("dataset: slice start beyond end");
  const std::size_t end = std::min(size(), begin + count);
  Dataset out;
  out.images.assign(images.begin() + begin, images.begin() + end);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.num_classes = num_classes;
  out.provenance = provenance;
  return out;
}

Dataset parse_cifar10(const std::vector<std::uint8_t>& bytes, std::size_t limit) {
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError("cifar10: length " + std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(kCifarRecord) + " bytes");
  }
  std::size_t records = bytes.size() / kCifarRecord;
  if (limit > 0) records = std::min(records, limit);
  Dataset out;
  out.num_classes = 10;
  out.provenance = "cifar10";
  out.images.reserve(records);
  out.labels.reserve(records);
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) {
      throw FormatError("cifar10: corrupt record " + std::to_string(r) + " (label " + std::to_string(rec[0]) + ")");
    }
    Tensor image({kCifarChannels, kCifarSide, kCifarSide});
    for (std::size_t i = 0; i < kCifarPixels; ++i) image[i] = static_cast<double>(rec[1 + i]) / 255.0;
    out.images.push_back(std::move(image));
    out.labels.push_back(rec[0]);
  }
  return out;
}

Dataset load_cifar10(const std::filesystem::path& path, std::size_t limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cifar10: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Dataset d = parse_cifar10(bytes, limit);
  d.provenance = "cifar10:" + path.string();
  return d;
}

std::vector<std::uint8_t> encode_cifar10_record(const Tensor& image, std::size_t label) {
  if (image.shape() != Shape{kCifarChannels, kCifarSide, kCifarSide}) {
    throw DimensionError("cifar10: record image must be 3x32x32");
  }
  if (label > 9) throw DataError("cifar10: label must be in [0, 9]");
  std::vector<std::uint8_t> out(kCifarRecord);
  out[0] = static_cast<std::uint8_t>(label);
  for (std::size_t i = 0; i < kCifarPixels; ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    out[1 + i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

namespace {

void validate_spec(const SyntheticSpec& s) {
  if (s.classes < 1) throw ConfigError("synthetic: classes must be at least 1");
  if (s.image_size == 0 || s.channels == 0) throw ConfigError("synthetic: image dims must be positive");
  if (s.signal_size == 0 || s.signal_size > s.image_size) throw ConfigError("synthetic: signal square must fit the image");
  if (s.noise_sigma < 0.0) throw ConfigError("synthetic: noise sigma must be non-negative");
}

}  // namespace

std::vector<Tensor> synthetic_templates(const SyntheticSpec& s) {
  validate_spec(s);
  SeededRng rng(s.seed, 0);
  std::vector<Tensor> templates;
  const std::size_t span = s.image_size - s.signal_size + 1;
  for (std::size_t c = 0; c < s.classes; ++c) {
    Tensor t = Tensor::filled({s.channels, s.image_size, s.image_size}, 0.5);
    const std::size_t top = rng.index(span);
    const std::size_t left = rng.index(span);
    for (std::size_t ch = 0; ch < s.channels; ++ch)
      for (std::size_t y = 0; y < s.signal_size; ++y)
        for (std::size_t x = 0; x < s.signal_size; ++x) {
          const double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
          t[(ch * s.image_size + top + y) * s.image_size + left + x] = std::clamp(0.5 + sgn * s.signal_strength, 0.0, 1.0);
        }
    templates.push_back(std::move(t));
  }
  return templates;
}

Dataset make_synthetic(const SyntheticSpec& s) {
  const std::vector<Tensor> templates = synthetic_templates(s);
  Dataset out;
  out.num_classes = s.classes;
  out.provenance = "synthetic";
  out.images.reserve(s.samples);
  out.labels.reserve(s.samples);
  for (std::size_t i = 0; i < s.samples; ++i) {
    const std::size_t index = s.first_sample + i;
    SeededRng rng(s.seed, 1 + index);
    const std::size_t label = rng.index(s.classes);
    Tensor image = templates[label];
    if (s.noise_sigma > 0.0) {
      for (double& v : image.data()) v = std::clamp(v + s.noise_sigma * rng.normal(), 0.0, 1.0);
    }
    out.images.push_back(std::move(image));
    out.labels.push_back(label);
  }
  return out;
}

double synthetic_noise_threshold(const SyntheticSpec& s) {
  const std::vector<Tensor> templates = synthetic_templates(s);
  if (templates.size() < 2) return std::numeric_limits<double>::infinity();
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < templates.size(); ++a)
    for (std::size_t b = a + 1; b < templates.size(); ++b) closest = std::min(closest, norm2(templates[a] - templates[b]));
  return closest / 8.0;
}

}  // namespace dattn
