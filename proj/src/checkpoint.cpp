#include "dattn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "dattn/error.hpp"

namespace dattn {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes = 8) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p, int bytes = 8) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Classifier& model, std::uint64_t seed, const json& metadata) {
  json manifest;
  manifest["config"] = to_json(model.config());
  manifest["lambdas"] = model.lambdas();
  manifest["seed"] = seed;
  manifest["metadata"] = metadata;
  json index = json::array();
  std::size_t offset = 0;
  for (const NamedTensor& p : model.parameters()) {
    index.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.size();
  }
  manifest["tensors"] = std::move(index);
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u64(out, kCheckpointVersion, 4);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + 8 * offset);
  for (const NamedTensor& p : model.parameters()) {
    for (double v : p.value.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(out, bits);
    }
  }
  return out;
}

LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t header = 8 + 4 + 8;
  if (bytes.size() < header || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("checkpoint: missing DATTNLAB magic");
  }
  const auto version = static_cast<std::uint32_t>(get_u64(bytes.data() + 8, 4));
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t length = get_u64(bytes.data() + 12);
  if (length > bytes.size() - header) throw FormatError("checkpoint: manifest truncated");

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + header, bytes.begin() + header + static_cast<std::ptrdiff_t>(length));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }

  const std::size_t blob = header + length;
  const std::size_t values = (bytes.size() - blob) / 8;
  if ((bytes.size() - blob) % 8 != 0) throw FormatError("checkpoint: parameter data is not a whole number of f64");
  try {
    ModelConfig config = model_config_from_json(manifest.at("config"));
    ParameterSet params;
    for (const auto& entry : manifest.at("tensors")) {
      const Shape shape = entry.at("shape").get<Shape>();
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = shape_size(shape);
      if (offset > values || count > values - offset) {
        throw FormatError("checkpoint: tensor " + entry.at("name").get<std::string>() + " runs past the end");
      }
      std::vector<double> data(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t bits = get_u64(bytes.data() + blob + 8 * (offset + i));
        std::memcpy(&data[i], &bits, sizeof bits);
      }
      params.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(data)));
    }
    const std::uint64_t seed = manifest.at("seed").get<std::uint64_t>();
    return LoadedCheckpoint{Classifier(std::move(config), std::move(params)), seed, std::move(manifest)};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Classifier& model, std::uint64_t seed,
                     const json& metadata) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(model, seed, metadata);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint: write to " + path.string() + " failed");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace dattn
