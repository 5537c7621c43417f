#include "ernet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace ernet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'R', 'N', '1'};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.tensor;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                      const nlohmann::json& meta, StoragePrecision precision) {
  const bool f32 = precision == StoragePrecision::F32;
  const size_t elem = f32 ? sizeof(float) : sizeof(double);
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  manifest["meta"] = meta;
  uint64_t offset = 0;
  for (const auto& t : tensors) {
    manifest["tensors"].push_back({{"name", t.name},
                                   {"shape", t.tensor.shape()},
                                   {"dtype", f32 ? "f32" : "f64"},
                                   {"offset", offset}});
    offset += static_cast<uint64_t>(t.tensor.numel()) * elem;
  }
  const std::string text = manifest.dump();
  const uint64_t length = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors) {
    const auto v = t.tensor.values();
    if (f32) {
      std::vector<float> narrow(v.begin(), v.end());
      out.write(reinterpret_cast<const char*>(narrow.data()), static_cast<std::streamsize>(narrow.size() * elem));
    } else {
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * elem));
    }
  }
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("bad checkpoint magic: " + path.string());
  }
  uint64_t length = 0;
  std::memcpy(&length, bytes.data() + 4, sizeof(length));
  if (12 + length > bytes.size()) throw CheckpointError("truncated checkpoint manifest: " + path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(length));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  const size_t payload = 12 + length;

  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "f64" && dtype != "f32") throw CheckpointError("unsupported checkpoint dtype " + dtype);
    const Shape shape = entry.at("shape").get<Shape>();
    const auto n = static_cast<size_t>(shape_numel(shape));
    const size_t elem = dtype == "f32" ? sizeof(float) : sizeof(double);
    const size_t start = payload + entry.at("offset").get<uint64_t>();
    if (start + n * elem > bytes.size()) throw CheckpointError("truncated checkpoint payload: " + path.string());
    std::vector<double> values(n);
    if (dtype == "f64") {
      std::memcpy(values.data(), bytes.data() + start, n * elem);
    } else {
      std::vector<float> narrow(n);
      std::memcpy(narrow.data(), bytes.data() + start, n * elem);
      std::copy(narrow.begin(), narrow.end(), values.begin());
    }
    ckpt.tensors.push_back({entry.at("name").get<std::string>(), Tensor::from_values(shape, std::move(values))});
  }
  return ckpt;
}

void load_parameters(std::vector<NamedTensor>& params, const Checkpoint& ckpt) {
  for (auto& p : params) {
    const Tensor* src = ckpt.find(p.name);
    if (src == nullptr) throw CheckpointError("checkpoint lacks parameter " + p.name);
    if (src->shape() != p.tensor.shape()) {
      throw CheckpointError("shape mismatch for " + p.name + ": " + shape_to_string(src->shape()) + " vs " +
                            shape_to_string(p.tensor.shape()));
    }
    std::copy(src->values().begin(), src->values().end(), p.tensor.mutable_values().begin());
  }
}

}  // namespace ernet
