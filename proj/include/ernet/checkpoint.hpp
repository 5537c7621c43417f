// Parameter checkpoint file:
//   "ERN1" | u64 LE manifest length | UTF-8 JSON manifest | raw little-endian payload
// The manifest lists {name, shape, dtype, offset} per tensor (offset in bytes from the
// start of the payload) plus a free-form "meta" object.
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ernet/optim.hpp"

namespace ernet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StoragePrecision { F64, F32 };

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                      const nlohmann::json& meta = nlohmann::json::object(),
                      StoragePrecision precision = StoragePrecision::F64);

Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies values from `ckpt` into same-named parameters; every parameter must be present with
/// an identical shape.
void load_parameters(std::vector<NamedTensor>& params, const Checkpoint& ckpt);

}  // namespace ernet
