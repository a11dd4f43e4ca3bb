#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsim/tensor.hpp"

namespace fsim {

/// Archive of named float64 arrays plus a JSON header.
///
/// File layout (little-endian):
///   8 bytes   magic "FSIMCKPT"
///   u32       format version (1)
///   u64       header length in bytes
///   header    UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape",
///             "dtype": "f64", "offset", "nbytes"}, ...]}
///   payload   concatenated row-major array data; offsets are relative to
///             the start of the payload
struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  /// Arrays whose names start with `prefix`, with the prefix stripped.
  std::vector<NamedArray> with_prefix(const std::string& prefix) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hash over names, shapes and values (bit patterns), order-sensitive.
std::uint64_t content_hash(const std::vector<NamedArray>& arrays);

std::vector<NamedArray> export_arrays(const std::vector<ConstParamRef>& params,
                                      const std::string& prefix = {});
/// Copies arrays into matching parameters; every parameter must be present
/// with the same shape.
void import_arrays(const std::vector<ParamRef>& params, const std::vector<NamedArray>& arrays,
                   const std::string& context);

}  // namespace fsim
