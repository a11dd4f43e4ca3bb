#include "fsim/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "fsim/common.hpp"

namespace fsim {

namespace {
constexpr char kMagic[8] = {'F', 'S', 'I', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  require(static_cast<bool>(in), "checkpoint: truncated file");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}
}  // namespace

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw Error("checkpoint: missing array '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

std::vector<NamedArray> Checkpoint::with_prefix(const std::string& prefix) const {
  std::vector<NamedArray> out;
  for (const auto& a : arrays) {
    if (a.name.rfind(prefix, 0) != 0) continue;
    NamedArray copy = a;
    copy.name = a.name.substr(prefix.size());
    out.push_back(std::move(copy));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    require(element_count(a.shape) == a.data.size(), "checkpoint: shape/data mismatch for " + a.name);
    const std::uint64_t nbytes = a.data.size() * sizeof(double);
    header["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"dtype", "f64"}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : ckpt.arrays) {
    for (double v : a.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      put<std::uint64_t>(out, bits);
    }
  }
  require(static_cast<bool>(out), "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  require(in && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
          "not a checkpoint file: " + path.string());
  const auto version = get<std::uint32_t>(in);
  require(version == kVersion, "unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  require(static_cast<bool>(in), "checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);

  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& entry : header.at("arrays")) {
    require(entry.at("dtype").get<std::string>() == "f64", "checkpoint: unsupported dtype");
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    require(nbytes == element_count(a.shape) * sizeof(double) && offset + nbytes <= payload.size(),
            "checkpoint: bad extent for array " + a.name);
    a.data.resize(element_count(a.shape));
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[offset + i * 8 + b])) << (8 * b);
      std::memcpy(&a.data[i], &bits, sizeof(bits));
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

std::uint64_t content_hash(const std::vector<NamedArray>& arrays) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& a : arrays) {
    h = fnv1a(a.name.data(), a.name.size(), h);
    for (std::uint64_t d : a.shape) h = fnv1a(&d, sizeof(d), h);
    h = fnv1a(a.data.data(), a.data.size() * sizeof(double), h);
  }
  return h;
}

std::vector<NamedArray> export_arrays(const std::vector<ConstParamRef>& params,
                                      const std::string& prefix) {
  std::vector<NamedArray> out;
  for (const auto& p : params) out.push_back({prefix + p.name, p.value->shape(), p.value->values()});
  return out;
}

void import_arrays(const std::vector<ParamRef>& params, const std::vector<NamedArray>& arrays,
                   const std::string& context) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    require(it != by_name.end(), context + ": missing array '" + p.name + "'");
    require(it->second->shape == p.value->shape(),
            context + ": shape mismatch for '" + p.name + "': expected " +
                shape_string(p.value->shape()) + ", found " + shape_string(it->second->shape));
    p.value->assign(it->second->data);
  }
}

}  // namespace fsim
