#include "samiro/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "samiro/error.hpp"

namespace samiro {
namespace {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw ParseError(std::string("truncated input reading ") + what);
  return v;
}

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw ParseError(std::string("bad magic, expected \"") + magic + "\"");
  }
}

template <typename From, typename To>
std::vector<To> read_payload(std::istream& is, std::size_t n) {
  std::vector<From> raw(n);
  if (n && !is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(From)))) {
    throw ParseError("truncated tensor payload");
  }
  return std::vector<To>(raw.begin(), raw.end());
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("SMRT", 4);
  put_u32(os, kTensorFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  const auto elem = static_cast<std::uint8_t>(sizeof(T));
  os.put(static_cast<char>(elem));
  os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  expect_magic(is, "SMRT");
  const auto version = get_u32(is, "version");
  if (version != kTensorFormatVersion) throw ParseError("unsupported SMRT version " + std::to_string(version));
  const auto rank = get_u32(is, "rank");
  if (rank > 16) throw ParseError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(is, "extent");
  const int elem = is.get();
  const auto n = numel(shape);
  if (elem == 4) return Tensor<T>(std::move(shape), read_payload<float, T>(is, n));
  if (elem == 8) return Tensor<T>(std::move(shape), read_payload<double, T>(is, n));
  throw ParseError("unsupported element size " + std::to_string(elem));
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);

const std::string& Checkpoint::require(const std::string& key) const {
  auto it = manifest.find(key);
  if (it == manifest.end()) throw ParseError("checkpoint manifest missing key '" + key + "'");
  return it->second;
}

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ParseError("checkpoint missing tensor '" + name + "'");
  return it->second;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os(std::ios::binary);
  os.write("SMRK", 4);
  put_u32(os, 1);
  std::string manifest;
  for (const auto& [k, v] : ckpt.manifest) manifest += k + "=" + v + "\n";
  put_u32(os, static_cast<std::uint32_t>(manifest.size()));
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  return os.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  expect_magic(is, "SMRK");
  if (get_u32(is, "version") != 1) throw ParseError("unsupported checkpoint version");
  Checkpoint ckpt;
  std::string manifest(get_u32(is, "manifest length"), '\0');
  if (!is.read(manifest.data(), static_cast<std::streamsize>(manifest.size()))) throw ParseError("truncated manifest");
  std::istringstream ms(manifest);
  std::string line;
  int lineno = 0;
  while (std::getline(ms, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("manifest:" + std::to_string(lineno) + ": expected key=value");
    ckpt.manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = get_u32(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get_u32(is, "name length"), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw ParseError("truncated tensor name");
    ckpt.tensors.emplace(name, read_tensor<float>(is));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const auto bytes = serialize_checkpoint(ckpt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return deserialize_checkpoint(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace samiro
