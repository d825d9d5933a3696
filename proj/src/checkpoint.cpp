#include "istt/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace istt {

namespace {

constexpr char kMagic[8] = {'I', 'S', 'T', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& file) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError("truncated checkpoint file: " + file);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is, const std::string& file) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError("truncated checkpoint file: " + file);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& params,
                     const std::string& metadata) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(tensor->rank()));
    for (int d : tensor->shape()) write_u32(os, static_cast<std::uint32_t>(d));
    for (long i = 0; i < tensor->numel(); ++i) write_f64(os, tensor->data()[i]);
  }
  write_u32(os, static_cast<std::uint32_t>(metadata.size()));
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + file);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a checkpoint file (bad magic): " + file);
  std::uint32_t version = read_u32(is, file);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + file);
  std::uint32_t count = read_u32(is, file);
  Checkpoint ck;
  ck.params.reserve(count);
  for (std::uint32_t p = 0; p < count; ++p) {
    std::uint32_t name_len = read_u32(is, file);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError("truncated checkpoint file: " + file);
    std::uint32_t rank = read_u32(is, file);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(is, file));
    Tensor t(shape);
    for (long i = 0; i < t.numel(); ++i) t.data()[i] = read_f64(is, file);
    ck.params.emplace_back(std::move(name), std::move(t));
  }
  std::uint32_t meta_len = read_u32(is, file);
  ck.metadata.resize(meta_len);
  if (meta_len && !is.read(ck.metadata.data(), meta_len))
    throw IoError("truncated checkpoint metadata: " + file);
  return ck;
}

}  // namespace istt
