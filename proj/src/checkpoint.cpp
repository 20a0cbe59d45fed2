#include "pausenlu/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pausenlu {

namespace {

constexpr char kMagic[8] = {'P', 'N', 'L', 'U', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_str(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace

const Mat& Checkpoint::tensor(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return t.value;
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt,
                     int width) {
  if (width != 4 && width != 8)
    throw std::runtime_error("save_checkpoint: width must be 4 or 8");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(width));
  write_u64(out, ckpt.tensors.size());
  write_str(out, ckpt.metadata_json);
  for (const NamedTensor& t : ckpt.tensors) {
    write_str(out, t.name);
    write_u32(out, 2);  // rank
    write_u64(out, static_cast<std::uint64_t>(t.value.rows()));
    write_u64(out, static_cast<std::uint64_t>(t.value.cols()));
    const Eigen::Index n = t.value.size();
    if (width == 8) {
      out.write(reinterpret_cast<const char*>(t.value.data()),
                static_cast<std::streamsize>(n * 8));
    } else {
      std::vector<float> f(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i)
        f[static_cast<std::size_t>(i)] =
            static_cast<float>(t.value.data()[i]);
      out.write(reinterpret_cast<const char*>(f.data()),
                static_cast<std::streamsize>(n * 4));
    }
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(version));
  const std::uint32_t width = read_u32(in);
  if (width != 4 && width != 8)
    throw std::runtime_error("load_checkpoint: bad width " +
                             std::to_string(width));
  const std::uint64_t count = read_u64(in);
  Checkpoint ckpt;
  ckpt.metadata_json = read_str(in);
  ckpt.tensors.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = read_str(in);
    const std::uint32_t rank = read_u32(in);
    if (rank != 2)
      throw std::runtime_error("load_checkpoint: unsupported rank " +
                               std::to_string(rank));
    const auto rows = static_cast<Eigen::Index>(read_u64(in));
    const auto cols = static_cast<Eigen::Index>(read_u64(in));
    t.value.resize(rows, cols);
    const Eigen::Index n = rows * cols;
    if (width == 8) {
      in.read(reinterpret_cast<char*>(t.value.data()),
              static_cast<std::streamsize>(n * 8));
    } else {
      std::vector<float> f(static_cast<std::size_t>(n));
      in.read(reinterpret_cast<char*>(f.data()),
              static_cast<std::streamsize>(n * 4));
      for (Eigen::Index i = 0; i < n; ++i)
        t.value.data()[i] = static_cast<double>(f[static_cast<std::size_t>(i)]);
    }
    if (!in)
      throw std::runtime_error("load_checkpoint: truncated file " + path);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace pausenlu
