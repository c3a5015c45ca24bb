#include "mclone/mclt.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mclone::mclt {
namespace {

constexpr std::array<char, 4> kMagic = {'M', 'C', 'L', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("corrupt MCLT container: truncated ") + what);
  }
}

}  // namespace

void write(std::ostream& os, const Tensor& t) {
  if (t.empty()) throw FormatError("cannot encode an empty tensor");
  if (t.rank() > 255) throw FormatError("tensor rank exceeds MCLT limit");
  os.write(kMagic.data(), 4);
  const char header[3] = {static_cast<char>(kVersion), static_cast<char>(kDtypeF32), static_cast<char>(t.rank())};
  os.write(header, 3);
  for (auto d : t.dims()) put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw IoError("failed writing MCLT container");
}

Tensor read(std::istream& is) {
  char magic[4];
  read_exact(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic.data(), 4) != 0) throw FormatError("corrupt MCLT container: bad magic");
  unsigned char header[3];
  read_exact(is, header, 3, "header");
  if (header[0] != kVersion) {
    throw FormatError("MCLT version mismatch: file has " + std::to_string(header[0]) + ", expected " +
                      std::to_string(kVersion));
  }
  if (header[1] != kDtypeF32) throw FormatError("unsupported MCLT dtype code " + std::to_string(header[1]));
  Shape dims(header[2]);
  std::size_t n = 1;
  for (auto& d : dims) {
    unsigned char b[4];
    read_exact(is, b, 4, "dims");
    d = get_u32(b);
    if (d == 0) throw FormatError("corrupt MCLT container: zero dim");
    n *= static_cast<std::size_t>(d);
  }
  std::vector<unsigned char> raw(n * 4);
  read_exact(is, raw.data(), raw.size(), "payload");
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(get_u32(raw.data() + 4 * i));
  return Tensor(std::move(dims), std::move(values));
}

void save(const std::filesystem::path& path, const Tensor& t) { save_all(path, {t}); }

Tensor load(const std::filesystem::path& path) {
  auto all = load_all(path);
  if (all.size() != 1) throw FormatError(path.string() + ": expected one tensor, found " + std::to_string(all.size()));
  return all.front();
}

void save_all(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& t : tensors) write(os, t);
}

std::vector<Tensor> load_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<Tensor> out;
  while (is.peek() != std::char_traits<char>::eof()) out.push_back(read(is));
  return out;
}

std::size_t encoded_size(const Shape& dims) {
  return 7 + 4 * dims.size() + 4 * static_cast<std::size_t>(shape_numel(dims));
}

}  // namespace mclone::mclt
