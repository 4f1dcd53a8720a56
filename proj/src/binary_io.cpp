#include "fluvinv/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fluvinv {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

}  // namespace

void write_blob(const std::filesystem::path& path, std::string_view magic, const std::string& header,
                std::span<const double> values) {
  std::string bytes(magic);
  put_u32(bytes, static_cast<std::uint32_t>(header.size()));
  bytes += header;
  bytes.reserve(bytes.size() + 4 * values.size());
  for (double v : values) put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Blob read_blob(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string name = path.filename().string();
  if (bytes.size() < 12) throw FormatError(name + ": truncated (no header)");
  if (std::string_view(bytes).substr(0, 8) != magic) throw FormatError(name + ": bad magic bytes");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t hlen = get_u32(raw + 8);
  if (bytes.size() < 12 + std::size_t(hlen)) throw FormatError(name + ": truncated header");
  Blob blob;
  blob.header = bytes.substr(12, hlen);
  const std::size_t start = 12 + std::size_t(hlen);
  const std::size_t n = bytes.size() - start;
  if (n % 4 != 0) throw FormatError(name + ": truncated payload (" + std::to_string(n) + " bytes)");
  blob.payload.resize(n / 4);
  for (std::size_t i = 0; i < n / 4; ++i)
    blob.payload[i] = std::bit_cast<float>(get_u32(raw + start + 4 * i));
  return blob;
}

}  // namespace fluvinv
