#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fluvinv {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contents of an 8-byte-magic, JSON-headed, float32 little-endian file.
struct Blob {
  std::string header;          // JSON text
  std::vector<float> payload;  // decoded values
};

/// Layout: magic (8 bytes), u32 LE header length, header, float32 LE payload.
void write_blob(const std::filesystem::path& path, std::string_view magic, const std::string& header,
                std::span<const double> values);
Blob read_blob(const std::filesystem::path& path, std::string_view magic);

inline constexpr std::string_view kGridMagic{"FLVGRID\0", 8};
inline constexpr std::string_view kWeightsMagic{"FLVWTS\0\0", 8};

}  // namespace fluvinv
