#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace vqasynth::text {

// Unicode helpers. All strings are UTF-8; invalid sequences are replaced
// with U+FFFD by the ICU conversion.
std::string nfc(std::string_view s);
std::string trim(std::string_view s);
std::string casefold(std::string_view s);

// trim + NFC, the normal form stored for every free-text field.
inline std::string normalize_field(std::string_view s) { return nfc(trim(s)); }

bool contains_ci(std::string_view haystack, std::string_view needle);

std::string sha256_hex(std::string_view data);
std::string base64_encode(std::span<const std::uint8_t> bytes);
inline std::string base64_encode(std::string_view bytes) {
  return base64_encode(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

std::uint64_t fnv1a64(std::string_view data);

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view contents);

} // namespace vqasynth::text
