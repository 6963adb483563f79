#include "vqasynth/content_store.hpp"

#include <fstream>
#include <sstream>
#include <string_view>

namespace vqasynth {

using namespace std::string_view_literals;

std::string sniff_media_type(const std::string& b) {
  auto starts = [&](std::string_view magic) { return b.size() >= magic.size() && b.compare(0, magic.size(), magic) == 0; };
  if (starts("\x89PNG\r\n\x1a\n"sv)) return "image/png";
  if (starts("\xFF\xD8\xFF"sv)) return "image/jpeg";
  if (starts("GIF87a"sv) || starts("GIF89a"sv)) return "image/gif";
  if (b.size() >= 12 && starts("RIFF"sv) && b.compare(8, 4, "WEBP"sv) == 0) return "image/webp";
  if (starts("BM"sv)) return "image/bmp";
  if (starts("P5"sv) || starts("P2"sv)) return "image/x-portable-graymap";
  if (starts("P6"sv) || starts("P3"sv)) return "image/x-portable-pixmap";
  if (starts("II*\0"sv) || starts("MM\0*"sv)) return "image/tiff";
  return "application/octet-stream";
}

std::filesystem::path FileContentStore::resolve(const std::string& locator) const {
  std::filesystem::path p(locator);
  return p.is_absolute() ? p : root_ / p;
}

std::optional<Blob> FileContentStore::fetch(const std::string& locator) const {
  std::ifstream in(resolve(locator), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  Blob blob{ss.str(), {}};
  blob.media_type = sniff_media_type(blob.bytes);
  return blob;
}

std::optional<Blob> MemoryContentStore::fetch(const std::string& locator) const {
  auto it = blobs_.find(locator);
  if (it == blobs_.end()) return std::nullopt;
  return Blob{it->second, sniff_media_type(it->second)};
}

} // namespace vqasynth
