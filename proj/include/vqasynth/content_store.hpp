#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace vqasynth {

struct Blob {
  std::string bytes;
  std::string media_type;
};

struct ImageFetchFailure : std::runtime_error {
  std::string locator;
  explicit ImageFetchFailure(const std::string& loc)
      : std::runtime_error("cannot fetch image " + loc), locator(loc) {}
};

// Media type from magic bytes; "application/octet-stream" when unknown.
std::string sniff_media_type(const std::string& bytes);

// Maps image locators from the manifest to bytes.
class ContentStore {
public:
  virtual ~ContentStore() = default;
  virtual std::optional<Blob> fetch(const std::string& locator) const = 0;

  Blob require(const std::string& locator) const {
    auto b = fetch(locator);
    if (!b || b->bytes.empty()) throw ImageFetchFailure(locator);
    return *std::move(b);
  }
};

// Locators are paths relative to `root` (absolute paths used as given).
class FileContentStore : public ContentStore {
public:
  explicit FileContentStore(std::filesystem::path root) : root_(std::move(root)) {}
  std::optional<Blob> fetch(const std::string& locator) const override;
  std::filesystem::path resolve(const std::string& locator) const;

private:
  std::filesystem::path root_;
};

class MemoryContentStore : public ContentStore {
public:
  void put(const std::string& locator, std::string bytes) { blobs_[locator] = std::move(bytes); }
  std::optional<Blob> fetch(const std::string& locator) const override;

private:
  std::map<std::string, std::string> blobs_;
};

} // namespace vqasynth
