#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vqasynth/content_store.hpp"
#include "vqasynth/corpus.hpp"
#include "vqasynth/llm.hpp"
#include "vqasynth/mock_backend.hpp"
#include "vqasynth/text.hpp"

namespace fs = std::filesystem;

namespace testsupport {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("vqasynth-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& s) const { return path / s; }
};

// Smooth random image: a few blurred blobs, so small re-encoding noise leaves
// the coarse gradient structure intact.
inline cv::Mat smooth_image(std::uint32_t seed, int w = 128, int h = 128) {
  std::mt19937 rng(seed);
  cv::Mat small(6, 6, CV_8U);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) small.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(rng() % 256);
  cv::Mat img;
  cv::resize(small, img, cv::Size(w, h), 0, 0, cv::INTER_CUBIC);
  cv::GaussianBlur(img, img, cv::Size(9, 9), 0);
  return img;
}

inline std::string encode(const cv::Mat& img, const std::string& ext = ".png", int jpeg_quality = 90) {
  std::vector<uchar> buf;
  std::vector<int> params;
  if (ext == ".jpg") params = {cv::IMWRITE_JPEG_QUALITY, jpeg_quality};
  cv::imencode(ext, img, buf, params);
  return std::string(buf.begin(), buf.end());
}

inline std::string png_bytes(std::uint32_t seed) { return encode(smooth_image(seed)); }

inline vqasynth::corpus::FigureRecord make_record(const std::string& id, int images = 1) {
  vqasynth::corpus::FigureRecord r;
  r.record_id = id;
  for (int i = 0; i < images; ++i) r.image_refs.push_back(id + "/img" + std::to_string(i) + ".png");
  r.caption = "Axial CT image of the abdomen for " + id + ".";
  r.references = {"The CT of " + id + " was reviewed by two radiologists."};
  r.primary_label = "Clinical imaging";
  r.secondary_labels = {"x-ray radiography"};
  r.source_doc_id = "PMC-" + id;
  return r;
}

inline void write_manifest(const fs::path& path, const std::vector<vqasynth::corpus::FigureRecord>& records) {
  std::string data;
  for (const auto& r : records) data += vqasynth::corpus::to_json(r).dump() + "\n";
  vqasynth::text::write_file_atomic(path.string(), data);
}

inline void add_images(vqasynth::MemoryContentStore& store, const vqasynth::corpus::FigureRecord& r) {
  std::uint32_t seed = static_cast<std::uint32_t>(vqasynth::text::fnv1a64(r.record_id));
  for (std::size_t i = 0; i < r.image_refs.size(); ++i) store.put(r.image_refs[i], png_bytes(seed + static_cast<std::uint32_t>(i)));
}

inline vqasynth::llm::BackendProfile profile(const std::string& model, int max_concurrent = 8) {
  vqasynth::llm::BackendProfile p;
  p.endpoint = "mock://local";
  p.model_id = model;
  p.max_concurrent = max_concurrent;
  return p;
}

inline void no_sleep(std::chrono::milliseconds) {}

} // namespace testsupport
