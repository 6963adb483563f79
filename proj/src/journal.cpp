#include "vqasynth/journal.hpp"

#include "vqasynth/text.hpp"

namespace vqasynth::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

Journal::Journal(fs::path path) : path_(std::move(path)) {}

Journal::Journal(Journal&& other) noexcept
    : path_(std::move(other.path_)), out_(std::move(other.out_)), appended_(other.appended_) {}

Journal Journal::create(const fs::path& path, const json& header) {
  if (fs::exists(path)) throw JournalError("journal already exists: " + path.string());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  Journal j(path);
  j.out_.open(path, std::ios::binary | std::ios::out | std::ios::trunc);
  if (!j.out_) throw JournalError("cannot create journal " + path.string());
  j.out_ << json{{"type", "header"}, {"header", header}}.dump() << '\n';
  j.out_.flush();
  return j;
}

JournalContents Journal::read(const fs::path& path) {
  std::string data;
  try {
    data = text::read_file(path.string());
  } catch (const std::exception&) {
    throw JournalError("no journal at " + path.string());
  }
  JournalContents c;
  std::size_t pos = 0;
  bool first = true;
  while (pos < data.size()) {
    std::size_t nl = data.find('\n', pos);
    bool complete = nl != std::string::npos;
    std::string line = data.substr(pos, complete ? nl - pos : std::string::npos);
    pos = complete ? nl + 1 : data.size();
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (!complete || pos >= data.size()) {
        c.torn_tail = true;
        break;
      }
      throw JournalError("corrupt journal line in " + path.string());
    }
    if (!complete) {
      // Valid JSON without its newline still counts as torn; the writer
      // always terminates lines.
      c.torn_tail = true;
      break;
    }
    if (first) {
      if (j.value("type", "") != "header") throw JournalError("journal does not start with a header");
      c.header = j.at("header");
      first = false;
    } else {
      c.events.push_back(std::move(j));
    }
  }
  if (first) throw JournalError("journal has no header");
  return c;
}

Journal Journal::open(const fs::path& path, JournalContents& contents) {
  contents = read(path);
  if (contents.torn_tail) {
    // Rewrite without the torn line so appends start on a clean boundary.
    std::string data = text::read_file(path.string());
    auto last_nl = data.rfind('\n');
    data.resize(last_nl == std::string::npos ? 0 : last_nl + 1);
    text::write_file_atomic(path.string(), data);
  }
  Journal j(path);
  j.out_.open(path, std::ios::binary | std::ios::out | std::ios::app);
  if (!j.out_) throw JournalError("cannot append to journal " + path.string());
  return j;
}

void Journal::append(const json& event) {
  std::string line = event.dump() + '\n';
  std::lock_guard lock(mutex_);
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) throw JournalError("journal write failed");
  ++appended_;
}

void Journal::compact(const json& header, const std::vector<json>& events) {
  std::lock_guard lock(mutex_);
  std::string data = json{{"type", "header"}, {"header", header}}.dump() + '\n';
  for (const auto& e : events) data += e.dump() + '\n';
  out_.close();
  text::write_file_atomic(path_.string(), data);
  out_.open(path_, std::ios::binary | std::ios::out | std::ios::app);
  if (!out_) throw JournalError("cannot reopen journal after compaction");
}

} // namespace vqasynth::pipeline
