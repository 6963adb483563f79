#include "vqasynth/config.hpp"

#include <algorithm>

#include "vqasynth/text.hpp"

namespace vqasynth::config {

using nlohmann::json;
namespace fs = std::filesystem;

json load_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("file not found: " + path.string());
  std::string data;
  try {
    data = text::read_file(path.string());
  } catch (const std::exception&) {
    throw ConfigError("cannot read " + path.string());
  }
  try {
    return json::parse(data, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig RunConfig::from_file(const fs::path& path) {
  json j = load_json_file(path);
  if (!j.is_object()) throw ConfigError(path.string() + ": run config must be an object");
  fs::path base = path.parent_path();
  RunConfig rc;
  auto p = [&](const char* key, std::optional<fs::path>& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) throw ConfigError(path.string() + ": " + key + " must be a path string");
    fs::path v = j[key].get<std::string>();
    dst = v.is_absolute() ? v : base / v;
  };
  try {
    p("manifest", rc.manifest);
    p("rubric", rc.rubric);
    p("prompts", rc.prompts);
    p("taxonomy", rc.taxonomy);
    p("gen_backend", rc.gen_backend);
    p("verify_backend", rc.verify_backend);
    p("mock_fixtures", rc.mock_fixtures);
    p("out_dir", rc.out_dir);
    p("image_root", rc.image_root);
    if (j.contains("tau")) rc.tau = j["tau"].is_string() ? j["tau"].get<std::string>() : j["tau"].dump();
    if (j.contains("max_concurrent")) rc.max_concurrent = j["max_concurrent"].get<int>();
    if (j.contains("max_images")) rc.max_images = j["max_images"].get<std::size_t>();
    if (j.contains("max_total_tokens")) rc.max_total_tokens = j["max_total_tokens"].get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return rc;
}

RunConfig RunConfig::merged(const RunConfig& o) const {
  RunConfig r = *this;
  auto take = [](auto& dst, const auto& src) {
    if (src) dst = src;
  };
  take(r.manifest, o.manifest);
  take(r.rubric, o.rubric);
  take(r.prompts, o.prompts);
  take(r.taxonomy, o.taxonomy);
  take(r.gen_backend, o.gen_backend);
  take(r.verify_backend, o.verify_backend);
  take(r.mock_fixtures, o.mock_fixtures);
  take(r.out_dir, o.out_dir);
  take(r.image_root, o.image_root);
  take(r.tau, o.tau);
  take(r.max_concurrent, o.max_concurrent);
  take(r.max_images, o.max_images);
  take(r.max_total_tokens, o.max_total_tokens);
  if (o.stop_after) r.stop_after = o.stop_after;
  return r;
}

llm::BackendProfile mock_profile(const std::string& model_id) {
  llm::BackendProfile p;
  p.endpoint = "mock://local";
  p.model_id = model_id;
  return p;
}

namespace {

llm::BackendProfile load_profile(const fs::path& path) {
  json j = load_json_file(path);
  try {
    auto p = llm::BackendProfile::from_json(j);
    if (p.endpoint.empty()) throw ConfigError(path.string() + ": endpoint is required");
    if (p.model_id.empty()) throw ConfigError(path.string() + ": model_id is required");
    return p;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw ConfigError(std::string(what) + " is not a directory: " + p.string());
}

} // namespace

Resolved resolve(const RunConfig& rc, bool need_manifest) {
  Resolved r;
  auto& pc = r.pipeline;
  if (need_manifest) {
    if (!rc.manifest) throw ConfigError("--manifest is required");
    if (!fs::is_regular_file(*rc.manifest)) throw ConfigError("manifest not found: " + rc.manifest->string());
    pc.manifest_path = rc.manifest->string();
  }
  if (!rc.out_dir) throw ConfigError("--out-dir is required");
  pc.out_dir = *rc.out_dir;

  try {
    if (rc.rubric) pc.rubric = rubric::RubricConfig::from_json(load_json_file(*rc.rubric));
    if (rc.tau) {
      const std::string& t = *rc.tau;
      auto slash = t.find('/');
      pc.rubric.tau = slash == std::string::npos
                          ? rubric::parse_decimal(t)
                          : rubric::Rational(std::stoll(t.substr(0, slash)), std::stoll(t.substr(slash + 1)));
    }
    pc.rubric.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("rubric: ") + e.what());
  }

  if (rc.prompts) {
    require_dir(*rc.prompts, "--prompts");
    try {
      pc.prompts = prompt::PromptSet::load_dir(*rc.prompts);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (rc.taxonomy) {
    try {
      pc.taxonomy = corpus::TaxonomyFilter::from_json(load_json_file(*rc.taxonomy));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(rc.taxonomy->string() + ": " + e.what());
    }
  }
  if (rc.max_images) {
    if (*rc.max_images < 1 || *rc.max_images > 64) throw ConfigError("--max-images must be in [1, 64]");
    pc.manifest_options.max_images = *rc.max_images;
  }
  if (rc.max_total_tokens) {
    if (*rc.max_total_tokens < 0) throw ConfigError("--max-total-tokens must be >= 0");
    pc.max_total_tokens = *rc.max_total_tokens;
  }
  pc.stop_after = rc.stop_after;

  if (rc.mock_fixtures) {
    r.mock = true;
    r.fixtures = *rc.mock_fixtures;
    if (fs::exists(*rc.mock_fixtures)) require_dir(*rc.mock_fixtures, "--mock-fixtures");
  }
  if (rc.gen_backend) r.generator = load_profile(*rc.gen_backend);
  else if (r.mock) r.generator = mock_profile("mock-generator");
  else throw ConfigError("--gen-backend is required unless --mock-fixtures is given");
  if (rc.verify_backend) r.verifier = load_profile(*rc.verify_backend);
  else if (r.mock) r.verifier = mock_profile("mock-verifier");
  else throw ConfigError("--verify-backend is required unless --mock-fixtures is given");

  if (rc.max_concurrent) {
    if (*rc.max_concurrent < 1 || *rc.max_concurrent > 1024) throw ConfigError("--max-concurrent must be in [1, 1024]");
    r.generator.max_concurrent = *rc.max_concurrent;
    r.verifier.max_concurrent = *rc.max_concurrent;
    pc.max_in_flight = *rc.max_concurrent;
  } else {
    pc.max_in_flight = std::max(r.generator.max_concurrent, r.verifier.max_concurrent);
  }

  r.image_root = rc.image_root ? *rc.image_root : (rc.manifest ? rc.manifest->parent_path() : fs::path("."));
  if (!r.image_root.empty() && !fs::is_directory(r.image_root))
    throw ConfigError("image root is not a directory: " + r.image_root.string());

  if (need_manifest) {
    try {
      pc.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  return r;
}

} // namespace vqasynth::config
