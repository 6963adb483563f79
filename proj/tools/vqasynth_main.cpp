#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "vqasynth/config.hpp"
#include "vqasynth/decontam.hpp"
#include "vqasynth/export.hpp"
#include "vqasynth/http_backend.hpp"
#include "vqasynth/journal.hpp"
#include "vqasynth/mock_backend.hpp"
#include "vqasynth/pipeline.hpp"
#include "vqasynth/stats.hpp"
#include "vqasynth/synthetic.hpp"
#include "vqasynth/text.hpp"

namespace fs = std::filesystem;
using namespace vqasynth;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

// Provenance timestamps; SOURCE_DATE_EPOCH pins them for reproducible runs.
std::string utc_now() {
  std::time_t t;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"))
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  else
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void print_funnel(const pipeline::FunnelCounts& f) {
  auto row = [&](const char* name, std::size_t n, std::size_t prev) {
    double pct = prev ? 100.0 * static_cast<double>(n) / static_cast<double>(prev) : 0.0;
    std::printf("  %-12s %8zu  %6.2f%%\n", name, n, pct);
  };
  std::printf("  %-12s %8s  %7s\n", "stage", "count", "of prev");
  std::printf("  %-12s %8zu\n", "ingested", f.ingested);
  row("prefiltered", f.prefiltered, f.ingested);
  row("generated", f.generated, f.prefiltered);
  row("gradable", f.gradable, f.generated);
  row("gate_passed", f.gate_passed, f.gradable);
  row("accepted", f.accepted, f.gate_passed);
}

struct BackendSet {
  std::shared_ptr<llm::Backend> gen, verify;
  std::unique_ptr<llm::Gateway> gen_gw, verify_gw;
  std::unique_ptr<ContentStore> store;
};

BackendSet make_backends(const config::Resolved& r) {
  BackendSet b;
  if (r.mock) {
    std::optional<llm::FixtureStore> fx;
    if (r.fixtures && fs::exists(*r.fixtures)) fx.emplace(*r.fixtures);
    // Unrecorded requests fall back to a seeded simulation at the reference
    // funnel rates.
    synthetic::Rates rates{23635.0 / 23788.0, 22903.0 / 23635.0, 13087.0 / 22903.0};
    synthetic::ScriptedResponder responder(r.pipeline.rubric, synthetic::calibrated(r.pipeline.rubric, rates));
    auto mock = std::make_shared<llm::MockBackend>(fx, responder);
    b.gen = b.verify = mock;
  } else {
    b.gen = std::make_shared<llm::HttpBackend>(r.generator);
    b.verify = std::make_shared<llm::HttpBackend>(r.verifier);
  }
  b.gen_gw = std::make_unique<llm::Gateway>(b.gen, r.generator);
  b.verify_gw = std::make_unique<llm::Gateway>(b.verify, r.verifier);
  b.store = std::make_unique<FileContentStore>(r.image_root);
  return b;
}

void add_run_options(CLI::App* sub, config::RunConfig& rc, std::string& config_file) {
  auto path_opt = [&](const char* name, std::optional<fs::path>& dst, const char* help) {
    sub->add_option_function<std::string>(name, [&dst](const std::string& v) { dst = fs::path(v); }, help);
  };
  sub->add_option("--config", config_file, "Run config file (JSON, comments allowed)");
  path_opt("--manifest", rc.manifest, "Figure manifest (JSONL)");
  path_opt("--rubric", rc.rubric, "Rubric config (JSON)");
  path_opt("--prompts", rc.prompts, "Directory of prompt templates");
  path_opt("--taxonomy", rc.taxonomy, "Taxonomy allowlist (JSON)");
  path_opt("--gen-backend", rc.gen_backend, "Generator backend profile (JSON)");
  path_opt("--verify-backend", rc.verify_backend, "Verifier backend profile (JSON)");
  path_opt("--mock-fixtures", rc.mock_fixtures, "Use the mock backend with this fixture directory");
  path_opt("--out-dir", rc.out_dir, "Run directory");
  path_opt("--image-root", rc.image_root, "Root for relative image locators (default: manifest directory)");
  sub->add_option_function<std::string>("--tau", [&rc](const std::string& v) { rc.tau = v; },
                                        "Acceptance threshold override, e.g. 0.967");
  sub->add_option_function<int>("--max-concurrent", [&rc](int v) { rc.max_concurrent = v; },
                                "In-flight request bound per backend");
  sub->add_option_function<std::size_t>("--max-images", [&rc](std::size_t v) { rc.max_images = v; },
                                        "Images allowed per record");
  sub->add_option_function<std::int64_t>("--max-total-tokens", [&rc](std::int64_t v) { rc.max_total_tokens = v; },
                                         "Pause the run once this many tokens are spent");
  sub->add_option("--stop-after", rc.stop_after, "Pause after this many records finish");
}

config::RunConfig effective(const config::RunConfig& cli, const std::string& config_file) {
  if (config_file.empty()) return cli;
  return config::RunConfig::from_file(config_file).merged(cli);
}

int run_pipeline(const config::RunConfig& rc, bool resume) {
  config::Resolved r = config::resolve(rc);
  r.pipeline.clock = utc_now;
  BackendSet b = make_backends(r);
  pipeline::Backends backends{*b.gen_gw, *b.verify_gw, *b.store};
  pipeline::RunResult res =
      resume ? pipeline::resume(r.pipeline, backends) : pipeline::run(r.pipeline, backends);
  std::printf("%s %s\n", resume ? "resumed" : "run", r.pipeline.out_dir.string().c_str());
  print_funnel(res.funnel);
  std::printf("  terminal %zu, retryable failures %zu, pending %zu, backend calls %zu, tokens %lld\n",
              res.terminal, res.retryable_failures, res.pending, res.backend_calls,
              static_cast<long long>(res.usage.total()));
  if (res.budget_exhausted) std::printf("  token budget reached; run paused\n");
  return res.complete() ? kExitOk : kExitPartial;
}

int cmd_ingest(const config::RunConfig& rc) {
  if (!rc.manifest) throw config::ConfigError("--manifest is required");
  if (!rc.out_dir) throw config::ConfigError("--out-dir is required");
  config::RunConfig tmp = rc;
  if (!tmp.gen_backend && !tmp.mock_fixtures) tmp.mock_fixtures = fs::path("unused");
  config::Resolved r = config::resolve(tmp);
  auto ing = pipeline::ingest(r.pipeline);
  pipeline::write_ingest_outputs(ing, r.pipeline.out_dir);
  std::printf("ingested %zu, manifest rejects %zu, prefilter kept %zu, dropped %zu\n", ing.funnel.ingested,
              ing.rejects.size(), ing.funnel.prefiltered, ing.dropped.size());
  return kExitOk;
}

int cmd_stats(const fs::path& run_dir, bool as_json) {
  auto s = stats::compute(run_dir);
  if (as_json) {
    std::cout << s.to_json().dump(2) << "\n";
    return kExitOk;
  }
  if (!s.funnel.is_null()) {
    pipeline::FunnelCounts f;
    f.ingested = s.funnel.value("ingested", std::size_t{0});
    f.prefiltered = s.funnel.value("prefiltered", std::size_t{0});
    f.generated = s.funnel.value("generated", std::size_t{0});
    f.gradable = s.funnel.value("gradable", std::size_t{0});
    f.gate_passed = s.funnel.value("gate_passed", std::size_t{0});
    f.accepted = s.funnel.value("accepted", std::size_t{0});
    print_funnel(f);
  }
  std::printf("records in audit log: %zu (skipped lines: %zu)\n", s.records, s.skipped_lines);
  for (const auto& [cause, n] : s.reject_causes) std::printf("  reject %-28s %zu\n", cause.c_str(), n);
  std::printf("per-criterion failure rates:\n");
  for (const auto& [id, c] : s.criteria)
    std::printf("  stage %d %-26s %6zu / %-6zu %6.2f%%\n", c.stage, id.c_str(), c.failed, c.evaluated,
                100.0 * c.rate());
  std::printf("tokens: prompt %lld, completion %lld\n", static_cast<long long>(s.usage.prompt_tokens),
              static_cast<long long>(s.usage.completion_tokens));
  return kExitOk;
}

int cmd_decontam(const fs::path& run_dir, const std::vector<std::string>& suites, const std::string& image_root,
                 int max_hamming) {
  if (suites.empty()) throw config::ConfigError("at least one --suite is required");
  if (max_hamming < 0 || max_hamming > 64) throw config::ConfigError("--max-hamming must be in [0, 64]");
  std::vector<decontam::SuiteConfig> cfgs;
  for (const auto& s : suites) {
    try {
      cfgs.push_back(decontam::SuiteConfig::from_json(config::load_json_file(s), fs::path(s).parent_path()));
    } catch (const config::ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw config::ConfigError(s + ": " + e.what());
    }
  }
  fs::path accepted = run_dir / pipeline::kAcceptedFile;
  if (!fs::exists(accepted)) throw config::ConfigError("no accepted.jsonl in " + run_dir.string());
  auto records = dataset::read_accepted(accepted.string());

  decontam::EvalSuiteIndex index;
  for (const auto& c : cfgs) {
    auto load = decontam::load_suite(c);
    for (const auto& e : load.errors)
      std::fprintf(stderr, "suite %s: %s:%zu: %s\n", c.suite_id.c_str(), e.file.c_str(), e.line, e.message.c_str());
    FileContentStore suite_images(c.image_root.empty() ? fs::path(".") : c.image_root);
    for (const auto& f : index.add(load.items, suite_images))
      std::fprintf(stderr, "suite image not hashed: %s\n", f.c_str());
  }
  FileContentStore images(image_root.empty() ? fs::path(".") : fs::path(image_root));
  std::vector<std::string> missing;
  auto entries = decontam::dataset_entries(records, images, &missing);
  for (const auto& m : missing) std::fprintf(stderr, "dataset image not hashed: %s\n", m.c_str());
  auto report = decontam::detect_overlap(entries, index, {max_hamming});
  auto result = decontam::decontaminate(records, report);

  std::string rep, removed, clean;
  for (const auto& p : report) rep += p.to_json().dump() + "\n";
  for (const auto& r : result.removed) removed += r.to_json().dump() + "\n";
  for (const auto& r : result.clean) clean += r.to_line() + "\n";
  text::write_file_atomic((run_dir / "decontam_report.jsonl").string(), rep);
  text::write_file_atomic((run_dir / "decontam_removed.jsonl").string(), removed);
  text::write_file_atomic((run_dir / "accepted.clean.jsonl").string(), clean);
  std::printf("suite items %zu, overlaps %zu, removed %zu, kept %zu\n", index.item_count(), report.size(),
              result.removed.size(), result.clean.size());
  return kExitOk;
}

int cmd_export(const config::RunConfig& rc, const std::string& export_dir, bool bundle, bool traces) {
  if (!rc.out_dir) throw config::ConfigError("--out-dir is required");
  fs::path run_dir = *rc.out_dir;
  fs::path clean = run_dir / "accepted.clean.jsonl", accepted = run_dir / pipeline::kAcceptedFile;
  fs::path input = fs::exists(clean) ? clean : accepted;
  if (!fs::exists(input)) throw config::ConfigError("no accepted items in " + run_dir.string());
  fs::path out = export_dir.empty() ? run_dir / "export" : fs::path(export_dir);

  std::optional<config::Resolved> r;
  if (traces || bundle) r = config::resolve(rc, false);
  auto records = dataset::read_accepted(input.string());
  exporter::check_unique(records);

  fs::path trace_path = run_dir / exporter::kTracesFile;
  auto known = exporter::read_traces(trace_path);
  if (traces) {
    BackendSet b = make_backends(*r);
    std::vector<dataset::AcceptedRecord> todo;
    for (const auto& rec : records)
      if (!known.count(rec.record_id)) todo.push_back(rec);
    auto batch = exporter::elicit_traces(todo, *b.gen_gw, r->pipeline.prompts, *b.store, r->pipeline.max_in_flight);
    exporter::append_traces(trace_path, batch.traces);
    for (auto& t : batch.traces) known[t.record_id] = t;
    for (const auto& [id, err] : batch.failures) std::fprintf(stderr, "trace failed for %s: %s\n", id.c_str(), err.c_str());
  }

  exporter::ExportOptions opt;
  opt.out_dir = out;
  opt.bundle_images = bundle;
  std::unique_ptr<ContentStore> store;
  if (bundle) {
    store = std::make_unique<FileContentStore>(r->image_root);
    opt.store = store.get();
  }
  opt.created_at = utc_now();
  if (fs::exists(run_dir / pipeline::kFunnelFile))
    opt.funnel = config::load_json_file(run_dir / pipeline::kFunnelFile);
  if (fs::exists(run_dir / pipeline::kJournalFile)) {
    auto header = pipeline::Journal::read(run_dir / pipeline::kJournalFile).header;
    opt.run_id = header.value("run_id", json(nullptr));
    opt.config_hashes = header.value("config", json(nullptr));
  }
  if (input == clean) {
    std::size_t n = 0;
    for (const auto& l : dataset::read_accepted(accepted.string())) (void)l, ++n;
    opt.decontaminated = n - records.size();
  }
  auto s = exporter::export_dataset(records, known, opt);
  std::printf("exported to %s: mcvqa %zu, sft %zu (skipped %zu), rlvr %zu\n", out.string().c_str(), s.mcvqa, s.sft,
              s.sft_skipped, s.rlvr);
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthesizes verified multiple-choice VQA items from figure records."};
  app.require_subcommand(1);

  config::RunConfig rc;
  std::string config_file;

  auto* ingest = app.add_subcommand("ingest", "Validate and pre-filter the manifest");
  add_run_options(ingest, rc, config_file);
  auto* run = app.add_subcommand("run", "Generate and verify items for a new run");
  add_run_options(run, rc, config_file);
  auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
  add_run_options(resume, rc, config_file);

  std::string stats_dir;
  bool stats_json = false;
  auto* stats = app.add_subcommand("stats", "Summarize a run's audit log");
  stats->add_option("--out-dir", stats_dir, "Run directory")->required();
  stats->add_flag("--json", stats_json, "Print JSON");

  std::string dc_dir, dc_images;
  std::vector<std::string> dc_suites;
  int dc_hamming = decontam::kDefaultMaxHamming;
  auto* dc = app.add_subcommand("decontam", "Remove items overlapping evaluation suites");
  dc->add_option("--out-dir", dc_dir, "Run directory")->required();
  dc->add_option("--suite", dc_suites, "Suite adapter config (JSON); repeatable");
  dc->add_option("--image-root", dc_images, "Root for the dataset's image locators");
  dc->add_option("--max-hamming", dc_hamming, "Image match threshold");

  std::string export_dir;
  bool bundle = false, traces = false;
  auto* ex = app.add_subcommand("export", "Write MC-VQA, SFT and RLVR files and a dataset card");
  add_run_options(ex, rc, config_file);
  ex->add_option("--export-dir", export_dir, "Output directory (default: <out-dir>/export)");
  ex->add_flag("--bundle-images", bundle, "Copy image bytes next to the exported files");
  ex->add_flag("--traces", traces, "Elicit reasoning traces for SFT with the generator backend");

  auto usage = [&app] {
    std::vector<CLI::App*> chosen = app.get_subcommands();
    // Top-level help lists the flags of every subcommand.
    return chosen.empty() ? app.help("", CLI::AppFormatMode::All) : chosen.back()->help();
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::fputs(usage().c_str(), stdout);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n\n%s", e.what(), usage().c_str());
    return kExitConfig;
  }

  try {
    if (*ingest) return cmd_ingest(effective(rc, config_file));
    if (*run) return run_pipeline(effective(rc, config_file), false);
    if (*resume) return run_pipeline(effective(rc, config_file), true);
    if (*stats) return cmd_stats(stats_dir, stats_json);
    if (*dc) return cmd_decontam(dc_dir, dc_suites, dc_images, dc_hamming);
    if (*ex) return cmd_export(effective(rc, config_file), export_dir, bundle, traces);
  } catch (const config::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const pipeline::PipelineError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind == pipeline::PipelineErrorKind::ConfigDrift || e.kind == pipeline::PipelineErrorKind::Invalid ||
                   e.kind == pipeline::PipelineErrorKind::RunExists || e.kind == pipeline::PipelineErrorKind::NoRun
               ? kExitConfig
               : kExitFailure;
  } catch (const llm::GatewayError& e) {
    std::fprintf(stderr, "backend error: %s\n", e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitConfig;
}
