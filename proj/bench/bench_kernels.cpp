// Serial reference vs OpenMP kernels: rubric pattern enumeration and
// dataset-vs-suite overlap detection.

#include <benchmark/benchmark.h>

#include "contamination.hpp"
#include "vqasynth/decontam.hpp"
#include "vqasynth/rubric.hpp"

using namespace vqasynth;

namespace {

// 8 positives and 12 penalties: 2^20 patterns, the enumeration bound.
rubric::RubricConfig wide_rubric() {
  auto c = rubric::RubricConfig::defaults();
  c.positives.clear();
  c.penalties.clear();
  for (int i = 0; i < 8; ++i)
    c.positives.push_back({"p" + std::to_string(i), "P", i < 4 ? rubric::Tier::Important : rubric::Tier::Optional,
                           i < 4 ? 3 + i % 2 : 1 + i % 2, ""});
  for (int j = 0; j < 12; ++j) c.penalties.push_back({"n" + std::to_string(j), "N", rubric::Tier::Penalty, -1 - j % 2, ""});
  return c;
}

void BM_EnumerateSerial(benchmark::State& st) {
  auto c = wide_rubric();
  for (auto _ : st) benchmark::DoNotOptimize(rubric::enumerate_acceptance_patterns_serial(c).accepted_count);
  st.SetItemsProcessed(st.iterations() * (1 << 20));
}

void BM_EnumerateParallel(benchmark::State& st) {
  auto c = wide_rubric();
  for (auto _ : st) benchmark::DoNotOptimize(rubric::enumerate_acceptance_patterns(c).accepted_count);
  st.SetItemsProcessed(st.iterations() * (1 << 20));
}

struct OverlapData {
  decontam::EvalSuiteIndex index;
  std::vector<decontam::DatasetEntry> entries;
};

const OverlapData& overlap_data() {
  static OverlapData d = [] {
    auto c = testsupport::make_contamination(2000, 4000, 20, 20, 3);
    OverlapData o;
    o.index.add(c.suite, c.suite_images);
    o.entries = decontam::dataset_entries(c.records, c.dataset_images);
    return o;
  }();
  return d;
}

void BM_OverlapSerial(benchmark::State& st) {
  const auto& d = overlap_data();
  for (auto _ : st) benchmark::DoNotOptimize(decontam::detect_overlap_serial(d.entries, d.index).size());
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(d.entries.size()));
}

void BM_OverlapParallel(benchmark::State& st) {
  const auto& d = overlap_data();
  for (auto _ : st) benchmark::DoNotOptimize(decontam::detect_overlap(d.entries, d.index).size());
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(d.entries.size()));
}

} // namespace

BENCHMARK(BM_EnumerateSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EnumerateParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_OverlapSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_OverlapParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
