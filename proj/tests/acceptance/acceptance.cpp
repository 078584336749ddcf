// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Tolerances are pinned below.
//
//   vtlab_acceptance [--only 1,2,...]
//
// Criteria 3 and 4 rerun the oracle and gradient tests of the unit binary under
// a gtest filter, so the oracles live in exactly one place.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vtlab/data/dataset.hpp"
#include "vtlab/data/probe.hpp"
#include "vtlab/harness/harness.hpp"
#include "vtlab/models/accounting.hpp"
#include "vtlab/models/model.hpp"
#include "vtlab/models/presets.hpp"

using namespace vtlab;

namespace {

constexpr double kParamTol = 0.05;
constexpr double kFlopTol = 0.15;
constexpr int kSeeds = 3;
constexpr double kPretrainGain = 10.0;
constexpr double kShiftSlack5 = 1.0;
constexpr double kProbeSpatialMin = 90.0;
constexpr double kProbeTemporalSlack = 10.0;
constexpr double kLlggBand = 3.0;
constexpr double kPretrainBudgetMin = 45.0;
constexpr double kProbeBudgetMin = 60.0;
constexpr double kDeterminismBudgetMin = 10.0;
constexpr int kNestingSeeds = 5;

const std::vector<std::string> kAccountedPresets{"vst_small",  "uniformer_small", "mvitv2_small", "vivit_fe",
                                                 "vivit_st",   "i3d_r50",         "c2d_r50"};

// Oracle tests backing the mechanism criterion; each sweeps five seeds at 1e-6.
const char* const kOracleFilter =
    "ShiftedWindow.MatchesGatherOracle:ShiftedWindow.FullWindowZeroShiftEqualsGlobal:"
    "WindowPartition.RoundTripIsBitExact:ShiftedWindow.MaskedPairsHaveExactlyZeroWeight:"
    "Conv3d.MatchesNaiveLoopOracle:PooledAttention.UnitStridesEqualAttentionWithDecomposedBias";
// Finite-difference checks at f64, rel 1e-4, five seeds each.
const char* const kGradientFilter = "*Gradient*";

struct Verdict {
  bool pass = false;
  std::string detail;
};

double minutes_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
}

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void progress(const std::string& line) { std::cerr << "  .. " << line << std::endl; }

// -------------------------------------------------------------- accounting

Verdict check_params() {
  Verdict v{true, ""};
  double worst = 0;
  for (const auto& name : kAccountedPresets) {
    const double got = static_cast<double>(count_params(preset(name)).total) / 1e6;
    const double want = reference_figures(name)->params_m;
    const double rel = (got - want) / want;
    worst = std::max(worst, std::abs(rel));
    if (std::abs(rel) > kParamTol) {
      v.pass = false;
      v.detail += name + " " + fmt(got) + "M vs " + fmt(want, 1) + "M; ";
    }
  }
  v.detail += "worst |rel| " + fmt(100 * worst) + "% (tol " + fmt(100 * kParamTol, 0) + "%)";
  return v;
}

Verdict check_flops() {
  Verdict v{true, ""};
  double worst = 0;
  for (const auto& name : kAccountedPresets) {
    const double got = count_flops(preset(name)).gmacs_per_view_set();
    const double want = reference_figures(name)->gflops;
    const double rel = (got - want) / want;
    worst = std::max(worst, std::abs(rel));
    if (std::abs(rel) > kFlopTol) {
      v.pass = false;
      v.detail += name + " " + fmt(got, 1) + "G vs " + fmt(want, 1) + "G; ";
    }
  }
  v.detail += "worst |rel| " + fmt(100 * worst) + "% (tol " + fmt(100 * kFlopTol, 0) + "%)";
  return v;
}

// ------------------------------------------------------- delegated unit tests

Verdict run_unit_filter(const char* filter, int min_tests) {
  const std::string cmd = std::string("\"") + VTLAB_UNIT_TESTS + "\" --gtest_brief=1 --gtest_filter='" + filter + "' 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {false, "could not start the unit test binary"};
  std::string out;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  std::smatch m;
  int passed = 0, total = 0;
  if (std::regex_search(out, m, std::regex(R"(\[  PASSED  \] (\d+) test)"))) passed = std::stoi(m[1]);
  if (std::regex_search(out, m, std::regex(R"((\d+) tests? from \d+ test suites? ran)"))) total = std::stoi(m[1]);
  Verdict v;
  v.pass = status == 0 && passed == total && total >= min_tests;
  v.detail = std::to_string(passed) + "/" + std::to_string(total) + " tests passed (need >= " +
             std::to_string(min_tests) + ")";
  if (!v.pass) std::cerr << out;
  return v;
}

// ------------------------------------------------------------- training runs

Dataset spatial_videos() {
  GenSpec s;
  s.task = Task::Spatial;
  s.seed = 7;
  return generate(s);
}

Dataset image_set() {
  GenSpec s;
  s.task = Task::Image;
  s.geometry.t = 1;
  s.n_train = 2000;
  s.n_val = 500;
  s.seed = 101;
  return generate(s);
}

Dataset temporal_videos() {
  GenSpec s;
  s.task = Task::Temporal;
  s.classes = 8;
  s.n_train = 2000;
  s.n_val = 400;
  s.seed = 7;
  return generate(s);
}

using RecordMap = std::map<std::tuple<std::string, double, std::string>, std::vector<const RunRecord*>>;

RecordMap group(const std::vector<RunRecord>& records) {
  RecordMap g;
  for (const auto& r : records) g[{r.cell.preset, r.cell.fraction, r.cell.ablation}].push_back(&r);
  return g;
}

// Mean top-1 over seeds; NaN if any seed failed so comparisons fail.
double mean_top1(const RecordMap& g, const std::string& preset_name, double fraction, const std::string& ablation) {
  auto it = g.find({preset_name, fraction, ablation});
  if (it == g.end()) return std::nan("");
  std::vector<double> v;
  for (const RunRecord* r : it->second) {
    if (r->status != "ok") return std::nan("");
    v.push_back(r->metrics.top1());
  }
  return stats_of(v).mean;
}

RunOptions logging_options() {
  RunOptions o;
  o.progress = [](const RunRecord& r, std::size_t done, std::size_t total) {
    progress(r.cell.label() + " " + r.status + " top1 " + fmt(r.metrics.top1()) + " (" + std::to_string(done) + "/" +
             std::to_string(total) + ", " + fmt(r.metrics.wall_seconds, 0) + "s)" +
             (r.status == "ok" ? "" : " " + r.error));
  };
  return o;
}

// Toy-VST spatial matrix shared by the pretraining, shift and LLGG criteria.
// The LLGG arm runs separately because its time counts against the probe budget.
ExperimentMatrix spatial_matrix() {
  ExperimentMatrix m = ablation_matrix("toy_vst", {0.01, 0.05, 0.10}, kSeeds);
  std::erase_if(m.cells, [](const Cell& c) {
    if (c.ablation == "norelpos") return true;
    if (c.ablation == "nopretrain") return c.fraction != 0.01;
    if (c.ablation == "noshift") return c.fraction == 0.10;
    return false;
  });
  m.validate();
  return m;
}

ExperimentMatrix llgg_matrix() {
  ExperimentMatrix m = spatial_matrix();
  m.cells.clear();
  for (int s = 0; s < kSeeds; ++s) m.cells.push_back({"toy_vst_llgg", 0.10, "baseline", static_cast<std::uint64_t>(s)});
  m.validate();
  return m;
}

struct SpatialRun {
  std::vector<RunRecord> records;
  RecordMap groups;
  double minutes = 0;
};

const SpatialRun& spatial_run(const Dataset& videos, const Dataset& images) {
  static SpatialRun run = [&] {
    const auto t0 = std::chrono::steady_clock::now();
    SpatialRun r;
    r.records = run_matrix(spatial_matrix(), videos, &images, logging_options());
    r.groups = group(r.records);
    r.minutes = minutes_since(t0);
    return r;
  }();
  return run;
}

Verdict check_pretraining(const SpatialRun& run) {
  const double pre = mean_top1(run.groups, "toy_vst", 0.01, "baseline");
  const double rnd = mean_top1(run.groups, "toy_vst", 0.01, "nopretrain");
  // The matrix also holds the shift and 10% cells, so its time bounds this criterion's.
  return {pre - rnd >= kPretrainGain && run.minutes < kPretrainBudgetMin,
          "1% labels: inflated " + fmt(pre) + " vs random init " + fmt(rnd) + " (gain " + fmt(pre - rnd) + ", need >= " +
              fmt(kPretrainGain, 0) + "); matrix " + fmt(run.minutes, 1) + " min (budget " + fmt(kPretrainBudgetMin, 0) +
              ")"};
}

Verdict check_shift(const SpatialRun& run) {
  const double b5 = mean_top1(run.groups, "toy_vst", 0.05, "baseline");
  const double n5 = mean_top1(run.groups, "toy_vst", 0.05, "noshift");
  const double b1 = mean_top1(run.groups, "toy_vst", 0.01, "baseline");
  const double n1 = mean_top1(run.groups, "toy_vst", 0.01, "noshift");
  return {b5 >= n5 - kShiftSlack5 && b1 > n1, "5%: shift " + fmt(b5) + " vs noshift " + fmt(n5) + " (slack " +
                                                  fmt(kShiftSlack5, 0) + "); 1%: shift " + fmt(b1) + " vs noshift " +
                                                  fmt(n1) + " (strict)"};
}

// Minutes spent by the probe/temporal criterion; the LLGG runs share its budget.
double g_contrast_minutes = 0;

Verdict check_llgg(const SpatialRun& run, const Dataset& videos, const Dataset& images) {
  const ModelConfig base = preset("toy_vst");
  const ModelConfig l = preset("toy_vst_llgg");
  bool structural = l.stages.size() == base.stages.size() && l.stages.size() >= 2;
  for (std::size_t i = 0; structural && i < l.stages.size(); ++i) {
    const bool tail = i + 2 >= l.stages.size();
    structural = tail ? l.stages[i].kind == AttentionKind::Global : l.stages[i] == base.stages[i];
  }
  const auto t0 = std::chrono::steady_clock::now();
  const RecordMap llgg = group(run_matrix(llgg_matrix(), videos, &images, logging_options()));
  const double minutes = g_contrast_minutes + minutes_since(t0);
  const double a = mean_top1(run.groups, "toy_vst", 0.10, "baseline");
  const double b = mean_top1(llgg, "toy_vst_llgg", 0.10, "baseline");
  const bool within = std::abs(a - b) <= kLlggBand;
  return {structural && within && minutes < kProbeBudgetMin,
          std::string("last two stages global: ") + (structural ? "yes" : "no") + "; 10% labels: VST " + fmt(a) +
              " vs LLGG " + fmt(b) + " (band " + fmt(kLlggBand, 0) + "); with the probe criterion " + fmt(minutes, 1) +
              " min (budget " + fmt(kProbeBudgetMin, 0) + ")"};
}

Verdict check_probe_and_temporal(const Dataset& spatial) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset temporal = temporal_videos();
  const auto probe = [](const Dataset& d) {
    const auto tr = d.train_indices(), va = d.val_indices();
    return frame_linear_probe(d, tr, va);
  };
  const ProbeResult ps = probe(spatial), pt = probe(temporal);
  progress("probe spatial " + fmt(ps.val_accuracy) + " temporal " + fmt(pt.val_accuracy) + " chance " +
           fmt(pt.chance));

  // One shared from-scratch recipe for both models.
  ExperimentMatrix m = comparison_matrix({"toy_uniformer", "toy_vivit_st"}, {0.10}, kSeeds);
  m.use_pretraining = false;
  m.train.lr = 3e-4;
  m.train.augment_shift = 16;
  const auto records = run_matrix(m, temporal, nullptr, logging_options());
  const RecordMap g = group(records);
  const double uni = mean_top1(g, "toy_uniformer", 0.10, "baseline");
  const double vst = mean_top1(g, "toy_vivit_st", 0.10, "baseline");
  const double minutes = minutes_since(t0);
  g_contrast_minutes = minutes;

  const bool probe_ok = ps.val_accuracy > kProbeSpatialMin && pt.val_accuracy <= pt.chance + kProbeTemporalSlack;
  const bool order_ok = uni > vst;
  return {probe_ok && order_ok && minutes < kProbeBudgetMin,
          "probe spatial " + fmt(ps.val_accuracy) + " (> " + fmt(kProbeSpatialMin, 0) + "), temporal " +
              fmt(pt.val_accuracy) + " (<= chance " + fmt(pt.chance) + " + " + fmt(kProbeTemporalSlack, 0) +
              "); temporal 10%: Uniformer " + fmt(uni) + " vs ViViT-ST " + fmt(vst) + "; " + fmt(minutes, 1) +
              " min (budget " + fmt(kProbeBudgetMin, 0) + ")"};
}

Verdict check_determinism(const SpatialRun& run, const Dataset& videos, const Dataset& images) {
  const auto t0 = std::chrono::steady_clock::now();
  // Second, independent run of one full cell: image pretraining, inflation, fine-tuning.
  const Cell cell{"toy_vst", 0.01, "baseline", 0};
  ExperimentMatrix m = spatial_matrix();
  m.cells = {cell};
  const std::vector<RunRecord> again = run_matrix(m, videos, &images);
  const auto first = std::find_if(run.records.begin(), run.records.end(), [&](const RunRecord& r) { return r.cell == cell; });
  const bool same = first != run.records.end() && first->status == "ok" && again.size() == 1 &&
                    again[0].parameter_hash == first->parameter_hash &&
                    record_set_hash({*first}) == record_set_hash(again);

  bool nested = true;
  const DatasetManifest manifest = videos.manifest();
  for (std::uint64_t s = 0; s < kNestingSeeds; ++s) {
    std::vector<std::vector<std::int64_t>> splits;
    for (double f : {0.01, 0.05, 0.10}) {
      auto idx = sample_split(manifest, {f, s, true});
      std::sort(idx.begin(), idx.end());
      splits.push_back(std::move(idx));
    }
    for (std::size_t i = 0; i + 1 < splits.size(); ++i)
      nested = nested && std::includes(splits[i + 1].begin(), splits[i + 1].end(), splits[i].begin(), splits[i].end());
  }
  const double minutes = minutes_since(t0);
  return {same && nested && minutes < kDeterminismBudgetMin,
          std::string("rerun of ") + cell.label() + " hash " + (same ? "identical" : "DIFFERS") + "; 1%<=5%<=10% for " +
              std::to_string(kNestingSeeds) + " seeds: " + (nested ? "yes" : "no") + "; " + fmt(minutes, 1) +
              " min (budget " + fmt(kDeterminismBudgetMin, 0) + ")"};
}

std::set<int> parse_only(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: vtlab_acceptance [--only 1,2,...]\n";
      std::exit(2);
    }
  }
  if (only.empty())
    for (int c = 1; c <= 9; ++c) only.insert(c);
  return only;
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<int> only = parse_only(argc, argv);
  const bool need_spatial = only.contains(5) || only.contains(6) || only.contains(7) || only.contains(8) ||
                            only.contains(9);
  Dataset videos, images;
  if (need_spatial) {
    videos = spatial_videos();
    images = image_set();
  }
  const bool need_matrix = only.contains(5) || only.contains(6) || only.contains(8) || only.contains(9);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"parameter counts within 5%", check_params},
      {"per-view-set GMACs within 15%", check_flops},
      {"mechanism oracles", [] { return run_unit_filter(kOracleFilter, 6); }},
      {"gradient checks", [] { return run_unit_filter(kGradientFilter, 18); }},
      {"inflated init beats random at 1% labels", [&] { return check_pretraining(spatial_run(videos, images)); }},
      {"shifted windows help at low label counts", [&] { return check_shift(spatial_run(videos, images)); }},
      {"frame probe and temporal ordering", [&] { return check_probe_and_temporal(videos); }},
      {"LLGG structure and spatial parity", [&] { return check_llgg(spatial_run(videos, images), videos, images); }},
      {"determinism and split nesting", [&] { return check_determinism(spatial_run(videos, images), videos, images); }},
  };

  if (need_matrix) {
    const SpatialRun& run = spatial_run(videos, images);
    progress("spatial matrix: " + std::to_string(run.records.size()) + " cells in " + fmt(run.minutes, 1) + " min");
  }

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.contains(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
