#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "vtlab/errors.hpp"
#include "vtlab/harness/harness.hpp"
#include "vtlab/models/accounting.hpp"
#include "vtlab/models/model.hpp"
#include "vtlab/models/presets.hpp"

using namespace vtlab;

namespace {

const Dataset& video() {
  static const Dataset d = [] {
    GenSpec s;
    s.n_train = 40;
    s.n_val = 20;
    s.seed = 9;
    return generate(s);
  }();
  return d;
}

const Dataset& odd_video() {
  static const Dataset d = [] {
    GenSpec s;
    s.n_train = 20;
    s.n_val = 10;
    s.seed = 9;
    s.geometry.t = 3;
    return generate(s);
  }();
  return d;
}

ExperimentMatrix linear_matrix() {
  ExperimentMatrix m;
  for (double f : {0.5, 1.0})
    for (std::uint64_t s : {0, 1}) m.cells.push_back({"toy_linear", f, "baseline", s});
  m.train.epochs = 1;
  m.train.batch_size = 8;
  m.use_pretraining = false;
  return m;
}

std::string fresh_path(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("vtlab_harness_" + name);
  std::filesystem::remove(p);
  return p.string();
}

std::size_t line_count(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

RunRecord record(const std::string& preset, double fraction, std::uint64_t seed, double top1,
                 const std::string& dataset = "d0") {
  RunRecord r;
  r.cell = {preset, fraction, "baseline", seed};
  r.cell_hash = preset + std::to_string(seed) + std::to_string(fraction);
  r.config_hash = "c";
  r.dataset_hash = dataset;
  r.status = "ok";
  r.metrics.topk = {{1, top1}, {5, 100.0}};
  r.params = 10;
  r.gflops = 0.5;
  return r;
}

}  // namespace

TEST(ExperimentMatrix, AblationMatrixHasEveryArmFractionAndSeed) {
  const ExperimentMatrix m = ablation_matrix("toy_vst", {0.01, 0.05, 0.1}, 3);
  EXPECT_EQ(m.cells.size(), 36u);
  std::set<std::string> labels;
  for (const auto& c : m.cells) labels.insert(c.label());
  EXPECT_EQ(labels.size(), 36u);
  std::set<std::string> arms;
  for (const auto& c : m.cells) arms.insert(c.ablation);
  EXPECT_EQ(arms, (std::set<std::string>{"baseline", "noshift", "norelpos", "nopretrain"}));
}

TEST(ExperimentMatrix, ValidationRejectsBadCells) {
  ExperimentMatrix m = linear_matrix();
  m.cells.push_back(m.cells.front());
  EXPECT_THROW(m.validate(), ConfigError);
  m = linear_matrix();
  m.cells.push_back({"toy_nothing", 1.0, "baseline", 0});
  EXPECT_THROW(m.validate(), ConfigError);
  m = linear_matrix();
  m.cells.push_back({"toy_linear", 1.0, "nohead", 0});
  EXPECT_THROW(m.validate(), ConfigError);
  m = linear_matrix();
  m.cells.push_back({"toy_linear", 1.5, "baseline", 0});
  EXPECT_THROW(m.validate(), ConfigError);
  m = linear_matrix();
  m.train.batch_size = 0;
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(ExperimentMatrix, JsonRoundTrip) {
  const ExperimentMatrix m = ablation_matrix("toy_vst", {0.01, 1.0}, 2);
  const ExperimentMatrix back = matrix_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.cells, m.cells);
  EXPECT_EQ(to_json(back), to_json(m));
  EXPECT_THROW(matrix_from_json(nlohmann::json::parse(R"({"cells": [{"preset": 3}]})")), ConfigError);
}

TEST(CellConfig, AppliesAblationAndClassCount) {
  const ModelConfig base = cell_config({"toy_vst", 1.0, "baseline", 0}, 7);
  EXPECT_EQ(base.num_classes, 7);
  EXPECT_EQ(count_params(base).total, count_params(cell_config({"toy_vst", 1.0, "nopretrain", 0}, 7)).total);

  const ModelConfig noshift = cell_config({"toy_vst", 1.0, "noshift", 0}, 7);
  for (const auto& s : noshift.stages) EXPECT_NE(s.kind, AttentionKind::ShiftedLocalWindow);

  // Dropping the bias tables removes exactly their parameters.
  const ModelConfig norel = cell_config({"toy_vst", 1.0, "norelpos", 0}, 7);
  EXPECT_FALSE(norel.use_relpos_bias);
  EXPECT_LT(count_params(norel).total, count_params(base).total);
}

TEST(CellHash, DependsOnEveryInput) {
  const ExperimentMatrix m = linear_matrix();
  const Cell c = m.cells.front();
  const std::string h = cell_hash(c, m, video(), nullptr);
  EXPECT_EQ(h, cell_hash(c, m, video(), nullptr));
  Cell other = c;
  other.seed = 5;
  EXPECT_NE(cell_hash(other, m, video(), nullptr), h);
  other = c;
  other.fraction = 0.25;
  EXPECT_NE(cell_hash(other, m, video(), nullptr), h);
  EXPECT_NE(cell_hash(c, m, odd_video(), nullptr), h);
  ExperimentMatrix slower = m;
  slower.train.lr *= 2;
  EXPECT_NE(cell_hash(c, slower, video(), nullptr), h);

  ExperimentMatrix pretraining = m;
  pretraining.use_pretraining = true;
  EXPECT_THROW(cell_hash(c, pretraining, video(), nullptr), ConfigError);
}

TEST(RunMatrix, ResumeFromLedgerTrainsNothing) {
  const std::string ledger = fresh_path("resume.jsonl");
  const ExperimentMatrix m = linear_matrix();
  int trained = 0;
  RunOptions opt{ledger, 1, [&](const RunRecord&, std::size_t, std::size_t) { ++trained; }};
  const auto first = run_matrix(m, video(), nullptr, opt);
  EXPECT_EQ(trained, 4);
  EXPECT_EQ(line_count(ledger), 4u);
  for (const auto& r : first) EXPECT_EQ(r.status, "ok") << r.error;

  // A crash mid-write leaves a torn trailing line.
  {
    std::ofstream out(ledger, std::ios::app);
    out << R"({"cell": {"preset": "toy_lin)";
  }
  EXPECT_EQ(read_ledger(ledger).size(), 4u);

  trained = 0;
  const auto second = run_matrix(m, video(), nullptr, opt);
  EXPECT_EQ(trained, 0);
  EXPECT_EQ(record_set_hash(second), record_set_hash(first));
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(second[i].cell, m.cells[i]);
}

TEST(RunMatrix, FailedCellIsRecordedAndOthersContinue) {
  const std::string ledger = fresh_path("failed.jsonl");
  // Images at the wrong frame size: only the cell that pretrains fails.
  GenSpec is;
  is.task = Task::Image;
  is.geometry = {1, 16, 16, 3};
  is.n_train = 20;
  is.n_val = 0;
  const Dataset images = generate(is);
  ExperimentMatrix m = linear_matrix();
  m.use_pretraining = true;
  for (auto& c : m.cells) c.ablation = "nopretrain";
  m.cells.push_back({"toy_linear", 1.0, "baseline", 0});
  const auto records = run_matrix(m, video(), &images, {ledger, 1, {}});
  ASSERT_EQ(records.size(), 5u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(records[i].status, "ok") << records[i].error;
  EXPECT_EQ(records[4].status, "failed");
  EXPECT_NE(records[4].error.find("16"), std::string::npos) << records[4].error;
  EXPECT_EQ(read_ledger(ledger).size(), 5u);

  // Failed cells are retried on resume; finished ones are not.
  int trained = 0;
  run_matrix(m, video(), &images, {ledger, 1, [&](const RunRecord&, std::size_t, std::size_t) { ++trained; }});
  EXPECT_EQ(trained, 1);
}

TEST(RunMatrix, SameInputsGiveSameRecords) {
  const ExperimentMatrix m = linear_matrix();
  const auto a = run_matrix(m, video(), nullptr, {});
  const auto b = run_matrix(m, video(), nullptr, {});
  EXPECT_EQ(record_set_hash(a), record_set_hash(b));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].parameter_hash, b[i].parameter_hash);
}

TEST(RunMatrix, WorkerCountDoesNotChangeResults) {
  const ExperimentMatrix m = linear_matrix();
  const auto one = run_matrix(m, video(), nullptr, {"", 1, {}});
  const auto three = run_matrix(m, video(), nullptr, {"", 3, {}});
  ASSERT_EQ(one.size(), three.size());
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i].cell, three[i].cell);
  EXPECT_EQ(record_set_hash(one), record_set_hash(three));
}

TEST(RunMatrix, PretrainedCellsShareOnePretrainingPerSeed) {
  GenSpec is;
  is.task = Task::Image;
  is.geometry.t = 1;
  is.n_train = 20;
  is.n_val = 10;
  const Dataset images = generate(is);
  ExperimentMatrix m = linear_matrix();
  m.use_pretraining = true;
  m.pretrain.epochs = 1;
  const auto records = run_matrix(m, video(), &images, {});
  for (const auto& r : records) EXPECT_EQ(r.status, "ok") << r.error;
  m.use_pretraining = false;
  EXPECT_NE(cell_hash(m.cells[0], m, video(), nullptr), records[0].cell_hash);
}

TEST(RecordSetHash, IgnoresTimestampsAndOrder) {
  std::vector<RunRecord> a{record("toy_vst", 0.1, 0, 50), record("toy_vst", 0.1, 1, 60)};
  std::vector<RunRecord> b{a[1], a[0]};
  b[0].started = "2001-01-01T00:00:00Z";
  b[1].metrics.wall_seconds = 99;
  EXPECT_EQ(record_set_hash(a), record_set_hash(b));
  b[1].metrics.topk[1] = 51;
  EXPECT_NE(record_set_hash(a), record_set_hash(b));
}

TEST(Stats, SampleStandardDeviation) {
  const GroupStats s = stats_of({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_EQ(stats_of({7}).std, 0.0);
  EXPECT_EQ(stats_of({}).n, 0);
}

TEST(Report, CsvRowsSummaryAndPlots) {
  std::vector<RunRecord> rs{record("toy_vst", 0.1, 0, 40), record("toy_vst", 0.1, 1, 40),
                            record("toy_vst", 0.01, 0, 20), record("toy_c2d", 0.1, 0, 30)};
  rs.push_back(record("toy_c2d", 0.1, 1, 0));
  rs.back().status = "failed";
  const Report rep = make_report(rs);

  std::istringstream csv(rep.csv);
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "model,split,ablation,seed,top1,top5,params,flops");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4);

  bool found = false;
  for (const auto& cell : rep.summary.at("cells")) {
    if (cell.at("model") == "toy_vst" && cell.at("split").get<double>() == 0.1) {
      found = true;
      EXPECT_EQ(cell.at("seeds").get<int>(), 2);
      EXPECT_DOUBLE_EQ(cell.at("top1_mean").get<double>(), 40.0);
      EXPECT_DOUBLE_EQ(cell.at("top1_std").get<double>(), 0.0);
    }
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(rep.plots.count("toy_vst_baseline.dat"), 1u);
  EXPECT_EQ(rep.plots.count("toy_c2d_baseline.dat"), 1u);

  const Report again = make_report(rs);
  EXPECT_EQ(again.csv, rep.csv);
  EXPECT_EQ(again.summary, rep.summary);
  EXPECT_EQ(again.plots, rep.plots);
}

TEST(Report, RejectsEmptyAndMixedDatasets) {
  EXPECT_THROW(make_report({}), ReportError);
  RunRecord failed = record("toy_vst", 0.1, 0, 10);
  failed.status = "failed";
  EXPECT_THROW(make_report({failed}), ReportError);
  EXPECT_THROW(make_report({record("toy_vst", 0.1, 0, 10, "d0"), record("toy_vst", 0.1, 1, 10, "d1")}), ReportError);
}
