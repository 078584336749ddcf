#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vtlab/data/dataset.hpp"
#include "vtlab/errors.hpp"
#include "vtlab/models/presets.hpp"
#include "vtlab/tensor/rng.hpp"
#include "vtlab/training/training.hpp"

using namespace vtlab;

namespace {

const Dataset& spatial() {
  static const Dataset d = [] {
    GenSpec s;
    s.n_train = 40;
    s.n_val = 20;
    s.seed = 5;
    return generate(s);
  }();
  return d;
}

TrainConfig quick(int epochs = 1) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.lr = 1e-3;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vtlab_test_" + name)).string();
}

// Rank of each label by sorting class indices on (logit desc, index asc).
double sorted_topk(const std::vector<double>& v, std::int64_t classes, const std::vector<int>& labels, int k) {
  int hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    std::vector<int> order(static_cast<std::size_t>(classes));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return v[b * classes + i] > v[b * classes + j]; });
    hits += std::find(order.begin(), order.begin() + k, labels[b]) != order.begin() + k;
  }
  return 100.0 * hits / static_cast<double>(labels.size());
}

}  // namespace

TEST(Schedule, WarmupThenCosineToZero) {
  TrainConfig c;
  c.lr = 0.5;
  c.warmup_fraction = 0.1;
  const std::int64_t total = 200;
  EXPECT_LE(learning_rate(c, 0, total), c.lr / 20);
  for (std::int64_t s = 1; s < 20; ++s) EXPECT_GT(learning_rate(c, s, total), learning_rate(c, s - 1, total));
  EXPECT_DOUBLE_EQ(learning_rate(c, 20, total), c.lr);
  for (std::int64_t s = 21; s < total; ++s) EXPECT_LE(learning_rate(c, s, total), learning_rate(c, s - 1, total));
  EXPECT_LE(learning_rate(c, total - 1, total), 0.01 * c.lr);
  c.warmup_fraction = 0;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0, total), c.lr);
  EXPECT_NEAR(learning_rate(c, (total - 1) / 2, total), c.lr * 0.5 * (1 + std::cos(M_PI * 99.0 / 199.0)), 1e-15);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  c.seed = 9;
  c.precision = Dtype::F64;
  c.augment_shift = 2;
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
  TrainConfig bad;
  bad.lr = -1;
  bad.warmup_fraction = 1.0;
  try {
    bad.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("warmup_fraction"), std::string::npos);
  }
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"epochz", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"precision", "f16"}}), ConfigError);
}

TEST(TopK, MatchesSortingOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const std::int64_t n = 50, classes = 7;
    std::vector<double> v(static_cast<std::size_t>(n * classes));
    // Coarse values force ties.
    for (double& x : v) x = static_cast<double>(rng.below(4));
    std::vector<int> labels;
    for (std::int64_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(classes)));
    const Tensor logits = Tensor::from_values({n, classes}, v);
    for (int k = 1; k <= classes; ++k)
      EXPECT_DOUBLE_EQ(topk_accuracy(logits, labels, k), sorted_topk(v, classes, labels, k)) << k;
    EXPECT_DOUBLE_EQ(topk_accuracy(logits, labels, static_cast<int>(classes)), 100.0);
  }
}

TEST(Evaluate, ConstantPredictorScoresClassFrequency) {
  Model m = build_model(preset("toy_linear"), 0, Dtype::F32);
  for (auto& [name, t] : m.params().entries()) const_cast<Tensor&>(t).buffer().fill(0.0);
  // Labels are index mod 10: five of class 0, two of class 3, one of class 1.
  const std::vector<std::int64_t> idx{0, 10, 20, 30, 40, 3, 13, 1};
  const Metrics r = evaluate(m, spatial(), idx, {1, 2, 10});
  EXPECT_DOUBLE_EQ(r.topk.at(1), 100.0 * 5 / 8);
  EXPECT_DOUBLE_EQ(r.topk.at(2), 100.0 * 6 / 8);
  EXPECT_DOUBLE_EQ(r.topk.at(10), 100.0);
  EXPECT_THROW(evaluate(m, spatial(), idx, {11}), ConfigError);
}

TEST(Evaluate, RandomInitIsNearChance) {
  GenSpec s;
  s.n_train = 10;
  s.n_val = 500;
  s.seed = 11;
  const Dataset d = generate(s);
  const auto val = d.val_indices();
  for (std::uint64_t seed : {0, 1}) {
    const Metrics r = evaluate(build_model(preset("toy_vst"), seed, Dtype::F32), d, val);
    EXPECT_NEAR(r.top1(), 10.0, 5.0) << seed;
    EXPECT_GE(r.top5(), r.top1());
  }
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  Model m = build_model(preset("toy_vst"), 1, Dtype::F32);
  const std::string before = parameter_hash(m.params());
  TrainConfig c = quick();
  c.lr = 0;
  const auto tr = spatial().train_indices();
  const auto va = spatial().val_indices();
  const Metrics r = train(m, spatial(), std::span(tr).first(16), va, c);
  EXPECT_EQ(parameter_hash(m.params()), before);
  EXPECT_EQ(r.evaluated, 20);
  EXPECT_GE(r.top5(), r.top1());
}

TEST(Train, OneEpochSmoke) {
  for (const char* name : {"toy_vst", "toy_uniformer", "toy_c2d"}) {
    Model m = build_model(preset(name), 2, Dtype::F32);
    const std::string before = parameter_hash(m.params());
    const auto tr = spatial().train_indices();
    const Metrics r = train(m, spatial(), std::span(tr).first(16), {}, quick());
    ASSERT_EQ(r.epoch_losses.size(), 1u) << name;
    EXPECT_TRUE(std::isfinite(r.epoch_losses[0])) << name;
    EXPECT_EQ(r.steps, 2);
    EXPECT_NE(parameter_hash(m.params()), before) << name;
  }
}

TEST(Train, LossDecreasesOnTinySet) {
  Model m = build_model(preset("toy_linear"), 0, Dtype::F32);
  const auto tr = spatial().train_indices();
  TrainConfig c = quick(15);
  c.lr = 3e-3;
  const Metrics r = train(m, spatial(), tr, tr, c);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
}

TEST(Train, BitDeterministicUnderFixedSeed) {
  const auto tr = spatial().train_indices();
  TrainConfig c = quick(2);
  c.augment_flip = true;
  c.augment_shift = 2;
  std::string first;
  for (int run = 0; run < 2; ++run) {
    Model m = build_model(preset("toy_vst"), 3, Dtype::F32);
    const Metrics r = train(m, spatial(), std::span(tr).first(16), {}, c);
    if (run == 0) first = parameter_hash(m.params());
    else EXPECT_EQ(parameter_hash(m.params()), first);
  }
  c.seed = 1;
  Model other = build_model(preset("toy_vst"), 3, Dtype::F32);
  train(other, spatial(), std::span(tr).first(16), {}, c);
  EXPECT_NE(parameter_hash(other.params()), first);
}

TEST(Train, DivergenceReportsStepAndLearningRate) {
  Model m = build_model(preset("toy_linear"), 0, Dtype::F32);
  TrainConfig c = quick(3);
  c.lr = 1e30;
  c.warmup_fraction = 0;
  const auto tr = spatial().train_indices();
  try {
    train(m, spatial(), tr, {}, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("lr="), std::string::npos);
  }
}

TEST(Train, RejectsMismatchedGeometry) {
  ModelConfig c = preset("toy_linear");
  c.input_size = {4, 32, 32};
  Model m = build_model(c, 0, Dtype::F32);
  const auto tr = spatial().train_indices();
  EXPECT_THROW(train(m, spatial(), tr, {}, quick()), ConfigError);
  ModelConfig classes = preset("toy_linear");
  classes.num_classes = 8;
  Model m2 = build_model(classes, 0, Dtype::F32);
  EXPECT_THROW(evaluate(m2, spatial(), tr), ConfigError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Model m = build_model(preset("toy_vst"), 4, Dtype::F32);
  Metrics metrics;
  metrics.epoch_losses = {2.3, 1.9};
  metrics.topk = {{1, 40.0}, {5, 90.0}};
  metrics.steps = 10;
  Provenance p;
  p.image_config = "toy_vst_2d";
  p.image_config_hash = "abc";
  p.image_dataset_hash = "def";
  p.inflation = {{"embed.weight", "temporal_mean"}};
  const std::string path = temp_path("ckpt.vtck");
  save_checkpoint(path, m, 10, metrics, &p);
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.config, m.config());
  EXPECT_EQ(ck.step, 10);
  EXPECT_EQ(ck.metrics, metrics);
  ASSERT_TRUE(ck.provenance.has_value());
  EXPECT_EQ(*ck.provenance, p);
  EXPECT_EQ(parameter_hash(model_from_checkpoint(ck).params()), parameter_hash(m.params()));

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  bytes[bytes.size() / 2] ^= 1;
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::filesystem::resize_file(path, 12);
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}

TEST(PretrainAndInflate, ProducesVideoModelWithProvenance) {
  GenSpec s;
  s.task = Task::Image;
  s.geometry.t = 1;
  s.n_train = 32;
  s.n_val = 10;
  const Dataset images = generate(s);
  const auto tr = images.train_indices(), va = images.val_indices();
  const ModelConfig video = preset("toy_vst");
  PretrainResult r = pretrain_and_inflate(images, tr, va, video, quick());
  EXPECT_EQ(r.model.config(), video);
  EXPECT_EQ(r.provenance.image_config, "toy_vst_2d");
  EXPECT_EQ(r.provenance.image_dataset_hash, images.content_hash());
  EXPECT_EQ(r.provenance.inflation.size(), r.model.params().size());
  EXPECT_EQ(r.provenance.pretrain.evaluated, 10);
  EXPECT_EQ(provenance_from_json(to_json(r.provenance)), r.provenance);

  // Video datasets are not valid pretraining input.
  EXPECT_THROW(pretrain_and_inflate(spatial(), tr, va, video, quick()), ConfigError);
}
