#include "vtlab/harness/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <future>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "vtlab/errors.hpp"
#include "vtlab/models/accounting.hpp"
#include "vtlab/models/presets.hpp"

namespace vtlab {

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string fraction_str(double f) {
  std::ostringstream os;
  os << std::setprecision(6) << f;
  return os.str();
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

bool pretrains(const Cell& cell, const ExperimentMatrix& m) { return m.use_pretraining && cell.ablation != "nopretrain"; }

int worker_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("VTLAB_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("VTLAB_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

Cell cell_from_json(const nlohmann::json& j) {
  Cell c;
  c.preset = j.at("preset").get<std::string>();
  c.fraction = j.at("fraction").get<double>();
  c.ablation = j.at("ablation").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

nlohmann::json cell_json(const Cell& c) {
  return {{"preset", c.preset}, {"fraction", c.fraction}, {"ablation", c.ablation}, {"seed", c.seed}};
}

// Everything in a record that must be reproducible.
nlohmann::json stable_json(const RunRecord& r) {
  nlohmann::json j = to_json(r);
  j.erase("started");
  j.erase("finished");
  j["metrics"].erase("wall_seconds");
  j["metrics"].erase("pretrain_wall_seconds");
  return j;
}

}  // namespace

std::string Cell::label() const {
  return preset + "/" + fraction_str(fraction) + "/" + ablation + "/" + std::to_string(seed);
}

void ExperimentMatrix::validate() const {
  std::vector<std::string> errors;
  std::set<std::string> seen;
  const auto names = preset_names();
  const auto& arms = ablation_names();
  for (const auto& c : cells) {
    if (!seen.insert(c.label()).second) errors.push_back("duplicate cell " + c.label());
    if (std::find(names.begin(), names.end(), c.preset) == names.end()) errors.push_back("unknown preset " + c.preset);
    if (std::find(arms.begin(), arms.end(), c.ablation) == arms.end()) errors.push_back("unknown ablation " + c.ablation);
    if (!(c.fraction > 0 && c.fraction <= 1)) errors.push_back("fraction out of (0, 1] in " + c.label());
  }
  try {
    train.validate();
    pretrain.validate();
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
  if (errors.empty()) return;
  std::string msg = "invalid experiment matrix:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

nlohmann::json to_json(const ExperimentMatrix& m) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : m.cells) cells.push_back(cell_json(c));
  return {{"cells", cells},
          {"train", to_json(m.train)},
          {"pretrain", to_json(m.pretrain)},
          {"use_pretraining", m.use_pretraining},
          {"output", m.output}};
}

ExperimentMatrix matrix_from_json(const nlohmann::json& doc) {
  ExperimentMatrix m;
  try {
    for (const auto& c : doc.at("cells")) m.cells.push_back(cell_from_json(c));
    if (doc.contains("train")) m.train = train_config_from_json(doc.at("train"));
    if (doc.contains("pretrain")) m.pretrain = train_config_from_json(doc.at("pretrain"));
    m.use_pretraining = doc.value("use_pretraining", m.use_pretraining);
    m.output = doc.value("output", m.output);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment matrix: ") + e.what());
  }
  m.validate();
  return m;
}

namespace {

// Toy recipes: fine-tuning stays gentle so pretrained features survive tiny
// label sets; clipping keeps the short pretraining runs from diverging.
ExperimentMatrix with_default_recipes(ExperimentMatrix m) {
  m.pretrain.epochs = 15;
  m.pretrain.batch_size = 16;
  m.pretrain.lr = 1e-3;
  m.pretrain.clip_grad_norm = 1.0;
  m.train.epochs = 30;
  m.train.batch_size = 8;
  m.train.lr = 1e-4;
  m.train.clip_grad_norm = 1.0;
  return m;
}

}  // namespace

ExperimentMatrix ablation_matrix(const std::string& preset_name, const std::vector<double>& fractions, int seeds) {
  ExperimentMatrix m;
  for (const auto& arm : ablation_names())
    for (double f : fractions)
      for (int s = 0; s < seeds; ++s) m.cells.push_back({preset_name, f, arm, static_cast<std::uint64_t>(s)});
  m = with_default_recipes(std::move(m));
  m.validate();
  return m;
}

ExperimentMatrix comparison_matrix(const std::vector<std::string>& presets, const std::vector<double>& fractions,
                                   int seeds) {
  ExperimentMatrix m;
  for (const auto& p : presets)
    for (double f : fractions)
      for (int s = 0; s < seeds; ++s) m.cells.push_back({p, f, "baseline", static_cast<std::uint64_t>(s)});
  m = with_default_recipes(std::move(m));
  m.validate();
  return m;
}

std::vector<std::string> default_comparison_presets() {
  return {"toy_vst", "toy_uniformer", "toy_vivit_st", "toy_vivit_fe", "toy_mvit", "toy_vst_llgg", "toy_i3d", "toy_c2d"};
}

ModelConfig cell_config(const Cell& cell, int classes) {
  ModelConfig c = preset(cell.preset);
  if (cell.ablation == "noshift") c = without_shifted_window(c);
  else if (cell.ablation == "norelpos") c = without_relpos_bias(c);
  c.num_classes = classes;
  validate(c);
  return c;
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json metrics = to_json(r.metrics);
  return {{"cell", cell_json(r.cell)},
          {"cell_hash", r.cell_hash},
          {"config_hash", r.config_hash},
          {"dataset_hash", r.dataset_hash},
          {"status", r.status},
          {"error", r.error},
          {"metrics", metrics},
          {"parameter_hash", r.parameter_hash},
          {"params", r.params},
          {"gflops", r.gflops},
          {"started", r.started},
          {"finished", r.finished}};
}

RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  try {
    r.cell = cell_from_json(j.at("cell"));
    r.cell_hash = j.at("cell_hash").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.dataset_hash = j.at("dataset_hash").get<std::string>();
    r.status = j.at("status").get<std::string>();
    r.error = j.at("error").get<std::string>();
    r.metrics = metrics_from_json(j.at("metrics"));
    r.parameter_hash = j.at("parameter_hash").get<std::string>();
    r.params = j.at("params").get<std::int64_t>();
    r.gflops = j.at("gflops").get<double>();
    r.started = j.at("started").get<std::string>();
    r.finished = j.at("finished").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run record: ") + e.what());
  }
  return r;
}

std::string cell_hash(const Cell& cell, const ExperimentMatrix& m, const Dataset& video, const Dataset* images) {
  const ModelConfig cfg = cell_config(cell, video.classes());
  std::ostringstream os;
  os << canonical_string(cfg) << '|' << SplitSpec{cell.fraction, cell.seed, true}.key() << '|' << cell.ablation << '|'
     << cell.seed << '|' << video.content_hash() << '|' << to_json(m.train).dump();
  if (pretrains(cell, m)) {
    if (!images) throw ConfigError("cell " + cell.label() + " pretrains but no image dataset was given");
    os << '|' << images->content_hash() << '|' << to_json(m.pretrain).dump();
  }
  return hex64(fnv1a(os.str()));
}

std::string record_set_hash(const std::vector<RunRecord>& records) {
  std::vector<std::string> lines;
  for (const auto& r : records) lines.push_back(stable_json(r).dump());
  std::sort(lines.begin(), lines.end());
  std::uint64_t h = fnv1a("records");
  for (const auto& l : lines) h = fnv1a(l, h);
  return hex64(h);
}

std::vector<RunRecord> read_ledger(const std::string& path) {
  std::vector<RunRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    // A crash mid-write leaves at most one unparsable trailing line.
    if (j.is_discarded()) continue;
    out.push_back(record_from_json(j));
  }
  return out;
}

std::vector<RunRecord> run_matrix(const ExperimentMatrix& matrix, const Dataset& video, const Dataset* images,
                                  const RunOptions& options) {
  matrix.validate();
  const std::size_t total = matrix.cells.size();
  std::vector<std::string> hashes(total);
  for (std::size_t i = 0; i < total; ++i) hashes[i] = cell_hash(matrix.cells[i], matrix, video, images);

  std::map<std::string, RunRecord> done;
  if (!options.ledger.empty())
    for (auto& r : read_ledger(options.ledger))
      if (r.status == "ok") done[r.cell_hash] = std::move(r);

  std::vector<RunRecord> records(total);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < total; ++i) {
    auto it = done.find(hashes[i]);
    if (it != done.end()) records[i] = it->second;
    else todo.push_back(i);
  }

  // Pretrained weights are shared by every fraction of one (config, seed).
  std::mutex cache_mutex;
  std::map<std::string, std::shared_future<std::shared_ptr<PretrainResult>>> cache;
  const auto pretrained = [&](const ModelConfig& cfg, std::uint64_t seed) {
    const std::string key = hex64(config_hash(cfg)) + "/" + std::to_string(seed);
    std::promise<std::shared_ptr<PretrainResult>> promise;
    std::shared_future<std::shared_ptr<PretrainResult>> future;
    bool owner = false;
    {
      std::lock_guard lock(cache_mutex);
      auto it = cache.find(key);
      if (it == cache.end()) {
        future = promise.get_future().share();
        cache.emplace(key, future);
        owner = true;
      } else {
        future = it->second;
      }
    }
    if (owner) {
      try {
        TrainConfig pc = matrix.pretrain;
        pc.seed = seed;
        const auto tr = images->train_indices(), va = images->val_indices();
        promise.set_value(std::make_shared<PretrainResult>(pretrain_and_inflate(*images, tr, va, cfg, pc)));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return future.get();
  };

  const auto run_cell = [&](std::size_t i) {
    const Cell& cell = matrix.cells[i];
    RunRecord r;
    r.cell = cell;
    r.cell_hash = hashes[i];
    r.dataset_hash = video.content_hash();
    r.started = now_iso();
    try {
      const ModelConfig cfg = cell_config(cell, video.classes());
      r.config_hash = hex64(config_hash(cfg));
      r.params = count_params(cfg).total;
      r.gflops = count_flops(cfg).gmacs_per_view_set();
      TrainConfig tc = matrix.train;
      tc.seed = cell.seed;
      Model model = build_model(cfg, cell.seed, tc.precision);
      if (pretrains(cell, matrix)) {
        if (!images) throw ConfigError("cell " + cell.label() + " pretrains but no image dataset was given");
        load_params(model.params(), pretrained(cfg, cell.seed)->model.params());
      }
      const auto split = sample_split(video.manifest(), {cell.fraction, cell.seed, true});
      const auto val = video.val_indices();
      r.metrics = train(model, video, split, val, tc);
      r.parameter_hash = parameter_hash(model.params());
      r.status = "ok";
    } catch (const std::exception& e) {
      r.status = "failed";
      r.error = e.what();
    }
    r.finished = now_iso();
    return r;
  };

  // Workers hand finished records to this thread, the ledger's only writer.
  std::mutex queue_mutex;
  std::condition_variable ready;
  std::vector<std::pair<std::size_t, RunRecord>> finished;
  std::atomic<std::size_t> next{0};
  const int width = std::max(1, std::min<int>(worker_count(options.threads), static_cast<int>(todo.size())));
  std::vector<std::thread> workers;
  if (!todo.empty())
    for (int w = 0; w < width; ++w)
      workers.emplace_back([&] {
        for (std::size_t k = next++; k < todo.size(); k = next++) {
          RunRecord r = run_cell(todo[k]);
          std::lock_guard lock(queue_mutex);
          finished.emplace_back(todo[k], std::move(r));
          ready.notify_one();
        }
      });

  std::ofstream ledger;
  if (!options.ledger.empty()) {
    ledger.open(options.ledger, std::ios::app);
    if (!ledger) throw ConfigError("cannot open ledger '" + options.ledger + "'");
  }
  std::size_t written = 0, completed = total - todo.size();
  while (written < todo.size()) {
    std::vector<std::pair<std::size_t, RunRecord>> batch;
    {
      std::unique_lock lock(queue_mutex);
      ready.wait(lock, [&] { return !finished.empty(); });
      batch.swap(finished);
    }
    for (auto& [i, r] : batch) {
      if (ledger.is_open()) {
        ledger << to_json(r).dump() << '\n';
        ledger.flush();
      }
      ++written;
      ++completed;
      if (options.progress) options.progress(r, completed, total);
      records[i] = std::move(r);
    }
  }
  for (auto& t : workers) t.join();
  return records;
}

GroupStats stats_of(const std::vector<double>& values) {
  GroupStats s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double sq = 0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / (s.n - 1));
  }
  return s;
}

Report make_report(const std::vector<RunRecord>& records) {
  std::vector<const RunRecord*> ok;
  for (const auto& r : records)
    if (r.status == "ok") ok.push_back(&r);
  if (ok.empty()) throw ReportError("no completed records to report");
  for (const auto* r : ok)
    if (r->dataset_hash != ok.front()->dataset_hash)
      throw ReportError("records mix datasets " + ok.front()->dataset_hash + " and " + r->dataset_hash);

  std::sort(ok.begin(), ok.end(), [](const RunRecord* a, const RunRecord* b) {
    return std::tie(a->cell.preset, a->cell.ablation, a->cell.fraction, a->cell.seed) <
           std::tie(b->cell.preset, b->cell.ablation, b->cell.fraction, b->cell.seed);
  });

  Report rep;
  std::ostringstream csv;
  csv << "model,split,ablation,seed,top1,top5,params,flops\n";
  csv << std::setprecision(10);
  struct Key {
    std::string model, ablation;
    double fraction;
    bool operator<(const Key& o) const {
      return std::tie(model, ablation, fraction) < std::tie(o.model, o.ablation, o.fraction);
    }
  };
  std::map<Key, std::vector<const RunRecord*>> groups;
  for (const auto* r : ok) {
    csv << r->cell.preset << ',' << fraction_str(r->cell.fraction) << ',' << r->cell.ablation << ',' << r->cell.seed << ','
        << r->metrics.top1() << ',' << r->metrics.top5() << ',' << r->params << ',' << r->gflops << '\n';
    groups[{r->cell.preset, r->cell.ablation, r->cell.fraction}].push_back(r);
  }
  rep.csv = csv.str();

  nlohmann::json cells = nlohmann::json::array();
  std::map<std::string, std::ostringstream> plots;
  for (const auto& [key, rs] : groups) {
    std::vector<double> top1, top5;
    for (const auto* r : rs) {
      top1.push_back(r->metrics.top1());
      top5.push_back(r->metrics.top5());
    }
    const GroupStats s1 = stats_of(top1), s5 = stats_of(top5);
    cells.push_back({{"model", key.model},
                     {"ablation", key.ablation},
                     {"split", key.fraction},
                     {"seeds", s1.n},
                     {"top1_mean", s1.mean},
                     {"top1_std", s1.std},
                     {"top5_mean", s5.mean},
                     {"top5_std", s5.std},
                     {"params", rs.front()->params},
                     {"flops", rs.front()->gflops}});
    auto& plot = plots[key.model + "_" + key.ablation + ".dat"];
    if (plot.tellp() == 0) plot << "# fraction top1_mean top1_std\n";
    plot << std::setprecision(10) << key.fraction << ' ' << s1.mean << ' ' << s1.std << '\n';
  }
  rep.summary = {{"dataset_hash", ok.front()->dataset_hash},
                 {"records", ok.size()},
                 {"flops_convention", "GMACs per view set; one multiply-accumulate counted as one operation"},
                 {"std", "sample standard deviation over seeds"},
                 {"cells", cells}};
  for (auto& [name, os] : plots) rep.plots[name] = os.str();
  return rep;
}

}  // namespace vtlab
