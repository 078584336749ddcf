#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vtlab/data/dataset.hpp"
#include "vtlab/errors.hpp"
#include "vtlab/harness/harness.hpp"
#include "vtlab/models/accounting.hpp"
#include "vtlab/models/presets.hpp"
#include "vtlab/training/training.hpp"

namespace fs = std::filesystem;
using namespace vtlab;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

// Fields in the file override the defaults; unknown fields are rejected downstream.
nlohmann::json overlay(nlohmann::json base, const std::string& path) {
  if (path.empty()) return base;
  const nlohmann::json patch = read_json(path);
  if (!patch.is_object()) throw ConfigError("config '" + path + "' must be a JSON object");
  if (patch.contains("cells")) base.erase("cells");
  base.merge_patch(patch);
  return base;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

std::string signed_percent(double rel) {
  std::ostringstream os;
  os << std::showpos << std::fixed << std::setprecision(2) << 100.0 * rel << '%';
  return os.str();
}

std::vector<std::string> presets_or_full_scale(const std::vector<std::string>& chosen) {
  return chosen.empty() ? full_scale_preset_names() : chosen;
}

int cmd_params(const std::vector<std::string>& presets, bool table, bool json) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& name : presets_or_full_scale(presets)) {
    const ParamReport r = count_params(preset(name));
    const auto ref = reference_figures(name);
    if (json) {
      nlohmann::json j = to_json(r);
      if (ref) j["target_millions"] = ref->params_m, j["relative_error"] = r.millions() / ref->params_m - 1;
      out.push_back(j);
      continue;
    }
    std::cout << std::left << std::setw(16) << name << " params " << std::fixed << std::setprecision(2) << r.millions()
              << "M";
    if (ref)
      std::cout << "  target " << std::setprecision(1) << ref->params_m << "M  rel error "
                << signed_percent(r.millions() / ref->params_m - 1);
    std::cout << '\n';
    if (table) std::cout << format_table(r) << '\n';
  }
  if (json) std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_flops(const std::vector<std::string>& presets, bool table, bool json) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& name : presets_or_full_scale(presets)) {
    const FlopReport r = count_flops(preset(name));
    const auto ref = reference_figures(name);
    // Reference figures count one multiply-accumulate as one operation.
    const double g = r.gmacs_per_view_set();
    if (json) {
      nlohmann::json j = to_json(r);
      if (ref) j["target_g"] = ref->gflops, j["relative_error"] = g / ref->gflops - 1;
      out.push_back(j);
      continue;
    }
    std::cout << std::left << std::setw(16) << name << " flops " << std::fixed << std::setprecision(1) << g
              << "G (GMACs x " << r.views << " view" << (r.views == 1 ? "" : "s") << ")";
    if (ref) std::cout << "  target " << ref->gflops << "G  rel error " << signed_percent(g / ref->gflops - 1);
    std::cout << '\n';
    if (table) std::cout << format_table(r) << '\n';
  }
  if (json) std::cout << out.dump(2) << '\n';
  return 0;
}

struct GenOptions {
  std::string task = "spatial";
  std::int64_t n_train = 1000, n_val = 500;
  int classes = 0;
  std::int64_t frames = 8, size = 32;
  std::vector<double> splits{0.01, 0.05, 0.1};
  int split_seeds = 3;
};

int cmd_gen_data(const GenOptions& o, const std::string& config, std::uint64_t seed, bool seed_set,
                 const std::string& out) {
  GenSpec spec;
  spec.task = task_from_string(o.task);
  spec.n_train = o.n_train;
  spec.n_val = o.n_val;
  spec.classes = o.classes > 0 ? o.classes : max_classes(spec.task);
  spec.geometry = {spec.task == Task::Image ? 1 : o.frames, o.size, o.size, 3};
  spec.seed = seed;
  if (!config.empty()) {
    spec = gen_spec_from_json(overlay(to_json(spec), config));
    if (seed_set) spec.seed = seed;
  }
  const Dataset d = generate(spec);
  std::vector<SplitSpec> splits;
  for (double f : o.splits)
    for (int s = 0; s < o.split_seeds; ++s) splits.push_back({f, static_cast<std::uint64_t>(s), true});
  write_dataset(d, out, splits);
  std::cout << "wrote " << out << ": " << d.size() << " " << to_string(spec.task) << " clips, " << d.classes()
            << " classes, hash " << d.content_hash() << '\n';
  return 0;
}

int cmd_train(const std::string& name, const std::string& data, const std::string& images, double fraction,
              const std::string& config, std::uint64_t seed, const std::string& out) {
  const Dataset video = read_dataset(data);
  TrainConfig tc = train_config_from_json(overlay(to_json(TrainConfig{}), config));
  tc.seed = seed;
  tc.validate();
  ModelConfig cfg = preset(name);
  cfg.num_classes = video.classes();
  validate(cfg);
  Model model = build_model(cfg, seed, tc.precision);
  std::optional<Provenance> provenance;
  if (!images.empty()) {
    const Dataset im = read_dataset(images);
    const auto tr = im.train_indices(), va = im.val_indices();
    PretrainResult pre = pretrain_and_inflate(im, tr, va, cfg, tc);
    load_params(model.params(), pre.model.params());
    provenance = pre.provenance;
  }
  const auto split = sample_split(video.manifest(), {fraction, seed, true});
  const auto val = video.val_indices();
  const Metrics m = train(model, video, split, val, tc);
  if (!out.empty()) {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    save_checkpoint(out, model, m.steps, m, provenance ? &*provenance : nullptr);
  }
  nlohmann::json j = to_json(m);
  j["preset"] = name;
  j["fraction"] = fraction;
  j["train_clips"] = split.size();
  j["parameter_hash"] = parameter_hash(model.params());
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct MatrixOptions {
  std::string preset = "toy_vst";
  std::vector<std::string> presets;
  std::vector<double> splits{0.01, 0.05, 0.1};
  int seeds = 3;
  std::string data, images;
  bool dry_run = false;
};

void write_report(const Report& rep, const fs::path& dir) {
  write_text(dir / "results.csv", rep.csv);
  write_text(dir / "summary.json", rep.summary.dump(2) + "\n");
  for (const auto& [name, text] : rep.plots) write_text(dir / "plots" / name, text);
}

int run_and_report(ExperimentMatrix m, const MatrixOptions& o, const std::string& config, std::uint64_t seed,
                   const std::string& out) {
  for (auto& c : m.cells) c.seed += seed;
  m.output = out;
  m = matrix_from_json(overlay(to_json(m), config));
  if (o.dry_run) {
    std::cout << to_json(m).dump(2) << '\n' << m.cells.size() << " cells\n";
    return 0;
  }
  if (o.data.empty()) throw ConfigError("--data is required to run a matrix");
  const Dataset video = read_dataset(o.data);
  std::optional<Dataset> images;
  if (!o.images.empty()) images = read_dataset(o.images);
  const fs::path dir = m.output.empty() ? fs::path("runs") : fs::path(m.output);
  fs::create_directories(dir);
  RunOptions ro;
  ro.ledger = (dir / "ledger.jsonl").string();
  ro.progress = [](const RunRecord& r, std::size_t done, std::size_t total) {
    std::cerr << "[" << done << "/" << total << "] " << r.cell.label() << " " << r.status;
    if (r.status == "ok") std::cerr << " top1 " << r.metrics.top1();
    else std::cerr << ": " << r.error;
    std::cerr << '\n';
  };
  const auto records = run_matrix(m, video, images ? &*images : nullptr, ro);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.status != "ok";
  write_report(make_report(records), dir);
  std::cout << "wrote " << (dir / "results.csv").string() << " (" << records.size() - failed << " ok, " << failed
            << " failed, record set " << record_set_hash(records) << ")\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& ledgers, const std::string& out) {
  std::vector<RunRecord> records;
  for (const auto& path : ledgers) {
    if (!fs::exists(path)) throw ConfigError("ledger '" + path + "' does not exist");
    auto part = read_ledger(path);
    records.insert(records.end(), part.begin(), part.end());
  }
  // Later lines supersede earlier ones for the same cell.
  std::map<std::string, RunRecord> latest;
  for (auto& r : records) latest[r.cell_hash] = r;
  records.clear();
  for (auto& [hash, r] : latest) records.push_back(std::move(r));
  const Report rep = make_report(records);
  if (out.empty()) {
    std::cout << rep.csv;
  } else {
    write_report(rep, out);
    std::cout << "wrote " << (fs::path(out) / "results.csv").string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vtlab: toy-scale video transformer experiments"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config, out;
  std::uint64_t seed = 0;
  const auto common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", config, "JSON file overriding defaults")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Seed");
    if (with_out) sub->add_option("--out", out, "Output path");
  };

  std::vector<std::string> presets;
  bool table = false, json = false;
  auto* params = app.add_subcommand("params", "Analytic parameter counts against reference figures");
  auto* flops = app.add_subcommand("flops", "Analytic FLOPs (GMACs per view set) against reference figures");
  for (auto* sub : {params, flops}) {
    sub->add_option("--preset", presets, "Preset name(s); default every full-scale preset");
    sub->add_flag("--table", table, "Per-part breakdown");
    sub->add_flag("--json", json, "JSON output");
    common(sub, false);
  }

  GenOptions gen;
  auto* gen_data = app.add_subcommand("gen-data", "Generate a synthetic dataset file");
  gen_data->add_option("--task", gen.task, "spatial, temporal or image")->capture_default_str();
  gen_data->add_option("--n-train", gen.n_train, "Training clips")->capture_default_str();
  gen_data->add_option("--n-val", gen.n_val, "Validation clips")->capture_default_str();
  gen_data->add_option("--classes", gen.classes, "Class count; default the task maximum");
  gen_data->add_option("--frames", gen.frames, "Frames per clip")->capture_default_str();
  gen_data->add_option("--size", gen.size, "Frame height and width")->capture_default_str();
  gen_data->add_option("--splits", gen.splits, "Label fractions to store")->delimiter(',')->capture_default_str();
  gen_data->add_option("--split-seeds", gen.split_seeds, "Split seeds per fraction")->capture_default_str();
  common(gen_data, true);
  gen_data->get_option("--out")->required();

  std::string preset_name = "toy_vst", data, images;
  double fraction = 1.0;
  auto* train_cmd = app.add_subcommand("train", "Train one preset on a dataset file");
  train_cmd->add_option("--preset", preset_name, "Preset name")->capture_default_str();
  train_cmd->add_option("--data", data, "Video dataset file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--images", images, "Image dataset for pretraining and inflation")->check(CLI::ExistingFile);
  train_cmd->add_option("--fraction", fraction, "Label fraction of the training set")->capture_default_str();
  common(train_cmd, true);

  MatrixOptions mo;
  auto* ablate = app.add_subcommand("ablate", "Run the ablation matrix for one preset");
  auto* compare = app.add_subcommand("compare", "Run the architecture comparison matrix");
  ablate->add_option("--preset", mo.preset, "Preset name")->capture_default_str();
  compare->add_option("--presets", mo.presets, "Preset names; default the toy comparison set")->delimiter(',');
  for (auto* sub : {ablate, compare}) {
    sub->add_option("--splits", mo.splits, "Label fractions")->delimiter(',')->capture_default_str();
    sub->add_option("--seeds", mo.seeds, "Seeds per cell")->capture_default_str();
    sub->add_option("--data", mo.data, "Video dataset file")->check(CLI::ExistingFile);
    sub->add_option("--images", mo.images, "Image dataset for pretraining")->check(CLI::ExistingFile);
    sub->add_flag("--dry-run", mo.dry_run, "Print the matrix without running it");
    common(sub, true);
  }

  std::vector<std::string> ledgers;
  auto* report = app.add_subcommand("report", "Rebuild CSV, summary and plot data from ledgers");
  report->add_option("--ledger", ledgers, "Ledger file(s)")->required();
  common(report, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const bool seed_set = [&] {
      for (auto* sub : app.get_subcommands())
        if (sub->get_option_no_throw("--seed") && sub->count("--seed") > 0) return true;
      return false;
    }();
    if (params->parsed()) return cmd_params(presets, table, json);
    if (flops->parsed()) return cmd_flops(presets, table, json);
    if (gen_data->parsed()) return cmd_gen_data(gen, config, seed, seed_set, out);
    if (train_cmd->parsed()) return cmd_train(preset_name, data, images, fraction, config, seed, out);
    if (mo.seeds < 1) throw ConfigError("--seeds must be at least 1");
    if (ablate->parsed()) return run_and_report(ablation_matrix(mo.preset, mo.splits, mo.seeds), mo, config, seed, out);
    if (compare->parsed()) {
      const auto names = mo.presets.empty() ? default_comparison_presets() : mo.presets;
      return run_and_report(comparison_matrix(names, mo.splits, mo.seeds), mo, config, seed, out);
    }
    if (report->parsed()) return cmd_report(ledgers, out);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
