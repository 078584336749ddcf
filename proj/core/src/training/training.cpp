#include "vtlab/training/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vtlab/errors.hpp"
#include "vtlab/tensor/ops.hpp"
#include "vtlab/tensor/optim.hpp"
#include "vtlab/tensor/rng.hpp"

namespace vtlab {

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

void check_input(const Model& model, const Dataset& ds) {
  const ModelConfig& c = model.config();
  const ClipGeometry& g = ds.geometry();
  if (c.input_size != Extent3{g.t, g.h, g.w} || c.in_channels != g.c)
    throw ConfigError(c.name + " expects " + c.input_size.str() + "x" + std::to_string(c.in_channels) +
                      " clips, dataset has (" + std::to_string(g.t) + "," + std::to_string(g.h) + "," +
                      std::to_string(g.w) + ")x" + std::to_string(g.c));
  if (c.num_classes != ds.classes())
    throw ConfigError(c.name + " has " + std::to_string(c.num_classes) + " classes, dataset has " +
                      std::to_string(ds.classes()));
}

// Flip and cyclic shift of each clip, drawn from a per-step generator.
template <class T>
void augment(std::span<T> data, const ClipGeometry& g, std::int64_t batch, bool flip, std::int64_t shift, Rng& rng) {
  std::vector<T> tmp(static_cast<std::size_t>(g.numel()));
  for (std::int64_t b = 0; b < batch; ++b) {
    const bool f = flip && rng.below(2) == 1;
    std::int64_t dx = 0, dy = 0;
    if (shift > 0) {
      dx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(2 * shift + 1))) - shift;
      dy = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(2 * shift + 1))) - shift;
    }
    if (!f && dx == 0 && dy == 0) continue;
    T* clip = data.data() + b * g.numel();
    for (std::int64_t t = 0; t < g.t; ++t)
      for (std::int64_t y = 0; y < g.h; ++y)
        for (std::int64_t x = 0; x < g.w; ++x) {
          std::int64_t sx = ((x - dx) % g.w + g.w) % g.w;
          const std::int64_t sy = ((y - dy) % g.h + g.h) % g.h;
          if (f) sx = g.w - 1 - sx;
          for (std::int64_t c = 0; c < g.c; ++c)
            tmp[((t * g.h + y) * g.w + x) * g.c + c] = clip[((t * g.h + sy) * g.w + sx) * g.c + c];
        }
    std::copy(tmp.begin(), tmp.end(), clip);
  }
}

std::int64_t topk_hits(const std::vector<double>& v, std::int64_t classes, std::span<const int> labels, int k) {
  std::int64_t hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const int y = labels[b];
    const double* row = v.data() + b * classes;
    std::int64_t rank = 0;
    for (std::int64_t j = 0; j < classes; ++j)
      if (row[j] > row[y] || (row[j] == row[y] && j < y)) ++rank;
    hits += rank < k;
  }
  return hits;
}

}  // namespace

double topk_accuracy(const Tensor& logits, std::span<const int> labels, int k) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size()))
    throw DimensionError("topk_accuracy: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= logits.dim(1)) throw IndexError("label " + std::to_string(y) + " outside logits");
  if (labels.empty()) return 0.0;
  return 100.0 * static_cast<double>(topk_hits(logits.values(), logits.dim(1), labels, k)) /
         static_cast<double>(labels.size());
}

void TrainConfig::validate() const {
  std::vector<std::string> errors;
  if (epochs < 0) errors.push_back("epochs must be >= 0");
  if (batch_size < 1) errors.push_back("batch_size must be >= 1");
  if (!(lr >= 0) || !std::isfinite(lr)) errors.push_back("lr must be finite and >= 0");
  if (!(beta1 >= 0 && beta1 < 1)) errors.push_back("beta1 must be in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) errors.push_back("beta2 must be in [0, 1)");
  if (!(weight_decay >= 0)) errors.push_back("weight_decay must be >= 0");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) errors.push_back("warmup_fraction must be in [0, 1)");
  if (augment_shift < 0) errors.push_back("augment_shift must be >= 0");
  if (!(clip_grad_norm >= 0)) errors.push_back("clip_grad_norm must be >= 0");
  if (errors.empty()) return;
  std::string msg = "invalid train config:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"warmup_fraction", c.warmup_fraction},
          {"seed", c.seed},
          {"precision", std::string(dtype_name(c.precision))},
          {"augment_flip", c.augment_flip},
          {"augment_shift", c.augment_shift},
          {"clip_grad_norm", c.clip_grad_norm}};
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
  TrainConfig c;
  static const char* known[] = {"epochs", "batch_size",    "lr",           "beta1",         "beta2",         "weight_decay",
                                "warmup_fraction", "seed", "precision", "augment_flip", "augment_shift", "clip_grad_norm"};
  if (!doc.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, value] : doc.items())
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw ConfigError("train config: unknown field '" + key + "'");
  try {
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.lr = doc.value("lr", c.lr);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.weight_decay = doc.value("weight_decay", c.weight_decay);
    c.warmup_fraction = doc.value("warmup_fraction", c.warmup_fraction);
    c.seed = doc.value("seed", c.seed);
    const std::string p = doc.value("precision", std::string(dtype_name(c.precision)));
    if (p == "f32") c.precision = Dtype::F32;
    else if (p == "f64") c.precision = Dtype::F64;
    else throw ConfigError("train config: precision must be f32 or f64, got '" + p + "'");
    c.augment_flip = doc.value("augment_flip", c.augment_flip);
    c.augment_shift = doc.value("augment_shift", c.augment_shift);
    c.clip_grad_norm = doc.value("clip_grad_norm", c.clip_grad_norm);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double learning_rate(const TrainConfig& c, std::int64_t step, std::int64_t total) {
  if (total <= 0) return 0.0;
  const auto warmup = static_cast<std::int64_t>(std::floor(c.warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return c.lr * static_cast<double>(step + 1) / static_cast<double>(warmup + 1);
  const std::int64_t span = total - warmup - 1;
  if (span <= 0) return step >= total - 1 && total > 1 ? 0.0 : c.lr;
  const double p = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

double Metrics::top1() const {
  auto it = topk.find(1);
  return it == topk.end() ? 0.0 : it->second;
}

double Metrics::top5() const {
  auto it = topk.find(5);
  return it == topk.end() ? 0.0 : it->second;
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json topk = nlohmann::json::object();
  for (const auto& [k, v] : m.topk) topk[std::to_string(k)] = v;
  return {{"epoch_losses", m.epoch_losses}, {"topk", topk},          {"top1", m.top1()},
          {"top5", m.top5()},               {"evaluated", m.evaluated}, {"steps", m.steps},
          {"wall_seconds", m.wall_seconds}};
}

Metrics metrics_from_json(const nlohmann::json& doc) {
  Metrics m;
  try {
    m.epoch_losses = doc.at("epoch_losses").get<std::vector<double>>();
    for (const auto& [k, v] : doc.at("topk").items()) m.topk[std::stoi(k)] = v.get<double>();
    m.evaluated = doc.at("evaluated").get<std::int64_t>();
    m.steps = doc.at("steps").get<std::int64_t>();
    m.wall_seconds = doc.at("wall_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics: ") + e.what());
  }
  return m;
}

Metrics evaluate(const Model& model, const Dataset& ds, std::span<const std::int64_t> indices,
                 const std::vector<int>& ks, int batch_size) {
  for (int k : ks)
    if (k < 1 || k > ds.classes())
      throw ConfigError("top-" + std::to_string(k) + " needs 1 <= k <= " + std::to_string(ds.classes()));
  check_input(model, ds);
  NoGradGuard no_grad;
  std::map<int, std::int64_t> hits;
  for (int k : ks) hits[k] = 0;
  const auto n = static_cast<std::int64_t>(indices.size());
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto part = indices.subspan(static_cast<std::size_t>(start),
                                      static_cast<std::size_t>(std::min<std::int64_t>(batch_size, n - start)));
    const Tensor logits = model.forward(ds.batch(part, model.dtype()));
    const std::vector<double> v = logits.values();
    const std::vector<int> labels = ds.labels(part);
    for (int k : ks) hits[k] += topk_hits(v, logits.dim(1), labels, k);
  }
  Metrics m;
  m.evaluated = n;
  for (int k : ks) m.topk[k] = n == 0 ? 0.0 : 100.0 * static_cast<double>(hits[k]) / static_cast<double>(n);
  return m;
}

Metrics train(Model& model, const Dataset& ds, std::span<const std::int64_t> train_idx,
              std::span<const std::int64_t> eval_idx, const TrainConfig& config) {
  config.validate();
  check_input(model, ds);
  const auto start_time = std::chrono::steady_clock::now();
  const auto n = static_cast<std::int64_t>(train_idx.size());
  const std::int64_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::int64_t total = per_epoch * config.epochs;
  const bool flip = config.augment_flip && ds.spec().task != Task::Temporal;

  // Weight decay applies to matrices and kernels only.
  std::vector<Tensor> decayed, plain;
  for (const auto& [name, t] : model.params().entries()) (t.rank() >= 2 ? decayed : plain).push_back(t);
  AdamWState decayed_state, plain_state;
  std::vector<Tensor> all = model.params().tensors();

  Metrics m;
  std::int64_t step = 0;
  std::vector<std::int64_t> order(train_idx.begin(), train_idx.end());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::sort(order.begin(), order.end());
    Rng shuffle(hash_combine(config.seed, static_cast<std::uint64_t>(epoch)), 11);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0;
    for (std::int64_t b = 0; b < per_epoch; ++b, ++step) {
      const auto part = std::span<const std::int64_t>(order).subspan(
          static_cast<std::size_t>(b * config.batch_size),
          static_cast<std::size_t>(std::min<std::int64_t>(config.batch_size, n - b * config.batch_size)));
      Tensor x = ds.batch(part, model.dtype());
      if (flip || config.augment_shift > 0) {
        Rng rng(hash_combine(config.seed, static_cast<std::uint64_t>(step)), 12);
        if (x.dtype() == Dtype::F32)
          augment(x.data<float>(), ds.geometry(), x.dim(0), flip, config.augment_shift, rng);
        else
          augment(x.data<double>(), ds.geometry(), x.dim(0), flip, config.augment_shift, rng);
      }
      const std::vector<int> labels = ds.labels(part);
      const double lr = learning_rate(config, step, total);

      const auto diverged = [&](const std::string& what) {
        std::ostringstream os;
        os << what << " at step " << step << " (lr=" << lr << ")";
        return NumericError(os.str());
      };
      model.params().zero_grad();
      double value = 0;
      try {
        Tensor loss = cross_entropy(model.forward(x), labels);
        value = loss.item();
        if (!std::isfinite(value)) throw diverged("training loss is " + std::to_string(value));
        loss.backward();
      } catch (const NumericError& e) {
        if (std::string_view(e.what()).find(" at step ") != std::string_view::npos) throw;
        throw diverged(e.what());
      }
      if (config.clip_grad_norm > 0) clip_grad_norm(all, config.clip_grad_norm);

      AdamWConfig opt{lr, config.beta1, config.beta2, 1e-8, config.weight_decay};
      adamw_step(decayed, decayed_state, opt);
      opt.weight_decay = 0;
      adamw_step(plain, plain_state, opt);
      loss_sum += value * static_cast<double>(part.size());
    }
    m.epoch_losses.push_back(n == 0 ? 0.0 : loss_sum / static_cast<double>(n));
  }
  model.params().zero_grad();
  m.steps = step;
  if (!eval_idx.empty()) {
    const Metrics e = evaluate(model, ds, eval_idx, {1, std::min(5, ds.classes())});
    m.topk = e.topk;
    m.evaluated = e.evaluated;
  }
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return m;
}

std::string parameter_hash(const ParamSet& params) {
  std::uint64_t h = fnv1a("params");
  for (const auto& [name, t] : params.entries()) {
    h = fnv1a(name + shape_str(t.shape()) + std::string(dtype_name(t.dtype())), h);
    if (t.dtype() == Dtype::F32) {
      auto d = t.data<float>();
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(d.data()), d.size_bytes()), h);
    } else {
      auto d = t.data<double>();
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(d.data()), d.size_bytes()), h);
    }
  }
  return hex64(h);
}

bool Provenance::operator==(const Provenance& o) const {
  if (image_config != o.image_config || image_config_hash != o.image_config_hash ||
      image_dataset_hash != o.image_dataset_hash || !(pretrain == o.pretrain) || inflation.size() != o.inflation.size())
    return false;
  for (std::size_t i = 0; i < inflation.size(); ++i)
    if (inflation[i].name != o.inflation[i].name || inflation[i].rule != o.inflation[i].rule) return false;
  return true;
}

nlohmann::json to_json(const Provenance& p) {
  nlohmann::json map = nlohmann::json::array();
  for (const auto& e : p.inflation) map.push_back({{"name", e.name}, {"rule", e.rule}});
  return {{"image_config", p.image_config},
          {"image_config_hash", p.image_config_hash},
          {"image_dataset_hash", p.image_dataset_hash},
          {"pretrain", to_json(p.pretrain)},
          {"inflation", map}};
}

Provenance provenance_from_json(const nlohmann::json& doc) {
  Provenance p;
  try {
    p.image_config = doc.at("image_config").get<std::string>();
    p.image_config_hash = doc.at("image_config_hash").get<std::string>();
    p.image_dataset_hash = doc.at("image_dataset_hash").get<std::string>();
    p.pretrain = metrics_from_json(doc.at("pretrain"));
    for (const auto& e : doc.at("inflation"))
      p.inflation.push_back({e.at("name").get<std::string>(), e.at("rule").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("provenance: ") + e.what());
  }
  return p;
}

PretrainResult pretrain_and_inflate(const Dataset& images, std::span<const std::int64_t> train_idx,
                                    std::span<const std::int64_t> eval_idx, const ModelConfig& video_config,
                                    const TrainConfig& config) {
  if (images.geometry().t != 1) throw ConfigError("pretraining needs an image dataset (t=1)");
  // The head follows the image task's classes during pretraining and is
  // re-drawn when the video task has a different class count.
  ModelConfig video_as_image = video_config;
  video_as_image.num_classes = images.classes();
  const ModelConfig image_config = spatial_restriction(video_as_image);
  Model image_model = build_model(image_config, config.seed, config.precision);
  Metrics pre = train(image_model, images, train_idx, eval_idx, config);

  Model video = build_model(video_config, config.seed, config.precision);
  std::vector<InflationEntry> map;
  if (video_as_image.num_classes == video_config.num_classes) {
    InflationResult inflated = inflate_2d_to_3d(image_model.params(), image_config, video_config, video.params());
    load_params(video.params(), inflated.params);
    map = std::move(inflated.map);
  } else {
    Model shaped = build_model(video_as_image, config.seed, config.precision);
    InflationResult inflated = inflate_2d_to_3d(image_model.params(), image_config, video_as_image, shaped.params());
    for (const auto& e : inflated.map) {
      const bool head = e.name.starts_with("head.");
      if (!head) const_cast<Tensor&>(video.params().at(e.name)).buffer() = inflated.params.at(e.name).buffer();
      map.push_back({e.name, head ? "fresh" : e.rule});
    }
  }

  Provenance p;
  p.image_config = image_config.name;
  p.image_config_hash = hex64(config_hash(image_config));
  p.image_dataset_hash = images.content_hash();
  p.pretrain = std::move(pre);
  p.inflation = std::move(map);
  return {std::move(video), std::move(p)};
}

}  // namespace vtlab
