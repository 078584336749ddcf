#include "vtlab/data/probe.hpp"

#include <cmath>

#include <Eigen/Core>

#include "vtlab/errors.hpp"
#include "vtlab/tensor/rng.hpp"

namespace vtlab {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix frame_features(const Dataset& ds, std::span<const std::int64_t> indices, int pool, std::uint64_t seed) {
  const auto& g = ds.geometry();
  const std::int64_t ph = g.h / pool, pw = g.w / pool;
  Matrix x(static_cast<Eigen::Index>(indices.size()), ph * pw * g.c);
  x.setZero();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    Rng rng(hash_combine(seed, static_cast<std::uint64_t>(indices[r])), 7);
    const auto t = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(g.t)));
    auto clip = ds.clip(indices[r]);
    for (std::int64_t y = 0; y < ph * pool; ++y)
      for (std::int64_t xx = 0; xx < pw * pool; ++xx)
        for (std::int64_t c = 0; c < g.c; ++c)
          x(static_cast<Eigen::Index>(r), ((y / pool) * pw + xx / pool) * g.c + c) +=
              clip[static_cast<std::size_t>(((t * g.h + y) * g.w + xx) * g.c + c)];
  }
  return x / static_cast<double>(pool * pool);
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
  std::int64_t hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    hits += best == labels[static_cast<std::size_t>(i)];
  }
  return logits.rows() == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(logits.rows());
}

}  // namespace

ProbeResult frame_linear_probe(const Dataset& ds, std::span<const std::int64_t> train,
                               std::span<const std::int64_t> val, const ProbeConfig& config) {
  if (config.pool < 1 || ds.geometry().h < config.pool || ds.geometry().w < config.pool)
    throw ConfigError("probe pool must be between 1 and the frame size");
  if (train.empty()) throw ConfigError("probe needs training samples");

  Matrix xt = frame_features(ds, train, config.pool, config.seed);
  Matrix xv = frame_features(ds, val, config.pool, config.seed);
  const std::vector<int> yt = ds.labels(train), yv = ds.labels(val);
  const Eigen::Index n = xt.rows(), f = xt.cols(), k = ds.classes();

  // Standardize with train statistics.
  const Eigen::RowVectorXd mu = xt.colwise().mean();
  Eigen::RowVectorXd sd = ((xt.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  sd = (sd.array() < 1e-8).select(1.0, sd);
  xt = ((xt.rowwise() - mu).array().rowwise() / sd.array()).matrix();
  if (xv.rows() > 0) xv = ((xv.rowwise() - mu).array().rowwise() / sd.array()).matrix();

  Matrix onehot = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, yt[static_cast<std::size_t>(i)]) = 1;

  // Full-batch Adam on the mean cross-entropy.
  Matrix w = Matrix::Zero(f, k), mw = w, vw = w;
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k), mb = b, vb = b;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= config.steps; ++step) {
    Matrix logits = (xt * w).rowwise() + b;
    Eigen::VectorXd mx = logits.rowwise().maxCoeff();
    Matrix p = (logits.colwise() - mx).array().exp().matrix();
    Eigen::VectorXd z = p.rowwise().sum();
    p = p.array().colwise() / z.array();
    const Matrix dlogits = (p - onehot) / static_cast<double>(n);
    const Matrix gw = xt.transpose() * dlogits + config.l2 * w;
    const Eigen::RowVectorXd gb = dlogits.colwise().sum();
    mw = b1 * mw + (1 - b1) * gw;
    vw = b2 * vw + (1 - b2) * gw.cwiseProduct(gw);
    mb = b1 * mb + (1 - b1) * gb;
    vb = b2 * vb + (1 - b2) * gb.cwiseProduct(gb);
    const double c1 = 1 - std::pow(b1, step), c2 = 1 - std::pow(b2, step);
    w.array() -= config.lr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps);
    b.array() -= config.lr * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
  }

  ProbeResult r;
  r.features = f;
  r.chance = 100.0 / static_cast<double>(k);
  r.train_accuracy = accuracy((xt * w).rowwise() + b, yt);
  if (xv.rows() > 0) r.val_accuracy = accuracy((xv * w).rowwise() + b, yv);
  return r;
}

}  // namespace vtlab
