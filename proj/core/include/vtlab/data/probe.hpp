#pragma once

#include <cstdint>
#include <span>

#include "vtlab/data/dataset.hpp"

namespace vtlab {

struct ProbeConfig {
  /// Side of the square mean-pooling window applied to each frame.
  int pool = 8;
  int steps = 300;
  double lr = 0.05;
  double l2 = 1e-4;
  /// Picks which frame of each clip the probe sees.
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double train_accuracy = 0;
  double val_accuracy = 0;
  double chance = 0;
  std::int64_t features = 0;
};

/// Softmax regression on one randomly chosen, mean-pooled frame per clip.
/// Accuracies are percentages.
ProbeResult frame_linear_probe(const Dataset& dataset, std::span<const std::int64_t> train,
                               std::span<const std::int64_t> val, const ProbeConfig& config = {});

}  // namespace vtlab
