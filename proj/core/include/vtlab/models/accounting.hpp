#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vtlab/models/config.hpp"

namespace vtlab {

struct ParamRow {
  std::string part;
  std::int64_t params = 0;
};

struct ParamReport {
  std::string model;
  std::vector<ParamRow> parts;
  std::int64_t total = 0;

  double millions() const { return static_cast<double>(total) / 1e6; }
};

/// Analytic count; matches the instantiated model exactly.
ParamReport count_params(const ModelConfig& config);

struct FlopRow {
  std::string part;
  std::int64_t macs = 0;
  /// Query-key pairs scored per clip, summed over attention layers (heads not multiplied in).
  std::int64_t attention_elements = 0;
};

/// Multiply-accumulates of matmuls, convolutions and attention products.
/// Normalization, activations, softmax, pooling and additions are not counted.
struct FlopReport {
  std::string model;
  Extent3 input;
  std::int64_t batch = 1;
  int views = 1;
  std::vector<FlopRow> parts;
  std::int64_t macs = 0;
  std::int64_t attention_elements = 0;

  std::int64_t flops() const { return 2 * macs; }
  /// Per prediction, in units of 1e9.
  double gmacs_per_view_set() const { return static_cast<double>(macs) * views / 1e9; }
  double gflops_per_view_set() const { return 2.0 * gmacs_per_view_set(); }
};

/// `input` defaults to the config's input_size; counts are for `batch` clips
/// of one view each, `views` is carried through for reporting.
FlopReport count_flops(const ModelConfig& config, std::optional<Extent3> input = std::nullopt, std::int64_t batch = 1);

nlohmann::json to_json(const ParamReport& report);
nlohmann::json to_json(const FlopReport& report);
std::string format_table(const ParamReport& report);
std::string format_table(const FlopReport& report);

}  // namespace vtlab
