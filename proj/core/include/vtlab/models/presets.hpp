#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vtlab/models/config.hpp"

namespace vtlab {

/// Full-scale presets are for accounting only; toy presets train on 8x32x32 clips.
std::vector<std::string> preset_names();
std::vector<std::string> full_scale_preset_names();
std::vector<std::string> toy_preset_names();

/// Throws LookupError for unknown names.
ModelConfig preset(const std::string& name);

/// Published size and cost of the architecture a full-scale preset models.
/// Cost counts one multiply-accumulate as one operation, per view set.
struct ReferenceFigures {
  double params_m = 0;
  double gflops = 0;
};

std::optional<ReferenceFigures> reference_figures(const std::string& name);

}  // namespace vtlab
