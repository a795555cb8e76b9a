#pragma once

#include <json.hpp>

#include "resfeat/network.hpp"
#include "resfeat/solver.hpp"

namespace resfeat {

// JSON views of the verification reports, consumed by the CLI.

inline nlohmann::json to_json(const EquivalenceReport& r) {
  return {
      {"steps", r.steps},
      {"max_abs_gap", r.max_abs_gap},
      {"tolerance", r.tolerance},
      {"pass", r.pass},
      {"invertible", r.invertible},
      {"condition", r.condition},
      {"per_step_gap", r.per_step_gap},
  };
}

inline nlohmann::json to_json(const ConvergenceTrace& t) {
  return {{"residual_norms", t.residual_norms}, {"monotone", t.monotone}};
}

inline nlohmann::json to_json(const ConstrainedTrace& t) {
  return {
      {"residual_norms", t.residual_norms},
      {"min_entries", t.min_entries},
      {"nonnegative", t.nonnegative},
      {"monotone_entries", t.monotone_entries},
  };
}

inline nlohmann::json to_json(const PixelReport& r) {
  return {
      {"grid", r.grid},
      {"subsample_is_zero", r.subsample_is_zero},
      {"learned_path_entry", r.learned_path_entry},
      {"learned_path_max_abs", r.learned_path_max_abs},
      {"restrict_path_trials", r.restrict_path_trials},
      {"restrict_path_max_abs", r.restrict_path_max_abs},
      {"pass", r.pass},
  };
}

inline nlohmann::json to_json(const ModelSummary& s) {
  nlohmann::json kernels = nlohmann::json::array();
  for (const auto& k : s.kernels)
    kernels.push_back({{"name", k.name},
                       {"shape", k.shape},
                       {"weights", k.weights},
                       {"use_sites", k.use_sites},
                       {"shared", k.use_sites > 1}});
  nlohmann::json sections = nlohmann::json::object();
  for (const auto& [name, count] : s.sections) sections[name] = count;
  return {{"total", s.total},
          {"conv_weights", s.conv_weights},
          {"bn_weights", s.bn_weights},
          {"head_weights", s.head_weights},
          {"sections", sections},
          {"kernels", kernels}};
}

}  // namespace resfeat
