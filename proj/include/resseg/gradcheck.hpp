#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace resseg {

struct GradCheckTarget {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  /// Full-graph probes discarded because +-eps crossed a ReLU or pooling kink.
  std::size_t skipped = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double eps = 1e-3;
  double tol = 1e-4;
  /// Restrict to one target; nullopt runs everything.
  std::optional<std::string> only;
  std::uint64_t seed = 1234;
  /// Entries probed per parameter tensor in the full-graph check.
  std::size_t probes_per_tensor = 12;
};

/// Names accepted by GradCheckOptions::only.
const std::vector<std::string>& gradcheck_target_names();

/// Compares every analytic backward against central differences on random
/// inputs of at most 1 x 3 x 8 x 8, plus full-graph checks of both desk-scale
/// networks. Throws ConfigError on an unknown target name.
std::vector<GradCheckTarget> run_gradcheck(const GradCheckOptions& opts);

}  // namespace resseg
