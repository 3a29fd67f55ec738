#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "latentdr/error.hpp"

namespace latentdr {

enum class KernelKind { epanechnikov, uniform, triangular };

/// Smoothing kernel on the nonnegative half-line: nonnegative, positive at zero,
/// compactly supported on [0, support_radius] and Lipschitz.
struct KernelSpec {
  KernelKind kind = KernelKind::epanechnikov;
  double support_radius = 1.0;

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

inline const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::epanechnikov: return "epanechnikov";
    case KernelKind::uniform: return "uniform";
    case KernelKind::triangular: return "triangular";
  }
  return "unknown";
}

inline KernelSpec parse_kernel(std::string_view name) {
  if (name == "epanechnikov") return {KernelKind::epanechnikov, 1.0};
  if (name == "uniform") return {KernelKind::uniform, 1.0};
  if (name == "triangular") return {KernelKind::triangular, 1.0};
  throw ConfigError(Stage::config, "unknown kernel '" + std::string(name) +
                                       "' (expected epanechnikov, uniform or triangular)");
}

/// Kernel value at a nonnegative argument; exactly zero beyond the support.
inline double weight(const KernelSpec& spec, double x) {
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw ComputeError(Stage::imputation, "kernel argument must be finite and nonnegative");
  }
  if (x > spec.support_radius) return 0.0;
  switch (spec.kind) {
    case KernelKind::epanechnikov: return 0.75 * (1.0 - x * x);
    case KernelKind::uniform: return 0.5;
    case KernelKind::triangular: return 1.0 - x;
  }
  return 0.0;
}

}  // namespace latentdr
