#pragma once

#include <stdexcept>
#include <string>

namespace latentdr {

/// Pipeline stage that raised an error. Carried by every exception so callers
/// (and the CLI's machine-readable error line) can tell where a run failed.
enum class Stage {
  input,
  validation,
  config,
  crossfit,
  distance,
  imputation,
  bandwidth,
  estimation,
  baseline,
  simulation,
  report,
};

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::input: return "input";
    case Stage::validation: return "validation";
    case Stage::config: return "config";
    case Stage::crossfit: return "crossfit";
    case Stage::distance: return "distance";
    case Stage::imputation: return "imputation";
    case Stage::bandwidth: return "bandwidth";
    case Stage::estimation: return "estimation";
    case Stage::baseline: return "baseline";
    case Stage::simulation: return "simulation";
    case Stage::report: return "report";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Stage stage, const std::string& what)
      : std::runtime_error(what), stage_(stage) {}

  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

/// Outcomes and treatment (or any pair of inputs) disagree in dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file content.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input data breaks a structural panel invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Out-of-domain option or unknown flag.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during estimation (infeasible bandwidths, singular design, ...).
class ComputeError : public Error {
 public:
  using Error::Error;
};

}  // namespace latentdr
