#pragma once

#include <stdexcept>
#include <string>

namespace chauffeur {

// Base for everything thrown by the workbench so callers can catch one type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File/text could not be understood. Message names the offending line or field.
struct ParseError : Error { using Error::Error; };

// File parsed but the declared format version is unsupported.
struct VersionMismatch : Error { using Error::Error; };

// A value object violates one of its stated invariants.
struct ValidationError : Error { using Error::Error; };

// Scenario constraints could not be satisfied within the attempt budget.
struct GenerationFailed : Error { using Error::Error; };

// Tensor/op shape disagreement in the neuro module.
struct ShapeMismatch : Error { using Error::Error; };

// Math domain violation (e.g. Beta log-density outside (0,1)).
struct DomainError : Error { using Error::Error; };

// Simulator stepped past its terminal state.
struct SteppedAfterDone : Error { using Error::Error; };

// Training/aggregation asked to run on nothing.
struct EmptyDataset : Error { using Error::Error; };

// Selection asked for more scenarios than exist.
struct InsufficientScenarios : Error { using Error::Error; };

// t-SNE needs N > 3 * perplexity rows.
struct PerplexityTooHigh : Error { using Error::Error; };

// CLI input file absent or unusable.
struct MissingInput : Error { using Error::Error; };

// Backward pass found a node referencing a later node; impossible by
// construction, asserted anyway.
struct GraphCycle : Error { using Error::Error; };

// Always-on invariant check; used for conditions that indicate internal bugs.
inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error("invariant violated: " + msg);
}

}  // namespace chauffeur
