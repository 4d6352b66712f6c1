#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "chauffeur/rng.hpp"
#include "chauffeur/runner.hpp"

namespace chauffeur {

// axis: perturb x/y only; yaw: heading only; both: all three components.
enum class ShiftMode { axis, yaw, both };

ShiftMode shift_mode_from_string(const std::string& s);
std::string to_string(ShiftMode m);

struct ShiftConfig {
  double max_xy = 0.0;   // meters, bound on |dx| and |dy|
  double max_yaw = 0.0;  // radians, bound on |dyaw|
  ShiftMode mode = ShiftMode::both;
  double sigma_frac = 0.5;  // sigma = sigma_frac * max; rejection keeps draws inside +-max
  int max_retries = 10;
  uint64_t seed = 1;
};

struct ShiftSample {
  double dx = 0.0;
  double dy = 0.0;
  double dyaw = 0.0;
};

struct ShiftOutcome {
  bool applied = false;  // false: every retry failed validation, the episode ran unshifted
  double dx = 0.0;
  double dy = 0.0;
  double dyaw = 0.0;
  int attempts = 0;  // truncated-Gaussian draws consumed
};

// Each active component ~ Normal(0, sigma^2) redrawn until inside +-max. A zero
// max (and any component gated off by mode) yields exact 0 without consuming
// the stream.
ShiftSample sample_shift(const ShiftConfig& cfg, Rng& rng);

// The shift lives in the ego's own initial frame: dx forward, dy lateral-left.
Pose apply_shift(const Pose& base, const ShiftSample& s);

// True iff the ego rectangle placed at shifted_pose neither overlaps any other
// agent's t=0 rectangle nor crosses a road edge (the simulator's predicates).
bool validate_shift(const Scenario& s, const Pose& shifted_pose);

struct ShiftedReset {
  Simulator sim;
  ShiftOutcome outcome;
  // The override handed to the simulator. nullopt means a plain reset: either
  // the fallback, or an accepted all-zero sample, both bit-identical to an
  // unshifted episode.
  std::optional<Pose> override_pose;
};

// Up to max_retries sampled shifts; the first one passing validate_shift is
// applied. On exhaustion (or max_retries = 0) the episode starts unshifted
// with applied = false.
ShiftedReset shifted_reset(const Scenario& s, const ShiftConfig& cfg, Rng& rng,
                           AgentControl control = AgentControl::non_reactive,
                           const RewardConfig& reward = RewardConfig{});

struct ShiftGrid {
  std::vector<double> xy;   // meters
  std::vector<double> yaw;  // radians
};

struct SweepCell {
  double max_xy = 0.0;
  double max_yaw = 0.0;
  BenchmarkReport report;
  double applied_fraction = 0.0;  // accepted-shift episodes / episodes
};

// One report per (xy, yaw) cell, xy-major. episodes_per_cell episodes are split
// over the scenarios scenario-major (first scenarios get the remainder), and
// the per-episode seed depends only on (seed, scenario, repeat) -- never on the
// cell -- so cells differ through the shift alone and the (0, 0) cell matches
// evaluate_policy bit for bit.
std::vector<SweepCell> shift_sweep(const std::vector<Scenario>& scenarios, Policy& policy,
                                   const ShiftGrid& grid, int episodes_per_cell,
                                   const ShiftConfig& base, const RunConfig& run = RunConfig{});

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::filesystem::path& path);

// Inverse of write_sweep_csv; throws ParseError on a malformed file. Values
// round-trip exactly because the writer already quantized through format9.
std::vector<SweepCell> read_sweep_csv(const std::filesystem::path& path);

}  // namespace chauffeur
