#pragma once

// Adaptive candidate-pool sizing: halve or double c_ratio whenever the running
// loss stalls, reversing direction when the loss has risen since the last change.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "entryprune/errors.hpp"

namespace entryprune {

enum class FlexDirection { Shrink, Grow };
enum class LossSource { Validation, Training };

struct FlexConfig {
  bool enabled = false;
  std::size_t patience = 10;  // rotations without improvement before a size change
  double tolerance = 1e-12;
};

struct FlexState {
  FlexDirection direction = FlexDirection::Shrink;
  double l_change = std::numeric_limits<double>::quiet_NaN();
  std::size_t stall_counter = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  LossSource loss_source = LossSource::Validation;
};

/// Smallest c_ratio the shrink branch may reach: one fifth of K candidates.
inline double flex_min_c_ratio(std::size_t K, std::size_t N) {
  return 0.2 * static_cast<double>(K) / static_cast<double>(N - K);
}

/// Candidate count for a c_ratio: round(c_ratio * (N - K)), at least one, at most N - K.
inline std::size_t candidate_count(double c_ratio, std::size_t K, std::size_t N) {
  if (K >= N) throw ConfigError("K must be smaller than N");
  const auto pool = static_cast<double>(N - K);
  const auto rounded = static_cast<std::size_t>(std::llround(c_ratio * pool));
  return std::clamp<std::size_t>(rounded, 1, N - K);
}

/// Candidate count under flex: never below ceil(K / 5), so the input layer stays
/// at or above ceil(6K / 5).
inline std::size_t flex_candidate_count(double c_ratio, std::size_t K, std::size_t N) {
  const std::size_t floor_count = std::min<std::size_t>((K + 4) / 5, N - K);
  return std::max(candidate_count(c_ratio, K, N), std::max<std::size_t>(floor_count, 1));
}

/// One flex step, called once per rotation with the running loss `l`.
/// Returns the new c_ratio when the size changes.
inline std::optional<double> flex_update(FlexState& flex, double l, double c_ratio, std::size_t K,
                                         std::size_t N, const FlexConfig& cfg = {}) {
  if (std::isnan(flex.l_change)) flex.l_change = l;
  if (l < flex.best_loss - cfg.tolerance) {
    flex.best_loss = l;
    flex.stall_counter = 0;
    return std::nullopt;
  }
  ++flex.stall_counter;
  if (flex.stall_counter < cfg.patience) return std::nullopt;

  if (l > flex.l_change) {
    flex.direction = flex.direction == FlexDirection::Shrink ? FlexDirection::Grow : FlexDirection::Shrink;
  }
  flex.l_change = l;
  flex.stall_counter = 0;
  flex.best_loss = l;

  const double next = flex.direction == FlexDirection::Shrink
                          ? std::max(0.5 * c_ratio, flex_min_c_ratio(K, N))
                          : std::min(2.0 * c_ratio, 1.0);
  if (next == c_ratio) return std::nullopt;
  return next;
}

struct ResizeStep {
  std::size_t rotation = 0;         // 1-based rotation at which the new size applies
  std::size_t candidate_count = 0;  // K_c from that rotation on
};

/// Schedule that moves the input layer linearly from `start_kc` to `end_kc`
/// candidates in min(10, total_rotations) evenly spaced steps.
inline std::vector<ResizeStep> flex_final_scaling(std::size_t start_kc, std::size_t end_kc,
                                                  std::size_t total_rotations, std::size_t max_steps = 10) {
  std::vector<ResizeStep> out;
  if (start_kc == end_kc || total_rotations == 0) return out;
  const std::size_t steps = std::min(max_steps, total_rotations);
  // Integer arithmetic with halves rounded up, so results do not depend on FP contraction.
  const auto den = static_cast<long long>(steps);
  auto div_round = [den](long long num) { return (2 * num + den) / (2 * den); };  // num >= 0
  const auto span = static_cast<long long>(end_kc) - static_cast<long long>(start_kc);
  for (std::size_t i = 1; i <= steps; ++i) {
    const auto ii = static_cast<long long>(i);
    const auto rotation = static_cast<std::size_t>(div_round(ii * static_cast<long long>(total_rotations)));
    const auto kc = static_cast<std::size_t>(div_round(static_cast<long long>(start_kc) * den + span * ii));
    out.push_back(ResizeStep{rotation, kc});
  }
  return out;
}

}  // namespace entryprune
