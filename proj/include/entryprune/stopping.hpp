#pragma once

// Stopping rules evaluated once per rotation (or epoch) and the plan for the
// final retrain on the full training partition.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entryprune/errors.hpp"
#include "entryprune/flex.hpp"

namespace entryprune {

enum class StoppingKind { Epochs, Ident, Validation };

struct StoppingConfig {
  StoppingKind kind = StoppingKind::Validation;
  std::size_t max_epochs = 1000;
  std::size_t ident_patience = 100;
  std::size_t loss_patience = 100;
  double tolerance = 1e-12;

  static StoppingConfig epochs(std::size_t n) {
    StoppingConfig c;
    c.kind = StoppingKind::Epochs;
    c.max_epochs = n;
    return c;
  }
  static StoppingConfig ident(std::size_t patience) {
    StoppingConfig c;
    c.kind = StoppingKind::Ident;
    c.ident_patience = patience;
    return c;
  }
  static StoppingConfig validation(std::size_t loss_patience, std::size_t ident_patience) {
    StoppingConfig c;
    c.kind = StoppingKind::Validation;
    c.loss_patience = loss_patience;
    c.ident_patience = ident_patience;
    return c;
  }

  void validate() const {
    if (max_epochs < 1 || ident_patience < 1 || loss_patience < 1) {
      throw ConfigError("stopping counts must be >= 1");
    }
  }
};

struct RotationRecord {
  std::size_t rotation = 0;
  std::optional<double> val_loss;
  std::uint64_t topk_hash = 0;
  std::size_t epoch = 0;
};

struct RunHistory {
  std::vector<RotationRecord> rotations;
  std::size_t epochs_completed = 0;
};

enum class StopReason { None, Epochs, Ident, ValLoss };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::Epochs: return "epochs";
    case StopReason::Ident: return "ident";
    case StopReason::ValLoss: return "val_loss";
    case StopReason::None: break;
  }
  return "none";
}

/// FNV-1a over a sorted index set.
inline std::uint64_t hash_index_set(std::span<const std::size_t> sorted) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t v : sorted) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(v) >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h ^ sorted.size();
}

namespace detail {

/// Consecutive rotations at the end of the history whose top-K set equals its predecessor's.
inline std::size_t unchanged_run(const std::vector<RotationRecord>& rs) {
  std::size_t run = 0;
  for (std::size_t i = rs.size(); i-- > 1;) {
    if (rs[i].topk_hash != rs[i - 1].topk_hash) break;
    ++run;
  }
  return run;
}

/// Rotations since the best validation loss (best-so-far with tolerance).
inline std::size_t rotations_since_best(const std::vector<RotationRecord>& rs, double tol) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_at = 0;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (!rs[i].val_loss) throw ConfigError("validation stopping requires a validation split");
    if (*rs[i].val_loss < best - tol) {
      best = *rs[i].val_loss;
      best_at = i;
    }
  }
  return rs.empty() ? 0 : rs.size() - 1 - best_at;
}

}  // namespace detail

inline StopReason stop_reason(const StoppingConfig& cfg, const RunHistory& history) {
  switch (cfg.kind) {
    case StoppingKind::Epochs:
      return history.epochs_completed >= cfg.max_epochs ? StopReason::Epochs : StopReason::None;
    case StoppingKind::Ident:
      return detail::unchanged_run(history.rotations) >= cfg.ident_patience ? StopReason::Ident
                                                                             : StopReason::None;
    case StoppingKind::Validation:
      if (detail::rotations_since_best(history.rotations, cfg.tolerance) >= cfg.loss_patience) {
        return StopReason::ValLoss;
      }
      return detail::unchanged_run(history.rotations) >= cfg.ident_patience ? StopReason::Ident
                                                                             : StopReason::None;
  }
  return StopReason::None;
}

inline bool should_stop(const StoppingConfig& cfg, const RunHistory& history) {
  return stop_reason(cfg, history) != StopReason::None;
}

struct RetrainPlan {
  std::size_t rotations = 0;
  std::vector<ResizeStep> resize;
};

/// Retrain for exactly `stopped_at_rotation` rotations. Flex runs additionally move
/// the candidate count from its initial to its final value in ten steps.
inline RetrainPlan plan_final_retrain(std::size_t stopped_at_rotation,
                                      std::optional<std::pair<std::size_t, std::size_t>> flex_kc = std::nullopt) {
  RetrainPlan plan;
  plan.rotations = stopped_at_rotation;
  if (flex_kc) plan.resize = flex_final_scaling(flex_kc->first, flex_kc->second, stopped_at_rotation);
  return plan;
}

}  // namespace entryprune
