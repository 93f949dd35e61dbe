#pragma once

// EntryPrune rotation machinery.
//
// A dense MLP sees K + K_c features at a time: the current top-K and K_c random
// candidates. Every n_mb mini-batches a per-row change metric is reduced to a
// standardized score. Candidates get that score recorded as their entry score,
// the K best entry scores stay, all other slots are refilled with fresh random
// features whose weights start at ~1e-8, and the optimizer is reset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "entryprune/data.hpp"
#include "entryprune/errors.hpp"
#include "entryprune/flex.hpp"
#include "entryprune/mlp.hpp"
#include "entryprune/rng.hpp"
#include "entryprune/stopping.hpp"

namespace entryprune {

enum class Metric { GradientSum, WeightChange, Magnitude, MolchanovImportance };
enum class EntryMode { EntryScore, Live };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::GradientSum: return "gradient_sum";
    case Metric::WeightChange: return "weight_change";
    case Metric::Magnitude: return "magnitude";
    case Metric::MolchanovImportance: return "molchanov";
  }
  return "?";
}

inline const char* to_string(EntryMode m) { return m == EntryMode::EntryScore ? "entry" : "live"; }

struct SelectionConfig {
  std::size_t K = 50;
  double c_ratio = 0.2;
  std::size_t n_mb = 100;
  Metric metric = Metric::GradientSum;
  EntryMode entry_mode = EntryMode::EntryScore;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_sizes{100};
  OptimizerConfig optimizer;
  FlexConfig flex;
  double val_fraction = 0.2;  // share of the training rows held out for validation stopping

  void validate(std::size_t N) const {
    if (K < 1 || K >= N) {
      throw ConfigError("K must satisfy 1 <= K < N (K=" + std::to_string(K) + ", N=" + std::to_string(N) + ")");
    }
    if (!(c_ratio > 0.0 && c_ratio <= 1.0)) throw ConfigError("c_ratio must be in (0, 1]");
    if (n_mb < 1) throw ConfigError("n_mb must be >= 1");
    if (metric == Metric::MolchanovImportance && entry_mode != EntryMode::Live) {
      throw ConfigError("the molchanov metric is only defined without entry scores (entry_mode=live)");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0, 1)");
    optimizer.validate();
    for (std::size_t h : hidden_sizes) {
      if (h < 1) throw ConfigError("hidden sizes must be >= 1");
    }
  }
};

/// Marks features that have never completed a candidate window.
inline constexpr double kNoEntry = std::numeric_limits<double>::quiet_NaN();

inline bool has_entry(double e) { return !std::isnan(e); }

inline constexpr std::ptrdiff_t kInactive = -1;

struct SelectionState {
  std::size_t N = 0;
  std::size_t K = 0;
  std::size_t K_c = 0;
  double c_ratio = 0.0;
  Metric metric = Metric::GradientSum;
  EntryMode entry_mode = EntryMode::EntryScore;
  bool flex_floor = false;  // K_c never below ceil(K / 5)

  IndexList input;  // feature held by each first-layer row
  IndexList top;    // sorted
  IndexList cands;  // sorted
  std::vector<std::ptrdiff_t> slot_of;  // feature -> row, kInactive if absent

  Matrix S;           // accumulated change metric, rows x hidden
  Vector s;           // relative change scores, one per row
  std::vector<double> e;  // entry scores, length N
  Matrix w_old;       // first-layer weights right after the last rotation
  Matrix importance;  // Molchanov saliency accumulator
  std::size_t rotation_count = 0;
  std::size_t mb_count = 0;

  std::size_t input_rows() const { return input.size(); }
  bool is_active(std::size_t f) const { return slot_of[f] != kInactive; }
  std::size_t slot(std::size_t f) const { return static_cast<std::size_t>(slot_of[f]); }
};

namespace detail {

inline void rebuild_slots(SelectionState& st) {
  st.slot_of.assign(st.N, kInactive);
  for (std::size_t r = 0; r < st.input.size(); ++r) st.slot_of[st.input[r]] = static_cast<std::ptrdiff_t>(r);
}

inline void reset_accumulators(SelectionState& st, const MlpState& mlp) {
  const Matrix& w = mlp.first_weights();
  st.S = Matrix::Zero(w.rows(), w.cols());
  st.importance = Matrix::Zero(w.rows(), w.cols());
  st.w_old = st.metric == Metric::WeightChange ? w : Matrix{};
  st.s = Vector::Zero(w.rows());
  st.mb_count = 0;
}

}  // namespace detail

inline std::size_t selection_candidate_count(const SelectionState& st, double c_ratio) {
  return st.flex_floor ? flex_candidate_count(c_ratio, st.K, st.N) : candidate_count(c_ratio, st.K, st.N);
}

/// `count` distinct features from [0, N) \ exclude, sorted. Partial Fisher-Yates
/// over the ascending complement using the candidate_draw stream.
inline IndexList draw_candidates(std::size_t N, std::span<const std::size_t> exclude, std::size_t count,
                                 SeededRng& rng) {
  std::vector<char> taken(N, 0);
  for (std::size_t f : exclude) taken[f] = 1;
  IndexList pool;
  pool.reserve(N);
  for (std::size_t f = 0; f < N; ++f) {
    if (!taken[f]) pool.push_back(f);
  }
  count = std::min(count, pool.size());
  auto& eng = rng.stream(Stream::CandidateDraw);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(eng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Builds the initial state: K + K_c random features, every first-layer row
/// initialized as a candidate, no entry scores yet.
inline std::pair<SelectionState, MlpState> init_selection(std::size_t N, std::size_t num_classes,
                                                          const SelectionConfig& cfg, SeededRng& rng) {
  cfg.validate(N);
  SelectionState st;
  st.N = N;
  st.K = cfg.K;
  st.c_ratio = cfg.c_ratio;
  st.metric = cfg.metric;
  st.entry_mode = cfg.entry_mode;
  st.flex_floor = cfg.flex.enabled;
  st.K_c = selection_candidate_count(st, cfg.c_ratio);
  st.cands = draw_candidates(N, {}, st.K + st.K_c, rng);
  st.input = st.cands;
  st.e.assign(N, kNoEntry);
  detail::rebuild_slots(st);

  MlpArchitecture arch;
  arch.input_rows = st.input.size();
  arch.hidden_sizes = cfg.hidden_sizes;
  arch.output_classes = std::max<std::size_t>(num_classes, 2);
  MlpState mlp = make_mlp(arch, rng);
  IndexList rows(st.input.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  reinit_rows(mlp, rows, rng);
  detail::reset_accumulators(st, mlp);
  return {std::move(st), std::move(mlp)};
}

/// Per-batch bookkeeping. `g1` is the raw first-layer gradient of this batch and
/// `w1` the first-layer weights it was computed at (before the optimizer step).
inline void accumulate(SelectionState& st, const Matrix& g1, const Matrix& w1) {
  if (g1.rows() != st.S.rows() || g1.cols() != st.S.cols() || w1.rows() != g1.rows() ||
      w1.cols() != g1.cols()) {
    throw ShapeError("accumulate: first-layer shapes do not match the selection state");
  }
  switch (st.metric) {
    case Metric::GradientSum:
      st.S += g1;
      break;
    case Metric::MolchanovImportance:
      st.importance.array() += (g1.array() * w1.array()).square();
      break;
    case Metric::WeightChange:
    case Metric::Magnitude:
      break;
  }
  ++st.mb_count;
}

/// Standardizes `raw` in place (population SD). A vector without spread maps to zeros.
inline void standardize_scores(Vector& raw) {
  const auto n = static_cast<double>(raw.size());
  if (raw.size() == 0) return;
  const double mean = raw.sum() / n;
  const double sd = std::sqrt((raw.array() - mean).square().sum() / n);
  if (sd == 0.0 || sd <= 1e-12 * std::abs(mean)) {
    raw.setZero();
    return;
  }
  raw = (raw.array() - mean) / sd;
}

/// Row-wise L1 norm of the window's change metric, standardized.
inline const Vector& relative_change_scores(SelectionState& st, const Matrix& w1) {
  Vector raw;
  switch (st.metric) {
    case Metric::GradientSum:
      raw = st.S.cwiseAbs().rowwise().sum();
      break;
    case Metric::WeightChange:
      if (w1.rows() != st.w_old.rows() || w1.cols() != st.w_old.cols()) {
        throw ShapeError("weight-change snapshot does not match the first layer");
      }
      raw = (w1 - st.w_old).cwiseAbs().rowwise().sum();
      break;
    case Metric::Magnitude:
      raw = w1.cwiseAbs().rowwise().sum();
      break;
    case Metric::MolchanovImportance:
      raw = st.importance.rowwise().sum();
      break;
  }
  standardize_scores(raw);
  st.s = std::move(raw);
  return st.s;
}

/// Top-K features over the entry-score vector. Higher score first; ties favour
/// currently active features, then lower index. Features without an entry are skipped.
inline IndexList top_k_entries(std::span<const double> e, std::size_t K,
                               std::span<const std::ptrdiff_t> slot_of) {
  IndexList pool;
  for (std::size_t f = 0; f < e.size(); ++f) {
    if (has_entry(e[f])) pool.push_back(f);
  }
  const std::size_t k = std::min(K, pool.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (e[a] != e[b]) return e[a] > e[b];
    const bool aa = slot_of[a] != kInactive;
    const bool ba = slot_of[b] != kInactive;
    if (aa != ba) return aa;
    return a < b;
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), better);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Top-K active features by the current window's scores (ties: lower index).
inline IndexList top_k_live(const SelectionState& st) {
  IndexList pool = st.input;
  const std::size_t k = std::min(st.K, pool.size());
  auto better = [&](std::size_t a, std::size_t b) {
    const double sa = st.s(static_cast<Eigen::Index>(st.slot(a)));
    const double sb = st.s(static_cast<Eigen::Index>(st.slot(b)));
    if (sa != sb) return sa > sb;
    return a < b;
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), better);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Records the window's scores as entry scores of the current candidates and
/// picks the new top-K. Returns the number of features that joined the top-K.
inline std::size_t select_top(SelectionState& st) {
  if (static_cast<std::size_t>(st.s.size()) != st.input.size()) {
    throw ShapeError("score vector does not match the input layer");
  }
  for (std::size_t f : st.cands) st.e[f] = st.s(static_cast<Eigen::Index>(st.slot(f)));
  IndexList next = st.entry_mode == EntryMode::EntryScore ? top_k_entries(st.e, st.K, st.slot_of) : top_k_live(st);
  std::size_t joined = 0;
  for (std::size_t f : next) {
    if (!std::binary_search(st.top.begin(), st.top.end(), f)) ++joined;
  }
  st.top = std::move(next);
  return joined;
}

/// Refills the input layer with `K_c` fresh candidates (the state's current K_c
/// unless overridden), keeps the top-K rows, reinitializes candidate rows and
/// resets the optimizer and accumulators.
inline void regrow(SelectionState& st, MlpState& mlp, SeededRng& rng,
                   std::optional<std::size_t> new_kc = std::nullopt) {
  if (new_kc) st.K_c = std::clamp<std::size_t>(*new_kc, 1, st.N - st.K);
  st.cands = draw_candidates(st.N, st.top, st.K_c, rng);

  IndexList next_input = st.top;
  next_input.insert(next_input.end(), st.cands.begin(), st.cands.end());

  const Matrix& old_w = mlp.first_weights();
  Matrix w(static_cast<Eigen::Index>(next_input.size()), old_w.cols());
  IndexList fresh_rows;
  for (std::size_t r = 0; r < next_input.size(); ++r) {
    const std::size_t f = next_input[r];
    const bool keep = r < st.top.size() && st.is_active(f);
    if (keep) {
      w.row(static_cast<Eigen::Index>(r)) = old_w.row(static_cast<Eigen::Index>(st.slot(f)));
    } else {
      fresh_rows.push_back(r);
    }
  }
  mlp.layers.front().weight = std::move(w);
  mlp.arch.input_rows = next_input.size();
  reinit_rows(mlp, fresh_rows, rng);
  reset_optimizer(mlp);

  st.input = std::move(next_input);
  detail::rebuild_slots(st);
  detail::reset_accumulators(st, mlp);
  ++st.rotation_count;
}

/// select_top followed by regrow.
inline std::size_t rotate(SelectionState& st, MlpState& mlp, SeededRng& rng) {
  const std::size_t joined = select_top(st);
  regrow(st, mlp, rng);
  return joined;
}

/// Smallest entry score among the current top-K (NaN when the top-K is empty).
inline double min_top_entry(const SelectionState& st) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t f : st.top) m = std::min(m, st.e[f]);
  return st.top.empty() ? kNoEntry : m;
}

enum class Phase { Search, Retrain };

struct RotationLog {
  std::size_t rotation = 0;
  Phase phase = Phase::Search;
  std::size_t epoch = 0;
  double running_loss = 0.0;  // mean training loss over the window
  std::optional<double> val_loss;
  double min_top_entry = 0.0;
  std::size_t topk_changes = 0;
  std::size_t candidate_count = 0;
  double c_ratio = 0.0;
  bool resized = false;
};

struct SelectionResult {
  IndexList selected;
  std::vector<RotationLog> history;
  std::size_t total_epochs = 0;
  std::size_t search_rotations = 0;
  StopReason stop_reason = StopReason::None;
  double wall_seconds = 0.0;
  std::vector<double> entry_scores;
  IndexList final_input;  // feature held by each first-layer row of the final network
  MlpState final_network;
};

/// Optional observers for diagnostics. `on_batch` fires after backpropagation and
/// before the optimizer step; `on_select` after the new top-K is chosen and before
/// regrowth; `on_rotation` once the rotation is complete.
struct RunHooks {
  std::function<void(const SelectionState&, const MlpState&, const LossAndGrads&)> on_batch;
  std::function<void(const SelectionState&)> on_select;
  std::function<void(const SelectionState&, const MlpState&, const RotationLog&)> on_rotation;
};

/// Mean cross-entropy of the network on `rows`, restricted to the active features.
inline double evaluate_loss(const Dataset& data, std::span<const std::size_t> rows, const SelectionState& st,
                            const MlpState& mlp) {
  const Matrix batch = gather<Matrix>(data.X, rows, st.input);
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.y[rows[i]];
  return cross_entropy(forward(mlp, batch).logits, labels);
}

/// Test-set accuracy of the network a selection run ended with.
inline double network_accuracy(const SelectionResult& r, const Dataset& data, std::span<const std::size_t> rows) {
  const Matrix batch = gather<Matrix>(data.X, rows, r.final_input);
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.y[rows[i]];
  return predict_accuracy(r.final_network, batch, labels);
}

namespace detail {

struct PhaseSpec {
  Phase phase = Phase::Search;
  std::span<const std::size_t> train;
  std::span<const std::size_t> val;  // empty: no validation loss
  std::optional<StoppingConfig> stopping;       // search phase
  std::size_t fixed_rotations = 0;              // retrain phase
  std::vector<ResizeStep> resize;               // retrain phase (flex)
  std::size_t epoch_cap = 0;                    // 0: unlimited
};

struct PhaseOutcome {
  SelectionState state;
  MlpState mlp;
  std::vector<RotationLog> logs;
  std::size_t epochs = 0;
  StopReason reason = StopReason::None;
  std::size_t initial_kc = 0;
};

inline PhaseOutcome run_phase(const Dataset& data, const SelectionConfig& cfg, const PhaseSpec& spec,
                              const RunHooks& hooks) {
  SeededRng rng(cfg.seed);
  auto [st, mlp] = init_selection(data.num_features(), data.num_classes, cfg, rng);
  PhaseOutcome out;
  out.initial_kc = st.K_c;

  FlexState flex;
  flex.loss_source = spec.val.empty() ? LossSource::Training : LossSource::Validation;
  const bool adapt = cfg.flex.enabled && spec.phase == Phase::Search;

  RunHistory history;
  std::vector<int> labels;
  double window_loss = 0.0;
  bool done = spec.phase == Phase::Retrain && spec.fixed_rotations == 0;

  while (!done) {
    const auto epoch_batches = batches(spec.train, cfg.optimizer.batch_size, rng);
    for (const IndexList& rows : epoch_batches) {
      const Matrix batch = gather<Matrix>(data.X, rows, st.input);
      labels.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.y[rows[i]];

      LossAndGrads lg = loss_and_grads(mlp, batch, labels);
      if (hooks.on_batch) hooks.on_batch(st, mlp, lg);
      accumulate(st, lg.first_layer(), mlp.first_weights());
      adam_step(mlp, lg.grads, cfg.optimizer);
      window_loss += lg.loss;

      if (st.mb_count < cfg.n_mb) continue;

      RotationLog log;
      log.phase = spec.phase;
      log.epoch = out.epochs;
      log.running_loss = window_loss / static_cast<double>(st.mb_count);
      window_loss = 0.0;
      if (!spec.val.empty()) log.val_loss = evaluate_loss(data, spec.val, st, mlp);

      relative_change_scores(st, mlp.first_weights());
      log.topk_changes = select_top(st);
      if (hooks.on_select) hooks.on_select(st);

      std::optional<std::size_t> next_kc;
      if (adapt) {
        const double l = log.val_loss.value_or(log.running_loss);
        if (auto c = flex_update(flex, l, st.c_ratio, st.K, st.N, cfg.flex)) {
          st.c_ratio = *c;
          next_kc = selection_candidate_count(st, *c);
          log.resized = true;
        }
      } else if (spec.phase == Phase::Retrain) {
        for (const ResizeStep& step : spec.resize) {
          if (step.rotation == st.rotation_count + 1) {
            next_kc = step.candidate_count;
            log.resized = true;
          }
        }
      }
      regrow(st, mlp, rng, next_kc);

      log.rotation = st.rotation_count;
      log.min_top_entry = min_top_entry(st);
      log.candidate_count = st.K_c;
      log.c_ratio = st.c_ratio;
      out.logs.push_back(log);
      if (hooks.on_rotation) hooks.on_rotation(st, mlp, log);

      history.rotations.push_back(
          RotationRecord{st.rotation_count, log.val_loss, hash_index_set(st.top), out.epochs});
      if (spec.phase == Phase::Retrain) {
        if (st.rotation_count >= spec.fixed_rotations) {
          done = true;
          break;
        }
      } else if (spec.stopping->kind != StoppingKind::Epochs) {
        out.reason = stop_reason(*spec.stopping, history);
        if (out.reason != StopReason::None) {
          done = true;
          break;
        }
      }
    }
    ++out.epochs;
    history.epochs_completed = out.epochs;
    if (done) break;
    if (spec.phase == Phase::Search && spec.stopping->kind == StoppingKind::Epochs &&
        should_stop(*spec.stopping, history)) {
      out.reason = StopReason::Epochs;
      break;
    }
    if (spec.epoch_cap > 0 && out.epochs >= spec.epoch_cap) {
      out.reason = StopReason::Epochs;
      break;
    }
  }

  // A run that stopped before any full window still owes K features.
  if (st.top.size() < st.K && st.mb_count > 0) {
    relative_change_scores(st, mlp.first_weights());
    select_top(st);
  }
  out.state = std::move(st);
  out.mlp = std::move(mlp);
  return out;
}

}  // namespace detail

/// Runs EntryPrune on `train` rows of a standardized dataset.
///
/// With validation stopping, `train` is split again (val_fraction held out); the
/// search stops on the validation rules and a second run on all of `train` then
/// repeats the same number of rotations. The features selected by that second run
/// are returned.
inline SelectionResult run_entryprune(const Dataset& data, std::span<const std::size_t> train,
                                      const SelectionConfig& cfg, const StoppingConfig& stopping,
                                      const RunHooks& hooks = {}, std::size_t epoch_cap = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate(data.num_features());
  stopping.validate();
  if (train.empty()) throw ConfigError("training partition is empty");

  SelectionResult result;
  const bool use_val = stopping.kind == StoppingKind::Validation;

  detail::PhaseSpec search;
  search.phase = Phase::Search;
  search.stopping = stopping;
  search.epoch_cap = epoch_cap;
  std::pair<IndexList, IndexList> parts;
  if (use_val) {
    parts = split_indices(train, 1.0 - cfg.val_fraction, cfg.seed ^ 0x5EEDF00DULL);
    if (parts.first.empty() || parts.second.empty()) {
      throw ConfigError("validation stopping needs enough rows for a train/validation split");
    }
    search.train = parts.first;
    search.val = parts.second;
  } else {
    search.train = train;
  }

  detail::PhaseOutcome outcome = detail::run_phase(data, cfg, search, hooks);
  result.search_rotations = outcome.state.rotation_count;
  result.stop_reason = outcome.reason;
  result.total_epochs = outcome.epochs;
  result.history = outcome.logs;

  if (use_val) {
    std::optional<std::pair<std::size_t, std::size_t>> kc;
    if (cfg.flex.enabled) kc = std::make_pair(outcome.initial_kc, outcome.state.K_c);
    const RetrainPlan plan = plan_final_retrain(result.search_rotations, kc);

    detail::PhaseSpec retrain;
    retrain.phase = Phase::Retrain;
    retrain.train = train;
    retrain.fixed_rotations = plan.rotations;
    retrain.resize = plan.resize;
    outcome = detail::run_phase(data, cfg, retrain, hooks);
    result.total_epochs += outcome.epochs;
    result.history.insert(result.history.end(), outcome.logs.begin(), outcome.logs.end());
  }

  const SelectionState& st = outcome.state;
  if (st.top.size() != st.K) throw ConfigError("selection ended with fewer than K scored features");
  result.selected = st.top;
  result.entry_scores = st.e;
  result.final_input = st.input;
  result.final_network = std::move(outcome.mlp);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace entryprune
