#pragma once

// Downstream scoring of feature sets and selection-stability metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "entryprune/data.hpp"
#include "entryprune/errors.hpp"
#include "entryprune/rng.hpp"
#include "entryprune/selector.hpp"

namespace entryprune {

/// A sorted, duplicate-free set of feature indices.
struct FeatureSet {
  IndexList indices;
  std::string method;
  std::uint64_t seed = 0;

  FeatureSet() = default;
  explicit FeatureSet(IndexList idx, std::string method_name = {}, std::uint64_t run_seed = 0)
      : indices(std::move(idx)), method(std::move(method_name)), seed(run_seed) {
    std::sort(indices.begin(), indices.end());
    if (std::adjacent_find(indices.begin(), indices.end()) != indices.end()) {
      throw ValidationError("feature set contains duplicate indices");
    }
  }

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

inline FeatureSet all_features(std::size_t N) {
  IndexList idx(N);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return FeatureSet(std::move(idx), "all");
}

struct EvalReport {
  std::string learner;
  std::size_t K = 0;
  std::vector<double> runs;
  double final_loss = 0.0;  // linear learner only

  double mean() const {
    if (runs.empty()) return 0.0;
    return std::accumulate(runs.begin(), runs.end(), 0.0) / static_cast<double>(runs.size());
  }
  /// Sample SD (n - 1); zero for a single run.
  double sd() const {
    if (runs.size() < 2) return 0.0;
    const double m = mean();
    double ss = 0.0;
    for (double r : runs) ss += (r - m) * (r - m);
    return std::sqrt(ss / static_cast<double>(runs.size() - 1));
  }

  /// Merges single-run reports into one multi-run report.
  static EvalReport combine(const std::vector<EvalReport>& parts) {
    EvalReport out;
    for (const auto& p : parts) {
      out.learner = p.learner;
      out.K = p.K;
      out.runs.insert(out.runs.end(), p.runs.begin(), p.runs.end());
      out.final_loss = p.final_loss;
    }
    return out;
  }

  std::string to_record() const {
    std::ostringstream os;
    os.precision(6);
    os << "learner=" << learner << " K=" << K << " mean=" << std::fixed << mean() << " sd=" << sd() << " runs=";
    for (std::size_t i = 0; i < runs.size(); ++i) os << (i ? "," : "") << runs[i];
    return os.str();
  }
};

namespace detail {

inline void check_feature_set(const FeatureSet& fs, std::size_t N) {
  if (fs.empty()) throw ValidationError("feature set is empty");
  if (fs.indices.back() >= N) {
    throw ValidationError("feature index " + std::to_string(fs.indices.back()) + " outside dataset of " +
                          std::to_string(N) + " features");
  }
}

inline DataMatrix columns(const Dataset& d, const FeatureSet& fs) {
  IndexList rows(d.num_samples());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return gather(d.X, rows, fs.indices);
}

}  // namespace detail

/// k-nearest-neighbour accuracy on `test` using only the columns in `fs`.
/// Euclidean distance; neighbours ordered by (distance, train row); vote ties go
/// to the smallest class id.
inline EvalReport knn_accuracy(const Dataset& train, const Dataset& test, const FeatureSet& fs, std::size_t k = 3) {
  detail::check_feature_set(fs, train.num_features());
  if (k < 1 || k > train.num_samples()) throw ValidationError("knn: k must be in [1, train size]");
  const DataMatrix A = detail::columns(train, fs);
  const DataMatrix B = detail::columns(test, fs);
  const Eigen::VectorXd a2 = A.rowwise().squaredNorm();
  const std::size_t classes = std::max(train.num_classes, test.num_classes);

  std::size_t hits = 0;
  constexpr Eigen::Index kBlock = 256;
  std::vector<std::pair<double, std::size_t>> order(train.num_samples());
  std::vector<std::size_t> votes(classes);
  for (Eigen::Index start = 0; start < B.rows(); start += kBlock) {
    const Eigen::Index len = std::min(kBlock, B.rows() - start);
    const auto block = B.middleRows(start, len);
    // |a - b|^2 = |a|^2 + |b|^2 - 2 a.b, clamped at zero against rounding.
    const Eigen::MatrixXd cross = A * block.transpose();
    const Eigen::VectorXd b2 = block.rowwise().squaredNorm();
    for (Eigen::Index j = 0; j < len; ++j) {
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        const double d2 = std::max(0.0, a2(i) + b2(j) - 2.0 * cross(i, j));
        order[static_cast<std::size_t>(i)] = {d2, static_cast<std::size_t>(i)};
      }
      std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end());
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
      std::fill(votes.begin(), votes.end(), 0);
      for (std::size_t n = 0; n < k; ++n) ++votes[static_cast<std::size_t>(train.y[order[n].second])];
      const auto pred = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      if (pred == test.y[static_cast<std::size_t>(start + j)]) ++hits;
    }
  }
  EvalReport r;
  r.learner = "knn";
  r.K = fs.size();
  r.runs.push_back(test.num_samples() ? static_cast<double>(hits) / static_cast<double>(test.num_samples()) : 0.0);
  return r;
}

struct LinearConfig {
  std::size_t epochs = 300;
  double learning_rate = 1.0;  // multiple of 1 / Lipschitz constant of the loss gradient
  double l2 = 1e-3;
};

namespace detail {

/// Largest eigenvalue of [A 1]^T [A 1] / n by power iteration.
inline double gram_spectral_norm(const DataMatrix& A, std::size_t iters = 30) {
  const auto n = static_cast<double>(A.rows());
  Eigen::VectorXd v = Eigen::VectorXd::Ones(A.cols() + 1);
  double lambda = 0.0;
  for (std::size_t i = 0; i < iters; ++i) {
    v /= v.norm();
    const Eigen::VectorXd Av = A * v.head(A.cols()) + Eigen::VectorXd::Constant(A.rows(), v(A.cols()));
    Eigen::VectorXd next(A.cols() + 1);
    next.head(A.cols()) = A.transpose() * Av / n;
    next(A.cols()) = Av.sum() / n;
    lambda = v.dot(next);
    v = next;
    if (v.norm() == 0.0) break;
  }
  return std::max(lambda, 1e-12);
}

}  // namespace detail

/// One-vs-rest linear classifier on the columns in `fs`, trained by full-batch
/// gradient descent on the L2-penalized squared hinge loss. Weights start at zero,
/// so the result is deterministic. Prediction ties go to the smallest class id.
inline EvalReport linear_classifier_accuracy(const Dataset& train, const Dataset& test, const FeatureSet& fs,
                                             const LinearConfig& cfg = {}) {
  detail::check_feature_set(fs, train.num_features());
  const DataMatrix A = detail::columns(train, fs);
  const DataMatrix B = detail::columns(test, fs);
  const auto n = static_cast<double>(A.rows());
  const auto C = static_cast<Eigen::Index>(std::max(train.num_classes, test.num_classes));
  const Eigen::Index D = A.cols();

  // Targets in {-1, +1}, one column per class.
  Eigen::MatrixXd Y = Eigen::MatrixXd::Constant(A.rows(), C, -1.0);
  for (Eigen::Index i = 0; i < A.rows(); ++i) Y(i, train.y[static_cast<std::size_t>(i)]) = 1.0;

  // The squared hinge has a 2 * lambda_max(Gram)-Lipschitz gradient; step below 1/L.
  const double step = cfg.learning_rate / (2.0 * detail::gram_spectral_norm(A) * 1.05 + cfg.l2);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(D, C);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(C);
  double loss = 0.0;
  for (std::size_t it = 0; it < cfg.epochs; ++it) {
    Eigen::MatrixXd margin = A * W;
    margin.rowwise() += b;
    // slack = max(0, 1 - y f); d/df slack^2 = -2 y slack
    const Eigen::MatrixXd slack = (1.0 - (Y.array() * margin.array())).max(0.0).matrix();
    loss = slack.squaredNorm() / n + 0.5 * cfg.l2 * W.squaredNorm();
    const Eigen::MatrixXd dF = (-2.0 * Y.array() * slack.array()).matrix() / n;
    const Eigen::MatrixXd gW = A.transpose() * dF + cfg.l2 * W;
    const Eigen::RowVectorXd gb = dF.colwise().sum();
    W -= step * gW;
    b -= step * gb;
  }

  Eigen::MatrixXd scores = B * W;
  scores.rowwise() += b;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < C; ++c) {
      if (scores(i, c) > scores(i, best)) best = c;
    }
    if (static_cast<int>(best) == test.y[static_cast<std::size_t>(i)]) ++hits;
  }
  EvalReport r;
  r.learner = "linear";
  r.K = fs.size();
  r.final_loss = loss;
  r.runs.push_back(B.rows() ? static_cast<double>(hits) / static_cast<double>(B.rows()) : 0.0);
  return r;
}

/// |a ∩ b| / |a ∪ b|; two empty sets give 1.
inline double jaccard(const FeatureSet& a, const FeatureSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  IndexList inter;
  std::set_intersection(a.indices.begin(), a.indices.end(), b.indices.begin(), b.indices.end(),
                        std::back_inserter(inter));
  const std::size_t uni = a.size() + b.size() - inter.size();
  return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

/// Mean Jaccard index over all unordered pairs.
inline double stability(std::span<const FeatureSet> sets) {
  if (sets.size() < 2) throw ValidationError("stability needs at least two feature sets");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      total += jaccard(sets[i], sets[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

/// `runs` uniform random K-subsets of [0, N).
inline std::vector<FeatureSet> random_baseline(std::size_t N, std::size_t K, std::uint64_t seed, std::size_t runs) {
  if (K >= N) throw ConfigError("random baseline requires K < N");
  SeededRng rng(seed);
  std::vector<FeatureSet> out;
  out.reserve(runs);
  for (std::size_t r = 0; r < runs; ++r) {
    out.emplace_back(draw_candidates(N, {}, K, rng), "random", seed);
  }
  return out;
}

struct GroupStats {
  double mean = 0.0;
  double sd = 0.0;  // population SD
  std::size_t count = 0;

  static GroupStats of(std::span<const double> xs) {
    GroupStats g;
    g.count = xs.size();
    if (xs.empty()) return g;
    g.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - g.mean) * (x - g.mean);
    g.sd = std::sqrt(ss / static_cast<double>(xs.size()));
    return g;
  }
};

/// sqrt((sd_a^2 + sd_b^2) / 2)
inline double pooled_sd(const GroupStats& a, const GroupStats& b) {
  return std::sqrt(0.5 * (a.sd * a.sd + b.sd * b.sd));
}

struct ProbeTable {
  std::map<FeatureGroup, GroupStats> gradient;     // max |G1| of a fresh candidate row
  std::map<FeatureGroup, GroupStats> entry_score;  // final entry scores
  std::map<FeatureGroup, std::vector<double>> gradient_samples;
  IndexList selected;
};

inline const char* to_string(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::Linear: return "linear";
    case FeatureGroup::Interaction: return "interaction";
    case FeatureGroup::Noise: return "noise";
  }
  return "?";
}

/// Runs EntryPrune on a toy dataset and records, on the first batch after each
/// regrowth, the largest absolute first-layer gradient of every fresh candidate
/// row: the quantity gradient-based regrowth would rank candidates by. Each
/// observation is normalized by the mean over that batch's candidates, so the
/// table compares groups on a common scale across training. Final entry scores
/// are aggregated per group as well.
inline ProbeTable gradient_probe(const Dataset& data, std::span<const std::size_t> train, const ToySpec& groups,
                                 const SelectionConfig& cfg, const StoppingConfig& stopping) {
  ProbeTable table;
  RunHooks hooks;
  hooks.on_batch = [&](const SelectionState& st, const MlpState&, const LossAndGrads& lg) {
    if (st.mb_count != 0) return;
    const Matrix& g = lg.first_layer();
    std::vector<std::pair<std::size_t, double>> obs;
    double total = 0.0;
    for (std::size_t f : st.cands) {
      const double v = g.row(static_cast<Eigen::Index>(st.slot(f))).cwiseAbs().maxCoeff();
      obs.emplace_back(f, v);
      total += v;
    }
    if (obs.empty() || total <= 0.0) return;
    const double mean = total / static_cast<double>(obs.size());
    for (auto [f, v] : obs) table.gradient_samples[groups.group_of(f)].push_back(v / mean);
  };
  SelectionResult r = run_entryprune(data, train, cfg, stopping, hooks);
  table.selected = r.selected;

  std::map<FeatureGroup, std::vector<double>> entries;
  for (std::size_t f = 0; f < r.entry_scores.size(); ++f) {
    if (has_entry(r.entry_scores[f])) entries[groups.group_of(f)].push_back(r.entry_scores[f]);
  }
  for (auto g : {FeatureGroup::Linear, FeatureGroup::Interaction, FeatureGroup::Noise}) {
    table.gradient[g] = GroupStats::of(table.gradient_samples[g]);
    table.entry_score[g] = GroupStats::of(entries[g]);
  }
  return table;
}

}  // namespace entryprune
