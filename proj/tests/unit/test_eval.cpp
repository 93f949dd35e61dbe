#include <gtest/gtest.h>

#include <limits>
#include <map>

#include "entryprune/eval.hpp"

using namespace entryprune;

namespace {

Dataset gaussian_classes(std::size_t n, std::size_t N, int classes, double shift, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(N));
  d.y.resize(n);
  d.num_classes = static_cast<std::size_t>(classes);
  for (std::size_t i = 0; i < n; ++i) {
    d.y[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
    for (std::size_t j = 0; j < N; ++j) {
      const double mu = j < 3 ? shift * std::cos(static_cast<double>(d.y[i] * (j + 1))) : 0.0;
      d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mu + normal(eng);
    }
  }
  return d;
}

// O(n^2) reference: full sort of (distance, index) per query, vote, smallest class on ties.
double knn_oracle(const Dataset& tr, const Dataset& te, const IndexList& cols, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t q = 0; q < te.num_samples(); ++q) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < tr.num_samples(); ++i) {
      double s = 0.0;
      for (std::size_t c : cols) {
        const double diff = te.X(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(c)) -
                            tr.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        s += diff * diff;
      }
      d.push_back({s, i});
    }
    std::sort(d.begin(), d.end());
    std::map<int, int> votes;
    for (std::size_t j = 0; j < k; ++j) votes[tr.y[d[j].second]]++;
    int best = -1, best_n = -1;
    for (auto [cls, n] : votes) {
      if (n > best_n) {
        best = cls;
        best_n = n;
      }
    }
    hits += best == te.y[q];
  }
  return static_cast<double>(hits) / static_cast<double>(te.num_samples());
}

Dataset poison_except(const Dataset& d, const IndexList& keep) {
  Dataset p = d;
  for (Eigen::Index c = 0; c < p.X.cols(); ++c) {
    if (!std::binary_search(keep.begin(), keep.end(), static_cast<std::size_t>(c))) {
      p.X.col(c).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return p;
}

}  // namespace

TEST(Knn, MatchesBruteForceOracle) {
  const Dataset tr = gaussian_classes(300, 6, 4, 1.0, 1);
  const Dataset te = gaussian_classes(120, 6, 4, 1.0, 2);
  const FeatureSet fs(IndexList{0, 2, 5});
  for (std::size_t k : {1u, 3u, 4u}) {
    EXPECT_DOUBLE_EQ(knn_accuracy(tr, te, fs, k).mean(), knn_oracle(tr, te, fs.indices, k));
  }
}

TEST(Knn, InvariantToTrainRowOrder) {
  const Dataset tr = gaussian_classes(200, 5, 3, 1.0, 3);
  const Dataset te = gaussian_classes(80, 5, 3, 1.0, 4);
  IndexList perm(200);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
  const Dataset shuffled = subset_rows(tr, perm);
  const FeatureSet fs(IndexList{0, 1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(knn_accuracy(tr, te, fs).mean(), knn_accuracy(shuffled, te, fs).mean());
}

TEST(Knn, VoteTieGoesToSmallestClass) {
  Dataset tr;
  tr.X.resize(2, 1);
  tr.X << 1.0, -1.0;
  tr.y = {1, 0};
  tr.num_classes = 2;
  Dataset te;
  te.X.resize(1, 1);
  te.X << 0.0;
  te.y = {0};
  te.num_classes = 2;
  EXPECT_DOUBLE_EQ(knn_accuracy(tr, te, FeatureSet(IndexList{0}), 2).mean(), 1.0);
}

TEST(Knn, ConsumesOnlySelectedColumns) {
  const Dataset tr = gaussian_classes(150, 8, 3, 1.0, 6);
  const Dataset te = gaussian_classes(60, 8, 3, 1.0, 7);
  const IndexList keep{1, 4, 6};
  const FeatureSet fs(keep);
  const double clean = knn_accuracy(tr, te, fs).mean();
  EXPECT_DOUBLE_EQ(knn_accuracy(poison_except(tr, keep), poison_except(te, keep), fs).mean(), clean);
}

TEST(Linear, SeparableTwoFeatureDataIsPerfect) {
  Dataset d;
  d.X.resize(40, 2);
  d.y.resize(40);
  d.num_classes = 2;
  for (int i = 0; i < 40; ++i) {
    const int cls = i % 2;
    d.X(i, 0) = (cls ? 2.0 : -2.0) + 0.1 * (i % 5);
    d.X(i, 1) = 0.3 * (i % 7) - 1.0;
    d.y[static_cast<std::size_t>(i)] = cls;
  }
  EXPECT_DOUBLE_EQ(linear_classifier_accuracy(d, d, FeatureSet(IndexList{0, 1})).mean(), 1.0);
}

TEST(Linear, UninformativeInputPredictsMajorityClass) {
  Dataset d;
  d.X = DataMatrix::Constant(30, 3, 0.7);
  d.y.assign(30, 0);
  for (int i = 0; i < 10; ++i) d.y[static_cast<std::size_t>(i)] = 1;
  d.num_classes = 2;
  EXPECT_NEAR(linear_classifier_accuracy(d, d, FeatureSet(IndexList{0, 1, 2})).mean(), 20.0 / 30.0, 1e-12);
}

TEST(Linear, ConsumesOnlySelectedColumns) {
  const Dataset tr = gaussian_classes(150, 8, 3, 1.0, 8);
  const Dataset te = gaussian_classes(60, 8, 3, 1.0, 9);
  const IndexList keep{0, 2, 7};
  const FeatureSet fs(keep);
  const auto clean = linear_classifier_accuracy(tr, te, fs);
  const auto poisoned = linear_classifier_accuracy(poison_except(tr, keep), poison_except(te, keep), fs);
  EXPECT_DOUBLE_EQ(poisoned.mean(), clean.mean());
  EXPECT_TRUE(std::isfinite(poisoned.final_loss));
}

TEST(Knn, InformativeFeaturesBeatNoiseFeaturesOnToyData) {
  ToySpec spec;
  spec.n_samples = 2000;
  const Dataset raw = make_toy(spec);
  const Split s = make_split(2000, {}, 0);
  const Dataset d = standardize(raw, s.train);
  const Dataset tr = subset_rows(d, s.train), te = subset_rows(d, s.test);
  IndexList informative(12), noise(8);
  std::iota(informative.begin(), informative.end(), std::size_t{0});
  std::iota(noise.begin(), noise.end(), std::size_t{12});
  const double acc_noise = knn_accuracy(tr, te, FeatureSet(noise)).mean();
  EXPECT_NEAR(acc_noise, 0.5, 0.1);
  EXPECT_GT(knn_accuracy(tr, te, FeatureSet(informative)).mean(), acc_noise + 0.10);
}

TEST(Evaluators, OutOfRangeOrEmptySetRejected) {
  const Dataset d = gaussian_classes(20, 4, 2, 1.0, 10);
  EXPECT_THROW(knn_accuracy(d, d, FeatureSet(IndexList{4})), ValidationError);
  EXPECT_THROW(linear_classifier_accuracy(d, d, FeatureSet(IndexList{})), ValidationError);
  EXPECT_THROW(FeatureSet(IndexList{1, 1}), ValidationError);
}

TEST(Jaccard, HandCounts) {
  EXPECT_DOUBLE_EQ(jaccard(FeatureSet(IndexList{1, 2}), FeatureSet(IndexList{2, 3})), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(jaccard(FeatureSet(IndexList{1, 2}), FeatureSet(IndexList{2, 1})), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(FeatureSet(IndexList{1, 2}), FeatureSet(IndexList{3, 4})), 0.0);
  EXPECT_DOUBLE_EQ(jaccard(FeatureSet{}, FeatureSet{}), 1.0);
}

TEST(Jaccard, SymmetricBoundedAndOneOnlyForEqualSets) {
  std::mt19937_64 eng(11);
  for (int i = 0; i < 500; ++i) {
    IndexList a, b;
    for (std::size_t f = 0; f < 12; ++f) {
      if (eng() % 2) a.push_back(f);
      if (eng() % 2) b.push_back(f);
    }
    const FeatureSet A(a), B(b);
    const double j = jaccard(A, B);
    EXPECT_EQ(j, jaccard(B, A));
    EXPECT_GE(j, 0.0);
    EXPECT_LE(j, 1.0);
    EXPECT_EQ(j == 1.0, a == b);
  }
}

TEST(Stability, PairwiseMean) {
  const std::vector<FeatureSet> same(20, FeatureSet(IndexList{3, 5, 8}));
  EXPECT_DOUBLE_EQ(stability(same), 1.0);
  const std::vector<FeatureSet> tri{FeatureSet(IndexList{1, 2}), FeatureSet(IndexList{2, 3}),
                                    FeatureSet(IndexList{1, 3})};
  EXPECT_DOUBLE_EQ(stability(tri), 1.0 / 3.0);
  EXPECT_THROW(stability(std::vector<FeatureSet>{same[0]}), ValidationError);
}

TEST(RandomBaseline, ExpectedOverlapOfRandomSubsets) {
  const auto sets = random_baseline(784, 50, 12, 200);
  double total = 0.0;
  for (std::size_t i = 0; i < 200; i += 2) total += jaccard(sets[i], sets[i + 1]);
  // E|a n b| = K^2 / N = 3.19, so JI ~ 3.19 / (100 - 3.19)
  EXPECT_NEAR(total / 100.0, 3.189 / 96.81, 0.01);
}

TEST(RandomBaseline, SeededAndValidated) {
  const auto a = random_baseline(30, 5, 7, 3), b = random_baseline(30, 5, 7, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].indices, b[i].indices);
  EXPECT_NE(a[0].indices, a[1].indices);
  EXPECT_THROW(random_baseline(30, 30, 7, 1), ConfigError);
}

TEST(EvalReport, RecordAndMoments) {
  EvalReport r;
  r.learner = "knn";
  r.K = 5;
  r.runs = {0.5, 0.7};
  EXPECT_DOUBLE_EQ(r.mean(), 0.6);
  EXPECT_NEAR(r.sd(), std::sqrt(0.02), 1e-15);
  EXPECT_EQ(r.to_record(), "learner=knn K=5 mean=0.600000 sd=0.141421 runs=0.500000,0.700000");
}
