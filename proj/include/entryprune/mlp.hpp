#pragma once

// Dense ReLU multilayer perceptron with softmax cross-entropy loss, exact
// backpropagation and Adam. Weights are stored fan_in x fan_out so that row i of
// the first weight matrix holds the outgoing weights of input slot i.

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "entryprune/errors.hpp"
#include "entryprune/rng.hpp"

namespace entryprune {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Magnitude bound of freshly drawn candidate weights.
inline constexpr double kCandidateInitScale = 1e-8;

struct MlpArchitecture {
  std::size_t input_rows = 1;
  std::vector<std::size_t> hidden_sizes{100};
  std::size_t output_classes = 2;

  void validate() const {
    if (input_rows < 1) throw ConfigError("input_rows must be >= 1");
    for (std::size_t h : hidden_sizes) {
      if (h < 1) throw ConfigError("every hidden size must be >= 1");
    }
    if (output_classes < 2) throw ConfigError("output_classes must be >= 2");
  }

  std::size_t num_layers() const { return hidden_sizes.size() + 1; }

  std::size_t fan_in(std::size_t layer) const {
    return layer == 0 ? input_rows : hidden_sizes[layer - 1];
  }
  std::size_t fan_out(std::size_t layer) const {
    return layer == hidden_sizes.size() ? output_classes : hidden_sizes[layer];
  }
};

struct OptimizerConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 1024;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in (0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }
};

/// One affine layer. Gradients and Adam moments reuse this shape.
struct Layer {
  Matrix weight;  // fan_in x fan_out
  Vector bias;    // fan_out

  static Layer zeros(std::size_t fan_in, std::size_t fan_out) {
    return Layer{Matrix::Zero(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out)),
                 Vector::Zero(static_cast<Eigen::Index>(fan_out))};
  }
};

using Gradients = std::vector<Layer>;

struct AdamMoments {
  std::vector<Layer> m;
  std::vector<Layer> v;
  long long t = 0;
};

struct MlpState {
  MlpArchitecture arch;
  std::vector<Layer> layers;
  AdamMoments adam;

  const Matrix& first_weights() const { return layers.front().weight; }
  Matrix& first_weights() { return layers.front().weight; }
};

inline std::vector<Layer> zero_layers_like(const std::vector<Layer>& layers) {
  std::vector<Layer> out;
  out.reserve(layers.size());
  for (const Layer& l : layers) {
    out.push_back(Layer::zeros(static_cast<std::size_t>(l.weight.rows()),
                               static_cast<std::size_t>(l.weight.cols())));
  }
  return out;
}

/// Zeroes both Adam moments and the step counter.
inline void reset_optimizer(MlpState& state) {
  state.adam.m = zero_layers_like(state.layers);
  state.adam.v = zero_layers_like(state.layers);
  state.adam.t = 0;
}

/// A network with all parameters zero. Mostly useful in tests.
inline MlpState make_zero_mlp(const MlpArchitecture& arch) {
  arch.validate();
  MlpState state;
  state.arch = arch;
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    state.layers.push_back(Layer::zeros(arch.fan_in(l), arch.fan_out(l)));
  }
  reset_optimizer(state);
  return state;
}

/// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases for every layer.
inline MlpState make_mlp(const MlpArchitecture& arch, SeededRng& rng) {
  MlpState state = make_zero_mlp(arch);
  auto& engine = rng.stream(Stream::WeightInit);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(arch.fan_in(l)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix& w = state.layers[l].weight;
    // Column-major storage; fill row by row so the draw order matches the row layout.
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(engine);
    }
  }
  return state;
}

/// Per-layer activations recorded by forward(). `inputs[l]` is the input of layer l,
/// `pre[l]` its affine output before the ReLU (the last entry is the logits).
struct ForwardCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
};

struct ForwardResult {
  Matrix logits;  // batch x classes
  ForwardCache cache;
};

inline void check_batch_shape(const MlpState& state, const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != state.arch.input_rows) {
    throw ShapeError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                     std::to_string(state.arch.input_rows));
  }
}

inline ForwardResult forward(const MlpState& state, const Matrix& batch) {
  check_batch_shape(state, batch);
  ForwardResult out;
  const std::size_t L = state.layers.size();
  out.cache.inputs.reserve(L);
  out.cache.pre.reserve(L);
  Matrix act = batch;
  for (std::size_t l = 0; l < L; ++l) {
    const Layer& layer = state.layers[l];
    Matrix z = act * layer.weight;
    z.rowwise() += layer.bias.transpose();
    out.cache.inputs.push_back(std::move(act));
    if (l + 1 < L) {
      act = z.cwiseMax(0.0);
    }
    out.cache.pre.push_back(std::move(z));
  }
  out.logits = out.cache.pre.back();
  return out;
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// Mean softmax cross-entropy of `logits` against `labels`.
inline double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

inline void check_labels(const MlpState& state, const Matrix& batch, std::span<const int> labels) {
  if (batch.rows() == 0) throw ValidationError("batch must be nonempty");
  if (labels.size() != static_cast<std::size_t>(batch.rows())) {
    throw ShapeError("label count does not match batch rows");
  }
  const int classes = static_cast<int>(state.arch.output_classes);
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;

  /// Gradient of the loss with respect to the first-layer weights.
  const Matrix& first_layer() const { return grads.front().weight; }
};

inline LossAndGrads loss_and_grads(const MlpState& state, const Matrix& batch, std::span<const int> labels) {
  check_batch_shape(state, batch);
  check_labels(state, batch, labels);
  ForwardResult fwd = forward(state, batch);
  const auto b = static_cast<double>(batch.rows());

  LossAndGrads out;
  out.loss = cross_entropy(fwd.logits, labels);

  Matrix delta = softmax(fwd.logits);
  for (Eigen::Index i = 0; i < delta.rows(); ++i) delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  delta /= b;

  const std::size_t L = state.layers.size();
  out.grads.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    const Matrix& input = fwd.cache.inputs[l];
    out.grads[l].weight = input.transpose() * delta;
    out.grads[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = delta * state.layers[l].weight.transpose();
      const Matrix& z = fwd.cache.pre[l - 1];
      delta = (back.array() * (z.array() > 0.0).cast<double>()).matrix();
    }
  }
  return out;
}

/// One Adam update with bias correction. Increments t before use.
inline void adam_step(MlpState& state, const Gradients& grads, const OptimizerConfig& cfg) {
  if (grads.size() != state.layers.size()) throw ShapeError("gradient layer count mismatch");
  if (state.adam.m.size() != state.layers.size()) reset_optimizer(state);
  state.adam.t += 1;
  const double t = static_cast<double>(state.adam.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double lr = cfg.learning_rate;
  const double eps = cfg.epsilon;

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    Layer& p = state.layers[l];
    const Layer& g = grads[l];
    if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() ||
        g.bias.size() != p.bias.size()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
    }
    update(p.weight, state.adam.m[l].weight, state.adam.v[l].weight, g.weight);
    update(p.bias, state.adam.m[l].bias, state.adam.v[l].bias, g.bias);
  }
}

/// Redraws the listed first-layer rows from Uniform(-1e-8, 1e-8). Other parameters
/// and the optimizer state are left alone.
inline void reinit_rows(MlpState& state, std::span<const std::size_t> rows, SeededRng& rng) {
  Matrix& w = state.first_weights();
  for (std::size_t r : rows) {
    if (r >= static_cast<std::size_t>(w.rows())) {
      throw ValidationError("row " + std::to_string(r) + " outside first layer of " +
                            std::to_string(w.rows()) + " rows");
    }
  }
  std::uniform_real_distribution<double> dist(-kCandidateInitScale, kCandidateInitScale);
  auto& engine = rng.stream(Stream::WeightInit);
  for (std::size_t r : rows) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(static_cast<Eigen::Index>(r), c) = dist(engine);
  }
}

/// Fraction of rows whose argmax logit equals the label.
inline double predict_accuracy(const MlpState& state, const Matrix& batch, std::span<const int> labels) {
  if (batch.rows() == 0) return 0.0;
  const Matrix logits = forward(state, batch).logits;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

inline bool all_finite(const MlpState& state) {
  for (const Layer& l : state.layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

}  // namespace entryprune
