#pragma once

// Dataset container, CSV and IDX readers, train-partition standardization,
// seeded splits, epoch batching, and the linear / XOR-interaction / noise toy
// generator.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "entryprune/errors.hpp"
#include "entryprune/rng.hpp"

namespace entryprune {

using DataMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexList = std::vector<std::size_t>;

struct ImageShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t channels = 1;

  std::size_t pixels() const { return rows * cols * channels; }
};

struct Dataset {
  DataMatrix X;  // n x N
  std::vector<int> y;
  std::size_t num_classes = 0;
  std::vector<std::string> feature_names;
  std::optional<ImageShape> image_shape;

  std::size_t num_samples() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t num_features() const { return static_cast<std::size_t>(X.cols()); }

  void validate() const {
    if (X.rows() < 2) throw DataError("dataset needs at least 2 samples");
    if (y.size() != static_cast<std::size_t>(X.rows())) throw DataError("label count does not match rows");
    if (!X.allFinite()) throw DataError("dataset contains NaN or Inf");
    for (int label : y) {
      if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
        throw DataError("label outside [0, num_classes)");
      }
    }
    if (image_shape && image_shape->pixels() != num_features()) {
      throw DataError("image shape does not match feature count");
    }
  }
};

/// Rows `idx` of the dataset, in the given order.
inline Dataset subset_rows(const Dataset& d, std::span<const std::size_t> idx) {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(idx.size()), d.X.cols());
  out.y.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = d.X.row(static_cast<Eigen::Index>(idx[i]));
    out.y[i] = d.y[idx[i]];
  }
  out.num_classes = d.num_classes;
  out.feature_names = d.feature_names;
  out.image_shape = d.image_shape;
  return out;
}

/// Rows `rows` restricted to columns `cols`, as a dense batch.
template <typename Out = DataMatrix>
Out gather(const DataMatrix& X, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Out out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = X.data() + static_cast<std::ptrdiff_t>(rows[i]) * X.cols();
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = src[cols[j]];
    }
  }
  return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

/// Splits one CSV record, honouring double-quoted fields.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  for (auto& cell : cells) cell = std::string(trim(cell));
  return cells;
}

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("truncated IDX header in " + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace detail

/// Reads a comma-separated numeric table. `label_column` indexes the label column;
/// negative values count from the end (-1 is the last column). A first row with a
/// non-numeric feature cell is treated as a header. Labels are remapped to
/// contiguous ids in sorted order (numeric order if every label parses as a number).
inline Dataset load_csv(const std::string& path, int label_column = -1) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);

  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    rows.push_back(detail::split_csv_line(line));
  }
  if (rows.empty()) throw DataError(path + ": empty file");

  const std::size_t width = rows.front().size();
  if (width < 2) throw DataError(path + ": need at least one feature and one label column");
  const long lc = label_column < 0 ? static_cast<long>(width) + label_column : label_column;
  if (lc < 0 || lc >= static_cast<long>(width)) {
    throw ConfigError(path + ": label column " + std::to_string(label_column) + " does not exist");
  }
  const auto label_idx = static_cast<std::size_t>(lc);

  std::vector<std::string> header;
  {
    const auto& first = rows.front();
    for (std::size_t c = 0; c < width; ++c) {
      if (c != label_idx && !detail::parse_double(first[c])) {
        header = first;
        rows.erase(rows.begin());
        break;
      }
    }
  }
  if (rows.empty()) throw DataError(path + ": no data rows");

  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  std::vector<std::string> raw_labels;
  raw_labels.reserve(rows.size());
  const std::size_t line_offset = header.empty() ? 1 : 2;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    if (cells.size() != width) {
      throw DataError(path + ": row " + std::to_string(r + line_offset) + " has " +
                      std::to_string(cells.size()) + " cells, expected " + std::to_string(width));
    }
    std::size_t out_col = 0;
    for (std::size_t c = 0; c < width; ++c) {
      if (c == label_idx) continue;
      auto v = detail::parse_double(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(path + ": non-numeric cell '" + cells[c] + "' at row " +
                        std::to_string(r + line_offset) + ", column " + std::to_string(c + 1));
      }
      d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(out_col++)) = *v;
    }
    raw_labels.push_back(cells[label_idx]);
  }

  bool numeric = true;
  for (const auto& l : raw_labels) numeric = numeric && detail::parse_double(l).has_value();
  std::vector<std::string> uniq = raw_labels;
  if (numeric) {
    std::sort(uniq.begin(), uniq.end(), [](const std::string& a, const std::string& b) {
      return *detail::parse_double(a) < *detail::parse_double(b);
    });
    uniq.erase(std::unique(uniq.begin(), uniq.end(),
                           [](const std::string& a, const std::string& b) {
                             return *detail::parse_double(a) == *detail::parse_double(b);
                           }),
               uniq.end());
  } else {
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  }
  d.y.reserve(raw_labels.size());
  for (const auto& l : raw_labels) {
    auto it = numeric ? std::find_if(uniq.begin(), uniq.end(),
                                     [&](const std::string& u) {
                                       return *detail::parse_double(u) == *detail::parse_double(l);
                                     })
                      : std::lower_bound(uniq.begin(), uniq.end(), l);
    d.y.push_back(static_cast<int>(it - uniq.begin()));
  }
  d.num_classes = std::max<std::size_t>(uniq.size(), 2);

  if (!header.empty()) {
    for (std::size_t c = 0; c < width; ++c) {
      if (c != label_idx) d.feature_names.push_back(header[c]);
    }
  }
  d.validate();
  return d;
}

/// Writes features followed by a `label` column, with a header row.
inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t c = 0; c < d.num_features(); ++c) {
    out << (c < d.feature_names.size() ? d.feature_names[c] : "f" + std::to_string(c)) << ',';
  }
  out << "label\n";
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.X.cols(); ++c) out << d.X(r, c) << ',';
    out << d.y[static_cast<std::size_t>(r)] << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image file and its label file. Pixels are scaled to [0, 1] and
/// flattened row-major.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("cannot open " + labels_path);

  if (detail::read_be32(img, images_path) != kIdxImagesMagic) {
    throw DataError(images_path + ": bad IDX image magic");
  }
  const std::uint32_t n = detail::read_be32(img, images_path);
  const std::uint32_t rows = detail::read_be32(img, images_path);
  const std::uint32_t cols = detail::read_be32(img, images_path);
  if (detail::read_be32(lab, labels_path) != kIdxLabelsMagic) {
    throw DataError(labels_path + ": bad IDX label magic");
  }
  const std::uint32_t n_labels = detail::read_be32(lab, labels_path);
  if (n_labels != n) {
    throw DataError("label count " + std::to_string(n_labels) + " does not match image count " +
                    std::to_string(n));
  }

  const std::size_t pixels = std::size_t{rows} * cols;
  std::vector<unsigned char> buf(pixels * n);
  if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw DataError(images_path + ": truncated pixel data");
  }
  std::vector<unsigned char> lbuf(n);
  if (!lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()))) {
    throw DataError(labels_path + ": truncated label data");
  }

  Dataset d;
  d.X.resize(n, static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < buf.size(); ++i) d.X.data()[i] = static_cast<double>(buf[i]) / 255.0;
  d.y.assign(lbuf.begin(), lbuf.end());
  int max_label = 1;
  for (int v : d.y) max_label = std::max(max_label, v);
  d.num_classes = static_cast<std::size_t>(max_label) + 1;
  d.image_shape = ImageShape{rows, cols, 1};
  d.validate();
  return d;
}

/// Writes an IDX image/label pair (pixels expected in [0, 1]).
inline void write_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
  if (!d.image_shape) throw ConfigError("dataset has no image shape");
  auto be32 = [](std::ostream& o, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                static_cast<char>(v >> 8), static_cast<char>(v)};
    o.write(b.data(), 4);
  };
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw DataError("cannot write IDX files");
  const auto n = static_cast<std::uint32_t>(d.num_samples());
  be32(img, kIdxImagesMagic);
  be32(img, n);
  be32(img, static_cast<std::uint32_t>(d.image_shape->rows));
  be32(img, static_cast<std::uint32_t>(d.image_shape->cols));
  for (Eigen::Index i = 0; i < d.X.size(); ++i) {
    const double v = std::clamp(d.X.data()[i], 0.0, 1.0);
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  be32(lab, kIdxLabelsMagic);
  be32(lab, n);
  for (int v : d.y) lab.put(static_cast<char>(static_cast<unsigned char>(v)));
}

/// Per-feature mean and population SD of the training rows.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd sd;

  static Standardizer fit(const Dataset& d, std::span<const std::size_t> train) {
    if (train.empty()) throw ConfigError("standardize: training partition is empty");
    Standardizer s;
    const Eigen::Index N = d.X.cols();
    s.mean = Eigen::RowVectorXd::Zero(N);
    s.sd = Eigen::RowVectorXd::Zero(N);
    for (std::size_t r : train) s.mean += d.X.row(static_cast<Eigen::Index>(r));
    s.mean /= static_cast<double>(train.size());
    for (std::size_t r : train) {
      s.sd += (d.X.row(static_cast<Eigen::Index>(r)) - s.mean).array().square().matrix();
    }
    s.sd = (s.sd / static_cast<double>(train.size())).cwiseSqrt();
    return s;
  }

  Dataset apply(const Dataset& d) const {
    Dataset out = d;
    for (Eigen::Index c = 0; c < out.X.cols(); ++c) {
      const double scale = sd(c);
      if (scale > 0.0) {
        out.X.col(c) = (out.X.col(c).array() - mean(c)) / scale;
      } else {
        out.X.col(c).setZero();
      }
    }
    return out;
  }
};

/// Z-scores each feature with statistics from the train partition only.
/// Zero-variance features map to 0.
inline Dataset standardize(const Dataset& d, std::span<const std::size_t> train) {
  return Standardizer::fit(d, train).apply(d);
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.0;
  double test = 0.2;
};

struct Split {
  IndexList train;
  IndexList val;
  IndexList test;
};

/// Seeded shuffle of [0, n) followed by contiguous assignment to train, val, test.
/// Each partition receives floor(n * ratio) rows.
inline Split make_split(std::size_t n, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0) throw ConfigError("split ratios must be >= 0");
  if (ratios.train + ratios.val + ratios.test > 1.0 + 1e-12) throw ConfigError("split ratios sum above 1");
  IndexList perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SeededRng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng.stream(Stream::Split));

  auto count = [n](double r) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9)); };
  const std::size_t nt = count(ratios.train);
  const std::size_t nv = count(ratios.val);
  const std::size_t ns = std::min(count(ratios.test), n - nt - nv);
  auto check = [](double r, std::size_t c, const char* name) {
    if (r > 0 && c == 0) throw ConfigError(std::string("split: ") + name + " partition would be empty");
  };
  check(ratios.train, nt, "train");
  check(ratios.val, nv, "val");
  check(ratios.test, ns, "test");

  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nt));
  s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(nt), perm.begin() + static_cast<std::ptrdiff_t>(nt + nv));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(nt + nv),
                perm.begin() + static_cast<std::ptrdiff_t>(nt + nv + ns));
  return s;
}

/// Splits `rows` into two seeded parts, `first_ratio` of them in the first.
inline std::pair<IndexList, IndexList> split_indices(std::span<const std::size_t> rows, double first_ratio,
                                                     std::uint64_t seed) {
  Split s = make_split(rows.size(), SplitRatios{first_ratio, 0.0, 1.0 - first_ratio}, seed);
  std::pair<IndexList, IndexList> out;
  for (std::size_t i : s.train) out.first.push_back(rows[i]);
  for (std::size_t i : s.test) out.second.push_back(rows[i]);
  return out;
}

/// One epoch of mini-batches over `rows`, reshuffled from the batch_shuffle stream.
/// The final partial batch is kept.
inline std::vector<IndexList> batches(std::span<const std::size_t> rows, std::size_t batch_size, SeededRng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  IndexList order(rows.begin(), rows.end());
  std::shuffle(order.begin(), order.end(), rng.stream(Stream::BatchShuffle));
  std::vector<IndexList> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

enum class FeatureGroup { Linear, Interaction, Noise };

struct ToySpec {
  std::size_t n_samples = 2000;
  std::size_t n_linear = 6;
  std::size_t n_interaction = 6;
  std::size_t n_noise = 8;
  double linear_coefficient = 0.4;
  double noise_sd = 0.65;
  std::uint64_t seed = 0;

  std::size_t num_features() const { return n_linear + n_interaction + n_noise; }

  FeatureGroup group_of(std::size_t feature) const {
    if (feature < n_linear) return FeatureGroup::Linear;
    if (feature < n_linear + n_interaction) return FeatureGroup::Interaction;
    return FeatureGroup::Noise;
  }

  void validate() const {
    if (n_interaction % 2 != 0) throw ConfigError("n_interaction must be even (XOR pairs)");
    if (n_samples < 2) throw ConfigError("toy dataset needs at least 2 samples");
    if (num_features() < 1) throw ConfigError("toy dataset needs at least one feature");
    if (noise_sd < 0) throw ConfigError("noise_sd must be >= 0");
  }
};

/// Binary toy problem with three feature blocks, in order:
///  - linear:      coef * (2y - 1) + N(0, noise_sd)
///  - interaction: pairs (a, b) with a = +-1, b = a * (2y - 1), both plus N(0, noise_sd);
///                 neither is correlated with y alone but sign(a * b) recovers it
///  - noise:       N(0, 1)
inline Dataset make_toy(const ToySpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  auto& eng = rng.stream(Stream::ToyGen);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> jitter(0.0, spec.noise_sd > 0 ? spec.noise_sd : 1.0);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto noise = [&] { return spec.noise_sd > 0 ? jitter(eng) : 0.0; };

  Dataset d;
  const std::size_t N = spec.num_features();
  d.X.resize(static_cast<Eigen::Index>(spec.n_samples), static_cast<Eigen::Index>(N));
  d.y.resize(spec.n_samples);
  d.num_classes = 2;
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const int label = coin(eng) ? 1 : 0;
    const double sign = label == 1 ? 1.0 : -1.0;
    d.y[i] = label;
    auto row = d.X.row(static_cast<Eigen::Index>(i));
    std::size_t c = 0;
    for (std::size_t j = 0; j < spec.n_linear; ++j) row(static_cast<Eigen::Index>(c++)) = spec.linear_coefficient * sign + noise();
    for (std::size_t j = 0; j < spec.n_interaction / 2; ++j) {
      const double a = coin(eng) ? 1.0 : -1.0;
      row(static_cast<Eigen::Index>(c++)) = a + noise();
      row(static_cast<Eigen::Index>(c++)) = a * sign + noise();
    }
    for (std::size_t j = 0; j < spec.n_noise; ++j) row(static_cast<Eigen::Index>(c++)) = unit(eng);
  }
  for (std::size_t c = 0; c < N; ++c) {
    const char* prefix = c < spec.n_linear ? "lin" : (c < spec.n_linear + spec.n_interaction ? "int" : "noise");
    d.feature_names.push_back(std::string(prefix) + std::to_string(c));
  }
  return d;
}

}  // namespace entryprune
