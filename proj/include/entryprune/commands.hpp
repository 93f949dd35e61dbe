#pragma once

// The work behind each CLI subcommand: run configuration, data preparation,
// report and file emission. Kept free of argument parsing so tests can drive it.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "entryprune/data.hpp"
#include "entryprune/errors.hpp"
#include "entryprune/eval.hpp"
#include "entryprune/selector.hpp"
#include "entryprune/stopping.hpp"

namespace entryprune {

enum class DataFormat { Csv, Idx, Toy };
enum class Learner { Linear, Knn };
enum class Profile { Long, Wide };

struct RunConfig {
  // data
  DataFormat format = DataFormat::Toy;
  std::string data_path;    // CSV file or IDX image file
  std::string labels_path;  // IDX label file
  int label_column = -1;
  std::size_t max_samples = 0;  // 0: all rows
  ToySpec toy;
  double test_ratio = 0.2;
  std::uint64_t split_seed = 0;

  // selection
  SelectionConfig selection;
  StoppingConfig stopping;
  std::size_t epoch_cap = 0;

  // experiment
  std::size_t runs = 1;
  std::string out_dir = "entryprune_out";
  Learner learner = Learner::Linear;
  std::size_t knn_k = 3;
  LinearConfig linear;
};

inline void apply_profile(RunConfig& cfg, Profile p) {
  if (p == Profile::Long) {
    cfg.selection.c_ratio = 0.2;
    cfg.selection.n_mb = 100;
  } else {
    cfg.selection.c_ratio = 0.5;
    cfg.selection.n_mb = 5;
  }
}

// ---- name tables -----------------------------------------------------------

inline Metric parse_metric(const std::string& s) {
  if (s == "gradient_sum") return Metric::GradientSum;
  if (s == "weight_change") return Metric::WeightChange;
  if (s == "magnitude") return Metric::Magnitude;
  if (s == "molchanov") return Metric::MolchanovImportance;
  throw ConfigError("unknown metric '" + s + "' (gradient_sum, weight_change, magnitude, molchanov)");
}

inline EntryMode parse_entry_mode(const std::string& s) {
  if (s == "entry") return EntryMode::EntryScore;
  if (s == "live") return EntryMode::Live;
  throw ConfigError("unknown entry mode '" + s + "' (entry, live)");
}

inline StoppingKind parse_stopping(const std::string& s) {
  if (s == "epochs") return StoppingKind::Epochs;
  if (s == "ident") return StoppingKind::Ident;
  if (s == "validation") return StoppingKind::Validation;
  throw ConfigError("unknown stopping kind '" + s + "' (epochs, ident, validation)");
}

inline const char* to_string(StoppingKind k) {
  switch (k) {
    case StoppingKind::Epochs: return "epochs";
    case StoppingKind::Ident: return "ident";
    case StoppingKind::Validation: return "validation";
  }
  return "?";
}

inline DataFormat parse_format(const std::string& s) {
  if (s == "csv") return DataFormat::Csv;
  if (s == "idx") return DataFormat::Idx;
  if (s == "toy") return DataFormat::Toy;
  throw ConfigError("unknown format '" + s + "' (csv, idx, toy)");
}

inline const char* to_string(DataFormat f) {
  switch (f) {
    case DataFormat::Csv: return "csv";
    case DataFormat::Idx: return "idx";
    case DataFormat::Toy: return "toy";
  }
  return "?";
}

inline Learner parse_learner(const std::string& s) {
  if (s == "linear") return Learner::Linear;
  if (s == "knn") return Learner::Knn;
  throw ConfigError("unknown learner '" + s + "' (linear, knn)");
}

inline const char* to_string(Learner l) { return l == Learner::Knn ? "knn" : "linear"; }

inline Profile parse_profile(const std::string& s) {
  if (s == "long") return Profile::Long;
  if (s == "wide") return Profile::Wide;
  throw ConfigError("unknown profile '" + s + "' (long, wide)");
}

// ---- config echo -----------------------------------------------------------

/// Flat `key = value` lines using the CLI flag names; feeding the file back
/// through --config reproduces the run.
inline std::string config_echo(const RunConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto& s = c.selection;
  os << "format = " << to_string(c.format) << '\n';
  if (!c.data_path.empty()) os << "data = " << c.data_path << '\n';
  if (!c.labels_path.empty()) os << "labels = " << c.labels_path << '\n';
  os << "label-column = " << c.label_column << '\n';
  os << "max-samples = " << c.max_samples << '\n';
  os << "toy-samples = " << c.toy.n_samples << '\n';
  os << "toy-seed = " << c.toy.seed << '\n';
  os << "test-ratio = " << c.test_ratio << '\n';
  os << "split-seed = " << c.split_seed << '\n';
  os << "k = " << s.K << '\n';
  os << "c-ratio = " << s.c_ratio << '\n';
  os << "n-mb = " << s.n_mb << '\n';
  os << "metric = " << to_string(s.metric) << '\n';
  os << "entry-mode = " << to_string(s.entry_mode) << '\n';
  os << "flex = " << (s.flex.enabled ? "true" : "false") << '\n';
  os << "hidden = ";
  for (std::size_t i = 0; i < s.hidden_sizes.size(); ++i) os << (i ? "," : "") << s.hidden_sizes[i];
  os << '\n';
  os << "lr = " << s.optimizer.learning_rate << '\n';
  os << "batch-size = " << s.optimizer.batch_size << '\n';
  os << "val-fraction = " << s.val_fraction << '\n';
  os << "stopping = " << to_string(c.stopping.kind) << '\n';
  os << "patience = " << c.stopping.loss_patience << '\n';
  os << "ident-patience = " << c.stopping.ident_patience << '\n';
  os << "max-epochs = " << c.stopping.max_epochs << '\n';
  os << "epoch-cap = " << c.epoch_cap << '\n';
  os << "seed = " << s.seed << '\n';
  os << "runs = " << c.runs << '\n';
  os << "learner = " << to_string(c.learner) << '\n';
  os << "knn-k = " << c.knn_k << '\n';
  return os.str();
}

// ---- data preparation ------------------------------------------------------

/// Standardized dataset (train-partition statistics) plus its train/test split.
struct PreparedData {
  Dataset data;
  Split split;

  Dataset train() const { return subset_rows(data, split.train); }
  Dataset test() const { return subset_rows(data, split.test); }
};

inline Dataset load_dataset(const RunConfig& c) {
  Dataset d;
  switch (c.format) {
    case DataFormat::Csv:
      if (c.data_path.empty()) throw ConfigError("--data is required for csv input");
      d = load_csv(c.data_path, c.label_column);
      break;
    case DataFormat::Idx:
      if (c.data_path.empty() || c.labels_path.empty()) {
        throw ConfigError("--data and --labels are required for idx input");
      }
      d = load_idx(c.data_path, c.labels_path);
      break;
    case DataFormat::Toy:
      d = make_toy(c.toy);
      break;
  }
  if (c.max_samples > 0 && c.max_samples < d.num_samples()) {
    IndexList head(c.max_samples);
    std::iota(head.begin(), head.end(), std::size_t{0});
    d = subset_rows(d, head);
  }
  return d;
}

inline PreparedData prepare(const RunConfig& c) {
  PreparedData p;
  Dataset raw = load_dataset(c);
  p.split = make_split(raw.num_samples(), SplitRatios{1.0 - c.test_ratio, 0.0, c.test_ratio}, c.split_seed);
  p.data = standardize(raw, p.split.train);
  return p;
}

inline EvalReport evaluate(const RunConfig& c, const Dataset& train, const Dataset& test, const FeatureSet& fs) {
  if (c.learner == Learner::Knn) return knn_accuracy(train, test, fs, c.knn_k);
  return linear_classifier_accuracy(train, test, fs, c.linear);
}

// ---- parallel runs ---------------------------------------------------------

/// Worker count: ENTRYPRUNE_THREADS if set, else hardware concurrency.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
  if (const char* env = std::getenv("ENTRYPRUNE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Calls fn(i) for i in [0, jobs) on a small thread pool. Results land in index order.
template <typename T>
std::vector<T> parallel_map(std::size_t jobs, const std::function<T(std::size_t)>& fn) {
  std::vector<std::optional<T>> slots(jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t workers = worker_count(jobs);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  std::vector<T> out;
  out.reserve(jobs);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---- file helpers ----------------------------------------------------------

inline void write_selected(const std::filesystem::path& path, const IndexList& selected) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t f : selected) out << f << '\n';
}

inline IndexList read_selected(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  IndexList out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty()) continue;
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + " is not a feature index");
    }
    out.push_back(v);
  }
  return out;
}

inline std::string history_record(const RotationLog& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "rotation=" << r.rotation << " phase=" << (r.phase == Phase::Search ? "search" : "retrain")
     << " epoch=" << r.epoch << " loss=" << r.running_loss;
  if (r.val_loss) os << " val_loss=" << *r.val_loss;
  os << " min_top_entry=" << r.min_top_entry << " topk_changes=" << r.topk_changes
     << " kc=" << r.candidate_count << " c_ratio=" << r.c_ratio;
  if (r.resized) os << " resized=1";
  return os.str();
}

inline void write_history(const std::filesystem::path& path, const SelectionResult& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const RotationLog& log : r.history) out << history_record(log) << '\n';
  out << "stop reason=" << to_string(r.stop_reason) << " search_rotations=" << r.search_rotations << '\n';
}

// ---- select ----------------------------------------------------------------

struct SelectRun {
  SelectionResult result;
  double network_accuracy = 0.0;
};

struct SelectOutput {
  std::vector<SelectRun> runs;
  std::vector<std::filesystem::path> selected_files;
};

/// Seeds cfg.seed, cfg.seed + 1, ... for `runs` repetitions.
inline std::vector<SelectRun> run_selection(const RunConfig& c, const PreparedData& p, std::size_t runs) {
  return parallel_map<SelectRun>(runs, [&](std::size_t i) {
    SelectionConfig sc = c.selection;
    sc.seed = c.selection.seed + i;
    SelectRun run;
    run.result = run_entryprune(p.data, p.split.train, sc, c.stopping, {}, c.epoch_cap);
    if (!p.split.test.empty()) run.network_accuracy = network_accuracy(run.result, p.data, p.split.test);
    return run;
  });
}

inline SelectOutput cmd_select(const RunConfig& c) {
  const PreparedData p = prepare(c);
  c.selection.validate(p.data.num_features());
  const std::filesystem::path out_dir(c.out_dir);
  std::filesystem::create_directories(out_dir);

  SelectOutput out;
  out.runs = run_selection(c, p, std::max<std::size_t>(c.runs, 1));

  {
    std::ofstream cfg_out(out_dir / "config.ini");
    cfg_out << config_echo(c);
  }
  std::ofstream report(out_dir / "report.txt");
  report << std::setprecision(10);
  report << "features = " << p.data.num_features() << "\nsamples = " << p.data.num_samples()
         << "\ntrain = " << p.split.train.size() << "\ntest = " << p.split.test.size() << '\n';
  for (std::size_t i = 0; i < out.runs.size(); ++i) {
    const SelectionResult& r = out.runs[i].result;
    const std::uint64_t seed = c.selection.seed + i;
    const std::string suffix = out.runs.size() == 1 ? "" : "_seed" + std::to_string(seed);
    const auto sel_path = out_dir / ("selected" + suffix + ".txt");
    write_selected(sel_path, r.selected);
    write_history(out_dir / ("history" + suffix + ".log"), r);
    out.selected_files.push_back(sel_path);
    report << "[run " << i << "]\nseed = " << seed << "\nepochs = " << r.total_epochs
           << "\nsearch_rotations = " << r.search_rotations << "\nstop_reason = " << to_string(r.stop_reason)
           << "\nwall_seconds = " << r.wall_seconds << "\nnetwork_accuracy = " << out.runs[i].network_accuracy
           << '\n';
  }
  return out;
}

// ---- eval ------------------------------------------------------------------

struct EvalRequest {
  std::vector<std::filesystem::path> selected_files;  // empty: all features
  bool random_baseline = false;
  std::size_t random_k = 0;  // 0: size of the first selected set or cfg K
};

inline EvalReport cmd_eval(const RunConfig& c, const EvalRequest& req) {
  const PreparedData p = prepare(c);
  const Dataset train = p.train();
  const Dataset test = p.test();
  const std::size_t N = p.data.num_features();

  std::vector<FeatureSet> sets;
  if (req.random_baseline) {
    std::size_t K = req.random_k ? req.random_k : c.selection.K;
    if (!req.selected_files.empty()) K = read_selected(req.selected_files.front()).size();
    sets = random_baseline(N, K, c.selection.seed, std::max<std::size_t>(c.runs, 1));
  } else if (req.selected_files.empty()) {
    sets.push_back(all_features(N));
  } else {
    for (const auto& f : req.selected_files) sets.emplace_back(read_selected(f), "file");
  }

  std::vector<EvalReport> parts;
  for (const FeatureSet& fs : sets) parts.push_back(evaluate(c, train, test, fs));
  EvalReport report = EvalReport::combine(parts);
  if (req.random_baseline) report.learner += "(random)";
  else if (req.selected_files.empty()) report.learner += "(all)";

  if (!c.out_dir.empty()) {
    std::filesystem::create_directories(c.out_dir);
    std::ofstream(std::filesystem::path(c.out_dir) / "eval.txt") << report.to_record() << '\n';
  }
  return report;
}

// ---- ablate ----------------------------------------------------------------

struct AblationRow {
  Metric metric = Metric::GradientSum;
  EntryMode mode = EntryMode::EntryScore;
  EvalReport report;
  bool best = false;

  std::string label() const {
    return std::string(to_string(metric)) + (mode == EntryMode::EntryScore ? "(E)" : "");
  }
};

/// The seven metric variants: three change metrics with and without entry scores,
/// plus Molchanov importance without.
inline std::vector<std::pair<Metric, EntryMode>> ablation_grid() {
  return {{Metric::GradientSum, EntryMode::EntryScore}, {Metric::GradientSum, EntryMode::Live},
          {Metric::WeightChange, EntryMode::EntryScore}, {Metric::WeightChange, EntryMode::Live},
          {Metric::Magnitude, EntryMode::EntryScore},    {Metric::Magnitude, EntryMode::Live},
          {Metric::MolchanovImportance, EntryMode::Live}};
}

inline std::vector<AblationRow> cmd_ablate(const RunConfig& c, std::size_t seeds = 5,
                                           std::vector<std::pair<Metric, EntryMode>> grid = ablation_grid()) {
  for (const auto& [m, mode] : grid) {
    if (m == Metric::MolchanovImportance && mode == EntryMode::EntryScore) {
      throw ConfigError("molchanov importance is only defined without entry scores");
    }
  }
  const PreparedData p = prepare(c);
  const Dataset train = p.train();
  const Dataset test = p.test();

  const std::size_t jobs = grid.size() * seeds;
  const auto accs = parallel_map<EvalReport>(jobs, [&](std::size_t job) {
    const auto [metric, mode] = grid[job / seeds];
    SelectionConfig sc = c.selection;
    sc.metric = metric;
    sc.entry_mode = mode;
    sc.seed = c.selection.seed + job % seeds;
    const SelectionResult r = run_entryprune(p.data, p.split.train, sc, c.stopping, {}, c.epoch_cap);
    return evaluate(c, train, test, FeatureSet(r.selected, "entryprune", sc.seed));
  });

  std::vector<AblationRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    AblationRow row;
    row.metric = grid[g].first;
    row.mode = grid[g].second;
    row.report = EvalReport::combine({accs.begin() + static_cast<std::ptrdiff_t>(g * seeds),
                                      accs.begin() + static_cast<std::ptrdiff_t>((g + 1) * seeds)});
    rows.push_back(std::move(row));
  }
  auto best = std::max_element(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) {
    return a.report.mean() < b.report.mean();
  });
  if (best != rows.end()) best->best = true;

  if (!c.out_dir.empty()) {
    std::filesystem::create_directories(c.out_dir);
    std::ofstream out(std::filesystem::path(c.out_dir) / "ablation.txt");
    out << std::fixed << std::setprecision(4);
    out << "variant\tmean\tsd\tbest\n";
    for (const auto& r : rows) {
      out << r.label() << '\t' << r.report.mean() << '\t' << r.report.sd() << '\t' << (r.best ? "*" : "") << '\n';
    }
  }
  return rows;
}

// ---- stability -------------------------------------------------------------

struct StabilityRow {
  double c_ratio = 0.0;
  double jaccard = 0.0;
  EvalReport downstream;
  EvalReport network;  // accuracy of the selection network itself
  std::vector<FeatureSet> sets;
};

inline std::vector<StabilityRow> cmd_stability(const RunConfig& c, const std::vector<double>& c_ratios,
                                               std::size_t runs) {
  if (runs < 2) throw ConfigError("stability needs at least two runs per setting");
  const PreparedData p = prepare(c);
  const Dataset train = p.train();
  const Dataset test = p.test();

  std::vector<StabilityRow> rows;
  for (double cr : c_ratios) {
    RunConfig rc = c;
    rc.selection.c_ratio = cr;
    const auto results = run_selection(rc, p, runs);
    StabilityRow row;
    row.c_ratio = cr;
    std::vector<EvalReport> down;
    for (std::size_t i = 0; i < results.size(); ++i) {
      row.sets.emplace_back(results[i].result.selected, "entryprune", rc.selection.seed + i);
      down.push_back(evaluate(c, train, test, row.sets.back()));
      row.network.runs.push_back(results[i].network_accuracy);
    }
    row.network.learner = "entryprune";
    row.network.K = c.selection.K;
    row.downstream = EvalReport::combine(down);
    row.jaccard = stability(row.sets);
    rows.push_back(std::move(row));
  }

  if (!c.out_dir.empty()) {
    std::filesystem::create_directories(c.out_dir);
    std::ofstream out(std::filesystem::path(c.out_dir) / "stability.txt");
    out << std::fixed << std::setprecision(4);
    out << "c_ratio\tJI\tnetwork_mean\tnetwork_sd\t" << to_string(c.learner) << "_mean\t" << to_string(c.learner)
        << "_sd\n";
    for (const auto& r : rows) {
      out << r.c_ratio << '\t' << r.jaccard << '\t' << r.network.mean() << '\t' << r.network.sd() << '\t'
          << r.downstream.mean() << '\t' << r.downstream.sd() << '\n';
    }
  }
  return rows;
}

// ---- mask ------------------------------------------------------------------

/// Plain PGM (P2): 255 for selected pixels, 0 elsewhere.
inline std::string render_mask(const IndexList& selected, const ImageShape& shape) {
  if (selected.empty()) throw ValidationError("mask: selection is empty");
  const std::size_t pixels = shape.pixels();
  std::vector<int> on(pixels, 0);
  for (std::size_t f : selected) {
    if (f >= pixels) {
      throw ValidationError("mask: index " + std::to_string(f) + " outside " + std::to_string(shape.rows) + "x" +
                            std::to_string(shape.cols) + "x" + std::to_string(shape.channels) + " image");
    }
    on[f] = 255;
  }
  std::ostringstream os;
  // Multi-channel images: a pixel is on if any of its channels is selected.
  const std::size_t ch = std::max<std::size_t>(shape.channels, 1);
  os << "P2\n" << shape.cols << ' ' << shape.rows << "\n255\n";
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t c = 0; c < shape.cols; ++c) {
      int v = 0;
      for (std::size_t k = 0; k < ch; ++k) v = std::max(v, on[(r * shape.cols + c) * ch + k]);
      os << v << (c + 1 < shape.cols ? " " : "\n");
    }
  }
  return os.str();
}

inline void cmd_mask(const std::filesystem::path& selected_file, const ImageShape& shape,
                     const std::filesystem::path& out_path) {
  const std::string pgm = render_mask(read_selected(selected_file), shape);
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write " + out_path.string());
  out << pgm;
}

// ---- toy / probe -----------------------------------------------------------

inline void cmd_toy(const ToySpec& spec, const std::filesystem::path& out_path) {
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  write_csv(make_toy(spec), out_path.string());
}

inline ProbeTable cmd_probe(const RunConfig& c) {
  RunConfig rc = c;
  rc.format = DataFormat::Toy;
  const PreparedData p = prepare(rc);
  ProbeTable t = gradient_probe(p.data, p.split.train, rc.toy, rc.selection, rc.stopping);
  if (!c.out_dir.empty()) {
    std::filesystem::create_directories(c.out_dir);
    std::ofstream out(std::filesystem::path(c.out_dir) / "probe.txt");
    out << std::fixed << std::setprecision(4);
    out << "group\tgradient_mean\tgradient_sd\tgradient_n\tentry_mean\tentry_sd\n";
    for (auto g : {FeatureGroup::Linear, FeatureGroup::Interaction, FeatureGroup::Noise}) {
      out << to_string(g) << '\t' << t.gradient[g].mean << '\t' << t.gradient[g].sd << '\t' << t.gradient[g].count
          << '\t' << t.entry_score[g].mean << '\t' << t.entry_score[g].sd << '\n';
    }
  }
  return t;
}

}  // namespace entryprune
