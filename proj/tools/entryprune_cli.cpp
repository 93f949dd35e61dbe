// entryprune command-line interface.
//
//   entryprune select    --data train.csv --format csv --k 50 --profile long --out run1
//   entryprune eval      --data train.csv --format csv --selected run1/selected.txt
//   entryprune ablate    --format toy --k 12 --profile wide
//   entryprune stability --data imgs.idx --labels lbls.idx --format idx --runs 10
//   entryprune mask      --selected run1/selected.txt --shape 28x28 --out mask.pgm
//   entryprune toy       --out toy.csv
//   entryprune probe     --k 12
//
// Shared options may also come from a flat `key = value` file passed with
// --config; command-line flags win. Every select run writes such a file
// (config.ini) next to its results.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "entryprune/commands.hpp"

using namespace entryprune;

namespace {

struct Flags {
  std::string format = "toy";
  std::string profile;
  std::string metric = "gradient_sum";
  std::string entry_mode = "entry";
  std::string stopping = "validation";
  std::string learner = "linear";
  std::vector<std::size_t> hidden{100};
  std::size_t patience = 100;
  std::size_t ident_patience = 0;  // 0: same as --patience
  std::size_t max_epochs = 1000;
};

ImageShape parse_shape(const std::string& s) {
  ImageShape shape;
  std::vector<std::size_t> dims;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t x = std::min(s.find('x', pos), s.size());
    try {
      dims.push_back(static_cast<std::size_t>(std::stoul(s.substr(pos, x - pos))));
    } catch (const std::exception&) {
      throw ConfigError("--shape must look like 28x28 or 32x32x3");
    }
    pos = x + 1;
  }
  if (dims.size() < 2 || dims.size() > 3) throw ConfigError("--shape must look like 28x28 or 32x32x3");
  shape.rows = dims[0];
  shape.cols = dims[1];
  shape.channels = dims.size() == 3 ? dims[2] : 1;
  return shape;
}

void finalize(RunConfig& cfg, const Flags& f) {
  cfg.format = parse_format(f.format);
  if (!f.profile.empty()) {
    // The profile supplies defaults; explicit --c-ratio / --n-mb flags are re-applied by the caller.
    apply_profile(cfg, parse_profile(f.profile));
  }
  cfg.selection.metric = parse_metric(f.metric);
  cfg.selection.entry_mode = parse_entry_mode(f.entry_mode);
  cfg.selection.hidden_sizes = f.hidden;
  cfg.learner = parse_learner(f.learner);
  const StoppingKind kind = parse_stopping(f.stopping);
  const std::size_t ident = f.ident_patience ? f.ident_patience : f.patience;
  switch (kind) {
    case StoppingKind::Epochs: cfg.stopping = StoppingConfig::epochs(f.max_epochs); break;
    case StoppingKind::Ident: cfg.stopping = StoppingConfig::ident(ident); break;
    case StoppingKind::Validation: cfg.stopping = StoppingConfig::validation(f.patience, ident); break;
  }
  cfg.stopping.max_epochs = f.max_epochs;
  cfg.stopping.validate();
  cfg.toy.validate();
}

int run(int argc, char** argv) {
  CLI::App app{"EntryPrune feature selection"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "flat key = value file with option defaults");
  app.get_config_formatter_base()->arrayDelimiter(',');

  RunConfig cfg;
  Flags f;
  double c_ratio = -1.0;
  std::size_t n_mb = 0;

  app.add_option("--data", cfg.data_path, "dataset file (csv, or idx images)");
  app.add_option("--labels", cfg.labels_path, "idx label file");
  app.add_option("--format", f.format, "csv | idx | toy")->capture_default_str();
  app.add_option("--label-column", cfg.label_column, "csv label column (-1: last)");
  app.add_option("--max-samples", cfg.max_samples, "use only the first n rows (0: all)");
  app.add_option("--toy-samples", cfg.toy.n_samples, "toy dataset size")->capture_default_str();
  app.add_option("--toy-seed", cfg.toy.seed, "toy dataset seed");
  app.add_option("--test-ratio", cfg.test_ratio, "held-out share for evaluation")->capture_default_str();
  app.add_option("--split-seed", cfg.split_seed, "seed of the train/test split");
  app.add_option("--k", cfg.selection.K, "number of features to select")->capture_default_str();
  app.add_option("--profile", f.profile, "long (c_ratio 0.2, n_mb 100) | wide (c_ratio 0.5, n_mb 5)");
  app.add_option("--c-ratio", c_ratio, "candidate share of the N-K unselected features");
  app.add_option("--n-mb", n_mb, "mini-batches per rotation");
  app.add_option("--metric", f.metric, "gradient_sum | weight_change | magnitude | molchanov")->capture_default_str();
  app.add_option("--entry-mode", f.entry_mode, "entry | live")->capture_default_str();
  app.add_flag("--flex", cfg.selection.flex.enabled, "adapt c_ratio while training");
  app.add_option("--hidden", f.hidden, "hidden layer sizes, comma separated")->delimiter(',')->capture_default_str();
  app.add_option("--lr", cfg.selection.optimizer.learning_rate, "Adam learning rate")->capture_default_str();
  app.add_option("--batch-size", cfg.selection.optimizer.batch_size, "mini-batch size")->capture_default_str();
  app.add_option("--val-fraction", cfg.selection.val_fraction, "validation share of the training rows")
      ->capture_default_str();
  app.add_option("--stopping", f.stopping, "epochs | ident | validation")->capture_default_str();
  app.add_option("--patience", f.patience, "rotations without val-loss improvement")->capture_default_str();
  app.add_option("--ident-patience", f.ident_patience, "rotations without top-K change (default: --patience)");
  app.add_option("--max-epochs", f.max_epochs, "epoch budget for --stopping epochs")->capture_default_str();
  app.add_option("--epoch-cap", cfg.epoch_cap, "hard epoch limit for any stopping rule (0: none)");
  app.add_option("--seed", cfg.selection.seed, "base seed; run i uses seed + i")->capture_default_str();
  app.add_option("--runs", cfg.runs, "repetitions")->capture_default_str();
  app.add_option("--out", cfg.out_dir, "output directory or file")->capture_default_str();
  app.add_option("--learner", f.learner, "linear | knn")->capture_default_str();
  app.add_option("--knn-k", cfg.knn_k, "neighbours for knn")->capture_default_str();
  app.add_option("--linear-epochs", cfg.linear.epochs, "gradient steps of the linear classifier")
      ->capture_default_str();
  app.add_option("--linear-l2", cfg.linear.l2, "L2 penalty of the linear classifier")->capture_default_str();

  auto* select = app.add_subcommand("select", "run feature selection and write selected.txt");

  EvalRequest eval_req;
  std::vector<std::string> eval_files;
  auto* eval = app.add_subcommand("eval", "score feature sets with a downstream learner");
  eval->add_option("--selected", eval_files, "selected.txt files (omit for all features)");
  eval->add_flag("--random", eval_req.random_baseline, "evaluate random K-subsets instead");

  std::size_t ablate_seeds = 5;
  auto* ablate = app.add_subcommand("ablate", "metric x entry-mode grid");
  ablate->add_option("--seeds", ablate_seeds, "seeds per variant")->capture_default_str();

  std::vector<double> stab_ratios{0.2, 0.5, 0.8};
  auto* stab = app.add_subcommand("stability", "pairwise Jaccard across seeds per c_ratio");
  stab->add_option("--c-ratios", stab_ratios, "c_ratio settings")->delimiter(',')->capture_default_str();

  std::string mask_file;
  std::string mask_shape = "28x28";
  auto* mask = app.add_subcommand("mask", "render selected pixels as a PGM image");
  mask->add_option("--selected", mask_file, "selected.txt")->required();
  mask->add_option("--shape", mask_shape, "image shape, e.g. 28x28")->capture_default_str();

  auto* toy = app.add_subcommand("toy", "write the synthetic toy dataset as csv");
  toy->add_option("--linear-coefficient", cfg.toy.linear_coefficient)->capture_default_str();
  toy->add_option("--noise-sd", cfg.toy.noise_sd)->capture_default_str();

  auto* probe = app.add_subcommand("probe", "post-reset gradient vs entry score per toy feature group");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    finalize(cfg, f);
    if (c_ratio >= 0.0) cfg.selection.c_ratio = c_ratio;
    if (n_mb > 0) cfg.selection.n_mb = n_mb;

    if (*select) {
      const SelectOutput out = cmd_select(cfg);
      for (const auto& p : out.selected_files) std::cout << p.string() << '\n';
    } else if (*eval) {
      for (const auto& s : eval_files) eval_req.selected_files.emplace_back(s);
      std::cout << cmd_eval(cfg, eval_req).to_record() << '\n';
    } else if (*ablate) {
      for (const AblationRow& r : cmd_ablate(cfg, ablate_seeds)) {
        std::cout << r.label() << '\t' << r.report.mean() << '\t' << r.report.sd() << (r.best ? "\t*" : "") << '\n';
      }
    } else if (*stab) {
      for (const StabilityRow& r : cmd_stability(cfg, stab_ratios, std::max<std::size_t>(cfg.runs, 2))) {
        std::cout << "c_ratio=" << r.c_ratio << " JI=" << r.jaccard << " network=" << r.network.mean() << " "
                  << to_string(cfg.learner) << "=" << r.downstream.mean() << '\n';
      }
    } else if (*mask) {
      cmd_mask(mask_file, parse_shape(mask_shape), cfg.out_dir == "entryprune_out" ? "mask.pgm" : cfg.out_dir);
    } else if (*toy) {
      cmd_toy(cfg.toy, cfg.out_dir == "entryprune_out" ? "toy.csv" : cfg.out_dir);
    } else if (*probe) {
      const ProbeTable t = cmd_probe(cfg);
      for (auto g : {FeatureGroup::Linear, FeatureGroup::Interaction, FeatureGroup::Noise}) {
        std::cout << to_string(g) << " gradient=" << t.gradient.at(g).mean << "+-" << t.gradient.at(g).sd
                  << " entry=" << t.entry_score.at(g).mean << "+-" << t.entry_score.at(g).sd << '\n';
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    // ShapeError / ValidationError: the inputs do not fit the dataset.
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
