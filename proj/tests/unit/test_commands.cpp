#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "entryprune/commands.hpp"

using namespace entryprune;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("entryprune_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig small_toy(const fs::path& out) {
  RunConfig c;
  c.format = DataFormat::Toy;
  c.toy.n_samples = 400;
  c.selection.K = 12;
  apply_profile(c, Profile::Wide);
  c.selection.hidden_sizes = {16};
  c.selection.optimizer.batch_size = 32;
  c.stopping = StoppingConfig::epochs(15);
  c.out_dir = out.string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(ENTRYPRUNE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Profiles, LongAndWide) {
  RunConfig c;
  apply_profile(c, Profile::Long);
  EXPECT_EQ(c.selection.c_ratio, 0.2);
  EXPECT_EQ(c.selection.n_mb, 100u);
  apply_profile(c, Profile::Wide);
  EXPECT_EQ(c.selection.c_ratio, 0.5);
  EXPECT_EQ(c.selection.n_mb, 5u);
  EXPECT_THROW(parse_profile("tall"), ConfigError);
}

TEST(Names, ParseRejectsUnknown) {
  EXPECT_EQ(parse_metric("molchanov"), Metric::MolchanovImportance);
  EXPECT_EQ(parse_entry_mode("live"), EntryMode::Live);
  EXPECT_EQ(parse_stopping("ident"), StoppingKind::Ident);
  EXPECT_THROW(parse_metric("l1"), ConfigError);
  EXPECT_THROW(parse_format("parquet"), ConfigError);
  EXPECT_THROW(parse_learner("svm"), ConfigError);
}

TEST(Select, WritesKIndicesAndHistory) {
  const auto dir = scratch("select");
  const auto out = cmd_select(small_toy(dir));
  ASSERT_EQ(out.selected_files.size(), 1u);
  const IndexList sel = read_selected(out.selected_files[0]);
  EXPECT_EQ(sel.size(), 12u);
  EXPECT_TRUE(std::is_sorted(sel.begin(), sel.end()));
  EXPECT_TRUE(fs::exists(dir / "history.log"));
  EXPECT_TRUE(fs::exists(dir / "config.ini"));
  EXPECT_NE(slurp(dir / "report.txt").find("stop_reason = epochs"), std::string::npos);
}

TEST(Select, FlexRecordsCandidateRatioTrajectory) {
  const auto dir = scratch("flex");
  RunConfig c = small_toy(dir);
  c.selection.flex.enabled = true;
  c.stopping = StoppingConfig::epochs(40);
  cmd_select(c);
  const std::string log = slurp(dir / "history.log");
  EXPECT_NE(log.find("c_ratio="), std::string::npos);
  EXPECT_NE(log.find("kc="), std::string::npos);
}

TEST(Select, SeveralRunsGetSeedSuffixes) {
  const auto dir = scratch("runs");
  RunConfig c = small_toy(dir);
  c.runs = 2;
  c.selection.seed = 7;
  const auto out = cmd_select(c);
  ASSERT_EQ(out.selected_files.size(), 2u);
  EXPECT_EQ(out.selected_files[0].filename(), "selected_seed7.txt");
  EXPECT_EQ(out.selected_files[1].filename(), "selected_seed8.txt");
}

TEST(Eval, AllFeaturesRandomAndRepeatable) {
  const auto dir = scratch("eval");
  RunConfig c = small_toy(dir);
  const EvalReport all = cmd_eval(c, {});
  EXPECT_EQ(all.learner, "linear(all)");
  EXPECT_EQ(all.K, 20u);
  EXPECT_EQ(cmd_eval(c, {}).to_record(), all.to_record());

  c.runs = 3;
  EvalRequest rnd;
  rnd.random_baseline = true;
  const EvalReport r = cmd_eval(c, rnd);
  EXPECT_EQ(r.learner, "linear(random)");
  EXPECT_EQ(r.K, 12u);
  EXPECT_EQ(r.runs.size(), 3u);
  EXPECT_EQ(slurp(dir / "eval.txt"), r.to_record() + "\n");
}

TEST(Eval, SelectedFileOutOfRangeIsRejected) {
  const auto dir = scratch("eval_bad");
  write_selected(dir / "sel.txt", {3, 40});
  EvalRequest req;
  req.selected_files = {dir / "sel.txt"};
  EXPECT_THROW(cmd_eval(small_toy(dir), req), ValidationError);
}

TEST(ReadSelected, RejectsGarbage) {
  const auto dir = scratch("garbage");
  std::ofstream(dir / "sel.txt") << "1\n2x\n";
  EXPECT_THROW(read_selected(dir / "sel.txt"), DataError);
  EXPECT_THROW(read_selected(dir / "missing.txt"), DataError);
}

TEST(Ablate, SevenVariantsOneBest) {
  const auto dir = scratch("ablate");
  RunConfig c = small_toy(dir);
  c.stopping = StoppingConfig::epochs(5);
  const auto rows = cmd_ablate(c, 1);
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(std::count_if(rows.begin(), rows.end(), [](const AblationRow& r) { return r.best; }), 1);
  for (const auto& r : rows) {
    if (r.best) {
      for (const auto& o : rows) EXPECT_LE(o.report.mean(), r.report.mean());
    }
  }
  EXPECT_TRUE(fs::exists(dir / "ablation.txt"));
}

TEST(Ablate, MolchanovWithEntryScoresRejected) {
  RunConfig c = small_toy(scratch("ablate_bad"));
  EXPECT_THROW(cmd_ablate(c, 1, {{Metric::MolchanovImportance, EntryMode::EntryScore}}), ConfigError);
}

TEST(Stability, TwoRunsPerRatio) {
  const auto dir = scratch("stab");
  RunConfig c = small_toy(dir);
  const auto rows = cmd_stability(c, {0.2, 0.8}, 2);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.sets.size(), 2u);
    EXPECT_GE(r.jaccard, 0.0);
    EXPECT_LE(r.jaccard, 1.0);
    EXPECT_EQ(r.downstream.runs.size(), 2u);
  }
  EXPECT_THROW(cmd_stability(c, {0.5}, 1), ConfigError);
}

TEST(Mask, CountsWhitePixels) {
  IndexList sel(25);
  for (std::size_t i = 0; i < 25; ++i) sel[i] = i * 31;
  const std::string pgm = render_mask(sel, ImageShape{28, 28, 1});
  std::istringstream in(pgm);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  EXPECT_EQ(magic, "P2");
  EXPECT_EQ(w, 28u);
  EXPECT_EQ(h, 28u);
  std::size_t white = 0, total = 0;
  for (int v; in >> v; ++total) white += v == 255;
  EXPECT_EQ(total, 784u);
  EXPECT_EQ(white, 25u);
  EXPECT_NE(pgm.find("255"), std::string::npos);
}

TEST(Mask, RejectsEmptyAndOutOfShape) {
  EXPECT_THROW(render_mask({}, ImageShape{28, 28, 1}), ValidationError);
  EXPECT_THROW(render_mask({784}, ImageShape{28, 28, 1}), ValidationError);
}

TEST(ConfigEcho, RoundTripsThroughTheCli) {
  const auto a = scratch("echo_a"), b = scratch("echo_b");
  ASSERT_EQ(cli("select --format toy --toy-samples 300 --k 5 --profile wide --hidden 8,4 --lr 0.002 --stopping epochs "
                "--max-epochs 3 --seed 11 --out " + a.string()),
            0);
  ASSERT_EQ(cli("select --config " + (a / "config.ini").string() + " --out " + b.string()), 0);
  const std::string first = slurp(a / "config.ini");
  std::string second = slurp(b / "config.ini");
  EXPECT_NE(first.find("hidden = 8,4"), std::string::npos);
  EXPECT_EQ(first, second);
  EXPECT_EQ(slurp(a / "selected.txt"), slurp(b / "selected.txt"));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  EXPECT_EQ(cli("toy --toy-samples 50 --out " + (dir / "toy.csv").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "toy.csv"));
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("select --metric nope --out " + dir.string()), 1);
  EXPECT_EQ(cli("select --format csv --data " + (dir / "absent.csv").string() + " --out " + dir.string()), 2);
  EXPECT_EQ(cli("select --k 20 --out " + dir.string()), 1);  // K must be below N = 20
  write_selected(dir / "sel.txt", {900});
  EXPECT_EQ(cli("mask --selected " + (dir / "sel.txt").string() + " --out " + (dir / "m.pgm").string()), 2);
}
