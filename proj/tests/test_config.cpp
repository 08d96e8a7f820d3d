#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "spi/config.hpp"
#include "spi/sweep.hpp"
#include "support.hpp"

using namespace spi;

namespace {

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "expected ConfigError";
  return {};
}

}  // namespace

TEST(Config, DefaultsMatchReferenceValues) {
  const RunConfig c;
  EXPECT_EQ(c.train.gamma, 0.8);
  EXPECT_EQ(c.train.rho, 0.7);
  EXPECT_EQ(c.train.warmup, 5);
  EXPECT_EQ(c.rotation_deg, 50.0);
  EXPECT_EQ(c.data.shots, 3u);
  EXPECT_EQ(c.data.num_classes, 5u);
  EXPECT_TRUE(c.injection_resolved());
}

TEST(Config, ResolvedDumpRoundTrips) {
  RunConfig c;
  std::istringstream in(
      "# comment\n"
      "gamma = 0.9\n"
      "rho=0.5\n"
      "\n"
      "loss_mask = con+ida+cls\n"
      "hidden = 32,16\n"
      "translation = 1.5, -2\n"
      "anchor_mode = standard\n"
      "injection_interval = iteration\n"
      "use_ema = false\n"
      "kind = moons\n"
      "num_classes = 2\n"
      "seed = 17\n");
  apply_config_text(c, in);
  EXPECT_EQ(c.train.gamma, 0.9);
  EXPECT_EQ(c.train.rho, 0.5);
  EXPECT_EQ(c.train.loss_mask, (LossMask{true, false, true, true}));
  EXPECT_EQ(c.train.hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(c.data.translation, (Vec{1.5, -2.0}));
  EXPECT_EQ(c.train.anchor_mode, AnchorMode::Standard);
  EXPECT_EQ(c.train.injection_interval, InjectionInterval::Iteration);
  EXPECT_FALSE(c.train.use_ema);
  EXPECT_EQ(c.data.kind, ShiftKind::MoonsShift);
  EXPECT_EQ(c.train.seed, 17u);

  const std::string text = resolved_config_text(c);
  RunConfig back;
  std::istringstream again(text);
  apply_config_text(back, again);
  EXPECT_EQ(resolved_config_text(back), text);
  std::set<std::string> keys;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) keys.insert(line.substr(0, line.find(' ')));
  EXPECT_EQ(keys.size(), config_keys().size());
}

TEST(Config, InjectionAutoFollowsLossMask) {
  RunConfig c;
  set_config_value(c, "loss_mask", "cls");
  EXPECT_FALSE(c.injection_resolved());
  EXPECT_FALSE(c.resolved_train().injection_enabled);
  set_config_value(c, "injection", "true");
  EXPECT_TRUE(c.resolved_train().injection_enabled);
  set_config_value(c, "injection", "auto");
  set_config_value(c, "loss_mask", "all");
  EXPECT_TRUE(c.injection_resolved());
  set_config_value(c, "injection", "false");
  EXPECT_FALSE(c.injection_resolved());
}

TEST(Config, ErrorsNameTheKey) {
  RunConfig c;
  EXPECT_NE(error_text([&] { set_config_value(c, "gama", "0.8"); }).find("gama"), std::string::npos);
  EXPECT_NE(error_text([&] { set_config_value(c, "gamma", "high"); }).find("gamma"), std::string::npos);
  EXPECT_NE(error_text([&] { set_config_value(c, "epochs", "2.5"); }).find("epochs"), std::string::npos);
  EXPECT_NE(error_text([&] { set_config_value(c, "loss_mask", "con+foo"); }).find("loss_mask"), std::string::npos);
  EXPECT_NE(error_text([&] { set_config_value(c, "kind", "spiral"); }).find("kind"), std::string::npos);
  EXPECT_NE(error_text([&] { set_config_value(c, "use_ema", "maybe"); }).find("use_ema"), std::string::npos);
  std::istringstream bad("gamma = 0.8\nnot a pair\n");
  EXPECT_NE(error_text([&] { apply_config_text(c, bad, "run.cfg"); }).find("run.cfg:2"), std::string::npos);
  std::istringstream bad_value("rho = 0.7\nrho = x\n");
  EXPECT_NE(error_text([&] { apply_config_text(c, bad_value, "run.cfg"); }).find("run.cfg:2: rho"), std::string::npos);
  EXPECT_NE(error_text([&] { apply_config_file(c, "/nonexistent/x.cfg"); }).find("x.cfg"), std::string::npos);
}

TEST(Config, ValidationNamesTheKey) {
  RunConfig c;
  c.data.shots = 0;
  EXPECT_NE(error_text([&] { validate(c); }).find("shots"), std::string::npos);
  RunConfig d;
  d.train.gamma = 1.5;
  EXPECT_NE(error_text([&] { validate(d); }).find("gamma"), std::string::npos);
  RunConfig n;
  set_config_value(n, "epochs", "-3");
  EXPECT_NE(error_text([&] { validate(n); }).find("epochs"), std::string::npos);
  RunConfig e;
  set_config_value(e, "loss_mask", "con+ils");
  EXPECT_NE(error_text([&] { validate(e); }).find("cls"), std::string::npos);
}

// --- sweep plumbing -------------------------------------------------------------

TEST(Sweep, GridsAndErrors) {
  const auto g = param_grid("gamma", {"0.7", "0.80"});
  ASSERT_EQ(g.cells.size(), 2u);
  EXPECT_EQ(g.cells[1].key, "gamma=0.8");
  EXPECT_NE(error_text([] { param_grid("bogus", {"1"}); }).find("bogus"), std::string::npos);
  error_text([] { param_grid("gamma", {}); });
  error_text([] { param_grid("gamma", {"x"}); });
  error_text([] { preset_grid("nope"); });
  for (const auto& name : sweep_presets()) EXPECT_FALSE(preset_grid(name).cells.empty()) << name;
  EXPECT_EQ(preset_grid("rho").cells.front().key, "rho=1");
  EXPECT_EQ(preset_grid("losses").cells.size(), 5u);
}

TEST(Sweep, SampleStandardDeviation) {
  CellResult r{"g", "c", {0, 1, 2, 3}, {0.5, 0.6, 0.7, 0.8}, 0, 0};
  finish_cell(r);
  EXPECT_NEAR(r.mean, 0.65, 1e-15);
  // Σ(x − mean)² = 0.05, n − 1 = 3.
  EXPECT_NEAR(r.stddev, std::sqrt(0.05 / 3.0), 1e-15);
  CellResult one{"g", "c", {0}, {0.4}, 0, 0};
  finish_cell(one);
  EXPECT_EQ(one.stddev, 0.0);
}

TEST(Sweep, CsvLayout) {
  std::vector<CellResult> cells{{"rho", "rho=0.7", {0, 1}, {0.5, 0.75}, 0.625, 0.25}};
  std::ostringstream out;
  write_sweep_csv(out, cells);
  EXPECT_EQ(out.str(), std::string(kSweepHeader) + "\nrho,rho=0.7,2,0.625,0.25,0;1,0.5;0.75\n");
  EXPECT_NE(find_cell(cells, "rho", "rho=0.7"), nullptr);
  EXPECT_EQ(find_cell(cells, "rho", "rho=0.5"), nullptr);
}

TEST(Sweep, RunnerCachesIdenticalConfigurations) {
  RunConfig base;
  base.data.n_source = 60;
  base.data.n_target_unlabeled = 40;
  base.data.n_target_test = 40;
  base.train.epochs = 2;
  base.train.hidden = {8};
  base.train.embedding_dim = 6;
  base.train.topk = 2;
  base.train.lr_peak = 0.001;
  SweepRunner runner(base);
  // gamma=0.8 is the default, so these two grids share a cell.
  const auto cells = runner.run_grids({param_grid("gamma", {"0.8", "0.9"}), param_grid("rho", {"0.7"})}, {0, 1});
  EXPECT_EQ(runner.training_runs(), 4u);
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_EQ(cells[0].grid, "gamma");
  EXPECT_EQ(cells[2].grid, "rho");
  EXPECT_EQ(cells[0].accuracies, cells[2].accuracies);
  for (const auto& c : cells) {
    for (double a : c.accuracies) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
    }
  }
  EXPECT_SPI_ERROR(runner.run_grids({param_grid("gamma", {"0.8"})}, {}), ErrorKind::ConfigError);
}
