#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "hyperkan/pipeline.hpp"

using namespace hyperkan;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("hyperkan_test_pipeline_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig quick_config(const fs::path& out) {
  RunConfig c;
  c.set("arch", "mlp").set("hidden", "8").set("epochs", "3").set("synth_height", "12").set("synth_width", "12");
  c.set("out", out.string());
  return c;
}

std::string read(const fs::path& p) {
  std::ifstream f(p);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::string last_line(const fs::path& p) {
  std::ifstream f(p);
  std::string line, last;
  while (std::getline(f, line))
    if (!line.empty()) last = line;
  return last;
}

}  // namespace

TEST(Config, DefaultsParseAndUnknownKeys) {
  RunConfig c;
  EXPECT_EQ(c.get_size("batch_size"), 128u);
  EXPECT_EQ(c.get_size("epochs"), 200u);
  EXPECT_DOUBLE_EQ(c.get_double("lr"), 0.01);
  EXPECT_DOUBLE_EQ(c.get_double("fraction"), 0.2);
  auto p = RunConfig::parse("# comment\narch = cnn2d  # trailing\n\ngrid_size=8\ncube = data/c.hsc\n", "/base");
  EXPECT_EQ(p.get("arch"), "cnn2d");
  EXPECT_EQ(p.get_size("grid_size"), 8u);
  EXPECT_EQ(p.get("cube"), "/base/data/c.hsc");
  EXPECT_THROW(RunConfig::parse("colour = red\n"), ContractError);
  EXPECT_THROW(RunConfig::parse("just words\n"), ContractError);
  EXPECT_THROW(c.set("nope", "1"), ContractError);
  EXPECT_EQ(RunConfig::parse(p.text()).text(), p.text());
}

TEST(Config, ValidationRejectsBadValues) {
  RunConfig c;
  c.set("lr", "0.9");
  EXPECT_THROW(c.validate(), ContractError);
  c.set("force_lr", "1");
  EXPECT_NO_THROW(c.validate());
  RunConfig d;
  d.set("epochs", "many");
  EXPECT_THROW(d.validate(), ContractError);
  RunConfig e;
  e.set("arch", "resnet");
  EXPECT_THROW(e.validate(), ContractError);
}

TEST(Metrics, RowFormatAndParse) {
  MetricsRow r{"mlp", "full-kan", 2, "synthetic", 3, 97.5, 0.97512345, 1234, 200, 1.25};
  const auto line = format_row(r);
  EXPECT_EQ(line, "mlp,full-kan,2,synthetic,3,97.500000,0.975123,1234,200,1.250");
  const auto back = parse_row(line);
  EXPECT_EQ(back.arch, "mlp");
  EXPECT_EQ(back.params, 1234u);
  EXPECT_EQ(row_without_timing(line), "mlp,full-kan,2,synthetic,3,97.500000,0.975123,1234,200");
  EXPECT_THROW(parse_row("a,b,c"), IoError);
}

TEST(Parameters, SaveLoadRoundTripAndMismatch) {
  const auto dir = scratch("params");
  Tensor<double> a({2, 3}, std::vector<double>{1, -2, 3.25, 1e-300, -0.0, 7}), b({1}, 0.1);
  save_parameters((dir / "p.bin").string(), std::vector<Tensor<double>>{a, b});
  Tensor<double> a2({2, 3}, 0.0), b2({1}, 0.0);
  load_parameters((dir / "p.bin").string(), std::vector<Tensor<double>>{a2, b2});
  EXPECT_EQ(a2.vector(), a.vector());
  EXPECT_EQ(b2.vector(), b.vector());
  Tensor<double> wrong({3, 2}, 0.0);
  EXPECT_THROW(load_parameters((dir / "p.bin").string(), std::vector<Tensor<double>>{wrong, b2}), LoadError);
  EXPECT_THROW(load_parameters((dir / "p.bin").string(), std::vector<Tensor<double>>{a2}), LoadError);
}

TEST(RunTrain, WritesArtifactsAndEvalReproducesMetrics) {
  const auto dir = scratch("run");
  auto cfg = quick_config(dir);
  std::size_t epochs_seen = 0;
  RunHooks hooks;
  hooks.on_epoch = [&](const EpochSummary&) { ++epochs_seen; };
  const auto res = run_train(cfg, true, hooks);
  EXPECT_EQ(epochs_seen, 3u);
  for (const char* f : {"config.txt", "split.txt", "model.txt", "params.bin", "metrics.csv", "run_log.jsonl"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(read(dir / "metrics.csv").substr(0, std::string(metrics_header()).size()), metrics_header());
  EXPECT_EQ(last_line(dir / "metrics.csv"), format_row(res.row));
  std::ifstream log(dir / "run_log.jsonl");
  std::string line;
  std::size_t events = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("event"));
    ++events;
  }
  EXPECT_EQ(events, 5u);
  const auto again = run_eval(dir.string());
  EXPECT_DOUBLE_EQ(again.overall_accuracy, res.metrics.overall_accuracy);
  EXPECT_DOUBLE_EQ(again.weighted_f1, res.metrics.weighted_f1);
}

TEST(RunTrain, RerunFromSnapshotGivesIdenticalRow) {
  const auto first = scratch("first"), second = scratch("second");
  const auto res = run_train(quick_config(first));
  auto cfg = RunConfig::load((first / "config.txt").string());
  cfg.set("out", second.string());
  const auto again = run_train(cfg);
  EXPECT_EQ(row_without_timing(format_row(again.row)), row_without_timing(format_row(res.row)));
  EXPECT_EQ(read(second / "split.txt"), read(first / "split.txt"));
}

TEST(RunTrain, NumericFailuresNameTheirStage) {
  try {
    staged("train", []() -> int { throw NumericError("non-finite loss"); });
    FAIL() << "no exception";
  } catch (const NumericError& e) {
    EXPECT_EQ(std::string(e.what()), "train: non-finite loss");
  }
  EXPECT_THROW(staged("pca", []() -> int { throw DomainError("log of 0"); }), NumericError);
  EXPECT_EQ(staged("evaluate", [] { return 4; }), 4);
}

TEST(RunTrain, MissingInputsAreIoErrors) {
  const auto dir = scratch("missing");
  auto cfg = quick_config(dir);
  cfg.set("cube", (dir / "absent.hsc").string()).set("labels", (dir / "absent.hsl").string());
  EXPECT_THROW(run_train(cfg), IoError);
  EXPECT_THROW(run_eval((dir / "nowhere").string()), IoError);
}

// ---- sweeps ----

TEST(Sweep, CellsOrderAndCollapse) {
  SweepSpec s;
  s.grids = {2, 8, 5};
  s.hidden_layers = {0, 1};
  s.widths = {16, 32};
  s.datasets = {{"a", "", "", 1}};
  const auto cells = sweep_cells(s);
  ASSERT_EQ(cells.size(), 4u + 8u);
  EXPECT_EQ(cells[0].label(), "KAN (in, out) G8");
  EXPECT_EQ(cells[2].label(), "KAN (in, out) G2");
  EXPECT_EQ(cells[3].label(), "MLP (in, out)");
  EXPECT_EQ(cells[4].label(), "KAN (in, 16, out) G8");
  EXPECT_EQ(cells.back().label(), "MLP (in, 32, out)");
  s.families = {"svm"};
  EXPECT_THROW(s.validate(), ContractError);
}

TEST(Sweep, RunsEveryCellAndRendersGains) {
  SweepSpec s;
  s.grids = {2, 5};
  s.hidden_layers = {1};
  s.widths = {8};
  s.datasets = {{"d1", "", "", 1}, {"d2", "", "", 2}};
  s.jobs = 2;
  RunConfig base = quick_config(scratch("sweep"));
  const auto results = run_sweep(s, base);
  ASSERT_EQ(results.size(), 6u);
  for (const auto& r : results) EXPECT_TRUE(r.ok) << r.error;
  const auto md = sweep_markdown(results, sweep_cells(s), {"d1", "d2"});
  EXPECT_NE(md.find("| Model | d1 | d2 | Average | Average gain |"), std::string::npos);
  EXPECT_NE(md.find("KAN (in, 8, out) G5"), std::string::npos);
  const auto mlp_line = md.substr(md.find("| MLP (in, 8, out)"));
  EXPECT_NE(mlp_line.substr(0, mlp_line.find('\n')).find("| - |"), std::string::npos);
  const auto csv = sweep_csv(results);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Sweep, FailuresAreRecordedNotFatal) {
  SweepSpec s;
  s.datasets = {{"bad", "/nonexistent/c.hsc", "/nonexistent/l.hsl", 1}};
  const auto results = run_sweep(s, quick_config(scratch("sweepfail")));
  ASSERT_EQ(results.size(), 2u);
  for (const auto& r : results) {
    EXPECT_FALSE(r.ok);
    EXPECT_FALSE(r.error.empty());
  }
  const auto csv = sweep_csv(results), failures = sweep_failures_csv(results);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
  EXPECT_EQ(std::count(failures.begin(), failures.end(), '\n'), 3);
  EXPECT_NE(failures.find("/nonexistent/c.hsc"), std::string::npos);
}

// ---- reports ----

TEST(Report, PairsVanillaAndKanAndSkipsCorruptDirs) {
  const auto root = scratch("report");
  std::vector<std::string> dirs;
  for (const char* plan : {"vanilla", "full-kan"}) {
    auto cfg = quick_config(root / plan);
    cfg.set("plan", plan);
    run_train(cfg);
    dirs.push_back((root / plan).string());
  }
  fs::create_directories(root / "junk");
  std::ofstream(root / "junk" / "metrics.csv") << "garbage\n";
  dirs.push_back((root / "junk").string());
  const auto rep = build_report(dirs, false);
  EXPECT_EQ(rep.runs, 2u);
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("junk"), std::string::npos);
  EXPECT_NE(rep.markdown.find("| MLP |"), std::string::npos);
  EXPECT_NE(rep.markdown.find("| MLP full-kan |"), std::string::npos);
  EXPECT_EQ(rep.markdown.find("Paper reference"), std::string::npos);
  const auto with_ref = build_report(dirs, true);
  EXPECT_NE(with_ref.markdown.find("not reproduced here"), std::string::npos);
  EXPECT_NE(with_ref.markdown.find("| SSFTT KAN | 99.20 | 0.9919 |"), std::string::npos);
  EXPECT_THROW(build_report({(root / "junk").string()}, false), ContractError);
}

TEST(Report, PaperReferenceTableValues) {
  const auto& refs = paper_reference();
  ASSERT_EQ(refs.size(), 6u);
  EXPECT_DOUBLE_EQ(refs[0].oa_vanilla, 91.42);
  EXPECT_DOUBLE_EQ(refs[3].oa_kan, 97.08);
  EXPECT_DOUBLE_EQ(refs[5].f1_kan, 0.9919);
}
