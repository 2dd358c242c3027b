#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "hyperkan/pipeline.hpp"

namespace hk = hyperkan;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

template <typename N>
std::vector<N> parse_numbers(const std::string& key, const std::string& text) {
  std::vector<N> out;
  for (const auto& p : split_list(text)) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(p, &pos);
      if (pos != p.size() || v < 0) throw std::invalid_argument(p);
      out.push_back(static_cast<N>(v));
    } catch (const std::exception&) {
      throw hk::ContractError("--" + key + " needs comma-separated non-negative integers, got '" + text + "'");
    }
  }
  return out;
}

void print_metrics(const hk::MetricsReport& m) {
  std::printf("OA %.4f\nweighted_F1 %.6f\n", m.overall_accuracy, m.weighted_f1);
  for (std::size_t c = 0; c < m.f1.size(); ++c) {
    std::printf("class %zu f1 %.4f support %llu\n", c + 1, m.f1[c], static_cast<unsigned long long>(m.support[c]));
  }
}

void apply_overrides(hk::RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw hk::ContractError("--set needs key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
}

struct KeyFlags {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app, const std::vector<std::string>& skip = {}) {
    for (const auto& k : hk::config_schema()) {
      if (std::find(skip.begin(), skip.end(), k.name) != skip.end()) continue;
      std::string flag = k.name;
      std::replace(flag.begin(), flag.end(), '_', '-');
      options.emplace_back(k.name, app->add_option("--" + flag, values[k.name], k.help));
    }
  }

  void apply(hk::RunConfig& cfg) const {
    for (const auto& [key, opt] : options)
      if (opt->count()) cfg.set(key, values.at(key));
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Kolmogorov-Arnold network toolkit for hyperspectral pixel classification"};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic labelled cube");
  hk::SyntheticSpec synth;
  std::string gen_out = "synth";
  gen->add_option("--height", synth.height, "rows")->capture_default_str();
  gen->add_option("--width", synth.width, "columns")->capture_default_str();
  gen->add_option("--bands", synth.bands, "spectral bands")->capture_default_str();
  gen->add_option("--classes", synth.classes, "class count")->capture_default_str();
  gen->add_option("--noise", synth.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  gen->add_option("--seed", synth.seed, "scene seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train one model and write a run directory");
  std::string config_path, rerun_dir;
  std::vector<std::string> sets;
  bool quiet = false;
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--rerun", rerun_dir, "repeat a run from its directory's config and split");
  train->add_option("--set", sets, "override a config key (key=value), repeatable");
  KeyFlags train_flags;
  train_flags.attach(train);
  train->add_flag("--quiet", quiet, "suppress per-epoch progress");
  train->add_flag_callback(
      "--print-config-keys",
      [] {
        for (const auto& k : hk::config_schema()) std::printf("%-14s %-10s %s\n", k.name, k.fallback, k.help);
        throw CLI::Success();
      },
      "list configuration keys and exit");

  // eval
  auto* eval = app.add_subcommand("eval", "re-score a run directory on its test split");
  std::string eval_dir;
  eval->add_option("run_dir", eval_dir, "run directory")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "grid of MLP and KAN-MLP runs over datasets");
  std::string grids = "2", layers = "0", widths = "16", bns = "0", families = "mlp,kan", datasets;
  std::string sweep_out = "sweep", sweep_config;
  std::vector<std::string> sweep_sets;
  std::size_t repeats = 1, jobs = 1;
  sweep->add_option("--grids", grids, "KAN grid sizes")->capture_default_str();
  sweep->add_option("--layers", layers, "hidden layer counts")->capture_default_str();
  sweep->add_option("--widths", widths, "hidden widths")->capture_default_str();
  sweep->add_option("--bn", bns, "batch-norm settings (0,1)")->capture_default_str();
  sweep->add_option("--families", families, "model families (mlp,kan)")->capture_default_str();
  sweep->add_option("--repeats", repeats, "seeds per cell")->capture_default_str();
  sweep->add_option("--datasets", datasets,
                    "name=cube:labels or [name=]synth:<seed> entries; default one synthetic scene");
  sweep->add_option("--jobs", jobs, "worker threads")->capture_default_str();
  sweep->add_option("--config", sweep_config, "base config file");
  sweep->add_option("--set", sweep_sets, "override a base config key (key=value), repeatable");
  sweep->add_option("--out", sweep_out, "output directory")->capture_default_str();
  KeyFlags sweep_flags;
  sweep_flags.attach(sweep, {"out"});

  // report
  auto* report = app.add_subcommand("report", "merge run directories into comparison tables");
  std::vector<std::string> report_dirs;
  std::string report_out;
  bool paper_ref = false;
  report->add_option("run_dirs", report_dirs, "run directories")->required();
  report->add_option("--out", report_out, "write report.md and report.csv into this directory");
  report->add_flag("--paper-reference", paper_ref, "append the paper's reference averages (not reproduced)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (gen->parsed()) {
    if (synth.height == 0 || synth.width == 0 || synth.bands == 0) throw hk::ContractError("extents must be >= 1");
    if (synth.classes < 2) throw hk::ContractError("need at least 2 classes");
    if (!(synth.noise_sigma >= 0)) throw hk::ContractError("noise must be >= 0");
    const auto scene = hk::gen_synthetic(synth);
    std::error_code ec;
    fs::create_directories(gen_out, ec);
    if (ec) throw hk::IoError("cannot create " + gen_out);
    hk::save_cube(scene.cube, (fs::path(gen_out) / "cube.hsc").string());
    hk::save_labels(scene.labels, (fs::path(gen_out) / "labels.hsl").string());
    hk::detail::write_file((fs::path(gen_out) / "synth.txt").string(), hk::synthetic_provenance(synth, scene));
    std::printf("wrote %s (%zux%zux%zu, %zu classes)\n", gen_out.c_str(), synth.height, synth.width, synth.bands,
                synth.classes);
    return kOk;
  }

  if (train->parsed()) {
    if (!config_path.empty() && !rerun_dir.empty()) throw hk::ContractError("--config and --rerun are exclusive");
    hk::RunConfig cfg;
    if (!config_path.empty()) cfg = hk::RunConfig::load(config_path);
    if (!rerun_dir.empty()) cfg = hk::RunConfig::load((fs::path(rerun_dir) / "config.txt").string());
    apply_overrides(cfg, sets);
    train_flags.apply(cfg);
    hk::RunHooks hooks;
    const std::size_t epochs = cfg.get_size("epochs");
    if (!quiet) {
      hooks.on_epoch = [epochs](const hk::EpochSummary& s) {
        if (s.epoch == 0 || (s.epoch + 1) % 10 == 0 || s.epoch + 1 == epochs) {
          std::printf("epoch %zu/%zu lr %.5g loss %.6f train_acc %.2f\n", s.epoch + 1, epochs, s.learning_rate,
                      s.mean_loss, s.train_accuracy);
          std::fflush(stdout);
        }
      };
    }
    const auto r = hk::run_train(cfg, true, hooks);
    std::printf("params %zu\n", r.row.params);
    print_metrics(r.metrics);
    std::printf("run directory %s\n", r.run_dir.c_str());
    return kOk;
  }

  if (eval->parsed()) {
    print_metrics(hk::run_eval(eval_dir));
    return kOk;
  }

  if (sweep->parsed()) {
    hk::RunConfig base;
    if (!sweep_config.empty()) base = hk::RunConfig::load(sweep_config);
    apply_overrides(base, sweep_sets);
    sweep_flags.apply(base);
    hk::SweepSpec spec;
    spec.grids = parse_numbers<int>("grids", grids);
    spec.hidden_layers = parse_numbers<std::size_t>("layers", layers);
    spec.widths = parse_numbers<std::size_t>("widths", widths);
    spec.batch_norm.clear();
    for (auto b : parse_numbers<int>("bn", bns)) {
      if (b > 1) throw hk::ContractError("--bn takes 0 or 1");
      spec.batch_norm.push_back(b == 1);
    }
    spec.families = split_list(families);
    spec.repeats = repeats;
    spec.jobs = jobs;
    if (datasets.empty()) {
      spec.datasets.push_back({"synthetic", "", "", base.get_size("synth_seed")});
    } else {
      for (const auto& d : split_list(datasets)) {
        const auto named = d.find('=');
        const std::string value = named == std::string::npos ? d : d.substr(named + 1);
        if (value.rfind("synth:", 0) == 0) {
          const auto seed = parse_numbers<std::uint64_t>("datasets", value.substr(6));
          if (seed.size() != 1) throw hk::ContractError("--datasets synth entries look like [name=]synth:<seed>");
          const std::string name = named == std::string::npos ? "synth" + value.substr(6) : d.substr(0, named);
          spec.datasets.push_back({name, "", "", seed[0]});
          continue;
        }
        const auto eq = d.find('='), colon = d.find(':', eq == std::string::npos ? 0 : eq);
        if (eq == std::string::npos || colon == std::string::npos) {
          throw hk::ContractError("--datasets entries look like name=cube:labels or [name=]synth:<seed>, got '" + d +
                                  "'");
        }
        spec.datasets.push_back({d.substr(0, eq), d.substr(eq + 1, colon - eq - 1), d.substr(colon + 1), 1});
      }
    }
    base.validate();
    spec.validate();
    const auto cells = hk::sweep_cells(spec);
    const std::size_t total = cells.size() * spec.datasets.size() * spec.repeats;
    std::printf("sweep: %zu configurations x %zu datasets x %zu repeats = %zu runs\n", cells.size(),
                spec.datasets.size(), spec.repeats, total);
    std::fflush(stdout);
    std::size_t done = 0;
    const auto results = hk::run_sweep(spec, base, [&](const hk::SweepResult& r) {
      ++done;
      if (r.ok) {
        std::printf("[%zu/%zu] %s %s seed %llu OA %.2f F1 %.4f\n", done, total, r.dataset.c_str(),
                    r.cell.label().c_str(), static_cast<unsigned long long>(r.seed), r.row.oa, r.row.weighted_f1);
      } else {
        std::printf("[%zu/%zu] %s %s seed %llu FAILED: %s\n", done, total, r.dataset.c_str(), r.cell.label().c_str(),
                    static_cast<unsigned long long>(r.seed), r.error.c_str());
      }
      std::fflush(stdout);
    });
    std::error_code ec;
    fs::create_directories(sweep_out, ec);
    if (ec) throw hk::IoError("cannot create " + sweep_out);
    std::vector<std::string> names;
    for (const auto& d : spec.datasets) names.push_back(d.name);
    hk::detail::write_file((fs::path(sweep_out) / "base_config.txt").string(), base.text());
    hk::detail::write_file((fs::path(sweep_out) / "sweep.csv").string(), hk::sweep_csv(results));
    const std::string md = hk::sweep_markdown(results, cells, names);
    hk::detail::write_file((fs::path(sweep_out) / "sweep.md").string(), md);
    std::printf("\n%s\nwrote %s\n", md.c_str(), sweep_out.c_str());
    std::size_t failed = 0;
    for (const auto& r : results) failed += r.ok ? 0 : 1;
    if (failed) {
      hk::detail::write_file((fs::path(sweep_out) / "sweep_failures.csv").string(), hk::sweep_failures_csv(results));
      std::fprintf(stderr, "sweep: %zu of %zu runs failed (see sweep_failures.csv)\n", failed, results.size());
      return kNumeric;
    }
    return kOk;
  }

  if (report->parsed()) {
    const auto rep = hk::build_report(report_dirs, paper_ref);
    for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("%s", rep.markdown.c_str());
    if (!report_out.empty()) {
      std::error_code ec;
      fs::create_directories(report_out, ec);
      if (ec) throw hk::IoError("cannot create " + report_out);
      hk::detail::write_file((fs::path(report_out) / "report.md").string(), rep.markdown);
      hk::detail::write_file((fs::path(report_out) / "report.csv").string(), rep.csv);
    }
    return kOk;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const hk::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const hk::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const hk::DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
}
