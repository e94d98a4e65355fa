// imifa: simulate data, fit the model family, summarise and score runs.
//
//   imifa simulate --config sim.json --out data/
//   imifa fit --config run.json [--seed 7] [--threads 4] [--force]
//   imifa summarise runs/olive
//   imifa score runs/olive --labels olive_labels.csv [--column area]
//   imifa compare runs/mfa runs/imifa

#include <imifa/commands.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Bayesian (infinite) mixtures of (infinite) factor analysers"};
  app.require_subcommand(1);

  std::string config_path;
  imifa::CommandOptions opts;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
  auto add_common = [&](CLI::App* cmd, bool with_threads) {
    cmd->add_option("--config", config_path, "JSON configuration file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "override the configured seed");
    cmd->add_option("--out", out, "output directory (overrides 'output')");
    cmd->add_flag("--force", opts.force, "replace an existing output directory");
    if (with_threads) cmd->add_option("--threads", threads, "worker threads for model grids")->check(CLI::PositiveNumber);
  };

  auto* simulate = app.add_subcommand("simulate", "write replicate datasets simulated from a factor mixture");
  add_common(simulate, false);
  auto* fit = app.add_subcommand("fit", "run the sampler (a single model or a model grid)");
  add_common(fit, true);

  std::string run_dir;
  auto* summarise = app.add_subcommand("summarise", "posterior summaries and plot data for a run");
  summarise->alias("summarize");
  summarise->add_option("run_dir", run_dir, "run directory")->required();

  std::string labels;
  std::string column;
  auto* score = app.add_subcommand("score", "ARI, error rate and confusion matrix against known labels");
  score->add_option("run_dir", run_dir, "run directory")->required();
  score->add_option("--labels", labels, "CSV file with a header and one label per observation")->required();
  score->add_option("--column", column, "label column name (default: first column)");

  std::vector<std::string> run_dirs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "pool the model comparison tables of several runs");
  compare->add_option("run_dirs", run_dirs, "run directories")->required();
  compare->add_option("--out", compare_out, "write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!out.empty()) opts.out = out;
    if (simulate->parsed() || fit->parsed()) {
      auto* cmd = simulate->parsed() ? simulate : fit;
      if (cmd->count("--seed")) opts.seed = seed;
      if (fit->parsed() && fit->count("--threads")) opts.threads = threads;
      const auto rc = imifa::load_run_config(config_path);
      if (simulate->parsed()) {
        const auto files = imifa::cmd_simulate(rc, opts);
        std::cout << "wrote " << files.size() << " replicate(s)\n";
      } else {
        const auto report = imifa::cmd_fit(rc, opts);
        const auto& best = report.results[report.chosen];
        std::cout << "fitted " << report.results.size() << " model(s) in " << report.wall_seconds << " s; chosen "
                  << (best.name.empty() ? imifa::to_string(best.kind) : best.name) << " (" << best.criterion << " "
                  << best.value << ")\n";
      }
    } else if (summarise->parsed()) {
      imifa::summarise_run(run_dir);
      std::cout << "summary written to " << run_dir << "\n";
    } else if (score->parsed()) {
      const auto r = imifa::cmd_score(run_dir, labels, column.empty() ? std::nullopt : std::optional<std::string>(column));
      std::cout << "ARI " << r.ari << ", error rate " << 100.0 * r.error.rate << "%\n";
    } else if (compare->parsed()) {
      const auto table = imifa::cmd_compare(run_dirs);
      if (compare_out.empty()) {
        std::cout << table;
      } else {
        std::ofstream f(compare_out);
        if (!f) throw imifa::IoError("cannot write " + compare_out);
        f << table;
      }
    }
  } catch (const imifa::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
