#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "vbev/harness.hpp"

namespace {

using namespace vbev;

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "config file with key = value lines");
  cmd->add_option("--set", c.sets, "override one key (key=value), repeatable")->take_all();
}

RunConfig resolve(const Common& c) {
  auto cfg = load_config(c.config, c.sets);
  std::filesystem::create_directories(cfg.out);
  write_text(cfg.out + "/config.txt", config_snapshot(cfg));
  return cfg;
}

int cmd_gen(const RunConfig& cfg) {
  const auto data = generate_dataset(cfg);
  write_dataset_dir(data, cfg.out);
  std::printf("wrote %zu scenes with %zu boxes each to %s\n", data.size(), cfg.gen.boxes, cfg.out.c_str());
  return 0;
}

template <typename T>
int train_as(const RunConfig& cfg) {
  const auto data = load_dataset_dir(cfg.train.dataset);
  const auto s = train_run<T>(cfg, data);
  if (!s.log.empty())
    std::printf("steps %zu  loss %.6g -> %.6g\n", s.log.size(), s.log.front().total, s.log.back().total);
  std::printf("checkpoint %s\nlog %s/train_log.csv\n", s.checkpoint.c_str(), cfg.out.c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  return cfg.train.precision == TrainPrecision::f64 ? train_as<double>(cfg) : train_as<float>(cfg);
}

int cmd_eval(const RunConfig& cfg) {
  if (cfg.eval.checkpoint.empty()) throw ConfigError("eval.checkpoint is required");
  const auto header = read_checkpoint_header(cfg.eval.checkpoint);
  const auto& dir = cfg.eval.dataset.empty() ? header.config.train.dataset : cfg.eval.dataset;
  const auto data = load_dataset_dir(dir);
  const auto m = header.scalar_bytes == sizeof(double) ? evaluate_checkpoint<double>(cfg.eval.checkpoint, data)
                                                       : evaluate_checkpoint<float>(cfg.eval.checkpoint, data);
  const auto text = metrics_csv(m);
  write_text(cfg.out + "/metrics.csv", text);
  std::fputs(text.c_str(), stdout);
  return 0;
}

int cmd_bench(const RunConfig& cfg) {
  const auto recs = bench_scaling(cfg.model, cfg.rig, cfg.bench);
  std::string csv = bench_csv_header() + "\n";
  for (const auto& r : recs) csv += bench_csv_row(r) + "\n";
  write_text(cfg.out + "/bench.csv", csv);
  std::fputs(csv.c_str(), stdout);
  for (const auto& mode : cfg.bench.modes) {
    const auto f = fit_scaling(recs, mode);
    std::printf("%s: query slope %.3f, time slope %.3f\n", mode.c_str(), f.query_slope, f.time_slope);
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  const auto report = run_gradcheck(cfg.gradcheck);
  const auto text = gradcheck_report_text(report);
  write_text(cfg.out + "/gradcheck.csv", text);
  std::fputs(text.c_str(), stdout);
  std::printf("%s\n", report.passed() ? "all gradients match" : "gradient check FAILED");
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vector-query BEV detection toolkit"};
  app.require_subcommand(1);

  Common common;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_scenes, gen_boxes;
  std::optional<std::string> gen_out;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--scenes", gen_scenes, "number of scenes");
  gen->add_option("--boxes", gen_boxes, "boxes per scene");
  gen->add_option("--out", gen_out, "output directory");

  auto* train = app.add_subcommand("train", "train a model on a generated dataset");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* bench = app.add_subcommand("bench", "encoder scaling benchmark");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  for (auto* cmd : {train, eval, bench, grad}) add_common(cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  // Dedicated flags act like --set entries given after the others.
  if (gen_seed) common.sets.push_back("gen.seed=" + std::to_string(*gen_seed));
  if (gen_scenes) common.sets.push_back("gen.scenes=" + std::to_string(*gen_scenes));
  if (gen_boxes) common.sets.push_back("gen.boxes=" + std::to_string(*gen_boxes));
  if (gen_out) common.sets.push_back("out=" + *gen_out);

  try {
    const auto cfg = resolve(common);
    if (gen->parsed()) return cmd_gen(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (bench->parsed()) return cmd_bench(cfg);
    return cmd_gradcheck(cfg);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericFailure& e) {
    std::fprintf(stderr, "%s\nlast good checkpoint: %s\n", e.what(), e.checkpoint().c_str());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
