// fpt: command-line harness for the Feature Pyramid Transformer library.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "fpt/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> h;
  std::optional<double> tol;
  std::optional<std::size_t> repeats;
  std::optional<std::size_t> threads;
  std::string out;
  std::optional<std::string> weights;
  std::optional<std::string> fault;
  double fault_factor = 0.5;
  std::string what = "config";
  std::string preset = "default";
};

fpt::RunConfig resolve(const Flags& f) {
  fpt::RunConfig cfg = f.config.empty() ? fpt::RunConfig::defaults() : fpt::load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.mode) cfg.mode = fpt::parse_mode(*f.mode);
  if (f.h) cfg.gradcheck_h = *f.h;
  if (f.tol) cfg.gradcheck_tol = *f.tol;
  if (f.repeats) cfg.bench_repeats = *f.repeats;
  if (f.threads) cfg.threads = *f.threads;
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw fpt::Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw fpt::Error("write to '" + path + "' failed");
}

int finish(const fpt::RunReport& report, const Flags& f) {
  write_text(f.out, fpt::to_jsonl(report));
  if (!report.passed) {
    std::cerr << "fpt " << report.command << ": FAIL: " << report.failure << "\n";
    return 1;
  }
  return 0;
}

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Flags& f) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", f.config, "YAML run configuration (defaults built in)")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "Seed for weights, inputs and DropBlock");
  sub->add_option("--mode", f.mode, "train or eval")->check(CLI::IsMember({"train", "eval"}));
  sub->add_option("--threads", f.threads, "OpenMP threads for the kernels (0 = default)");
  sub->add_option("--out", f.out, "Write the JSONL report here instead of stdout");
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature Pyramid Transformer: forward, gradient check, complexity and timing"};
  // --h is the finite-difference step, so help is long-form only.
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  Flags f;

  CLI::App* forward = add_command(app, "forward", "Run the network on a synthetic pyramid", f);
  forward->add_option("--weights", f.weights, "FPTW weight file (Kaiming init from --seed otherwise)")
      ->check(CLI::ExistingFile);

  CLI::App* gradcheck = add_command(app, "gradcheck", "Compare analytic and numeric gradients", f);
  gradcheck->add_option("--h", f.h, "Central-difference step")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tol", f.tol, "Largest accepted relative error")
      ->check(CLI::NonNegativeNumber);
  gradcheck->add_option("--inject-fault", f.fault,
                        "Scale the gradient rule of this op (e.g. conv2d) to prove the check bites");
  gradcheck->add_option("--fault-factor", f.fault_factor, "Scale used by --inject-fault");

  CLI::App* count = add_command(app, "count", "Parameter and FLOP accounting", f);

  CLI::App* bench = add_command(app, "bench", "Time repeated forward passes", f);
  bench->add_option("--repeats", f.repeats, "Number of timed passes")->check(CLI::PositiveNumber);
  bench->add_option("--weights", f.weights, "FPTW weight file")->check(CLI::ExistingFile);

  CLI::App* gen = add_command(app, "gen", "Write a config file or an initialized weight file", f);
  gen->add_option("--what", f.what, "config or weights")->check(CLI::IsMember({"config", "weights"}));
  gen->add_option("--preset", f.preset, "Config preset: default or tiny")
      ->check(CLI::IsMember({"default", "tiny"}));

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (forward->parsed()) return finish(fpt::cmd_forward(resolve(f), f.weights), f);
    if (gradcheck->parsed()) {
      std::optional<std::pair<std::string, double>> fault;
      if (f.fault) fault = std::make_pair(*f.fault, f.fault_factor);
      return finish(fpt::cmd_gradcheck(resolve(f), fault), f);
    }
    if (count->parsed()) return finish(fpt::cmd_count(resolve(f)), f);
    if (bench->parsed()) return finish(fpt::cmd_bench(resolve(f), f.weights), f);
    if (gen->parsed()) {
      if (f.what == "config") {
        fpt::RunConfig cfg = f.config.empty()
                                 ? (f.preset == "tiny" ? fpt::RunConfig::tiny() : fpt::RunConfig::defaults())
                                 : fpt::load_config(f.config);
        if (f.seed) cfg.seed = *f.seed;
        if (f.mode) cfg.mode = fpt::parse_mode(*f.mode);
        write_text(f.out, fpt::serialize_config(cfg));
        return 0;
      }
      if (f.out.empty() || f.out == "-") throw fpt::Error("gen --what weights needs --out PATH");
      const fpt::RunConfig cfg = resolve(f);
      fpt::WeightContainer weights =
          fpt::collect_weights(fpt::FptParams::kaiming(cfg.fpt, cfg.pyramid, cfg.seed));
      fpt::save_weights(f.out, weights);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "fpt " << name << ": " << e.what() << "\n";
    return 2;
  }
  return 2;
}
