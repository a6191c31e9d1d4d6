#include "fpt/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "fpt/kernels.hpp"
#include "fpt/ops.hpp"
#include "fpt/rng.hpp"

namespace fpt {

void apply_threads(const RunConfig& cfg) {
  if (cfg.threads > 0) kernels::set_num_threads(static_cast<int>(cfg.threads));
}

FptParams make_params(const RunConfig& cfg, const std::optional<std::string>& weights) {
  FptParams params = FptParams::kaiming(cfg.fpt, cfg.pyramid, cfg.seed);
  if (weights) apply_weights(load_weights(*weights), params);
  return params;
}

namespace {

RunReport start(std::string command, const RunConfig& cfg) {
  RunReport report;
  report.command = std::move(command);
  report.config = cfg;
  return report;
}

std::vector<LevelRecord> run_forward(const RunConfig& cfg, const FptParams& params,
                                     const std::vector<Tensor>& input) {
  Tape tape(false);
  const auto outputs = forward_network(tape, cfg.fpt, cfg.pyramid, params, input, cfg.mode, cfg.seed);
  std::vector<LevelRecord> levels;
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    levels.push_back({l, outputs[l].shape(), fnv1a_checksum(outputs[l].value())});
  }
  return levels;
}

}  // namespace

RunReport cmd_forward(const RunConfig& cfg, const std::optional<std::string>& weights) {
  cfg.validate();
  apply_threads(cfg);
  RunReport report = start("forward", cfg);
  const FptParams params = make_params(cfg, weights);
  report.levels = run_forward(cfg, params, synth_input(cfg.pyramid, cfg.seed));
  return report;
}

RunReport cmd_gradcheck(const RunConfig& cfg,
                        const std::optional<std::pair<std::string, double>>& fault) {
  cfg.validate();
  if (cfg.mode == Mode::train) {
    throw ContractError(
        "gradcheck: train mode samples DropBlock masks, which finite differences cannot "
        "follow; use --mode eval");
  }
  apply_threads(cfg);
  RunReport report = start("gradcheck", cfg);

  FptParams params = FptParams::kaiming(cfg.fpt, cfg.pyramid, cfg.seed);
  std::vector<Tensor> input = synth_input(cfg.pyramid, cfg.seed);

  // Fixed random projection of every output level onto a scalar.
  std::vector<Tensor> projections;
  {
    Tape probe(false);
    const auto outs = forward_network(probe, cfg.fpt, cfg.pyramid, params, input, Mode::eval, cfg.seed);
    for (std::size_t l = 0; l < outs.size(); ++l) {
      Tensor r(outs[l].shape());
      Rng rng = Rng::stream(cfg.seed, "gradcheck.projection." + std::to_string(l));
      for (double& v : r.data()) v = rng.uniform(-1.0, 1.0);
      projections.push_back(std::move(r));
    }
  }

  std::vector<NamedTensor> checked;
  visit_tensors(params, [&](const std::string& name, Tensor& t) { checked.push_back({name, &t}); });
  for (std::size_t i = 0; i < input.size(); ++i) {
    checked.push_back({cfg.pyramid.ufp ? "input.ufp" : "input.level." + std::to_string(i), &input[i]});
  }

  const LossBuilder build = [&](Tape& tape) {
    const auto outs = forward_network(tape, cfg.fpt, cfg.pyramid, params, input, Mode::eval, cfg.seed);
    Var loss = ops::weighted_sum(outs.front(), projections.front());
    for (std::size_t l = 1; l < outs.size(); ++l) {
      loss = ops::add(loss, ops::weighted_sum(outs[l], projections[l]));
    }
    return loss;
  };
  GradcheckOptions options;
  options.h = cfg.gradcheck_h;
  options.fault = fault;
  const GradcheckResult result = gradcheck(build, checked, options);

  report.gradcheck = GradcheckTable{cfg.gradcheck_h, cfg.gradcheck_tol, result.entries};
  report.passed = result.passed(cfg.gradcheck_tol);
  if (!report.passed) {
    std::string names;
    for (const std::string& n : result.failing(cfg.gradcheck_tol)) names += (names.empty() ? "" : ", ") + n;
    char tol[32];
    std::snprintf(tol, sizeof(tol), "%g", cfg.gradcheck_tol);
    report.failure = std::string("gradient check: relative error above ") + tol + " in " + names;
  }
  return report;
}

RunReport cmd_count(const RunConfig& cfg) {
  cfg.validate();
  RunReport report = start("count", cfg);
  report.complexity = count_complexity(cfg.fpt, cfg.pyramid);
  report.complexity->validate();
  report.ablation = AblationCosts{added_cost(cfg.fpt, cfg.pyramid, Block::st),
                                  added_cost(cfg.fpt, cfg.pyramid, Block::gt),
                                  added_cost(cfg.fpt, cfg.pyramid, Block::rt)};
  return report;
}

RunReport cmd_bench(const RunConfig& cfg, const std::optional<std::string>& weights) {
  cfg.validate();
  apply_threads(cfg);
  RunReport report = start("bench", cfg);
  const FptParams params = make_params(cfg, weights);
  const std::vector<Tensor> input = synth_input(cfg.pyramid, cfg.seed);

  std::vector<double> times;
  for (std::size_t i = 0; i < cfg.bench_repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto levels = run_forward(cfg, params, input);
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(stop - t0).count());
    if (i == 0) {
      report.levels = std::move(levels);
      continue;
    }
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (levels[l].checksum != report.levels[l].checksum) {
        report.passed = false;
        report.failure = "determinism: repeat " + std::to_string(i) + " changed the checksum of level " +
                         std::to_string(l);
      }
    }
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  const double median = n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
  report.timing = Timing{n, median, times.front()};
  return report;
}

}  // namespace fpt
