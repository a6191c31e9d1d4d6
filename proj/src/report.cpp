#include "fpt/report.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>

namespace fpt {

using json = nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

json level_json(const LevelSpec& l) {
  return {{"channels", l.channels}, {"height", l.height}, {"width", l.width}};
}

json config_json(const RunConfig& cfg) {
  const FptConfig& f = cfg.fpt;
  json fpt{{"kind", to_string(f.kind)},
           {"d_model", f.d_model},
           {"n_st", f.n_st},
           {"n_gt", f.n_gt},
           {"square_size", f.square_size ? json(*f.square_size) : json(nullptr)},
           {"dropblock", {{"block_size", f.dropblock.block_size}, {"keep_prob", f.dropblock.keep_prob}}},
           {"topology", to_string(f.topology)},
           {"st_similarity", to_string(f.st_similarity)},
           {"gt_similarity", to_string(f.gt_similarity)},
           {"scale_dot", f.scale_dot},
           {"use_st", f.use_st},
           {"use_gt", f.use_gt},
           {"use_rt", f.use_rt}};
  json pyramid{{"batch", cfg.pyramid.batch}};
  if (cfg.pyramid.ufp) {
    pyramid["ufp"] = {{"input", level_json(cfg.pyramid.ufp->input)},
                      {"kernels", cfg.pyramid.ufp->kernels}};
  } else {
    json levels = json::array();
    for (const LevelSpec& l : cfg.pyramid.levels) levels.push_back(level_json(l));
    pyramid["levels"] = levels;
  }
  return {{"seed", cfg.seed},
          {"mode", to_string(cfg.mode)},
          {"threads", cfg.threads},
          {"fpt", fpt},
          {"pyramid", pyramid},
          {"gradcheck", {{"h", cfg.gradcheck_h}, {"tol", cfg.gradcheck_tol}}},
          {"bench", {{"repeats", cfg.bench_repeats}}}};
}

json cost_json(const AddedCost& c) { return {{"params", c.params}, {"flops", c.flops}}; }

}  // namespace

std::string to_jsonl(const RunReport& report) {
  std::string out;
  auto emit = [&](const json& j) { out += j.dump() + "\n"; };

  emit({{"record", "run"}, {"command", report.command}, {"config", config_json(report.config)}});
  for (const LevelRecord& l : report.levels) {
    emit({{"record", "level"},
          {"level", l.level},
          {"shape", {l.shape.n, l.shape.c, l.shape.h, l.shape.w}},
          {"checksum", hex64(l.checksum)}});
  }
  if (report.gradcheck) {
    for (const GradcheckEntry& e : report.gradcheck->entries) {
      emit({{"record", "gradcheck"},
            {"tensor", e.name},
            {"size", e.size},
            {"max_rel_error", e.max_rel_error},
            {"max_abs_error", e.max_abs_error},
            {"passed", e.max_rel_error <= report.gradcheck->tolerance}});
    }
  }
  if (report.complexity) {
    const ComplexityReport& c = *report.complexity;
    emit({{"record", "complexity"},
          {"params", c.params},
          {"flops", c.flops},
          {"total_params", c.total_params},
          {"total_flops", c.total_flops},
          {"flop_convention", c.flop_convention}});
  }
  if (report.ablation) {
    const AblationCosts& a = *report.ablation;
    emit({{"record", "ablation"},
          {"baseline", "no transformers, reduce over the original maps"},
          {"st", cost_json(a.st)},
          {"gt", cost_json(a.gt)},
          {"rt", cost_json(a.rt)},
          {"params_rt_lt_st_lt_gt", a.params_ordered()},
          {"flops_rt_lt_st_lt_gt", a.flops_ordered()}});
  }
  if (report.timing) {
    emit({{"record", "timing"},
          {"repeats", report.timing->repeats},
          {"median_ms", report.timing->median_ms},
          {"min_ms", report.timing->min_ms}});
  }
  json result{{"record", "result"}, {"status", report.passed ? "pass" : "fail"}};
  if (!report.passed) result["failure"] = report.failure;
  if (report.gradcheck) {
    double worst = 0.0;
    for (const GradcheckEntry& e : report.gradcheck->entries) worst = std::max(worst, e.max_rel_error);
    result["max_rel_error"] = worst;
    result["tolerance"] = report.gradcheck->tolerance;
  }
  emit(result);
  return out;
}

}  // namespace fpt
