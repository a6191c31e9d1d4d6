#include "fpt/accounting.hpp"

#include "fpt/transformers.hpp"

namespace fpt {

namespace flops {

std::uint64_t conv_params(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                          bool bias) {
  return std::uint64_t{cout} * cin * kh * kw + (bias ? cout : 0);
}

std::uint64_t conv(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                   std::size_t out_h, std::size_t out_w, bool bias) {
  const std::uint64_t outputs = std::uint64_t{cout} * out_h * out_w;
  return 2 * outputs * cin * kh * kw + (bias ? outputs : 0);
}

std::uint64_t softmax(std::size_t entries) { return 4 * std::uint64_t{entries}; }

std::uint64_t mixture_weights(std::size_t d, std::size_t key_positions, std::size_t parts) {
  const std::uint64_t gap = std::uint64_t{d} * (key_positions + 1);
  return gap + conv(parts, d, 1, 1, 1, 1, false) + softmax(parts);
}

namespace {

// Everything after the similarity scores: softmax per part, mixing over parts, aggregation.
std::uint64_t normalize_and_aggregate(std::size_t d, std::size_t parts, std::uint64_t pairs) {
  return softmax(parts * pairs) + 2 * parts * pairs + 2 * d * pairs;
}

}  // namespace

std::uint64_t global_attention(std::size_t d, std::size_t parts, std::size_t queries,
                               std::size_t keys, Similarity similarity, bool scale_dot) {
  const std::uint64_t pairs = std::uint64_t{queries} * keys;
  std::uint64_t total = conv(d, d, 1, 1, queries, 1) + 2 * conv(d, d, 1, 1, keys, 1);
  total += mixture_weights(d, keys, parts);
  if (similarity == Similarity::euclidean) {
    total += 3 * d * pairs;
  } else {
    total += 2 * d * pairs;
    if (scale_dot) total += parts * pairs;
  }
  return total + normalize_and_aggregate(d, parts, pairs);
}

std::uint64_t window_attention(std::size_t d, std::size_t parts, std::size_t queries,
                               std::size_t keys, std::size_t square_size) {
  const std::uint64_t pairs = std::uint64_t{queries} * square_size * square_size;
  std::uint64_t total = conv(d, d, 1, 1, queries, 1) + 2 * conv(d, d, 1, 1, keys, 1);
  total += mixture_weights(d, keys, parts);
  total += 3 * d * pairs;
  return total + normalize_and_aggregate(d, parts, pairs);
}

std::uint64_t rendering(std::size_t channels, std::size_t high_h, std::size_t high_w,
                        std::size_t low_h, std::size_t low_w) {
  const std::uint64_t high = std::uint64_t{channels} * high_h * high_w;
  const std::uint64_t gap = std::uint64_t{channels} * (low_h * low_w + 1);
  const std::uint64_t convs = 3 * conv(channels, channels, 3, 3, high_h, high_w);
  return gap + high + convs + high;  // channel scale, three convs, sum
}

}  // namespace flops

void ComplexityReport::validate() const {
  std::uint64_t p = 0;
  std::uint64_t f = 0;
  for (const auto& [name, v] : params) p += v;
  for (const auto& [name, v] : flops) f += v;
  if (p != total_params) throw ContractError("complexity report: params do not sum to total");
  if (f != total_flops) throw ContractError("complexity report: flops do not sum to total");
}

namespace {

ComplexityReport tally(const FptConfig& cfg, const PyramidSpec& spec, bool want_params,
                       bool want_flops) {
  cfg.validate();
  spec.validate();
  ComplexityReport r;
  for (const char* c : kComponents) {
    if (want_params) r.params[c] = 0;
    if (want_flops) r.flops[c] = 0;
  }
  auto add = [&](const char* component, std::uint64_t params, std::uint64_t flops) {
    if (want_params) r.params[component] += params;
    if (want_flops) r.flops[component] += flops * spec.batch;
  };

  const std::size_t d = cfg.d_model;
  if (spec.ufp) {
    const LevelSpec& in = spec.ufp->input;
    for (std::size_t k : spec.ufp->kernels) {
      if (k == 1) {
        add("ufp", flops::conv_params(d, in.channels, 1, 1),
            flops::conv(d, in.channels, 1, 1, in.height, in.width));
        continue;
      }
      const std::uint64_t p = 2 * flops::conv_params(d, in.channels, k, 1) +
                              2 * flops::conv_params(d, d, 1, k);
      const std::uint64_t f = 2 * flops::conv(d, in.channels, k, 1, in.height, in.width) +
                              2 * flops::conv(d, d, 1, k, in.height, in.width) +
                              std::uint64_t{d} * in.height * in.width;
      add("ufp", p, f);
    }
  }

  const auto levels = spec.resolved(d);
  const std::size_t count = levels.size();
  std::vector<std::size_t> inputs(count, 1);
  for (std::size_t l = 0; l < count; ++l) {
    const LevelSpec& s = levels[l];
    if (s.channels != d) {
      add("lateral", flops::conv_params(d, s.channels, 1, 1),
          flops::conv(d, s.channels, 1, 1, s.height, s.width));
    }
    if (cfg.use_st) {
      const std::size_t pos = s.height * s.width;
      add("st", 3 * flops::conv_params(d, d, 1, 1) + std::uint64_t{cfg.n_st} * d,
          flops::global_attention(d, cfg.n_st, pos, pos, cfg.st_similarity, cfg.scale_dot));
      ++inputs[l];
    }
  }
  if (cfg.use_gt) {
    for (const auto& [t, src] : grounding_edges(count, cfg.topology)) {
      const std::size_t queries = levels[t].height * levels[t].width;
      const std::size_t keys = levels[src].height * levels[src].width;
      const std::uint64_t p = 3 * flops::conv_params(d, d, 1, 1) + std::uint64_t{cfg.n_gt} * d;
      if (cfg.locality()) {
        add("lgt", p, flops::window_attention(d, cfg.n_gt, queries, keys, *cfg.square_size));
      } else {
        add("gt", p,
            flops::global_attention(d, cfg.n_gt, queries, keys, cfg.gt_similarity, cfg.scale_dot));
      }
      ++inputs[t];
    }
  }
  if (cfg.use_rt) {
    for (const auto& [t, src] : rendering_edges(count, cfg.topology)) {
      const LevelSpec& high = levels[t];
      const LevelSpec& low = levels[src];
      rendering_stride({1, d, high.height, high.width}, {1, d, low.height, low.width});
      add("rt", 3 * flops::conv_params(d, d, 3, 3),
          flops::rendering(d, high.height, high.width, low.height, low.width));
      ++inputs[t];
    }
  }
  for (std::size_t l = 0; l < count; ++l) {
    add("reduce", flops::conv_params(d, inputs[l] * d, 3, 3),
        flops::conv(d, inputs[l] * d, 3, 3, levels[l].height, levels[l].width));
  }

  for (const auto& [name, v] : r.params) r.total_params += v;
  for (const auto& [name, v] : r.flops) r.total_flops += v;
  return r;
}

}  // namespace

ComplexityReport count_params(const FptConfig& cfg, const PyramidSpec& spec) {
  return tally(cfg, spec, true, false);
}

ComplexityReport count_flops(const FptConfig& cfg, const PyramidSpec& spec) {
  return tally(cfg, spec, false, true);
}

ComplexityReport count_complexity(const FptConfig& cfg, const PyramidSpec& spec) {
  return tally(cfg, spec, true, true);
}

AddedCost added_cost(const FptConfig& cfg, const PyramidSpec& spec, Block block) {
  FptConfig base = cfg;
  base.use_st = base.use_gt = base.use_rt = false;
  FptConfig only = base;
  only.use_st = block == Block::st;
  only.use_gt = block == Block::gt;
  only.use_rt = block == Block::rt;
  const ComplexityReport a = count_complexity(only, spec);
  const ComplexityReport b = count_complexity(base, spec);
  return {a.total_params - b.total_params, a.total_flops - b.total_flops};
}

PyramidSpec default_counting_spec() {
  PyramidSpec spec;
  spec.levels = {{256, 32, 32}, {256, 16, 16}, {256, 8, 8}, {256, 4, 4}};
  return spec;
}

}  // namespace fpt
