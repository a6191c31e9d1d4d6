#include "fpt/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fpt/ops.hpp"
#include "fpt/rng.hpp"
#include "fpt/transformers.hpp"

namespace fpt {

FptConfig FptConfig::defaults(PyramidKind kind) {
  FptConfig cfg;
  cfg.kind = kind;
  cfg.dropblock = kind == PyramidKind::instance ? DropBlockConfig{5, 0.9} : DropBlockConfig{3, 0.9};
  return cfg;
}

void FptConfig::validate() const {
  if (d_model == 0) throw ConfigError("d_model must be >= 1");
  if (n_st == 0 || n_gt == 0) throw ConfigError("part counts must be >= 1");
  if (d_model % n_st != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_st " +
                      std::to_string(n_st));
  }
  if (d_model % n_gt != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_gt " +
                      std::to_string(n_gt));
  }
  if (square_size && (*square_size == 0 || *square_size % 2 == 0)) {
    throw ConfigError("square_size must be odd, got " + std::to_string(*square_size));
  }
  if (!(dropblock.keep_prob > 0.0 && dropblock.keep_prob <= 1.0)) {
    throw ConfigError("keep_prob must lie in (0, 1]");
  }
  if (dropblock.block_size == 0 || dropblock.block_size % 2 == 0) {
    throw ConfigError("block_size must be odd, got " + std::to_string(dropblock.block_size));
  }
  if (locality() && gt_similarity != Similarity::euclidean) {
    throw ConfigError("locality-constrained grounding supports euclidean similarity only");
  }
}

std::vector<std::size_t> stride_chain(std::span<const LevelSpec> levels, bool strictly_increasing) {
  std::vector<std::size_t> strides;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const LevelSpec& cur = levels[l];
    if (cur.channels == 0 || cur.height == 0 || cur.width == 0) {
      throw ConfigError("level " + std::to_string(l) + " has a zero dimension");
    }
    if (l == 0) {
      strides.push_back(1);
      continue;
    }
    const LevelSpec& prev = levels[l - 1];
    const bool divides = prev.height % cur.height == 0 && prev.width % cur.width == 0;
    const std::size_t factor = divides ? prev.height / cur.height : 0;
    if (!divides || prev.width / cur.width != factor || factor == 0 ||
        (strictly_increasing && factor < 2)) {
      throw ConfigError("level " + std::to_string(l) + " (" + std::to_string(cur.height) + "x" +
                        std::to_string(cur.width) + ") does not continue the stride chain from " +
                        std::to_string(prev.height) + "x" + std::to_string(prev.width));
    }
    strides.push_back(strides.back() * factor);
  }
  return strides;
}

std::vector<LevelSpec> PyramidSpec::resolved(std::size_t d_model) const {
  if (!ufp) return levels;
  return std::vector<LevelSpec>(ufp->kernels.size(),
                                LevelSpec{d_model, ufp->input.height, ufp->input.width});
}

void PyramidSpec::validate() const {
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (ufp) {
    if (!levels.empty()) throw ConfigError("give either pyramid levels or a ufp input, not both");
    if (ufp->kernels.empty()) throw ConfigError("ufp needs at least one kernel size");
    for (std::size_t k : ufp->kernels) {
      if (k % 2 == 0) throw ConfigError("ufp kernel sizes must be odd, got " + std::to_string(k));
    }
    const LevelSpec& in = ufp->input;
    if (in.channels == 0 || in.height == 0 || in.width == 0) {
      throw ConfigError("ufp input has a zero dimension");
    }
    return;
  }
  stride_chain(levels, true);
}

void FeaturePyramid::validate() const {
  std::vector<LevelSpec> specs;
  for (const auto& level : levels) {
    const Shape& s = level.features.shape();
    if (s.n != levels.front().features.shape().n) throw ConfigError("levels disagree on batch");
    specs.push_back({s.c, s.h, s.w});
  }
  const auto strides = stride_chain(specs, false);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (levels[l].stride != strides[l] * levels.front().stride) {
      throw ConfigError("level " + std::to_string(l) + " stride metadata disagrees with its size");
    }
  }
}

namespace {

Tensor unit_normal(Shape shape, std::uint64_t seed, std::string_view tag) {
  Tensor t(shape);
  Rng rng = Rng::stream(seed, tag);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

FeaturePyramid synth_pyramid(std::uint64_t seed, std::span<const LevelSpec> levels,
                             std::size_t batch) {
  if (batch == 0) throw ConfigError("batch must be >= 1");
  const auto strides = stride_chain(levels, true);
  FeaturePyramid pyramid;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const LevelSpec& s = levels[l];
    pyramid.levels.push_back({unit_normal({batch, s.channels, s.height, s.width}, seed,
                                          "pyramid.level." + std::to_string(l)),
                              strides[l]});
  }
  return pyramid;
}

UfpParams UfpParams::kaiming(std::size_t in_channels, std::span<const std::size_t> kernels,
                             std::size_t d_model, std::uint64_t seed) {
  UfpParams p;
  for (std::size_t k : kernels) {
    if (k % 2 == 0) throw ConfigError("ufp kernel sizes must be odd, got " + std::to_string(k));
    GcnBlock block;
    block.kernel = k;
    const std::string base = "ufp.k" + std::to_string(k);
    if (k == 1) {
      block.left_col = ConvParams::kaiming(d_model, in_channels, 1, 1, seed, base + ".left_col.weight");
    } else {
      block.left_col = ConvParams::kaiming(d_model, in_channels, k, 1, seed, base + ".left_col.weight");
      block.left_row = ConvParams::kaiming(d_model, d_model, 1, k, seed, base + ".left_row.weight");
      block.right_row = ConvParams::kaiming(d_model, in_channels, 1, k, seed, base + ".right_row.weight");
      block.right_col = ConvParams::kaiming(d_model, d_model, k, 1, seed, base + ".right_col.weight");
    }
    p.blocks.push_back(std::move(block));
  }
  return p;
}

std::vector<Var> build_ufp(Var x, const UfpParams& p) {
  Tape& tape = x.tape();
  auto conv = [&](Var in, const ConvParams& c) {
    const std::size_t pad_h = c.kernel_h() / 2;
    const std::size_t pad_w = c.kernel_w() / 2;
    return ops::conv2d(in, tape.parameter(c.weight), tape.parameter(c.bias), {1, pad_h, pad_w});
  };
  std::vector<Var> levels;
  for (const GcnBlock& block : p.blocks) {
    if (block.kernel == 1) {
      levels.push_back(conv(x, block.left_col));
      continue;
    }
    const Var left = conv(conv(x, block.left_col), block.left_row);
    const Var right = conv(conv(x, block.right_row), block.right_col);
    levels.push_back(ops::add(left, right));
  }
  return levels;
}

Tensor dropblock_mask(const Shape& shape, const DropBlockConfig& cfg, std::uint64_t seed) {
  const std::size_t bs = cfg.block_size;
  if (bs == 0 || bs % 2 == 0) throw ConfigError("block_size must be odd");
  if (bs > std::min(shape.h, shape.w)) {
    throw ConfigError("block_size " + std::to_string(bs) + " exceeds feature map " +
                      std::to_string(shape.h) + "x" + std::to_string(shape.w));
  }
  if (!(cfg.keep_prob > 0.0 && cfg.keep_prob <= 1.0)) {
    throw ConfigError("keep_prob must lie in (0, 1]");
  }
  Tensor mask = Tensor::full(shape, 1.0);
  if (cfg.keep_prob == 1.0) return mask;

  const std::size_t valid_h = shape.h - bs + 1;
  const std::size_t valid_w = shape.w - bs + 1;
  const double gamma = (1.0 - cfg.keep_prob) / static_cast<double>(bs * bs) *
                       static_cast<double>(shape.h * shape.w) /
                       static_cast<double>(valid_h * valid_w);

  Rng rng = Rng::stream(seed, "dropblock");
  for (std::size_t p = 0; p < shape.n * shape.c; ++p) {
    double* plane = mask.data().data() + p * shape.plane();
    for (std::size_t y0 = 0; y0 < valid_h; ++y0)
      for (std::size_t x0 = 0; x0 < valid_w; ++x0) {
        if (rng.uniform() >= gamma) continue;
        for (std::size_t dy = 0; dy < bs; ++dy)
          for (std::size_t dx = 0; dx < bs; ++dx) plane[(y0 + dy) * shape.w + x0 + dx] = 0.0;
      }
  }
  std::size_t kept = 0;
  for (double v : mask.data()) kept += v != 0.0 ? 1 : 0;
  const double rescale =
      kept == 0 ? 0.0 : static_cast<double>(mask.numel()) / static_cast<double>(kept);
  for (double& v : mask.data()) v *= rescale;
  return mask;
}

Var dropblock(Var x, const DropBlockConfig& cfg, Mode mode, std::uint64_t seed) {
  if (mode == Mode::eval || cfg.keep_prob == 1.0) return x;
  return ops::mask_multiply(x, dropblock_mask(x.shape(), cfg, seed));
}

std::vector<Edge> grounding_edges(std::size_t levels, Topology topology) {
  std::vector<Edge> edges;
  for (std::size_t target = 0; target < levels; ++target)
    for (std::size_t source = target + 1; source < levels; ++source) {
      if (topology == Topology::adjacent && source != target + 1) continue;
      edges.emplace_back(target, source);
    }
  return edges;
}

std::vector<Edge> rendering_edges(std::size_t levels, Topology topology) {
  std::vector<Edge> edges;
  for (std::size_t target = 0; target < levels; ++target)
    for (std::size_t source = 0; source < target; ++source) {
      if (topology == Topology::adjacent && source + 1 != target) continue;
      edges.emplace_back(target, source);
    }
  return edges;
}

namespace {

std::string edge_name(const char* kind, const Edge& e) {
  return std::string(kind) + " " + std::to_string(e.first) + "<-" + std::to_string(e.second);
}

}  // namespace

FptParams FptParams::kaiming(const FptConfig& cfg, const PyramidSpec& spec, std::uint64_t seed) {
  cfg.validate();
  spec.validate();
  const std::size_t d = cfg.d_model;
  FptParams p;
  if (spec.ufp) p.ufp = UfpParams::kaiming(spec.ufp->input.channels, spec.ufp->kernels, d, seed);

  const auto levels = spec.resolved(d);
  const std::size_t count = levels.size();
  for (std::size_t l = 0; l < count; ++l) {
    if (levels[l].channels == d) {
      p.lateral.emplace_back(std::nullopt);
    } else {
      p.lateral.emplace_back(ConvParams::kaiming(d, levels[l].channels, 1, 1, seed,
                                                 "lateral." + std::to_string(l) + ".weight"));
    }
  }
  if (cfg.use_st) {
    for (std::size_t l = 0; l < count; ++l) {
      p.st.push_back(StParams::kaiming(d, d, cfg.n_st, seed, "st." + std::to_string(l)));
    }
  }
  std::vector<std::size_t> inputs(count, 1 + (cfg.use_st ? 1 : 0));
  if (cfg.use_gt) {
    for (const Edge& e : grounding_edges(count, cfg.topology)) {
      GtParams gt = GtParams::kaiming(
          d, d, cfg.n_gt, seed, "gt." + std::to_string(e.first) + "<-" + std::to_string(e.second));
      if (cfg.locality()) gt.square_size = cfg.square_size;
      p.gt.emplace(e, std::move(gt));
      ++inputs[e.first];
    }
  }
  if (cfg.use_rt) {
    for (const Edge& e : rendering_edges(count, cfg.topology)) {
      p.rt.emplace(e, RtParams::kaiming(d, seed, "rt." + std::to_string(e.first) + "<-" +
                                                     std::to_string(e.second)));
      ++inputs[e.first];
    }
  }
  for (std::size_t l = 0; l < count; ++l) {
    p.reduce.push_back(ConvParams::kaiming(d, inputs[l] * d, 3, 3, seed,
                                           "reduce." + std::to_string(l) + ".weight"));
  }
  return p;
}

std::vector<Var> fpt_forward(std::span<const Var> levels, const FptParams& params,
                             const FptConfig& cfg, Mode mode, std::uint64_t seed) {
  cfg.validate();
  const std::size_t count = levels.size();
  if (params.lateral.size() != count || params.reduce.size() != count ||
      (cfg.use_st && params.st.size() != count)) {
    throw ConfigError("parameters were built for a different number of levels than " +
                      std::to_string(count));
  }
  if (count == 0) return {};
  Tape& tape = levels.front().tape();

  std::vector<Var> base;
  for (std::size_t l = 0; l < count; ++l) {
    Var x = levels[l];
    if (params.lateral[l]) x = project(x, *params.lateral[l]);
    if (x.shape().c != cfg.d_model || x.shape().n != levels.front().shape().n) {
      throw ShapeError("level " + std::to_string(l) + ": " + x.shape().str() +
                       " cannot enter a pyramid of width " + std::to_string(cfg.d_model));
    }
    base.push_back(x);
  }

  const AttentionOptions st_options{cfg.st_similarity, cfg.scale_dot};
  const AttentionOptions gt_options{cfg.gt_similarity, cfg.scale_dot};

  std::vector<Var> outputs;
  for (std::size_t l = 0; l < count; ++l) {
    std::vector<Var> parts{base[l]};
    std::string where = "level " + std::to_string(l);
    try {
      if (cfg.use_st) {
        where = "level " + std::to_string(l) + " st";
        parts.push_back(self_transformer(base[l], params.st[l], st_options));
      }
      if (cfg.use_gt) {
        for (const Edge& e : grounding_edges(count, cfg.topology)) {
          if (e.first != l) continue;
          where = edge_name("gt", e);
          const GtParams& gt = params.gt.at(e);
          parts.push_back(gt.square_size
                              ? locality_grounding_transformer(base[l], base[e.second], gt)
                              : grounding_transformer(base[l], base[e.second], gt, gt_options));
        }
      }
      if (cfg.use_rt) {
        for (const Edge& e : rendering_edges(count, cfg.topology)) {
          if (e.first != l) continue;
          where = edge_name("rt", e);
          parts.push_back(rendering_transformer(base[l], base[e.second], params.rt.at(e)));
        }
      }
      where = "level " + std::to_string(l) + " reduce";
      const ConvParams& reduce = params.reduce[l];
      Var y = ops::conv2d(ops::concat_channels(parts), tape.parameter(reduce.weight),
                          tape.parameter(reduce.bias), {1, 1, 1});
      where = "level " + std::to_string(l) + " dropblock";
      y = dropblock(y, cfg.dropblock, mode, mix_seed(seed, "dropblock.level." + std::to_string(l)));
      outputs.push_back(y);
    } catch (const ShapeError& e) {
      throw ShapeError(where + ": " + e.what());
    } catch (const std::out_of_range&) {
      throw ConfigError(where + ": no parameters for this edge");
    }
  }
  return outputs;
}

std::vector<Tensor> synth_input(const PyramidSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.ufp) {
    const LevelSpec& in = spec.ufp->input;
    return {unit_normal({spec.batch, in.channels, in.height, in.width}, seed, "ufp.input")};
  }
  std::vector<Tensor> out;
  for (auto& level : synth_pyramid(seed, spec.levels, spec.batch).levels) {
    out.push_back(std::move(level.features));
  }
  return out;
}

std::vector<Var> forward_network(Tape& tape, const FptConfig& cfg, const PyramidSpec& spec,
                                 const FptParams& params, const std::vector<Tensor>& input,
                                 Mode mode, std::uint64_t seed) {
  std::vector<Var> levels;
  if (spec.ufp) {
    if (input.size() != 1 || !params.ufp) throw ConfigError("ufp network needs one input map");
    levels = build_ufp(tape.parameter(input.front()), *params.ufp);
  } else {
    for (const Tensor& t : input) levels.push_back(tape.parameter(t));
  }
  return fpt_forward(levels, params, cfg, mode, seed);
}

}  // namespace fpt
