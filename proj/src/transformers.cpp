#include "fpt/transformers.hpp"

#include <string>

#include "fpt/ops.hpp"

namespace fpt {

namespace {

Var attend(Var query_map, Var key_map, const ProjectionParams& proj, const MosParams& mos,
           const AttentionOptions& options, AttentionProbe* probe) {
  if (query_map.shape().c != proj.d_in() || key_map.shape().c != proj.d_in()) {
    throw ShapeError("attention: inputs " + query_map.shape().str() + ", " +
                     key_map.shape().str() + " for projections expecting " +
                     std::to_string(proj.d_in()) + " channels");
  }
  const Var q = project(query_map, proj.q);
  const Var k = project(key_map, proj.k);
  const Var v = project(key_map, proj.v);

  const Var pi = mixture_weights(k, mos);
  const Var scores = part_scores(q, k, mos.parts(), options);
  const Var weights = mos_normalize(scores, pi);
  if (probe != nullptr) probe->weights = weights.value();

  const Var out = aggregate(weights, ops::to_positions(v, 1));
  return ops::from_positions(out, query_map.shape().h, query_map.shape().w);
}

}  // namespace

Var self_transformer(Var x, const StParams& p, const AttentionOptions& options,
                     AttentionProbe* probe) {
  p.validate();
  return attend(x, x, p.proj, p.mos, options, probe);
}

Var grounding_transformer(Var fine, Var coarse, const GtParams& p, const AttentionOptions& options,
                          AttentionProbe* probe) {
  p.validate();
  if (fine.shape().n != coarse.shape().n) throw ShapeError("grounding: batch sizes differ");
  return attend(fine, coarse, p.proj, p.mos, options, probe);
}

Var locality_grounding_transformer(Var fine, Var coarse, const GtParams& p,
                                   AttentionProbe* probe) {
  p.validate();
  if (!p.square_size) throw ConfigError("locality grounding needs a square_size");
  const Shape fs = fine.shape();
  const Shape cs = coarse.shape();
  if (fs.n != cs.n) throw ShapeError("locality grounding: batch sizes differ");
  if (fs.c != p.proj.d_in() || cs.c != p.proj.d_in()) {
    throw ShapeError("locality grounding: inputs " + fs.str() + ", " + cs.str() +
                     " for projections expecting " + std::to_string(p.proj.d_in()) + " channels");
  }

  kernels::WindowDims dims;
  dims.batch = fs.n;
  dims.parts = p.mos.parts();
  dims.part_dim = p.proj.d_out() / p.mos.parts();
  dims.fine_h = fs.h;
  dims.fine_w = fs.w;
  dims.coarse_h = cs.h;
  dims.coarse_w = cs.w;
  dims.size = *p.square_size;

  const Var q = project(fine, p.proj.q);
  const Var k = project(coarse, p.proj.k);
  const Var v = project(coarse, p.proj.v);
  const Var pi = mixture_weights(k, p.mos);

  const Var k_padded = ops::pad_spatial(k, dims.pad());
  const Var v_padded = ops::pad_spatial(v, dims.pad());
  const Var scores = ops::window_neg_sq_dist(ops::to_positions(q, dims.parts), k_padded, dims);
  const Var weights = mos_normalize(scores, pi);
  require_normalized(weights.value(), 1e-9, "locality grounding");
  if (probe != nullptr) probe->weights = weights.value();

  const Var out = ops::window_aggregate(weights, v_padded, dims);
  return ops::from_positions(out, fs.h, fs.w);
}

std::size_t rendering_stride(const Shape& high, const Shape& low) {
  if (low.h < high.h || low.w < high.w || low.h % high.h != 0 || low.w % high.w != 0) {
    throw ShapeError("rendering: low-level map " + low.str() +
                     " is not an integer multiple of high-level map " + high.str());
  }
  const std::size_t ratio = low.h / high.h;
  if (low.w / high.w != ratio) {
    throw ShapeError("rendering: height and width ratios differ between " + low.str() + " and " +
                     high.str());
  }
  return ratio;
}

Var rendering_transformer(Var high, Var low, const RtParams& p) {
  p.validate();
  const Shape hs = high.shape();
  const Shape ls = low.shape();
  if (hs.n != ls.n || hs.c != ls.c || hs.c != p.refine_q.in_channels() ||
      ls.c != p.down_v.in_channels()) {
    throw ShapeError("rendering: Q " + hs.str() + " and K/V " + ls.str() +
                     " do not match the convolution widths");
  }
  const std::size_t stride = rendering_stride(hs, ls);
  Tape& tape = high.tape();

  const Var weight = ops::global_avg_pool(low);
  const Var q_att = ops::channel_scale(high, weight);
  const Var refined = ops::conv2d(q_att, tape.parameter(p.refine_q.weight),
                                  tape.parameter(p.refine_q.bias), {1, 1, 1});
  const Var v_down = ops::conv2d(low, tape.parameter(p.down_v.weight),
                                 tape.parameter(p.down_v.bias),
                                 {stride, 1, 1, ops::Rounding::floor});
  if (v_down.shape() != refined.shape()) {
    throw ShapeError("rendering: down-sampled value " + v_down.shape().str() +
                     " does not match query " + refined.shape().str());
  }
  return ops::conv2d(ops::add(refined, v_down), tape.parameter(p.fuse.weight),
                     tape.parameter(p.fuse.bias), {1, 1, 1});
}

}  // namespace fpt
