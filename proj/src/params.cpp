#include "fpt/params.hpp"

#include <cmath>
#include <string>

#include "fpt/rng.hpp"

namespace fpt {

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed, std::string_view name) {
  Tensor t(shape);
  Rng rng = Rng::stream(seed, name);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void require_conv(const ConvParams& c, std::string_view what) {
  if (c.bias.shape() != Shape{1, c.out_channels(), 1, 1}) {
    throw ShapeError(std::string(what) + ": bias " + c.bias.shape().str() + " for weight " +
                     c.weight.shape().str());
  }
}

}  // namespace

ConvParams ConvParams::kaiming(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                               std::uint64_t seed, std::string_view name) {
  return {kaiming_uniform({cout, cin, kh, kw}, cin * kh * kw, seed, name),
          Tensor::zeros({1, cout, 1, 1})};
}

ConvParams ConvParams::zeros(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw) {
  return {Tensor::zeros({cout, cin, kh, kw}), Tensor::zeros({1, cout, 1, 1})};
}

ConvParams ConvParams::identity(std::size_t channels, std::size_t k) {
  if (k % 2 == 0) throw ConfigError("identity kernel needs an odd size");
  ConvParams p = zeros(channels, channels, k, k);
  for (std::size_t c = 0; c < channels; ++c) p.weight.at(c, c, k / 2, k / 2) = 1.0;
  return p;
}

ProjectionParams ProjectionParams::kaiming(std::size_t d_in, std::size_t d_out,
                                           std::uint64_t seed, std::string_view prefix) {
  const std::string base(prefix);
  return {ConvParams::kaiming(d_out, d_in, 1, 1, seed, base + ".q.weight"),
          ConvParams::kaiming(d_out, d_in, 1, 1, seed, base + ".k.weight"),
          ConvParams::kaiming(d_out, d_in, 1, 1, seed, base + ".v.weight")};
}

ProjectionParams ProjectionParams::identity(std::size_t channels) {
  return {ConvParams::identity(channels, 1), ConvParams::identity(channels, 1),
          ConvParams::identity(channels, 1)};
}

void ProjectionParams::validate() const {
  require_conv(q, "query projection");
  require_conv(k, "key projection");
  require_conv(v, "value projection");
  for (const ConvParams* c : {&q, &k, &v}) {
    if (c->kernel_h() != 1 || c->kernel_w() != 1) throw ShapeError("projections must be 1x1");
    if (c->in_channels() != d_in()) throw ShapeError("projections disagree on input width");
  }
  if (k.out_channels() != d_out()) throw ShapeError("query and key widths differ");
}

MosParams MosParams::kaiming(std::size_t parts, std::size_t width, std::uint64_t seed,
                             std::string_view name) {
  return {kaiming_uniform({parts, width, 1, 1}, width, seed, name)};
}

MosParams MosParams::zeros(std::size_t parts, std::size_t width) {
  return {Tensor::zeros({parts, width, 1, 1})};
}

namespace {

void validate_attention(const ProjectionParams& proj, const MosParams& mos, const char* what) {
  proj.validate();
  if (mos.parts() == 0) throw ConfigError(std::string(what) + ": part count must be >= 1");
  if (mos.width() != proj.d_out()) {
    throw ShapeError(std::string(what) + ": mixture vectors have width " +
                     std::to_string(mos.width()) + ", keys have " + std::to_string(proj.d_out()));
  }
  if (proj.d_out() % mos.parts() != 0) {
    throw ShapeError(std::string(what) + ": width " + std::to_string(proj.d_out()) +
                     " not divisible by " + std::to_string(mos.parts()) + " parts");
  }
}

}  // namespace

StParams StParams::kaiming(std::size_t d_in, std::size_t d_out, std::size_t parts,
                           std::uint64_t seed, std::string_view prefix) {
  return {ProjectionParams::kaiming(d_in, d_out, seed, prefix),
          MosParams::kaiming(parts, d_out, seed, std::string(prefix) + ".mos")};
}

void StParams::validate() const { validate_attention(proj, mos, "self-transformer"); }

GtParams GtParams::kaiming(std::size_t d_in, std::size_t d_out, std::size_t parts,
                           std::uint64_t seed, std::string_view prefix) {
  return {ProjectionParams::kaiming(d_in, d_out, seed, prefix),
          MosParams::kaiming(parts, d_out, seed, std::string(prefix) + ".mos"), std::nullopt};
}

void GtParams::validate() const {
  validate_attention(proj, mos, "grounding transformer");
  if (square_size && (*square_size == 0 || *square_size % 2 == 0)) {
    throw ConfigError("square_size must be odd and >= 1, got " + std::to_string(*square_size));
  }
}

RtParams RtParams::kaiming(std::size_t channels, std::uint64_t seed, std::string_view prefix) {
  const std::string base(prefix);
  return {ConvParams::kaiming(channels, channels, 3, 3, seed, base + ".refine_q.weight"),
          ConvParams::kaiming(channels, channels, 3, 3, seed, base + ".down_v.weight"),
          ConvParams::kaiming(channels, channels, 3, 3, seed, base + ".fuse.weight")};
}

RtParams RtParams::identity(std::size_t channels) {
  return {ConvParams::identity(channels, 3), ConvParams::identity(channels, 3),
          ConvParams::identity(channels, 3)};
}

void RtParams::validate() const {
  require_conv(refine_q, "rt refine");
  require_conv(down_v, "rt down-sample");
  require_conv(fuse, "rt fuse");
  for (const ConvParams* c : {&refine_q, &down_v, &fuse}) {
    if (c->kernel_h() != 3 || c->kernel_w() != 3) throw ShapeError("rendering convs must be 3x3");
  }
  if (refine_q.out_channels() != down_v.out_channels() ||
      fuse.in_channels() != refine_q.out_channels()) {
    throw ShapeError("rendering transformer: channel widths disagree at the summation");
  }
}

}  // namespace fpt
