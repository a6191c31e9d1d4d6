#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>

#include "fpt/tensor.hpp"

namespace fpt {

/// Convolution kernel [Cout, Cin, kh, kw] with bias [1, Cout, 1, 1].
struct ConvParams {
  Tensor weight;
  Tensor bias;

  /// Kaiming-uniform over fan-in (bound sqrt(6 / fan_in)), zero bias. The draw is keyed by
  /// (seed, name) so it does not depend on construction order.
  static ConvParams kaiming(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                            std::uint64_t seed, std::string_view name);
  static ConvParams zeros(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw);
  /// Center-one kernel of odd size k mapping channel c to channel c; zero bias.
  static ConvParams identity(std::size_t channels, std::size_t k);

  std::size_t out_channels() const { return weight.shape().n; }
  std::size_t in_channels() const { return weight.shape().c; }
  std::size_t kernel_h() const { return weight.shape().h; }
  std::size_t kernel_w() const { return weight.shape().w; }
};

/// Query/key/value maps, each a 1x1 convolution d_in -> d_out.
struct ProjectionParams {
  ConvParams q;
  ConvParams k;
  ConvParams v;

  static ProjectionParams kaiming(std::size_t d_in, std::size_t d_out, std::uint64_t seed,
                                  std::string_view prefix);
  static ProjectionParams identity(std::size_t channels);

  std::size_t d_in() const { return q.in_channels(); }
  std::size_t d_out() const { return q.out_channels(); }
  void validate() const;
};

/// One learnable vector per mixture component, stored as [N, d, 1, 1] so the mixture logits
/// are a bias-free 1x1 convolution of the pooled keys.
struct MosParams {
  Tensor mixture;

  static MosParams kaiming(std::size_t parts, std::size_t width, std::uint64_t seed,
                           std::string_view name);
  static MosParams zeros(std::size_t parts, std::size_t width);

  std::size_t parts() const { return mixture.shape().n; }
  std::size_t width() const { return mixture.shape().c; }
};

struct StParams {
  ProjectionParams proj;
  MosParams mos;

  static StParams kaiming(std::size_t d_in, std::size_t d_out, std::size_t parts,
                          std::uint64_t seed, std::string_view prefix);
  void validate() const;
};

struct GtParams {
  ProjectionParams proj;
  MosParams mos;
  /// Present for the locality-constrained variant: odd window side on the coarse grid.
  std::optional<std::size_t> square_size;

  static GtParams kaiming(std::size_t d_in, std::size_t d_out, std::size_t parts,
                          std::uint64_t seed, std::string_view prefix);
  void validate() const;
};

/// Three 3x3 convolutions: refinement of the channel-weighted query, strided down-sampling
/// of the value map, and the fusion applied after summation.
struct RtParams {
  ConvParams refine_q;
  ConvParams down_v;
  ConvParams fuse;

  static RtParams kaiming(std::size_t channels, std::uint64_t seed, std::string_view prefix);
  static RtParams identity(std::size_t channels);
  void validate() const;
};

// Visitors over every tensor of a parameter record, in a fixed order, with dotted names.
// `Fn` is called as fn(const std::string& name, Tensor& t) (or const Tensor&).

template <class Conv, class Fn>
void visit_tensors(Conv& p, const std::string& prefix, Fn&& fn)
  requires std::is_same_v<std::remove_const_t<Conv>, ConvParams>
{
  fn(prefix + ".weight", p.weight);
  fn(prefix + ".bias", p.bias);
}

template <class Proj, class Fn>
void visit_tensors(Proj& p, const std::string& prefix, Fn&& fn)
  requires std::is_same_v<std::remove_const_t<Proj>, ProjectionParams>
{
  visit_tensors(p.q, prefix + ".q", fn);
  visit_tensors(p.k, prefix + ".k", fn);
  visit_tensors(p.v, prefix + ".v", fn);
}

template <class P, class Fn>
void visit_tensors(P& p, const std::string& prefix, Fn&& fn)
  requires std::is_same_v<std::remove_const_t<P>, StParams> ||
           std::is_same_v<std::remove_const_t<P>, GtParams>
{
  visit_tensors(p.proj, prefix, fn);
  fn(prefix + ".mos", p.mos.mixture);
}

template <class P, class Fn>
void visit_tensors(P& p, const std::string& prefix, Fn&& fn)
  requires std::is_same_v<std::remove_const_t<P>, RtParams>
{
  visit_tensors(p.refine_q, prefix + ".refine_q", fn);
  visit_tensors(p.down_v, prefix + ".down_v", fn);
  visit_tensors(p.fuse, prefix + ".fuse", fn);
}

}  // namespace fpt
