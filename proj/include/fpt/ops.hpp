#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fpt/autodiff.hpp"
#include "fpt/kernels.hpp"

// Differentiable primitives. Every function records one node on the tape its inputs live on.
//
// Matrices are carried as tensors of shape [n, c, rows, cols] and treated as n*c independent
// 2-D problems ("2-D views"), so attention over a batch of images and over MoS parts uses
// the same primitives.
namespace fpt::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Sum of all entries, as a [1,1,1,1] tensor.
Var sum(Var a);
/// sum(a * weights) for a fixed weight tensor of the same shape.
Var weighted_sum(Var a, const Tensor& weights);

Var matmul(Var a, Var b);
/// Swaps the two trailing dimensions.
Var transpose(Var a);
/// Same data, new shape (element counts must agree).
Var reshape(Var a, Shape shape);

/// Softmax over the trailing (width) axis.
Var softmax(Var a);
/// Plain vector softmax with max subtraction.
std::vector<double> softmax(std::span<const double> x);

enum class Rounding {
  exact,  // (H + 2 pad - k) must be divisible by the stride
  floor,
};

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  Rounding rounding = Rounding::exact;
};

/// Output extent of a convolution along one axis; throws ShapeError on bad geometry.
std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t pad,
                          std::size_t stride, Rounding rounding);

kernels::ConvDims conv_dims(const Shape& x, const Shape& w, const Conv2dOptions& opt);

/// Cross-correlation; w is [Cout, Cin, kh, kw], b is [1, Cout, 1, 1] when present.
Var conv2d(Var x, Var w, std::optional<Var> b, const Conv2dOptions& opt = {});

/// [N,C,H,W] -> [N,C,1,1] plane means.
Var global_avg_pool(Var x);
/// x[n,c,:,:] * s[n,c,0,0]
Var channel_scale(Var x, Var s);
Var concat_channels(std::span<const Var> parts);
/// Zero padding of `pad` on each spatial side.
Var pad_spatial(Var x, std::size_t pad);

/// [N,C,H,W] -> [N,parts,H*W,C/parts]: one row per position, channels split into `parts`
/// contiguous slices.
Var to_positions(Var x, std::size_t parts = 1);
/// [N,1,H*W,C] -> [N,C,H,W]
Var from_positions(Var x, std::size_t height, std::size_t width);

/// -||q_i - k_j||^2 for q [N,P,Pq,d], k [N,P,Pk,d] -> [N,P,Pq,Pk]
Var neg_sq_dist(Var q, Var k);

/// sum_n pi[b,n] * p[b,n,:,:] for p [N,P,Pq,Pk], pi [N,1,1,P] -> [N,1,Pq,Pk]
Var mix_parts(Var p, Var pi);

/// Windowed scores against a zero-padded key map (see kernels::WindowDims).
Var window_neg_sq_dist(Var q, Var kpad, const kernels::WindowDims& dims);
/// Windowed aggregation of a zero-padded value map -> [N,1,Pq,C].
Var window_aggregate(Var w, Var vpad, const kernels::WindowDims& dims);

/// x * mask for a constant mask (DropBlock).
Var mask_multiply(Var x, const Tensor& mask);

}  // namespace fpt::ops
