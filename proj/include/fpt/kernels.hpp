#pragma once

// Raw numeric kernels on flat NCHW buffers.
//
// Every heavy kernel exists twice: an OpenMP version used by the recorded ops, and a
// `_reference` version written as the most direct serial loop nest. Parallel versions
// partition the *outputs* between threads and keep a fixed accumulation order per output,
// so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace fpt::kernels {

int max_threads();
void set_num_threads(int threads);

struct ConvDims {
  std::size_t n = 1;
  std::size_t cin = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t cout = 1;
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t out_h = 1;
  std::size_t out_w = 1;

  std::size_t input_size() const { return n * cin * h * w; }
  std::size_t weight_size() const { return cout * cin * kh * kw; }
  std::size_t output_size() const { return n * cout * out_h * out_w; }
};

/// y = conv(x, w) + b. `b` may be empty (no bias). Overwrites y.
void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_forward_reference(const ConvDims& d, std::span<const double> x,
                              std::span<const double> w, std::span<const double> b,
                              std::span<double> y);

/// dx += conv_transpose(dy, w)
void conv2d_backward_input(const ConvDims& d, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);
void conv2d_backward_input_reference(const ConvDims& d, std::span<const double> dy,
                                     std::span<const double> w, std::span<double> dx);

/// dw += correlation of dy with x
void conv2d_backward_weight(const ConvDims& d, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw);
void conv2d_backward_weight_reference(const ConvDims& d, std::span<const double> dy,
                                      std::span<const double> x, std::span<double> dw);

/// db += per-channel sum of dy
void conv2d_backward_bias(const ConvDims& d, std::span<const double> dy, std::span<double> db);

/// Batched matrix products over `batch` independent (m,k)x(k,n) problems.
struct GemmDims {
  std::size_t batch = 1;
  std::size_t m = 1;
  std::size_t k = 1;
  std::size_t n = 1;
};

/// C = A B (or C += A B when accumulate). A is [m,k], B is [k,n].
void gemm_nn(const GemmDims& d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
/// C (+)= A B^T with A [m,k], B [n,k].
void gemm_nt(const GemmDims& d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
/// C (+)= A^T B with A [k,m], B [k,n].
void gemm_tn(const GemmDims& d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
/// Triple loop, any transposition. Overwrites c.
void gemm_reference(const GemmDims& d, bool trans_a, bool trans_b, std::span<const double> a,
                    std::span<const double> b, std::span<double> c);

/// s[i,j] = -||q_i - k_j||^2 per batch; q [pq,dim], k [pk,dim], s [pq,pk].
struct DistDims {
  std::size_t batch = 1;
  std::size_t pq = 1;
  std::size_t pk = 1;
  std::size_t dim = 1;
};
void neg_sq_dist(const DistDims& d, std::span<const double> q, std::span<const double> k,
                 std::span<double> s);
void neg_sq_dist_reference(const DistDims& d, std::span<const double> q,
                           std::span<const double> k, std::span<double> s);
/// dq += sum_j ds_ij * -2 (q_i - k_j);  dk += sum_i ds_ij * 2 (q_i - k_j). Either may be empty.
void neg_sq_dist_backward(const DistDims& d, std::span<const double> ds,
                          std::span<const double> q, std::span<const double> k,
                          std::span<double> dq, std::span<double> dk);

/// Max-shifted softmax of each contiguous row of length `cols`.
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);
/// dx += y * (dy - <dy, y>) row-wise.
void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> y,
                           std::span<const double> dy, std::span<double> dx);

/// Square windows over a zero-padded coarse map for locality-constrained attention.
/// Query i at fine (y, x) looks at padded rows [cy, cy + size), cols [cx, cx + size), where
/// (cy, cx) = (floor(y * coarse_h / fine_h), floor(x * coarse_w / fine_w)).
struct WindowDims {
  std::size_t batch = 1;
  std::size_t parts = 1;
  std::size_t part_dim = 1;  // channels per part; map channels = parts * part_dim
  std::size_t fine_h = 1;
  std::size_t fine_w = 1;
  std::size_t coarse_h = 1;
  std::size_t coarse_w = 1;
  std::size_t size = 1;  // odd window side

  std::size_t pad() const { return size / 2; }
  std::size_t padded_h() const { return coarse_h + 2 * pad(); }
  std::size_t padded_w() const { return coarse_w + 2 * pad(); }
  std::size_t queries() const { return fine_h * fine_w; }
  std::size_t window() const { return size * size; }
  std::size_t channels() const { return parts * part_dim; }
  std::size_t center_y(std::size_t y) const { return y * coarse_h / fine_h; }
  std::size_t center_x(std::size_t x) const { return x * coarse_w / fine_w; }
};

/// q [batch, parts, queries, part_dim], kpad [batch, channels, padded_h, padded_w]
/// -> s [batch, parts, queries, window]
void window_neg_sq_dist(const WindowDims& d, std::span<const double> q,
                        std::span<const double> kpad, std::span<double> s);
void window_neg_sq_dist_backward(const WindowDims& d, std::span<const double> ds,
                                 std::span<const double> q, std::span<const double> kpad,
                                 std::span<double> dq, std::span<double> dkpad);

/// w [batch, 1, queries, window], vpad [batch, C, padded_h, padded_w] -> out [batch, 1,
/// queries, C]. Here `parts` is ignored and C = part_dim.
void window_aggregate(const WindowDims& d, std::span<const double> w,
                      std::span<const double> vpad, std::span<double> out);
void window_aggregate_backward(const WindowDims& d, std::span<const double> dout,
                               std::span<const double> w, std::span<const double> vpad,
                               std::span<double> dw, std::span<double> dvpad);

}  // namespace fpt::kernels
