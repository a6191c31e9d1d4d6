#include "fpt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fpt::kernels {

using idx = std::ptrdiff_t;

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int threads) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, threads));
#else
  (void)threads;
#endif
}

namespace {

// Valid output-column range [lo, hi) for a stride-1 tap at kernel column `s`.
inline void tap_range(const ConvDims& d, std::size_t s, std::size_t& lo, std::size_t& hi) {
  const idx shift = static_cast<idx>(s) - static_cast<idx>(d.pad_w);
  const idx first = std::max<idx>(0, -shift);
  const idx last = std::min<idx>(static_cast<idx>(d.out_w), static_cast<idx>(d.w) - shift);
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(std::max(first, last));
}

inline bool input_row(const ConvDims& d, std::size_t oy, std::size_t r, std::size_t& iy) {
  const idx y = static_cast<idx>(oy * d.stride + r) - static_cast<idx>(d.pad_h);
  if (y < 0 || y >= static_cast<idx>(d.h)) return false;
  iy = static_cast<std::size_t>(y);
  return true;
}

inline bool input_col(const ConvDims& d, std::size_t ox, std::size_t s, std::size_t& ix) {
  const idx x = static_cast<idx>(ox * d.stride + s) - static_cast<idx>(d.pad_w);
  if (x < 0 || x >= static_cast<idx>(d.w)) return false;
  ix = static_cast<std::size_t>(x);
  return true;
}

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const std::size_t out_plane = d.out_h * d.out_w;
  const std::size_t in_plane = d.h * d.w;
  const idx jobs = static_cast<idx>(d.n * d.cout);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t nb = static_cast<std::size_t>(job) / d.cout;
    const std::size_t co = static_cast<std::size_t>(job) % d.cout;
    double* out = y.data() + (nb * d.cout + co) * out_plane;
    std::fill(out, out + out_plane, b.empty() ? 0.0 : b[co]);
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      const double* in = x.data() + (nb * d.cin + ci) * in_plane;
      const double* wk = w.data() + (co * d.cin + ci) * d.kh * d.kw;
      for (std::size_t r = 0; r < d.kh; ++r) {
        for (std::size_t s = 0; s < d.kw; ++s) {
          const double wv = wk[r * d.kw + s];
          for (std::size_t oy = 0; oy < d.out_h; ++oy) {
            std::size_t iy;
            if (!input_row(d, oy, r, iy)) continue;
            const double* row_in = in + iy * d.w;
            double* row_out = out + oy * d.out_w;
            if (d.stride == 1) {
              std::size_t lo, hi;
              tap_range(d, s, lo, hi);
              const idx shift = static_cast<idx>(s) - static_cast<idx>(d.pad_w);
              for (std::size_t ox = lo; ox < hi; ++ox) row_out[ox] += wv * row_in[static_cast<idx>(ox) + shift];
            } else {
              for (std::size_t ox = 0; ox < d.out_w; ++ox) {
                std::size_t ix;
                if (input_col(d, ox, s, ix)) row_out[ox] += wv * row_in[ix];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_forward_reference(const ConvDims& d, std::span<const double> x,
                              std::span<const double> w, std::span<const double> b,
                              std::span<double> y) {
  for (std::size_t nb = 0; nb < d.n; ++nb)
    for (std::size_t co = 0; co < d.cout; ++co)
      for (std::size_t oy = 0; oy < d.out_h; ++oy)
        for (std::size_t ox = 0; ox < d.out_w; ++ox) {
          double acc = b.empty() ? 0.0 : b[co];
          for (std::size_t ci = 0; ci < d.cin; ++ci)
            for (std::size_t r = 0; r < d.kh; ++r)
              for (std::size_t s = 0; s < d.kw; ++s) {
                std::size_t iy, ix;
                if (!input_row(d, oy, r, iy) || !input_col(d, ox, s, ix)) continue;
                acc += w[((co * d.cin + ci) * d.kh + r) * d.kw + s] *
                       x[((nb * d.cin + ci) * d.h + iy) * d.w + ix];
              }
          y[((nb * d.cout + co) * d.out_h + oy) * d.out_w + ox] = acc;
        }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  const std::size_t out_plane = d.out_h * d.out_w;
  const std::size_t in_plane = d.h * d.w;
  const idx jobs = static_cast<idx>(d.n * d.cin);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t nb = static_cast<std::size_t>(job) / d.cin;
    const std::size_t ci = static_cast<std::size_t>(job) % d.cin;
    double* gin = dx.data() + (nb * d.cin + ci) * in_plane;
    for (std::size_t co = 0; co < d.cout; ++co) {
      const double* gout = dy.data() + (nb * d.cout + co) * out_plane;
      const double* wk = w.data() + (co * d.cin + ci) * d.kh * d.kw;
      for (std::size_t r = 0; r < d.kh; ++r) {
        for (std::size_t s = 0; s < d.kw; ++s) {
          const double wv = wk[r * d.kw + s];
          for (std::size_t oy = 0; oy < d.out_h; ++oy) {
            std::size_t iy;
            if (!input_row(d, oy, r, iy)) continue;
            double* row_in = gin + iy * d.w;
            const double* row_out = gout + oy * d.out_w;
            if (d.stride == 1) {
              std::size_t lo, hi;
              tap_range(d, s, lo, hi);
              const idx shift = static_cast<idx>(s) - static_cast<idx>(d.pad_w);
              for (std::size_t ox = lo; ox < hi; ++ox) row_in[static_cast<idx>(ox) + shift] += wv * row_out[ox];
            } else {
              for (std::size_t ox = 0; ox < d.out_w; ++ox) {
                std::size_t ix;
                if (input_col(d, ox, s, ix)) row_in[ix] += wv * row_out[ox];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input_reference(const ConvDims& d, std::span<const double> dy,
                                     std::span<const double> w, std::span<double> dx) {
  for (std::size_t nb = 0; nb < d.n; ++nb)
    for (std::size_t co = 0; co < d.cout; ++co)
      for (std::size_t oy = 0; oy < d.out_h; ++oy)
        for (std::size_t ox = 0; ox < d.out_w; ++ox) {
          const double g = dy[((nb * d.cout + co) * d.out_h + oy) * d.out_w + ox];
          for (std::size_t ci = 0; ci < d.cin; ++ci)
            for (std::size_t r = 0; r < d.kh; ++r)
              for (std::size_t s = 0; s < d.kw; ++s) {
                std::size_t iy, ix;
                if (!input_row(d, oy, r, iy) || !input_col(d, ox, s, ix)) continue;
                dx[((nb * d.cin + ci) * d.h + iy) * d.w + ix] +=
                    g * w[((co * d.cin + ci) * d.kh + r) * d.kw + s];
              }
        }
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw) {
  const std::size_t out_plane = d.out_h * d.out_w;
  const std::size_t in_plane = d.h * d.w;
  const idx jobs = static_cast<idx>(d.cout * d.cin);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t co = static_cast<std::size_t>(job) / d.cin;
    const std::size_t ci = static_cast<std::size_t>(job) % d.cin;
    double* gw = dw.data() + (co * d.cin + ci) * d.kh * d.kw;
    for (std::size_t r = 0; r < d.kh; ++r) {
      for (std::size_t s = 0; s < d.kw; ++s) {
        double acc = 0.0;
        for (std::size_t nb = 0; nb < d.n; ++nb) {
          const double* gout = dy.data() + (nb * d.cout + co) * out_plane;
          const double* in = x.data() + (nb * d.cin + ci) * in_plane;
          for (std::size_t oy = 0; oy < d.out_h; ++oy) {
            std::size_t iy;
            if (!input_row(d, oy, r, iy)) continue;
            const double* row_in = in + iy * d.w;
            const double* row_out = gout + oy * d.out_w;
            if (d.stride == 1) {
              std::size_t lo, hi;
              tap_range(d, s, lo, hi);
              const idx shift = static_cast<idx>(s) - static_cast<idx>(d.pad_w);
              for (std::size_t ox = lo; ox < hi; ++ox) acc += row_out[ox] * row_in[static_cast<idx>(ox) + shift];
            } else {
              for (std::size_t ox = 0; ox < d.out_w; ++ox) {
                std::size_t ix;
                if (input_col(d, ox, s, ix)) acc += row_out[ox] * row_in[ix];
              }
            }
          }
        }
        gw[r * d.kw + s] += acc;
      }
    }
  }
}

void conv2d_backward_weight_reference(const ConvDims& d, std::span<const double> dy,
                                      std::span<const double> x, std::span<double> dw) {
  for (std::size_t nb = 0; nb < d.n; ++nb)
    for (std::size_t co = 0; co < d.cout; ++co)
      for (std::size_t oy = 0; oy < d.out_h; ++oy)
        for (std::size_t ox = 0; ox < d.out_w; ++ox) {
          const double g = dy[((nb * d.cout + co) * d.out_h + oy) * d.out_w + ox];
          for (std::size_t ci = 0; ci < d.cin; ++ci)
            for (std::size_t r = 0; r < d.kh; ++r)
              for (std::size_t s = 0; s < d.kw; ++s) {
                std::size_t iy, ix;
                if (!input_row(d, oy, r, iy) || !input_col(d, ox, s, ix)) continue;
                dw[((co * d.cin + ci) * d.kh + r) * d.kw + s] +=
                    g * x[((nb * d.cin + ci) * d.h + iy) * d.w + ix];
              }
        }
}

void conv2d_backward_bias(const ConvDims& d, std::span<const double> dy, std::span<double> db) {
  const std::size_t out_plane = d.out_h * d.out_w;
  const idx jobs = static_cast<idx>(d.cout);
#pragma omp parallel for schedule(static)
  for (idx co = 0; co < jobs; ++co) {
    double acc = 0.0;
    for (std::size_t nb = 0; nb < d.n; ++nb) {
      const double* g = dy.data() + (nb * d.cout + static_cast<std::size_t>(co)) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) acc += g[i];
    }
    db[static_cast<std::size_t>(co)] += acc;
  }
}

void gemm_nn(const GemmDims& d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const idx jobs = static_cast<idx>(d.batch * d.m);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t bt = static_cast<std::size_t>(job) / d.m;
    const std::size_t i = static_cast<std::size_t>(job) % d.m;
    const double* arow = a.data() + (bt * d.m + i) * d.k;
    const double* bmat = b.data() + bt * d.k * d.n;
    double* crow = c.data() + (bt * d.m + i) * d.n;
    if (!accumulate) std::fill(crow, crow + d.n, 0.0);
    for (std::size_t t = 0; t < d.k; ++t) {
      const double av = arow[t];
      const double* brow = bmat + t * d.n;
      for (std::size_t j = 0; j < d.n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const GemmDims& d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const idx jobs = static_cast<idx>(d.batch * d.m);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t bt = static_cast<std::size_t>(job) / d.m;
    const std::size_t i = static_cast<std::size_t>(job) % d.m;
    const double* arow = a.data() + (bt * d.m + i) * d.k;
    const double* bmat = b.data() + bt * d.n * d.k;
    double* crow = c.data() + (bt * d.m + i) * d.n;
    for (std::size_t j = 0; j < d.n; ++j) {
      const double* brow = bmat + j * d.k;
      double acc = 0.0;
      for (std::size_t t = 0; t < d.k; ++t) acc += arow[t] * brow[t];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void gemm_tn(const GemmDims& d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const idx jobs = static_cast<idx>(d.batch * d.m);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t bt = static_cast<std::size_t>(job) / d.m;
    const std::size_t i = static_cast<std::size_t>(job) % d.m;
    const double* amat = a.data() + bt * d.k * d.m;
    const double* bmat = b.data() + bt * d.k * d.n;
    double* crow = c.data() + (bt * d.m + i) * d.n;
    if (!accumulate) std::fill(crow, crow + d.n, 0.0);
    for (std::size_t t = 0; t < d.k; ++t) {
      const double av = amat[t * d.m + i];
      const double* brow = bmat + t * d.n;
      for (std::size_t j = 0; j < d.n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_reference(const GemmDims& d, bool trans_a, bool trans_b, std::span<const double> a,
                    std::span<const double> b, std::span<double> c) {
  for (std::size_t bt = 0; bt < d.batch; ++bt)
    for (std::size_t i = 0; i < d.m; ++i)
      for (std::size_t j = 0; j < d.n; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < d.k; ++t) {
          const double av = trans_a ? a[bt * d.k * d.m + t * d.m + i]
                                    : a[bt * d.m * d.k + i * d.k + t];
          const double bv = trans_b ? b[bt * d.n * d.k + j * d.k + t]
                                    : b[bt * d.k * d.n + t * d.n + j];
          acc += av * bv;
        }
        c[(bt * d.m + i) * d.n + j] = acc;
      }
}

void neg_sq_dist(const DistDims& d, std::span<const double> q, std::span<const double> k,
                 std::span<double> s) {
  const idx jobs = static_cast<idx>(d.batch * d.pq);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t bt = static_cast<std::size_t>(job) / d.pq;
    const double* qrow = q.data() + static_cast<std::size_t>(job) * d.dim;
    const double* kmat = k.data() + bt * d.pk * d.dim;
    double* srow = s.data() + static_cast<std::size_t>(job) * d.pk;
    for (std::size_t j = 0; j < d.pk; ++j) {
      const double* krow = kmat + j * d.dim;
      double acc = 0.0;
      for (std::size_t t = 0; t < d.dim; ++t) {
        const double diff = qrow[t] - krow[t];
        acc -= diff * diff;
      }
      srow[j] = acc;
    }
  }
}

void neg_sq_dist_reference(const DistDims& d, std::span<const double> q,
                           std::span<const double> k, std::span<double> s) {
  for (std::size_t bt = 0; bt < d.batch; ++bt)
    for (std::size_t i = 0; i < d.pq; ++i)
      for (std::size_t j = 0; j < d.pk; ++j) {
        double norm2 = 0.0;
        for (std::size_t t = 0; t < d.dim; ++t) {
          const double diff =
              q[(bt * d.pq + i) * d.dim + t] - k[(bt * d.pk + j) * d.dim + t];
          norm2 += diff * diff;
        }
        s[(bt * d.pq + i) * d.pk + j] = -norm2;
      }
}

void neg_sq_dist_backward(const DistDims& d, std::span<const double> ds,
                          std::span<const double> q, std::span<const double> k,
                          std::span<double> dq, std::span<double> dk) {
  if (!dq.empty()) {
    const idx jobs = static_cast<idx>(d.batch * d.pq);
#pragma omp parallel for schedule(static)
    for (idx job = 0; job < jobs; ++job) {
      const std::size_t bt = static_cast<std::size_t>(job) / d.pq;
      const double* qrow = q.data() + static_cast<std::size_t>(job) * d.dim;
      const double* grow = ds.data() + static_cast<std::size_t>(job) * d.pk;
      double* out = dq.data() + static_cast<std::size_t>(job) * d.dim;
      for (std::size_t j = 0; j < d.pk; ++j) {
        const double* krow = k.data() + (bt * d.pk + j) * d.dim;
        const double g = -2.0 * grow[j];
        for (std::size_t t = 0; t < d.dim; ++t) out[t] += g * (qrow[t] - krow[t]);
      }
    }
  }
  if (!dk.empty()) {
    const idx jobs = static_cast<idx>(d.batch * d.pk);
#pragma omp parallel for schedule(static)
    for (idx job = 0; job < jobs; ++job) {
      const std::size_t bt = static_cast<std::size_t>(job) / d.pk;
      const std::size_t j = static_cast<std::size_t>(job) % d.pk;
      const double* krow = k.data() + static_cast<std::size_t>(job) * d.dim;
      double* out = dk.data() + static_cast<std::size_t>(job) * d.dim;
      for (std::size_t i = 0; i < d.pq; ++i) {
        const double* qrow = q.data() + (bt * d.pq + i) * d.dim;
        const double g = 2.0 * ds[(bt * d.pq + i) * d.pk + j];
        for (std::size_t t = 0; t < d.dim; ++t) out[t] += g * (qrow[t] - krow[t]);
      }
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y) {
  const idx jobs = static_cast<idx>(rows);
#pragma omp parallel for schedule(static)
  for (idx r = 0; r < jobs; ++r) {
    const double* in = x.data() + static_cast<std::size_t>(r) * cols;
    double* out = y.data() + static_cast<std::size_t>(r) * cols;
    const double peak = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - peak);
      total += out[j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
  }
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> y,
                           std::span<const double> dy, std::span<double> dx) {
  const idx jobs = static_cast<idx>(rows);
#pragma omp parallel for schedule(static)
  for (idx r = 0; r < jobs; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    double inner = 0.0;
    for (std::size_t j = 0; j < cols; ++j) inner += dy[base + j] * y[base + j];
    for (std::size_t j = 0; j < cols; ++j) dx[base + j] += y[base + j] * (dy[base + j] - inner);
  }
}

namespace {

inline std::size_t padded_offset(const WindowDims& d, std::size_t bt, std::size_t channel,
                                 std::size_t row, std::size_t col, std::size_t channels) {
  return ((bt * channels + channel) * d.padded_h() + row) * d.padded_w() + col;
}

}  // namespace

void window_neg_sq_dist(const WindowDims& d, std::span<const double> q,
                        std::span<const double> kpad, std::span<double> s) {
  const std::size_t nq = d.queries();
  const std::size_t win = d.window();
  const idx jobs = static_cast<idx>(d.batch * d.parts * nq);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t i = static_cast<std::size_t>(job) % nq;
    const std::size_t part = (static_cast<std::size_t>(job) / nq) % d.parts;
    const std::size_t bt = static_cast<std::size_t>(job) / (nq * d.parts);
    const std::size_t cy = d.center_y(i / d.fine_w);
    const std::size_t cx = d.center_x(i % d.fine_w);
    const double* qrow = q.data() + static_cast<std::size_t>(job) * d.part_dim;
    double* srow = s.data() + static_cast<std::size_t>(job) * win;
    for (std::size_t u = 0; u < win; ++u) {
      const std::size_t row = cy + u / d.size;
      const std::size_t col = cx + u % d.size;
      double acc = 0.0;
      for (std::size_t t = 0; t < d.part_dim; ++t) {
        const double kv = kpad[padded_offset(d, bt, part * d.part_dim + t, row, col, d.channels())];
        const double diff = qrow[t] - kv;
        acc -= diff * diff;
      }
      srow[u] = acc;
    }
  }
}

void window_neg_sq_dist_backward(const WindowDims& d, std::span<const double> ds,
                                 std::span<const double> q, std::span<const double> kpad,
                                 std::span<double> dq, std::span<double> dkpad) {
  const std::size_t nq = d.queries();
  const std::size_t win = d.window();
  const std::size_t channels = d.channels();
  if (!dq.empty()) {
    const idx jobs = static_cast<idx>(d.batch * d.parts * nq);
#pragma omp parallel for schedule(static)
    for (idx job = 0; job < jobs; ++job) {
      const std::size_t i = static_cast<std::size_t>(job) % nq;
      const std::size_t part = (static_cast<std::size_t>(job) / nq) % d.parts;
      const std::size_t bt = static_cast<std::size_t>(job) / (nq * d.parts);
      const std::size_t cy = d.center_y(i / d.fine_w);
      const std::size_t cx = d.center_x(i % d.fine_w);
      const double* qrow = q.data() + static_cast<std::size_t>(job) * d.part_dim;
      const double* grow = ds.data() + static_cast<std::size_t>(job) * win;
      double* out = dq.data() + static_cast<std::size_t>(job) * d.part_dim;
      for (std::size_t u = 0; u < win; ++u) {
        const double g = -2.0 * grow[u];
        for (std::size_t t = 0; t < d.part_dim; ++t) {
          const double kv = kpad[padded_offset(d, bt, part * d.part_dim + t, cy + u / d.size,
                                               cx + u % d.size, channels)];
          out[t] += g * (qrow[t] - kv);
        }
      }
    }
  }
  if (!dkpad.empty()) {
    // One job per (batch, part): windows overlap, so each job owns whole channels.
    const idx jobs = static_cast<idx>(d.batch * d.parts);
#pragma omp parallel for schedule(static)
    for (idx job = 0; job < jobs; ++job) {
      const std::size_t part = static_cast<std::size_t>(job) % d.parts;
      const std::size_t bt = static_cast<std::size_t>(job) / d.parts;
      for (std::size_t i = 0; i < nq; ++i) {
        const std::size_t cy = d.center_y(i / d.fine_w);
        const std::size_t cx = d.center_x(i % d.fine_w);
        const std::size_t qbase = ((bt * d.parts + part) * nq + i);
        const double* qrow = q.data() + qbase * d.part_dim;
        const double* grow = ds.data() + qbase * win;
        for (std::size_t u = 0; u < win; ++u) {
          const double g = 2.0 * grow[u];
          for (std::size_t t = 0; t < d.part_dim; ++t) {
            const std::size_t off = padded_offset(d, bt, part * d.part_dim + t, cy + u / d.size,
                                                  cx + u % d.size, channels);
            dkpad[off] += g * (qrow[t] - kpad[off]);
          }
        }
      }
    }
  }
}

void window_aggregate(const WindowDims& d, std::span<const double> w,
                      std::span<const double> vpad, std::span<double> out) {
  const std::size_t nq = d.queries();
  const std::size_t win = d.window();
  const std::size_t channels = d.part_dim;
  const idx jobs = static_cast<idx>(d.batch * nq);
#pragma omp parallel for schedule(static)
  for (idx job = 0; job < jobs; ++job) {
    const std::size_t i = static_cast<std::size_t>(job) % nq;
    const std::size_t bt = static_cast<std::size_t>(job) / nq;
    const std::size_t cy = d.center_y(i / d.fine_w);
    const std::size_t cx = d.center_x(i % d.fine_w);
    const double* wrow = w.data() + static_cast<std::size_t>(job) * win;
    double* orow = out.data() + static_cast<std::size_t>(job) * channels;
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t u = 0; u < win; ++u) {
        acc += wrow[u] * vpad[padded_offset(d, bt, c, cy + u / d.size, cx + u % d.size, channels)];
      }
      orow[c] = acc;
    }
  }
}

void window_aggregate_backward(const WindowDims& d, std::span<const double> dout,
                               std::span<const double> w, std::span<const double> vpad,
                               std::span<double> dw, std::span<double> dvpad) {
  const std::size_t nq = d.queries();
  const std::size_t win = d.window();
  const std::size_t channels = d.part_dim;
  if (!dw.empty()) {
    const idx jobs = static_cast<idx>(d.batch * nq);
#pragma omp parallel for schedule(static)
    for (idx job = 0; job < jobs; ++job) {
      const std::size_t i = static_cast<std::size_t>(job) % nq;
      const std::size_t bt = static_cast<std::size_t>(job) / nq;
      const std::size_t cy = d.center_y(i / d.fine_w);
      const std::size_t cx = d.center_x(i % d.fine_w);
      const double* grow = dout.data() + static_cast<std::size_t>(job) * channels;
      double* out = dw.data() + static_cast<std::size_t>(job) * win;
      for (std::size_t u = 0; u < win; ++u) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          acc += grow[c] *
                 vpad[padded_offset(d, bt, c, cy + u / d.size, cx + u % d.size, channels)];
        }
        out[u] += acc;
      }
    }
  }
  if (!dvpad.empty()) {
    const idx jobs = static_cast<idx>(d.batch * channels);
#pragma omp parallel for schedule(static)
    for (idx job = 0; job < jobs; ++job) {
      const std::size_t c = static_cast<std::size_t>(job) % channels;
      const std::size_t bt = static_cast<std::size_t>(job) / channels;
      for (std::size_t i = 0; i < nq; ++i) {
        const std::size_t cy = d.center_y(i / d.fine_w);
        const std::size_t cx = d.center_x(i % d.fine_w);
        const double g = dout[(bt * nq + i) * channels + c];
        const double* wrow = w.data() + (bt * nq + i) * win;
        for (std::size_t u = 0; u < win; ++u) {
          dvpad[padded_offset(d, bt, c, cy + u / d.size, cx + u % d.size, channels)] +=
              wrow[u] * g;
        }
      }
    }
  }
}

}  // namespace fpt::kernels
