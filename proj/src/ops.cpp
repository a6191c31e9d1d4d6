#include "fpt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fpt::ops {

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shapes differ " + a.str() + " vs " + b.str());
}

Tape& tape_of(Var v) {
  if (!v.valid()) throw ContractError("operation on an unbound Var");
  return v.tape();
}

}  // namespace

Var add(Var a, Var b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bd[i];
  return tape_of(a).record("add", std::move(out), {a, b}, [](const BackwardArgs& g) {
    for (Tensor* gi : g.grad_in) {
      if (gi == nullptr) continue;
      for (std::size_t i = 0; i < gi->numel(); ++i) (*gi)[i] += g.grad_out[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor out = a.value();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bd[i];
  return tape_of(a).record("sub", std::move(out), {a, b}, [](const BackwardArgs& g) {
    if (Tensor* ga = g.grad_in[0]) {
      for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g.grad_out[i];
    }
    if (Tensor* gb = g.grad_in[1]) {
      for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] -= g.grad_out[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor out = a.value();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bd[i];
  return tape_of(a).record("mul", std::move(out), {a, b}, [](const BackwardArgs& g) {
    const Tensor& av = *g.in[0];
    const Tensor& bv = *g.in[1];
    if (Tensor* ga = g.grad_in[0]) {
      for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g.grad_out[i] * bv[i];
    }
    if (Tensor* gb = g.grad_in[1]) {
      for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] += g.grad_out[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return tape_of(a).record("scale", std::move(out), {a}, [factor](const BackwardArgs& g) {
    Tensor& ga = *g.grad_in[0];
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += factor * g.grad_out[i];
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return tape_of(a).record("sum", Tensor::scalar(total), {a}, [](const BackwardArgs& g) {
    Tensor& ga = *g.grad_in[0];
    const double s = g.grad_out[0];
    for (double& v : ga.data()) v += s;
  });
}

Var weighted_sum(Var a, const Tensor& weights) {
  require_same(a.shape(), weights.shape(), "weighted_sum");
  double total = 0.0;
  const auto av = a.value().data();
  for (std::size_t i = 0; i < av.size(); ++i) total += av[i] * weights[i];
  return tape_of(a).record("weighted_sum", Tensor::scalar(total), {a},
                           [weights](const BackwardArgs& g) {
                             Tensor& ga = *g.grad_in[0];
                             const double s = g.grad_out[0];
                             for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += s * weights[i];
                           });
}

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.c != sb.c || sa.w != sb.h) {
    throw ShapeError("matmul: cannot multiply " + sa.str() + " by " + sb.str());
  }
  const kernels::GemmDims d{sa.n * sa.c, sa.h, sa.w, sb.w};
  Tensor out(Shape{sa.n, sa.c, sa.h, sb.w});
  kernels::gemm_nn(d, a.value().data(), b.value().data(), out.data(), false);
  return tape_of(a).record("matmul", std::move(out), {a, b}, [d](const BackwardArgs& g) {
    // dA = dC B^T, dB = A^T dC
    if (Tensor* ga = g.grad_in[0]) {
      kernels::gemm_nt({d.batch, d.m, d.n, d.k}, g.grad_out.data(), g.in[1]->data(), ga->data(),
                       true);
    }
    if (Tensor* gb = g.grad_in[1]) {
      kernels::gemm_tn({d.batch, d.k, d.m, d.n}, g.in[0]->data(), g.grad_out.data(), gb->data(),
                       true);
    }
  });
}

Var transpose(Var a) {
  const Shape s = a.shape();
  Tensor out(Shape{s.n, s.c, s.w, s.h});
  const Tensor& in = a.value();
  for (std::size_t b = 0; b < s.n * s.c; ++b)
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) out[(b * s.w + j) * s.h + i] = in[(b * s.h + i) * s.w + j];
  return tape_of(a).record("transpose", std::move(out), {a}, [s](const BackwardArgs& g) {
    Tensor& ga = *g.grad_in[0];
    for (std::size_t b = 0; b < s.n * s.c; ++b)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j)
          ga[(b * s.h + i) * s.w + j] += g.grad_out[(b * s.w + j) * s.h + i];
  });
}

Var reshape(Var a, Shape shape) {
  validate_shape(shape);
  if (shape.numel() != a.value().numel()) {
    throw ShapeError("reshape: " + a.shape().str() + " to " + shape.str());
  }
  std::vector<double> data(a.value().data().begin(), a.value().data().end());
  return tape_of(a).record("reshape", Tensor(shape, std::move(data)), {a},
                           [](const BackwardArgs& g) {
                             Tensor& ga = *g.grad_in[0];
                             for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g.grad_out[i];
                           });
}

Var softmax(Var a) {
  const Shape s = a.shape();
  const std::size_t rows = s.n * s.c * s.h;
  Tensor out(s);
  kernels::softmax_rows(rows, s.w, a.value().data(), out.data());
  return tape_of(a).record("softmax", std::move(out), {a}, [rows, s](const BackwardArgs& g) {
    kernels::softmax_rows_backward(rows, s.w, g.out.data(), g.grad_out.data(),
                                   g.grad_in[0]->data());
  });
}

std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw ShapeError("softmax: empty input");
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericalError("softmax: non-finite input");
  }
  std::vector<double> y(x.size());
  kernels::softmax_rows(1, x.size(), x, y);
  return y;
}

std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t pad,
                          std::size_t stride, Rounding rounding) {
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t span = in + 2 * pad;
  if (span < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(span));
  }
  if (rounding == Rounding::exact && (span - kernel) % stride != 0) {
    throw ShapeError("conv2d: non-integral output size (" + std::to_string(span) + " - " +
                     std::to_string(kernel) + ") / " + std::to_string(stride));
  }
  return (span - kernel) / stride + 1;
}

kernels::ConvDims conv_dims(const Shape& x, const Shape& w, const Conv2dOptions& opt) {
  if (x.c != w.c) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, kernel expects " +
                     std::to_string(w.c));
  }
  kernels::ConvDims d;
  d.n = x.n;
  d.cin = x.c;
  d.h = x.h;
  d.w = x.w;
  d.cout = w.n;
  d.kh = w.h;
  d.kw = w.w;
  d.stride = opt.stride;
  d.pad_h = opt.pad_h;
  d.pad_w = opt.pad_w;
  d.out_h = conv_out_size(x.h, w.h, opt.pad_h, opt.stride, opt.rounding);
  d.out_w = conv_out_size(x.w, w.w, opt.pad_w, opt.stride, opt.rounding);
  return d;
}

Var conv2d(Var x, Var w, std::optional<Var> b, const Conv2dOptions& opt) {
  const kernels::ConvDims d = conv_dims(x.shape(), w.shape(), opt);
  if (b && b->shape() != Shape{1, d.cout, 1, 1}) {
    throw ShapeError("conv2d: bias shape " + b->shape().str() + " for " +
                     std::to_string(d.cout) + " output channels");
  }
  Tensor out(Shape{d.n, d.cout, d.out_h, d.out_w});
  kernels::conv2d_forward(d, x.value().data(), w.value().data(),
                          b ? b->value().data() : std::span<const double>{}, out.data());
  auto backward = [d](const BackwardArgs& g) {
    if (Tensor* gx = g.grad_in[0]) {
      kernels::conv2d_backward_input(d, g.grad_out.data(), g.in[1]->data(), gx->data());
    }
    if (Tensor* gw = g.grad_in[1]) {
      kernels::conv2d_backward_weight(d, g.grad_out.data(), g.in[0]->data(), gw->data());
    }
    if (g.grad_in.size() > 2 && g.grad_in[2] != nullptr) {
      kernels::conv2d_backward_bias(d, g.grad_out.data(), g.grad_in[2]->data());
    }
  };
  if (b) return tape_of(x).record("conv2d", std::move(out), {x, w, *b}, std::move(backward));
  return tape_of(x).record("conv2d", std::move(out), {x, w}, std::move(backward));
}

Var global_avg_pool(Var x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, s.c, 1, 1});
  const auto in = x.value().data();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += in[p * plane + i];
    out[p] = acc / static_cast<double>(plane);
  }
  return tape_of(x).record("global_avg_pool", std::move(out), {x}, [s](const BackwardArgs& g) {
    Tensor& gx = *g.grad_in[0];
    const std::size_t plane = s.plane();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      const double share = g.grad_out[p] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += share;
    }
  });
}

Var channel_scale(Var x, Var s) {
  const Shape xs = x.shape();
  if (s.shape() != Shape{xs.n, xs.c, 1, 1}) {
    throw ShapeError("channel_scale: scale " + s.shape().str() + " for input " + xs.str());
  }
  const std::size_t plane = xs.plane();
  Tensor out = x.value();
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    const double f = s.value()[p];
    for (std::size_t i = 0; i < plane; ++i) out[p * plane + i] *= f;
  }
  return tape_of(x).record("channel_scale", std::move(out), {x, s}, [xs](const BackwardArgs& g) {
    const std::size_t plane = xs.plane();
    const Tensor& xv = *g.in[0];
    const Tensor& sv = *g.in[1];
    for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
      if (Tensor* gx = g.grad_in[0]) {
        for (std::size_t i = 0; i < plane; ++i) (*gx)[p * plane + i] += sv[p] * g.grad_out[p * plane + i];
      }
      if (Tensor* gs = g.grad_in[1]) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += xv[p * plane + i] * g.grad_out[p * plane + i];
        (*gs)[p] += acc;
      }
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  std::size_t channels = 0;
  for (const Var& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " does not match " + first.str());
    }
    channels += s.c;
  }
  const std::size_t plane = first.plane();
  Tensor out(Shape{first.n, channels, first.h, first.w});
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Shape s = p.shape();
    widths.push_back(s.c);
    for (std::size_t b = 0; b < s.n; ++b) {
      const auto src = p.value().data().subspan(b * s.c * plane, s.c * plane);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>((b * channels + offset) * plane));
    }
    offset += s.c;
  }
  return tape_of(parts.front())
      .record("concat_channels", std::move(out), parts,
              [widths, channels, plane, batch = first.n](const BackwardArgs& g) {
                std::size_t off = 0;
                for (std::size_t k = 0; k < widths.size(); ++k) {
                  if (Tensor* gk = g.grad_in[k]) {
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t i = 0; i < widths[k] * plane; ++i)
                        (*gk)[b * widths[k] * plane + i] += g.grad_out[(b * channels + off) * plane + i];
                  }
                  off += widths[k];
                }
              });
}

Var pad_spatial(Var x, std::size_t pad) {
  const Shape s = x.shape();
  const Shape ps{s.n, s.c, s.h + 2 * pad, s.w + 2 * pad};
  Tensor out(ps);
  const Tensor& in = x.value();
  for (std::size_t p = 0; p < s.n * s.c; ++p)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t xx = 0; xx < s.w; ++xx)
        out[(p * ps.h + y + pad) * ps.w + xx + pad] = in[(p * s.h + y) * s.w + xx];
  return tape_of(x).record("pad_spatial", std::move(out), {x}, [s, ps, pad](const BackwardArgs& g) {
    Tensor& gx = *g.grad_in[0];
    for (std::size_t p = 0; p < s.n * s.c; ++p)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx)
          gx[(p * s.h + y) * s.w + xx] += g.grad_out[(p * ps.h + y + pad) * ps.w + xx + pad];
  });
}

Var to_positions(Var x, std::size_t parts) {
  const Shape s = x.shape();
  if (parts == 0 || s.c % parts != 0) {
    throw ShapeError("to_positions: " + std::to_string(s.c) + " channels not divisible into " +
                     std::to_string(parts) + " parts");
  }
  const std::size_t dp = s.c / parts;
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, parts, plane, dp});
  const Tensor& in = x.value();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        out[((b * parts + c / dp) * plane + i) * dp + c % dp] = in[(b * s.c + c) * plane + i];
  return tape_of(x).record("to_positions", std::move(out), {x},
                           [s, dp, parts, plane](const BackwardArgs& g) {
                             Tensor& gx = *g.grad_in[0];
                             for (std::size_t b = 0; b < s.n; ++b)
                               for (std::size_t c = 0; c < s.c; ++c)
                                 for (std::size_t i = 0; i < plane; ++i)
                                   gx[(b * s.c + c) * plane + i] +=
                                       g.grad_out[((b * parts + c / dp) * plane + i) * dp + c % dp];
                           });
}

Var from_positions(Var x, std::size_t height, std::size_t width) {
  const Shape s = x.shape();
  if (s.c != 1 || s.h != height * width) {
    throw ShapeError("from_positions: " + s.str() + " cannot form a " + std::to_string(height) +
                     "x" + std::to_string(width) + " grid");
  }
  const std::size_t plane = s.h;
  const std::size_t channels = s.w;
  Tensor out(Shape{s.n, channels, height, width});
  const Tensor& in = x.value();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t c = 0; c < channels; ++c)
        out[(b * channels + c) * plane + i] = in[(b * plane + i) * channels + c];
  return tape_of(x).record("from_positions", std::move(out), {x},
                           [s, plane, channels](const BackwardArgs& g) {
                             Tensor& gx = *g.grad_in[0];
                             for (std::size_t b = 0; b < s.n; ++b)
                               for (std::size_t i = 0; i < plane; ++i)
                                 for (std::size_t c = 0; c < channels; ++c)
                                   gx[(b * plane + i) * channels + c] +=
                                       g.grad_out[(b * channels + c) * plane + i];
                           });
}

Var neg_sq_dist(Var q, Var k) {
  const Shape qs = q.shape();
  const Shape ks = k.shape();
  if (qs.n != ks.n || qs.c != ks.c || qs.w != ks.w) {
    throw ShapeError("neg_sq_dist: queries " + qs.str() + " vs keys " + ks.str());
  }
  const kernels::DistDims d{qs.n * qs.c, qs.h, ks.h, qs.w};
  Tensor out(Shape{qs.n, qs.c, qs.h, ks.h});
  kernels::neg_sq_dist(d, q.value().data(), k.value().data(), out.data());
  return tape_of(q).record("neg_sq_dist", std::move(out), {q, k}, [d](const BackwardArgs& g) {
    kernels::neg_sq_dist_backward(
        d, g.grad_out.data(), g.in[0]->data(), g.in[1]->data(),
        g.grad_in[0] ? g.grad_in[0]->data() : std::span<double>{},
        g.grad_in[1] ? g.grad_in[1]->data() : std::span<double>{});
  });
}

Var mix_parts(Var p, Var pi) {
  const Shape ps = p.shape();
  if (pi.shape() != Shape{ps.n, 1, 1, ps.c}) {
    throw ShapeError("mix_parts: weights " + pi.shape().str() + " for " + std::to_string(ps.c) +
                     " parts of " + ps.str());
  }
  const std::size_t block = ps.plane();
  Tensor out(Shape{ps.n, 1, ps.h, ps.w});
  const Tensor& pv = p.value();
  const Tensor& wv = pi.value();
  for (std::size_t b = 0; b < ps.n; ++b)
    for (std::size_t i = 0; i < block; ++i) {
      double acc = 0.0;
      for (std::size_t n = 0; n < ps.c; ++n) acc += wv[b * ps.c + n] * pv[(b * ps.c + n) * block + i];
      out[b * block + i] = acc;
    }
  return tape_of(p).record("mix_parts", std::move(out), {p, pi}, [ps, block](const BackwardArgs& g) {
    const Tensor& pv = *g.in[0];
    const Tensor& wv = *g.in[1];
    for (std::size_t b = 0; b < ps.n; ++b)
      for (std::size_t n = 0; n < ps.c; ++n) {
        const std::size_t base = (b * ps.c + n) * block;
        if (Tensor* gp = g.grad_in[0]) {
          const double w = wv[b * ps.c + n];
          for (std::size_t i = 0; i < block; ++i) (*gp)[base + i] += w * g.grad_out[b * block + i];
        }
        if (Tensor* gw = g.grad_in[1]) {
          double acc = 0.0;
          for (std::size_t i = 0; i < block; ++i) acc += pv[base + i] * g.grad_out[b * block + i];
          (*gw)[b * ps.c + n] += acc;
        }
      }
  });
}

Var window_neg_sq_dist(Var q, Var kpad, const kernels::WindowDims& dims) {
  const Shape expect_q{dims.batch, dims.parts, dims.queries(), dims.part_dim};
  const Shape expect_k{dims.batch, dims.channels(), dims.padded_h(), dims.padded_w()};
  if (q.shape() != expect_q || kpad.shape() != expect_k) {
    throw ShapeError("window_neg_sq_dist: got q " + q.shape().str() + ", keys " +
                     kpad.shape().str() + "; expected " + expect_q.str() + ", " + expect_k.str());
  }
  Tensor out(Shape{dims.batch, dims.parts, dims.queries(), dims.window()});
  kernels::window_neg_sq_dist(dims, q.value().data(), kpad.value().data(), out.data());
  return tape_of(q).record("window_neg_sq_dist", std::move(out), {q, kpad},
                           [dims](const BackwardArgs& g) {
                             kernels::window_neg_sq_dist_backward(
                                 dims, g.grad_out.data(), g.in[0]->data(), g.in[1]->data(),
                                 g.grad_in[0] ? g.grad_in[0]->data() : std::span<double>{},
                                 g.grad_in[1] ? g.grad_in[1]->data() : std::span<double>{});
                           });
}

Var window_aggregate(Var w, Var vpad, const kernels::WindowDims& dims) {
  const Shape vs = vpad.shape();
  kernels::WindowDims d = dims;
  d.parts = 1;
  d.part_dim = vs.c;
  const Shape expect_w{d.batch, 1, d.queries(), d.window()};
  const Shape expect_v{d.batch, vs.c, d.padded_h(), d.padded_w()};
  if (w.shape() != expect_w || vs != expect_v) {
    throw ShapeError("window_aggregate: got weights " + w.shape().str() + ", values " + vs.str() +
                     "; expected " + expect_w.str() + ", " + expect_v.str());
  }
  Tensor out(Shape{d.batch, 1, d.queries(), vs.c});
  kernels::window_aggregate(d, w.value().data(), vpad.value().data(), out.data());
  return tape_of(w).record("window_aggregate", std::move(out), {w, vpad},
                           [d](const BackwardArgs& g) {
                             kernels::window_aggregate_backward(
                                 d, g.grad_out.data(), g.in[0]->data(), g.in[1]->data(),
                                 g.grad_in[0] ? g.grad_in[0]->data() : std::span<double>{},
                                 g.grad_in[1] ? g.grad_in[1]->data() : std::span<double>{});
                           });
}

Var mask_multiply(Var x, const Tensor& mask) {
  require_same(x.shape(), mask.shape(), "mask_multiply");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return tape_of(x).record("mask_multiply", std::move(out), {x}, [mask](const BackwardArgs& g) {
    Tensor& gx = *g.grad_in[0];
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += mask[i] * g.grad_out[i];
  });
}

}  // namespace fpt::ops
