#include "fpt/attention.hpp"

#include <cmath>
#include <string>

#include "fpt/ops.hpp"

namespace fpt {

namespace {

void require_same_length(std::span<const double> q, std::span<const double> k, const char* what) {
  if (q.size() != k.size()) {
    throw ShapeError(std::string(what) + ": vector lengths " + std::to_string(q.size()) + " and " +
                     std::to_string(k.size()));
  }
}

}  // namespace

double sim_dot(std::span<const double> q, std::span<const double> k) {
  require_same_length(q, k, "sim_dot");
  double acc = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t) acc += q[t] * k[t];
  return acc;
}

double sim_eud(std::span<const double> q, std::span<const double> k) {
  require_same_length(q, k, "sim_eud");
  double acc = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t) {
    const double diff = q[t] - k[t];
    acc -= diff * diff;
  }
  return acc;
}

Var project(Var x, const ConvParams& p) {
  Tape& tape = x.tape();
  return ops::conv2d(x, tape.parameter(p.weight), tape.parameter(p.bias));
}

Var project_qkv(Var x, const ProjectionParams& p, Role which) {
  switch (which) {
    case Role::query:
      return project(x, p.q);
    case Role::key:
      return project(x, p.k);
    case Role::value:
      return project(x, p.v);
  }
  throw ContractError("project_qkv: unknown role");
}

Var mixture_weights(Var keys, const MosParams& mos) {
  if (keys.shape().c != mos.width()) {
    throw ShapeError("mixture_weights: keys have " + std::to_string(keys.shape().c) +
                     " channels, mixture vectors " + std::to_string(mos.width()));
  }
  Tape& tape = keys.tape();
  const Var mean_key = ops::global_avg_pool(keys);
  const Var logits = ops::conv2d(mean_key, tape.parameter(mos.mixture), std::nullopt);
  const std::size_t batch = keys.shape().n;
  return ops::softmax(ops::reshape(logits, Shape{batch, 1, 1, mos.parts()}));
}

Var part_scores(Var queries, Var keys, std::size_t parts, const AttentionOptions& options) {
  if (queries.shape().c != keys.shape().c || queries.shape().n != keys.shape().n) {
    throw ShapeError("part_scores: queries " + queries.shape().str() + " vs keys " +
                     keys.shape().str());
  }
  const Var q = ops::to_positions(queries, parts);
  const Var k = ops::to_positions(keys, parts);
  if (options.similarity == Similarity::euclidean) return ops::neg_sq_dist(q, k);
  Var s = ops::matmul(q, ops::transpose(k));
  if (options.scale_dot) s = ops::scale(s, 1.0 / std::sqrt(static_cast<double>(q.shape().w)));
  return s;
}

Var mos_normalize(Var scores, Var pi) {
  const Shape& ps = pi.shape();
  if (ps.n != scores.shape().n || ps.c != 1 || ps.h != 1 || ps.w != scores.shape().c) {
    throw ShapeError("mos_normalize: mixture " + ps.str() + " for scores " +
                     scores.shape().str());
  }
  for (std::size_t b = 0; b < ps.n; ++b) {
    double total = 0.0;
    for (std::size_t n = 0; n < ps.w; ++n) total += pi.value()[b * ps.w + n];
    if (std::abs(total - 1.0) > 1e-9) {
      throw ContractError("mos_normalize: mixture weights sum to " + std::to_string(total));
    }
  }
  return ops::mix_parts(ops::softmax(scores), pi);
}

void require_normalized(const Tensor& weights, double tolerance, std::string_view where) {
  const Shape& s = weights.shape();
  const std::size_t rows = s.n * s.c * s.h;
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < s.w; ++j) total += weights[r * s.w + j];
    if (std::abs(total - 1.0) > tolerance) {
      throw ContractError(std::string(where) + ": attention row " + std::to_string(r) +
                          " sums to " + std::to_string(total));
    }
  }
}

Var aggregate(Var weights, Var values) {
  require_normalized(weights.value(), 1e-9, "aggregate");
  return ops::matmul(weights, values);
}

}  // namespace fpt
