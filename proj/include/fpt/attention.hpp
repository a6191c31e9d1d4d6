#pragma once

#include <span>

#include "fpt/autodiff.hpp"
#include "fpt/params.hpp"

namespace fpt {

enum class Similarity {
  dot,        // q . k
  euclidean,  // -||q - k||^2
};

struct AttentionOptions {
  Similarity similarity = Similarity::dot;
  /// Divide dot-product scores by sqrt(part width). Off by default.
  bool scale_dot = false;
};

enum class Role { query, key, value };

double sim_dot(std::span<const double> q, std::span<const double> k);
double sim_eud(std::span<const double> q, std::span<const double> k);

/// Position-wise linear map of a feature map (1x1 convolution with bias).
Var project(Var x, const ConvParams& p);
Var project_qkv(Var x, const ProjectionParams& p, Role which);

/// MoS mixture weights pi = softmax_n(w_n . mean_j k_j) from a projected key map [N,d,H,W].
/// Returns [N,1,1,parts]; one mixture per image, shared by all of its queries.
Var mixture_weights(Var keys, const MosParams& mos);

/// Per-part similarity of a projected query map [N,d,Hq,Wq] against a projected key map
/// [N,d,Hk,Wk]. Channels are split into `parts` contiguous slices. Returns the score block
/// [N,parts,Hq*Wq,Hk*Wk].
Var part_scores(Var queries, Var keys, std::size_t parts, const AttentionOptions& options);

/// Mixture of per-part softmaxes over keys: w[i][j] = sum_n pi_n softmax_j(s[n][i][.]).
/// scores [N,P,Pq,Pk], pi [N,1,1,P] -> [N,1,Pq,Pk].
Var mos_normalize(Var scores, Var pi);

/// out[i] = sum_j w[i][j] v[j]. weights [N,1,Pq,Pk] (rows summing to 1), values [N,1,Pk,d].
Var aggregate(Var weights, Var values);

/// Throws ContractError unless every row of a [N,1,rows,cols] weight tensor sums to 1 within
/// `tolerance`.
void require_normalized(const Tensor& weights, double tolerance, std::string_view where);

}  // namespace fpt
