#pragma once

#include <cstddef>

#include "fpt/attention.hpp"
#include "fpt/autodiff.hpp"
#include "fpt/params.hpp"

namespace fpt {

/// Receives the normalized attention weights of the last transformer call:
/// [N,1,Pq,Pk] for global attention, [N,1,Pq,square_size^2] for the windowed variant.
struct AttentionProbe {
  Tensor weights;
};

/// Non-local attention inside one map with MoS normalization. Output is [N, d_out, H, W].
Var self_transformer(Var x, const StParams& p, const AttentionOptions& options = {},
                     AttentionProbe* probe = nullptr);

/// Queries from the fine map, keys/values from the coarse map, negative squared euclidean
/// similarity by default. Output has the fine map's spatial size.
Var grounding_transformer(Var fine, Var coarse, const GtParams& p,
                          const AttentionOptions& options = {Similarity::euclidean},
                          AttentionProbe* probe = nullptr);

/// Grounding restricted to a square_size x square_size window of the coarse map centred
/// under each fine query. Window cells outside the coarse map hold zero key/value vectors.
/// Only euclidean similarity is supported.
Var locality_grounding_transformer(Var fine, Var coarse, const GtParams& p,
                                   AttentionProbe* probe = nullptr);

/// Integer down-sampling ratio between the low-level (K/V) and high-level (Q) maps.
std::size_t rendering_stride(const Shape& high, const Shape& low);

/// Bottom-up rendering: the GAP of the low-level map reweights Q's channels, Q is refined
/// by a 3x3 conv, V is brought to Q's scale by a stride-r 3x3 conv, the two are summed
/// and fused by a final 3x3 conv. Output has the high-level map's shape.
Var rendering_transformer(Var high, Var low, const RtParams& p);

}  // namespace fpt
