#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpt/attention.hpp"
#include "fpt/autodiff.hpp"
#include "fpt/params.hpp"

namespace fpt {

enum class PyramidKind {
  instance,  // bottom-up pyramid, strides grow level to level; global grounding
  pixel,     // unscathed pyramid, one resolution; locality-constrained grounding
};

enum class Topology {
  all_pairs,  // every level interacts with every other level
  adjacent,   // only immediate neighbours
};

enum class Mode { train, eval };

struct DropBlockConfig {
  std::size_t block_size = 5;
  double keep_prob = 0.9;

  friend bool operator==(const DropBlockConfig&, const DropBlockConfig&) = default;
};

struct FptConfig {
  PyramidKind kind = PyramidKind::instance;
  std::size_t d_model = 256;
  std::size_t n_st = 2;
  std::size_t n_gt = 4;
  /// Window side of locality-constrained grounding, used in pixel mode.
  std::optional<std::size_t> square_size = 5;
  DropBlockConfig dropblock;
  Topology topology = Topology::all_pairs;
  Similarity st_similarity = Similarity::dot;
  Similarity gt_similarity = Similarity::euclidean;
  bool scale_dot = false;
  bool use_st = true;
  bool use_gt = true;
  bool use_rt = true;

  /// Hyperparameters for the two deployment settings: DropBlock (5, 0.9) for instance-level
  /// pyramids and (3, 0.9) for pixel-level ones; N = 2 for ST and 4 for GT in both.
  static FptConfig defaults(PyramidKind kind);

  bool locality() const { return kind == PyramidKind::pixel && square_size.has_value(); }
  void validate() const;

  friend bool operator==(const FptConfig&, const FptConfig&) = default;
};

struct LevelSpec {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  friend bool operator==(const LevelSpec&, const LevelSpec&) = default;
};

struct UfpSpec {
  LevelSpec input;
  std::vector<std::size_t> kernels{1, 7, 15, 31};

  friend bool operator==(const UfpSpec&, const UfpSpec&) = default;
};

/// Shape of the network input. Either explicit pyramid levels (finest first) or a single map
/// expanded into an unscathed pyramid.
struct PyramidSpec {
  std::size_t batch = 1;
  std::vector<LevelSpec> levels;
  std::optional<UfpSpec> ufp;

  /// Levels as the transformers see them (UFP levels have d_model channels).
  std::vector<LevelSpec> resolved(std::size_t d_model) const;
  void validate() const;

  friend bool operator==(const PyramidSpec&, const PyramidSpec&) = default;
};

struct PyramidLevel {
  Tensor features;
  std::size_t stride = 1;
};

/// Levels ordered fine to coarse; each stride is an integer multiple of the previous one.
struct FeaturePyramid {
  std::vector<PyramidLevel> levels;

  void validate() const;
};

/// Strides implied by a level list; throws ConfigError unless every step is an integer
/// factor >= 1 shared by height and width (>= 2 when `strictly_increasing`).
std::vector<std::size_t> stride_chain(std::span<const LevelSpec> levels, bool strictly_increasing);

/// Deterministic unit-normal feature maps. Requires strictly increasing strides.
FeaturePyramid synth_pyramid(std::uint64_t seed, std::span<const LevelSpec> levels,
                             std::size_t batch = 1);

/// Global-convolution block of an unscathed pyramid: (k x 1 then 1 x k) + (1 x k then k x 1),
/// or a single 1x1 projection when k == 1.
struct GcnBlock {
  std::size_t kernel = 1;
  ConvParams left_col;   // k x 1, in -> d (the 1 x 1 projection when k == 1)
  ConvParams left_row;   // 1 x k, d -> d
  ConvParams right_row;  // 1 x k, in -> d
  ConvParams right_col;  // k x 1, d -> d
};

struct UfpParams {
  std::vector<GcnBlock> blocks;

  static UfpParams kaiming(std::size_t in_channels, std::span<const std::size_t> kernels,
                           std::size_t d_model, std::uint64_t seed);
};

/// One level per kernel size, all at the input's resolution, each with d_model channels.
std::vector<Var> build_ufp(Var x, const UfpParams& p);

/// Train: zero block_size x block_size squares around Bernoulli(gamma) centres and rescale the
/// survivors by total/kept. Eval, or keep_prob == 1: identity.
Var dropblock(Var x, const DropBlockConfig& cfg, Mode mode, std::uint64_t seed);
/// The multiplicative mask dropblock() applies in train mode, rescaling included.
Tensor dropblock_mask(const Shape& shape, const DropBlockConfig& cfg, std::uint64_t seed);

/// A cross-scale edge: `target` receives the transformer output, `source` supplies keys and
/// values (GT: source coarser than target; RT: source finer than target).
using Edge = std::pair<std::size_t, std::size_t>;

std::vector<Edge> grounding_edges(std::size_t levels, Topology topology);
std::vector<Edge> rendering_edges(std::size_t levels, Topology topology);

struct FptParams {
  std::optional<UfpParams> ufp;
  /// 1x1 projection to d_model for levels whose width differs.
  std::vector<std::optional<ConvParams>> lateral;
  std::vector<StParams> st;
  std::map<Edge, GtParams> gt;
  std::map<Edge, RtParams> rt;
  std::vector<ConvParams> reduce;

  static FptParams kaiming(const FptConfig& cfg, const PyramidSpec& spec, std::uint64_t seed);
};

/// Visits every tensor of the network with a stable dotted name, e.g. "gt.0<-2.q.weight".
template <class P, class Fn>
void visit_tensors(P& p, Fn&& fn)
  requires std::is_same_v<std::remove_const_t<P>, FptParams>
{
  if (p.ufp) {
    for (auto& block : p.ufp->blocks) {
      const std::string base = "ufp.k" + std::to_string(block.kernel);
      visit_tensors(block.left_col, base + ".left_col", fn);
      if (block.kernel == 1) continue;
      visit_tensors(block.left_row, base + ".left_row", fn);
      visit_tensors(block.right_row, base + ".right_row", fn);
      visit_tensors(block.right_col, base + ".right_col", fn);
    }
  }
  for (std::size_t l = 0; l < p.lateral.size(); ++l) {
    if (p.lateral[l]) visit_tensors(*p.lateral[l], "lateral." + std::to_string(l), fn);
  }
  for (std::size_t l = 0; l < p.st.size(); ++l) visit_tensors(p.st[l], "st." + std::to_string(l), fn);
  for (auto& [edge, gt] : p.gt) {
    visit_tensors(gt, "gt." + std::to_string(edge.first) + "<-" + std::to_string(edge.second), fn);
  }
  for (auto& [edge, rt] : p.rt) {
    visit_tensors(rt, "rt." + std::to_string(edge.first) + "<-" + std::to_string(edge.second), fn);
  }
  for (std::size_t l = 0; l < p.reduce.size(); ++l) {
    visit_tensors(p.reduce[l], "reduce." + std::to_string(l), fn);
  }
}

/// Concatenates [original, ST, GT from each coarser level, RT from each finer level] per level,
/// reduces to d_model with a 3x3 conv and applies DropBlock in train mode. Spatial sizes are
/// preserved level by level.
std::vector<Var> fpt_forward(std::span<const Var> levels, const FptParams& params,
                             const FptConfig& cfg, Mode mode, std::uint64_t seed);

/// Input tensors for a PyramidSpec: the pyramid levels, or the single map of a UFP spec.
std::vector<Tensor> synth_input(const PyramidSpec& spec, std::uint64_t seed);

/// Binds `input` (via Tape::parameter, so it can be differentiated), builds the UFP when the
/// spec asks for one and runs fpt_forward.
std::vector<Var> forward_network(Tape& tape, const FptConfig& cfg, const PyramidSpec& spec,
                                 const FptParams& params, const std::vector<Tensor>& input,
                                 Mode mode, std::uint64_t seed);

}  // namespace fpt
