#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "fpt/pyramid.hpp"

namespace fpt {

/// One multiply, add, subtract, divide or exp is one FLOP (a multiply-accumulate is two).
/// Convolutions count every tap including zero padding, plus one add per output for the bias.
/// Softmax costs four per entry: max shift, exp, running sum, divide. DropBlock is not counted.
inline constexpr std::string_view kFlopConvention =
    "mul=1,add=1,exp=1,div=1; conv=2*Cout*Cin*kh*kw*Ho*Wo+Cout*Ho*Wo; "
    "softmax=4/entry; dot=2d, neg_sq_dist=3d per pair; dropblock excluded";

inline constexpr const char* kComponents[] = {"ufp", "lateral", "st", "gt", "lgt", "rt", "reduce"};

struct ComplexityReport {
  std::map<std::string, std::uint64_t> params;
  std::map<std::string, std::uint64_t> flops;
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;
  std::string flop_convention{kFlopConvention};

  /// Throws ContractError when a total differs from the sum of its components.
  void validate() const;

  friend bool operator==(const ComplexityReport&, const ComplexityReport&) = default;
};

ComplexityReport count_params(const FptConfig& cfg, const PyramidSpec& spec);
ComplexityReport count_flops(const FptConfig& cfg, const PyramidSpec& spec);
/// Both of the above in one report.
ComplexityReport count_complexity(const FptConfig& cfg, const PyramidSpec& spec);

enum class Block { st, gt, rt };

struct AddedCost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

/// Cost of a network using only `block`, minus the same network with no transformer at all
/// (whose reduce conv sees the original maps alone).
AddedCost added_cost(const FptConfig& cfg, const PyramidSpec& spec, Block block);

/// Four 256-channel levels at 32, 16, 8 and 4 pixels.
PyramidSpec default_counting_spec();

namespace flops {

std::uint64_t conv_params(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                          bool bias = true);
std::uint64_t conv(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                   std::size_t out_h, std::size_t out_w, bool bias = true);
std::uint64_t softmax(std::size_t entries);
/// GAP of keys at `key_positions`, logits against the N mixture vectors, softmax over N.
std::uint64_t mixture_weights(std::size_t d, std::size_t key_positions, std::size_t parts);
/// Per image: projections, mixture weights, similarity, MoS normalization and aggregation.
std::uint64_t global_attention(std::size_t d, std::size_t parts, std::size_t queries,
                               std::size_t keys, Similarity similarity, bool scale_dot);
std::uint64_t window_attention(std::size_t d, std::size_t parts, std::size_t queries,
                               std::size_t keys, std::size_t square_size);
std::uint64_t rendering(std::size_t channels, std::size_t high_h, std::size_t high_w,
                        std::size_t low_h, std::size_t low_w);

}  // namespace flops

}  // namespace fpt
