#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "fpt/pyramid.hpp"

namespace fpt {

/// Everything a CLI run needs. Serialized as YAML:
///
///   seed: 7
///   mode: eval              # train | eval
///   threads: 0              # 0 keeps the OpenMP default
///   fpt:
///     kind: instance        # instance | pixel
///     d_model: 256
///     n_st: 2
///     n_gt: 4
///     square_size: 5        # ~ disables the window in pixel mode
///     dropblock: {block_size: 5, keep_prob: 0.9}
///     topology: all_pairs   # all_pairs | adjacent
///     st_similarity: dot    # dot | euclidean
///     gt_similarity: euclidean
///     scale_dot: false
///     use_st: true
///     use_gt: true
///     use_rt: true
///   pyramid:
///     batch: 1
///     levels:               # finest first
///       - {channels: 256, height: 20, width: 20}
///     # or instead of levels:
///     # ufp: {input: {channels: 64, height: 16, width: 16}, kernels: [1, 7, 15, 31]}
///   gradcheck: {h: 1.0e-05, tol: 1.0e-05}
///   bench: {repeats: 3}
///
/// Missing keys take the defaults of RunConfig (the fpt section starts from
/// FptConfig::defaults(kind)). Unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 7;
  Mode mode = Mode::eval;
  std::size_t threads = 0;
  FptConfig fpt = FptConfig::defaults(PyramidKind::instance);
  PyramidSpec pyramid;
  double gradcheck_h = 1e-5;
  double gradcheck_tol = 1e-5;
  std::size_t bench_repeats = 3;

  /// Three 256-channel levels at 20, 10 and 5 pixels, instance defaults.
  static RunConfig defaults();
  /// Three 8-channel levels at 8, 4 and 2 pixels with d_model 8; small enough for gradcheck.
  static RunConfig tiny();

  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Throws ConfigError naming the line and field on malformed input.
RunConfig parse_config(std::string_view yaml);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

std::string to_string(Mode mode);
std::string to_string(PyramidKind kind);
std::string to_string(Topology topology);
std::string to_string(Similarity similarity);
Mode parse_mode(std::string_view text);

}  // namespace fpt
