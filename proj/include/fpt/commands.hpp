#pragma once

#include <optional>
#include <string>
#include <utility>

#include "fpt/report.hpp"
#include "fpt/weights_io.hpp"

namespace fpt {

/// Parameters for a run: loaded from `weights` when given, Kaiming-initialized from the seed
/// otherwise.
FptParams make_params(const RunConfig& cfg, const std::optional<std::string>& weights = {});

/// Synthesizes the input pyramid, runs the network and records each level's shape and checksum.
RunReport cmd_forward(const RunConfig& cfg, const std::optional<std::string>& weights = {});

/// Central differences against the tape for every parameter tensor and every input map, on the
/// loss sum(output * R) with fixed random R. Refuses train mode. `fault` corrupts one gradient
/// rule (op name, factor) to demonstrate the check catches it.
RunReport cmd_gradcheck(const RunConfig& cfg,
                        const std::optional<std::pair<std::string, double>>& fault = {});

/// Parameter and FLOP counts, plus the added cost of each transformer alone over a network
/// with none.
RunReport cmd_count(const RunConfig& cfg);

/// Times cfg.bench_repeats forward passes. Fails if any two passes disagree on a checksum.
RunReport cmd_bench(const RunConfig& cfg, const std::optional<std::string>& weights = {});

/// Applies cfg.threads to the OpenMP kernels (0 leaves the current setting).
void apply_threads(const RunConfig& cfg);

}  // namespace fpt
