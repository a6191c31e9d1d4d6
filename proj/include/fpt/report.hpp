#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fpt/accounting.hpp"
#include "fpt/autodiff.hpp"
#include "fpt/config_io.hpp"

namespace fpt {

struct LevelRecord {
  std::size_t level = 0;
  Shape shape;
  std::uint64_t checksum = 0;
};

struct Timing {
  std::size_t repeats = 0;
  double median_ms = 0.0;
  double min_ms = 0.0;
};

struct GradcheckTable {
  double h = 0.0;
  double tolerance = 0.0;
  std::vector<GradcheckEntry> entries;
};

struct AblationCosts {
  AddedCost st;
  AddedCost gt;
  AddedCost rt;

  bool params_ordered() const { return st.params > rt.params && gt.params > st.params; }
  bool flops_ordered() const { return st.flops > rt.flops && gt.flops > st.flops; }
};

struct RunReport {
  std::string command;
  RunConfig config;
  std::vector<LevelRecord> levels;
  std::optional<Timing> timing;
  std::optional<GradcheckTable> gradcheck;
  std::optional<ComplexityReport> complexity;
  std::optional<AblationCosts> ablation;
  bool passed = true;
  /// Names the violated invariant when `passed` is false.
  std::string failure;
};

/// One JSON object per line: a "run" header, then "level", "gradcheck", "complexity",
/// "ablation" and "timing" records as present, then a closing "result" record. Checksums are
/// 16-digit hex strings of the FNV-1a 64 hash over each tensor's little-endian f64 bytes.
std::string to_jsonl(const RunReport& report);

std::string hex64(std::uint64_t v);

}  // namespace fpt
