#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fpt/pyramid.hpp"

namespace fpt {

/// Malformed or unreadable weight file. The message carries the byte offset where known.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Binary layout, all integers little-endian:
///
///   "FPTW"  u16 version (1)  u8 endianness (1 = little)  u8 reserved (0)  u32 entry count
///   per entry:  u32 name length, UTF-8 name, u8 dtype (1 = f64), u8 rank, u32 dims[rank],
///               u64 payload offset from the start of the file, u64 payload byte length
///   payload:    8-byte aligned, entries back to back in table order, IEEE-754 f64 values
struct WeightEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::uint64_t offset = 0;
  std::vector<double> values;

  friend bool operator==(const WeightEntry&, const WeightEntry&) = default;
};

struct WeightContainer {
  static constexpr std::uint16_t kVersion = 1;

  std::vector<WeightEntry> entries;

  const WeightEntry* find(const std::string& name) const;

  /// Serializes and assigns payload offsets.
  std::vector<unsigned char> to_bytes();
  static WeightContainer from_bytes(std::span<const unsigned char> bytes);

  friend bool operator==(const WeightContainer&, const WeightContainer&) = default;
};

WeightContainer collect_weights(const FptParams& params);
/// Copies every tensor in by name. Names and shapes must match the network exactly.
void apply_weights(const WeightContainer& weights, FptParams& params);

void save_weights(const std::string& path, WeightContainer& weights);
WeightContainer load_weights(const std::string& path);

}  // namespace fpt
