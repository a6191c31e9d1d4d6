#include "fpt/weights_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace fpt {

namespace {

constexpr unsigned char kMagic[4] = {'F', 'P', 'T', 'W'};
constexpr std::uint8_t kLittleEndian = 1;
constexpr std::uint8_t kFloat64 = 1;

class Writer {
 public:
  template <std::unsigned_integral T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void put(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put(std::span<const unsigned char> raw) { bytes.insert(bytes.end(), raw.begin(), raw.end()); }

  std::vector<unsigned char> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  template <std::unsigned_integral T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{bytes_[pos_ + i]} << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const unsigned char> raw(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const { fail_at(pos_, what); }

  [[noreturn]] static void fail_at(std::uint64_t offset, const std::string& what) {
    throw FormatError("weights: " + what + " at byte offset " + std::to_string(offset));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what);
  }

  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint32_t>& dims) {
  std::uint64_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

}  // namespace

const WeightEntry* WeightContainer::find(const std::string& name) const {
  for (const WeightEntry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::vector<unsigned char> WeightContainer::to_bytes() {
  std::set<std::string> names;
  std::uint64_t table = 4 + 2 + 1 + 1 + 4;
  for (const WeightEntry& e : entries) {
    if (e.name.empty()) throw FormatError("weights: empty tensor name");
    if (!names.insert(e.name).second) throw FormatError("weights: duplicate name '" + e.name + "'");
    if (e.dims.size() > 255) throw FormatError("weights: rank too large for '" + e.name + "'");
    if (element_count(e.dims) != e.values.size()) {
      throw FormatError("weights: '" + e.name + "' has " + std::to_string(e.values.size()) +
                        " values for its shape");
    }
    table += 4 + e.name.size() + 1 + 1 + 4 * e.dims.size() + 8 + 8;
  }
  std::uint64_t offset = (table + 7) / 8 * 8;
  for (WeightEntry& e : entries) {
    e.offset = offset;
    offset += 8 * e.values.size();
  }

  Writer w;
  w.put(std::span<const unsigned char>(kMagic));
  w.put(kVersion);
  w.put(kLittleEndian);
  w.put(std::uint8_t{0});
  w.put(static_cast<std::uint32_t>(entries.size()));
  for (const WeightEntry& e : entries) {
    w.put(static_cast<std::uint32_t>(e.name.size()));
    w.put(std::span(reinterpret_cast<const unsigned char*>(e.name.data()), e.name.size()));
    w.put(kFloat64);
    w.put(static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint32_t d : e.dims) w.put(d);
    w.put(e.offset);
    w.put(static_cast<std::uint64_t>(8 * e.values.size()));
  }
  w.bytes.resize((w.bytes.size() + 7) / 8 * 8, 0);
  for (const WeightEntry& e : entries) {
    for (double v : e.values) w.put(v);
  }
  return std::move(w.bytes);
}

WeightContainer WeightContainer::from_bytes(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  const auto magic = r.raw(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    Reader::fail_at(0, "bad magic, not an FPTW file");
  }
  if (const auto version = r.get<std::uint16_t>("version"); version != kVersion) {
    Reader::fail_at(4, "unsupported version " + std::to_string(version));
  }
  if (r.get<std::uint8_t>("endianness flag") != kLittleEndian) {
    Reader::fail_at(6, "unsupported endianness flag");
  }
  r.get<std::uint8_t>("reserved byte");
  const auto count = r.get<std::uint32_t>("entry count");

  struct Extent {
    std::uint64_t begin, end;
    std::size_t entry;
  };
  std::vector<Extent> extents;
  std::set<std::string> names;
  WeightContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    WeightEntry e;
    const auto len = r.get<std::uint32_t>("name length");
    const auto name = r.raw(len, "name");
    e.name.assign(name.begin(), name.end());
    if (e.name.empty()) Reader::fail_at(at, "empty tensor name");
    if (!names.insert(e.name).second) Reader::fail_at(at, "duplicate name '" + e.name + "'");
    const std::size_t dtype_at = r.pos();
    if (r.get<std::uint8_t>("dtype") != kFloat64) {
      Reader::fail_at(dtype_at, "unsupported dtype for '" + e.name + "'");
    }
    const auto rank = r.get<std::uint8_t>("rank");
    for (std::uint8_t k = 0; k < rank; ++k) e.dims.push_back(r.get<std::uint32_t>("dims"));
    const std::size_t offset_at = r.pos();
    e.offset = r.get<std::uint64_t>("offset");
    const auto length = r.get<std::uint64_t>("byte length");
    if (length != 8 * element_count(e.dims)) {
      Reader::fail_at(offset_at, "byte length of '" + e.name + "' disagrees with its shape");
    }
    if (e.offset > bytes.size() || bytes.size() - e.offset < length) {
      Reader::fail_at(offset_at, "payload of '" + e.name + "' runs past end of file");
    }
    extents.push_back({e.offset, e.offset + length, c.entries.size()});
    c.entries.push_back(std::move(e));
  }
  const std::size_t table_end = r.pos();

  std::sort(extents.begin(), extents.end(),
            [](const Extent& a, const Extent& b) { return a.begin < b.begin; });
  for (std::size_t i = 0; i < extents.size(); ++i) {
    if (extents[i].begin < table_end && extents[i].end > extents[i].begin) {
      Reader::fail_at(extents[i].begin,
                      "payload of '" + c.entries[extents[i].entry].name + "' overlaps the table");
    }
    if (i > 0 && extents[i].begin < extents[i - 1].end) {
      Reader::fail_at(extents[i].begin, "payload of '" + c.entries[extents[i].entry].name +
                                            "' overlaps another tensor");
    }
  }

  for (WeightEntry& e : c.entries) {
    Reader payload(bytes.subspan(e.offset));
    e.values.resize(element_count(e.dims));
    for (double& v : e.values) v = std::bit_cast<double>(payload.get<std::uint64_t>("payload"));
  }
  return c;
}

WeightContainer collect_weights(const FptParams& params) {
  WeightContainer c;
  visit_tensors(params, [&](const std::string& name, const Tensor& t) {
    const Shape& s = t.shape();
    const auto values = t.data();
    c.entries.push_back({name,
                         {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
                         0,
                         {values.begin(), values.end()}});
  });
  return c;
}

void apply_weights(const WeightContainer& weights, FptParams& params) {
  std::size_t used = 0;
  visit_tensors(params, [&](const std::string& name, Tensor& t) {
    const WeightEntry* e = weights.find(name);
    if (e == nullptr) throw FormatError("weights: missing tensor '" + name + "'");
    const Shape& s = t.shape();
    const std::vector<std::uint32_t> expected{
        static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
        static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
    if (e->dims != expected) {
      throw FormatError("weights: '" + name + "' has the wrong shape for this network, expected " +
                        s.str());
    }
    t = Tensor(s, e->values);
    ++used;
  });
  if (used != weights.entries.size()) {
    throw FormatError("weights: file holds " + std::to_string(weights.entries.size()) +
                      " tensors, the network uses " + std::to_string(used));
  }
}

void save_weights(const std::string& path, WeightContainer& weights) {
  const auto bytes = weights.to_bytes();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("weights: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("weights: write to '" + path + "' failed");
}

WeightContainer load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("weights: cannot open '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  try {
    return WeightContainer::from_bytes(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace fpt
