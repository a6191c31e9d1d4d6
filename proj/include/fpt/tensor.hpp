#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fpt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible dimensions between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or pyramid layout.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf showed up where a finite value was required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation's precondition (non-scalar loss, bad probability...).
class ContractError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense NCHW array of doubles. Plain value type: copies are deep.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return full(Shape{}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }

  /// Value of a one-element tensor.
  double item() const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

void validate_shape(const Shape& shape);

/// Throws NumericalError naming `where` if any entry is NaN or Inf.
void require_finite(const Tensor& t, std::string_view where);

double max_abs_diff(const Tensor& a, const Tensor& b);

/// 64-bit FNV-1a over the little-endian IEEE-754 bytes of every entry.
std::uint64_t fnv1a_checksum(const Tensor& t);
std::uint64_t fnv1a_bytes(std::span<const unsigned char> bytes,
                          std::uint64_t state = 0xcbf29ce484222325ULL);

}  // namespace fpt
