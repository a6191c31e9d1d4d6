#pragma once

#include <functional>
#include <string>

#include "fpt/autodiff.hpp"
#include "fpt/pyramid.hpp"
#include "fpt/rng.hpp"

namespace testing_support {

inline fpt::Tensor random_tensor(fpt::Shape shape, std::uint64_t seed, double lo = -1.0,
                                 double hi = 1.0) {
  fpt::Tensor t(shape);
  fpt::Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Overwrites every tensor (biases included, unlike Kaiming init) with uniform noise so
/// oracle comparisons exercise every term.
inline void randomize(fpt::FptParams& p, std::uint64_t seed, double scale = 0.5) {
  fpt::visit_tensors(p, [&](const std::string& name, fpt::Tensor& t) {
    fpt::Rng rng = fpt::Rng::stream(seed, name);
    for (double& v : t.data()) v = rng.uniform(-scale, scale);
  });
}

template <class P>
void randomize_block(P& p, std::uint64_t seed, double scale = 0.5) {
  fpt::visit_tensors(p, "block", [&](const std::string& name, fpt::Tensor& t) {
    fpt::Rng rng = fpt::Rng::stream(seed, name);
    for (double& v : t.data()) v = rng.uniform(-scale, scale);
  });
}

/// Value of a graph built on a grad-free tape.
inline fpt::Tensor evaluate(const std::function<fpt::Var(fpt::Tape&)>& build) {
  fpt::Tape tape(false);
  return build(tape).value();
}

}  // namespace testing_support
