#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fpt/tensor.hpp"

namespace fpt {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a gradient rule sees. `grad_in[k]` is null when input k needs no gradient;
/// rules accumulate (+=) into the non-null ones.
struct BackwardArgs {
  const Tensor& grad_out;
  const Tensor& out;
  std::span<const Tensor* const> in;
  std::span<Tensor* const> grad_in;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class GradStore {
 public:
  /// Gradient of a recorded value. Zeros when the loss does not depend on it.
  const Tensor& operator[](Var v) const;
  /// Gradient of a tensor bound with Tape::parameter().
  const Tensor& of(const Tensor& source) const;
  bool has(const Tensor& source) const { return sources_.contains(&source); }

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::unordered_map<const Tensor*, std::size_t> sources_;
};

/// Reverse-mode recorder. Nodes are appended in evaluation order, so the node list is
/// always topologically sorted; backward() sweeps it in reverse.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Binds an externally owned tensor as a leaf. The same tensor bound twice yields the same
  /// Var, and its gradient can later be fetched with GradStore::of(source).
  Var parameter(const Tensor& source);

  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs,
             BackwardFn backward);

  GradStore backward(Var loss) const;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(Var v) const { return nodes_[v.id()].op; }

  /// Test hook: multiplies every gradient contribution produced by rules of `op` by `factor`.
  /// Used to show that gradient checks catch a wrong rule.
  void inject_fault(std::string op, double factor);

 private:
  friend class Var;

  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> sources_;
  std::optional<std::pair<std::string, double>> fault_;
};

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h);

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct GradcheckEntry {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckResult {
  std::vector<GradcheckEntry> entries;

  double worst() const;
  bool passed(double tolerance) const { return worst() <= tolerance; }
  /// Entries whose error exceeds the tolerance.
  std::vector<std::string> failing(double tolerance) const;
};

/// Builds the scalar loss on a fresh tape; every checked tensor must be bound through
/// Tape::parameter().
using LossBuilder = std::function<Var(Tape&)>;

struct GradcheckOptions {
  double h = 1e-5;
  std::optional<std::pair<std::string, double>> fault;
};

/// Compares analytic gradients with central differences for each listed tensor.
/// Error per tensor is max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|): the worst
/// coordinate error relative to that tensor's gradient scale.
GradcheckResult gradcheck(const LossBuilder& build, std::span<const NamedTensor> inputs,
                          const GradcheckOptions& options = {});

}  // namespace fpt
