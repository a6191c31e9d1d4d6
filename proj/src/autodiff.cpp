#include "fpt/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace fpt {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("use of an unbound Var");
  return tape_->nodes_[id_].value;
}

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  require_finite(value, "leaf");
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Tensor& source) {
  if (auto it = sources_.find(&source); it != sources_.end()) return Var(this, it->second);
  Var v = leaf(source, true);
  nodes_[v.id()].op = "parameter";
  sources_.emplace(&source, v.id());
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs,
                 BackwardFn backward) {
  require_finite(value, op);
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw ContractError(std::string(op) + ": input from another tape");
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::inject_fault(std::string op, double factor) {
  fault_ = std::make_pair(std::move(op), factor);
}

GradStore Tape::backward(Var loss) const {
  if (loss.tape_ != this) throw ContractError("backward: loss recorded on another tape");
  const Node& root = nodes_[loss.id_];
  if (root.value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got " + root.value.shape().str());
  }

  GradStore store;
  store.grads_.resize(nodes_.size());
  std::vector<bool> present(nodes_.size(), false);
  auto ensure = [&](std::size_t id) -> Tensor& {
    if (!present[id]) {
      store.grads_[id] = Tensor::zeros(nodes_[id].value.shape());
      present[id] = true;
    }
    return store.grads_[id];
  };
  ensure(loss.id_)[0] = 1.0;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!present[id] || !node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      in_grads.push_back(nodes_[in].requires_grad ? &ensure(in) : nullptr);
    }

    const bool faulty = fault_ && fault_->first == node.op;
    std::vector<Tensor> before;
    if (faulty) {
      for (Tensor* g : in_grads) before.push_back(g ? *g : Tensor());
    }
    node.backward(BackwardArgs{store.grads_[id], node.value, in_values, in_grads});
    if (faulty) {
      for (std::size_t k = 0; k < in_grads.size(); ++k) {
        if (in_grads[k] == nullptr) continue;
        auto g = in_grads[k]->data();
        auto b = before[k].data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = b[i] + fault_->second * (g[i] - b[i]);
      }
    }
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].requires_grad) ensure(id);
  }
  store.sources_ = sources_;
  return store;
}

const Tensor& GradStore::operator[](Var v) const {
  if (v.id() >= grads_.size() || !v.requires_grad()) {
    throw ContractError("no gradient tracked for this value");
  }
  return grads_[v.id()];
}

const Tensor& GradStore::of(const Tensor& source) const {
  auto it = sources_.find(&source);
  if (it == sources_.end()) throw ContractError("tensor was not bound as a parameter");
  return grads_[it->second];
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double GradcheckResult::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

std::vector<std::string> GradcheckResult::failing(double tolerance) const {
  std::vector<std::string> names;
  for (const auto& e : entries) {
    if (!(e.max_rel_error <= tolerance)) names.push_back(e.name);
  }
  return names;
}

GradcheckResult gradcheck(const LossBuilder& build, std::span<const NamedTensor> inputs,
                          const GradcheckOptions& options) {
  if (!(options.h > 0.0)) throw ContractError("gradcheck: step must be positive");

  Tape tape(true);
  if (options.fault) tape.inject_fault(options.fault->first, options.fault->second);
  const Var loss = build(tape);
  const GradStore grads = tape.backward(loss);

  auto evaluate = [&]() {
    Tape probe(false);
    return build(probe).value().item();
  };

  // Floor on the error denominator, so a gradient that is identically zero is judged by
  // its absolute finite-difference noise.
  constexpr double kScaleFloor = 1e-6;

  GradcheckResult result;
  for (const NamedTensor& input : inputs) {
    Tensor& t = *input.tensor;
    const Tensor analytic = grads.has(t) ? grads.of(t) : Tensor::zeros(t.shape());
    double scale = kScaleFloor;
    double worst_abs = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + options.h;
      const double up = evaluate();
      t[i] = saved - options.h;
      const double down = evaluate();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * options.h);
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
      worst_abs = std::max(worst_abs, std::abs(numeric - analytic[i]));
    }
    result.entries.push_back({input.name, t.numel(), worst_abs / scale, worst_abs});
  }
  return result;
}

}  // namespace fpt
