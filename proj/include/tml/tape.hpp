/**
 * Copyright 2026 The tripletml Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tml/error.hpp"
#include "tml/tensor.hpp"

namespace tml {

/// Handle to a value recorded on a GradTape.
struct Var {
  std::size_t id = 0;
};

/// Records primitive ops in execution order so gradients can be replayed in
/// reverse. Single writer: one tape per training step and thread.
///
/// Parameters are registered by reference and must outlive the tape; the
/// same parameter registered once and reused by several ops is how weight
/// tying is expressed (gradients accumulate into one slot).
template <typename Scalar>
class GradTape {
 public:
  using Backward = std::function<void(GradTape&, const Tensor<Scalar>& grad_out)>;

  Var constant(Tensor<Scalar> value) { return push(std::move(value), nullptr, false, {}, "constant"); }

  /// Constant held by reference; `value` must outlive the tape.
  Var constant_ref(const Tensor<Scalar>& value) { return push(Tensor<Scalar>(), &value, false, {}, "constant"); }

  Var parameter(const Tensor<Scalar>& value) {
    Var v = push(Tensor<Scalar>(), &value, true, {}, "parameter");
    parameters_.push_back(v);
    return v;
  }

  /// Appends an op. Its output needs a gradient iff any input does; the
  /// backward closure is dropped otherwise.
  Var record(Tensor<Scalar> value, std::initializer_list<Var> inputs, Backward backward, const char* name) {
    bool needs_grad = false;
    for (Var in : inputs) needs_grad = needs_grad || nodes_.at(in.id).requires_grad;
    return push(std::move(value), nullptr, needs_grad, needs_grad ? std::move(backward) : Backward{}, name);
  }

  const Tensor<Scalar>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.owned;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulator for v, zero-initialized on first touch.
  Tensor<Scalar>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.grad) n.grad.emplace(value(v).shape(), Scalar(0));
    return *n.grad;
  }

  bool has_grad(Var v) const { return nodes_.at(v.id).grad.has_value(); }

  const std::vector<Var>& parameters() const noexcept { return parameters_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).name; }

  // Branch tracking lets the finite-difference checker detect when a
  // perturbation moves an input across a relu/argmax/hinge decision.
  void track_branches(bool on) { tracking_ = on; }
  bool tracking_branches() const noexcept { return tracking_; }
  void note_branch(std::uint64_t v) {
    signature_ ^= v + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }
  std::uint64_t branch_signature() const noexcept { return signature_; }

  /// Op ids visited by the last backward() call, in visit order.
  const std::vector<std::size_t>& backward_trace() const noexcept { return trace_; }

  template <typename S>
  friend std::vector<Tensor<S>> backward(GradTape<S>& tape, Var loss);

 private:
  struct Node {
    Tensor<Scalar> owned;
    const Tensor<Scalar>* ref = nullptr;
    bool requires_grad = false;
    Backward backward;
    std::optional<Tensor<Scalar>> grad;
    std::string name;
  };

  Var push(Tensor<Scalar> value, const Tensor<Scalar>* ref, bool requires_grad, Backward backward,
           const char* name) {
    nodes_.push_back(Node{std::move(value), ref, requires_grad, std::move(backward), std::nullopt, name});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Var> parameters_;
  std::vector<std::size_t> trace_;
  bool tracking_ = false;
  std::uint64_t signature_ = 0;
};

/// Reverse sweep from a scalar loss. Returns one gradient per registered
/// parameter, in registration order; parameters the loss does not depend on
/// get zeros.
template <typename Scalar>
std::vector<Tensor<Scalar>> backward(GradTape<Scalar>& tape, Var loss) {
  if (tape.value(loss).size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(tape.value(loss).shape()));
  }
  for (auto& n : tape.nodes_) n.grad.reset();
  tape.trace_.clear();
  tape.grad(loss).fill(Scalar(1));
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& node = tape.nodes_[id];
    if (!node.backward || !node.grad) continue;
    tape.trace_.push_back(id);
    // nodes_ is never resized during the sweep, so *node.grad stays valid.
    node.backward(tape, *node.grad);
  }
  std::vector<Tensor<Scalar>> grads;
  grads.reserve(tape.parameters_.size());
  for (Var p : tape.parameters_) grads.push_back(tape.grad(p));
  return grads;
}

}  // namespace tml
