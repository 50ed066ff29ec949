// Copyright 2026 The dualpath Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "dualpath/tensor.hpp"

namespace dualpath {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// is alive and has not been cleared.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Gradient of a scalar loss with respect to every trainable leaf of a tape.
// Leaves that do not reach the loss hold exact zeros.
template <typename T>
class Gradients {
 public:
  const Tensor<T>& of(Var<T> leaf) const;
  bool contains(Var<T> leaf) const { return grads_.contains(leaf.id()); }

 private:
  friend class Tape<T>;
  std::unordered_map<std::uint32_t, Tensor<T>> grads_;
};

// Reverse-mode trace. Each primitive op appends one node holding its output
// value and an adjoint closure; backward() replays the closures in exact
// reverse order of recording. Nodes whose inputs carry no gradient record no
// closure, so untraced evaluation costs only the forward arithmetic.
template <typename T>
class Tape {
 public:
  // Adjoint of one node: reads forward values through the tape (`out` is the
  // node's own value) and adds into `input_grads[i]` for every input that
  // carries gradient (null otherwise).
  using BackwardFn = std::function<void(const Tape& tape, const Tensor<T>& out, const Tensor<T>& grad_out,
                                        std::span<Tensor<T>* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable input; backward() reports its gradient.
  Var<T> leaf(Tensor<T> value);
  // Input that never receives gradient.
  Var<T> constant(Tensor<T> value);

  // Used by primitive ops. `fn` is dropped when no input needs gradient.
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn);

  const Tensor<T>& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  Gradients<T> backward(Var<T> loss) const;

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::uint32_t> inputs;
    BackwardFn fn;
    bool needs_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace dualpath
