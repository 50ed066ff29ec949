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

#include "dualpath/tape.hpp"

#include <optional>
#include <sstream>

namespace dualpath {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << " x ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
const Tensor<T>& Gradients<T>::of(Var<T> leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw UsageError("no gradient recorded for this variable (not a trainable leaf)");
  return it->second;
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  if (!value.all_finite()) throw NumericError("non-finite value passed as tape leaf");
  Node node;
  node.value = std::move(value);
  node.needs_grad = true;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  if (!value.all_finite()) throw NumericError("non-finite value passed as tape constant");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw UsageError("op mixes variables from different tapes");
    node.inputs.push_back(in.id());
    node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
  }
  if (node.needs_grad) node.fn = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
Gradients<T> Tape<T>::backward(Var<T> loss) const {
  if (&loss.tape() != this) throw UsageError("loss belongs to a different tape");
  const Tensor<T>& loss_value = nodes_[loss.id()].value;
  if (loss_value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss_value.shape()));
  }

  std::vector<std::optional<Tensor<T>>> grads(loss.id() + 1);
  grads[loss.id()] = Tensor<T>(loss_value.shape(), T(1));

  std::vector<Tensor<T>*> input_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.fn || !grads[id]) continue;
    input_grads.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const std::uint32_t in = node.inputs[i];
      if (!nodes_[in].needs_grad) continue;
      if (!grads[in]) grads[in] = Tensor<T>(nodes_[in].value.shape(), T(0));
      input_grads[i] = &*grads[in];
    }
    node.fn(*this, node.value, *grads[id], input_grads);
  }

  Gradients<T> result;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].is_leaf) continue;
    if (id < grads.size() && grads[id]) {
      result.grads_.emplace(static_cast<std::uint32_t>(id), std::move(*grads[id]));
    } else {
      result.grads_.emplace(static_cast<std::uint32_t>(id), Tensor<T>(nodes_[id].value.shape(), T(0)));
    }
  }
  return result;
}

template class Tape<float>;
template class Tape<double>;
template class Gradients<float>;
template class Gradients<double>;

}  // namespace dualpath
