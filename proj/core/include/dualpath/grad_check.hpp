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

#include <cstddef>
#include <cstdint>
#include <functional>

#include "dualpath/tape.hpp"

namespace dualpath {

// Builds a scalar on `tape` from the leaf `x`. Must be deterministic.
using ScalarFn = std::function<Var<double>(Tape<double>& tape, Var<double> x)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Probe at most this many coordinates, chosen by a seeded draw; 0 probes all.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probed = 0;
};

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) against
// backward(). Per-coordinate error is |a - n| / max(1, |a|, |n|); the maximum
// over probed coordinates is reported. eps must lie in [1e-7, 1e-3].
GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& point, const GradCheckOptions& options = {});

inline double grad_check(const ScalarFn& f, const Tensor<double>& point, double eps) {
  return grad_check(f, point, GradCheckOptions{eps}).max_rel_error;
}

}  // namespace dualpath
