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

#include "dualpath/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dualpath/rng.hpp"

namespace dualpath {
namespace {

double evaluate(const ScalarFn& f, const Tensor<double>& x) {
  Tape<double> tape;
  const Var<double> leaf = tape.leaf(x);
  const double v = f(tape, leaf).value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value at probe point");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& point, const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw UsageError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  Tensor<double> analytic;
  {
    Tape<double> tape;
    const Var<double> leaf = tape.leaf(point);
    const Var<double> loss = f(tape, leaf);
    analytic = tape.backward(loss).of(leaf);
  }

  std::vector<std::size_t> coords(point.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coords != 0 && options.max_coords < coords.size()) {
    Philox rng(options.seed, 0x67636b);  // "gck"
    for (std::size_t i = 0; i < options.max_coords; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  Tensor<double> probe = point;
  for (std::size_t i : coords) {
    const double x0 = point[i];
    probe[i] = x0 + options.eps;
    const double fp = evaluate(f, probe);
    probe[i] = x0 - options.eps;
    const double fm = evaluate(f, probe);
    probe[i] = x0;
    const double numeric = (fp - fm) / (2.0 * options.eps);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (err > report.max_rel_error || report.probed == 0) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic = a;
      report.numeric = numeric;
    }
    ++report.probed;
  }
  return report;
}

}  // namespace dualpath
