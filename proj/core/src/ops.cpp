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

#include "dualpath/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace dualpath {
namespace {

template <typename T>
Tensor<T> checked(Tensor<T> t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  return t;
}

template <typename T>
void require_rank2_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(Shape{t.rows(), t.cols()}, T(0));
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  }
  return out;
}

template <typename T>
void accumulate(Tensor<T>* dst, const Tensor<T>& src) {
  auto d = dst->span();
  auto s = src.span();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T, std::size_t N>
Var<T> record(Tensor<T> value, const std::array<Var<T>, N>& inputs, typename Tape<T>::BackwardFn fn) {
  return inputs[0].tape().record(std::move(value), std::span<const Var<T>>(inputs), std::move(fn));
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2_same(av, bv, "add");
  Tensor<T> out = av;
  accumulate(&out, bv);
  return record<T, 2>(checked(std::move(out), "add"), {a, b},
                      [](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        if (gin[0]) accumulate(gin[0], g);
                        if (gin[1]) accumulate(gin[1], g);
                      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2_same(av, bv, "sub");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return record<T, 2>(checked(std::move(out), "sub"), {a, b},
                      [](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        if (gin[0]) accumulate(gin[0], g);
                        if (gin[1]) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                        }
                      });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2_same(av, bv, "mul");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id();
  const auto ib = b.id();
  return record<T, 2>(checked(std::move(out), "mul"), {a, b},
                      [ia, ib](const Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        const auto& av = tape.value(ia);
                        const auto& bv = tape.value(ib);
                        if (gin[0]) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * bv[i];
                        }
                        if (gin[1]) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * av[i];
                        }
                      });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const auto& av = a.value();
  const auto& rv = row.value();
  if (rv.size() != av.cols()) {
    throw ShapeError("add_row: row " + shape_string(rv.shape()) + " vs matrix " + shape_string(av.shape()));
  }
  Tensor<T> out = av;
  const std::size_t m = av.rows();
  const std::size_t n = av.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) += rv[j];
  }
  return record<T, 2>(checked(std::move(out), "add_row"), {a, row},
                      [m, n](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        if (gin[0]) accumulate(gin[0], g);
                        if (gin[1]) {
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) (*gin[1])[j] += g(i, j);
                          }
                        }
                      });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.span()) v *= s;
  return record<T, 1>(checked(std::move(out), "scale"), {a},
                      [s](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
                      });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.span()) v += s;
  return record<T, 1>(checked(std::move(out), "add_scalar"), {a},
                      [](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        accumulate(gin[0], g);
                      });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows();
  const std::size_t k = av.cols();
  const std::size_t n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  const auto ia = a.id();
  const auto ib = b.id();
  return record<T, 2>(checked(std::move(out), "matmul"), {a, b},
                      [ia, ib, m, k, n](const Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g,
                                        std::span<Tensor<T>* const> gin) {
                        const auto& av = tape.value(ia);
                        const auto& bv = tape.value(ib);
                        if (gin[0]) {
                          // dA = G * B^T
                          const auto bt = transpose(bv.data(), k, n);
                          gemm_nn(g.data(), bt.data(), gin[0]->data(), m, n, k);
                        }
                        if (gin[1]) {
                          // dB = A^T * G
                          gemm_tn(av.data(), g.data(), gin[1]->data(), m, k, n);
                        }
                      });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows();
  const std::size_t k = av.cols();
  const std::size_t n = bv.rows();
  if (bv.cols() != k) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()) + "^T");
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  const auto bt = transpose(bv.data(), n, k);
  gemm_nn(av.data(), bt.data(), out.data(), m, k, n);
  const auto ia = a.id();
  const auto ib = b.id();
  return record<T, 2>(checked(std::move(out), "matmul_nt"), {a, b},
                      [ia, ib, m, k, n](const Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g,
                                        std::span<Tensor<T>* const> gin) {
                        const auto& av = tape.value(ia);
                        const auto& bv = tape.value(ib);
                        // dA = G * B
                        if (gin[0]) gemm_nn(g.data(), bv.data(), gin[0]->data(), m, n, k);
                        // dB = G^T * A
                        if (gin[1]) gemm_tn(g.data(), av.data(), gin[1]->data(), m, n, k);
                      });
}

template <typename T>
Var<T> masked_softmax(Var<T> scores, const AttentionMask& mask) {
  const auto& sv = scores.value();
  const std::size_t r = sv.rows();
  const std::size_t c = sv.cols();
  if (mask.rows() != r || mask.cols() != c) {
    throw ShapeError("masked_softmax: mask " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                     " vs scores " + shape_string(sv.shape()));
  }
  Tensor<T> out = Tensor<T>::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    bool any = false;
    T mx = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask.allowed(i, j)) continue;
      mx = any ? std::max(mx, sv(i, j)) : sv(i, j);
      any = true;
    }
    if (!any) throw NumericError("masked_softmax: row " + std::to_string(i) + " has no unmasked key");
    T total = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask.allowed(i, j)) continue;
      const T e = std::exp(sv(i, j) - mx);
      out(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= total;
  }
  return record<T, 1>(checked(std::move(out), "masked_softmax"), {scores},
                      [r, c](const Tape<T>&, const Tensor<T>& y, const Tensor<T>& g,
                             std::span<Tensor<T>* const> gin) {
                        for (std::size_t i = 0; i < r; ++i) {
                          T dot = T(0);
                          for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
                          for (std::size_t j = 0; j < c; ++j) (*gin[0])(i, j) += y(i, j) * (g(i, j) - dot);
                        }
                      });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(n) + " entries");
  }
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  std::vector<T> xhat(m * n);
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += xv(i, j);
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T d = xv(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xv(i, j) - mu) * is;
      xhat[i * n + j] = h;
      out(i, j) = h * gv[j] + bv[j];
    }
  }
  const auto ig = gamma.id();
  return record<T, 3>(
      checked(std::move(out), "layer_norm"), {x, gamma, beta},
      [m, n, ig, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
        const auto& gv = tape.value(ig);
        if (gin[1] || gin[2]) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              if (gin[1]) (*gin[1])[j] += g(i, j) * xhat[i * n + j];
              if (gin[2]) (*gin[2])[j] += g(i, j);
            }
          }
        }
        if (gin[0]) {
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t i = 0; i < m; ++i) {
            T sum_d = T(0);
            T sum_dx = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g(i, j) * gv[j];
              sum_d += d;
              sum_dx += d * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g(i, j) * gv[j];
              (*gin[0])(i, j) += inv_std[i] * (d - inv_n * sum_d - xhat[i * n + j] * inv_n * sum_dx);
            }
          }
        }
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  const auto& xv = x.value();
  Tensor<T> out = xv;
  for (auto& v : out.span()) {
    const T u = kC * (v + kA * v * v * v);
    v = T(0.5) * v * (T(1) + std::tanh(u));
  }
  const auto ix = x.id();
  return record<T, 1>(checked(std::move(out), "gelu"), {x},
                      [ix](const Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g,
                           std::span<Tensor<T>* const> gin) {
                        const auto& xv = tape.value(ix);
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          const T v = xv[i];
                          const T t = std::tanh(kC * (v + kA * v * v * v));
                          const T d = T(0.5) * (T(1) + t) +
                                      T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
                          (*gin[0])[i] += g[i] * d;
                        }
                      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.span()) v = v > T(0) ? v : T(0);
  const auto ix = x.id();
  return record<T, 1>(checked(std::move(out), "relu"), {x},
                      [ix](const Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g,
                           std::span<Tensor<T>* const> gin) {
                        const auto& xv = tape.value(ix);
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (xv[i] > T(0)) (*gin[0])[i] += g[i];
                        }
                      });
}

template <typename T>
Var<T> abs(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.span()) v = std::abs(v);
  const auto ix = x.id();
  return record<T, 1>(checked(std::move(out), "abs"), {x},
                      [ix](const Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g,
                           std::span<Tensor<T>* const> gin) {
                        const auto& xv = tape.value(ix);
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (xv[i] > T(0)) {
                            (*gin[0])[i] += g[i];
                          } else if (xv[i] < T(0)) {
                            (*gin[0])[i] -= g[i];
                          }
                        }
                      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = T(0);
  for (T v : x.value().span()) total += v;
  return record<T, 1>(checked(Tensor<T>::scalar(total), "sum"), {x},
                      [](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        const T gv = g[0];
                        for (auto& v : gin[0]->span()) v += gv;
                      });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> mean_rows(Var<T> x) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (m == 0) throw ShapeError("mean_rows of a tensor with no rows");
  Tensor<T> out = Tensor<T>::matrix(1, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += xv(i, j);
  }
  const T inv = T(1) / static_cast<T>(m);
  for (auto& v : out.span()) v *= inv;
  return record<T, 1>(checked(std::move(out), "mean_rows"), {x},
                      [m, n, inv](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                  std::span<Tensor<T>* const> gin) {
                        for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < n; ++j) (*gin[0])(i, j) += g[j] * inv;
                        }
                      });
}

template <typename T>
Var<T> row_sq_norms(Var<T> x) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += xv(i, j) * xv(i, j);
    out[i] = acc;
  }
  const auto ix = x.id();
  return record<T, 1>(checked(std::move(out), "row_sq_norms"), {x},
                      [ix, m, n](const Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g,
                                 std::span<Tensor<T>* const> gin) {
                        const auto& xv = tape.value(ix);
                        for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < n; ++j) (*gin[0])(i, j) += T(2) * g[i] * xv(i, j);
                        }
                      });
}

template <typename T>
Var<T> normalize_rows(Var<T> x, T min_norm) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  std::vector<T> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += xv(i, j) * xv(i, j);
    const T nrm = std::sqrt(acc);
    if (!(nrm >= min_norm)) throw NumericError("normalize_rows: row " + std::to_string(i) + " has (near-)zero norm");
    norms[i] = nrm;
    for (std::size_t j = 0; j < n; ++j) out(i, j) = xv(i, j) / nrm;
  }
  return record<T, 1>(checked(std::move(out), "normalize_rows"), {x},
                      [m, n, norms = std::move(norms)](const Tape<T>&, const Tensor<T>& y, const Tensor<T>& g,
                                                       std::span<Tensor<T>* const> gin) {
                        for (std::size_t i = 0; i < m; ++i) {
                          T dot = T(0);
                          for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * g(i, j);
                          for (std::size_t j = 0; j < n; ++j) {
                            (*gin[0])(i, j) += (g(i, j) - y(i, j) * dot) / norms[i];
                          }
                        }
                      });
}

template <typename T>
Var<T> cosine_rows(Var<T> a, Var<T> b, T min_norm) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows();
  const std::size_t n = av.cols();
  const bool broadcast = bv.rows() == 1 && m != 1;
  if (bv.cols() != n || (!broadcast && bv.rows() != m)) {
    throw ShapeError("cosine_rows: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  auto norm_of = [n, min_norm](const T* p, std::size_t row) {
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += p[j] * p[j];
    const T nrm = std::sqrt(acc);
    if (!(nrm >= min_norm)) throw NumericError("cosine undefined: row " + std::to_string(row) + " has (near-)zero norm");
    return nrm;
  };
  std::vector<T> na(m);
  std::vector<T> nb(broadcast ? 1 : m);
  for (std::size_t i = 0; i < m; ++i) na[i] = norm_of(av.data() + i * n, i);
  for (std::size_t i = 0; i < nb.size(); ++i) nb[i] = norm_of(bv.data() + i * n, i);
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t bi = broadcast ? 0 : i;
    T dot = T(0);
    for (std::size_t j = 0; j < n; ++j) dot += av(i, j) * bv(bi, j);
    out[i] = dot / (na[i] * nb[bi]);
  }
  const auto ia = a.id();
  const auto ib = b.id();
  return record<T, 2>(checked(std::move(out), "cosine_rows"), {a, b},
                      [ia, ib, m, n, broadcast, na = std::move(na), nb = std::move(nb)](
                          const Tape<T>& tape, const Tensor<T>& c, const Tensor<T>& g,
                          std::span<Tensor<T>* const> gin) {
                        const auto& av = tape.value(ia);
                        const auto& bv = tape.value(ib);
                        for (std::size_t i = 0; i < m; ++i) {
                          const std::size_t bi = broadcast ? 0 : i;
                          const T gi = g[i];
                          const T ci = c[i];
                          for (std::size_t j = 0; j < n; ++j) {
                            const T ah = av(i, j) / na[i];
                            const T bh = bv(bi, j) / nb[bi];
                            if (gin[0]) (*gin[0])(i, j) += gi * (bh - ci * ah) / na[i];
                            if (gin[1]) (*gin[1])(bi, j) += gi * (ah - ci * bh) / nb[bi];
                          }
                        }
                      });
}

template <typename T>
Var<T> logsumexp(Var<T> x) {
  const auto& xv = x.value();
  if (xv.empty()) throw ShapeError("logsumexp of empty tensor");
  T mx = xv[0];
  for (T v : xv.span()) mx = std::max(mx, v);
  T total = T(0);
  for (T v : xv.span()) total += std::exp(v - mx);
  const T lse = mx + std::log(total);
  const auto ix = x.id();
  return record<T, 1>(checked(Tensor<T>::scalar(lse), "logsumexp"), {x},
                      [ix](const Tape<T>& tape, const Tensor<T>& out, const Tensor<T>& g,
                           std::span<Tensor<T>* const> gin) {
                        const auto& xv = tape.value(ix);
                        const T lse = out[0];
                        for (std::size_t i = 0; i < xv.size(); ++i) (*gin[0])[i] += g[0] * std::exp(xv[i] - lse);
                      });
}

template <typename T>
Var<T> masked_cross_entropy(Var<T> logits, const AttentionMask& mask, std::span<const std::size_t> targets) {
  const auto& lv = logits.value();
  const std::size_t n = lv.rows();
  const std::size_t m = lv.cols();
  if (mask.rows() != n || mask.cols() != m || targets.size() != n) {
    throw ShapeError("masked_cross_entropy: logits " + shape_string(lv.shape()) + " vs mask/targets");
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  Tensor<T> probs = Tensor<T>::matrix(n, m);
  Tensor<T> out = Tensor<T>::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (tgt[i] >= m || !mask.allowed(i, tgt[i])) {
      throw UsageError("masked_cross_entropy: target of row " + std::to_string(i) + " is masked out");
    }
    T mx = lv(i, tgt[i]);
    for (std::size_t j = 0; j < m; ++j) {
      if (mask.allowed(i, j)) mx = std::max(mx, lv(i, j));
    }
    T total = T(0);
    for (std::size_t j = 0; j < m; ++j) {
      if (mask.allowed(i, j)) total += std::exp(lv(i, j) - mx);
    }
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < m; ++j) {
      if (mask.allowed(i, j)) probs(i, j) = std::exp(lv(i, j) - lse);
    }
    out[i] = lse - lv(i, tgt[i]);
  }
  return record<T, 1>(checked(std::move(out), "masked_cross_entropy"), {logits},
                      [n, m, tgt = std::move(tgt), probs = std::move(probs)](
                          const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                        for (std::size_t i = 0; i < n; ++i) {
                          for (std::size_t j = 0; j < m; ++j) (*gin[0])(i, j) += g[i] * probs(i, j);
                          (*gin[0])(i, tgt[i]) -= g[i];
                        }
                      });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  const std::size_t n = xv.cols();
  if (begin + count > xv.rows() || count == 0) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                     shape_string(xv.shape()));
  }
  std::vector<T> data(xv.data() + begin * n, xv.data() + (begin + count) * n);
  return record<T, 1>(Tensor<T>(Shape{count, n}, std::move(data)), {x},
                      [begin, count, n](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                        std::span<Tensor<T>* const> gin) {
                        T* dst = gin[0]->data() + begin * n;
                        for (std::size_t i = 0; i < count * n; ++i) dst[i] += g[i];
                      });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (begin + count > n || count == 0) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                     shape_string(xv.shape()));
  }
  Tensor<T> out = Tensor<T>::matrix(m, count);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, begin + j);
  }
  return record<T, 1>(std::move(out), {x},
                      [begin, count, m](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                        std::span<Tensor<T>* const> gin) {
                        for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < count; ++j) (*gin[0])(i, begin + j) += g(i, j);
                        }
                      });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<T> data;
  data.reserve(total * n);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(data.size());
    const auto s = p.value().span();
    data.insert(data.end(), s.begin(), s.end());
  }
  return parts[0].tape().record(Tensor<T>(Shape{total, n}, std::move(data)), parts,
                                [offsets = std::move(offsets)](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                                               std::span<Tensor<T>* const> gin) {
                                  for (std::size_t k = 0; k < gin.size(); ++k) {
                                    if (!gin[k]) continue;
                                    const T* src = g.data() + offsets[k];
                                    for (std::size_t i = 0; i < gin[k]->size(); ++i) (*gin[k])[i] += src[i];
                                  }
                                });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.cols();
  }
  Tensor<T> out = Tensor<T>::matrix(m, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offsets[k] + j) = pv(i, j);
    }
  }
  return parts[0].tape().record(std::move(out), parts,
                                [m, offsets = std::move(offsets)](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                                                  std::span<Tensor<T>* const> gin) {
                                  for (std::size_t k = 0; k < gin.size(); ++k) {
                                    if (!gin[k]) continue;
                                    const std::size_t w = gin[k]->cols();
                                    for (std::size_t i = 0; i < m; ++i) {
                                      for (std::size_t j = 0; j < w; ++j) (*gin[k])(i, j) += g(i, offsets[k] + j);
                                    }
                                  }
                                });
}

template <typename T>
Var<T> stop_gradient(Var<T> x) {
  return x.tape().constant(x.value());
}

#define DUALPATH_INSTANTIATE_OPS(T)                                                    \
  template Var<T> add(Var<T>, Var<T>);                                                 \
  template Var<T> sub(Var<T>, Var<T>);                                                 \
  template Var<T> mul(Var<T>, Var<T>);                                                 \
  template Var<T> add_row(Var<T>, Var<T>);                                             \
  template Var<T> scale(Var<T>, T);                                                    \
  template Var<T> add_scalar(Var<T>, T);                                               \
  template Var<T> matmul(Var<T>, Var<T>);                                              \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                           \
  template Var<T> masked_softmax(Var<T>, const AttentionMask&);                        \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                               \
  template Var<T> gelu(Var<T>);                                                        \
  template Var<T> relu(Var<T>);                                                        \
  template Var<T> abs(Var<T>);                                                         \
  template Var<T> sum(Var<T>);                                                         \
  template Var<T> mean(Var<T>);                                                        \
  template Var<T> mean_rows(Var<T>);                                                   \
  template Var<T> row_sq_norms(Var<T>);                                                \
  template Var<T> normalize_rows(Var<T>, T);                                           \
  template Var<T> cosine_rows(Var<T>, Var<T>, T);                                      \
  template Var<T> logsumexp(Var<T>);                                                   \
  template Var<T> masked_cross_entropy(Var<T>, const AttentionMask&, std::span<const std::size_t>); \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                        \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                        \
  template Var<T> concat_rows(std::span<const Var<T>>);                                \
  template Var<T> concat_cols(std::span<const Var<T>>);                                \
  template Var<T> stop_gradient(Var<T>);

DUALPATH_INSTANTIATE_OPS(float)
DUALPATH_INSTANTIATE_OPS(double)

#undef DUALPATH_INSTANTIATE_OPS

}  // namespace dualpath
