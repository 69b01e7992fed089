#include "adt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adt {

namespace {

template <class Real>
void require_same_graph(Var<Real> a, Var<Real> b, const char* op) {
  if (a.graph != b.graph || a.graph == nullptr)
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
}

// C[m,n] += A[m,k] * B[k,n]; row i of C depends only on row i of A.
template <class Real>
void gemm_acc(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* ci = c + i * n;
    const Real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = ai[p];
      const Real* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
template <class Real>
void gemm_acc_bt(const Real* dc, const Real* b, Real* da, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* dci = dc + i * n;
    Real* dai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real* bp = b + p * n;
      Real acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += dci[j] * bp[j];
      dai[p] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
template <class Real>
void gemm_acc_at(const Real* a, const Real* dc, Real* db, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a + i * k;
    const Real* dci = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = ai[p];
      Real* dbp = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += aip * dci[j];
    }
  }
}

template <class Real>
void add_into(Tensor<Real>& dst, const Tensor<Real>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  require_same_graph(a, b, "matmul");
  auto& g = *a.graph;
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul", A.shape(), B.shape());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<Real> C(m, n);
  gemm_acc(A.ptr(), B.ptr(), C.ptr(), m, k, n);
  g.macs += std::uint64_t(m) * k * n;
  return g.push(
      std::move(C),
      [&g, a, b, m, k, n](std::uint32_t self) {
        const auto& dC = g.grad(self);
        if (g.needs_grad(a)) gemm_acc_bt(dC.ptr(), g.value(b).ptr(), g.grad(a.id).ptr(), m, k, n);
        if (g.needs_grad(b)) gemm_acc_at(g.value(a).ptr(), dC.ptr(), g.grad(b.id).ptr(), m, k, n);
      },
      g.needs_grad(a) || g.needs_grad(b));
}

template <class Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b) {
  require_same_graph(x, w, "linear");
  require_same_graph(x, b, "linear");
  auto& g = *x.graph;
  const auto& X = x.value();
  const auto& W = w.value();
  const auto& B = b.value();
  if (X.cols() != W.rows()) throw ShapeError("linear", X.shape(), W.shape());
  if (B.shape() != Shape{1, W.cols()}) throw ShapeError("linear(bias)", B.shape(), W.shape());
  const std::size_t m = X.rows(), k = X.cols(), n = W.cols();
  Tensor<Real> Y(m, n);
  for (std::size_t i = 0; i < m; ++i) std::copy(B.ptr(), B.ptr() + n, Y.ptr() + i * n);
  gemm_acc(X.ptr(), W.ptr(), Y.ptr(), m, k, n);
  g.macs += std::uint64_t(m) * k * n;
  return g.push(
      std::move(Y),
      [&g, x, w, b, m, k, n](std::uint32_t self) {
        const auto& dY = g.grad(self);
        if (g.needs_grad(x)) gemm_acc_bt(dY.ptr(), g.value(w).ptr(), g.grad(x.id).ptr(), m, k, n);
        if (g.needs_grad(w)) gemm_acc_at(g.value(x).ptr(), dY.ptr(), g.grad(w.id).ptr(), m, k, n);
        if (g.needs_grad(b)) {
          auto& dB = g.grad(b.id);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dB[j] += dY(i, j);
        }
      },
      g.needs_grad(x) || g.needs_grad(w) || g.needs_grad(b));
}

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  require_same_graph(a, b, "add");
  auto& g = *a.graph;
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) throw ShapeError("add", A.shape(), B.shape());
  Tensor<Real> C = A;
  add_into(C, B);
  return g.push(
      std::move(C),
      [&g, a, b](std::uint32_t self) {
        const auto& dC = g.grad(self);
        if (g.needs_grad(a)) add_into(g.grad(a.id), dC);
        if (g.needs_grad(b)) add_into(g.grad(b.id), dC);
      },
      g.needs_grad(a) || g.needs_grad(b));
}

template <class Real>
Var<Real> add_row(Var<Real> a, Var<Real> row) {
  require_same_graph(a, row, "add_row");
  auto& g = *a.graph;
  const auto& A = a.value();
  const auto& R = row.value();
  if (R.shape() != Shape{1, A.cols()}) throw ShapeError("add_row", A.shape(), R.shape());
  Tensor<Real> C = A;
  for (std::size_t i = 0; i < C.rows(); ++i)
    for (std::size_t j = 0; j < C.cols(); ++j) C(i, j) += R[j];
  return g.push(
      std::move(C),
      [&g, a, row](std::uint32_t self) {
        const auto& dC = g.grad(self);
        if (g.needs_grad(a)) add_into(g.grad(a.id), dC);
        if (g.needs_grad(row)) {
          auto& dR = g.grad(row.id);
          for (std::size_t i = 0; i < dC.rows(); ++i)
            for (std::size_t j = 0; j < dC.cols(); ++j) dR[j] += dC(i, j);
        }
      },
      g.needs_grad(a) || g.needs_grad(row));
}

template <class Real>
Var<Real> scale(Var<Real> a, double s) {
  auto& g = *a.graph;
  Tensor<Real> C = a.value();
  for (auto& x : C.data()) x = Real(x * s);
  return g.push(
      std::move(C),
      [&g, a, s](std::uint32_t self) {
        const auto& dC = g.grad(self);
        auto& dA = g.grad(a.id);
        for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += Real(dC[i] * s);
      },
      g.needs_grad(a));
}

template <class Real>
Var<Real> relu(Var<Real> a) {
  auto& g = *a.graph;
  Tensor<Real> C = a.value();
  for (auto& x : C.data()) x = x > Real(0) ? x : Real(0);
  return g.push(
      std::move(C),
      [&g, a](std::uint32_t self) {
        const auto& dC = g.grad(self);
        const auto& A = g.value(a);
        auto& dA = g.grad(a.id);
        for (std::size_t i = 0; i < dA.size(); ++i)
          if (A[i] > Real(0)) dA[i] += dC[i];
      },
      g.needs_grad(a));
}

template <class Real>
Var<Real> softmax(Var<Real> a) {
  auto& g = *a.graph;
  const auto& A = a.value();
  Tensor<Real> Y(A.shape());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    auto x = A.row(i);
    auto y = Y.row(i);
    const Real mx = *std::max_element(x.begin(), x.end());
    Real z = 0;
    for (std::size_t j = 0; j < x.size(); ++j) z += (y[j] = std::exp(x[j] - mx));
    for (auto& v : y) v /= z;
  }
  return g.push(
      std::move(Y),
      [&g, a](std::uint32_t self) {
        const auto& dY = g.grad(self);
        const auto& Yv = g.value(Var<Real>{&g, self});
        auto& dA = g.grad(a.id);
        for (std::size_t i = 0; i < Yv.rows(); ++i) {
          Real dot = 0;
          for (std::size_t j = 0; j < Yv.cols(); ++j) dot += Yv(i, j) * dY(i, j);
          for (std::size_t j = 0; j < Yv.cols(); ++j) dA(i, j) += Yv(i, j) * (dY(i, j) - dot);
        }
      },
      g.needs_grad(a));
}

template <class Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, double eps) {
  require_same_graph(x, gain, "layer_norm");
  require_same_graph(x, bias, "layer_norm");
  auto& g = *x.graph;
  const auto& X = x.value();
  const auto& G = gain.value();
  const auto& B = bias.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (G.shape() != Shape{1, n}) throw ShapeError("layer_norm(gain)", X.shape(), G.shape());
  if (B.shape() != Shape{1, n}) throw ShapeError("layer_norm(bias)", X.shape(), B.shape());
  Tensor<Real> Y(m, n);
  Tensor<Real> xhat(m, n);
  std::vector<Real> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto xi = X.row(i);
    Real mean = 0;
    for (Real v : xi) mean += v;
    mean /= Real(n);
    Real var = 0;
    for (Real v : xi) var += (v - mean) * (v - mean);
    var /= Real(n);
    const Real is = Real(1) / std::sqrt(var + Real(eps));
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xi[j] - mean) * is;
      Y(i, j) = G[j] * xhat(i, j) + B[j];
    }
  }
  return g.push(
      std::move(Y),
      [&g, x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), m,
       n](std::uint32_t self) {
        const auto& dY = g.grad(self);
        const auto& Gv = g.value(gain);
        if (g.needs_grad(gain)) {
          auto& dG = g.grad(gain.id);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dG[j] += dY(i, j) * xhat(i, j);
        }
        if (g.needs_grad(bias)) {
          auto& dB = g.grad(bias.id);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dB[j] += dY(i, j);
        }
        if (g.needs_grad(x)) {
          auto& dX = g.grad(x.id);
          std::vector<Real> dxhat(n);
          for (std::size_t i = 0; i < m; ++i) {
            Real mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = dY(i, j) * Gv[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat(i, j);
            }
            mean_d /= Real(n);
            mean_dx /= Real(n);
            for (std::size_t j = 0; j < n; ++j)
              dX(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
          }
        }
      },
      g.needs_grad(x) || g.needs_grad(gain) || g.needs_grad(bias));
}

template <class Real>
Var<Real> embedding_lookup(Var<Real> table, std::span<const int> ids) {
  auto& g = *table.graph;
  const auto& T = table.value();
  Tensor<Real> Y(ids.size(), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || std::size_t(ids[i]) >= T.rows())
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(T.rows()) + " rows");
    auto src = T.row(std::size_t(ids[i]));
    std::copy(src.begin(), src.end(), Y.row(i).begin());
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return g.push(
      std::move(Y),
      [&g, table, idv = std::move(idv)](std::uint32_t self) {
        const auto& dY = g.grad(self);
        auto& dT = g.grad(table.id);
        for (std::size_t i = 0; i < idv.size(); ++i) {
          auto dst = dT.row(std::size_t(idv[i]));
          auto src = dY.row(i);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      },
      g.needs_grad(table));
}

template <class Real>
Var<Real> concat(Var<Real> a, Var<Real> b) {
  require_same_graph(a, b, "concat");
  auto& g = *a.graph;
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rows() != B.rows()) throw ShapeError("concat", A.shape(), B.shape());
  const std::size_t na = A.cols(), nb = B.cols();
  Tensor<Real> C(A.rows(), na + nb);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    std::copy(A.row(i).begin(), A.row(i).end(), C.row(i).begin());
    std::copy(B.row(i).begin(), B.row(i).end(), C.row(i).begin() + std::ptrdiff_t(na));
  }
  return g.push(
      std::move(C),
      [&g, a, b, na, nb](std::uint32_t self) {
        const auto& dC = g.grad(self);
        if (g.needs_grad(a)) {
          auto& dA = g.grad(a.id);
          for (std::size_t i = 0; i < dA.rows(); ++i)
            for (std::size_t j = 0; j < na; ++j) dA(i, j) += dC(i, j);
        }
        if (g.needs_grad(b)) {
          auto& dB = g.grad(b.id);
          for (std::size_t i = 0; i < dB.rows(); ++i)
            for (std::size_t j = 0; j < nb; ++j) dB(i, j) += dC(i, na + j);
        }
      },
      g.needs_grad(a) || g.needs_grad(b));
}

namespace {
void check_spans(std::span<const RowSpan> spans, std::size_t rows, const char* op) {
  for (const auto& s : spans)
    if (s.begin >= s.end || s.end > rows)
      throw std::invalid_argument(std::string(op) + ": empty or out-of-range row span [" +
                                  std::to_string(s.begin) + ", " + std::to_string(s.end) +
                                  ") over " + std::to_string(rows) + " rows");
}
}  // namespace

template <class Real>
Var<Real> mean_pool(Var<Real> x, std::span<const RowSpan> spans) {
  auto& g = *x.graph;
  const auto& X = x.value();
  check_spans(spans, X.rows(), "mean_pool");
  Tensor<Real> Y(spans.size(), X.cols());
  for (std::size_t s = 0; s < spans.size(); ++s) {
    for (std::size_t r = spans[s].begin; r < spans[s].end; ++r)
      for (std::size_t j = 0; j < X.cols(); ++j) Y(s, j) += X(r, j);
    for (std::size_t j = 0; j < X.cols(); ++j) Y(s, j) /= Real(spans[s].size());
  }
  std::vector<RowSpan> sp(spans.begin(), spans.end());
  return g.push(
      std::move(Y),
      [&g, x, sp = std::move(sp)](std::uint32_t self) {
        const auto& dY = g.grad(self);
        auto& dX = g.grad(x.id);
        for (std::size_t s = 0; s < sp.size(); ++s) {
          const Real inv = Real(1) / Real(sp[s].size());
          for (std::size_t r = sp[s].begin; r < sp[s].end; ++r)
            for (std::size_t j = 0; j < dX.cols(); ++j) dX(r, j) += dY(s, j) * inv;
        }
      },
      g.needs_grad(x));
}

template <class Real>
Var<Real> max_pool(Var<Real> x, std::span<const RowSpan> spans) {
  auto& g = *x.graph;
  const auto& X = x.value();
  check_spans(spans, X.rows(), "max_pool");
  const std::size_t n = X.cols();
  Tensor<Real> Y(spans.size(), n);
  std::vector<std::size_t> argmax(spans.size() * n);
  for (std::size_t s = 0; s < spans.size(); ++s) {
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = spans[s].begin;
      for (std::size_t r = spans[s].begin + 1; r < spans[s].end; ++r)
        if (X(r, j) > X(best, j)) best = r;
      Y(s, j) = X(best, j);
      argmax[s * n + j] = best;
    }
  }
  return g.push(
      std::move(Y),
      [&g, x, argmax = std::move(argmax), n](std::uint32_t self) {
        const auto& dY = g.grad(self);
        auto& dX = g.grad(x.id);
        for (std::size_t s = 0; s < dY.rows(); ++s)
          for (std::size_t j = 0; j < n; ++j) dX(argmax[s * n + j], j) += dY(s, j);
      },
      g.needs_grad(x));
}

template <class Real>
Var<Real> dropout(Var<Real> x, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  auto& g = *x.graph;
  if (!g.training() || rate == 0.0) return x;
  const auto& X = x.value();
  const Real keep_scale = Real(1.0 / (1.0 - rate));
  Tensor<Real> mask(X.shape());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto& rng = g.rng();
  for (auto& m : mask.data()) m = u(rng) < rate ? Real(0) : keep_scale;
  Tensor<Real> Y = X;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= mask[i];
  return g.push(
      std::move(Y),
      [&g, x, mask = std::move(mask)](std::uint32_t self) {
        const auto& dY = g.grad(self);
        auto& dX = g.grad(x.id);
        for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += dY[i] * mask[i];
      },
      g.needs_grad(x));
}

template <class Real>
Var<Real> gather_rows(Var<Real> x, std::span<const std::size_t> rows) {
  auto& g = *x.graph;
  const auto& X = x.value();
  Tensor<Real> Y(rows.size(), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows())
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " of " +
                              std::to_string(X.rows()));
    std::copy(X.row(rows[i]).begin(), X.row(rows[i]).end(), Y.row(i).begin());
  }
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return g.push(
      std::move(Y),
      [&g, x, rv = std::move(rv)](std::uint32_t self) {
        const auto& dY = g.grad(self);
        auto& dX = g.grad(x.id);
        for (std::size_t i = 0; i < rv.size(); ++i)
          for (std::size_t j = 0; j < dX.cols(); ++j) dX(rv[i], j) += dY(i, j);
      },
      g.needs_grad(x));
}

template <class Real>
Var<Real> overwrite_rows(Var<Real> base, Var<Real> updates, std::span<const std::size_t> rows) {
  require_same_graph(base, updates, "overwrite_rows");
  auto& g = *base.graph;
  const auto& B = base.value();
  const auto& U = updates.value();
  if (U.cols() != B.cols() || U.rows() != rows.size())
    throw ShapeError("overwrite_rows", B.shape(), U.shape());
  Tensor<Real> Y = B;
  std::vector<char> replaced(B.rows(), 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= B.rows()) throw std::out_of_range("overwrite_rows: row index out of range");
    std::copy(U.row(i).begin(), U.row(i).end(), Y.row(rows[i]).begin());
    replaced[rows[i]] = 1;
  }
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return g.push(
      std::move(Y),
      [&g, base, updates, rv = std::move(rv), replaced = std::move(replaced)](std::uint32_t self) {
        const auto& dY = g.grad(self);
        if (g.needs_grad(base)) {
          auto& dB = g.grad(base.id);
          for (std::size_t r = 0; r < dB.rows(); ++r)
            if (!replaced[r])
              for (std::size_t j = 0; j < dB.cols(); ++j) dB(r, j) += dY(r, j);
        }
        if (g.needs_grad(updates)) {
          auto& dU = g.grad(updates.id);
          for (std::size_t i = 0; i < rv.size(); ++i)
            for (std::size_t j = 0; j < dU.cols(); ++j) dU(i, j) += dY(rv[i], j);
        }
      },
      g.needs_grad(base) || g.needs_grad(updates));
}

template <class Real>
Var<Real> sum(Var<Real> a) {
  auto& g = *a.graph;
  Real s = 0;
  for (Real v : a.value().data()) s += v;
  return g.push(
      Tensor<Real>(1, 1, s),
      [&g, a](std::uint32_t self) {
        const Real d = g.grad(self)[0];
        for (auto& v : g.grad(a.id).data()) v += d;
      },
      g.needs_grad(a));
}

template <class Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, std::span<const RowSpan> key_spans,
                    std::size_t n_heads, double dropout_rate) {
  require_same_graph(q, k, "attention");
  require_same_graph(q, v, "attention");
  auto& g = *q.graph;
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  const std::size_t d = Q.cols();
  if (K.shape() != V.shape() || K.cols() != d) throw ShapeError("attention(k,v)", K.shape(), V.shape());
  if (key_spans.size() != Q.rows())
    throw std::invalid_argument("attention: one key span per query row required");
  if (n_heads == 0 || d % n_heads != 0)
    throw std::invalid_argument("attention: width " + std::to_string(d) +
                                " not divisible by heads " + std::to_string(n_heads));
  check_spans(key_spans, K.rows(), "attention");
  const std::size_t dh = d / n_heads;
  const Real sc = Real(1.0 / std::sqrt(double(dh)));
  const bool drop = g.training() && dropout_rate > 0.0;
  const Real keep_scale = drop ? Real(1.0 / (1.0 - dropout_rate)) : Real(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Probabilities (pre-dropout) and dropout multipliers, laid out per query
  // row then per head then per key.
  std::vector<std::size_t> offset(Q.rows() + 1, 0);
  for (std::size_t i = 0; i < Q.rows(); ++i) offset[i + 1] = offset[i] + n_heads * key_spans[i].size();
  std::vector<Real> probs(offset.back());
  std::vector<Real> mult(drop ? offset.back() : 0);

  Tensor<Real> O(Q.rows(), d);
  std::uint64_t macs = 0;
  for (std::size_t i = 0; i < Q.rows(); ++i) {
    const auto sp = key_spans[i];
    const std::size_t L = sp.size();
    for (std::size_t h = 0; h < n_heads; ++h) {
      Real* p = probs.data() + offset[i] + h * L;
      const Real* qi = Q.ptr() + i * d + h * dh;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t t = 0; t < L; ++t) {
        const Real* kj = K.ptr() + (sp.begin + t) * d + h * dh;
        Real s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        p[t] = s * sc;
        mx = std::max(mx, p[t]);
      }
      Real z = 0;
      for (std::size_t t = 0; t < L; ++t) z += (p[t] = std::exp(p[t] - mx));
      for (std::size_t t = 0; t < L; ++t) p[t] /= z;
      Real* oi = O.ptr() + i * d + h * dh;
      for (std::size_t t = 0; t < L; ++t) {
        Real w = p[t];
        if (drop) {
          Real mlt = u(g.rng()) < dropout_rate ? Real(0) : keep_scale;
          mult[offset[i] + h * L + t] = mlt;
          w *= mlt;
        }
        const Real* vj = V.ptr() + (sp.begin + t) * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
      }
      macs += 2 * L * dh;
    }
  }
  g.macs += macs;
  std::vector<RowSpan> spans(key_spans.begin(), key_spans.end());
  return g.push(
      std::move(O),
      [&g, q, k, v, spans = std::move(spans), offset = std::move(offset),
       probs = std::move(probs), mult = std::move(mult), n_heads, dh, d, sc](std::uint32_t self) {
        const auto& dO = g.grad(self);
        const auto& Qv = g.value(q);
        const auto& Kv = g.value(k);
        const auto& Vv = g.value(v);
        Tensor<Real>* dQ = g.needs_grad(q) ? &g.grad(q.id) : nullptr;
        Tensor<Real>* dK = g.needs_grad(k) ? &g.grad(k.id) : nullptr;
        Tensor<Real>* dV = g.needs_grad(v) ? &g.grad(v.id) : nullptr;
        std::vector<Real> dp;
        for (std::size_t i = 0; i < spans.size(); ++i) {
          const auto sp = spans[i];
          const std::size_t L = sp.size();
          dp.assign(L, Real(0));
          for (std::size_t h = 0; h < n_heads; ++h) {
            const Real* p = probs.data() + offset[i] + h * L;
            const Real* mlt = mult.empty() ? nullptr : mult.data() + offset[i] + h * L;
            const Real* doi = dO.ptr() + i * d + h * dh;
            Real dot = 0;
            for (std::size_t t = 0; t < L; ++t) {
              const std::size_t j = sp.begin + t;
              const Real m = mlt ? mlt[t] : Real(1);
              const Real* vj = Vv.ptr() + j * d + h * dh;
              Real g_w = 0;
              for (std::size_t c = 0; c < dh; ++c) g_w += doi[c] * vj[c];
              dp[t] = g_w * m;
              dot += p[t] * dp[t];
              if (dV) {
                Real* dvj = dV->ptr() + j * d + h * dh;
                const Real w = p[t] * m;
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += w * doi[c];
              }
            }
            const Real* qi = Qv.ptr() + i * d + h * dh;
            Real* dqi = dQ ? dQ->ptr() + i * d + h * dh : nullptr;
            for (std::size_t t = 0; t < L; ++t) {
              const std::size_t j = sp.begin + t;
              const Real ds = p[t] * (dp[t] - dot) * sc;
              const Real* kj = Kv.ptr() + j * d + h * dh;
              if (dqi)
                for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
              if (dK) {
                Real* dkj = dK->ptr() + j * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
              }
            }
          }
        }
      },
      g.needs_grad(q) || g.needs_grad(k) || g.needs_grad(v));
}

template <class Real>
std::vector<double> row_cross_entropy(const Tensor<Real>& logits, std::span<const int> targets) {
  if (targets.size() != logits.rows())
    throw std::invalid_argument("cross entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(logits.rows()) + " rows");
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (targets[i] < 0 || std::size_t(targets[i]) >= logits.cols())
      throw std::out_of_range("cross entropy: target " + std::to_string(targets[i]) +
                              " outside " + std::to_string(logits.cols()) + " classes");
    auto x = logits.row(i);
    const double mx = double(*std::max_element(x.begin(), x.end()));
    double z = 0;
    for (Real v : x) z += std::exp(double(v) - mx);
    out[i] = mx + std::log(z) - double(x[std::size_t(targets[i])]);
  }
  return out;
}

template <class Real>
Var<Real> softmax_cross_entropy(Var<Real> logits, std::span<const int> targets) {
  auto& g = *logits.graph;
  const auto& X = logits.value();
  const auto per_row = row_cross_entropy(X, targets);
  double total = 0;
  for (double l : per_row) total += l;
  std::vector<int> tv(targets.begin(), targets.end());
  return g.push(
      Tensor<Real>(1, 1, Real(total)),
      [&g, logits, tv = std::move(tv)](std::uint32_t self) {
        const Real d = g.grad(self)[0];
        const auto& Xv = g.value(logits);
        auto& dX = g.grad(logits.id);
        for (std::size_t i = 0; i < Xv.rows(); ++i) {
          auto x = Xv.row(i);
          const Real mx = *std::max_element(x.begin(), x.end());
          Real z = 0;
          for (Real v : x) z += std::exp(v - mx);
          for (std::size_t j = 0; j < x.size(); ++j) dX(i, j) += d * std::exp(x[j] - mx) / z;
          dX(i, std::size_t(tv[i])) -= d;
        }
      },
      g.needs_grad(logits));
}

#define ADT_INSTANTIATE_OPS(R)                                                                \
  template Var<R> matmul(Var<R>, Var<R>);                                                     \
  template Var<R> linear(Var<R>, Var<R>, Var<R>);                                             \
  template Var<R> add(Var<R>, Var<R>);                                                        \
  template Var<R> add_row(Var<R>, Var<R>);                                                    \
  template Var<R> scale(Var<R>, double);                                                      \
  template Var<R> relu(Var<R>);                                                               \
  template Var<R> softmax(Var<R>);                                                            \
  template Var<R> layer_norm(Var<R>, Var<R>, Var<R>, double);                                 \
  template Var<R> embedding_lookup(Var<R>, std::span<const int>);                             \
  template Var<R> concat(Var<R>, Var<R>);                                                     \
  template Var<R> mean_pool(Var<R>, std::span<const RowSpan>);                                \
  template Var<R> max_pool(Var<R>, std::span<const RowSpan>);                                 \
  template Var<R> dropout(Var<R>, double);                                                    \
  template Var<R> gather_rows(Var<R>, std::span<const std::size_t>);                          \
  template Var<R> overwrite_rows(Var<R>, Var<R>, std::span<const std::size_t>);               \
  template Var<R> sum(Var<R>);                                                                \
  template Var<R> attention(Var<R>, Var<R>, Var<R>, std::span<const RowSpan>, std::size_t,    \
                            double);                                                          \
  template Var<R> softmax_cross_entropy(Var<R>, std::span<const int>);                        \
  template std::vector<double> row_cross_entropy(const Tensor<R>&, std::span<const int>);

ADT_INSTANTIATE_OPS(float)
ADT_INSTANTIATE_OPS(double)

}  // namespace adt
