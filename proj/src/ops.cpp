#include "mutflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mutflow/error.hpp"
#include "mutflow/simd/kernels.hpp"

namespace mutflow::ops {
namespace {

const simd::KernelTable& kern() { return simd::active_kernels(); }

Graph& graph_of(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw ContractError(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

[[noreturn]] void shape_fail(Graph& g, const char* op, const std::string& detail) {
  throw ShapeError("node #" + std::to_string(g.size()) + " (" + op + "): " + detail);
}

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa, sb;
};

Broadcast plan(Graph& g, const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Broadcast p;
  p.out.assign(r, 1);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  const auto sta = contiguous_strides(a);
  const auto stb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::ptrdiff_t ia = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - a.size());
    const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - b.size());
    const std::size_t da = ia >= 0 ? a[ia] : 1;
    const std::size_t db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      shape_fail(g, op, "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    p.out[i] = std::max(da, db);
    if (ia >= 0 && da == p.out[i]) p.sa[i] = sta[ia];
    if (ib >= 0 && db == p.out[i]) p.sb[i] = stb[ib];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in row-major order.
template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t r = p.out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = p.out[r - 1];
  const std::size_t sai = p.sa[r - 1];
  const std::size_t sbi = p.sb[r - 1];
  const std::size_t outer = shape_size(p.out) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0, o = 0;
  for (std::size_t blk = 0; blk < outer; ++blk) {
    for (std::size_t j = 0; j < inner; ++j) f(o++, ia + j * sai, ib + j * sbi);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * p.out[d];
      ib -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinKind { add, sub, mul, div };

const char* bin_name(BinKind k) {
  switch (k) {
    case BinKind::add:
      return "add";
    case BinKind::sub:
      return "sub";
    case BinKind::mul:
      return "mul";
    case BinKind::div:
      return "div";
  }
  return "?";
}

Var binary(BinKind kind, Var a, Var b) {
  const char* name = bin_name(kind);
  Graph& g = graph_of(a, b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();

  if (av.shape() == bv.shape()) {
    Tensor out(av.shape());
    const std::size_t n = av.size();
    switch (kind) {
      case BinKind::add:
        kern().add(av.data(), bv.data(), out.data(), n);
        break;
      case BinKind::mul:
        kern().mul(av.data(), bv.data(), out.data(), n);
        break;
      case BinKind::sub:
        for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
        break;
      case BinKind::div:
        for (std::size_t i = 0; i < n; ++i) out[i] = av[i] / bv[i];
        break;
    }
    return g.record(name, std::move(out), {a.id, b.id}, [kind, ia = a.id, ib = b.id](Graph& g, std::size_t self) {
      const Tensor& go = g.grad_buffer(self);
      const std::size_t n = go.size();
      if (g.requires_grad(ia)) {
        Tensor& ga = g.grad_buffer(ia);
        switch (kind) {
          case BinKind::add:
          case BinKind::sub:
            kern().accumulate(go.data(), ga.data(), n);
            break;
          case BinKind::mul: {
            const Tensor& bv = g.value(ib);
            for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * bv[i];
            break;
          }
          case BinKind::div: {
            const Tensor& bv = g.value(ib);
            for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] / bv[i];
            break;
          }
        }
      }
      if (g.requires_grad(ib)) {
        Tensor& gb = g.grad_buffer(ib);
        switch (kind) {
          case BinKind::add:
            kern().accumulate(go.data(), gb.data(), n);
            break;
          case BinKind::sub:
            kern().axpy(-1.0, go.data(), gb.data(), n);
            break;
          case BinKind::mul: {
            const Tensor& av = g.value(ia);
            for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * av[i];
            break;
          }
          case BinKind::div: {
            const Tensor& av = g.value(ia);
            const Tensor& bv = g.value(ib);
            for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i] * av[i] / (bv[i] * bv[i]);
            break;
          }
        }
      }
    });
  }

  Broadcast p = plan(g, name, av.shape(), bv.shape());
  Tensor out(p.out);
  const double* pa = av.data();
  const double* pb = bv.data();
  double* po = out.data();
  switch (kind) {
    case BinKind::add:
      for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] + pb[j]; });
      break;
    case BinKind::sub:
      for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] - pb[j]; });
      break;
    case BinKind::mul:
      for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] * pb[j]; });
      break;
    case BinKind::div:
      for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] / pb[j]; });
      break;
  }
  return g.record(name, std::move(out), {a.id, b.id},
                  [kind, p, ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const double* go = g.grad_buffer(self).data();
    const double* pa = g.value(ia).data();
    const double* pb = g.value(ib).data();
    const bool need_a = g.requires_grad(ia);
    const bool need_b = g.requires_grad(ib);
    double* ga = need_a ? g.grad_buffer(ia).data() : nullptr;
    double* gb = need_b ? g.grad_buffer(ib).data() : nullptr;
    for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) {
      const double gv = go[o];
      switch (kind) {
        case BinKind::add:
          if (ga) ga[i] += gv;
          if (gb) gb[j] += gv;
          break;
        case BinKind::sub:
          if (ga) ga[i] += gv;
          if (gb) gb[j] -= gv;
          break;
        case BinKind::mul:
          if (ga) ga[i] += gv * pb[j];
          if (gb) gb[j] += gv * pa[i];
          break;
        case BinKind::div:
          if (ga) ga[i] += gv / pb[j];
          if (gb) gb[j] -= gv * pa[i] / (pb[j] * pb[j]);
          break;
      }
    });
  });
}

template <class F, class D>
Var unary(const char* name, Var x, F f, D deriv) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return g.record(name, std::move(out), {x.id}, [deriv, ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& xv = g.value(ix);
    const Tensor& yv = g.value(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * deriv(xv[i], yv[i]);
  });
}

// Splits a shape around an axis into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  const auto& kt = kern();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = C + i * n;
    const double* ai = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s != 0.0) kt.axpy(s, B + p * n, ci, n);
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  const auto& kt = kern();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) C[i * n + j] += kt.dot(A + i * k, B + j * k, k);
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const double* A, const double* B, double* C, std::size_t k, std::size_t m, std::size_t n) {
  const auto& kt = kern();
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = A + p * m;
    const double* bp = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = ap[i];
      if (s != 0.0) kt.axpy(s, bp, C + i * n, n);
    }
  }
}

void require_rank(Graph& g, const char* op, Var x, std::size_t rank) {
  if (x.value().rank() != rank) {
    shape_fail(g, op, "expected rank " + std::to_string(rank) + ", got " + shape_string(x.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) { return binary(BinKind::add, a, b); }
Var sub(Var a, Var b) { return binary(BinKind::sub, a, b); }
Var mul(Var a, Var b) { return binary(BinKind::mul, a, b); }
Var div(Var a, Var b) { return binary(BinKind::div, a, b); }

Var scale(Var x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary("add_scalar", x, [offset](double v) { return v + offset; },
               [](double, double) { return 1.0; });
}

Var neg(Var x) { return scale(x, -1.0); }

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul");
  require_rank(g, "matmul", a, 2);
  require_rank(g, "matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    shape_fail(g, "matmul", shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  return g.record("matmul", std::move(out), {a.id, b.id},
                  [m, k, n, ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const double* go = g.grad_buffer(self).data();
    if (g.requires_grad(ia)) gemm_nt(go, g.value(ib).data(), g.grad_buffer(ia).data(), m, n, k);
    if (g.requires_grad(ib)) gemm_tn(g.value(ia).data(), go, g.grad_buffer(ib).data(), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul_nt");
  require_rank(g, "matmul_nt", a, 2);
  require_rank(g, "matmul_nt", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    shape_fail(g, "matmul_nt", shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  }
  Tensor out({m, n});
  gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
  return g.record("matmul_nt", std::move(out), {a.id, b.id},
                  [m, k, n, ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const double* go = g.grad_buffer(self).data();
    if (g.requires_grad(ia)) gemm_nn(go, g.value(ib).data(), g.grad_buffer(ia).data(), m, n, k);
    if (g.requires_grad(ib)) gemm_tn(go, g.value(ia).data(), g.grad_buffer(ib).data(), m, n, k);
  });
}

Var transpose(Var x) {
  Graph& g = *x.graph;
  require_rank(g, "transpose", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  const Tensor& xv = x.value();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return g.record("transpose", std::move(out), {x.id}, [r, c, ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[j * r + i];
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = *x.graph;
  if (shape_size(shape) != x.value().size()) {
    shape_fail(g, "reshape", shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  return g.record("reshape", x.value().reshaped(std::move(shape)), {x.id},
                  [ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    kern().accumulate(go.data(), g.grad_buffer(ix).data(), go.size());
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  Graph& g = *parts.front().graph;
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) shape_fail(g, "concat", "axis out of range for " + shape_string(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Var& v : parts) {
    if (v.graph != &g) throw ContractError("concat: operands belong to different graphs");
    const Shape& s = v.shape();
    if (s.size() != s0.size()) shape_fail(g, "concat", "rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) {
        shape_fail(g, "concat", shape_string(s) + " vs " + shape_string(s0));
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& v : parts) {
    const AxisSplit ps = split_axis(v.shape(), axis);
    const std::size_t chunk = ps.len * ps.inner;
    const double* src = v.value().data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(src + o * chunk, chunk, out.data() + o * os.len * os.inner + off * os.inner);
    }
    ids.push_back(v.id);
    offsets.push_back(off);
    off += ps.len;
  }
  auto parents = ids;
  return g.record("concat", std::move(out), std::move(parents),
                  [ids, offsets, axis, os](Graph& g, std::size_t self) {
    const double* go = g.grad_buffer(self).data();
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (!g.requires_grad(ids[t])) continue;
      const AxisSplit ps = split_axis(g.value(ids[t]).shape(), axis);
      const std::size_t chunk = ps.len * ps.inner;
      double* gx = g.grad_buffer(ids[t]).data();
      for (std::size_t o = 0; o < os.outer; ++o) {
        kern().accumulate(go + o * os.len * os.inner + offsets[t] * os.inner, gx + o * chunk, chunk);
      }
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    shape_fail(g, "slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                               ") on axis " + std::to_string(axis) + " of " + shape_string(s));
  }
  const AxisSplit is = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * is.inner;
  Tensor out(out_shape);
  const double* src = x.value().data();
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(src + o * is.len * is.inner + begin * is.inner, chunk, out.data() + o * chunk);
  }
  return g.record("slice", std::move(out), {x.id}, [is, begin, chunk, ix = x.id](Graph& g, std::size_t self) {
    const double* go = g.grad_buffer(self).data();
    double* gx = g.grad_buffer(ix).data();
    for (std::size_t o = 0; o < is.outer; ++o) {
      kern().accumulate(go + o * chunk, gx + o * is.len * is.inner + begin * is.inner, chunk);
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if (s.empty() || rows.empty()) shape_fail(g, "gather_rows", "needs rank >= 1 and at least one row");
  const std::size_t width = x.value().size() / s[0];
  Shape out_shape = s;
  out_shape[0] = rows.size();
  Tensor out(out_shape);
  const double* src = x.value().data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= s[0]) shape_fail(g, "gather_rows", "row index " + std::to_string(rows[r]) + " out of range");
    std::copy_n(src + rows[r] * width, width, out.data() + r * width);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.record("gather_rows", std::move(out), {x.id}, [idx, width, ix = x.id](Graph& g, std::size_t self) {
    const double* go = g.grad_buffer(self).data();
    double* gx = g.grad_buffer(ix).data();
    for (std::size_t r = 0; r < idx.size(); ++r) kern().accumulate(go + r * width, gx + idx[r] * width, width);
  });
}

Var pick_columns(Var x, std::span<const std::size_t> cols) {
  Graph& g = *x.graph;
  require_rank(g, "pick_columns", x, 2);
  const std::size_t m = x.dim(0), k = x.dim(1);
  if (cols.size() != m) shape_fail(g, "pick_columns", "need one column index per row");
  Tensor out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    if (cols[r] >= k) shape_fail(g, "pick_columns", "column index out of range");
    out[r] = x.value()[r * k + cols[r]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return g.record("pick_columns", std::move(out), {x.id}, [idx, k, ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[r * k + idx[r]] += go[r];
  });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x,
               [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var x) {
  return unary("softplus", x,
               [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
               [](double v, double) {
                 return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
               });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
  return unary("sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var sin(Var x) {
  return unary("sin", x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var cos(Var x) {
  return unary("cos", x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Var softmax(Var x) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if (s.empty()) shape_fail(g, "softmax", "needs rank >= 1");
  const std::size_t w = s.back();
  const std::size_t rows = x.value().size() / w;
  const Tensor& xv = x.value();
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * w;
    double* yr = out.data() + r * w;
    const double mx = *std::max_element(xr, xr + w);
    double z = 0.0;
    for (std::size_t j = 0; j < w; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < w; ++j) yr[j] /= z;
  }
  return g.record("softmax", std::move(out), {x.id}, [w, rows, ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = go.data() + r * w;
      const double* yr = y.data() + r * w;
      const double dotv = kern().dot(gr, yr, w);
      double* xr = gx.data() + r * w;
      for (std::size_t j = 0; j < w; ++j) xr[j] += yr[j] * (gr[j] - dotv);
    }
  });
}

Var log_softmax(Var x) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if (s.empty()) shape_fail(g, "log_softmax", "needs rank >= 1");
  const std::size_t w = s.back();
  const std::size_t rows = x.value().size() / w;
  const Tensor& xv = x.value();
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * w;
    double* yr = out.data() + r * w;
    const double mx = *std::max_element(xr, xr + w);
    double z = 0.0;
    for (std::size_t j = 0; j < w; ++j) z += std::exp(xr[j] - mx);
    const double lz = std::log(z);
    for (std::size_t j = 0; j < w; ++j) yr[j] = (xr[j] - mx) - lz;
  }
  return g.record("log_softmax", std::move(out), {x.id}, [w, rows, ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = go.data() + r * w;
      const double* yr = y.data() + r * w;
      const double gsum = kern().sum(gr, w);
      double* xr = gx.data() + r * w;
      for (std::size_t j = 0; j < w; ++j) xr[j] += gr[j] - std::exp(yr[j]) * gsum;
    }
  });
}

Var layer_norm(Var x, double eps) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if (s.empty()) shape_fail(g, "layer_norm", "needs rank >= 1");
  const std::size_t w = s.back();
  const std::size_t rows = x.value().size() / w;
  const Tensor& xv = x.value();
  Tensor out(s);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * w;
    double mu = 0.0;
    for (std::size_t j = 0; j < w; ++j) mu += xr[j];
    mu /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t j = 0; j < w; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(w);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = (xr[j] - mu) * inv_std[r];
  }
  return g.record("layer_norm", std::move(out), {x.id},
                  [w, rows, inv_std = std::move(inv_std), ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(ix);
    const double inv_w = 1.0 / static_cast<double>(w);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = go.data() + r * w;
      const double* yr = y.data() + r * w;
      const double gmean = kern().sum(gr, w) * inv_w;
      const double gy = kern().dot(gr, yr, w) * inv_w;
      double* xr = gx.data() + r * w;
      for (std::size_t j = 0; j < w; ++j) xr[j] += inv_std[r] * (gr[j] - gmean - yr[j] * gy);
    }
  });
}

Var max_axis(Var x, std::size_t axis, bool keepdim) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_fail(g, "max_axis", "axis out of range for " + shape_string(s));
  const AxisSplit as = split_axis(s, axis);
  Shape out_shape = s;
  if (keepdim) out_shape[axis] = 1; else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  std::vector<std::size_t> arg(as.outer * as.inner);
  const double* xv = x.value().data();
  for (std::size_t o = 0; o < as.outer; ++o) {
    for (std::size_t i = 0; i < as.inner; ++i) {
      std::size_t best = 0;
      double bv = xv[o * as.len * as.inner + i];
      for (std::size_t l = 1; l < as.len; ++l) {
        const double v = xv[(o * as.len + l) * as.inner + i];
        if (v > bv) {
          bv = v;
          best = l;
        }
      }
      out[o * as.inner + i] = bv;
      arg[o * as.inner + i] = best;
    }
  }
  return g.record("max_axis", std::move(out), {x.id}, [as, arg = std::move(arg), ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t o = 0; o < as.outer; ++o)
      for (std::size_t i = 0; i < as.inner; ++i)
        gx[(o * as.len + arg[o * as.inner + i]) * as.inner + i] += go[o * as.inner + i];
  });
}

Var sum(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  return g.record("sum", Tensor::scalar(kern().sum(xv.data(), xv.size())), {x.id},
                  [ix = x.id](Graph& g, std::size_t self) {
    const double gv = g.grad_buffer(self)[0];
    Tensor& gx = g.grad_buffer(ix);
    for (double& v : gx.values()) v += gv;
  });
}

Var sum_axis(Var x, std::size_t axis, bool keepdim) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_fail(g, "sum_axis", "axis out of range for " + shape_string(s));
  const AxisSplit as = split_axis(s, axis);
  Shape out_shape = s;
  if (keepdim) out_shape[axis] = 1; else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  const double* xv = x.value().data();
  for (std::size_t o = 0; o < as.outer; ++o)
    for (std::size_t l = 0; l < as.len; ++l)
      kern().accumulate(xv + (o * as.len + l) * as.inner, out.data() + o * as.inner, as.inner);
  return g.record("sum_axis", std::move(out), {x.id}, [as, ix = x.id](Graph& g, std::size_t self) {
    const double* go = g.grad_buffer(self).data();
    double* gx = g.grad_buffer(ix).data();
    for (std::size_t o = 0; o < as.outer; ++o)
      for (std::size_t l = 0; l < as.len; ++l)
        kern().accumulate(go + o * as.inner, gx + (o * as.len + l) * as.inner, as.inner);
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var squared_error(Var a, Var b) {
  Graph& g = graph_of(a, b, "squared_error");
  if (a.shape() != b.shape()) {
    shape_fail(g, "squared_error", shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  return g.record("squared_error", Tensor::scalar(acc / static_cast<double>(n)), {a.id, b.id},
                  [n, ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const double gv = g.grad_buffer(self)[0] * 2.0 / static_cast<double>(n);
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += gv * (av[i] - bv[i]);
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i) gb[i] -= gv * (av[i] - bv[i]);
    }
  });
}

Var apply_frames(Var local, const Tensor& rotations, const Tensor& translations) {
  Graph& g = *local.graph;
  require_rank(g, "apply_frames", local, 2);
  const std::size_t n = local.dim(0), w = local.dim(1);
  if (w % 3 != 0 || rotations.shape() != Shape{n, 9} || translations.shape() != Shape{n, 3}) {
    shape_fail(g, "apply_frames", "local " + shape_string(local.shape()) + " rotations " +
                                      shape_string(rotations.shape()) + " translations " +
                                      shape_string(translations.shape()));
  }
  const std::size_t pts = w / 3;
  const Tensor& lv = local.value();
  Tensor out({n, w});
  for (std::size_t i = 0; i < n; ++i) {
    const double* R = rotations.data() + 9 * i;
    const double* t = translations.data() + 3 * i;
    for (std::size_t p = 0; p < pts; ++p) {
      const double* l = lv.data() + i * w + 3 * p;
      double* o = out.data() + i * w + 3 * p;
      for (std::size_t a = 0; a < 3; ++a) o[a] = R[3 * a] * l[0] + R[3 * a + 1] * l[1] + R[3 * a + 2] * l[2] + t[a];
    }
  }
  return g.record("apply_frames", std::move(out), {local.id},
                  [n, w, pts, rotations, il = local.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_buffer(self);
    Tensor& gl = g.grad_buffer(il);
    for (std::size_t i = 0; i < n; ++i) {
      const double* R = rotations.data() + 9 * i;
      for (std::size_t p = 0; p < pts; ++p) {
        const double* gi = go.data() + i * w + 3 * p;
        double* o = gl.data() + i * w + 3 * p;
        for (std::size_t b = 0; b < 3; ++b) o[b] += R[b] * gi[0] + R[3 + b] * gi[1] + R[6 + b] * gi[2];
      }
    }
  });
}

}  // namespace mutflow::ops
