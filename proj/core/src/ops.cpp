#include "nash/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace nash::num {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

bool needs_grad(const std::shared_ptr<TensorImpl>& t) { return t->in_graph(); }

// Records the op if anything in `inputs` participates in the graph.
void record(Tensor& out, std::initializer_list<Tensor> inputs,
            std::function<void()> backward) {
  Graph* g = Graph::current();
  if (!g) return;
  bool any = false;
  std::vector<int> parents;
  for (const Tensor& t : inputs) {
    if (!t.defined()) continue;
    if (t.impl()->in_graph()) any = true;
    if (t.impl()->node_id >= 0) parents.push_back(t.impl()->node_id);
  }
  if (!any) return;
  out.impl()->node_id = g->record(std::move(parents), std::move(backward), out.impl());
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

// Leading dims flattened to rows, last dim is the column count.
std::pair<int64_t, int64_t> as_rows(const Tensor& x) {
  if (x.ndim() < 1) throw ShapeError("expected at least 1-d tensor");
  int64_t cols = x.shape().back();
  return {x.numel() / cols, cols};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  record(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    const auto& g = oi->grad;
    if (needs_grad(ai)) {
      auto& ga = ai->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (needs_grad(bi)) {
      auto& gb = bi->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  record(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    const auto& g = oi->grad;
    if (needs_grad(ai)) {
      auto& ga = ai->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (needs_grad(bi)) {
      auto& gb = bi->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  record(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    const auto& g = oi->grad;
    if (needs_grad(ai)) {
      auto& ga = ai->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->values[i];
    }
    if (needs_grad(bi)) {
      auto& gb = bi->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->values[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = c * xv[i];
  record(out, {x}, [xi = x.impl(), oi = out.impl(), c] {
    if (!needs_grad(xi)) return;
    auto& gx = xi->ensure_grad();
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
  return out;
}

Tensor add_const(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + c;
  record(out, {x}, [xi = x.impl(), oi = out.impl()] {
    if (!needs_grad(xi)) return;
    auto& gx = xi->ensure_grad();
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor mul_index(const Tensor& x, const Tensor& s, int64_t index) {
  if (index < 0 || index >= s.numel()) throw ShapeError("mul_index: index out of range");
  const double sv = s.values()[static_cast<size_t>(index)];
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = sv * xv[i];
  record(out, {x, s}, [xi = x.impl(), si = s.impl(), oi = out.impl(), sv, index] {
    const auto& g = oi->grad;
    if (needs_grad(xi)) {
      auto& gx = xi->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
    }
    if (needs_grad(si)) {
      double acc = 0.0;
      for (size_t i = 0; i < g.size(); ++i) acc += g[i] * xi->values[i];
      si->ensure_grad()[static_cast<size_t>(index)] += acc;
    }
  });
  return out;
}

Tensor mul_lastdim(const Tensor& x, const Tensor& v) {
  auto [rows, cols] = as_rows(x);
  if (v.numel() != cols)
    throw ShapeError("mul_lastdim: vector length " + std::to_string(v.numel()) +
                     " vs last extent " + std::to_string(cols));
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  const auto& vv = v.values();
  auto& ov = out.values();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c)
      ov[static_cast<size_t>(r * cols + c)] =
          xv[static_cast<size_t>(r * cols + c)] * vv[static_cast<size_t>(c)];
  record(out, {x, v}, [xi = x.impl(), vi = v.impl(), oi = out.impl(), rows, cols] {
    const auto& g = oi->grad;
    if (needs_grad(xi)) {
      auto& gx = xi->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
          gx[static_cast<size_t>(r * cols + c)] +=
              g[static_cast<size_t>(r * cols + c)] * vi->values[static_cast<size_t>(c)];
    }
    if (needs_grad(vi)) {
      auto& gv = vi->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
          gv[static_cast<size_t>(c)] += g[static_cast<size_t>(r * cols + c)] *
                                        xi->values[static_cast<size_t>(r * cols + c)];
    }
  });
  return out;
}

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (w.ndim() != 2) throw ShapeError("matmul: weight must be 2-d");
  auto [m, k] = as_rows(x);
  if (k != w.dim(0))
    throw ShapeError("matmul: inner extents " + std::to_string(k) + " vs " +
                     std::to_string(w.dim(0)));
  int64_t n = w.dim(1);
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor out = Tensor::zeros(out_shape);
  MapC X(x.values().data(), m, k);
  MapC W(w.values().data(), k, n);
  MapM O(out.values().data(), m, n);
  O.noalias() = X * W;
  record(out, {x, w}, [xi = x.impl(), wi = w.impl(), oi = out.impl(), m, k, n] {
    MapC G(oi->grad.data(), m, n);
    if (needs_grad(xi)) {
      MapM GX(xi->ensure_grad().data(), m, k);
      MapC W2(wi->values.data(), k, n);
      GX.noalias() += G * W2.transpose();
    }
    if (needs_grad(wi)) {
      MapM GW(wi->ensure_grad().data(), k, n);
      MapC X2(xi->values.data(), m, k);
      GW.noalias() += X2.transpose() * G;
    }
  });
  return out;
}

Tensor matmul_nt(const Tensor& x, const Tensor& w) {
  if (w.ndim() != 2) throw ShapeError("matmul_nt: weight must be 2-d");
  auto [m, d] = as_rows(x);
  if (d != w.dim(1))
    throw ShapeError("matmul_nt: inner extents " + std::to_string(d) + " vs " +
                     std::to_string(w.dim(1)));
  int64_t n = w.dim(0);
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor out = Tensor::zeros(out_shape);
  MapC X(x.values().data(), m, d);
  MapC W(w.values().data(), n, d);
  MapM O(out.values().data(), m, n);
  O.noalias() = X * W.transpose();
  record(out, {x, w}, [xi = x.impl(), wi = w.impl(), oi = out.impl(), m, d, n] {
    MapC G(oi->grad.data(), m, n);
    if (needs_grad(xi)) {
      MapM GX(xi->ensure_grad().data(), m, d);
      MapC W2(wi->values.data(), n, d);
      GX.noalias() += G * W2;
    }
    if (needs_grad(wi)) {
      MapM GW(wi->ensure_grad().data(), n, d);
      MapC X2(xi->values.data(), m, d);
      GW.noalias() += G.transpose() * X2;
    }
  });
  return out;
}

namespace {
void check_bmm(const Tensor& a, const Tensor& b, const char* op) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError(std::string(op) + ": expected matching 3-d batches, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
}
}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) {
  check_bmm(a, b, "bmm");
  int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(1) != k) throw ShapeError("bmm: inner extent mismatch");
  Tensor out = Tensor::zeros({B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    MapC A(a.values().data() + i * m * k, m, k);
    MapC Bm(b.values().data() + i * k * n, k, n);
    MapM O(out.values().data() + i * m * n, m, n);
    O.noalias() = A * Bm;
  }
  record(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), B, m, k, n] {
    for (int64_t i = 0; i < B; ++i) {
      MapC G(oi->grad.data() + i * m * n, m, n);
      if (needs_grad(ai)) {
        MapM GA(ai->ensure_grad().data() + i * m * k, m, k);
        MapC Bm(bi->values.data() + i * k * n, k, n);
        GA.noalias() += G * Bm.transpose();
      }
      if (needs_grad(bi)) {
        MapM GB(bi->ensure_grad().data() + i * k * n, k, n);
        MapC A(ai->values.data() + i * m * k, m, k);
        GB.noalias() += A.transpose() * G;
      }
    }
  });
  return out;
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  check_bmm(a, b, "bmm_nt");
  int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  if (b.dim(2) != k) throw ShapeError("bmm_nt: inner extent mismatch");
  Tensor out = Tensor::zeros({B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    MapC A(a.values().data() + i * m * k, m, k);
    MapC Bm(b.values().data() + i * n * k, n, k);
    MapM O(out.values().data() + i * m * n, m, n);
    O.noalias() = A * Bm.transpose();
  }
  record(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), B, m, k, n] {
    for (int64_t i = 0; i < B; ++i) {
      MapC G(oi->grad.data() + i * m * n, m, n);
      if (needs_grad(ai)) {
        MapM GA(ai->ensure_grad().data() + i * m * k, m, k);
        MapC Bm(bi->values.data() + i * n * k, n, k);
        GA.noalias() += G * Bm;
      }
      if (needs_grad(bi)) {
        MapM GB(bi->ensure_grad().data() + i * n * k, n, k);
        MapC A(ai->values.data() + i * m * k, m, k);
        GB.noalias() += G.transpose() * A;
      }
    }
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ShapeError("softmax: bad axis");
  int64_t extent = x.dim(axis);
  int64_t inner = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= x.dim(i);
  int64_t outer = x.numel() / (extent * inner);

  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * extent * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t e = 0; e < extent; ++e)
        mx = std::max(mx, xv[static_cast<size_t>(base + e * inner)]);
      double denom = 0.0;
      for (int64_t e = 0; e < extent; ++e) {
        double v = std::exp(xv[static_cast<size_t>(base + e * inner)] - mx);
        ov[static_cast<size_t>(base + e * inner)] = v;
        denom += v;
      }
      for (int64_t e = 0; e < extent; ++e) ov[static_cast<size_t>(base + e * inner)] /= denom;
    }
  }
  record(out, {x}, [xi = x.impl(), oi = out.impl(), outer, extent, inner] {
    if (!needs_grad(xi)) return;
    auto& gx = xi->ensure_grad();
    const auto& g = oi->grad;
    const auto& y = oi->values;
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * extent * inner + in;
        double dot = 0.0;
        for (int64_t e = 0; e < extent; ++e) {
          size_t idx = static_cast<size_t>(base + e * inner);
          dot += g[idx] * y[idx];
        }
        for (int64_t e = 0; e < extent; ++e) {
          size_t idx = static_cast<size_t>(base + e * inner);
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  auto [rows, cols] = as_rows(x);
  if (gain.numel() != cols || bias.numel() != cols)
    throw ShapeError("layer_norm: gain/bias length must equal last extent");
  Tensor out = Tensor::zeros(x.shape());
  // saved per-row statistics for backward
  auto xhat = std::make_shared<std::vector<double>>(x.values().size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = xv.data() + r * cols;
    double mean = 0.0;
    for (int64_t c = 0; c < cols; ++c) mean += px[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      double d = px[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = inv;
    for (int64_t c = 0; c < cols; ++c) {
      double h = (px[c] - mean) * inv;
      (*xhat)[static_cast<size_t>(r * cols + c)] = h;
      ov[static_cast<size_t>(r * cols + c)] = h * gv[static_cast<size_t>(c)] + bv[static_cast<size_t>(c)];
    }
  }
  record(out, {x, gain, bias},
         [xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl(), xhat,
          inv_std, rows, cols] {
           const auto& g = oi->grad;
           for (int64_t r = 0; r < rows; ++r) {
             const double* gr = g.data() + r * cols;
             const double* hr = xhat->data() + r * cols;
             if (needs_grad(gi)) {
               auto& gg = gi->ensure_grad();
               for (int64_t c = 0; c < cols; ++c) gg[static_cast<size_t>(c)] += gr[c] * hr[c];
             }
             if (needs_grad(bi)) {
               auto& gb = bi->ensure_grad();
               for (int64_t c = 0; c < cols; ++c) gb[static_cast<size_t>(c)] += gr[c];
             }
             if (needs_grad(xi)) {
               auto& gx = xi->ensure_grad();
               double m1 = 0.0, m2 = 0.0;
               for (int64_t c = 0; c < cols; ++c) {
                 double dh = gr[c] * gi->values[static_cast<size_t>(c)];
                 m1 += dh;
                 m2 += dh * hr[c];
               }
               m1 /= static_cast<double>(cols);
               m2 /= static_cast<double>(cols);
               double inv = (*inv_std)[static_cast<size_t>(r)];
               for (int64_t c = 0; c < cols; ++c) {
                 double dh = gr[c] * gi->values[static_cast<size_t>(c)];
                 gx[static_cast<size_t>(r * cols + c)] += inv * (dh - m1 - hr[c] * m2);
               }
             }
           }
         });
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) {
    double phi = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
    ov[i] = xv[i] * phi;
  }
  record(out, {x}, [xi = x.impl(), oi = out.impl()] {
    if (!needs_grad(xi)) return;
    auto& gx = xi->ensure_grad();
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i) {
      double v = xi->values[i];
      double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (phi + v * pdf);
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double p, bool train, Rng* rng) {
  if (!train || p <= 0.0) {
    // identity call site; still creates a pass-through node so the op is
    // uniformly present in the graph and in profiles
    Tensor out = Tensor::zeros(x.shape());
    out.values() = x.values();
    record(out, {x}, [xi = x.impl(), oi = out.impl()] {
      if (!needs_grad(xi)) return;
      auto& gx = xi->ensure_grad();
      const auto& g = oi->grad;
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return out;
  }
  if (p >= 1.0) throw ContractError("dropout: p must be < 1");
  if (!rng) throw ContractError("dropout: training mode requires an rng");
  const double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(x.values().size());
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) {
    double m = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    (*mask)[i] = m;
    ov[i] = xv[i] * m;
  }
  record(out, {x}, [xi = x.impl(), oi = out.impl(), mask] {
    if (!needs_grad(xi)) return;
    auto& gx = xi->ensure_grad();
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
  return out;
}

Tensor embedding(const Tensor& table, const Shape& ids_shape, std::span<const int> ids) {
  if (table.ndim() != 2) throw ShapeError("embedding: table must be 2-d");
  if (static_cast<int64_t>(ids.size()) != numel(ids_shape))
    throw ShapeError("embedding: id count does not match ids_shape");
  int64_t V = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= V) throw ContractError("embedding: id out of vocabulary");
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  Tensor out = Tensor::zeros(out_shape);
  const auto& tv = table.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<int64_t>(ids[i]) * d, d, ov.data() + static_cast<int64_t>(i) * d);
  auto ids_copy = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  record(out, {table}, [ti = table.impl(), oi = out.impl(), ids_copy, d] {
    if (!needs_grad(ti)) return;
    auto& gt = ti->ensure_grad();
    const auto& g = oi->grad;
    for (size_t i = 0; i < ids_copy->size(); ++i) {
      double* dst = gt.data() + static_cast<int64_t>((*ids_copy)[i]) * d;
      const double* src = g.data() + static_cast<int64_t>(i) * d;
      for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::scalar(0.0);
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  record(out, {x}, [xi = x.impl(), oi = out.impl()] {
    if (!needs_grad(xi)) return;
    auto& gx = xi->ensure_grad();
    const double g = oi->grad[0];
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return out;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const double> mask) {
  auto [M, V] = as_rows(logits);
  if (static_cast<int64_t>(targets.size()) != M || static_cast<int64_t>(mask.size()) != M)
    throw ShapeError("cross_entropy: targets/mask length must equal row count");
  double wsum = 0.0;
  for (double w : mask) wsum += w;
  if (wsum <= 0.0) throw ContractError("cross_entropy: empty mask");

  // saved softmax probabilities
  auto probs = std::make_shared<std::vector<double>>(logits.values().size());
  const auto& lv = logits.values();
  double loss = 0.0;
  for (int64_t r = 0; r < M; ++r) {
    if (mask[static_cast<size_t>(r)] == 0.0) continue;
    const double* row = lv.data() + r * V;
    double mx = row[0];
    for (int64_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    double denom = 0.0;
    for (int64_t v = 0; v < V; ++v) denom += std::exp(row[v] - mx);
    double log_denom = std::log(denom) + mx;
    for (int64_t v = 0; v < V; ++v)
      (*probs)[static_cast<size_t>(r * V + v)] = std::exp(row[v] - log_denom);
    int t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= V) throw ContractError("cross_entropy: target out of range");
    loss += mask[static_cast<size_t>(r)] * (log_denom - row[t]);
  }
  Tensor out = Tensor::scalar(loss / wsum);
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  auto msk = std::make_shared<std::vector<double>>(mask.begin(), mask.end());
  record(out, {logits}, [li = logits.impl(), oi = out.impl(), probs, tgt, msk, M, V, wsum] {
    if (!needs_grad(li)) return;
    auto& gl = li->ensure_grad();
    const double g = oi->grad[0] / wsum;
    for (int64_t r = 0; r < M; ++r) {
      double w = (*msk)[static_cast<size_t>(r)];
      if (w == 0.0) continue;
      const double* p = probs->data() + r * V;
      double* dst = gl.data() + r * V;
      for (int64_t v = 0; v < V; ++v) dst[v] += g * w * p[v];
      dst[(*tgt)[static_cast<size_t>(r)]] -= g * w;
    }
  });
  return out;
}

Tensor kl_divergence(const Tensor& student, const Tensor& teacher,
                     std::span<const double> mask, double temperature) {
  check_same_shape(student, teacher, "kl_divergence");
  auto [M, V] = as_rows(student);
  if (static_cast<int64_t>(mask.size()) != M)
    throw ShapeError("kl_divergence: mask length must equal row count");
  if (temperature <= 0.0) throw ContractError("kl_divergence: temperature must be > 0");
  double wsum = 0.0;
  for (double w : mask) wsum += w;
  if (wsum <= 0.0) throw ContractError("kl_divergence: empty mask");

  const double invT = 1.0 / temperature;
  auto logp = std::make_shared<std::vector<double>>(student.values().size());
  auto logq = std::make_shared<std::vector<double>>(student.values().size());
  auto row_kl = std::make_shared<std::vector<double>>(static_cast<size_t>(M));

  auto log_softmax_row = [&](const double* row, double* dst) {
    double mx = row[0];
    for (int64_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    double denom = 0.0;
    for (int64_t v = 0; v < V; ++v) denom += std::exp((row[v] - mx) * invT);
    double log_denom = std::log(denom);
    for (int64_t v = 0; v < V; ++v) dst[v] = (row[v] - mx) * invT - log_denom;
  };

  double loss = 0.0;
  for (int64_t r = 0; r < M; ++r) {
    if (mask[static_cast<size_t>(r)] == 0.0) continue;
    log_softmax_row(student.values().data() + r * V, logp->data() + r * V);
    log_softmax_row(teacher.values().data() + r * V, logq->data() + r * V);
    double kl = 0.0;
    for (int64_t v = 0; v < V; ++v) {
      size_t idx = static_cast<size_t>(r * V + v);
      kl += std::exp((*logp)[idx]) * ((*logp)[idx] - (*logq)[idx]);
    }
    (*row_kl)[static_cast<size_t>(r)] = kl;
    loss += mask[static_cast<size_t>(r)] * kl;
  }
  Tensor out = Tensor::scalar(loss / wsum);
  auto msk = std::make_shared<std::vector<double>>(mask.begin(), mask.end());
  record(out, {student},
         [si = student.impl(), oi = out.impl(), logp, logq, row_kl, msk, M, V, wsum, invT] {
           if (!needs_grad(si)) return;
           auto& gs = si->ensure_grad();
           const double g = oi->grad[0] / wsum;
           for (int64_t r = 0; r < M; ++r) {
             double w = (*msk)[static_cast<size_t>(r)];
             if (w == 0.0) continue;
             double kl = (*row_kl)[static_cast<size_t>(r)];
             double* dst = gs.data() + r * V;
             for (int64_t v = 0; v < V; ++v) {
               size_t idx = static_cast<size_t>(r * V + v);
               double p = std::exp((*logp)[idx]);
               dst[v] += g * w * invT * p * (((*logp)[idx] - (*logq)[idx]) - kl);
             }
           }
         });
  return out;
}

Tensor kl_divergence_reverse(const Tensor& student, const Tensor& teacher,
                             std::span<const double> mask, double temperature) {
  check_same_shape(student, teacher, "kl_divergence_reverse");
  auto [M, V] = as_rows(student);
  if (static_cast<int64_t>(mask.size()) != M)
    throw ShapeError("kl_divergence_reverse: mask length must equal row count");
  if (temperature <= 0.0) throw ContractError("kl_divergence_reverse: temperature must be > 0");
  double wsum = 0.0;
  for (double w : mask) wsum += w;
  if (wsum <= 0.0) throw ContractError("kl_divergence_reverse: empty mask");

  const double invT = 1.0 / temperature;
  auto p = std::make_shared<std::vector<double>>(student.values().size());  // student probs
  auto q = std::make_shared<std::vector<double>>(student.values().size());  // teacher probs

  auto softmax_row = [&](const double* row, double* dst, double* logdst) {
    double mx = row[0];
    for (int64_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    double denom = 0.0;
    for (int64_t v = 0; v < V; ++v) denom += std::exp((row[v] - mx) * invT);
    double log_denom = std::log(denom);
    for (int64_t v = 0; v < V; ++v) {
      double lp = (row[v] - mx) * invT - log_denom;
      if (logdst) logdst[v] = lp;
      dst[v] = std::exp(lp);
    }
  };

  std::vector<double> logp_row(static_cast<size_t>(V)), logq_row(static_cast<size_t>(V));
  double loss = 0.0;
  for (int64_t r = 0; r < M; ++r) {
    if (mask[static_cast<size_t>(r)] == 0.0) continue;
    softmax_row(student.values().data() + r * V, p->data() + r * V, logp_row.data());
    softmax_row(teacher.values().data() + r * V, q->data() + r * V, logq_row.data());
    double kl = 0.0;
    for (int64_t v = 0; v < V; ++v)
      kl += (*q)[static_cast<size_t>(r * V + v)] *
            (logq_row[static_cast<size_t>(v)] - logp_row[static_cast<size_t>(v)]);
    loss += mask[static_cast<size_t>(r)] * kl;
  }
  Tensor out = Tensor::scalar(loss / wsum);
  auto msk = std::make_shared<std::vector<double>>(mask.begin(), mask.end());
  record(out, {student}, [si = student.impl(), oi = out.impl(), p, q, msk, M, V, wsum, invT] {
    if (!needs_grad(si)) return;
    auto& gs = si->ensure_grad();
    const double g = oi->grad[0] / wsum;
    for (int64_t r = 0; r < M; ++r) {
      double w = (*msk)[static_cast<size_t>(r)];
      if (w == 0.0) continue;
      double* dst = gs.data() + r * V;
      for (int64_t v = 0; v < V; ++v) {
        size_t idx = static_cast<size_t>(r * V + v);
        dst[v] += g * w * invT * ((*p)[idx] - (*q)[idx]);
      }
    }
  });
  return out;
}

namespace {
Tensor hard_concrete_impl(const Tensor& alpha, std::span<const double> u, double l, double r) {
  if (!(l < 0.0 && r > 1.0))
    throw ContractError("hard_concrete: stretch requires l < 0 and r > 1");
  if (static_cast<int64_t>(u.size()) != alpha.numel())
    throw ShapeError("hard_concrete: one u draw per alpha entry required");
  Tensor out = Tensor::zeros(alpha.shape());
  auto s_saved = std::make_shared<std::vector<double>>(alpha.values().size());
  auto active = std::make_shared<std::vector<char>>(alpha.values().size());
  const auto& av = alpha.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) {
    double logit_u = std::log(u[i]) - std::log1p(-u[i]);
    double s = 1.0 / (1.0 + std::exp(-(logit_u + av[i])));
    double sbar = s * (r - l) + l;
    (*s_saved)[i] = s;
    (*active)[i] = (sbar > 0.0 && sbar < 1.0) ? 1 : 0;
    ov[i] = std::clamp(sbar, 0.0, 1.0);
  }
  record(out, {alpha}, [ai = alpha.impl(), oi = out.impl(), s_saved, active, l, r] {
    if (!needs_grad(ai)) return;
    auto& ga = ai->ensure_grad();
    const auto& g = oi->grad;
    for (size_t i = 0; i < g.size(); ++i) {
      if (!(*active)[i]) continue;  // clamp saturates: zero gradient
      double s = (*s_saved)[i];
      ga[i] += g[i] * (r - l) * s * (1.0 - s);
    }
  });
  return out;
}
}  // namespace

Tensor hard_concrete(const Tensor& alpha, std::span<const double> u, double l, double r) {
  for (double ui : u)
    if (!(ui > 0.0 && ui < 1.0)) throw ContractError("hard_concrete: u must lie in (0,1)");
  return hard_concrete_impl(alpha, u, l, r);
}

Tensor hard_concrete_deterministic(const Tensor& alpha, double l, double r) {
  std::vector<double> u(static_cast<size_t>(alpha.numel()), 0.5);
  return hard_concrete_impl(alpha, u, l, r);
}

double l2_norm(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  return std::sqrt(acc);
}

bool all_finite(const Tensor& x) {
  for (double v : x.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace nash::num
