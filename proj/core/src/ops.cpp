#include "stransformer/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// --- raw accumulating GEMM kernels, row-major ---

// c[m,n] += a[m,k] * b[k,n]
void gemm_acc(const double* a, const double* b, double* c, int64_t m,
              int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_abT_acc(const double* a, const double* b, double* c, int64_t m,
                  int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
void gemm_aTb_acc(const double* a, const double* b, double* c, int64_t m,
                  int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      double av = ap[i];
      double* ci = c + i * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// --- broadcasting helpers ---

struct BroadcastPlan {
  Shape out_shape;
  std::vector<int64_t> stride_a;  // 0 where a is broadcast
  std::vector<int64_t> stride_b;
};

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

BroadcastPlan broadcast_shapes(const Shape& a, const Shape& b,
                               const char* op) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  Shape ea(r, 1), eb(r, 1);  // right-aligned
  std::copy(a.begin(), a.end(), ea.begin() + (r - a.size()));
  std::copy(b.begin(), b.end(), eb.begin() + (r - b.size()));
  for (size_t i = 0; i < r; ++i) {
    if (ea[i] == eb[i] || ea[i] == 1 || eb[i] == 1) {
      out[i] = std::max(ea[i], eb[i]);
    } else {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " are not broadcastable");
    }
  }
  BroadcastPlan plan;
  plan.out_shape = out;
  auto sa = row_major_strides(ea), sb = row_major_strides(eb);
  plan.stride_a.resize(r);
  plan.stride_b.resize(r);
  for (size_t i = 0; i < r; ++i) {
    plan.stride_a[i] = (ea[i] == 1 && out[i] != 1) ? 0 : sa[i];
    plan.stride_b[i] = (eb[i] == 1 && out[i] != 1) ? 0 : sb[i];
  }
  return plan;
}

// Calls fn(out_index, a_offset, b_offset) for every output element.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& fn) {
  size_t r = plan.out_shape.size();
  int64_t n = shape_numel(plan.out_shape);
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t li = 0; li < n; ++li) {
    fn(li, oa, ob);
    for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
      ++idx[i];
      oa += plan.stride_a[i];
      ob += plan.stride_b[i];
      if (idx[i] < plan.out_shape[i]) break;
      oa -= plan.stride_a[i] * plan.out_shape[i];
      ob -= plan.stride_b[i] * plan.out_shape[i];
      idx[i] = 0;
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<double> out(ad.size());
    for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i];
    return Tensor::make_node(a.shape(), std::move(out), {a, b},
                             [a, b](Tensor::Node& self) {
                               const auto& g = self.grad;
                               if (a.requires_grad()) {
                                 auto& da = Tensor::grad_buf(*a.node());
                                 for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                               }
                               if (b.requires_grad()) {
                                 auto& db = Tensor::grad_buf(*b.node());
                                 for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
                               }
                             });
  }
  auto plan = broadcast_shapes(a.shape(), b.shape(), "add");
  std::vector<double> out(shape_numel(plan.out_shape));
  const auto& ad = a.data();
  const auto& bd = b.data();
  for_each_broadcast(plan, [&](int64_t li, int64_t oa, int64_t ob) {
    out[li] = ad[oa] + bd[ob];
  });
  return Tensor::make_node(
      plan.out_shape, std::move(out), {a, b}, [a, b, plan](Tensor::Node& self) {
        const auto& g = self.grad;
        std::vector<double>* da =
            a.requires_grad() ? &Tensor::grad_buf(*a.node()) : nullptr;
        std::vector<double>* db =
            b.requires_grad() ? &Tensor::grad_buf(*b.node()) : nullptr;
        for_each_broadcast(plan, [&](int64_t li, int64_t oa, int64_t ob) {
          if (da) (*da)[oa] += g[li];
          if (db) (*db)[ob] += g[li];
        });
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto plan = broadcast_shapes(a.shape(), b.shape(), "sub");
  std::vector<double> out(shape_numel(plan.out_shape));
  const auto& ad = a.data();
  const auto& bd = b.data();
  for_each_broadcast(plan, [&](int64_t li, int64_t oa, int64_t ob) {
    out[li] = ad[oa] - bd[ob];
  });
  return Tensor::make_node(
      plan.out_shape, std::move(out), {a, b}, [a, b, plan](Tensor::Node& self) {
        const auto& g = self.grad;
        std::vector<double>* da =
            a.requires_grad() ? &Tensor::grad_buf(*a.node()) : nullptr;
        std::vector<double>* db =
            b.requires_grad() ? &Tensor::grad_buf(*b.node()) : nullptr;
        for_each_broadcast(plan, [&](int64_t li, int64_t oa, int64_t ob) {
          if (da) (*da)[oa] += g[li];
          if (db) (*db)[ob] -= g[li];
        });
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto plan = broadcast_shapes(a.shape(), b.shape(), "mul");
  std::vector<double> out(shape_numel(plan.out_shape));
  const auto& ad = a.data();
  const auto& bd = b.data();
  for_each_broadcast(plan, [&](int64_t li, int64_t oa, int64_t ob) {
    out[li] = ad[oa] * bd[ob];
  });
  return Tensor::make_node(
      plan.out_shape, std::move(out), {a, b}, [a, b, plan](Tensor::Node& self) {
        const auto& g = self.grad;
        const auto& ad2 = a.data();
        const auto& bd2 = b.data();
        std::vector<double>* da =
            a.requires_grad() ? &Tensor::grad_buf(*a.node()) : nullptr;
        std::vector<double>* db =
            b.requires_grad() ? &Tensor::grad_buf(*b.node()) : nullptr;
        for_each_broadcast(plan, [&](int64_t li, int64_t oa, int64_t ob) {
          if (da) (*da)[oa] += g[li] * bd2[ob];
          if (db) (*db)[ob] += g[li] * ad2[oa];
        });
      });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  for (auto& v : out) v *= c;
  return Tensor::make_node(x.shape(), std::move(out), {x},
                           [x, c](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             for (size_t i = 0; i < g.size(); ++i) dx[i] += c * g[i];
                           });
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  for (auto& v : out) v += c;
  return Tensor::make_node(x.shape(), std::move(out), {x},
                           [x](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                           });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: ranks must be >= 2, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  int64_t m = a.dim(a.rank() - 2), ka = a.dim(a.rank() - 1);
  int64_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions disagree for shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  auto plan = broadcast_shapes(batch_a, batch_b, "matmul");

  Shape out_shape = plan.out_shape;
  out_shape.push_back(m);
  out_shape.push_back(n);
  int64_t batches = shape_numel(plan.out_shape);
  int64_t a_block = m * ka, b_block = ka * n, o_block = m * n;

  std::vector<double> out(batches * o_block, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  // collect the per-batch offsets once; backward reuses them
  std::vector<int64_t> offs_a(batches), offs_b(batches);
  {
    int64_t bi = 0;
    for_each_broadcast(plan, [&](int64_t li, int64_t oa, int64_t ob) {
      offs_a[li] = oa;
      offs_b[li] = ob;
      ++bi;
    });
  }
  for (int64_t q = 0; q < batches; ++q) {
    gemm_acc(ad + offs_a[q] * a_block, bd + offs_b[q] * b_block,
             out.data() + q * o_block, m, ka, n);
  }

  return Tensor::make_node(
      std::move(out_shape), std::move(out), {a, b},
      [a, b, offs_a, offs_b, m, ka, n, a_block, b_block,
       o_block](Tensor::Node& self) {
        const double* g = self.grad.data();
        const double* ad2 = a.data().data();
        const double* bd2 = b.data().data();
        int64_t batches = static_cast<int64_t>(offs_a.size());
        if (a.requires_grad()) {
          double* da = Tensor::grad_buf(*a.node()).data();
          for (int64_t q = 0; q < batches; ++q) {
            // dA += dC * B^T
            gemm_abT_acc(g + q * o_block, bd2 + offs_b[q] * b_block,
                         da + offs_a[q] * a_block, m, n, ka);
          }
        }
        if (b.requires_grad()) {
          double* db = Tensor::grad_buf(*b.node()).data();
          for (int64_t q = 0; q < batches; ++q) {
            // dB += A^T * dC
            gemm_aTb_acc(ad2 + offs_a[q] * a_block, g + q * o_block,
                         db + offs_b[q] * b_block, ka, m, n);
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_node(x.shape(), std::move(out), {x},
                           [x](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             const auto& xd = x.data();
                             for (size_t i = 0; i < g.size(); ++i) {
                               if (xd[i] > 0.0) dx[i] += g[i];
                             }
                           });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.data().size());
  const auto& xd = x.data();
  for (size_t i = 0; i < xd.size(); ++i) {
    double v = xd[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
  }
  std::vector<double> saved = out;
  return Tensor::make_node(x.shape(), std::move(out), {x},
                           [x, saved](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             for (size_t i = 0; i < g.size(); ++i) {
                               dx[i] += g[i] * saved[i] * (1.0 - saved[i]);
                             }
                           });
}

Tensor abs_elem(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = std::fabs(v);
  return Tensor::make_node(x.shape(), std::move(out), {x},
                           [x](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             const auto& xd = x.data();
                             for (size_t i = 0; i < g.size(); ++i) {
                               double s = xd[i] > 0.0 ? 1.0 : (xd[i] < 0.0 ? -1.0 : 0.0);
                               dx[i] += g[i] * s;
                             }
                           });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 1) {
    throw ShapeError("softmax_lastdim: empty last dimension in " +
                     shape_str(x.shape()));
  }
  int64_t d = x.dim(x.rank() - 1);
  int64_t rows = x.numel() / d;
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double* orow = out.data() + r * d;
    double mx = -kInf;
    for (int64_t j = 0; j < d; ++j) mx = std::max(mx, row[j]);
    if (mx == -kInf) {
      throw MaskError("softmax_lastdim: row " + std::to_string(r) +
                      " is fully masked (all -inf)");
    }
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double e = std::exp(row[j] - mx);  // exp(-inf) == 0 exactly
      orow[j] = e;
      sum += e;
    }
    double inv = 1.0 / sum;
    for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
  }
  std::vector<double> saved = out;
  return Tensor::make_node(
      x.shape(), std::move(out), {x}, [x, saved, d](Tensor::Node& self) {
        if (!x.requires_grad()) return;
        auto& dx = Tensor::grad_buf(*x.node());
        const auto& g = self.grad;
        int64_t rows = static_cast<int64_t>(g.size()) / d;
        for (int64_t r = 0; r < rows; ++r) {
          const double* s = saved.data() + r * d;
          const double* gr = g.data() + r * d;
          double* dr = dx.data() + r * d;
          double dot = 0.0;
          for (int64_t j = 0; j < d; ++j) dot += gr[j] * s[j];
          for (int64_t j = 0; j < d; ++j) dr[j] += s[j] * (gr[j] - dot);
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  int64_t d = x.dim(x.rank() - 1);
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) +
                     " entries, got " + shape_str(gain.shape()) + " and " +
                     shape_str(bias.shape()));
  }
  int64_t rows = x.numel() / d;
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv_std(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (int64_t j = 0; j < d; ++j) {
      double h = (row[j] - mean) * istd;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return Tensor::make_node(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, d](Tensor::Node& self) {
        const auto& g = self.grad;
        const auto& gd2 = gain.data();
        int64_t rows = static_cast<int64_t>(g.size()) / d;
        std::vector<double>* dgain =
            gain.requires_grad() ? &Tensor::grad_buf(*gain.node()) : nullptr;
        std::vector<double>* dbias =
            bias.requires_grad() ? &Tensor::grad_buf(*bias.node()) : nullptr;
        std::vector<double>* dx =
            x.requires_grad() ? &Tensor::grad_buf(*x.node()) : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* hr = xhat.data() + r * d;
          if (dgain || dbias) {
            for (int64_t j = 0; j < d; ++j) {
              if (dgain) (*dgain)[j] += gr[j] * hr[j];
              if (dbias) (*dbias)[j] += gr[j];
            }
          }
          if (dx) {
            // dxhat = g * gain; dx = istd * (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              double dh = gr[j] * gd2[j];
              mean_dh += dh;
              mean_dh_h += dh * hr[j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            double* dxr = dx->data() + r * d;
            for (int64_t j = 0; j < d; ++j) {
              double dh = gr[j] * gd2[j];
              dxr[j] += inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
            }
          }
        }
      });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_rows: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  int64_t cols = a.dim(1);
  int64_t ra = a.dim(0), rb = b.dim(0);
  std::vector<double> out;
  out.reserve((ra + rb) * cols);
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return Tensor::make_node(
      {ra + rb, cols}, std::move(out), {a, b}, [a, b, ra, cols](Tensor::Node& self) {
        const auto& g = self.grad;
        if (a.requires_grad()) {
          auto& da = Tensor::grad_buf(*a.node());
          for (size_t i = 0; i < da.size(); ++i) da[i] += g[i];
        }
        if (b.requires_grad()) {
          auto& db = Tensor::grad_buf(*b.node());
          size_t off = static_cast<size_t>(ra * cols);
          for (size_t i = 0; i < db.size(); ++i) db[i] += g[off + i];
        }
      });
}

Tensor slice(const Tensor& x, const Shape& starts, const Shape& lens) {
  const Shape& s = x.shape();
  if (starts.size() != s.size() || lens.size() != s.size()) {
    throw ShapeError("slice: starts/lens rank mismatch with " + shape_str(s));
  }
  for (size_t i = 0; i < s.size(); ++i) {
    if (starts[i] < 0 || lens[i] < 0 || starts[i] + lens[i] > s[i]) {
      throw IndexError("slice: window out of range on axis " + std::to_string(i) +
                       " of " + shape_str(s));
    }
  }
  auto src_strides = row_major_strides(s);
  int64_t n = shape_numel(lens);
  std::vector<double> out(n);
  const auto& xd = x.data();
  // map each output element to its source offset
  std::vector<int64_t> src_off(n);
  std::vector<int64_t> idx(s.size(), 0);
  int64_t base = 0;
  for (size_t i = 0; i < s.size(); ++i) base += starts[i] * src_strides[i];
  for (int64_t li = 0; li < n; ++li) {
    int64_t off = base;
    for (size_t i = 0; i < s.size(); ++i) off += idx[i] * src_strides[i];
    src_off[li] = off;
    out[li] = xd[off];
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
      if (++idx[i] < lens[i]) break;
      idx[i] = 0;
    }
  }
  return Tensor::make_node(lens, std::move(out), {x},
                           [x, src_off](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             for (size_t i = 0; i < g.size(); ++i) {
                               dx[src_off[i]] += g[i];
                             }
                           });
}

Tensor slice_rows(const Tensor& x, int64_t start, int64_t len) {
  if (x.rank() != 2) {
    throw ShapeError("slice_rows: expected rank-2, got " + shape_str(x.shape()));
  }
  return slice(x, {start, 0}, {len, x.dim(1)});
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  return Tensor::make_node(std::move(shape), x.data(), {x},
                           [x](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                           });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const Shape& s = x.shape();
  if (perm.size() != s.size()) throw ShapeError("permute: rank mismatch");
  Shape out_shape(s.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = s[perm[i]];
  auto src_strides = row_major_strides(s);
  std::vector<int64_t> strides(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) strides[i] = src_strides[perm[i]];

  int64_t n = x.numel();
  std::vector<double> out(n);
  std::vector<int64_t> src_off(n);
  const auto& xd = x.data();
  std::vector<int64_t> idx(s.size(), 0);
  for (int64_t li = 0; li < n; ++li) {
    int64_t off = 0;
    for (size_t i = 0; i < idx.size(); ++i) off += idx[i] * strides[i];
    src_off[li] = off;
    out[li] = xd[off];
    for (int i = static_cast<int>(idx.size()) - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return Tensor::make_node(std::move(out_shape), std::move(out), {x},
                           [x, src_off](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             for (size_t i = 0; i < g.size(); ++i) {
                               dx[src_off[i]] += g[i];
                             }
                           });
}

Tensor pad_last_dim(const Tensor& x, int64_t left, int64_t right) {
  if (left < 0 || right < 0) throw ValueError("pad_last_dim: negative pad");
  int64_t d = x.dim(x.rank() - 1);
  int64_t nd = d + left + right;
  Shape out_shape = x.shape();
  out_shape.back() = nd;
  int64_t rows = x.numel() == 0 ? shape_numel(Shape(x.shape().begin(), x.shape().end() - 1))
                                : x.numel() / std::max<int64_t>(d, 1);
  std::vector<double> out(rows * nd, 0.0);
  const auto& xd = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < d; ++j) out[r * nd + left + j] = xd[r * d + j];
  }
  return Tensor::make_node(std::move(out_shape), std::move(out), {x},
                           [x, d, nd, left, rows](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             for (int64_t r = 0; r < rows; ++r) {
                               for (int64_t j = 0; j < d; ++j) {
                                 dx[r * d + j] += g[r * nd + left + j];
                               }
                             }
                           });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::make_node({}, {acc}, {x}, [x](Tensor::Node& self) {
    if (!x.requires_grad()) return;
    auto& dx = Tensor::grad_buf(*x.node());
    double g = self.grad[0];
    for (auto& v : dx) v += g;
  });
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean_all: empty tensor");
  double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  acc *= inv;
  return Tensor::make_node({}, {acc}, {x}, [x, inv](Tensor::Node& self) {
    if (!x.requires_grad()) return;
    auto& dx = Tensor::grad_buf(*x.node());
    double g = self.grad[0] * inv;
    for (auto& v : dx) v += g;
  });
}

Tensor rows_lookup(const Tensor& table, const std::vector<int64_t>& ids) {
  if (table.rank() != 2) {
    throw ShapeError("rows_lookup: table must be rank-2, got " +
                     shape_str(table.shape()));
  }
  int64_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto& td = table.data();
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) {
      throw IndexError("rows_lookup: id " + std::to_string(ids[i]) +
                       " out of range [0," + std::to_string(v) + ")");
    }
    std::copy(td.begin() + ids[i] * d, td.begin() + (ids[i] + 1) * d,
              out.begin() + i * d);
  }
  return Tensor::make_node(
      {static_cast<int64_t>(ids.size()), d}, std::move(out), {table},
      [table, ids, d](Tensor::Node& self) {
        if (!table.requires_grad()) return;
        auto& dt = Tensor::grad_buf(*table.node());
        const auto& g = self.grad;
        for (size_t i = 0; i < ids.size(); ++i) {
          for (int64_t j = 0; j < d; ++j) {
            dt[ids[i] * d + j] += g[i * d + j];
          }
        }
      });
}

Tensor stop_gradient(const Tensor& x) { return x.detach(); }

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.next_double() >= rate ? keep_scale : 0.0;
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return Tensor::make_node(x.shape(), std::move(out), {x},
                           [x, mask](Tensor::Node& self) {
                             if (!x.requires_grad()) return;
                             auto& dx = Tensor::grad_buf(*x.node());
                             const auto& g = self.grad;
                             for (size_t i = 0; i < g.size(); ++i) {
                               dx[i] += g[i] * mask[i];
                             }
                           });
}

namespace {
double softplus(double v) {
  // max(v,0) + log1p(exp(-|v|)), stable on both tails
  return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v)));
}
double sigmoid_scalar(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}
}  // namespace

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets,
                            double pos_weight) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits_mean: logits " + shape_str(logits.shape()) +
                     " vs targets " + shape_str(targets.shape()));
  }
  const auto& z = logits.data();
  const auto& t = targets.data();
  int64_t n = logits.numel();
  if (n == 0) throw ShapeError("bce_with_logits_mean: empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    acc += pos_weight * t[i] * softplus(-z[i]) + (1.0 - t[i]) * softplus(z[i]);
  }
  acc /= static_cast<double>(n);
  return Tensor::make_node(
      {}, {acc}, {logits}, [logits, t, pos_weight, n](Tensor::Node& self) {
        if (!logits.requires_grad()) return;
        auto& dz = Tensor::grad_buf(*logits.node());
        const auto& z2 = logits.data();
        double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
          double s = sigmoid_scalar(z2[i]);
          dz[i] += g * (pos_weight * t[i] * (s - 1.0) + (1.0 - t[i]) * s);
        }
      });
}

}  // namespace stf
