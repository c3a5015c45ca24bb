#include "mclone/ops.hpp"

// Route every product through the packed GEMM kernel. The small-size
// coefficient path vectorises with pointer-dependent peeling, so results
// would depend on buffer alignment.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 1
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mclone {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

using Data = std::shared_ptr<const std::vector<float>>;

void require_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got dims " +
                     dims_to_string(x.dims()));
  }
}

void require_finite(const Tensor& x, const char* op) {
  for (float v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

int normalize_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  return a;
}

std::size_t prod(const Shape& d, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= static_cast<std::size_t>(d[i]);
  return n;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "add");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record_op(a.dims(), std::move(out), {&a, &b}, "add", [](auto g, auto pg) {
    for (float* p : pg) {
      if (!p) continue;
      for (std::size_t i = 0; i < g.size(); ++i) p[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "sub");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record_op(a.dims(), std::move(out), {&a, &b}, "sub", [](auto g, auto pg) {
    if (pg[0])
      for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
    if (pg[1])
      for (std::size_t i = 0; i < g.size(); ++i) pg[1][i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "mul");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Data ad = a.shared_data(), bd = b.shared_data();
  return record_op(a.dims(), std::move(out), {&a, &b}, "mul", [ad, bd](auto g, auto pg) {
    if (pg[0])
      for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * (*bd)[i];
    if (pg[1])
      for (std::size_t i = 0; i < g.size(); ++i) pg[1][i] += g[i] * (*ad)[i];
  });
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  auto result = record_op(a.dims(), std::move(out), {&a}, "scale", [s](auto g, auto pg) {
    for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * s;
  });
  if (a.numel() == 1) detail_set_precise(result, a.scalar_value() * s);
  return result;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias, int channel_axis) {
  int ax = normalize_axis(channel_axis, x.rank(), "add_channel_bias");
  const std::size_t c = static_cast<std::size_t>(x.dims()[static_cast<std::size_t>(ax)]);
  std::size_t groups = 1;
  if (bias.rank() == 2) {
    groups = static_cast<std::size_t>(bias.dims()[0]);
    if (static_cast<std::size_t>(bias.dims()[1]) != c) groups = 0;
  } else if (bias.rank() != 1 || static_cast<std::size_t>(bias.dims()[0]) != c) {
    groups = 0;
  }
  const std::size_t outer = prod(x.dims(), 0, static_cast<std::size_t>(ax));
  const std::size_t inner = prod(x.dims(), static_cast<std::size_t>(ax) + 1, x.rank());
  if (groups == 0 || outer % groups != 0) {
    throw ShapeError("add_channel_bias: bias dims " + dims_to_string(bias.dims()) + " incompatible with " +
                     dims_to_string(x.dims()));
  }
  const std::size_t per_group = outer / groups;
  std::vector<float> out(x.vec());
  for (std::size_t o = 0; o < outer; ++o) {
    const float* b = bias.data().data() + (o / per_group) * c;
    float* row = out.data() + o * c * inner;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t s = 0; s < inner; ++s) row[ch * inner + s] += b[ch];
  }
  return record_op(x.dims(), std::move(out), {&x, &bias}, "add_channel_bias",
                   [outer, c, inner, per_group](auto g, auto pg) {
                     if (pg[0])
                       for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                     if (pg[1]) {
                       for (std::size_t o = 0; o < outer; ++o) {
                         float* b = pg[1] + (o / per_group) * c;
                         const float* row = g.data() + o * c * inner;
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           float acc = 0.0f;
                           for (std::size_t s = 0; s < inner; ++s) acc += row[ch * inner + s];
                           b[ch] += acc;
                         }
                       }
                     }
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + dims_to_string(a.dims()) + " x " +
                     dims_to_string(b.dims()));
  }
  const auto& ad = a.dims();
  const auto& bd = b.dims();
  const std::size_t m = static_cast<std::size_t>(ad[ad.size() - 2]);
  const std::size_t n = static_cast<std::size_t>(ad[ad.size() - 1]);
  const std::size_t p = static_cast<std::size_t>(bd[bd.size() - 1]);
  const bool shared_b = b.rank() == 2;
  bool ok = static_cast<std::size_t>(bd[bd.size() - 2]) == n;
  if (!shared_b) ok = ok && a.rank() == b.rank() && std::equal(ad.begin(), ad.end() - 2, bd.begin());
  if (!ok) {
    throw ShapeError("matmul: dims " + dims_to_string(ad) + " x " + dims_to_string(bd) + " do not contract");
  }
  const std::size_t batch = prod(ad, 0, ad.size() - 2);
  Shape out_dims(ad.begin(), ad.end() - 1);
  out_dims.push_back(static_cast<std::int64_t>(p));

  std::vector<float> out(batch * m * p);
  if (shared_b) {
    Map(out.data(), static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(p)).noalias() =
        MapC(a.data().data(), static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(n)) *
        MapC(b.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  } else {
    // Many tiny products (attention): plain loops beat per-call GEMM setup.
    const float* A = a.data().data();
    const float* B = b.data().data();
    for (std::size_t i = 0; i < batch; ++i) {
      const float* Ai = A + i * m * n;
      const float* Bi = B + i * n * p;
      float* Oi = out.data() + i * m * p;
      for (std::size_t r = 0; r < m; ++r) {
        float* o = Oi + r * p;
        for (std::size_t k = 0; k < n; ++k) {
          const float av = Ai[r * n + k];
          const float* brow = Bi + k * p;
          for (std::size_t j = 0; j < p; ++j) o[j] += av * brow[j];
        }
      }
    }
  }

  Data adata = a.shared_data(), bdata = b.shared_data();
  return record_op(std::move(out_dims), std::move(out), {&a, &b}, "matmul",
                   [adata, bdata, batch, m, n, p, shared_b](auto g, auto pg) {
                     using Eigen::Index;
                     if (shared_b) {
                       MapC G(g.data(), static_cast<Index>(batch * m), static_cast<Index>(p));
                       MapC A(adata->data(), static_cast<Index>(batch * m), static_cast<Index>(n));
                       MapC B(bdata->data(), static_cast<Index>(n), static_cast<Index>(p));
                       if (pg[0]) Map(pg[0], static_cast<Index>(batch * m), static_cast<Index>(n)).noalias() += G * B.transpose();
                       if (pg[1]) Map(pg[1], static_cast<Index>(n), static_cast<Index>(p)).noalias() += A.transpose() * G;
                       return;
                     }
                     for (std::size_t i = 0; i < batch; ++i) {
                       const float* Gi = g.data() + i * m * p;
                       const float* Ai = adata->data() + i * m * n;
                       const float* Bi = bdata->data() + i * n * p;
                       for (std::size_t r = 0; r < m; ++r) {
                         const float* grow = Gi + r * p;
                         if (pg[0]) {
                           float* da = pg[0] + i * m * n + r * n;
                           for (std::size_t k = 0; k < n; ++k) {
                             const float* brow = Bi + k * p;
                             float acc = 0.0f;
                             for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                             da[k] += acc;
                           }
                         }
                         if (pg[1]) {
                           float* db = pg[1] + i * n * p;
                           for (std::size_t k = 0; k < n; ++k) {
                             const float av = Ai[r * n + k];
                             for (std::size_t j = 0; j < p; ++j) db[k * p + j] += av * grow[j];
                           }
                         }
                       }
                     }
                   });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: rank < 2, dims " + dims_to_string(x.dims()));
  std::vector<int> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

Tensor reshape(const Tensor& x, Shape dims) {
  if (shape_numel(dims) != static_cast<std::int64_t>(x.numel())) {
    throw ShapeError("reshape: " + dims_to_string(x.dims()) + " -> " + dims_to_string(dims));
  }
  return record_op(std::move(dims), x.vec(), {&x}, "reshape", [](auto g, auto pg) {
    for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
  });
}

namespace {

// Walks the output of a permutation in row-major order; calls
// visit(out_flat, in_flat, count, in_stride) once per innermost run.
template <class Visit>
void walk_permutation(const Shape& out_dims, const std::vector<std::size_t>& strides, Visit visit) {
  const std::size_t r = out_dims.size();
  const std::size_t inner = static_cast<std::size_t>(out_dims[r - 1]);
  const std::size_t inner_stride = strides[r - 1];
  std::size_t total = 1;
  for (auto d : out_dims) total *= static_cast<std::size_t>(d);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < total; k += inner) {
    visit(k, off, inner, inner_stride);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      off += strides[d];
      if (idx[d] < static_cast<std::size_t>(out_dims[d])) break;
      off -= strides[d] * idx[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  if (order.size() != r) throw ShapeError("permute: order size does not match dims " + dims_to_string(x.dims()));
  for (int o : order) {
    if (o < 0 || static_cast<std::size_t>(o) >= r || seen[static_cast<std::size_t>(o)])
      throw ShapeError("permute: invalid axis order for dims " + dims_to_string(x.dims()));
    seen[static_cast<std::size_t>(o)] = true;
  }
  const auto& in = x.dims();
  Shape out_dims(r);
  std::vector<std::size_t> in_strides(r, 1), strides(r);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * static_cast<std::size_t>(in[i]);
  for (std::size_t i = 0; i < r; ++i) {
    out_dims[i] = in[static_cast<std::size_t>(order[i])];
    strides[i] = in_strides[static_cast<std::size_t>(order[i])];
  }
  std::vector<float> out(x.numel());
  const float* xd = x.data().data();
  if (r > 0) {
    walk_permutation(out_dims, strides, [&](std::size_t k, std::size_t off, std::size_t cnt, std::size_t st) {
      for (std::size_t j = 0; j < cnt; ++j) out[k + j] = xd[off + j * st];
    });
  } else {
    out = x.vec();
  }
  Shape od = out_dims;
  return record_op(std::move(out_dims), std::move(out), {&x}, "permute", [od, strides](auto g, auto pg) {
    if (od.empty()) {
      pg[0][0] += g[0];
      return;
    }
    walk_permutation(od, strides, [&](std::size_t k, std::size_t off, std::size_t cnt, std::size_t st) {
      for (std::size_t j = 0; j < cnt; ++j) pg[0][off + j * st] += g[k + j];
    });
  });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank()) throw ShapeError("concat: rank mismatch " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  const std::size_t ax = static_cast<std::size_t>(normalize_axis(axis, a.rank(), "concat"));
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != ax && a.dims()[i] != b.dims()[i])
      throw ShapeError("concat: dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  }
  const std::size_t outer = prod(a.dims(), 0, ax);
  const std::size_t ia = prod(a.dims(), ax, a.rank());
  const std::size_t ib = prod(b.dims(), ax, b.rank());
  Shape out_dims = a.dims();
  out_dims[ax] += b.dims()[ax];
  std::vector<float> out(outer * (ia + ib));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * ia, ia, out.data() + o * (ia + ib));
    std::copy_n(b.data().data() + o * ib, ib, out.data() + o * (ia + ib) + ia);
  }
  return record_op(std::move(out_dims), std::move(out), {&a, &b}, "concat", [outer, ia, ib](auto g, auto pg) {
    for (std::size_t o = 0; o < outer; ++o) {
      const float* row = g.data() + o * (ia + ib);
      if (pg[0])
        for (std::size_t i = 0; i < ia; ++i) pg[0][o * ia + i] += row[i];
      if (pg[1])
        for (std::size_t i = 0; i < ib; ++i) pg[1][o * ib + i] += row[ia + i];
    }
  });
}

Tensor softmax_last(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax_last: scalar input");
  require_finite(x, "softmax_last");
  const std::size_t f = static_cast<std::size_t>(x.dims().back());
  const std::size_t rows = x.numel() / f;
  std::vector<float> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data().data() + r * f;
    float* o = out.data() + r * f;
    const float mx = *std::max_element(in, in + f);
    float total = 0.0f;
    for (std::size_t j = 0; j < f; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    const float inv = 1.0f / total;
    for (std::size_t j = 0; j < f; ++j) o[j] *= inv;
  }
  auto y = std::make_shared<const std::vector<float>>(out);
  return record_op(x.dims(), std::move(out), {&x}, "softmax_last", [y, rows, f](auto g, auto pg) {
    for (std::size_t r = 0; r < rows; ++r) {
      const float* yr = y->data() + r * f;
      const float* gr = g.data() + r * f;
      float dot = 0.0f;
      for (std::size_t j = 0; j < f; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < f; ++j) pg[0][r * f + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor silu(const Tensor& x) {
  // Work on owned (aligned) arrays: on unaligned maps Eigen peels a
  // pointer-dependent head with scalar exp, which breaks bitwise repeatability.
  using Arr = Eigen::ArrayXf;
  const auto n = static_cast<Eigen::Index>(x.numel());
  auto X = std::make_shared<Arr>(Eigen::Map<const Arr>(x.data().data(), n));
  auto S = std::make_shared<Arr>(1.0f / (1.0f + (-*X).exp()));
  const Arr Y = *X * *S;
  std::vector<float> out(Y.data(), Y.data() + n);
  return record_op(x.dims(), std::move(out), {&x}, "silu", [X, S, n](auto g, auto pg) {
    const Arr G = Eigen::Map<const Arr>(g.data(), n);
    const Arr d = G * *S * (1.0f + *X * (1.0f - *S));
    Eigen::Map<Arr> P(pg[0], n);
    for (Eigen::Index i = 0; i < n; ++i) P[i] += d[i];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  auto out = record_op({}, {static_cast<float>(acc)}, {&x}, "sum", [n = x.numel()](auto g, auto pg) {
    for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[0];
  });
  detail_set_precise(out, acc);
  return out;
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const std::size_t n = x.numel();
  auto out = record_op({}, {static_cast<float>(acc / static_cast<double>(n))}, {&x}, "mean", [n](auto g, auto pg) {
    const float s = g[0] / static_cast<float>(n);
    for (std::size_t i = 0; i < n; ++i) pg[0][i] += s;
  });
  detail_set_precise(out, acc / static_cast<double>(n));
  return out;
}

Tensor sum_squares(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += static_cast<double>(v) * v;
  Data xd = x.shared_data();
  auto out = record_op({}, {static_cast<float>(acc)}, {&x}, "sum_squares", [xd](auto g, auto pg) {
    for (std::size_t i = 0; i < xd->size(); ++i) pg[0][i] += 2.0f * g[0] * (*xd)[i];
  });
  detail_set_precise(out, acc);
  return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
  Data ad = a.shared_data(), bd = b.shared_data();
  auto out = record_op({}, {static_cast<float>(acc)}, {&a, &b}, "dot", [ad, bd](auto g, auto pg) {
    for (std::size_t i = 0; i < ad->size(); ++i) {
      if (pg[0]) pg[0][i] += g[0] * (*bd)[i];
      if (pg[1]) pg[1][i] += g[0] * (*ad)[i];
    }
  });
  detail_set_precise(out, acc);
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "mse");
  const std::size_t n = a.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  Data ad = a.shared_data(), bd = b.shared_data();
  auto out = record_op({}, {static_cast<float>(acc / static_cast<double>(n))}, {&a, &b}, "mse",
                   [ad, bd, n](auto g, auto pg) {
                     const float s = 2.0f * g[0] / static_cast<float>(n);
                     for (std::size_t i = 0; i < n; ++i) {
                       const float d = (*ad)[i] - (*bd)[i];
                       if (pg[0]) pg[0][i] += s * d;
                       if (pg[1]) pg[1][i] -= s * d;
                     }
                   });
  detail_set_precise(out, acc / static_cast<double>(n));
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  require_rank(table, 2, "gather_rows");
  const std::size_t v = static_cast<std::size_t>(table.dims()[0]);
  const std::size_t e = static_cast<std::size_t>(table.dims()[1]);
  std::vector<float> out(ids.size() * e);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v) + " rows");
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * e, e, out.data() + i * e);
  }
  return record_op({static_cast<std::int64_t>(ids.size()), static_cast<std::int64_t>(e)}, std::move(out), {&table},
                   "gather_rows", [ids, e](auto g, auto pg) {
                     for (std::size_t i = 0; i < ids.size(); ++i)
                       for (std::size_t k = 0; k < e; ++k) pg[0][static_cast<std::size_t>(ids[i]) * e + k] += g[i * e + k];
                   });
}

namespace {

// Valid output columns [x0, x1) for horizontal tap offset dx.
inline void tap_range(std::ptrdiff_t dx, std::size_t w, std::size_t& x0, std::size_t& x1) {
  x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
  x1 = dx > 0 ? w - static_cast<std::size_t>(dx) : w;
}

void im2col(const float* img, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, float* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* row = cols + ((c * k + ky) * k + kx) * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        std::size_t x0, x1;
        tap_range(dx, w, x0, x1);
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          float* out = row + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill_n(out, w, 0.0f);
            continue;
          }
          const float* src = img + c * hw + static_cast<std::size_t>(sy) * w;
          std::fill(out, out + x0, 0.0f);
          std::copy_n(src + (x0 + dx), x1 - x0, out + x0);
          std::fill(out + x1, out + w, 0.0f);
        }
      }
    }
  }
}

void col2im_add(const float* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, float* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* row = cols + ((c * k + ky) * k + kx) * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        std::size_t x0, x1;
        tap_range(dx, w, x0, x1);
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          float* dst = img + c * hw + static_cast<std::size_t>(sy) * w + x0 + dx;
          const float* in = row + y * w + x0;
          for (std::size_t x = 0; x < x1 - x0; ++x) dst[x] += in[x];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t n = static_cast<std::size_t>(x.dims()[0]);
  const std::size_t cin = static_cast<std::size_t>(x.dims()[1]);
  const std::size_t h = static_cast<std::size_t>(x.dims()[2]);
  const std::size_t wd = static_cast<std::size_t>(x.dims()[3]);
  const std::size_t cout = static_cast<std::size_t>(w.dims()[0]);
  const std::size_t k = static_cast<std::size_t>(w.dims()[2]);
  if (static_cast<std::size_t>(w.dims()[1]) != cin || w.dims()[3] != w.dims()[2] || k % 2 == 0) {
    throw ShapeError("conv2d: input " + dims_to_string(x.dims()) + " incompatible with kernel " + dims_to_string(w.dims()));
  }
  const bool has_bias = !bias.empty();
  if (has_bias && (bias.rank() != 1 || static_cast<std::size_t>(bias.dims()[0]) != cout)) {
    throw ShapeError("conv2d: bias " + dims_to_string(bias.dims()) + " for " + std::to_string(cout) + " outputs");
  }
  const std::size_t hw = h * wd;
  const std::size_t kk = cin * k * k;
  using Eigen::Index;

  std::vector<float> out(n * cout * hw);
  std::vector<float> cols(k == 1 ? 0 : kk * hw);
  MapC W(w.data().data(), static_cast<Index>(cout), static_cast<Index>(kk));
  for (std::size_t i = 0; i < n; ++i) {
    const float* img = x.data().data() + i * cin * hw;
    const float* src = img;
    if (k != 1) {
      im2col(img, cin, h, wd, k, cols.data());
      src = cols.data();
    }
    Map O(out.data() + i * cout * hw, static_cast<Index>(cout), static_cast<Index>(hw));
    O.noalias() = W * MapC(src, static_cast<Index>(kk), static_cast<Index>(hw));
    if (has_bias) {
      for (std::size_t c = 0; c < cout; ++c) O.row(static_cast<Index>(c)).array() += bias[c];
    }
  }

  Data xd = x.shared_data(), wdata = w.shared_data();
  auto backward = [xd, wdata, n, cin, h, wd, cout, k, hw, kk, has_bias](auto g, auto pg) {
    MapC Wm(wdata->data(), static_cast<Index>(cout), static_cast<Index>(kk));
    std::vector<float> cols(k == 1 ? 0 : kk * hw);
    std::vector<float> dcols(pg[0] && k != 1 ? kk * hw : 0);
    for (std::size_t i = 0; i < n; ++i) {
      MapC G(g.data() + i * cout * hw, static_cast<Index>(cout), static_cast<Index>(hw));
      const float* img = xd->data() + i * cin * hw;
      if (pg[1]) {
        const float* src = img;
        if (k != 1) {
          im2col(img, cin, h, wd, k, cols.data());
          src = cols.data();
        }
        Map(pg[1], static_cast<Index>(cout), static_cast<Index>(kk)).noalias() +=
            G * MapC(src, static_cast<Index>(kk), static_cast<Index>(hw)).transpose();
      }
      if (pg[0]) {
        if (k == 1) {
          Map(pg[0] + i * cin * hw, static_cast<Index>(kk), static_cast<Index>(hw)).noalias() += Wm.transpose() * G;
        } else {
          Map(dcols.data(), static_cast<Index>(kk), static_cast<Index>(hw)).noalias() = Wm.transpose() * G;
          col2im_add(dcols.data(), cin, h, wd, k, pg[0] + i * cin * hw);
        }
      }
      if (has_bias && pg[2]) {
        // Sequential sum: Eigen's reduction peels by pointer alignment.
        const float* gi = g.data() + i * cout * hw;
        for (std::size_t c = 0; c < cout; ++c) {
          float acc = 0.0f;
          for (std::size_t q = 0; q < hw; ++q) acc += gi[c * hw + q];
          pg[2][c] += acc;
        }
      }
    }
  };
  if (has_bias) return record_op({static_cast<std::int64_t>(n), static_cast<std::int64_t>(cout), static_cast<std::int64_t>(h), static_cast<std::int64_t>(wd)}, std::move(out), {&x, &w, &bias}, "conv2d", backward);
  return record_op({static_cast<std::int64_t>(n), static_cast<std::int64_t>(cout), static_cast<std::int64_t>(h), static_cast<std::int64_t>(wd)}, std::move(out), {&x, &w}, "conv2d", backward);
}

Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2");
  const std::size_t nc = static_cast<std::size_t>(x.dims()[0] * x.dims()[1]);
  const std::size_t h = static_cast<std::size_t>(x.dims()[2]);
  const std::size_t w = static_cast<std::size_t>(x.dims()[3]);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial dims " + dims_to_string(x.dims()));
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<float> out(nc * ho * wo);
  for (std::size_t p = 0; p < nc; ++p) {
    const float* in = x.data().data() + p * h * w;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx)
        out[(p * ho + y) * wo + xx] = 0.25f * (in[2 * y * w + 2 * xx] + in[2 * y * w + 2 * xx + 1] +
                                               in[(2 * y + 1) * w + 2 * xx] + in[(2 * y + 1) * w + 2 * xx + 1]);
  }
  Shape dims = {x.dims()[0], x.dims()[1], static_cast<std::int64_t>(ho), static_cast<std::int64_t>(wo)};
  return record_op(std::move(dims), std::move(out), {&x}, "avg_pool2", [nc, h, w, ho, wo](auto g, auto pg) {
    for (std::size_t p = 0; p < nc; ++p) {
      float* in = pg[0] + p * h * w;
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const float v = 0.25f * g[(p * ho + y) * wo + xx];
          in[2 * y * w + 2 * xx] += v;
          in[2 * y * w + 2 * xx + 1] += v;
          in[(2 * y + 1) * w + 2 * xx] += v;
          in[(2 * y + 1) * w + 2 * xx + 1] += v;
        }
    }
  });
}

Tensor upsample_nearest2(const Tensor& x) {
  require_rank(x, 4, "upsample_nearest2");
  const std::size_t nc = static_cast<std::size_t>(x.dims()[0] * x.dims()[1]);
  const std::size_t h = static_cast<std::size_t>(x.dims()[2]);
  const std::size_t w = static_cast<std::size_t>(x.dims()[3]);
  const std::size_t ho = 2 * h, wo = 2 * w;
  std::vector<float> out(nc * ho * wo);
  for (std::size_t p = 0; p < nc; ++p) {
    const float* in = x.data().data() + p * h * w;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) out[(p * ho + y) * wo + xx] = in[(y / 2) * w + xx / 2];
  }
  Shape dims = {x.dims()[0], x.dims()[1], static_cast<std::int64_t>(ho), static_cast<std::int64_t>(wo)};
  return record_op(std::move(dims), std::move(out), {&x}, "upsample_nearest2", [nc, h, w, ho, wo](auto g, auto pg) {
    for (std::size_t p = 0; p < nc; ++p)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) pg[0][p * h * w + (y / 2) * w + xx / 2] += g[(p * ho + y) * wo + xx];
  });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 4, "group_norm");
  const std::size_t n = static_cast<std::size_t>(x.dims()[0]);
  const std::size_t c = static_cast<std::size_t>(x.dims()[1]);
  const std::size_t hw = static_cast<std::size_t>(x.dims()[2] * x.dims()[3]);
  const std::size_t ng = static_cast<std::size_t>(groups);
  if (groups <= 0 || c % ng != 0) {
    throw ShapeError("group_norm: " + std::to_string(groups) + " groups for " + std::to_string(c) + " channels");
  }
  if (gamma.dims() != Shape{static_cast<std::int64_t>(c)} || beta.dims() != gamma.dims()) {
    throw ShapeError("group_norm: affine params " + dims_to_string(gamma.dims()) + ", " + dims_to_string(beta.dims()) +
                     " for " + std::to_string(c) + " channels");
  }
  const std::size_t cg = c / ng;
  const std::size_t span = cg * hw;
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<float>>(n * ng);
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t gi = 0; gi < ng; ++gi) {
      const std::size_t base = (i * c + gi * cg) * hw;
      const float* in = x.data().data() + base;
      double m = 0.0;
      for (std::size_t k = 0; k < span; ++k) m += in[k];
      m /= static_cast<double>(span);
      double v = 0.0;
      for (std::size_t k = 0; k < span; ++k) v += (in[k] - m) * (in[k] - m);
      v /= static_cast<double>(span);
      const double is = 1.0 / std::sqrt(v + eps);
      (*inv_std)[i * ng + gi] = static_cast<float>(is);
      for (std::size_t cc = 0; cc < cg; ++cc) {
        const std::size_t ch = gi * cg + cc;
        const float ga = gamma[ch], be = beta[ch], mf = static_cast<float>(m), isf = static_cast<float>(is);
        for (std::size_t k = cc * hw; k < (cc + 1) * hw; ++k) {
          const float xh = (in[k] - mf) * isf;
          (*xhat)[base + k] = xh;
          out[base + k] = ga * xh + be;
        }
      }
    }
  }
  Data gd = gamma.shared_data();
  return record_op(x.dims(), std::move(out), {&x, &gamma, &beta}, "group_norm",
                   [xhat, inv_std, gd, n, c, hw, ng, cg, span](auto g, auto pg) {
                     for (std::size_t i = 0; i < n; ++i) {
                       for (std::size_t gi = 0; gi < ng; ++gi) {
                         const std::size_t base = (i * c + gi * cg) * hw;
                         const float* gv = g.data() + base;
                         const float* xh = xhat->data() + base;
                         double mean_d = 0.0, mean_dx = 0.0;
                         for (std::size_t cc = 0; cc < cg; ++cc) {
                           const std::size_t ch = gi * cg + cc;
                           double sg = 0.0, sgx = 0.0;
                           for (std::size_t k = cc * hw; k < (cc + 1) * hw; ++k) {
                             sg += gv[k];
                             sgx += static_cast<double>(gv[k]) * xh[k];
                           }
                           if (pg[1]) pg[1][ch] += static_cast<float>(sgx);
                           if (pg[2]) pg[2][ch] += static_cast<float>(sg);
                           mean_d += sg * (*gd)[ch];
                           mean_dx += sgx * (*gd)[ch];
                         }
                         if (!pg[0]) continue;
                         mean_d /= static_cast<double>(span);
                         mean_dx /= static_cast<double>(span);
                         const float is = (*inv_std)[i * ng + gi];
                         const float md = static_cast<float>(mean_d), mdx = static_cast<float>(mean_dx);
                         float* dx = pg[0] + base;
                         for (std::size_t cc = 0; cc < cg; ++cc) {
                           const float ga = (*gd)[gi * cg + cc];
                           for (std::size_t k = cc * hw; k < (cc + 1) * hw; ++k) {
                             dx[k] += is * (ga * gv[k] - md - xh[k] * mdx);
                           }
                         }
                       }
                     }
                   });
}

}  // namespace mclone
