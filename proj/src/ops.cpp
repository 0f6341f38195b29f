#include "quag/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace quag {

namespace {

std::size_t last_extent(const Tensor& x) { return x.shape().back(); }
std::size_t row_count(const Tensor& x) { return x.numel() / last_extent(x); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

TensorImpl& parent(TensorImpl& self, std::size_t i) { return *self.parents[i]; }

bool needs(TensorImpl& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](TensorImpl& self) {
    const auto& g = self.grad;
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (needs(self, 0)) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = pb.data.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          pa.accumulate(i * k + p, acc);
        }
      }
    }
    if (needs(self, 1)) {
      // dB = A^T * G
      std::vector<double> db(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.data[i * k + p];
          double* drow = db.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
        }
      }
      for (std::size_t idx = 0; idx < db.size(); ++idx) pb.accumulate(idx, db[idx]);
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto ad = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  return make_result({n, m}, std::move(out), {a}, "transpose", [m, n](TensorImpl& self) {
    auto& pa = parent(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa.accumulate(i * n + j, self.grad[j * m + i]);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [](TensorImpl& self) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (!needs(self, s)) continue;
      auto& p = parent(self, s);
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.accumulate(i, self.grad[i]);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [](TensorImpl& self) {
    if (needs(self, 0)) {
      auto& p = parent(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.accumulate(i, self.grad[i]);
    }
    if (needs(self, 1)) {
      auto& p = parent(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.accumulate(i, -self.grad[i]);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [](TensorImpl& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (needs(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.accumulate(i, self.grad[i] * pb.data[i]);
    }
    if (needs(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.accumulate(i, self.grad[i] * pa.data[i]);
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  return make_result(x.shape(), std::move(out), {x}, "scale", [factor](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.accumulate(i, self.grad[i] * factor);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = last_extent(x);
  if (bias.numel() != n) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match last axis of " +
                     shape_string(x.shape()));
  }
  const auto xd = x.data();
  const auto bd = bias.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + bd[i % n];
  return make_result(x.shape(), std::move(out), {x, bias}, "add_bias", [n](TensorImpl& self) {
    if (needs(self, 0)) {
      auto& p = parent(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.accumulate(i, self.grad[i]);
    }
    if (needs(self, 1)) {
      std::vector<double> db(n, 0.0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i % n] += self.grad[i];
      auto& p = parent(self, 1);
      for (std::size_t j = 0; j < n; ++j) p.accumulate(j, db[j]);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  // Saturate strictly inside (0, 1) at the active precision.
  const bool f32 = current_precision() == Precision::F32;
  const double lo = f32 ? static_cast<double>(std::numeric_limits<float>::denorm_min())
                        : std::numeric_limits<double>::denorm_min();
  const double hi = f32 ? 1.0 - std::ldexp(1.0, -24) : 1.0 - std::ldexp(1.0, -53);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    double s;
    if (v >= 0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  return make_result(x.shape(), std::move(out), {x}, "sigmoid", [](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      p.accumulate(i, self.grad[i] * y * (1.0 - y));
    }
  });
}

Tensor gelu(const Tensor& x) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] / std::numbers::sqrt2));
  }
  return make_result(x.shape(), std::move(out), {x}, "gelu", [](TensorImpl& self) {
    auto& p = parent(self, 0);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = p.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      p.accumulate(i, self.grad[i] * (cdf + v * pdf));
    }
  });
}

Tensor softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  const std::size_t n = last_extent(x), rows = row_count(x);
  if (!mask.empty() && mask.size() != x.numel()) {
    throw ShapeError("softmax: mask length " + std::to_string(mask.size()) + " does not match " +
                     shape_string(x.shape()));
  }
  const auto xd = x.data();
  std::vector<double> out(xd.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    auto masked = [&](std::size_t j) { return !mask.empty() && mask[base + j] != 0; };
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked(j)) continue;
      any = true;
      // NaN wins so it reaches the output instead of passing for a masked row.
      if (std::isnan(xd[base + j]) || xd[base + j] > mx) mx = xd[base + j];
    }
    if (!any) {
      throw std::invalid_argument("softmax: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked(j)) continue;
      out[base + j] = std::exp(xd[base + j] - mx);
      total += out[base + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[base + j] /= total;
  }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [n, rows](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[base + j] * self.data[base + j];
      for (std::size_t j = 0; j < n; ++j) {
        p.accumulate(base + j, self.data[base + j] * (self.grad[base + j] - dot));
      }
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = last_extent(x), rows = row_count(x);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mx = xd[base];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xd[base + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(xd[base + j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[base + j] = xd[base + j] - lse;
  }
  return make_result(x.shape(), std::move(out), {x}, "log_softmax", [n, rows](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += self.grad[base + j];
      for (std::size_t j = 0; j < n; ++j) {
        p.accumulate(base + j, self.grad[base + j] - std::exp(self.data[base + j]) * gsum);
      }
    }
  });
}

Tensor log_clamped(const Tensor& x, double floor) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(xd[i], floor));
  return make_result(x.shape(), std::move(out), {x}, "log_clamped", [floor](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.data[i] > floor) p.accumulate(i, self.grad[i] / p.data[i]);
    }
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  if (axis >= x.rank()) {
    throw ShapeError("mean_axis: invalid axis " + std::to_string(axis) + " for " +
                     shape_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];
  const auto xd = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t in = 0; in < inner; ++in)
        out[o * inner + in] += xd[(o * extent + e) * inner + in];
  for (auto& v : out) v /= static_cast<double>(extent);

  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) {
      out_shape.push_back(shape[i]);
    } else if (keepdim) {
      out_shape.push_back(1);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  return make_result(std::move(out_shape), std::move(out), {x}, "mean_axis",
                     [outer, extent, inner](TensorImpl& self) {
                       auto& p = parent(self, 0);
                       const double inv = 1.0 / static_cast<double>(extent);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t e = 0; e < extent; ++e)
                           for (std::size_t in = 0; in < inner; ++in)
                             p.accumulate((o * extent + e) * inner + in,
                                          self.grad[o * inner + in] * inv);
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, {x}, "sum", [](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t i = 0; i < p.data.size(); ++i) p.accumulate(i, self.grad[0]);
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor concat_last(const Tensor& a, const Tensor& b) {
  Shape lead_a(a.shape().begin(), a.shape().end() - 1);
  Shape lead_b(b.shape().begin(), b.shape().end() - 1);
  if (lead_a != lead_b) {
    throw ShapeError("concat_last: leading shapes differ " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t na = last_extent(a), nb = last_extent(b), rows = row_count(a);
  const std::size_t nc = na + nb;
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(rows * nc);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad.data() + r * na, na, out.data() + r * nc);
    std::copy_n(bd.data() + r * nb, nb, out.data() + r * nc + na);
  }
  Shape shape = lead_a;
  shape.push_back(nc);
  return make_result(std::move(shape), std::move(out), {a, b}, "concat_last",
                     [na, nb, nc, rows](TensorImpl& self) {
                       if (needs(self, 0)) {
                         auto& p = parent(self, 0);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < na; ++j)
                             p.accumulate(r * na + j, self.grad[r * nc + j]);
                       }
                       if (needs(self, 1)) {
                         auto& p = parent(self, 1);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < nb; ++j)
                             p.accumulate(r * nb + j, self.grad[r * nc + na + j]);
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = last_extent(parts.front());
  std::size_t total_rows = 0;
  for (const auto& t : parts) {
    if (last_extent(t) != d) {
      throw ShapeError("concat_rows: last extent mismatch " + shape_string(parts.front().shape()) +
                       " vs " + shape_string(t.shape()));
    }
    total_rows += row_count(t);
  }
  std::vector<double> out;
  out.reserve(total_rows * d);
  std::vector<std::size_t> offsets;
  for (const auto& t : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return make_result({total_rows, d}, std::move(out), parts, "concat_rows",
                     [offsets](TensorImpl& self) {
                       for (std::size_t s = 0; s < self.parents.size(); ++s) {
                         if (!needs(self, s)) continue;
                         auto& p = parent(self, s);
                         for (std::size_t i = 0; i < p.data.size(); ++i)
                           p.accumulate(i, self.grad[offsets[s] + i]);
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t d = last_extent(x), rows = row_count(x);
  if (count == 0 || start + count > rows) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_string(x.shape()));
  }
  const auto xd = x.data();
  std::vector<double> out(xd.begin() + static_cast<std::ptrdiff_t>(start * d),
                          xd.begin() + static_cast<std::ptrdiff_t>((start + count) * d));
  return make_result({count, d}, std::move(out), {x}, "slice_rows", [start, d](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.accumulate(start * d + i, self.grad[i]);
  });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t n = last_extent(x), rows = row_count(x);
  if (count == 0 || start + count > n) {
    throw ShapeError("slice_last: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_string(x.shape()));
  }
  const auto xd = x.data();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xd.data() + r * n + start, count, out.data() + r * count);
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  shape.push_back(count);
  return make_result(std::move(shape), std::move(out), {x}, "slice_last",
                     [start, count, n, rows](TensorImpl& self) {
                       auto& p = parent(self, 0);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < count; ++j)
                           p.accumulate(r * n + start + j, self.grad[r * count + j]);
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape", [](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.accumulate(i, self.grad[i]);
  });
}

Tensor tile_rows(const Tensor& v, std::size_t rows) {
  const std::size_t d = v.numel();
  if (rows == 0) throw ShapeError("tile_rows: zero rows");
  std::vector<double> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data().data(), d, out.data() + r * d);
  return make_result({rows, d}, std::move(out), {v}, "tile_rows", [rows, d](TensorImpl& self) {
    auto& p = parent(self, 0);
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) acc += self.grad[r * d + j];
      p.accumulate(j, acc);
    }
  });
}

Tensor outer(const Tensor& col, const Tensor& row) {
  const std::size_t m = col.numel(), n = row.numel();
  const auto cd = col.data();
  const auto rd = row.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = cd[i] * rd[j];
  return make_result({m, n}, std::move(out), {col, row}, "outer", [m, n](TensorImpl& self) {
    auto& pc = parent(self, 0);
    auto& pr = parent(self, 1);
    if (needs(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * pr.data[j];
        pc.accumulate(i, acc);
      }
    }
    if (needs(self, 1)) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += self.grad[i * n + j] * pc.data[i];
        pr.accumulate(j, acc);
      }
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2");
  if (ids.empty()) throw ShapeError("gather_rows: no ids");
  const std::size_t v = table.dim(0), d = table.dim(1);
  const auto td = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(v) + " rows");
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, "gather_rows",
                     [saved, d](TensorImpl& self) {
                       auto& p = parent(self, 0);
                       for (std::size_t r = 0; r < saved.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j)
                           p.accumulate(static_cast<std::size_t>(saved[r]) * d + j,
                                        self.grad[r * d + j]);
                     });
}

Tensor select(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) {
    throw std::out_of_range("select: index " + std::to_string(flat_index) + " outside " +
                            shape_string(x.shape()));
  }
  return make_result({1}, {x.data()[flat_index]}, {x}, "select", [flat_index](TensorImpl& self) {
    parent(self, 0).accumulate(flat_index, self.grad[0]);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = last_extent(x), rows = row_count(x);
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layer_norm: gain/bias do not match last axis of " + shape_string(x.shape()));
  }
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xd[base + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xd[base + j] - mu) * (xd[base + j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[base + j] = (xd[base + j] - mu) * inv_std[r];
      out[base + j] = gd[j] * xhat[base + j] + bd[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
                     [n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
                       auto& px = parent(self, 0);
                       auto& pg = parent(self, 1);
                       auto& pb = parent(self, 2);
                       if (needs(self, 1) || needs(self, 2)) {
                         std::vector<double> dg(n, 0.0), db(n, 0.0);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j) {
                             dg[j] += self.grad[r * n + j] * xhat[r * n + j];
                             db[j] += self.grad[r * n + j];
                           }
                         for (std::size_t j = 0; j < n; ++j) {
                           if (needs(self, 1)) pg.accumulate(j, dg[j]);
                           if (needs(self, 2)) pb.accumulate(j, db[j]);
                         }
                       }
                       if (needs(self, 0)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           const std::size_t base = r * n;
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                             const double dxhat = self.grad[base + j] * pg.data[j];
                             mean_d += dxhat;
                             mean_dx += dxhat * xhat[base + j];
                           }
                           mean_d /= static_cast<double>(n);
                           mean_dx /= static_cast<double>(n);
                           for (std::size_t j = 0; j < n; ++j) {
                             const double dxhat = self.grad[base + j] * pg.data[j];
                             px.accumulate(base + j,
                                           inv_std[r] * (dxhat - mean_d - xhat[base + j] * mean_dx));
                           }
                         }
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  const std::size_t n = last_extent(x), rows = row_count(x);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += xd[r * n + j] * xd[r * n + j];
    norms[r] = std::sqrt(ss + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xd[r * n + j] / norms[r];
  }
  return make_result(x.shape(), std::move(out), {x}, "l2_normalize_rows",
                     [n, rows, norms = std::move(norms)](TensorImpl& self) {
                       auto& p = parent(self, 0);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * n;
                         // Use the unrounded quotient so the rule stays exact in f32 mode.
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j)
                           dot += self.grad[base + j] * (p.data[base + j] / norms[r]);
                         for (std::size_t j = 0; j < n; ++j) {
                           const double y = p.data[base + j] / norms[r];
                           p.accumulate(base + j, (self.grad[base + j] - y * dot) / norms[r]);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double factor = 1.0 / (1.0 - rate);
  std::vector<double> multiplier(x.numel());
  for (auto& m : multiplier) m = keep(rng) ? factor : 0.0;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * multiplier[i];
  return make_result(x.shape(), std::move(out), {x}, "dropout",
                     [multiplier = std::move(multiplier)](TensorImpl& self) {
                       auto& p = parent(self, 0);
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         p.accumulate(i, self.grad[i] * multiplier[i]);
                     });
}

}  // namespace quag
