#include "normaug/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace naug {

namespace {

Shape row_major_strides(const Shape &shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

struct Broadcast {
  Shape out;
  Shape stride_a;
  Shape stride_b;
  bool same = false;
};

Broadcast broadcast(const std::string &op, const Shape &a, const Shape &b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  bc.out.assign(rank, 1);
  bc.stride_a.assign(rank, 0);
  bc.stride_b.assign(rank, 0);
  const Shape sa = row_major_strides(a);
  const Shape sb = row_major_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t oa = rank - a.size();
    const std::size_t ob = rank - b.size();
    const std::size_t da = i >= oa ? a[i - oa] : 1;
    const std::size_t db = i >= ob ? b[i - ob] : 1;
    if (da != db && da != 1 && db != 1) throw ShapeError(op, a, b);
    bc.out[i] = std::max(da, db);
    if (i >= oa && da != 1) bc.stride_a[i] = sa[i - oa];
    if (i >= ob && db != 1) bc.stride_b[i] = sb[i - ob];
  }
  return bc;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Broadcast &bc, F &&f) {
  const std::size_t n = shape_numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * idx[d];
      ib -= bc.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

Tensor binary(const std::string &op, BinaryKind kind, const Tensor &a, const Tensor &b) {
  Broadcast bc = broadcast(op, a.shape(), b.shape());
  std::vector<double> out(shape_numel(bc.out));
  auto da = a.data();
  auto db = b.data();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
    switch (kind) {
      case BinaryKind::add: out[o] = da[i] + db[j]; break;
      case BinaryKind::sub: out[o] = da[i] - db[j]; break;
      case BinaryKind::mul: out[o] = da[i] * db[j]; break;
      case BinaryKind::div: out[o] = da[i] / db[j]; break;
    }
  });
  Shape out_shape = bc.out;
  return make_result(op, std::move(out_shape), std::move(out), {a, b},
                     [a, b, bc, kind](std::span<const double> g, std::span<const std::span<double>> gi) {
                       auto ga = gi[0];
                       auto gb = gi[1];
                       auto da = a.data();
                       auto db = b.data();
                       for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
                         switch (kind) {
                           case BinaryKind::add:
                             if (!ga.empty()) ga[i] += g[o];
                             if (!gb.empty()) gb[j] += g[o];
                             break;
                           case BinaryKind::sub:
                             if (!ga.empty()) ga[i] += g[o];
                             if (!gb.empty()) gb[j] -= g[o];
                             break;
                           case BinaryKind::mul:
                             if (!ga.empty()) ga[i] += g[o] * db[j];
                             if (!gb.empty()) gb[j] += g[o] * da[i];
                             break;
                           case BinaryKind::div:
                             if (!ga.empty()) ga[i] += g[o] / db[j];
                             if (!gb.empty()) gb[j] -= g[o] * da[i] / (db[j] * db[j]);
                             break;
                         }
                       });
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(const std::string &op, const Tensor &x, Fwd fwd, Deriv deriv) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = fwd(dx[i]);
  if (!grad_enabled() || !x.requires_grad()) return Tensor(x.shape(), std::move(out));
  // Derivatives may depend on the output value.
  std::vector<double> saved = out;
  return make_result(op, x.shape(), std::move(out), {x},
                     [x, saved, deriv](std::span<const double> g, std::span<const std::span<double>> gi) {
                       auto dx = x.data();
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * deriv(dx[i], saved[i]);
                     });
}

double pairwise_sum(std::span<const double> data, std::size_t base, const std::size_t *rel,
                    std::size_t n) {
  if (n == 1) return data[base + rel[0]];
  if (n == 2) return data[base + rel[0]] + data[base + rel[1]];
  const std::size_t half = n / 2;
  return pairwise_sum(data, base, rel, half) + pairwise_sum(data, base, rel + half, n - half);
}

void require_rank(const std::string &op, const Tensor &x, std::size_t rank) {
  if (x.rank() != rank) {
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got shape " +
                             shape_to_string(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor &a, const Tensor &b) { return binary("add", BinaryKind::add, a, b); }
Tensor sub(const Tensor &a, const Tensor &b) { return binary("sub", BinaryKind::sub, a, b); }
Tensor mul(const Tensor &a, const Tensor &b) { return binary("mul", BinaryKind::mul, a, b); }
Tensor div(const Tensor &a, const Tensor &b) { return binary("div", BinaryKind::div, a, b); }

Tensor add_scalar(const Tensor &x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor &x, double c) {
  return unary("mul_scalar", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor square(const Tensor &x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor &x) {
  return unary("sqrt", x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor &x) {
  return unary("relu", x, [](double v) { return v < 0.0 ? 0.0 : v; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor &x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor &x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor matmul(const Tensor &a, const Tensor &b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t rows = a.dim(0);
  const std::size_t inner = a.dim(1);
  const std::size_t cols = b.dim(1);
  if (b.dim(0) != inner) throw ShapeError("matmul", a.shape(), b.shape());
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double *orow = out.data() + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = da[i * inner + k];
      const double *brow = db.data() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result("matmul", {rows, cols}, std::move(out), {a, b},
                     [a, b, rows, inner, cols](std::span<const double> g,
                                               std::span<const std::span<double>> gi) {
                       auto da = a.data();
                       auto db = b.data();
                       if (!gi[0].empty()) {
                         for (std::size_t i = 0; i < rows; ++i)
                           for (std::size_t k = 0; k < inner; ++k) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j] * db[k * cols + j];
                             gi[0][i * inner + k] += acc;
                           }
                       }
                       if (!gi[1].empty()) {
                         for (std::size_t i = 0; i < rows; ++i)
                           for (std::size_t k = 0; k < inner; ++k) {
                             const double av = da[i * inner + k];
                             for (std::size_t j = 0; j < cols; ++j) gi[1][k * cols + j] += av * g[i * cols + j];
                           }
                       }
                     });
}

Tensor mean(const Tensor &x, const std::vector<std::size_t> &axes) {
  const Shape &shape = x.shape();
  std::vector<bool> reduced(shape.size(), false);
  for (auto axis : axes) {
    if (axis >= shape.size() || reduced[axis]) {
      throw ShapeError("mean", "invalid axis " + std::to_string(axis) + " for shape " +
                                   shape_to_string(shape));
    }
    reduced[axis] = true;
  }
  const Shape strides = row_major_strides(shape);
  Shape out_shape = shape;
  Shape kept_dims;
  Shape kept_strides;
  Shape red_dims;
  Shape red_strides;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (reduced[d]) {
      out_shape[d] = 1;
      red_dims.push_back(shape[d]);
      red_strides.push_back(strides[d]);
    } else {
      kept_dims.push_back(shape[d]);
      kept_strides.push_back(strides[d]);
    }
  }
  auto offsets = [](const Shape &dims, const Shape &strides_) {
    std::vector<std::size_t> result(shape_numel(dims), 0);
    std::vector<std::size_t> idx(dims.size(), 0);
    for (std::size_t n = 0; n < result.size(); ++n) {
      std::size_t off = 0;
      for (std::size_t d = 0; d < dims.size(); ++d) off += idx[d] * strides_[d];
      result[n] = off;
      for (std::size_t d = dims.size(); d-- > 0;) {
        if (++idx[d] < dims[d]) break;
        idx[d] = 0;
      }
    }
    return result;
  };
  std::vector<std::size_t> rel = offsets(red_dims, red_strides);
  std::vector<std::size_t> base = offsets(kept_dims, kept_strides);
  if (rel.empty() || base.empty()) throw ShapeError("mean", "empty reduction over " + shape_to_string(shape));
  const double count = static_cast<double>(rel.size());
  auto dx = x.data();
  std::vector<double> out(base.size());
  for (std::size_t k = 0; k < base.size(); ++k) out[k] = pairwise_sum(dx, base[k], rel.data(), rel.size()) / count;
  return make_result("mean", std::move(out_shape), std::move(out), {x},
                     [rel, base, count](std::span<const double> g, std::span<const std::span<double>> gi) {
                       for (std::size_t k = 0; k < base.size(); ++k) {
                         const double share = g[k] / count;
                         for (auto r : rel) gi[0][base[k] + r] += share;
                       }
                     });
}

Tensor variance(const Tensor &x, const std::vector<std::size_t> &axes) {
  return mean(square(sub(x, mean(x, axes))), axes);
}

Tensor sum_all(const Tensor &x) {
  auto dx = x.data();
  double total = 0.0;
  for (double v : dx) total += v;
  return make_result("sum_all", Shape{}, {total}, {x},
                     [](std::span<const double> g, std::span<const std::span<double>> gi) {
                       for (auto &v : gi[0]) v += g[0];
                     });
}

Tensor mean_all(const Tensor &x) { return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor &x, const Shape &shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", shape, std::move(out), {x},
                     [](std::span<const double> g, std::span<const std::span<double>> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     });
}

Tensor element(const Tensor &x, std::size_t flat_index) {
  if (flat_index >= x.numel()) {
    throw ShapeError("element", "index " + std::to_string(flat_index) + " out of range for " +
                                    shape_to_string(x.shape()));
  }
  return make_result("element", Shape{}, {x.data()[flat_index]}, {x},
                     [flat_index](std::span<const double> g, std::span<const std::span<double>> gi) {
                       gi[0][flat_index] += g[0];
                     });
}

Tensor softmax(const Tensor &logits) {
  require_rank("softmax", logits, 2);
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  auto dx = logits.data();
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double *row = dx.data() + i * cols;
    const double peak = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += out[i * cols + j] = std::exp(row[j] - peak);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] /= total;
  }
  std::vector<double> probs = out;
  return make_result("softmax", logits.shape(), std::move(out), {logits},
                     [probs, rows, cols](std::span<const double> g, std::span<const std::span<double>> gi) {
                       for (std::size_t i = 0; i < rows; ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * probs[i * cols + j];
                         for (std::size_t j = 0; j < cols; ++j)
                           gi[0][i * cols + j] += probs[i * cols + j] * (g[i * cols + j] - dot);
                       }
                     });
}

Tensor log_softmax(const Tensor &logits) {
  require_rank("log_softmax", logits, 2);
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  auto dx = logits.data();
  std::vector<double> out(rows * cols);
  std::vector<double> probs(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double *row = dx.data() + i * cols;
    const double peak = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(row[j] - peak);
    const double log_total = std::log(total) + peak;
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] = row[j] - log_total;
      probs[i * cols + j] = std::exp(out[i * cols + j]);
    }
  }
  return make_result("log_softmax", logits.shape(), std::move(out), {logits},
                     [probs, rows, cols](std::span<const double> g, std::span<const std::span<double>> gi) {
                       for (std::size_t i = 0; i < rows; ++i) {
                         double total = 0.0;
                         for (std::size_t j = 0; j < cols; ++j) total += g[i * cols + j];
                         for (std::size_t j = 0; j < cols; ++j)
                           gi[0][i * cols + j] += g[i * cols + j] - probs[i * cols + j] * total;
                       }
                     });
}

Tensor nll(const Tensor &log_probs, const std::vector<std::size_t> &labels) {
  require_rank("nll", log_probs, 2);
  const std::size_t rows = log_probs.dim(0);
  const std::size_t cols = log_probs.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("nll", log_probs.shape(), Shape{labels.size()});
  }
  if (rows == 0) throw ShapeError("nll", "empty batch");
  auto dx = log_probs.data();
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] >= cols) {
      throw std::out_of_range("nll: label " + std::to_string(labels[i]) + " out of range for " +
                              std::to_string(cols) + " classes");
    }
    total -= dx[i * cols + labels[i]];
  }
  return make_result("nll", Shape{}, {total / static_cast<double>(rows)}, {log_probs},
                     [labels, rows, cols](std::span<const double> g, std::span<const std::span<double>> gi) {
                       const double share = g[0] / static_cast<double>(rows);
                       for (std::size_t i = 0; i < rows; ++i) gi[0][i * cols + labels[i]] -= share;
                     });
}

Tensor cross_entropy(const Tensor &logits, const std::vector<std::size_t> &labels) {
  return nll(log_softmax(logits), labels);
}

Tensor conv2d(const Tensor &x, const Tensor &weight, std::size_t pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const std::size_t batch = x.dim(0);
  const std::size_t cin = x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const std::size_t cout = weight.dim(0);
  const std::size_t k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k) throw ShapeError("conv2d", x.shape(), weight.shape());
  if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("conv2d", x.shape(), weight.shape());
  const std::size_t oh = h + 2 * pad - k + 1;
  const std::size_t ow = w + 2 * pad - k + 1;

  // Visits every (output, input, weight) index triple that contributes.
  auto visit = [=](auto &&f) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::size_t o = ((n * cout + co) * oh + oy) * ow + ox;
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::size_t iy = oy + ky;
                if (iy < pad || iy - pad >= h) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::size_t ix = ox + kx;
                  if (ix < pad || ix - pad >= w) continue;
                  const std::size_t xi = ((n * cin + ci) * h + (iy - pad)) * w + (ix - pad);
                  const std::size_t wi = ((co * cin + ci) * k + ky) * k + kx;
                  f(o, xi, wi);
                }
              }
          }
  };

  auto dx = x.data();
  auto dw = weight.data();
  std::vector<double> out(batch * cout * oh * ow, 0.0);
  visit([&](std::size_t o, std::size_t xi, std::size_t wi) { out[o] += dx[xi] * dw[wi]; });
  return make_result("conv2d", {batch, cout, oh, ow}, std::move(out), {x, weight},
                     [x, weight, visit](std::span<const double> g, std::span<const std::span<double>> gi) {
                       auto dx = x.data();
                       auto dw = weight.data();
                       visit([&](std::size_t o, std::size_t xi, std::size_t wi) {
                         if (!gi[0].empty()) gi[0][xi] += g[o] * dw[wi];
                         if (!gi[1].empty()) gi[1][wi] += g[o] * dx[xi];
                       });
                     });
}

Tensor global_avg_pool(const Tensor &x) {
  require_rank("global_avg_pool", x, 4);
  return reshape(mean(x, {2, 3}), {x.dim(0), x.dim(1)});
}

Tensor gather_rows(const Tensor &x, const std::vector<std::size_t> &rows) {
  if (x.rank() == 0) throw ShapeError("gather_rows", "scalar input");
  const std::size_t total = x.dim(0);
  const std::size_t width = total ? x.numel() / total : 0;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  auto dx = x.data();
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= total) {
      throw ShapeError("gather_rows", "row " + std::to_string(rows[r]) + " out of range for " +
                                          shape_to_string(x.shape()));
    }
    std::copy_n(dx.begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return make_result("gather_rows", std::move(out_shape), std::move(out), {x},
                     [rows, width](std::span<const double> g, std::span<const std::span<double>> gi) {
                       for (std::size_t r = 0; r < rows.size(); ++r)
                         for (std::size_t j = 0; j < width; ++j) gi[0][rows[r] * width + j] += g[r * width + j];
                     });
}

Tensor assemble_rows(const std::vector<Tensor> &parts, const std::vector<std::vector<std::size_t>> &rows,
                     std::size_t total_rows) {
  if (parts.empty() || parts.size() != rows.size()) {
    throw ShapeError("assemble_rows", "need one row list per part");
  }
  Shape row_shape(parts[0].shape().begin() + 1, parts[0].shape().end());
  const std::size_t width = shape_numel(row_shape);
  std::vector<bool> seen(total_rows, false);
  std::vector<double> out(total_rows * width, 0.0);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape &ps = parts[p].shape();
    if (ps.empty() || Shape(ps.begin() + 1, ps.end()) != row_shape || ps[0] != rows[p].size()) {
      throw ShapeError("assemble_rows", parts[0].shape(), ps);
    }
    auto dp = parts[p].data();
    for (std::size_t r = 0; r < rows[p].size(); ++r) {
      const std::size_t dst = rows[p][r];
      if (dst >= total_rows || seen[dst]) {
        throw ShapeError("assemble_rows", "row " + std::to_string(dst) + " duplicated or out of range");
      }
      seen[dst] = true;
      std::copy_n(dp.begin() + static_cast<std::ptrdiff_t>(r * width), width,
                  out.begin() + static_cast<std::ptrdiff_t>(dst * width));
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ShapeError("assemble_rows", "parts do not cover all " + std::to_string(total_rows) + " rows");
  }
  Shape out_shape = row_shape;
  out_shape.insert(out_shape.begin(), total_rows);
  return make_result("assemble_rows", std::move(out_shape), std::move(out), parts,
                     [rows, width](std::span<const double> g, std::span<const std::span<double>> gi) {
                       for (std::size_t p = 0; p < rows.size(); ++p) {
                         if (gi[p].empty()) continue;
                         for (std::size_t r = 0; r < rows[p].size(); ++r)
                           for (std::size_t j = 0; j < width; ++j) gi[p][r * width + j] += g[rows[p][r] * width + j];
                       }
                     });
}

}  // namespace naug
