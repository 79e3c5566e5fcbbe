#include "velvet/ag/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "velvet/error.hpp"

namespace velvet::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) fail(Errc::ShapeMismatch, std::string(op) + ": " + detail);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::int64_t row_width(const Tensor& x) {
  require(x.rank() >= 1, "rows", "scalar has no rows");
  std::int64_t w = 1;
  for (std::int64_t i = 1; i < x.rank(); ++i) w *= x.dim(i);
  return w;
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

bool wants_grad(Node& self, std::size_t i) {
  return i < self.parents.size() && self.parents[i] && self.parents[i]->requires_grad;
}

}  // namespace

void Groups::add_group(const std::vector<std::int64_t>& rows) {
  members.insert(members.end(), rows.begin(), rows.end());
  offsets.push_back(static_cast<std::int64_t>(members.size()));
}

Groups Groups::contiguous(std::int64_t count, std::int64_t per) {
  Groups g;
  g.members.resize(static_cast<std::size_t>(count * per));
  for (std::int64_t i = 0; i < count * per; ++i) g.members[static_cast<std::size_t>(i)] = i;
  g.offsets.resize(static_cast<std::size_t>(count + 1));
  for (std::int64_t i = 0; i <= count; ++i) g.offsets[static_cast<std::size_t>(i)] = i * per;
  return g;
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_result(std::move(shape), x.node()->value, {x}, [](Node& self) {
    Node& p = parent(self, 0);
    double* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const auto r = static_cast<std::size_t>(x.rank());
  require(perm.size() == r, "permute", "rank mismatch");
  const Shape& in = x.shape();
  Shape out(r);
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  // Stride in the input for each output axis.
  std::vector<std::int64_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[static_cast<std::size_t>(perm[i])];
    src_strides[i] = in_strides[static_cast<std::size_t>(perm[i])];
  }
  const std::int64_t n = x.numel();
  auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t o = 0; o < n; ++o) {
    (*map)[static_cast<std::size_t>(o)] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += src_strides[ax];
      if (idx[ax] < out[ax]) break;
      src -= src_strides[ax] * out[ax];
      idx[ax] = 0;
    }
  }
  std::vector<double> value(static_cast<std::size_t>(n));
  const auto& xv = x.node()->value;
  for (std::int64_t o = 0; o < n; ++o) value[static_cast<std::size_t>(o)] = xv[static_cast<std::size_t>((*map)[o])];
  return make_result(std::move(out), std::move(value), {x}, [map](Node& self) {
    double* g = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*map)[o]] += self.grad[o];
  });
}

Tensor transpose2d(const Tensor& x) {
  require(x.rank() == 2, "transpose2d", shape_str(x.shape()));
  return permute(x, {1, 0});
}

Tensor gather_rows(const Tensor& x, IndexPtr rows) {
  const std::int64_t width = row_width(x);
  const std::int64_t nrows = x.rank() == 0 ? 0 : x.dim(0);
  for (std::int64_t r : *rows) require(r >= -1 && r < nrows, "gather_rows", "row index out of range");
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(rows->size());
  std::vector<double> value(rows->size() * static_cast<std::size_t>(width), 0.0);
  const double* src = x.node()->value.data();
  for (std::size_t i = 0; i < rows->size(); ++i) {
    const std::int64_t r = (*rows)[i];
    if (r < 0) continue;
    std::copy_n(src + r * width, width, value.data() + static_cast<std::int64_t>(i) * width);
  }
  return make_result(std::move(shape), std::move(value), {x}, [rows, width](Node& self) {
    double* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < rows->size(); ++i) {
      const std::int64_t r = (*rows)[i];
      if (r < 0) continue;
      const double* gi = self.grad.data() + static_cast<std::int64_t>(i) * width;
      double* gr = g + r * width;
      for (std::int64_t c = 0; c < width; ++c) gr[c] += gi[c];
    }
  });
}

Tensor gather_rows(const Tensor& x, Index rows) {
  return gather_rows(x, std::make_shared<const Index>(std::move(rows)));
}

Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end) {
  require(x.rank() >= 1 && 0 <= begin && begin <= end && end <= x.dim(0), "slice_rows", shape_str(x.shape()));
  const std::int64_t width = row_width(x);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> value(x.node()->value.begin() + begin * width, x.node()->value.begin() + end * width);
  return make_result(std::move(shape), std::move(value), {x}, [begin, width](Node& self) {
    double* g = parent(self, 0).grad_buffer() + begin * width;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  Shape shape = parts[0].shape();
  std::int64_t rows = 0;
  std::vector<double> value;
  for (const auto& p : parts) {
    require(p.rank() == static_cast<std::int64_t>(shape.size()) &&
                std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1),
            "concat_rows", shape_str(p.shape()) + " vs " + shape_str(shape));
    rows += p.dim(0);
    value.insert(value.end(), p.node()->value.begin(), p.node()->value.end());
  }
  shape[0] = rows;
  return make_result(std::move(shape), std::move(value), parts, [](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = parent(self, i);
      const std::size_t n = p.value.size();
      if (p.requires_grad) {
        double* g = p.grad_buffer();
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[offset + j];
      }
      offset += n;
    }
  });
}

Tensor pool_rows(const Tensor& x, GroupsPtr groups) {
  require(x.rank() == 2, "pool_rows", shape_str(x.shape()));
  const std::int64_t width = x.dim(1);
  const std::int64_t ng = groups->size();
  std::vector<double> value(static_cast<std::size_t>(ng * width), 0.0);
  const double* src = x.node()->value.data();
  for (std::int64_t g = 0; g < ng; ++g) {
    const auto b = groups->offsets[g], e = groups->offsets[g + 1];
    if (b == e) continue;
    double* out = value.data() + g * width;
    for (auto m = b; m < e; ++m) {
      const auto r = groups->members[m];
      require(r >= 0 && r < x.dim(0), "pool_rows", "member out of range");
      for (std::int64_t c = 0; c < width; ++c) out[c] += src[r * width + c];
    }
    const double inv = 1.0 / static_cast<double>(e - b);
    for (std::int64_t c = 0; c < width; ++c) out[c] *= inv;
  }
  return make_result({ng, width}, std::move(value), {x}, [groups, width](Node& self) {
    double* gx = parent(self, 0).grad_buffer();
    for (std::int64_t g = 0; g < groups->size(); ++g) {
      const auto b = groups->offsets[g], e = groups->offsets[g + 1];
      if (b == e) continue;
      const double inv = 1.0 / static_cast<double>(e - b);
      const double* go = self.grad.data() + g * width;
      for (auto m = b; m < e; ++m) {
        double* dst = gx + groups->members[m] * width;
        for (std::int64_t c = 0; c < width; ++c) dst[c] += go[c] * inv;
      }
    }
  });
}

Tensor mask_rows(const Tensor& x, const std::vector<std::uint8_t>& keep) {
  const std::int64_t width = row_width(x);
  require(static_cast<std::int64_t>(keep.size()) == x.dim(0), "mask_rows", "mask length");
  std::vector<double> value = x.node()->value;
  for (std::size_t r = 0; r < keep.size(); ++r)
    if (!keep[r]) std::fill_n(value.begin() + static_cast<std::int64_t>(r) * width, width, 0.0);
  return make_result(x.shape(), std::move(value), {x}, [keep, width](Node& self) {
    double* g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < keep.size(); ++r) {
      if (!keep[r]) continue;
      for (std::int64_t c = 0; c < width; ++c) g[r * width + c] += self.grad[r * width + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> value(a.node()->value);
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < value.size(); ++i) value[i] += bv[i];
  return make_result(a.shape(), std::move(value), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      double* g = parent(self, k).grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> value(a.node()->value);
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < value.size(); ++i) value[i] -= bv[i];
  return make_result(a.shape(), std::move(value), {a, b}, [](Node& self) {
    if (wants_grad(self, 0)) {
      double* g = parent(self, 0).grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      double* g = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> value(a.node()->value);
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < value.size(); ++i) value[i] *= bv[i];
  return make_result(a.shape(), std::move(value), {a, b}, [](Node& self) {
    const auto& av = parent(self, 0).value;
    const auto& bv = parent(self, 1).value;
    if (wants_grad(self, 0)) {
      double* g = parent(self, 0).grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants_grad(self, 1)) {
      double* g = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> value(x.node()->value);
  for (double& v : value) v *= c;
  return make_result(x.shape(), std::move(value), {x}, [c](Node& self) {
    double* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
  });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  require(s.numel() == 1, "mul_scalar", "scale must have one element");
  const double c = s.item();
  std::vector<double> value(x.node()->value);
  for (double& v : value) v *= c;
  return make_result(x.shape(), std::move(value), {x, s}, [](Node& self) {
    const double c = parent(self, 1).value[0];
    if (wants_grad(self, 0)) {
      double* g = parent(self, 0).grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
    }
    if (wants_grad(self, 1)) {
      const auto& xv = parent(self, 0).value;
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xv[i];
      parent(self, 1).grad_buffer()[0] += acc;
    }
  });
}

Tensor exp(const Tensor& x) {
  std::vector<double> value(x.node()->value);
  for (double& v : value) v = std::exp(v);
  return make_result(x.shape(), value, {x}, [value](Node& self) {
    double* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * value[i];
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  std::vector<double> value(x.node()->value);
  for (double& v : value) v = std::clamp(v, lo, hi);
  return make_result(x.shape(), std::move(value), {x}, [lo, hi](Node& self) {
    const auto& xv = parent(self, 0).value;
    double* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xv[i] >= lo && xv[i] <= hi) g[i] += self.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> value(x.node()->value);
  for (double& v : value) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_result(x.shape(), std::move(value), {x}, [](Node& self) {
    const auto& xv = parent(self, 0).value;
    double* g = parent(self, 0).grad_buffer();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.node()->value) acc += v;
  return make_result({1}, {acc}, {x}, [](Node& self) {
    double* g = parent(self, 0).grad_buffer();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < parent(self, 0).value.size(); ++i) g[i] += up;
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Dense algebra

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(w.rank() == 2 && x.rank() >= 1 && x.dim(-1) == w.dim(0), "linear",
          shape_str(x.shape()) + " @ " + shape_str(w.shape()));
  const std::int64_t in = w.dim(0), out = w.dim(1);
  if (b.defined()) require(b.numel() == out, "linear", "bias size");
  const std::int64_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out;
  std::vector<double> value(static_cast<std::size_t>(rows * out));
  MapMat y(value.data(), rows, out);
  y.noalias() = CMapMat(x.node()->value.data(), rows, in) * CMapMat(w.node()->value.data(), in, out);
  if (b.defined()) y.rowwise() += CMapVec(b.node()->value.data(), out).transpose();
  return make_result(std::move(shape), std::move(value), {x, w, b}, [rows, in, out](Node& self) {
    CMapMat dy(self.grad.data(), rows, out);
    if (wants_grad(self, 0)) {
      MapMat dx(parent(self, 0).grad_buffer(), rows, in);
      dx.noalias() += dy * CMapMat(parent(self, 1).value.data(), in, out).transpose();
    }
    if (wants_grad(self, 1)) {
      MapMat dw(parent(self, 1).grad_buffer(), in, out);
      dw.noalias() += CMapMat(parent(self, 0).value.data(), rows, in).transpose() * dy;
    }
    if (wants_grad(self, 2)) {
      MapVec db(parent(self, 2).grad_buffer(), out);
      db += dy.colwise().sum().transpose();
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1), "matmul_nt",
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::int64_t m = a.dim(0), n = b.dim(0), k = a.dim(1);
  std::vector<double> value(static_cast<std::size_t>(m * n));
  MapMat(value.data(), m, n).noalias() =
      CMapMat(a.node()->value.data(), m, k) * CMapMat(b.node()->value.data(), n, k).transpose();
  return make_result({m, n}, std::move(value), {a, b}, [m, n, k](Node& self) {
    CMapMat dc(self.grad.data(), m, n);
    if (wants_grad(self, 0))
      MapMat(parent(self, 0).grad_buffer(), m, k).noalias() += dc * CMapMat(parent(self, 1).value.data(), n, k);
    if (wants_grad(self, 1))
      MapMat(parent(self, 1).grad_buffer(), n, k).noalias() +=
          dc.transpose() * CMapMat(parent(self, 0).value.data(), m, k);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::int64_t c = x.dim(-1);
  require(gamma.numel() == c && beta.numel() == c, "layer_norm", "affine size");
  const std::int64_t rows = x.numel() / c;
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows * c));
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  std::vector<double> value(static_cast<std::size_t>(rows * c));
  const double* xv = x.node()->value.data();
  const double* gv = gamma.node()->value.data();
  const double* bv = beta.node()->value.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * c;
    double mu = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::int64_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * rs;
      (*xhat)[r * c + j] = h;
      value[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(value), {x, gamma, beta}, [xhat, rstd, rows, c](Node& self) {
    const double* dy = self.grad.data();
    const double* gv = parent(self, 1).value.data();
    if (wants_grad(self, 1)) {
      double* dg = parent(self, 1).grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < c; ++j) dg[j] += dy[r * c + j] * (*xhat)[r * c + j];
    }
    if (wants_grad(self, 2)) {
      double* db = parent(self, 2).grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < c; ++j) db[j] += dy[r * c + j];
    }
    if (wants_grad(self, 0)) {
      double* dx = parent(self, 0).grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
          const double dh = dy[r * c + j] * gv[j];
          m1 += dh;
          m2 += dh * (*xhat)[r * c + j];
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        for (std::int64_t j = 0; j < c; ++j) {
          const double dh = dy[r * c + j] * gv[j];
          dx[r * c + j] += (*rstd)[r] * (dh - m1 - (*xhat)[r * c + j] * m2);
        }
      }
    }
  });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require(x.rank() == 2, "l2_normalize_rows", shape_str(x.shape()));
  const std::int64_t rows = x.dim(0), c = x.dim(1);
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  std::vector<double> value(x.node()->value);
  for (std::int64_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::int64_t j = 0; j < c; ++j) n2 += value[r * c + j] * value[r * c + j];
    const double n = std::max(std::sqrt(n2), eps);
    (*norms)[r] = n;
    for (std::int64_t j = 0; j < c; ++j) value[r * c + j] /= n;
  }
  auto y = std::make_shared<std::vector<double>>(value);
  return make_result(x.shape(), std::move(value), {x}, [norms, y, rows, c, eps](Node& self) {
    double* dx = parent(self, 0).grad_buffer();
    const auto& xv = parent(self, 0).value;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double n = (*norms)[r];
      const double* dy = self.grad.data() + r * c;
      const double* yr = y->data() + r * c;
      double raw = 0.0;
      for (std::int64_t j = 0; j < c; ++j) raw += xv[r * c + j] * xv[r * c + j];
      if (std::sqrt(raw) <= eps) {
        for (std::int64_t j = 0; j < c; ++j) dx[r * c + j] += dy[j] / n;
        continue;
      }
      double proj = 0.0;
      for (std::int64_t j = 0; j < c; ++j) proj += yr[j] * dy[j];
      for (std::int64_t j = 0; j < c; ++j) dx[r * c + j] += (dy[j] - yr[j] * proj) / n;
    }
  });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_same(a, b, "row_dot");
  require(a.rank() == 2, "row_dot", shape_str(a.shape()));
  const std::int64_t rows = a.dim(0), c = a.dim(1);
  std::vector<double> value(static_cast<std::size_t>(rows), 0.0);
  const double* av = a.node()->value.data();
  const double* bv = b.node()->value.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) value[r] += av[r * c + j] * bv[r * c + j];
  return make_result({rows}, std::move(value), {a, b}, [rows, c](Node& self) {
    const double* av = parent(self, 0).value.data();
    const double* bv = parent(self, 1).value.data();
    if (wants_grad(self, 0)) {
      double* g = parent(self, 0).grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < c; ++j) g[r * c + j] += self.grad[r] * bv[r * c + j];
    }
    if (wants_grad(self, 1)) {
      double* g = parent(self, 1).grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < c; ++j) g[r * c + j] += self.grad[r] * av[r * c + j];
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMaskPtr& mask, const Tensor& bias,
                 std::vector<double>* probs_out) {
  require(q.rank() == 4 && k.rank() == 4 && v.rank() == 4, "attention", "expected rank-4 q/k/v");
  const std::int64_t B = q.dim(0), H = q.dim(1), Lq = q.dim(2), d = q.dim(3);
  const std::int64_t Bk = k.dim(0), Lk = k.dim(2), dv = v.dim(3);
  require((Bk == B || Bk == 1) && k.dim(1) == H && k.dim(3) == d, "attention",
          "k " + shape_str(k.shape()) + " vs q " + shape_str(q.shape()));
  require(v.dim(0) == Bk && v.dim(1) == H && v.dim(2) == Lk, "attention", "v " + shape_str(v.shape()));
  if (Lk == 0) fail(Errc::EmptyContext, "attention over zero keys");
  if (mask) require(mask->lq == Lq && mask->lk == Lk && mask->groups > 0, "attention", "mask shape");
  if (bias.defined()) require(bias.numel() == H * Lq * Lk, "attention", "bias shape");

  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * H * Lq * Lk), 0.0);
  std::vector<double> value(static_cast<std::size_t>(B * H * Lq * dv), 0.0);
  const double* qv = q.node()->value.data();
  const double* kv = k.node()->value.data();
  const double* vv = v.node()->value.data();
  const double* bv = bias.defined() ? bias.node()->value.data() : nullptr;
  RowMat scores(Lq, Lk);
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t kb = Bk == 1 ? 0 : b;
    const std::int64_t g = mask ? b % mask->groups : 0;
    for (std::int64_t h = 0; h < H; ++h) {
      CMapMat Q(qv + ((b * H + h) * Lq) * d, Lq, d);
      CMapMat K(kv + ((kb * H + h) * Lk) * d, Lk, d);
      CMapMat V(vv + ((kb * H + h) * Lk) * dv, Lk, dv);
      scores.noalias() = Q * K.transpose();
      scores *= sc;
      if (bv) scores += CMapMat(bv + h * Lq * Lk, Lq, Lk);
      MapMat P(probs->data() + ((b * H + h) * Lq) * Lk, Lq, Lk);
      for (std::int64_t i = 0; i < Lq; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < Lk; ++j)
          if (!mask || mask->at(g, i, j)) mx = std::max(mx, scores(i, j));
        if (mx == -std::numeric_limits<double>::infinity()) continue;
        double z = 0.0;
        for (std::int64_t j = 0; j < Lk; ++j) {
          if (mask && !mask->at(g, i, j)) continue;
          const double e = std::exp(scores(i, j) - mx);
          P(i, j) = e;
          z += e;
        }
        for (std::int64_t j = 0; j < Lk; ++j) P(i, j) /= z;
      }
      MapMat(value.data() + ((b * H + h) * Lq) * dv, Lq, dv).noalias() = P * V;
    }
  }
  if (probs_out) *probs_out = *probs;
  return make_result({B, H, Lq, dv}, std::move(value), {q, k, v, bias},
                     [probs, B, H, Lq, Lk, d, dv, Bk, sc](Node& self) {
    const double* qv = parent(self, 0).value.data();
    const double* kv = parent(self, 1).value.data();
    const double* vv = parent(self, 2).value.data();
    const bool gq = wants_grad(self, 0), gk = wants_grad(self, 1), gv = wants_grad(self, 2),
               gb = wants_grad(self, 3);
    double* dq = gq ? parent(self, 0).grad_buffer() : nullptr;
    double* dk = gk ? parent(self, 1).grad_buffer() : nullptr;
    double* dvb = gv ? parent(self, 2).grad_buffer() : nullptr;
    double* db = gb ? parent(self, 3).grad_buffer() : nullptr;
    RowMat dP(Lq, Lk);
    for (std::int64_t b = 0; b < B; ++b) {
      const std::int64_t kb = Bk == 1 ? 0 : b;
      for (std::int64_t h = 0; h < H; ++h) {
        CMapMat dO(self.grad.data() + ((b * H + h) * Lq) * dv, Lq, dv);
        CMapMat P(probs->data() + ((b * H + h) * Lq) * Lk, Lq, Lk);
        CMapMat V(vv + ((kb * H + h) * Lk) * dv, Lk, dv);
        if (gv) MapMat(dvb + ((kb * H + h) * Lk) * dv, Lk, dv).noalias() += P.transpose() * dO;
        if (!(gq || gk || gb)) continue;
        dP.noalias() = dO * V.transpose();
        for (std::int64_t i = 0; i < Lq; ++i) {
          double dot = 0.0;
          for (std::int64_t j = 0; j < Lk; ++j) dot += P(i, j) * dP(i, j);
          for (std::int64_t j = 0; j < Lk; ++j) dP(i, j) = P(i, j) == 0.0 ? 0.0 : P(i, j) * (dP(i, j) - dot);
        }
        // dP now holds the gradient w.r.t. the pre-softmax logits.
        if (gb) MapMat(db + h * Lq * Lk, Lq, Lk) += dP;
        if (gq)
          MapMat(dq + ((b * H + h) * Lq) * d, Lq, d).noalias() +=
              sc * (dP * CMapMat(kv + ((kb * H + h) * Lk) * d, Lk, d));
        if (gk)
          MapMat(dk + ((kb * H + h) * Lk) * d, Lk, d).noalias() +=
              sc * (dP.transpose() * CMapMat(qv + ((b * H + h) * Lq) * d, Lq, d));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets) {
  require(logits.rank() == 2 && logits.dim(0) == static_cast<std::int64_t>(targets.size()), "cross_entropy",
          shape_str(logits.shape()));
  const std::int64_t rows = logits.dim(0), c = logits.dim(1);
  std::int64_t count = 0;
  for (auto t : targets) {
    if (t == kIgnoreIndex) continue;
    require(t >= 0 && t < c, "cross_entropy", "target out of range");
    ++count;
  }
  if (count == 0) return Tensor::scalar(0.0);
  const double* lv = logits.node()->value.data();
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (targets[r] == kIgnoreIndex) continue;
    const double* row = lv + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[targets[r]];
  }
  const double inv = 1.0 / static_cast<double>(count);
  return make_result({1}, {total * inv}, {logits}, [targets, rows, c, inv](Node& self) {
    const double* lv = parent(self, 0).value.data();
    double* g = parent(self, 0).grad_buffer();
    const double up = self.grad[0] * inv;
    for (std::int64_t r = 0; r < rows; ++r) {
      if (targets[r] == kIgnoreIndex) continue;
      const double* row = lv + r * c;
      const double mx = *std::max_element(row, row + c);
      double z = 0.0;
      for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
      for (std::int64_t j = 0; j < c; ++j) g[r * c + j] += up * std::exp(row[j] - mx) / z;
      g[r * c + targets[r]] -= up;
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  require(logits.numel() == static_cast<std::int64_t>(targets.size()) && !targets.empty(), "bce_with_logits",
          shape_str(logits.shape()));
  const auto& z = logits.node()->value;
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    total += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  const double inv = 1.0 / static_cast<double>(z.size());
  return make_result({1}, {total * inv}, {logits}, [targets, inv](Node& self) {
    const auto& z = parent(self, 0).value;
    double* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-z[i]));
      g[i] += self.grad[0] * inv * (s - targets[i]);
    }
  });
}

Tensor masked_mse(const Tensor& pred, const std::vector<double>& target, const std::vector<std::uint8_t>& mask) {
  require(pred.numel() == static_cast<std::int64_t>(target.size()) && target.size() == mask.size(), "masked_mse",
          shape_str(pred.shape()));
  const auto& p = pred.node()->value;
  double total = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!mask[i]) continue;
    const double e = p[i] - target[i];
    total += e * e;
    ++count;
  }
  if (count == 0) return Tensor::scalar(0.0);
  const double inv = 1.0 / static_cast<double>(count);
  auto tgt = std::make_shared<std::vector<double>>(target);
  auto msk = std::make_shared<std::vector<std::uint8_t>>(mask);
  return make_result({1}, {total * inv}, {pred}, [tgt, msk, inv](Node& self) {
    const auto& p = parent(self, 0).value;
    double* g = parent(self, 0).grad_buffer();
    const double up = self.grad[0] * inv * 2.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if ((*msk)[i]) g[i] += up * (p[i] - (*tgt)[i]);
  });
}

}  // namespace velvet::ag
