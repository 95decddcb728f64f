#include "relprobe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "relprobe/error.hpp"

namespace relprobe::ad {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMapMat = Eigen::Map<const RowMat<Real>>;

std::string dims(size_t r, size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

template <typename Real>
Real sigmoid_of(Real x) {
  return x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

template <typename Real>
Tensor<Real>& ParamStore<Real>::add(const std::string& name, std::vector<size_t> shape) {
  if (index_.count(name)) throw Error("duplicate parameter " + name);
  if (shape.empty() || shape.size() > 2) throw Error("parameter " + name + " must have rank 1 or 2");
  size_t n = 1;
  for (size_t d : shape) n *= d;
  Tensor<Real> t;
  t.name = name;
  t.shape = std::move(shape);
  t.data.assign(n, Real(0));
  t.grad.assign(n, Real(0));
  index_.emplace(name, params_.size());
  params_.push_back(std::move(t));
  return params_.back();
}

template <typename Real>
Tensor<Real>* ParamStore<Real>::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename Real>
const Tensor<Real>* ParamStore<Real>::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename Real>
Tensor<Real>& ParamStore<Real>::operator[](std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw Error("unknown parameter " + std::string(name));
}

template <typename Real>
const Tensor<Real>& ParamStore<Real>::operator[](std::string_view name) const {
  if (auto* p = find(name)) return *p;
  throw Error("unknown parameter " + std::string(name));
}

template <typename Real>
size_t ParamStore<Real>::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <typename Real>
void ParamStore<Real>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), Real(0));
}

// ---------------------------------------------------------------------------
// Tape plumbing

template <typename Real>
void Tape<Real>::require(bool ok, const char* op, const std::string& what) const {
  if (!ok) {
    std::ostringstream msg;
    msg << op << " (node " << nodes_.size() << "): " << what;
    throw Error(msg.str());
  }
}

template <typename Real>
void Tape<Real>::check_var(Var v, const char* op) const {
  require(v.id >= 0 && static_cast<size_t>(v.id) < nodes_.size(), op, "invalid input variable");
}

template <typename Real>
Var Tape<Real>::push(const char* op, size_t rows, size_t cols, std::vector<Real> value) {
  Node n;
  n.op = op;
  n.rows = rows;
  n.cols = cols;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename Real>
Real* Tape<Real>::val(int id) {
  Node& n = nodes_[id];
  return n.param ? n.param->data.data() : n.value.data();
}

template <typename Real>
Real* Tape<Real>::grd(int id) {
  Node& n = nodes_[id];
  return n.param ? n.param->grad.data() : n.grad.data();
}

template <typename Real>
std::span<const Real> Tape<Real>::value(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.param) return n.param->data;
  return n.value;
}

template <typename Real>
std::span<const Real> Tape<Real>::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.param) return n.param->grad;
  return n.grad;
}

template <typename Real>
void Tape<Real>::backward(Var loss) {
  check_var(loss, "backward");
  require(nodes_[loss.id].rows == 1 && nodes_[loss.id].cols == 1, "backward",
          "loss must be scalar, got " + dims(nodes_[loss.id].rows, nodes_[loss.id].cols));
  for (int i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (!n.param) n.grad.assign(n.rows * n.cols, Real(0));
  }
  if (nodes_[loss.id].param) {
    nodes_[loss.id].param->grad[0] += Real(1);
  } else {
    nodes_[loss.id].grad[0] = Real(1);
  }
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].backprop) nodes_[i].backprop();
  }
}

// ---------------------------------------------------------------------------
// Leaves

template <typename Real>
Var Tape<Real>::input(size_t rows, size_t cols, std::vector<Real> data) {
  require(data.size() == rows * cols, "input", "data length does not match " + dims(rows, cols));
  return push("input", rows, cols, std::move(data));
}

template <typename Real>
Var Tape<Real>::param(Tensor<Real>& p) {
  Var v = push("param", p.rows(), p.cols(), {});
  nodes_[v.id].param = &p;
  return v;
}

template <typename Real>
Var Tape<Real>::gather(Tensor<Real>& table, std::span<const int> ids) {
  const size_t d = table.cols();
  const int vocab = static_cast<int>(table.rows());
  std::vector<Real> out(ids.size() * d);
  for (size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < vocab, "gather", "row id " + std::to_string(ids[i]) + " out of range for " + table.name);
    std::copy_n(table.data.begin() + static_cast<long>(ids[i] * d), d, out.begin() + static_cast<long>(i * d));
  }
  Var v = push("gather", ids.size(), d, std::move(out));
  if (table.trainable) {
    nodes_[v.id].backprop = [this, v, &table, ids = std::vector<int>(ids.begin(), ids.end()), d] {
      const Real* g = grd(v.id);
      for (size_t i = 0; i < ids.size(); ++i) {
        Real* row = table.grad.data() + ids[i] * d;
        for (size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
      }
    };
  }
  return v;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Real>
Var Tape<Real>::matmul(Var a, Var b) {
  check_var(a, "matmul");
  check_var(b, "matmul");
  const size_t m = rows(a), k = cols(a), n = cols(b);
  require(rows(b) == k, "matmul", "shape mismatch " + dims(m, k) + " x " + dims(rows(b), n));
  std::vector<Real> out(m * n);
  MapMat<Real>(out.data(), m, n).noalias() = ConstMapMat<Real>(val(a.id), m, k) * ConstMapMat<Real>(val(b.id), k, n);
  Var v = push("matmul", m, n, std::move(out));
  node(v).backprop = [this, a, b, v, m, k, n] {
    ConstMapMat<Real> g(grd(v.id), m, n);
    MapMat<Real>(grd(a.id), m, k).noalias() += g * ConstMapMat<Real>(val(b.id), k, n).transpose();
    MapMat<Real>(grd(b.id), k, n).noalias() += ConstMapMat<Real>(val(a.id), m, k).transpose() * g;
  };
  return v;
}

template <typename Real>
Var Tape<Real>::transpose(Var a) {
  check_var(a, "transpose");
  const size_t r = rows(a), c = cols(a);
  std::vector<Real> out(r * c);
  MapMat<Real>(out.data(), c, r) = ConstMapMat<Real>(val(a.id), r, c).transpose();
  Var v = push("transpose", c, r, std::move(out));
  node(v).backprop = [this, a, v, r, c] {
    MapMat<Real>(grd(a.id), r, c) += ConstMapMat<Real>(grd(v.id), c, r).transpose();
  };
  return v;
}

template <typename Real>
Var Tape<Real>::add(Var a, Var b) {
  check_var(a, "add");
  check_var(b, "add");
  require(rows(a) == rows(b) && cols(a) == cols(b), "add",
          "shape mismatch " + dims(rows(a), cols(a)) + " + " + dims(rows(b), cols(b)));
  const size_t n = rows(a) * cols(a);
  std::vector<Real> out(n);
  const Real* x = val(a.id);
  const Real* y = val(b.id);
  for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
  Var v = push("add", rows(a), cols(a), std::move(out));
  node(v).backprop = [this, a, b, v, n] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id);
    Real* gb = grd(b.id);
    for (size_t i = 0; i < n; ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::add_bias(Var a, Var bias) {
  check_var(a, "add_bias");
  check_var(bias, "add_bias");
  const size_t r = rows(a), c = cols(a);
  require(rows(bias) == 1 && cols(bias) == c, "add_bias",
          "bias " + dims(rows(bias), cols(bias)) + " does not match " + dims(r, c));
  std::vector<Real> out(val(a.id), val(a.id) + r * c);
  const Real* b = val(bias.id);
  for (size_t i = 0; i < r; ++i) {
    for (size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  }
  Var v = push("add_bias", r, c, std::move(out));
  node(v).backprop = [this, a, bias, v, r, c] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id);
    Real* gb = grd(bias.id);
    for (size_t i = 0; i < r; ++i) {
      for (size_t j = 0; j < c; ++j) {
        ga[i * c + j] += g[i * c + j];
        gb[j] += g[i * c + j];
      }
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::mul(Var a, Var b) {
  check_var(a, "mul");
  check_var(b, "mul");
  require(rows(a) == rows(b) && cols(a) == cols(b), "mul",
          "shape mismatch " + dims(rows(a), cols(a)) + " * " + dims(rows(b), cols(b)));
  const size_t n = rows(a) * cols(a);
  std::vector<Real> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = val(a.id)[i] * val(b.id)[i];
  Var v = push("mul", rows(a), cols(a), std::move(out));
  node(v).backprop = [this, a, b, v, n] {
    const Real* g = grd(v.id);
    const Real* x = val(a.id);
    const Real* y = val(b.id);
    Real* ga = grd(a.id);
    Real* gb = grd(b.id);
    for (size_t i = 0; i < n; ++i) {
      ga[i] += g[i] * y[i];
      gb[i] += g[i] * x[i];
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::scale(Var a, Real factor) {
  check_var(a, "scale");
  const size_t n = rows(a) * cols(a);
  std::vector<Real> out(val(a.id), val(a.id) + n);
  for (auto& x : out) x *= factor;
  Var v = push("scale", rows(a), cols(a), std::move(out));
  node(v).backprop = [this, a, v, n, factor] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id);
    for (size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
  };
  return v;
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename Real>
Var Tape<Real>::tanh(Var a) {
  check_var(a, "tanh");
  const size_t n = rows(a) * cols(a);
  std::vector<Real> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = std::tanh(val(a.id)[i]);
  Var v = push("tanh", rows(a), cols(a), std::move(out));
  node(v).backprop = [this, a, v, n] {
    const Real* g = grd(v.id);
    const Real* y = val(v.id);
    Real* ga = grd(a.id);
    for (size_t i = 0; i < n; ++i) ga[i] += g[i] * (Real(1) - y[i] * y[i]);
  };
  return v;
}

template <typename Real>
Var Tape<Real>::relu(Var a) {
  check_var(a, "relu");
  const size_t n = rows(a) * cols(a);
  std::vector<Real> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = std::max(Real(0), val(a.id)[i]);
  Var v = push("relu", rows(a), cols(a), std::move(out));
  node(v).backprop = [this, a, v, n] {
    const Real* g = grd(v.id);
    const Real* x = val(a.id);
    Real* ga = grd(a.id);
    for (size_t i = 0; i < n; ++i) {
      if (x[i] > 0) ga[i] += g[i];
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::sigmoid(Var a) {
  check_var(a, "sigmoid");
  const size_t n = rows(a) * cols(a);
  std::vector<Real> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = sigmoid_of(val(a.id)[i]);
  Var v = push("sigmoid", rows(a), cols(a), std::move(out));
  node(v).backprop = [this, a, v, n] {
    const Real* g = grd(v.id);
    const Real* y = val(v.id);
    Real* ga = grd(a.id);
    for (size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (Real(1) - y[i]);
  };
  return v;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Real>
Var Tape<Real>::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  for (Var p : parts) check_var(p, "concat_cols");
  const size_t r = rows(parts[0]);
  size_t total = 0;
  for (Var p : parts) {
    require(rows(p) == r, "concat_cols", "row count mismatch " + std::to_string(rows(p)) + " vs " + std::to_string(r));
    total += cols(p);
  }
  std::vector<Real> out(r * total);
  size_t offset = 0;
  for (Var p : parts) {
    const size_t c = cols(p);
    const Real* x = val(p.id);
    for (size_t i = 0; i < r; ++i) std::copy_n(x + i * c, c, out.begin() + static_cast<long>(i * total + offset));
    offset += c;
  }
  Var v = push("concat_cols", r, total, std::move(out));
  node(v).backprop = [this, v, r, total, ids = std::vector<Var>(parts.begin(), parts.end())] {
    const Real* g = grd(v.id);
    size_t off = 0;
    for (Var p : ids) {
      const size_t c = nodes_[p.id].cols;
      Real* gp = grd(p.id);
      for (size_t i = 0; i < r; ++i) {
        for (size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + off + j];
      }
      off += c;
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::stack_rows(std::span<const Var> parts) {
  require(!parts.empty(), "stack_rows", "no inputs");
  for (Var p : parts) check_var(p, "stack_rows");
  const size_t c = cols(parts[0]);
  size_t total = 0;
  for (Var p : parts) {
    require(cols(p) == c, "stack_rows", "column count mismatch " + std::to_string(cols(p)) + " vs " + std::to_string(c));
    total += rows(p);
  }
  std::vector<Real> out;
  out.reserve(total * c);
  for (Var p : parts) out.insert(out.end(), val(p.id), val(p.id) + rows(p) * c);
  Var v = push("stack_rows", total, c, std::move(out));
  node(v).backprop = [this, v, ids = std::vector<Var>(parts.begin(), parts.end())] {
    const Real* g = grd(v.id);
    size_t off = 0;
    for (Var p : ids) {
      const size_t n = nodes_[p.id].rows * nodes_[p.id].cols;
      Real* gp = grd(p.id);
      for (size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      off += n;
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::slice_rows(Var a, size_t begin, size_t end) {
  check_var(a, "slice_rows");
  require(begin < end && end <= rows(a), "slice_rows",
          "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " + std::to_string(rows(a)) + " rows");
  const size_t c = cols(a);
  std::vector<Real> out(val(a.id) + begin * c, val(a.id) + end * c);
  Var v = push("slice_rows", end - begin, c, std::move(out));
  node(v).backprop = [this, a, v, begin, end, c] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id) + begin * c;
    for (size_t i = 0; i < (end - begin) * c; ++i) ga[i] += g[i];
  };
  return v;
}

template <typename Real>
Var Tape<Real>::slice_cols(Var a, size_t begin, size_t end) {
  check_var(a, "slice_cols");
  require(begin < end && end <= cols(a), "slice_cols",
          "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " + std::to_string(cols(a)) + " cols");
  const size_t r = rows(a), c = cols(a), w = end - begin;
  std::vector<Real> out(r * w);
  for (size_t i = 0; i < r; ++i) std::copy_n(val(a.id) + i * c + begin, w, out.begin() + static_cast<long>(i * w));
  Var v = push("slice_cols", r, w, std::move(out));
  node(v).backprop = [this, a, v, r, c, w, begin] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id);
    for (size_t i = 0; i < r; ++i) {
      for (size_t j = 0; j < w; ++j) ga[i * c + begin + j] += g[i * w + j];
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::unfold(Var a, size_t width) {
  check_var(a, "unfold");
  require(width >= 1, "unfold", "window width must be >= 1");
  const size_t t = rows(a), d = cols(a);
  const size_t windows = t >= width ? t - width + 1 : 1;
  const size_t out_cols = width * d;
  std::vector<Real> out(windows * out_cols, Real(0));
  const Real* x = val(a.id);
  for (size_t w = 0; w < windows; ++w) {
    for (size_t k = 0; k < width && w + k < t; ++k) {
      std::copy_n(x + (w + k) * d, d, out.begin() + static_cast<long>(w * out_cols + k * d));
    }
  }
  Var v = push("unfold", windows, out_cols, std::move(out));
  node(v).backprop = [this, a, v, t, d, width, windows, out_cols] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id);
    for (size_t w = 0; w < windows; ++w) {
      for (size_t k = 0; k < width && w + k < t; ++k) {
        for (size_t j = 0; j < d; ++j) ga[(w + k) * d + j] += g[w * out_cols + k * d + j];
      }
    }
  };
  return v;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Real>
Var Tape<Real>::max_rows(Var a, std::span<const int> which) {
  check_var(a, "max_rows");
  require(!which.empty(), "max_rows", "empty row set");
  const size_t c = cols(a);
  for (int r : which) require(r >= 0 && static_cast<size_t>(r) < rows(a), "max_rows", "row " + std::to_string(r) + " out of range");
  const Real* x = val(a.id);
  std::vector<Real> out(c);
  std::vector<int> arg(c);
  for (size_t j = 0; j < c; ++j) {
    int best = which[0];
    for (int r : which) {
      if (x[r * c + j] > x[best * c + j]) best = r;
    }
    arg[j] = best;
    out[j] = x[best * c + j];
  }
  Var v = push("max_rows", 1, c, std::move(out));
  node(v).backprop = [this, a, v, c, arg = std::move(arg)] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id);
    for (size_t j = 0; j < c; ++j) ga[arg[j] * c + j] += g[j];
  };
  return v;
}

template <typename Real>
Var Tape<Real>::max_over_time(Var a) {
  check_var(a, "max_over_time");
  std::vector<int> all(rows(a));
  std::iota(all.begin(), all.end(), 0);
  return max_rows(a, all);
}

template <typename Real>
Var Tape<Real>::sum_rows(Var a) {
  check_var(a, "sum_rows");
  const size_t r = rows(a), c = cols(a);
  std::vector<Real> out(c, Real(0));
  const Real* x = val(a.id);
  for (size_t i = 0; i < r; ++i) {
    for (size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  }
  Var v = push("sum_rows", 1, c, std::move(out));
  node(v).backprop = [this, a, v, r, c] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id);
    for (size_t i = 0; i < r; ++i) {
      for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[j];
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::sum_all(Var a) {
  check_var(a, "sum_all");
  const size_t n = rows(a) * cols(a);
  Real total = 0;
  for (size_t i = 0; i < n; ++i) total += val(a.id)[i];
  Var v = push("sum_all", 1, 1, {total});
  node(v).backprop = [this, a, v, n] {
    const Real g = grd(v.id)[0];
    Real* ga = grd(a.id);
    for (size_t i = 0; i < n; ++i) ga[i] += g;
  };
  return v;
}

template <typename Real>
Var Tape<Real>::softmax_rows(Var a) {
  check_var(a, "softmax_rows");
  const size_t r = rows(a), c = cols(a);
  std::vector<Real> out(r * c);
  const Real* x = val(a.id);
  for (size_t i = 0; i < r; ++i) {
    const Real* row = x + i * c;
    Real m = *std::max_element(row, row + c);
    Real z = 0;
    for (size_t j = 0; j < c; ++j) z += out[i * c + j] = std::exp(row[j] - m);
    for (size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  Var v = push("softmax_rows", r, c, std::move(out));
  node(v).backprop = [this, a, v, r, c] {
    const Real* g = grd(v.id);
    const Real* y = val(v.id);
    Real* ga = grd(a.id);
    for (size_t i = 0; i < r; ++i) {
      Real dot = 0;
      for (size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (size_t j = 0; j < c; ++j) ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::layer_norm(Var a, Var gain, Var bias, Real eps) {
  check_var(a, "layer_norm");
  check_var(gain, "layer_norm");
  check_var(bias, "layer_norm");
  const size_t r = rows(a), c = cols(a);
  require(rows(gain) == 1 && cols(gain) == c && rows(bias) == 1 && cols(bias) == c, "layer_norm",
          "gain/bias must be 1x" + std::to_string(c));
  std::vector<Real> xhat(r * c), inv_std(r), out(r * c);
  const Real* x = val(a.id);
  const Real* g = val(gain.id);
  const Real* b = val(bias.id);
  for (size_t i = 0; i < r; ++i) {
    Real mean = 0;
    for (size_t j = 0; j < c; ++j) mean += x[i * c + j];
    mean /= static_cast<Real>(c);
    Real var = 0;
    for (size_t j = 0; j < c; ++j) var += (x[i * c + j] - mean) * (x[i * c + j] - mean);
    var /= static_cast<Real>(c);
    inv_std[i] = Real(1) / std::sqrt(var + eps);
    for (size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (x[i * c + j] - mean) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * g[j] + b[j];
    }
  }
  Var v = push("layer_norm", r, c, std::move(out));
  node(v).backprop = [this, a, gain, bias, v, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
    const Real* dy = grd(v.id);
    const Real* g = val(gain.id);
    Real* dx = grd(a.id);
    Real* dg = grd(gain.id);
    Real* db = grd(bias.id);
    std::vector<Real> dxhat(c);
    for (size_t i = 0; i < r; ++i) {
      Real mean_d = 0, mean_dx = 0;
      for (size_t j = 0; j < c; ++j) {
        const size_t k = i * c + j;
        dg[j] += dy[k] * xhat[k];
        db[j] += dy[k];
        dxhat[j] = dy[k] * g[j];
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * xhat[k];
      }
      mean_d /= static_cast<Real>(c);
      mean_dx /= static_cast<Real>(c);
      for (size_t j = 0; j < c; ++j) {
        const size_t k = i * c + j;
        dx[k] += inv_std[i] * (dxhat[j] - mean_d - xhat[k] * mean_dx);
      }
    }
  };
  return v;
}

template <typename Real>
Var Tape<Real>::lstm_cell(Var x, Var state, Var weight, Var bias) {
  for (Var u : {x, state, weight, bias}) check_var(u, "lstm_cell");
  require(rows(x) == 1 && rows(state) == 1, "lstm_cell", "input and state must be single rows");
  const size_t in = cols(x);
  require(cols(state) % 2 == 0, "lstm_cell", "state width must be even");
  const size_t h = cols(state) / 2;
  require(rows(weight) == in + h && cols(weight) == 4 * h, "lstm_cell",
          "weight " + dims(rows(weight), cols(weight)) + " expected " + dims(in + h, 4 * h));
  require(rows(bias) == 1 && cols(bias) == 4 * h, "lstm_cell", "bias must be 1x" + std::to_string(4 * h));

  std::vector<Real> xh(in + h);
  std::copy_n(val(x.id), in, xh.begin());
  std::copy_n(val(state.id), h, xh.begin() + static_cast<long>(in));
  std::vector<Real> z(4 * h);
  Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>> zmap(z.data(), 4 * h);
  zmap.noalias() = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(xh.data(), in + h) *
                   ConstMapMat<Real>(val(weight.id), in + h, 4 * h);
  const Real* b = val(bias.id);
  const Real* c_prev = val(state.id) + h;
  std::vector<Real> gates(4 * h);  // activated i, f, g, o
  std::vector<Real> tanh_c(h);
  std::vector<Real> out(2 * h);
  for (size_t j = 0; j < h; ++j) {
    const Real i_g = sigmoid_of(z[j] + b[j]);
    const Real f_g = sigmoid_of(z[h + j] + b[h + j]);
    const Real c_g = std::tanh(z[2 * h + j] + b[2 * h + j]);
    const Real o_g = sigmoid_of(z[3 * h + j] + b[3 * h + j]);
    gates[j] = i_g;
    gates[h + j] = f_g;
    gates[2 * h + j] = c_g;
    gates[3 * h + j] = o_g;
    const Real c_new = f_g * c_prev[j] + i_g * c_g;
    tanh_c[j] = std::tanh(c_new);
    out[j] = o_g * tanh_c[j];
    out[h + j] = c_new;
  }
  Var v = push("lstm_cell", 1, 2 * h, std::move(out));
  node(v).backprop = [this, x, state, weight, bias, v, in, h, xh = std::move(xh), gates = std::move(gates),
                      tanh_c = std::move(tanh_c)] {
    const Real* g = grd(v.id);
    const Real* c_prev = val(state.id) + h;
    std::vector<Real> dz(4 * h);
    Real* gstate = grd(state.id);
    for (size_t j = 0; j < h; ++j) {
      const Real i_g = gates[j], f_g = gates[h + j], c_g = gates[2 * h + j], o_g = gates[3 * h + j];
      const Real dh = g[j];
      const Real dc = g[h + j] + dh * o_g * (Real(1) - tanh_c[j] * tanh_c[j]);
      dz[j] = dc * c_g * i_g * (Real(1) - i_g);
      dz[h + j] = dc * c_prev[j] * f_g * (Real(1) - f_g);
      dz[2 * h + j] = dc * i_g * (Real(1) - c_g * c_g);
      dz[3 * h + j] = dh * tanh_c[j] * o_g * (Real(1) - o_g);
      gstate[h + j] += dc * f_g;
    }
    Real* gb = grd(bias.id);
    for (size_t k = 0; k < 4 * h; ++k) gb[k] += dz[k];
    Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> dzmap(dz.data(), 4 * h);
    Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> xhmap(xh.data(), in + h);
    MapMat<Real>(grd(weight.id), in + h, 4 * h).noalias() += xhmap * dzmap;
    Eigen::Matrix<Real, 1, Eigen::Dynamic> dxh = dzmap * ConstMapMat<Real>(val(weight.id), in + h, 4 * h).transpose();
    Real* gx = grd(x.id);
    for (size_t k = 0; k < in; ++k) gx[k] += dxh[static_cast<Eigen::Index>(k)];
    for (size_t j = 0; j < h; ++j) gstate[j] += dxh[static_cast<Eigen::Index>(in + j)];
  };
  return v;
}

// ---------------------------------------------------------------------------
// Masks, dropout and the loss

template <typename Real>
Var Tape<Real>::mask(Var a, std::vector<Real> m, const char* op) {
  check_var(a, op);
  const size_t n = rows(a) * cols(a);
  require(m.size() == n, op, "mask length " + std::to_string(m.size()) + " does not match " + dims(rows(a), cols(a)));
  std::vector<Real> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = val(a.id)[i] * m[i];
  Var v = push(op, rows(a), cols(a), std::move(out));
  node(v).backprop = [this, a, v, n, m = std::move(m)] {
    const Real* g = grd(v.id);
    Real* ga = grd(a.id);
    for (size_t i = 0; i < n; ++i) ga[i] += g[i] * m[i];
  };
  return v;
}

template <typename Real>
Var Tape<Real>::dropout(Var a, double p, Mode mode, Rng& rng) {
  check_var(a, "dropout");
  if (mode == Mode::Eval || p <= 0.0) return a;
  require(p < 1.0, "dropout", "probability must be < 1");
  const size_t n = rows(a) * cols(a);
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<Real> m(n);
  for (auto& x : m) x = keep(rng) ? keep_scale : Real(0);
  return mask(a, std::move(m), "dropout");
}

template <typename Real>
Var Tape<Real>::softmax_cross_entropy(Var logits, std::span<const int> gold) {
  check_var(logits, "softmax_cross_entropy");
  const size_t r = rows(logits), c = cols(logits);
  require(gold.size() == r, "softmax_cross_entropy",
          std::to_string(gold.size()) + " gold labels for " + std::to_string(r) + " rows");
  require(r > 0, "softmax_cross_entropy", "empty batch");
  std::vector<Real> probs(r * c);
  Real loss = 0;
  const Real* x = val(logits.id);
  for (size_t i = 0; i < r; ++i) {
    require(gold[i] >= 0 && static_cast<size_t>(gold[i]) < c, "softmax_cross_entropy",
            "gold label " + std::to_string(gold[i]) + " out of range");
    const Real* row = x + i * c;
    Real m = *std::max_element(row, row + c);
    Real z = 0;
    for (size_t j = 0; j < c; ++j) z += probs[i * c + j] = std::exp(row[j] - m);
    for (size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += -(row[gold[i]] - m - std::log(z));
  }
  loss /= static_cast<Real>(r);
  Var v = push("softmax_cross_entropy", 1, 1, {loss});
  node(v).backprop = [this, logits, v, r, c, probs = std::move(probs), gold = std::vector<int>(gold.begin(), gold.end())] {
    const Real g = grd(v.id)[0] / static_cast<Real>(r);
    Real* gl = grd(logits.id);
    for (size_t i = 0; i < r; ++i) {
      for (size_t j = 0; j < c; ++j) {
        gl[i * c + j] += g * (probs[i * c + j] - (static_cast<int>(j) == gold[i] ? Real(1) : Real(0)));
      }
    }
  };
  return v;
}

template struct Tensor<float>;
template struct Tensor<double>;
template class ParamStore<float>;
template class ParamStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace relprobe::ad
