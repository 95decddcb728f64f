#pragma once

// Minimal dense reverse-mode differentiation over row-major matrices.
//
// A Tape records operations in execution order; backward() walks it in
// reverse. Parameters live outside the tape in a ParamStore and receive
// their gradients in place, so gradients accumulate across backward calls
// until ParamStore::zero_grad(). Everything is instantiated for float
// (training) and double (gradient checking).

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace relprobe::ad {

// Named parameter tensor of rank 1 or 2.
template <typename Real>
struct Tensor {
  std::string name;
  std::vector<size_t> shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool trainable = true;

  size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  size_t cols() const { return shape.empty() ? 0 : shape.back(); }
  size_t size() const { return data.size(); }
};

template <typename Real>
class ParamStore {
 public:
  // Adds a zero-initialised parameter; names must be unique.
  Tensor<Real>& add(const std::string& name, std::vector<size_t> shape);

  Tensor<Real>& operator[](std::string_view name);
  const Tensor<Real>& operator[](std::string_view name) const;
  Tensor<Real>* find(std::string_view name);
  const Tensor<Real>* find(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }
  size_t scalar_count() const;

  void zero_grad();

 private:
  std::deque<Tensor<Real>> params_;
  std::map<std::string, size_t, std::less<>> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Mode { Train, Eval };

using Rng = std::mt19937_64;

template <typename Real>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var input(size_t rows, size_t cols, std::vector<Real> data);
  Var param(Tensor<Real>& p);
  // Rows of `table` selected by id; gradients scatter back into the table.
  Var gather(Tensor<Real>& table, std::span<const int> ids);

  // Linear algebra.
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var add_bias(Var a, Var bias);  // bias is 1 x cols, broadcast over rows
  Var mul(Var a, Var b);
  Var scale(Var a, Real factor);

  // Elementwise nonlinearities.
  Var tanh(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);

  // Shape manipulation.
  Var concat_cols(std::span<const Var> parts);
  Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }
  Var stack_rows(std::span<const Var> rows);
  Var slice_rows(Var a, size_t begin, size_t end);
  Var slice_cols(Var a, size_t begin, size_t end);
  // Row t of the result concatenates rows t..t+width-1 of `a`, zero-padded past
  // the end; max(1, rows - width + 1) windows.
  Var unfold(Var a, size_t width);

  // Reductions.
  Var max_rows(Var a, std::span<const int> rows);  // 1 x cols, first maximum wins
  Var max_over_time(Var a);
  Var sum_rows(Var a);  // 1 x cols
  Var sum_all(Var a);   // 1 x 1

  Var softmax_rows(Var a);
  Var layer_norm(Var a, Var gain, Var bias, Real eps = Real(1e-5));

  // x: 1 x I, state: 1 x 2H holding [h | c], weight: (I + H) x 4H with gate
  // blocks [input, forget, cell, output], bias: 1 x 4H. Returns [h' | c'].
  Var lstm_cell(Var x, Var state, Var weight, Var bias);

  // Elementwise product with a constant of the same shape.
  Var mask(Var a, std::vector<Real> m, const char* op = "mask");
  // Inverted dropout; identity in eval mode or when p == 0.
  Var dropout(Var a, double p, Mode mode, Rng& rng);

  // Mean negative log-likelihood of gold[i] under softmax of row i.
  Var softmax_cross_entropy(Var logits, std::span<const int> gold);

  void backward(Var loss);

  size_t rows(Var v) const { return nodes_[v.id].rows; }
  size_t cols(Var v) const { return nodes_[v.id].cols; }
  std::span<const Real> value(Var v) const;
  std::span<const Real> grad(Var v) const;
  std::string_view op(Var v) const { return nodes_[v.id].op; }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    const char* op = "";
    size_t rows = 0;
    size_t cols = 0;
    std::vector<Real> value;
    std::vector<Real> grad;
    Tensor<Real>* param = nullptr;
    std::function<void()> backprop;
  };

  Var push(const char* op, size_t rows, size_t cols, std::vector<Real> value);
  Real* val(int id);
  Real* grd(int id);
  Node& node(Var v) { return nodes_[v.id]; }
  void require(bool ok, const char* op, const std::string& what) const;
  void check_var(Var v, const char* op) const;

  std::vector<Node> nodes_;
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace relprobe::ad
