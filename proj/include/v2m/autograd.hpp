#pragma once

// Tape-based reverse-mode differentiation over row-major matrices.
//
// A Graph records each op's output value together with a closure that pushes
// the output gradient back into its inputs. Parameters live outside the graph
// in a ParamStore; their nodes alias the stored value and gradient so a
// backward pass accumulates straight into Parameter::grad.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "v2m/tensor.hpp"

namespace v2m::nn {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

// Named parameters in insertion order with stable addresses.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix value, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t trainable_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

// Glorot-uniform initialization for a fan_in x fan_out weight.
Matrix glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Graph {
 public:
  // With record == false no backward closures are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var param(Parameter& p);

  const Matrix& value(Var v) const;
  // Gradient buffer of a node; allocated on demand.
  Matrix& grad(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 node and runs the tape backwards.
  void backward(Var loss);

  // Used by op implementations.
  Var emit(Matrix value, std::initializer_list<Var> inputs, std::function<void(Graph&, int self)> back);
  Var emit(Matrix value, std::span<const Var> inputs, std::function<void(Graph&, int self)> back);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    std::function<void(Graph&, int)> back;
  };
  std::vector<Node> nodes_;
  bool record_;
};

// --- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
// s * a + b elementwise with scalar s, b
Var affine(Var a, double s, double b);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);

// Row-wise layer normalization with learned gain and bias (1 x n each).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Row-wise softmax over entries where mask != 0; masked entries get exactly 0.
// Rows with no admissible entry are all zero.
Var masked_softmax(Var x, std::shared_ptr<const std::vector<std::uint8_t>> mask);

Var slice_cols(Var x, std::size_t first, std::size_t count);
Var slice_rows(Var x, std::size_t first, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// out.row(i) = x.row(ids[i]); backward scatter-adds.
Var gather_rows(Var x, std::vector<int> ids);

// S[i][j] = q_i . r[clip(j - i) + max_rel - 1] with clip to [-(max_rel-1), max_rel-1].
Var relative_logits(Var q, Var r, int max_rel);

Var dropout(Var x, double rate, std::mt19937_64& rng);

// Sum of all entries as a 1 x 1 node.
Var sum(Var x);

// Mean over rows with mask[t] != 0 of -log softmax(logits_t)[targets[t]].
Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask);
// Mean over active rows of (1/L) sum_i BCE(sigmoid(z_ti), y_ti). Zero when no row is active.
Var multi_hot_bce(Var logits, const Matrix& targets, const std::vector<std::uint8_t>& active);
// Mean over rows with mask != 0 of (x_t - y_t)^2 for a single-column x.
Var masked_mse(Var x, const std::vector<double>& target, const std::vector<std::uint8_t>& mask);

}  // namespace v2m::nn
