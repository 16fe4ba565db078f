#include "v2m/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "v2m/error.hpp"
#include "v2m/simd/kernels.hpp"

namespace v2m::nn {

// --- ParamStore ------------------------------------------------------------

Parameter& ParamStore::add(const std::string& name, Matrix value, bool trainable) {
  if (contains(name)) throw SchemaError("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Matrix(value.rows(), value.cols());
  p->value = std::move(value);
  p->trainable = trainable;
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw SchemaError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw SchemaError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p->trainable) n += p->value.size();
  return n;
}

Matrix glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(fan_in, fan_out);
  for (double& v : m.storage()) v = dist(rng);
  return m;
}

// --- Graph -----------------------------------------------------------------

const Matrix& Var::value() const { return graph->value(*this); }

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{{}, {}, &p, record_ && p.trainable, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Graph::value(Var v) const {
  const auto& n = nodes_[v.id];
  return n.param ? n.param->value : n.value;
}

Matrix& Graph::grad(Var v) {
  auto& n = nodes_[v.id];
  if (n.param) {
    if (!n.param->grad.same_shape(n.param->value))
      n.param->grad = Matrix(n.param->value.rows(), n.param->value.cols());
    return n.param->grad;
  }
  if (!n.grad.same_shape(n.value)) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Graph::emit(Matrix value, std::initializer_list<Var> inputs, std::function<void(Graph&, int)> back) {
  return emit(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
}

Var Graph::emit(Matrix value, std::span<const Var> inputs, std::function<void(Graph&, int)> back) {
  bool needs = false;
  if (record_)
    for (const auto& in : inputs) needs = needs || nodes_[in.id].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(back) : nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::backward(Var loss) {
  if (!record_) throw Error("backward on a graph built without recording");
  if (value(loss).size() != 1) throw SchemaError("backward needs a scalar loss");
  grad(loss)(0, 0) += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (!n.needs_grad || !n.back || n.grad.empty()) continue;
    n.back(*this, i);
  }
}

// --- op helpers ----------------------------------------------------------

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw SchemaError(std::string(op) + " shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

Var self_var(Graph& g, int id) { return Var{&g, id}; }

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  Matrix out(a.rows(), b.cols());
  matmul_acc(a.value(), b.value(), out);
  return g.emit(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    if (g.needs_grad(a)) matmul_nt_acc(dy, b.value(), g.grad(a));
    if (g.needs_grad(b)) matmul_tn_acc(a.value(), dy, g.grad(b));
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = *a.graph;
  Matrix out(a.rows(), b.rows());
  matmul_nt_acc(a.value(), b.value(), out);
  return g.emit(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    if (g.needs_grad(a)) matmul_acc(dy, b.value(), g.grad(a));
    if (g.needs_grad(b)) matmul_tn_acc(dy, a.value(), g.grad(b));
  });
}

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  Matrix out = a.value();
  simd::active().axpy(1.0, b.value().data(), out.data(), out.size());
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    if (g.needs_grad(a)) simd::active().axpy(1.0, dy.data(), g.grad(a).data(), dy.size());
    if (g.needs_grad(b)) simd::active().axpy(1.0, dy.data(), g.grad(b).data(), dy.size());
  });
}

Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  Matrix out = a.value();
  simd::active().axpy(-1.0, b.value().data(), out.data(), out.size());
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    if (g.needs_grad(a)) simd::active().axpy(1.0, dy.data(), g.grad(a).data(), dy.size());
    if (g.needs_grad(b)) simd::active().axpy(-1.0, dy.data(), g.grad(b).data(), dy.size());
  });
}

Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  Matrix out(a.rows(), a.cols());
  simd::active().mul_acc(a.value().data(), b.value().data(), out.data(), out.size());
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    if (g.needs_grad(a)) simd::active().mul_acc(dy.data(), b.value().data(), g.grad(a).data(), dy.size());
    if (g.needs_grad(b)) simd::active().mul_acc(dy.data(), a.value().data(), g.grad(b).data(), dy.size());
  });
}

Var add_row(Var a, Var row) {
  const Matrix& x = a.value();
  const Matrix& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols())
    throw SchemaError("add_row expects 1x" + std::to_string(x.cols()) + ", got " + r.shape_string());
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) simd::active().axpy(1.0, r.data(), out.row(i).data(), x.cols());
  return a.graph->emit(std::move(out), {a, row}, [a, row](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    if (g.needs_grad(a)) simd::active().axpy(1.0, dy.data(), g.grad(a).data(), dy.size());
    if (g.needs_grad(row)) {
      Matrix& dr = g.grad(row);
      for (std::size_t i = 0; i < dy.rows(); ++i) simd::active().axpy(1.0, dy.row(i).data(), dr.data(), dy.cols());
    }
  });
}

Var scale(Var a, double s) { return affine(a, s, 0.0); }

Var affine(Var a, double s, double b) {
  Matrix out = a.value();
  for (double& v : out.storage()) v = s * v + b;
  return a.graph->emit(std::move(out), {a}, [a, s](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    simd::active().axpy(s, dy.data(), g.grad(a).data(), dy.size());
  });
}

Var relu(Var a) {
  Matrix out = a.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return a.graph->emit(std::move(out), {a}, [a](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    const Matrix& x = a.value();
    Matrix& dx = g.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (x.data()[i] > 0.0) dx.data()[i] += dy.data()[i];
  });
}

Var tanh(Var a) {
  Matrix out = a.value();
  for (double& v : out.storage()) v = std::tanh(v);
  return a.graph->emit(std::move(out), {a}, [a](Graph& g, int self) {
    const Var y = self_var(g, self);
    const Matrix& dy = g.grad(y);
    const Matrix& yv = g.value(y);
    Matrix& dx = g.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data()[i] += dy.data()[i] * (1.0 - yv.data()[i] * yv.data()[i]);
  });
}

namespace {
double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var a) {
  Matrix out = a.value();
  for (double& v : out.storage()) v = stable_sigmoid(v);
  return a.graph->emit(std::move(out), {a}, [a](Graph& g, int self) {
    const Var y = self_var(g, self);
    const Matrix& dy = g.grad(y);
    const Matrix& yv = g.value(y);
    Matrix& dx = g.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data()[i] += dy.data()[i] * yv.data()[i] * (1.0 - yv.data()[i]);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) throw SchemaError("layer_norm gain/bias width mismatch");
  Matrix out(xv.rows(), n);
  // Normalized activations and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<Matrix>(xv.rows(), n);
  auto inv_std = std::make_shared<std::vector<double>>(xv.rows());
  const double* gv = gain.value().data();
  const double* bv = bias.value().data();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * is;
      (*xhat)(r, c) = h;
      out(r, c) = h * gv[c] + bv[c];
    }
  }
  return x.graph->emit(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_std](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    const std::size_t n = dy.cols();
    const double* gv = gain.value().data();
    if (g.needs_grad(gain) || g.needs_grad(bias)) {
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) {
          if (g.needs_grad(gain)) g.grad(gain).data()[c] += dy(r, c) * (*xhat)(r, c);
          if (g.needs_grad(bias)) g.grad(bias).data()[c] += dy(r, c);
        }
    }
    if (!g.needs_grad(x)) return;
    Matrix& dx = g.grad(x);
    std::vector<double> dh(n);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        dh[c] = dy(r, c) * gv[c];
        mean_dh += dh[c];
        mean_dh_h += dh[c] * (*xhat)(r, c);
      }
      mean_dh /= static_cast<double>(n);
      mean_dh_h /= static_cast<double>(n);
      for (std::size_t c = 0; c < n; ++c)
        dx(r, c) += (*inv_std)[r] * (dh[c] - mean_dh - (*xhat)(r, c) * mean_dh_h);
    }
  });
}

Var masked_softmax(Var x, std::shared_ptr<const std::vector<std::uint8_t>> mask) {
  const Matrix& xv = x.value();
  if (mask->size() != xv.size()) throw SchemaError("softmax mask size mismatch");
  Matrix out(xv.rows(), xv.cols());
  const std::size_t n = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const std::uint8_t* m = mask->data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (m[c]) mx = std::max(mx, xv(r, c));
    if (!std::isfinite(mx)) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c)
      if (m[c]) s += (out(r, c) = std::exp(xv(r, c) - mx));
    for (std::size_t c = 0; c < n; ++c) out(r, c) /= s;
  }
  return x.graph->emit(std::move(out), {x}, [x](Graph& g, int self) {
    const Var y = self_var(g, self);
    const Matrix& dy = g.grad(y);
    const Matrix& yv = g.value(y);
    Matrix& dx = g.grad(x);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      const double dot = simd::active().dot(dy.row(r).data(), yv.row(r).data(), dy.cols());
      for (std::size_t c = 0; c < dy.cols(); ++c) dx(r, c) += yv(r, c) * (dy(r, c) - dot);
    }
  });
}

Var slice_cols(Var x, std::size_t first, std::size_t count) {
  const Matrix& xv = x.value();
  if (first + count > xv.cols()) throw SchemaError("slice_cols out of range");
  Matrix out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    std::copy_n(xv.row(r).data() + first, count, out.row(r).data());
  return x.graph->emit(std::move(out), {x}, [x, first, count](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    Matrix& dx = g.grad(x);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      simd::active().axpy(1.0, dy.row(r).data(), dx.row(r).data() + first, count);
  });
}

Var slice_rows(Var x, std::size_t first, std::size_t count) {
  const Matrix& xv = x.value();
  if (first + count > xv.rows()) throw SchemaError("slice_rows out of range");
  Matrix out(count, xv.cols());
  std::copy_n(xv.row(first).data(), count * xv.cols(), out.data());
  return x.graph->emit(std::move(out), {x}, [x, first](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    simd::active().axpy(1.0, dy.data(), g.grad(x).row(first).data(), dy.size());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw SchemaError("concat_cols of nothing");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw SchemaError("concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.row(r).data(), pv.cols(), out.row(r).data() + off);
    off += pv.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].graph->emit(std::move(out), parts, [ins](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    std::size_t off = 0;
    for (const auto& p : ins) {
      const std::size_t w = p.cols();
      if (g.needs_grad(p)) {
        Matrix& dp = g.grad(p);
        for (std::size_t r = 0; r < dy.rows(); ++r)
          simd::active().axpy(1.0, dy.row(r).data() + off, dp.row(r).data(), w);
      }
      off += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw SchemaError("concat_rows of nothing");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw SchemaError("concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off * cols);
    off += p.rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].graph->emit(std::move(out), parts, [ins](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    std::size_t off = 0;
    for (const auto& p : ins) {
      if (g.needs_grad(p))
        simd::active().axpy(1.0, dy.row(off).data(), g.grad(p).data(), p.value().size());
      off += p.rows();
    }
  });
}

Var gather_rows(Var x, std::vector<int> ids) {
  const Matrix& xv = x.value();
  Matrix out(ids.size(), xv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= xv.rows())
      throw RangeError("gather_rows index " + std::to_string(ids[i]) + " outside " + xv.shape_string());
    std::copy_n(xv.row(ids[i]).data(), xv.cols(), out.row(i).data());
  }
  return x.graph->emit(std::move(out), {x}, [x, ids = std::move(ids)](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    Matrix& dx = g.grad(x);
    for (std::size_t i = 0; i < ids.size(); ++i)
      simd::active().axpy(1.0, dy.row(i).data(), dx.row(ids[i]).data(), dy.cols());
  });
}

Var relative_logits(Var q, Var r, int max_rel) {
  const Matrix& qv = q.value();
  const Matrix& rv = r.value();
  const int span = 2 * max_rel - 1;
  if (max_rel < 1 || rv.rows() != static_cast<std::size_t>(span) || rv.cols() != qv.cols())
    throw SchemaError("relative embedding table must be " + std::to_string(span) + "x" + std::to_string(qv.cols()) +
                      ", got " + rv.shape_string());
  const auto t = static_cast<int>(qv.rows());
  auto index = [max_rel](int i, int j) { return std::clamp(j - i, -(max_rel - 1), max_rel - 1) + max_rel - 1; };
  Matrix out(t, t);
  const auto& k = simd::active();
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j) out(i, j) = k.dot(qv.row(i).data(), rv.row(index(i, j)).data(), qv.cols());
  return q.graph->emit(std::move(out), {q, r}, [q, r, index](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    const auto t = static_cast<int>(dy.rows());
    const std::size_t d = q.cols();
    const auto& k = simd::active();
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) {
        const double s = dy(i, j);
        if (s == 0.0) continue;
        if (g.needs_grad(q)) k.axpy(s, r.value().row(index(i, j)).data(), g.grad(q).row(i).data(), d);
        if (g.needs_grad(r)) k.axpy(s, q.value().row(i).data(), g.grad(r).row(index(i, j)).data(), d);
      }
  });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  auto keep = std::make_shared<std::vector<double>>(x.value().size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = 1.0 / (1.0 - rate);
  for (double& k : *keep) k = u(rng) >= rate ? s : 0.0;
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= (*keep)[i];
  return x.graph->emit(std::move(out), {x}, [x, keep](Graph& g, int self) {
    const Matrix& dy = g.grad(self_var(g, self));
    simd::active().mul_acc(dy.data(), keep->data(), g.grad(x).data(), dy.size());
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().storage()) s += v;
  return x.graph->emit(Matrix(1, 1, s), {x}, [x](Graph& g, int self) {
    const double d = g.grad(self_var(g, self))(0, 0);
    for (double& v : g.grad(x).storage()) v += d;
  });
}

Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask) {
  const Matrix& z = logits.value();
  if (targets.size() != z.rows() || mask.size() != z.rows()) throw SchemaError("cross_entropy length mismatch");
  std::size_t active = 0;
  for (auto m : mask) active += m != 0;
  if (active == 0) throw Error("cross_entropy over an all-masked sequence");
  auto probs = std::make_shared<Matrix>(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t t = 0; t < z.rows(); ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= z.cols())
      throw RangeError("cross_entropy target " + std::to_string(targets[t]) + " out of range");
    const auto row = z.row(t);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) s += ((*probs)(t, c) = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < z.cols(); ++c) (*probs)(t, c) /= s;
    loss += -(row[targets[t]] - mx - std::log(s));
  }
  const double inv = 1.0 / static_cast<double>(active);
  return logits.graph->emit(Matrix(1, 1, loss * inv), {logits},
                            [logits, probs, targets, mask, inv](Graph& g, int self) {
                              const double d = g.grad(self_var(g, self))(0, 0) * inv;
                              Matrix& dz = g.grad(logits);
                              for (std::size_t t = 0; t < dz.rows(); ++t) {
                                if (!mask[t]) continue;
                                for (std::size_t c = 0; c < dz.cols(); ++c) dz(t, c) += d * (*probs)(t, c);
                                dz(t, targets[t]) -= d;
                              }
                            });
}

Var multi_hot_bce(Var logits, const Matrix& targets, const std::vector<std::uint8_t>& active) {
  const Matrix& z = logits.value();
  if (!targets.same_shape(z) || active.size() != z.rows()) throw SchemaError("multi_hot_bce shape mismatch");
  std::size_t n_active = 0;
  for (auto a : active) n_active += a != 0;
  double loss = 0.0;
  for (std::size_t t = 0; t < z.rows(); ++t) {
    if (!active[t]) continue;
    double row_loss = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) {
      const double x = z(t, c);
      // log(1 + e^-|x|) form of the logistic loss.
      row_loss += std::max(x, 0.0) - x * targets(t, c) + std::log1p(std::exp(-std::abs(x)));
    }
    loss += row_loss / static_cast<double>(z.cols());
  }
  const double inv = n_active ? 1.0 / static_cast<double>(n_active) : 0.0;
  return logits.graph->emit(Matrix(1, 1, loss * inv), {logits}, [logits, targets, active, inv](Graph& g, int self) {
    if (inv == 0.0) return;
    const Matrix& zv = logits.value();
    const double d = g.grad(self_var(g, self))(0, 0) * inv / static_cast<double>(zv.cols());
    Matrix& dz = g.grad(logits);
    for (std::size_t t = 0; t < zv.rows(); ++t) {
      if (!active[t]) continue;
      for (std::size_t c = 0; c < zv.cols(); ++c) dz(t, c) += d * (stable_sigmoid(zv(t, c)) - targets(t, c));
    }
  });
}

Var masked_mse(Var x, const std::vector<double>& target, const std::vector<std::uint8_t>& mask) {
  const Matrix& xv = x.value();
  if (xv.cols() != 1 || target.size() != xv.rows() || mask.size() != xv.rows())
    throw SchemaError("masked_mse expects a single column aligned with its target");
  std::size_t n = 0;
  double loss = 0.0;
  for (std::size_t t = 0; t < xv.rows(); ++t) {
    if (!mask[t]) continue;
    const double e = xv(t, 0) - target[t];
    loss += e * e;
    ++n;
  }
  if (n == 0) throw Error("masked_mse over an all-masked sequence");
  const double inv = 1.0 / static_cast<double>(n);
  return x.graph->emit(Matrix(1, 1, loss * inv), {x}, [x, target, mask, inv](Graph& g, int self) {
    const double d = g.grad(self_var(g, self))(0, 0) * inv;
    Matrix& dx = g.grad(x);
    for (std::size_t t = 0; t < dx.rows(); ++t)
      if (mask[t]) dx(t, 0) += 2.0 * d * (x.value()(t, 0) - target[t]);
  });
}

}  // namespace v2m::nn
