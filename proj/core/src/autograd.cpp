#include "dreamnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "dreamnet/errors.hpp"

namespace dreamnet {

namespace {

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) {
    throw ContractError("operands belong to different graphs");
  }
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.value().shape != b.value().shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value().shape) + " vs " +
                     shape_str(b.value().shape));
  }
}

// Accumulates a unary elementwise derivative: dA += dOut * f'(out, in).
template <typename Deriv>
Var unary(Var a, Tensor out, Deriv deriv) {
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, deriv](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto& y = g.node(self).value.data;
    const auto& x = g.node(ia).value.data;
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * deriv(y[i], x[i]);
  });
}

}  // namespace

const Tensor& Var::value() const { return graph->node(id).value; }

std::span<const double> Var::grad() const { return graph->node(id).grad; }

double Var::item() const {
  const Tensor& v = value();
  if (v.numel() != 1) throw ContractError("item() on non-scalar of shape " + shape_str(v.shape));
  return v.data[0];
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.value.grad.reset();
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor& param) {
  if (auto it = param_ids_.find(&param); it != param_ids_.end()) return Var{this, it->second};
  Node n;
  n.value.shape = param.shape;
  n.value.data = param.data;
  n.param = &param;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  param_ids_.emplace(&param, id);
  return Var{this, id};
}

Var Graph::record(Tensor value, std::vector<std::size_t> parents,
                  std::function<void(Graph&, std::size_t)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (nodes_[loss.id].value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(nodes_[loss.id].value.shape));
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) n.grad.assign(n.value.numel(), 0.0);
  }
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
}

void Graph::zero_grad() {
  for (Node& n : nodes_) n.grad.clear();
}

std::vector<std::pair<Tensor*, std::vector<double>>> Graph::collect_param_grads() const {
  std::vector<std::pair<Tensor*, std::vector<double>>> out;
  for (const Node& n : nodes_) {
    if (n.param == nullptr) continue;
    out.emplace_back(n.param, n.grad.empty() ? std::vector<double>(n.value.numel(), 0.0) : n.grad);
  }
  return out;
}

void Graph::accumulate_param_grads() const {
  for (const Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    if (!n.param->grad) n.param->zero_grad();
    auto& dst = *n.param->grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

void backward(Var loss) { loss.graph->backward(loss); }

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape) + " and " +
                     shape_str(bv.shape));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::zeros(m, n);
  kernels::matmul_acc(av.data, bv.data, out.data, m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    if (g.needs_grad(ia)) kernels::matmul_nt_acc(gy, g.node(ib).value.data, g.grad_of(ia), m, n, k);
    if (g.needs_grad(ib)) kernels::matmul_tn_acc(g.node(ia).value.data, gy, g.grad_of(ib), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(av.shape) + " and " +
                     shape_str(bv.shape) + "^T");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out = Tensor::zeros(m, n);
  kernels::matmul_nt_acc(av.data, bv.data, out.data, m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    // dA = G * B, dB = G^T * A
    if (g.needs_grad(ia)) kernels::matmul_acc(gy, g.node(ib).value.data, g.grad_of(ia), m, n, k);
    if (g.needs_grad(ib)) kernels::matmul_tn_acc(gy, g.node(ia).value.data, g.grad_of(ib), m, n, k);
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = av(i, j);
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, m, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += gy[j * m + i];
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < bd.size(); ++i) out.data[i] += bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    for (std::size_t p : {ia, ib}) {
      if (!g.needs_grad(p)) continue;
      auto& gx = g.grad_of(p);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < bd.size(); ++i) out.data[i] -= bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    if (g.needs_grad(ia)) {
      auto& gx = g.grad_of(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.needs_grad(ib)) {
      auto& gx = g.grad_of(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] -= gy[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < bd.size(); ++i) out.data[i] *= bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    const auto& ad = g.node(ia).value.data;
    const auto& bd = g.node(ib).value.data;
    if (g.needs_grad(ia)) {
      auto& gx = g.grad_of(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * bd[i];
    }
    if (g.needs_grad(ib)) {
      auto& gx = g.grad_of(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * ad[i];
    }
  });
}

Var add_row(Var a, Var row) {
  require_same_graph(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: row " + shape_str(rv.shape) + " does not fit " + shape_str(av.shape));
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += rv.data[j];
  const std::size_t ia = a.id, ir = row.id;
  return a.graph->record(std::move(out), {ia, ir}, [ia, ir, m, n](Graph& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    if (g.needs_grad(ia)) {
      auto& gx = g.grad_of(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.needs_grad(ir)) {
      auto& gr = g.grad_of(ir);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += gy[i * n + j];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v *= s;
  return unary(a, std::move(out), [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v += s;
  return unary(a, std::move(out), [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return unary(a, std::move(out), [](double y, double) { return y * (1.0 - y); });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return unary(a, std::move(out), [](double, double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::tanh(v);
  return unary(a, std::move(out), [](double y, double) { return 1.0 - y * y; });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids, widths;
  for (Var p : parts) {
    require_same_graph(parts[0], p);
    if (p.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    ids.push_back(p.id);
    widths.push_back(p.cols());
    n += p.cols();
  }
  Tensor out = Tensor::zeros(m, n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data.begin() + i * widths[k], widths[k], out.data.begin() + i * n + off);
    off += widths[k];
  }
  return parts[0].graph->record(std::move(out), ids, [ids, widths, m, n](Graph& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.needs_grad(ids[k])) {
        auto& gx = g.grad_of(ids[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gx[i * widths[k] + j] += gy[i * n + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t n = parts[0].cols();
  std::vector<std::size_t> ids, sizes;
  Tensor out;
  out.shape = {0, n};
  for (Var p : parts) {
    require_same_graph(parts[0], p);
    if (p.cols() != n) throw ShapeError("concat_rows: column count mismatch");
    ids.push_back(p.id);
    sizes.push_back(p.value().numel());
    out.data.insert(out.data.end(), p.value().data.begin(), p.value().data.end());
    out.shape[0] += p.rows();
  }
  return parts[0].graph->record(std::move(out), ids, [ids, sizes](Graph& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.needs_grad(ids[k])) {
        auto& gx = g.grad_of(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += gy[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (begin + count > n) throw ShapeError("slice_cols: range exceeds " + shape_str(av.shape));
  Tensor out = Tensor::zeros(m, count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(av.data.begin() + i * n + begin, count, out.data.begin() + i * count);
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, m, n, begin, count](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += gy[i * count + j];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (begin + count > m) throw ShapeError("slice_rows: range exceeds " + shape_str(av.shape));
  Tensor out({count, n}, std::vector<double>(av.data.begin() + begin * n,
                                             av.data.begin() + (begin + count) * n));
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, n, begin](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * n + i] += gy[i];
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data) total += v;
  const std::size_t ia = a.id;
  return a.graph->record(Tensor::filled(1, 1, total), {ia}, [ia](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const double gy = g.grad_of(self)[0];
    for (double& v : g.grad_of(ia)) v += gy;
  });
}

Var mean_rows(Var a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (m == 0) throw ShapeError("mean_rows: empty matrix");
  Tensor out = Tensor::zeros(1, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[j] += av.data[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : out.data) v *= inv;
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, m, n, inv](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += gy[j] * inv;
  });
}

Var softmax_rows(Var a) { return softmax_rows(a, a.cols()); }

Var softmax_rows(Var a, std::size_t valid_cols) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (valid_cols == 0 || valid_cols > n) throw ShapeError("softmax_rows: invalid valid_cols");
  Tensor out = av;
  kernels::softmax_rows_inplace(out.data, m, n, valid_cols);
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, m, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto& y = g.node(self).value.data;
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (gy[i * n + j] - dot);
    }
  });
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  require_same_graph(a, gain);
  require_same_graph(a, bias);
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (gain.value().numel() != n || bias.value().numel() != n) {
    throw ShapeError("layer_norm_rows: gain/bias width does not match " + shape_str(av.shape));
  }
  // xhat and 1/sigma are kept for the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor out = Tensor::zeros(m, n);
  const auto& gd = gain.value().data;
  const auto& bd = bias.value().data;
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = av.data.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (x[j] - mean) * is;
      (*xhat)[i * n + j] = h;
      out.data[i * n + j] = h * gd[j] + bd[j];
    }
  }
  const std::size_t ia = a.id, igain = gain.id, ibias = bias.id;
  return a.graph->record(
      std::move(out), {ia, igain, ibias},
      [ia, igain, ibias, m, n, xhat, inv_std](Graph& g, std::size_t self) {
        const auto& gy = g.grad_of(self);
        const auto& gd = g.node(igain).value.data;
        if (g.needs_grad(igain)) {
          auto& gg = g.grad_of(igain);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += gy[i * n + j] * (*xhat)[i * n + j];
        }
        if (g.needs_grad(ibias)) {
          auto& gb = g.grad_of(ibias);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
        }
        if (g.needs_grad(ia)) {
          auto& gx = g.grad_of(ia);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = gy[i * n + j] * gd[j];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[i * n + j];
            }
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = gy[i * n + j] * gd[j];
              gx[i * n + j] += (*inv_std)[i] * (dh - mean_dh - (*xhat)[i * n + j] * mean_dh_h);
            }
          }
        }
      });
}

Var dropout(Var a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  const std::size_t count = a.value().numel();
  auto mask = std::make_shared<std::vector<double>>(count);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor out = a.value();
  for (std::size_t i = 0; i < count; ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out.data[i] *= (*mask)[i];
  }
  const std::size_t ia = a.id;
  return a.graph->record(std::move(out), {ia}, [ia, mask](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

Var lstm_final_state(Var projected, Var w_hh, bool reverse) {
  require_same_graph(projected, w_hh);
  const Tensor& zv = projected.value();
  const Tensor& wv = w_hh.value();
  const std::size_t len = zv.rows(), hidden = wv.rows();
  if (wv.cols() != 4 * hidden || zv.cols() != 4 * hidden) {
    throw ShapeError("lstm_final_state: projected " + shape_str(zv.shape) + " and w_hh " + shape_str(wv.shape) +
                     " do not match a 4H gate layout");
  }
  if (len == 0) throw ShapeError("lstm_final_state: empty sequence");

  // Per-step activations in processing order, kept for the backward pass.
  struct Cache {
    std::vector<double> gates;  // len x 4H after nonlinearity
    std::vector<double> c;      // len x H
    std::vector<double> tanh_c;  // len x H
    std::vector<double> h;      // len x H
  };
  auto cache = std::make_shared<Cache>();
  const std::size_t g4 = 4 * hidden;
  cache->gates.assign(len * g4, 0.0);
  cache->c.assign(len * hidden, 0.0);
  cache->tanh_c.assign(len * hidden, 0.0);
  cache->h.assign(len * hidden, 0.0);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  for (std::size_t s = 0; s < len; ++s) {
    const std::size_t t = reverse ? len - 1 - s : s;
    double* z = cache->gates.data() + s * g4;
    std::copy_n(zv.data.data() + t * g4, g4, z);
    if (s > 0) {
      kernels::matmul_acc(std::span<const double>(cache->h.data() + (s - 1) * hidden, hidden), wv.data,
                          std::span<double>(z, g4), 1, hidden, g4);
    }
    for (std::size_t j = 0; j < hidden; ++j) {
      const double i = sig(z[j]), f = sig(z[hidden + j]), gg = std::tanh(z[2 * hidden + j]),
                   o = sig(z[3 * hidden + j]);
      z[j] = i;
      z[hidden + j] = f;
      z[2 * hidden + j] = gg;
      z[3 * hidden + j] = o;
      const double c_prev = s > 0 ? cache->c[(s - 1) * hidden + j] : 0.0;
      const double c = f * c_prev + i * gg;
      cache->c[s * hidden + j] = c;
      cache->tanh_c[s * hidden + j] = std::tanh(c);
      cache->h[s * hidden + j] = o * cache->tanh_c[s * hidden + j];
    }
  }
  Tensor out = Tensor::zeros(1, hidden);
  std::copy_n(cache->h.data() + (len - 1) * hidden, hidden, out.data.data());

  const std::size_t iz = projected.id, iw = w_hh.id;
  return projected.graph->record(std::move(out), {iz, iw}, [iz, iw, len, hidden, reverse, cache](Graph& g,
                                                                                                std::size_t self) {
    const std::size_t g4 = 4 * hidden;
    const bool need_z = g.needs_grad(iz), need_w = g.needs_grad(iw);
    const auto& w = g.node(iw).value.data;
    std::vector<double> dh(g.grad_of(self).begin(), g.grad_of(self).end());
    std::vector<double> dc(hidden, 0.0), dz(g4, 0.0);
    // w^T, so the recurrent backward product is a row-times-matrix sweep.
    std::vector<double> w_t(g4 * hidden);
    for (std::size_t r = 0; r < hidden; ++r) {
      for (std::size_t k = 0; k < g4; ++k) w_t[k * hidden + r] = w[r * g4 + k];
    }
    for (std::size_t s = len; s-- > 0;) {
      const double* gate = cache->gates.data() + s * g4;
      for (std::size_t j = 0; j < hidden; ++j) {
        const double i = gate[j], f = gate[hidden + j], gg = gate[2 * hidden + j], o = gate[3 * hidden + j];
        const double tc = cache->tanh_c[s * hidden + j];
        const double c_prev = s > 0 ? cache->c[(s - 1) * hidden + j] : 0.0;
        dc[j] += dh[j] * o * (1.0 - tc * tc);
        dz[j] = dc[j] * gg * i * (1.0 - i);
        dz[hidden + j] = dc[j] * c_prev * f * (1.0 - f);
        dz[2 * hidden + j] = dc[j] * i * (1.0 - gg * gg);
        dz[3 * hidden + j] = dh[j] * tc * o * (1.0 - o);
        dc[j] *= f;
      }
      if (need_z) {
        const std::size_t t = reverse ? len - 1 - s : s;
        auto& gz = g.grad_of(iz);
        for (std::size_t k = 0; k < g4; ++k) gz[t * g4 + k] += dz[k];
      }
      if (s == 0) break;
      const std::span<const double> h_prev(cache->h.data() + (s - 1) * hidden, hidden);
      if (need_w) kernels::matmul_tn_acc(h_prev, dz, g.grad_of(iw), 1, hidden, g4);
      std::fill(dh.begin(), dh.end(), 0.0);
      kernels::matmul_acc(dz, w_t, dh, 1, g4, hidden);
    }
  });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t vocab = tv.rows(), n = tv.cols();
  Tensor out = Tensor::zeros(ids.size(), n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw InputError("embedding: id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.data.begin() + ids[i] * n, n, out.data.begin() + i * n);
  }
  const std::size_t it = table.id;
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return table.graph->record(std::move(out), {it}, [it, rows, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(it)) return;
    const auto& gy = g.grad_of(self);
    auto& gt = g.grad_of(it);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gt[rows[i] * n + j] += gy[i * n + j];
  });
}

Var bce_sum(Var probs, std::span<const double> targets, double eps) {
  const Tensor& pv = probs.value();
  if (pv.numel() != targets.size()) {
    throw ShapeError("bce_sum: " + std::to_string(pv.numel()) + " probabilities vs " +
                     std::to_string(targets.size()) + " targets");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double p = std::clamp(pv.data[i], eps, 1.0 - eps);
    const double y = targets[i];
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  const std::size_t ip = probs.id;
  std::vector<double> y(targets.begin(), targets.end());
  return probs.graph->record(Tensor::filled(1, 1, total), {ip}, [ip, y, eps](Graph& g, std::size_t self) {
    if (!g.needs_grad(ip)) return;
    const double gy = g.grad_of(self)[0];
    const auto& pd = g.node(ip).value.data;
    auto& gp = g.grad_of(ip);
    for (std::size_t i = 0; i < y.size(); ++i) {
      // Zero slope where the clamp is active.
      if (pd[i] < eps || pd[i] > 1.0 - eps) continue;
      gp[i] += gy * (-(y[i] / pd[i]) + (1.0 - y[i]) / (1.0 - pd[i]));
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::pair<std::size_t, std::size_t>> targets) {
  const Tensor& lv = logits.value();
  const std::size_t m = lv.rows(), n = lv.cols();
  if (targets.empty()) throw InputError("softmax_cross_entropy: no targets");
  auto probs = std::make_shared<std::vector<double>>();
  probs->reserve(targets.size() * n);
  double total = 0.0;
  for (auto [row, cls] : targets) {
    if (row >= m || cls >= n) throw ShapeError("softmax_cross_entropy: target out of range");
    std::vector<double> p(lv.data.begin() + row * n, lv.data.begin() + (row + 1) * n);
    kernels::softmax_rows_inplace(p, 1, n, n);
    // log-softmax via max-shifted log-sum-exp for accuracy
    const double* x = lv.data.data() + row * n;
    const double mx = *std::max_element(x, x + n);
    double lse = 0.0;
    for (std::size_t j = 0; j < n; ++j) lse += std::exp(x[j] - mx);
    total += (std::log(lse) + mx) - x[cls];
    probs->insert(probs->end(), p.begin(), p.end());
  }
  const double inv = 1.0 / static_cast<double>(targets.size());
  std::vector<std::pair<std::size_t, std::size_t>> tgt(targets.begin(), targets.end());
  const std::size_t il = logits.id;
  return logits.graph->record(Tensor::filled(1, 1, total * inv), {il},
                              [il, tgt, probs, n, inv](Graph& g, std::size_t self) {
                                if (!g.needs_grad(il)) return;
                                const double gy = g.grad_of(self)[0] * inv;
                                auto& gl = g.grad_of(il);
                                for (std::size_t t = 0; t < tgt.size(); ++t) {
                                  const auto [row, cls] = tgt[t];
                                  for (std::size_t j = 0; j < n; ++j) {
                                    const double d = (*probs)[t * n + j] - (j == cls ? 1.0 : 0.0);
                                    gl[row * n + j] += gy * d;
                                  }
                                }
                              });
}

GradCheckResult grad_check(const std::function<Var(Graph&)>& build, std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
  std::vector<std::vector<double>> analytic(params.size());
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
    for (auto& [param, grad] : g.collect_param_grads()) {
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p] == param) analytic[p] = std::move(grad);
      }
    }
  }
  auto eval = [&build]() {
    Graph g;
    return build(g).item();
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    if (analytic[p].empty()) analytic[p].assign(t.numel(), 0.0);
    const std::size_t count = t.numel();
    std::size_t stride = 1;
    if (options.max_coords_per_tensor > 0 && count > options.max_coords_per_tensor) {
      stride = (count + options.max_coords_per_tensor - 1) / options.max_coords_per_tensor;
    }
    for (std::size_t i = 0; i < count; i += stride) {
      const double saved = t.data[i];
      t.data[i] = saved + options.eps;
      const double up = eval();
      t.data[i] = saved - options.eps;
      const double down = eval();
      t.data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max(options.min_scale, std::abs(a) + std::abs(numeric));
      ++result.coords_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace dreamnet
