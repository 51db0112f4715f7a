#include "repr_robust/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "repr_robust/error.hpp"

namespace repr_robust {

namespace {

[[noreturn]] void shape_mismatch(const char* primitive, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(primitive) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

[[noreturn]] void bad_shape(const char* primitive, const Shape& a, const char* expected) {
  throw ShapeError(std::string(primitive) + ": shape " + to_string(a) + " is not " + expected);
}

Graph& common_graph(const char* primitive, const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    throw GraphError(std::string(primitive) + ": operands belong to different graphs");
  }
  return a.graph();
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// Sum of the gradient of a broadcast scalar operand.
double total(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

template <class F, class D>
Var unary(const char*, const Var& a, F forward, D derivative) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  return a.graph().record(
      std::move(out), {a},
      [derivative](const Tensor& g, const Tensor& y, std::span<const Tensor* const> in,
                   std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        const Tensor& xv = *in[0];
        auto gx = grads[0]->data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * derivative(xv[i], y[i]);
      });
}

enum class Broadcast { Same, LeftScalar, RightScalar };

Broadcast elementwise_mode(const char* primitive, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (a.size() == 1) return Broadcast::LeftScalar;
  if (b.size() == 1) return Broadcast::RightScalar;
  shape_mismatch(primitive, a.shape(), b.shape());
}

}  // namespace

// --- Var / Graph ---------------------------------------------------------

const Tensor& Var::value() const {
  if (!graph_) throw GraphError("var: uninitialized variable");
  return graph_->nodes_.at(id_).value;
}

Graph& Var::graph() const {
  if (!graph_) throw GraphError("var: uninitialized variable");
  return *graph_;
}

Var Graph::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in, "record");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

bool Graph::owns(const Var& v) const noexcept {
  return v.graph_ == this && v.id_ < nodes_.size();
}

void Graph::check_owned(const Var& v, const char* what) const {
  if (!owns(v)) throw GraphError(std::string(what) + ": variable does not belong to this graph");
}

bool Graph::requires_grad(const Var& v) const {
  check_owned(v, "requires_grad");
  return nodes_[v.id()].requires_grad;
}

bool Graph::is_leaf(const Var& v) const {
  check_owned(v, "is_leaf");
  return nodes_[v.id()].leaf;
}

void Graph::backward(const Var& root) {
  check_owned(root, "backward");
  Node& r = nodes_[root.id()];
  if (r.value.size() != 1) {
    throw GraphError("backward: root of shape " + to_string(r.value.shape()) + " is not a scalar");
  }
  for (auto& n : nodes_) n.grad = Tensor();
  r.grad = Tensor::filled(r.value.shape(), 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : n.inputs) {
      Node& p = nodes_[in];
      in_values.push_back(&p.value);
      if (p.requires_grad) {
        if (p.grad.empty()) p.grad = Tensor(p.value.shape());
        in_grads.push_back(&p.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(n.grad, n.value, in_values, in_grads);
  }
}

Tensor Graph::grad(const Var& v) const {
  check_owned(v, "grad");
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

Tensor gradient(const Var& root, const Var& leaf) {
  Graph& g = root.graph();
  if (!g.owns(leaf)) throw GraphError("gradient: variable is not on the loss graph");
  if (!g.is_leaf(leaf)) throw GraphError("gradient: variable is not a differentiable leaf");
  g.backward(root);
  return g.grad(leaf);
}

// --- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
  Graph& g = common_graph("add", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast mode = elementwise_mode("add", x, y);
  Tensor out(mode == Broadcast::LeftScalar ? y.shape() : x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[mode == Broadcast::LeftScalar ? 0 : i] + y[mode == Broadcast::RightScalar ? 0 : i];
  }
  return g.record(std::move(out), {a, b},
                  [mode](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                         std::span<Tensor* const> grads) {
                    if (grads[0]) {
                      if (mode == Broadcast::LeftScalar) (*grads[0])[0] += total(gr);
                      else accumulate(grads[0], gr);
                    }
                    if (grads[1]) {
                      if (mode == Broadcast::RightScalar) (*grads[1])[0] += total(gr);
                      else accumulate(grads[1], gr);
                    }
                  });
}

Var sub(const Var& a, const Var& b) {
  Graph& g = common_graph("subtract", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast mode = elementwise_mode("subtract", x, y);
  Tensor out(mode == Broadcast::LeftScalar ? y.shape() : x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[mode == Broadcast::LeftScalar ? 0 : i] - y[mode == Broadcast::RightScalar ? 0 : i];
  }
  return g.record(std::move(out), {a, b},
                  [mode](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                         std::span<Tensor* const> grads) {
                    if (grads[0]) {
                      if (mode == Broadcast::LeftScalar) (*grads[0])[0] += total(gr);
                      else accumulate(grads[0], gr);
                    }
                    if (grads[1]) {
                      if (mode == Broadcast::RightScalar) {
                        (*grads[1])[0] -= total(gr);
                      } else {
                        auto d = grads[1]->data();
                        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= gr[i];
                      }
                    }
                  });
}

Var mul(const Var& a, const Var& b) {
  Graph& g = common_graph("multiply", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast mode = elementwise_mode("multiply", x, y);
  Tensor out(mode == Broadcast::LeftScalar ? y.shape() : x.shape());
  const auto ix = [mode](std::size_t i) { return mode == Broadcast::LeftScalar ? 0 : i; };
  const auto iy = [mode](std::size_t i) { return mode == Broadcast::RightScalar ? 0 : i; };
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[ix(i)] * y[iy(i)];
  return g.record(std::move(out), {a, b},
                  [ix, iy](const Tensor& gr, const Tensor&, std::span<const Tensor* const> in,
                           std::span<Tensor* const> grads) {
                    const Tensor& xv = *in[0];
                    const Tensor& yv = *in[1];
                    for (std::size_t i = 0; i < gr.size(); ++i) {
                      if (grads[0]) (*grads[0])[ix(i)] += gr[i] * yv[iy(i)];
                      if (grads[1]) (*grads[1])[iy(i)] += gr[i] * xv[ix(i)];
                    }
                  });
}

Var scale(const Var& a, double factor) {
  return unary("scale", a, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double value) {
  return unary("add_scalar", a, [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  return unary("relu", a, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary("tanh", a, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary("exp", a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return unary("log", a, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var sqrt(const Var& a) {
  for (double v : a.value().data()) {
    if (v < 0.0) throw DomainError("sqrt: negative argument " + std::to_string(v));
  }
  return unary("sqrt", a, [](double v) { return std::sqrt(v); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(const Var& a) {
  return unary("square", a, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Var abs(const Var& a) {
  return unary("abs", a, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// --- linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Graph& g = common_graph("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    shape_mismatch("matmul", x.shape(), y.shape());
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* o = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      const double* yr = &y.data()[p * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += xv * yr[j];
    }
  }
  return g.record(std::move(out), {a, b},
                  [m, k, n](const Tensor& gr, const Tensor&, std::span<const Tensor* const> in,
                            std::span<Tensor* const> grads) {
                    const Tensor& xv = *in[0];
                    const Tensor& yv = *in[1];
                    if (grads[0]) {  // dX = G Y^T
                      Tensor& gx = *grads[0];
                      for (std::size_t i = 0; i < m; ++i) {
                        const double* gi = &gr.data()[i * n];
                        for (std::size_t p = 0; p < k; ++p) {
                          const double* yr = &yv.data()[p * n];
                          double s = 0.0;
                          for (std::size_t j = 0; j < n; ++j) s += gi[j] * yr[j];
                          gx[i * k + p] += s;
                        }
                      }
                    }
                    if (grads[1]) {  // dY = X^T G
                      Tensor& gy = *grads[1];
                      for (std::size_t i = 0; i < m; ++i) {
                        const double* gi = &gr.data()[i * n];
                        for (std::size_t p = 0; p < k; ++p) {
                          const double xv_ip = xv[i * k + p];
                          if (xv_ip == 0.0) continue;
                          double* gyr = &gy[p * n];
                          for (std::size_t j = 0; j < n; ++j) gyr[j] += xv_ip * gi[j];
                        }
                      }
                    }
                  });
}

Var transpose(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) bad_shape("transpose", x.shape(), "2-D");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return a.graph().record(std::move(out), {a},
                          [r, c](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                                 std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j)
                                (*grads[0])[i * c + j] += gr[j * r + i];
                          });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  Graph& g = common_graph("conv2d", x, weight);
  common_graph("conv2d", x, bias);
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  if (in.rank() != 4 || w.rank() != 4 || w.dim(1) != in.dim(1) || w.dim(2) != w.dim(3) ||
      w.dim(2) % 2 == 0) {
    shape_mismatch("conv2d", in.shape(), w.shape());
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) shape_mismatch("conv2d", w.shape(), b.shape());

  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(wd);

  // Visits every (output, input, weight) index triple with valid padding.
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t wi = ((oc * c + ic) * k + ky) * k + kx;
              for (std::ptrdiff_t yy = 0; yy < H; ++yy) {
                const std::ptrdiff_t iy = yy + static_cast<std::ptrdiff_t>(ky) - pad;
                if (iy < 0 || iy >= H) continue;
                for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
                  const std::ptrdiff_t ix = xx + static_cast<std::ptrdiff_t>(kx) - pad;
                  if (ix < 0 || ix >= W) continue;
                  const std::size_t oi = ((s * o + oc) * h + yy) * wd + xx;
                  const std::size_t ii = ((s * c + ic) * h + iy) * wd + ix;
                  body(oi, ii, wi);
                }
              }
            }
  };

  Tensor out({n, o, h, wd});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t p = 0; p < h * wd; ++p) out[(s * o + oc) * h * wd + p] = b[oc];
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += in[ii] * w[wi]; });

  return g.record(
      std::move(out), {x, weight, bias},
      [for_each_tap, n, o, h, wd](const Tensor& gr, const Tensor&,
                                  std::span<const Tensor* const> inputs,
                                  std::span<Tensor* const> grads) {
        const Tensor& iv = *inputs[0];
        const Tensor& wv = *inputs[1];
        Tensor* gx = grads[0];
        Tensor* gw = grads[1];
        Tensor* gb = grads[2];
        if (gx || gw) {
          for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) {
            if (gx) (*gx)[ii] += gr[oi] * wv[wi];
            if (gw) (*gw)[wi] += gr[oi] * iv[ii];
          });
        }
        if (gb) {
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t oc = 0; oc < o; ++oc)
              for (std::size_t p = 0; p < h * wd; ++p) (*gb)[oc] += gr[(s * o + oc) * h * wd + p];
        }
      });
}

Var avg_pool2(const Var& x) {
  const Tensor& in = x.value();
  if (in.rank() != 4 || in.dim(2) % 2 || in.dim(3) % 2) {
    bad_shape("avg_pool2", in.shape(), "[n, c, even h, even w]");
  }
  const std::size_t planes = in.dim(0) * in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({in.dim(0), in.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* base = &in.data()[p * h * w];
        out[(p * oh + y) * ow + xx] =
            0.25 * (base[(2 * y) * w + 2 * xx] + base[(2 * y) * w + 2 * xx + 1] +
                    base[(2 * y + 1) * w + 2 * xx] + base[(2 * y + 1) * w + 2 * xx + 1]);
      }
  return x.graph().record(
      std::move(out), {x},
      [planes, h, w, oh, ow](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                             std::span<Tensor* const> grads) {
        if (!grads[0]) return;
        Tensor& gx = *grads[0];
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const double v = 0.25 * gr[(p * oh + y) * ow + xx];
              double* base = &gx[p * h * w];
              base[(2 * y) * w + 2 * xx] += v;
              base[(2 * y) * w + 2 * xx + 1] += v;
              base[(2 * y + 1) * w + 2 * xx] += v;
              base[(2 * y + 1) * w + 2 * xx + 1] += v;
            }
      });
}

// --- reductions ----------------------------------------------------------

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().record(Tensor::scalar(s), {a},
                          [](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                             std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            const double g0 = gr[0];
                            for (double& v : grads[0]->data()) v += g0;
                          });
}

Var mean(const Var& a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var dot(const Var& a, const Var& b) {
  Graph& g = common_graph("dot", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 1 || x.shape() != y.shape()) shape_mismatch("dot", x.shape(), y.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return g.record(Tensor::scalar(s), {a, b},
                  [](const Tensor& gr, const Tensor&, std::span<const Tensor* const> in,
                     std::span<Tensor* const> grads) {
                    const double g0 = gr[0];
                    for (std::size_t i = 0; i < in[0]->size(); ++i) {
                      if (grads[0]) (*grads[0])[i] += g0 * (*in[1])[i];
                      if (grads[1]) (*grads[1])[i] += g0 * (*in[0])[i];
                    }
                  });
}

Var softmax(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) bad_shape("softmax", x.shape(), "at least 1-D");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.data()[r * d];
    double* o = &out[r * d];
    const double m = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (o[j] = std::exp(xr[j] - m));
    for (std::size_t j = 0; j < d; ++j) o[j] /= z;
  }
  return a.graph().record(std::move(out), {a},
                          [rows, d](const Tensor& gr, const Tensor& y,
                                    std::span<const Tensor* const>, std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t r = 0; r < rows; ++r) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < d; ++j) s += gr[r * d + j] * y[r * d + j];
                              for (std::size_t j = 0; j < d; ++j)
                                (*grads[0])[r * d + j] += y[r * d + j] * (gr[r * d + j] - s);
                            }
                          });
}

Var log_softmax(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) bad_shape("log_softmax", x.shape(), "at least 1-D");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.data()[r * d];
    const double m = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(xr[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] - lse;
  }
  return a.graph().record(std::move(out), {a},
                          [rows, d](const Tensor& gr, const Tensor& y,
                                    std::span<const Tensor* const>, std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t r = 0; r < rows; ++r) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < d; ++j) s += gr[r * d + j];
                              for (std::size_t j = 0; j < d; ++j)
                                (*grads[0])[r * d + j] += gr[r * d + j] - std::exp(y[r * d + j]) * s;
                            }
                          });
}

// --- structural ----------------------------------------------------------

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concatenate: no operands");
  Graph& g = parts.front().graph();
  const Shape& first = parts.front().shape();
  if (first.empty() || axis >= first.size() || axis > 1) {
    bad_shape("concatenate", first, "concatenable along the requested axis (0 or 1)");
  }
  std::size_t total_extent = 0;
  for (const auto& p : parts) {
    common_graph("concatenate", parts.front(), p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) shape_mismatch("concatenate", first, s);
    total_extent += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_extent;
  // Rows are the product of dims before `axis`; each row is a run of inner elements.
  const std::size_t outer = axis == 0 ? 1 : first[0];
  std::vector<std::size_t> runs;
  for (const auto& p : parts) runs.push_back(p.size() / outer);
  const std::size_t out_run = shape_size(out_shape) / outer;

  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < outer; ++r)
      std::copy_n(&v.data()[r * runs[k]], runs[k], &out[r * out_run + offset]);
    offset += runs[k];
  }
  return g.record(std::move(out), parts,
                  [outer, runs, out_run](const Tensor& gr, const Tensor&,
                                         std::span<const Tensor* const>,
                                         std::span<Tensor* const> grads) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < runs.size(); ++k) {
                      if (grads[k]) {
                        for (std::size_t r = 0; r < outer; ++r)
                          for (std::size_t j = 0; j < runs[k]; ++j)
                            (*grads[k])[r * runs[k] + j] += gr[r * out_run + off + j];
                      }
                      off += runs[k];
                    }
                  });
}

Var detach(const Var& a) { return a.graph().constant(a.value()); }

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph().record(std::move(out), {a},
                          [](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                             std::span<Tensor* const> grads) { accumulate(grads[0], gr); });
}

Var add_bias(const Var& a, const Var& bias) {
  Graph& g = common_graph("add_bias", a, bias);
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
    shape_mismatch("add_bias", x.shape(), b.shape());
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] + b[j];
  return g.record(std::move(out), {a, bias},
                  [n, d](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                         std::span<Tensor* const> grads) {
                    accumulate(grads[0], gr);
                    if (grads[1]) {
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < d; ++j) (*grads[1])[j] += gr[i * d + j];
                    }
                  });
}

Var row_sum(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) bad_shape("row_sum", x.shape(), "2-D");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j];
    out[i] = s;
  }
  return a.graph().record(std::move(out), {a},
                          [n, d](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                                 std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < d; ++j) (*grads[0])[i * d + j] += gr[i];
                          });
}

Var row_dot(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_mismatch("row_dot", a.shape(), b.shape());
  return row_sum(mul(a, b));
}

Var row_max(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || x.dim(1) == 0) bad_shape("row_max", x.shape(), "non-empty 2-D");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n});
  std::vector<std::size_t> arg(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (x[i * d + j] > x[i * d + best]) best = j;
    arg[i] = best;
    out[i] = x[i * d + best];
  }
  return a.graph().record(std::move(out), {a},
                          [arg, d](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                                   std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t i = 0; i < arg.size(); ++i)
                              (*grads[0])[i * d + arg[i]] += gr[i];
                          });
}

Var normalize_rows(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) bad_shape("normalize_rows", x.shape(), "2-D");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw DomainError("normalize_rows: row " + std::to_string(i) + " is zero");
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] / norms[i];
  }
  return a.graph().record(std::move(out), {a},
                          [norms, d](const Tensor& gr, const Tensor& y,
                                     std::span<const Tensor* const>, std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t i = 0; i < norms.size(); ++i) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < d; ++j) s += gr[i * d + j] * y[i * d + j];
                              for (std::size_t j = 0; j < d; ++j)
                                (*grads[0])[i * d + j] += (gr[i * d + j] - y[i * d + j] * s) / norms[i];
                            }
                          });
}

Var pick(const Var& a, std::vector<std::size_t> columns) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || columns.size() != x.dim(0)) {
    throw ShapeError("pick: " + std::to_string(columns.size()) + " column indices for shape " +
                     to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (columns[i] >= m) throw ShapeError("pick: column index out of range");
    out[i] = x[i * m + columns[i]];
  }
  return a.graph().record(std::move(out), {a},
                          [columns = std::move(columns), m](const Tensor& gr, const Tensor&,
                                                            std::span<const Tensor* const>,
                                                            std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t i = 0; i < columns.size(); ++i)
                              (*grads[0])[i * m + columns[i]] += gr[i];
                          });
}

Var roll_rows(const Var& a, std::ptrdiff_t shift) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || x.dim(0) == 0) bad_shape("roll_rows", x.shape(), "non-empty 2-D");
  const auto n = static_cast<std::ptrdiff_t>(x.dim(0));
  const std::size_t d = x.dim(1);
  auto src = [n, shift](std::ptrdiff_t i) { return static_cast<std::size_t>(((i - shift) % n + n) % n); };
  Tensor out(x.shape());
  for (std::ptrdiff_t i = 0; i < n; ++i)
    std::copy_n(&x.data()[src(i) * d], d, &out[static_cast<std::size_t>(i) * d]);
  return a.graph().record(std::move(out), {a},
                          [src, n, d](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                                      std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::ptrdiff_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < d; ++j)
                                (*grads[0])[src(i) * d + j] += gr[static_cast<std::size_t>(i) * d + j];
                          });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || begin > end || end > x.dim(0)) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + to_string(x.shape()));
  }
  const std::size_t d = x.dim(1);
  Tensor out({end - begin, d}, std::vector<double>(x.data().begin() + begin * d,
                                                   x.data().begin() + end * d));
  return a.graph().record(std::move(out), {a},
                          [begin, d](const Tensor& gr, const Tensor&, std::span<const Tensor* const>,
                                     std::span<Tensor* const> grads) {
                            if (!grads[0]) return;
                            for (std::size_t i = 0; i < gr.size(); ++i) (*grads[0])[begin * d + i] += gr[i];
                          });
}

// --- finite differences --------------------------------------------------

double finite_difference_check(const std::function<Var(Graph&, const Var&)>& fn, const Tensor& x,
                               double step) {
  if (!(step > 0.0)) throw DomainError("finite_difference_check: step must be positive");
  Tensor analytic;
  {
    Graph g;
    const Var leaf = g.leaf(x);
    analytic = gradient(fn(g, leaf), leaf);
  }
  auto evaluate = [&fn](const Tensor& at) {
    Graph g;
    const Var leaf = g.leaf(at);
    return fn(g, leaf).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = evaluate(probe);
    probe[i] = x[i] - step;
    const double down = evaluate(probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-12));
  }
  return worst;
}

}  // namespace repr_robust
