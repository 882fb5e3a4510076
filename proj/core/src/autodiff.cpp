// SPDX-License-Identifier: Apache-2.0
#include "mpgd/autodiff.hpp"

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

#include "mpgd/error.hpp"

namespace mpgd::ad {

namespace {

NodePtr make_node(const char* op, Tensor value, std::vector<NodePtr> parents,
                  std::function<void(const Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!n->value.all_finite())
    throw Error(std::string("ad: non-finite result from ") + op);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  // Nodes outside any parameter's ancestry never run backprop; dropping their
  // edges lets constant subgraphs be freed early.
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// fwd(x, y) -> value, da(x, y) -> d/dx, db(x, y) -> d/dy.
template <class Fwd, class Da, class Db>
NodePtr binary_elementwise(const char* op, const NodePtr& a, const NodePtr& b,
                           Fwd fwd, Da da, Db db) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  const bool a_scalar = av.size() == 1;
  const bool b_scalar = bv.size() == 1;
  if (!av.same_shape(bv) && !a_scalar && !b_scalar)
    throw Error(std::string("ad: shape mismatch in ") + op);

  const Tensor& shape_src = (a_scalar && !b_scalar) ? bv : av;
  const std::size_t n = shape_src.size();
  Tensor out(shape_src.shape());
  for (std::size_t i = 0; i < n; ++i)
    out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);

  Node* pa = a.get();
  Node* pb = b.get();
  return make_node(op, std::move(out), {a, b},
                   [pa, pb, a_scalar, b_scalar, n, da, db](const Node& self) {
                     for (std::size_t i = 0; i < n; ++i) {
                       const std::size_t ia = a_scalar ? 0 : i;
                       const std::size_t ib = b_scalar ? 0 : i;
                       const double g = self.grad[i];
                       const double x = pa->value[ia];
                       const double y = pb->value[ib];
                       if (pa->requires_grad) pa->grad[ia] += g * da(x, y);
                       if (pb->requires_grad) pb->grad[ib] += g * db(x, y);
                     }
                   });
}

template <class Fwd, class Dx>
NodePtr unary_elementwise(const char* op, const NodePtr& a, Fwd fwd, Dx dx) {
  const std::size_t n = a->value.size();
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a->value[i]);
  Node* pa = a.get();
  return make_node(op, std::move(out), {a}, [pa, n, dx](const Node& self) {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < n; ++i)
      pa->grad[i] += self.grad[i] * dx(pa->value[i]);
  });
}

// Output rows y with 0 <= y + off < extent; empty when the tap offset is
// entirely outside the image (kernels larger than the map).
struct TapSpan {
  std::size_t lo, hi;
};

TapSpan tap_span(std::ptrdiff_t off, std::size_t extent) {
  TapSpan s{0, extent};
  if (off < 0) {
    const std::size_t shift = static_cast<std::size_t>(-off);
    s.lo = shift < extent ? shift : extent;
  } else if (off > 0) {
    const std::size_t shift = static_cast<std::size_t>(off);
    s.hi = shift < extent ? extent - shift : 0;
  }
  if (s.hi < s.lo) s.hi = s.lo;
  return s;
}

}  // namespace

NodePtr constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!n->value.all_finite()) throw Error("ad: non-finite constant");
  return n;
}

NodePtr parameter(Tensor value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

NodePtr div(const NodePtr& a, const NodePtr& b) {
  for (std::size_t i = 0; i < b->value.size(); ++i)
    if (std::fabs(b->value[i]) < 1e-300)
      throw Error("ad: division by near-zero denominator");
  return binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

NodePtr add(const NodePtr& a, double b) { return add(a, constant(Tensor::scalar(b))); }
NodePtr sub(const NodePtr& a, double b) { return sub(a, constant(Tensor::scalar(b))); }
NodePtr mul(const NodePtr& a, double b) { return mul(a, constant(Tensor::scalar(b))); }
NodePtr div(const NodePtr& a, double b) { return div(a, constant(Tensor::scalar(b))); }

NodePtr exp(const NodePtr& a) {
  return unary_elementwise(
      "exp", a, [](double x) { return std::exp(x); },
      [](double x) { return std::exp(x); });
}

NodePtr abs(const NodePtr& a) {
  return unary_elementwise(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

NodePtr square(const NodePtr& a) {
  return unary_elementwise(
      "square", a, [](double x) { return x * x; },
      [](double x) { return 2.0 * x; });
}

NodePtr max_with_scalar(const NodePtr& a, double s) {
  return unary_elementwise(
      "max_with_scalar", a, [s](double x) { return x > s ? x : s; },
      [s](double x) { return x > s ? 1.0 : 0.0; });
}

NodePtr sum(const NodePtr& a) {
  const std::size_t n = a->value.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a->value[i];
  Node* pa = a.get();
  return make_node("sum", Tensor::scalar(acc), {a}, [pa, n](const Node& self) {
    if (!pa->requires_grad) return;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < n; ++i) pa->grad[i] += g;
  });
}

NodePtr mean(const NodePtr& a) {
  const std::size_t n = a->value.size();
  if (n == 0) throw Error("ad: mean of empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a->value[i];
  Node* pa = a.get();
  return make_node("mean", Tensor::scalar(acc / static_cast<double>(n)), {a},
                   [pa, n](const Node& self) {
                     if (!pa->requires_grad) return;
                     const double g = self.grad[0] / static_cast<double>(n);
                     for (std::size_t i = 0; i < n; ++i) pa->grad[i] += g;
                   });
}

NodePtr max(const NodePtr& a) {
  const std::size_t n = a->value.size();
  if (n == 0) throw Error("ad: max of empty tensor");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (a->value[i] > a->value[arg]) arg = i;
  Node* pa = a.get();
  return make_node("max", Tensor::scalar(a->value[arg]), {a},
                   [pa, arg](const Node& self) {
                     if (!pa->requires_grad) return;
                     pa->grad[arg] += self.grad[0];
                   });
}

NodePtr gather_mean(const NodePtr& a, const std::vector<std::size_t>& indices) {
  const std::size_t n = a->value.size();
  if (indices.empty()) throw Error("ad: gather_mean with empty index list");
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= n) throw Error("ad: gather_mean index out of range");
    if (j > 0 && indices[j] <= indices[j - 1])
      throw Error("ad: gather_mean indices must be strictly ascending");
  }
  const std::size_t k = indices.size();
  double acc = 0.0;
  for (std::size_t idx : indices) acc += a->value[idx];
  Node* pa = a.get();
  return make_node("gather_mean", Tensor::scalar(acc / static_cast<double>(k)),
                   {a}, [pa, indices, k](const Node& self) {
                     if (!pa->requires_grad) return;
                     const double g = self.grad[0] / static_cast<double>(k);
                     for (std::size_t idx : indices) pa->grad[idx] += g;
                   });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2)
    throw Error("ad: matmul requires rank-2 operands");
  const std::size_t m = av.shape()[0];
  const std::size_t k = av.shape()[1];
  const std::size_t n = bv.shape()[1];
  if (bv.shape()[0] != k) throw Error("ad: matmul inner dimension mismatch");

  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }

  Node* pa = a.get();
  Node* pb = b.get();
  return make_node("matmul", std::move(out), {a, b},
                   [pa, pb, m, k, n](const Node& self) {
                     // dA = G * B^T, dB = A^T * G
                     if (pa->requires_grad) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) {
                           const double g = self.grad[i * n + j];
                           for (std::size_t p = 0; p < k; ++p)
                             pa->grad[i * k + p] += g * pb->value[p * n + j];
                         }
                     }
                     if (pb->requires_grad) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           const double av_ip = pa->value[i * k + p];
                           for (std::size_t j = 0; j < n; ++j)
                             pb->grad[p * n + j] += av_ip * self.grad[i * n + j];
                         }
                     }
                   });
}

NodePtr conv2d(const NodePtr& input, const NodePtr& kernels) {
  const Tensor& x = input->value;
  const Tensor& w = kernels->value;
  if (x.rank() != 3) throw Error("ad: conv2d input must be [c_in x h x w]");
  if (w.rank() != 4) throw Error("ad: conv2d kernels must be [c_out x c_in x kh x kw]");
  const std::size_t ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const std::size_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != ci) throw Error("ad: conv2d channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw Error("ad: conv2d kernel sizes must be odd");
  const std::size_t ph = kh / 2, pw = kw / 2;

  Tensor out({co, h, wd});
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double* xp = x.data() + ic * h * wd;
      const double* wp = w.data() + (oc * ci + ic) * kh * kw;
      double* op = out.data() + oc * h * wd;
      for (std::size_t dy = 0; dy < kh; ++dy)
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const double kv = wp[dy * kw + dx];
          if (kv == 0.0) continue;
          // out[y][x] += in[y + dy - ph][x + dx - pw] * kv over valid rows/cols
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(ph);
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(pw);
          const TapSpan ys = tap_span(sy, h);
          const TapSpan xs = tap_span(sx, wd);
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const double* row = xp + (y + sy) * wd + sx;
            double* orow = op + y * wd;
            for (std::size_t xx = xs.lo; xx < xs.hi; ++xx) orow[xx] += row[xx] * kv;
          }
        }
    }

  Node* px = input.get();
  Node* pk = kernels.get();
  return make_node(
      "conv2d", std::move(out), {input, kernels},
      [px, pk, ci, co, h, wd, kh, kw, ph, pw](const Node& self) {
        const Tensor& g = self.grad;
        if (px->requires_grad) {
          // d in[y][x] += g[y - dy + ph][x - dx + pw] * k[dy][dx]
          for (std::size_t oc = 0; oc < co; ++oc)
            for (std::size_t ic = 0; ic < ci; ++ic) {
              const double* gp = g.data() + oc * h * wd;
              const double* wp = pk->value.data() + (oc * ci + ic) * kh * kw;
              double* ip = px->grad.data() + ic * h * wd;
              for (std::size_t dy = 0; dy < kh; ++dy)
                for (std::size_t dx = 0; dx < kw; ++dx) {
                  const double kv = wp[dy * kw + dx];
                  if (kv == 0.0) continue;
                  const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(ph);
                  const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(pw);
                  const TapSpan ys = tap_span(sy, h);
                  const TapSpan xs = tap_span(sx, wd);
                  for (std::size_t y = ys.lo; y < ys.hi; ++y) {
                    double* irow = ip + (y + sy) * wd + sx;
                    const double* grow = gp + y * wd;
                    for (std::size_t xx = xs.lo; xx < xs.hi; ++xx) irow[xx] += grow[xx] * kv;
                  }
                }
            }
        }
        if (pk->requires_grad) {
          // d k[dy][dx] += sum_{y,x} g[y][x] * in[y + dy - ph][x + dx - pw]
          for (std::size_t oc = 0; oc < co; ++oc)
            for (std::size_t ic = 0; ic < ci; ++ic) {
              const double* gp = g.data() + oc * h * wd;
              const double* xp = px->value.data() + ic * h * wd;
              double* wp = pk->grad.data() + (oc * ci + ic) * kh * kw;
              for (std::size_t dy = 0; dy < kh; ++dy)
                for (std::size_t dx = 0; dx < kw; ++dx) {
                  const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(ph);
                  const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(pw);
                  const TapSpan ys = tap_span(sy, h);
                  const TapSpan xs = tap_span(sx, wd);
                  double acc = 0.0;
                  for (std::size_t y = ys.lo; y < ys.hi; ++y) {
                    const double* xrow = xp + (y + sy) * wd + sx;
                    const double* grow = gp + y * wd;
                    for (std::size_t xx = xs.lo; xx < xs.hi; ++xx) acc += grow[xx] * xrow[xx];
                  }
                  wp[dy * kw + dx] += acc;
                }
            }
        }
      });
}

NodePtr reshape(const NodePtr& a, std::vector<std::size_t> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  const std::size_t n = out.size();
  Node* pa = a.get();
  return make_node("reshape", std::move(out), {a}, [pa, n](const Node& self) {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
  });
}

void backward(const NodePtr& root) {
  if (root->value.size() != 1) throw Error("ad: backward root must be scalar");
  if (!root->requires_grad) return;  // no parameters anywhere in the graph

  // Iterative post-order DFS over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  seen.insert(root.get());
  stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    auto [n, i] = stack.back();
    if (i < n->parents.size()) {
      stack.back().second = i + 1;
      Node* p = n->parents[i].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad = Tensor(n->value.shape());
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace mpgd::ad
