#include "istt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace istt {

int Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Tensor value) { return {push(std::move(value), false, nullptr)}; }

Var Tape::input(Tensor value) { return {push(std::move(value), true, nullptr)}; }

Var Tape::param(Param& p) {
  Param* pp = &p;
  return {push(p.value, true, [pp](Tape& t, int self) {
    // flush the tape gradient into the external accumulator
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    double* dst = pp->grad.data();
    const double* src = g.data();
    for (long i = 0; i < g.numel(); ++i) dst[i] += src[i];
  })};
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  return n.grad;
}

void Tape::clear() { nodes_.clear(); }

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad.defined()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  Tensor& buf = grad_buf(id);
  double* dst = buf.data();
  const double* src = g.data();
  for (long i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
    throw ContractError("backward: invalid loss node");
  Node& ln = nodes_[static_cast<size_t>(loss.id)];
  if (ln.value.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + ln.value.shape_str());
  grad_buf(loss.id).fill(1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.grad.defined()) continue;  // not on a path to the loss
    if (n.backward_fn) n.backward_fn(*this, i);
  }
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = istt::matmul(value(a), value(b));
  bool rg = requires_grad(a) || requires_grad(b);
  if (!rg) return {push(std::move(out), false, nullptr)};
  int ai = a.id, bi = b.id;
  return {push(std::move(out), true, [ai, bi](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(ai)].requires_grad)
      t.accumulate(ai, matmul_nt(g, t.nodes_[static_cast<size_t>(bi)].value));
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad)
      t.accumulate(bi, matmul_tn(t.nodes_[static_cast<size_t>(ai)].value, g));
  })};
}

Var Tape::add(Var a, Var b) {
  Tensor out = istt::add(value(a), value(b));
  bool rg = requires_grad(a) || requires_grad(b);
  if (!rg) return {push(std::move(out), false, nullptr)};
  int ai = a.id, bi = b.id;
  return {push(std::move(out), true, [ai, bi](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(ai)].requires_grad) t.accumulate(ai, g);
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad) t.accumulate(bi, g);
  })};
}

Var Tape::add_row_bias(Var x, Var bias) {
  Tensor out = istt::add_row_bias(value(x), value(bias));
  bool rg = requires_grad(x) || requires_grad(bias);
  if (!rg) return {push(std::move(out), false, nullptr)};
  int xi = x.id, bi = bias.id;
  return {push(std::move(out), true, [xi, bi](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(xi)].requires_grad) t.accumulate(xi, g);
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad) {
      Tensor gb(t.nodes_[static_cast<size_t>(bi)].value.shape());
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gb(j) += g(i, j);
      t.accumulate(bi, gb);
    }
  })};
}

Var Tape::add_scaled(Var a, Var b, double c) {
  Tensor out = istt::add(value(a), istt::scale(value(b), c));
  bool rg = requires_grad(a) || requires_grad(b);
  if (!rg) return {push(std::move(out), false, nullptr)};
  int ai = a.id, bi = b.id;
  return {push(std::move(out), true, [ai, bi, c](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(ai)].requires_grad) t.accumulate(ai, g);
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad) t.accumulate(bi, istt::scale(g, c));
  })};
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv))
    throw ShapeError("mul shape mismatch: " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out = av;
  for (long i = 0; i < out.numel(); ++i) out.vec()[static_cast<size_t>(i)] *= bv.data()[i];
  check_finite(out, "mul");
  bool rg = requires_grad(a) || requires_grad(b);
  if (!rg) return {push(std::move(out), false, nullptr)};
  int ai = a.id, bi = b.id;
  return {push(std::move(out), true, [ai, bi](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(ai)].requires_grad) {
      Tensor ga = g;
      const Tensor& bv2 = t.nodes_[static_cast<size_t>(bi)].value;
      for (long i = 0; i < ga.numel(); ++i) ga.vec()[static_cast<size_t>(i)] *= bv2.data()[i];
      t.accumulate(ai, ga);
    }
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad) {
      Tensor gb = g;
      const Tensor& av2 = t.nodes_[static_cast<size_t>(ai)].value;
      for (long i = 0; i < gb.numel(); ++i) gb.vec()[static_cast<size_t>(i)] *= av2.data()[i];
      t.accumulate(bi, gb);
    }
  })};
}

Var Tape::scale(Var a, double c) {
  Tensor out = istt::scale(value(a), c);
  if (!requires_grad(a)) return {push(std::move(out), false, nullptr)};
  int ai = a.id;
  return {push(std::move(out), true, [ai, c](Tape& t, int self) {
    t.accumulate(ai, istt::scale(t.nodes_[static_cast<size_t>(self)].grad, c));
  })};
}

Var Tape::relu(Var a) {
  Tensor out = istt::relu(value(a));
  if (!requires_grad(a)) return {push(std::move(out), false, nullptr)};
  int ai = a.id;
  return {push(std::move(out), true, [ai](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Tensor& x = t.nodes_[static_cast<size_t>(ai)].value;
    Tensor ga = g;
    for (long i = 0; i < ga.numel(); ++i)
      if (x.data()[i] <= 0.0) ga.vec()[static_cast<size_t>(i)] = 0.0;
    t.accumulate(ai, ga);
  })};
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).vec()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (!requires_grad(a)) return {push(std::move(out), false, nullptr)};
  int ai = a.id;
  return {push(std::move(out), true, [ai](Tape& t, int self) {
    double g = t.nodes_[static_cast<size_t>(self)].grad.item();
    Tensor ga(t.nodes_[static_cast<size_t>(ai)].value.shape());
    ga.fill(g);
    t.accumulate(ai, ga);
  })};
}

Var Tape::softmax(Var a, int axis) {
  Tensor out = istt::softmax(value(a), axis);
  if (axis < 0) axis += out.rank();
  if (!requires_grad(a)) return {push(std::move(out), false, nullptr)};
  int ai = a.id;
  return {push(std::move(out), true, [ai, axis](Tape& t, int self) {
    const Tensor& y = t.nodes_[static_cast<size_t>(self)].value;
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    const auto& shape = y.shape();
    long inner = 1, outer = 1;
    long n = shape[static_cast<size_t>(axis)];
    for (int i = axis + 1; i < y.rank(); ++i) inner *= shape[static_cast<size_t>(i)];
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    Tensor ga(y.shape());
    for (long o = 0; o < outer; ++o) {
      for (long in = 0; in < inner; ++in) {
        long base = o * n * inner + in;
        double dot = 0.0;
        for (long i = 0; i < n; ++i) dot += g.data()[base + i * inner] * y.data()[base + i * inner];
        for (long i = 0; i < n; ++i) {
          long idx = base + i * inner;
          ga.vec()[static_cast<size_t>(idx)] = y.data()[idx] * (g.data()[idx] - dot);
        }
      }
    }
    t.accumulate(ai, ga);
  })};
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  Tensor out = istt::layer_norm(value(x), value(gain), value(bias), eps);
  bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
  if (!rg) return {push(std::move(out), false, nullptr)};
  int xi = x.id, gi = gain.id, bi = bias.id;
  return {push(std::move(out), true, [xi, gi, bi, eps](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Tensor& xv = t.nodes_[static_cast<size_t>(xi)].value;
    const Tensor& gv = t.nodes_[static_cast<size_t>(gi)].value;
    const int rows = xv.rows();
    const int n = xv.cols();
    Tensor gx({rows, n});
    Tensor ggain({n});
    Tensor gbias({n});
    std::vector<double> xhat(static_cast<size_t>(n));
    for (int i = 0; i < rows; ++i) {
      double mean = 0.0;
      for (int j = 0; j < n; ++j) mean += xv(i, j);
      mean /= n;
      double var = 0.0;
      for (int j = 0; j < n; ++j) {
        double d = xv(i, j) - mean;
        var += d * d;
      }
      var /= n;
      double inv = 1.0 / std::sqrt(var + eps);
      double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
      for (int j = 0; j < n; ++j) {
        xhat[static_cast<size_t>(j)] = (xv(i, j) - mean) * inv;
        double dxh = g(i, j) * gv(j);
        m1 += dxh;
        m2 += dxh * xhat[static_cast<size_t>(j)];
        ggain(j) += g(i, j) * xhat[static_cast<size_t>(j)];
        gbias(j) += g(i, j);
      }
      m1 /= n;
      m2 /= n;
      for (int j = 0; j < n; ++j) {
        double dxh = g(i, j) * gv(j);
        gx(i, j) = inv * (dxh - m1 - xhat[static_cast<size_t>(j)] * m2);
      }
    }
    if (t.nodes_[static_cast<size_t>(xi)].requires_grad) t.accumulate(xi, gx);
    if (t.nodes_[static_cast<size_t>(gi)].requires_grad) t.accumulate(gi, ggain);
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad) t.accumulate(bi, gbias);
  })};
}

Var Tape::embedding(Var table, std::vector<int> ids) {
  const Tensor& tab = value(table);
  if (tab.rank() != 2) throw ShapeError("embedding table must be a matrix");
  const int d = tab.cols();
  Tensor out({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= tab.rows())
      throw InputError("embedding id " + std::to_string(id) + " out of range [0," +
                       std::to_string(tab.rows()) + ")");
    for (int j = 0; j < d; ++j) out(static_cast<int>(i), j) = tab(id, j);
  }
  if (!requires_grad(table)) return {push(std::move(out), false, nullptr)};
  int ti = table.id;
  return {push(std::move(out), true, [ti, ids = std::move(ids)](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Tensor gt(t.nodes_[static_cast<size_t>(ti)].value.shape());
    const int d = gt.cols();
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j) gt(ids[i], j) += g(static_cast<int>(i), j);
    t.accumulate(ti, gt);
  })};
}

Var Tape::attention(Var q, Var k, Var v, AttnMask mask, int n_heads) {
  Tensor probs;
  Tensor out = istt::multi_head_attention(value(q), value(k), value(v), mask, n_heads, &probs);
  bool rg = requires_grad(q) || requires_grad(k) || requires_grad(v);
  if (!rg) return {push(std::move(out), false, nullptr)};
  int qi = q.id, ki = k.id, vi = v.id;
  return {push(std::move(out), true,
               [qi, ki, vi, n_heads, probs = std::move(probs)](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Tensor& qv = t.nodes_[static_cast<size_t>(qi)].value;
    const Tensor& kv = t.nodes_[static_cast<size_t>(ki)].value;
    const Tensor& vv = t.nodes_[static_cast<size_t>(vi)].value;
    const int d = qv.cols();
    const int dk = d / n_heads;
    const int mq = qv.rows();
    const int mk = kv.rows();
    const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
    Tensor gq({mq, d}), gk({mk, d}), gv({mk, d});
    std::vector<double> dp(static_cast<size_t>(mk)), ds(static_cast<size_t>(mk));
    for (int h = 0; h < n_heads; ++h) {
      const int off = h * dk;
      for (int i = 0; i < mq; ++i) {
        const double* grow = g.data() + static_cast<size_t>(i) * d + off;
        // dP = dO V^T, dV += P^T dO (head slice)
        for (int j = 0; j < mk; ++j) {
          double p = probs(h * mq + i, j);
          const double* vrow = vv.data() + static_cast<size_t>(j) * d + off;
          double s = 0.0;
          for (int c = 0; c < dk; ++c) s += grow[c] * vrow[c];
          dp[static_cast<size_t>(j)] = s;
          if (p != 0.0) {
            double* gvrow = gv.data() + static_cast<size_t>(j) * d + off;
            for (int c = 0; c < dk; ++c) gvrow[c] += p * grow[c];
          }
        }
        // softmax backward on the row (zero rows stay zero)
        double dot = 0.0;
        for (int j = 0; j < mk; ++j) dot += dp[static_cast<size_t>(j)] * probs(h * mq + i, j);
        for (int j = 0; j < mk; ++j)
          ds[static_cast<size_t>(j)] = probs(h * mq + i, j) * (dp[static_cast<size_t>(j)] - dot);
        // dQ += sc * dS K, dK += sc * dS^T Q (head slice)
        double* gqrow = gq.data() + static_cast<size_t>(i) * d + off;
        const double* qrow = qv.data() + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < mk; ++j) {
          double w = sc * ds[static_cast<size_t>(j)];
          if (w == 0.0) continue;
          const double* krow = kv.data() + static_cast<size_t>(j) * d + off;
          double* gkrow = gk.data() + static_cast<size_t>(j) * d + off;
          for (int c = 0; c < dk; ++c) {
            gqrow[c] += w * krow[c];
            gkrow[c] += w * qrow[c];
          }
        }
      }
    }
    if (t.nodes_[static_cast<size_t>(qi)].requires_grad) t.accumulate(qi, gq);
    if (t.nodes_[static_cast<size_t>(ki)].requires_grad) t.accumulate(ki, gk);
    if (t.nodes_[static_cast<size_t>(vi)].requires_grad) t.accumulate(vi, gv);
  })};
}

Var Tape::dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate == 0.0) return x;
  if (rate < 0.0 || rate >= 1.0) throw InputError("dropout rate must be in [0,1)");
  const Tensor& xv = value(x);
  std::vector<std::uint8_t> keep(static_cast<size_t>(xv.numel()));
  std::bernoulli_distribution dist(1.0 - rate);
  for (auto& b : keep) b = dist(rng) ? 1 : 0;
  const double inv = 1.0 / (1.0 - rate);
  Tensor out = xv;
  for (long i = 0; i < out.numel(); ++i)
    out.vec()[static_cast<size_t>(i)] = keep[static_cast<size_t>(i)] ? out.vec()[static_cast<size_t>(i)] * inv : 0.0;
  if (!requires_grad(x)) return {push(std::move(out), false, nullptr)};
  int xi = x.id;
  return {push(std::move(out), true, [xi, inv, keep = std::move(keep)](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Tensor gx = g;
    for (long i = 0; i < gx.numel(); ++i)
      gx.vec()[static_cast<size_t>(i)] = keep[static_cast<size_t>(i)] ? gx.vec()[static_cast<size_t>(i)] * inv : 0.0;
    t.accumulate(xi, gx);
  })};
}

Var Tape::cross_entropy_sum(Var logits, std::vector<int> targets,
                            std::vector<std::uint8_t> loss_mask) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 2) throw ShapeError("cross_entropy_sum expects [positions, vocab] logits");
  const int rows = lv.rows();
  const int vocab = lv.cols();
  if (static_cast<int>(targets.size()) != rows || static_cast<int>(loss_mask.size()) != rows)
    throw ShapeError("cross_entropy_sum targets/mask length does not match logits rows");
  Tensor probs = istt::softmax(lv, 1);
  double total = 0.0;
  for (int i = 0; i < rows; ++i) {
    if (!loss_mask[static_cast<size_t>(i)]) continue;
    int tgt = targets[static_cast<size_t>(i)];
    if (tgt < 0 || tgt >= vocab)
      throw InputError("cross-entropy target " + std::to_string(tgt) + " outside vocab of " +
                       std::to_string(vocab));
    total += -std::log(std::max(probs(i, tgt), 1e-300));
  }
  Tensor out = Tensor::scalar(total);
  check_finite(out, "cross_entropy_sum");
  if (!requires_grad(logits)) return {push(std::move(out), false, nullptr)};
  int li = logits.id;
  return {push(std::move(out), true,
               [li, targets = std::move(targets), loss_mask = std::move(loss_mask),
                probs = std::move(probs)](Tape& t, int self) {
    double g = t.nodes_[static_cast<size_t>(self)].grad.item();
    Tensor gl(probs.shape());
    for (int i = 0; i < probs.rows(); ++i) {
      if (!loss_mask[static_cast<size_t>(i)]) continue;
      for (int j = 0; j < probs.cols(); ++j) gl(i, j) = g * probs(i, j);
      gl(i, targets[static_cast<size_t>(i)]) -= g;
    }
    t.accumulate(li, gl);
  })};
}

}  // namespace istt
