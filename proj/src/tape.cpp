#include "ordcast/tape.hpp"

#include <cmath>

#include "ordcast/error.hpp"
#include "ordcast/kernels.hpp"
#include "ordcast/raster.hpp"

namespace ordcast {

namespace {

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Tape::Id Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::Id Tape::push(std::vector<Id> inputs, std::function<Tensor(const Tape&)> fwd,
                    std::function<void(Tape&, Id)> bwd) {
  Node n;
  n.inputs = std::move(inputs);
  for (Id i : n.inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  n.forward = std::move(fwd);
  n.backward = std::move(bwd);
  n.value = n.forward(*this);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tensor& Tape::grad_slot(Id id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value)) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tape::Id Tape::conv2d(Id x, Id w, Id b) {
  return push(
      {x, w, b},
      [x, w, b](const Tape& t) {
        Tensor out;
        kernels::conv2d_forward(t.value(x), t.value(w), t.value(b), out);
        return out;
      },
      [x, w, b](Tape& t, Id self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor& gw = t.grad_slot(w);
        Tensor& gb = t.grad_slot(b);
        if (t.requires_grad(x)) {
          Tensor gx;
          kernels::conv2d_backward(t.value(x), t.value(w), g, &gx, gw, gb);
          Tensor& slot = t.grad_slot(x);
          for (std::size_t i = 0; i < gx.size(); ++i) slot[i] += gx[i];
        } else {
          kernels::conv2d_backward(t.value(x), t.value(w), g, nullptr, gw, gb);
        }
      });
}

Tape::Id Tape::silu(Id x) {
  return push(
      {x},
      [x](const Tape& t) {
        Tensor out = t.value(x);
        for (double& v : out.data()) v = v * logistic(v);
        return out;
      },
      [x](Tape& t, Id self) {
        const Tensor& in = t.value(x);
        const Tensor& g = t.nodes_[self].grad;
        Tensor& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < in.size(); ++i) {
          const double s = logistic(in[i]);
          gx[i] += g[i] * s * (1.0 + in[i] * (1.0 - s));
        }
      });
}

Tape::Id Tape::sigmoid(Id x) {
  return push(
      {x},
      [x](const Tape& t) {
        Tensor out = t.value(x);
        for (double& v : out.data()) v = logistic(v);
        return out;
      },
      [x](Tape& t, Id self) {
        const Tensor& y = t.nodes_[self].value;
        const Tensor& g = t.nodes_[self].grad;
        Tensor& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

Tape::Id Tape::add(Id a, Id b) {
  if (!value(a).same_shape(value(b))) throw DimensionError("tape add: shape mismatch");
  return push(
      {a, b},
      [a, b](const Tape& t) {
        Tensor out = t.value(a);
        const Tensor& o = t.value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += o[i];
        return out;
      },
      [a, b](Tape& t, Id self) {
        const Tensor g = t.nodes_[self].grad;
        for (Id in : {a, b}) {
          Tensor& s = t.grad_slot(in);
          for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
        }
      });
}

Tape::Id Tape::space_to_depth(Id x, std::size_t block) {
  return push(
      {x}, [x, block](const Tape& t) { return ordcast::space_to_depth(t.value(x), block); },
      [x, block](Tape& t, Id self) {
        const Tensor back = ordcast::depth_to_space(t.nodes_[self].grad, block);
        Tensor& s = t.grad_slot(x);
        for (std::size_t i = 0; i < back.size(); ++i) s[i] += back[i];
      });
}

Tape::Id Tape::depth_to_space(Id x, std::size_t block) {
  return push(
      {x}, [x, block](const Tape& t) { return ordcast::depth_to_space(t.value(x), block); },
      [x, block](Tape& t, Id self) {
        const Tensor back = ordcast::space_to_depth(t.nodes_[self].grad, block);
        Tensor& s = t.grad_slot(x);
        for (std::size_t i = 0; i < back.size(); ++i) s[i] += back[i];
      });
}

Tape::Id Tape::concat(const std::vector<Id>& parts) {
  if (parts.empty()) throw DimensionError("tape concat: no inputs");
  const auto& s0 = value(parts[0]).shape();
  for (Id p : parts) {
    const auto& s = value(p).shape();
    if (s.size() != s0.size() || !std::equal(s.begin() + 1, s.end(), s0.begin() + 1))
      throw DimensionError("tape concat: trailing dimensions differ");
  }
  return push(
      parts,
      [parts](const Tape& t) {
        auto shape = t.value(parts[0]).shape();
        shape[0] = 0;
        for (Id p : parts) shape[0] += t.value(p).dim(0);
        Tensor out(shape);
        std::size_t off = 0;
        for (Id p : parts) {
          const Tensor& v = t.value(p);
          std::copy(v.vec().begin(), v.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(off));
          off += v.size();
        }
        return out;
      },
      [parts](Tape& t, Id self) {
        const Tensor g = t.nodes_[self].grad;
        std::size_t off = 0;
        for (Id p : parts) {
          Tensor& s = t.grad_slot(p);
          for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[off + i];
          off += s.size();
        }
      });
}

Tape::Id Tape::reshape(Id x, std::vector<std::size_t> shape) {
  if (Tensor::count(shape) != value(x).size()) throw DimensionError("tape reshape: size mismatch");
  return push(
      {x}, [x, shape](const Tape& t) { return t.value(x).reshaped(shape); },
      [x](Tape& t, Id self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor& s = t.grad_slot(x);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
      });
}

Tape::Id Tape::loss(Id x, std::function<LossResult(const Tensor&, bool)> fn) {
  return push(
      {x}, [x, fn](const Tape& t) { return Tensor({1}, std::vector<double>{fn(t.value(x), false).value}); },
      [x, fn](Tape& t, Id self) {
        const double g = t.nodes_[self].grad[0];
        if (g == 0.0) return;
        const LossResult r = fn(t.value(x), true);
        Tensor& s = t.grad_slot(x);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += g * r.grad[i];
      });
}

void Tape::backward(Id root, double seed) {
  backward(root, Tensor(value(root).shape(), seed));
}

void Tape::backward(Id root, const Tensor& seed) {
  if (!seed.same_shape(value(root))) throw DimensionError("tape backward: seed shape mismatch");
  for (auto& n : nodes_) n.grad = Tensor(n.value.shape());
  nodes_[root].grad = seed;
  for (Id id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || !n.requires_grad) continue;
    n.backward(*this, id);
  }
}

void Tape::replay() {
  for (auto& n : nodes_)
    if (n.forward) n.value = n.forward(*this);
}

}  // namespace ordcast
