#include "cimnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cimnet/kernels.hpp"
#include "cimnet/rng.hpp"

namespace cimnet {

template <typename T>
Var<T> Tape<T>::leaf(TensorT<T> value, bool requires_grad) {
  check_finite(value, "leaf");
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(TensorT<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn,
                       std::string_view op) {
  check_finite(value, op);
  bool tracked = false;
  for (const auto& in : inputs) {
    if (in.tape != this) throw Error(std::string(op) + ": operand belongs to another tape");
    tracked = tracked || nodes_[in.id].requires_grad;
  }
  if (backward_done_) throw Error(std::string(op) + ": tape already differentiated");
  nodes_.push_back(Node{std::move(value), {}, tracked, tracked ? std::move(fn) : BackwardFn{}});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const TensorT<T>& g) {
  Node& node = nodes_.at(id);
  if (!node.requires_grad) return;
  if (g.shape() != node.value.shape()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " != value shape " +
                         shape_str(node.value.shape()));
  }
  if (node.grad.empty()) {
    node.grad = g;
  } else {
    kernels::add_inplace(node.grad, g);
  }
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw Error("backward: loss belongs to another tape");
  if (backward_done_) throw Error("backward: tape already differentiated");
  const Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_str(root.value.shape()));
  }
  backward_done_ = true;
  if (!root.requires_grad) return;
  nodes_[loss.id].grad = TensorT<T>(root.value.shape(), T{1});
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.backward && !node.grad.empty()) {
      check_finite(node.grad, "backward");
      node.backward(*this, node.grad);
    }
  }
  for (auto& node : nodes_) {
    if (node.requires_grad && node.grad.empty()) node.grad = TensorT<T>(node.value.shape());
  }
}

template <typename T>
void Tape<T>::note_activation(const TensorT<T>& pre) {
  std::uint64_t h = signature_ ^ 0x51ed2701ULL;
  std::uint64_t word = 0;
  std::size_t bits = 0;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    word = (word << 1) | (pre[i] > T{0} ? 1u : 0u);
    if (++bits == 64) {
      h = mix64(h ^ word);
      word = 0;
      bits = 0;
    }
  }
  signature_ = mix64(h ^ word ^ (static_cast<std::uint64_t>(bits) << 58) ^ pre.size());
}

template class Tape<float>;
template class Tape<double>;

namespace ag {

namespace {

template <typename T>
Tape<T>& tape_of(Var<T> v) {
  if (v.tape == nullptr) throw Error("operation on a detached variable");
  return *v.tape;
}

}  // namespace

template <typename T>
Var<T> pad2d(Var<T> x, std::size_t p) {
  auto& tape = tape_of(x);
  return tape.record(kernels::pad2d(x.value(), p), {x},
                     [xid = x.id, p](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(xid, kernels::crop2d(g, p));
                     },
                     "pad2d");
}

template <typename T>
Var<T> unfold(Var<T> x, std::size_t k, std::size_t s) {
  auto& tape = tape_of(x);
  Shape in_shape = x.shape();
  return tape.record(kernels::unfold(x.value(), k, s), {x},
                     [xid = x.id, in_shape, k, s](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(xid, kernels::fold(g, in_shape, k, s));
                     },
                     "unfold");
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  return tape.record(kernels::matmul(a.value(), b.value()), {a, b},
                     [aid = a.id, bid = b.id](Tape<T>& t, const TensorT<T>& g) {
                       const auto& av = t.value(Var<T>{&t, aid});
                       const auto& bv = t.value(Var<T>{&t, bid});
                       if (t.requires_grad(Var<T>{&t, aid}))
                         t.accumulate(aid, kernels::matmul_nt(g, bv));
                       if (t.requires_grad(Var<T>{&t, bid}))
                         t.accumulate(bid, kernels::matmul_tn(av, g));
                     },
                     "matmul");
}

template <typename T>
Var<T> transpose(Var<T> a) {
  auto& tape = tape_of(a);
  return tape.record(kernels::transpose2d(a.value()), {a},
                     [aid = a.id](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(aid, kernels::transpose2d(g));
                     },
                     "transpose");
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  auto& tape = tape_of(a);
  Shape old_shape = a.shape();
  return tape.record(a.value().reshaped(std::move(shape)), {a},
                     [aid = a.id, old_shape](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(aid, g.reshaped(old_shape));
                     },
                     "reshape");
}

template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> bias) {
  auto& tape = tape_of(x);
  Shape bias_shape = bias.shape();
  return tape.record(kernels::add_row_bias(x.value(), bias.value()), {x, bias},
                     [xid = x.id, bid = bias.id, bias_shape](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(xid, g);
                       if (t.requires_grad(Var<T>{&t, bid}))
                         t.accumulate(bid, kernels::sum_rows(g).reshaped(bias_shape));
                     },
                     "add_row_bias");
}

template <typename T>
Var<T> relu(Var<T> x) {
  auto& tape = tape_of(x);
  tape.note_activation(x.value());
  return tape.record(kernels::relu(x.value()), {x},
                     [xid = x.id](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(xid, kernels::relu_backward(t.value(Var<T>{&t, xid}), g));
                     },
                     "relu");
}

template <typename T>
Var<T> pixel_shuffle(Var<T> x, std::size_t r) {
  auto& tape = tape_of(x);
  return tape.record(kernels::pixel_shuffle(x.value(), r), {x},
                     [xid = x.id, r](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(xid, kernels::pixel_unshuffle(g, r));
                     },
                     "pixel_shuffle");
}

template <typename T>
Var<T> assemble_blocks(Var<T> rows, std::size_t n, std::size_t gh, std::size_t gw,
                       std::size_t c, std::size_t b) {
  auto& tape = tape_of(rows);
  return tape.record(kernels::assemble_blocks(rows.value(), n, gh, gw, c, b), {rows},
                     [rid = rows.id, b](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(rid, kernels::disassemble_blocks(g, b));
                     },
                     "assemble_blocks");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  return tape.record(kernels::add(a.value(), b.value()), {a, b},
                     [aid = a.id, bid = b.id](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(aid, g);
                       t.accumulate(bid, g);
                     },
                     "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  return tape.record(kernels::sub(a.value(), b.value()), {a, b},
                     [aid = a.id, bid = b.id](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(aid, g);
                       if (t.requires_grad(Var<T>{&t, bid}))
                         t.accumulate(bid, kernels::scale(g, T{-1}));
                     },
                     "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  kernels::require_same_shape(a.value(), b.value(), "mul");
  TensorT<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape.record(std::move(out), {a, b},
                     [aid = a.id, bid = b.id](Tape<T>& t, const TensorT<T>& g) {
                       const auto& av = t.value(Var<T>{&t, aid});
                       const auto& bv = t.value(Var<T>{&t, bid});
                       TensorT<T> ga = g, gb = g;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         ga[i] *= bv[i];
                         gb[i] *= av[i];
                       }
                       t.accumulate(aid, ga);
                       t.accumulate(bid, gb);
                     },
                     "mul");
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  auto& tape = tape_of(a);
  return tape.record(kernels::scale(a.value(), factor), {a},
                     [aid = a.id, factor](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(aid, kernels::scale(g, factor));
                     },
                     "scale");
}

template <typename T>
Var<T> sum(Var<T> a) {
  auto& tape = tape_of(a);
  T total{0};
  for (auto v : a.value().data()) total += v;
  return tape.record(TensorT<T>::scalar(total), {a},
                     [aid = a.id](Tape<T>& t, const TensorT<T>& g) {
                       t.accumulate(aid, TensorT<T>(t.value(Var<T>{&t, aid}).shape(), g[0]));
                     },
                     "sum");
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  kernels::require_same_shape(a.value(), b.value(), "mse");
  const auto& av = a.value();
  const auto& bv = b.value();
  T total{0};
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    total += d * d;
  }
  const T inv_n = T{1} / static_cast<T>(av.size());
  return tape.record(TensorT<T>::scalar(total * inv_n), {a, b},
                     [aid = a.id, bid = b.id, inv_n](Tape<T>& t, const TensorT<T>& g) {
                       const auto& x = t.value(Var<T>{&t, aid});
                       const auto& y = t.value(Var<T>{&t, bid});
                       TensorT<T> ga(x.shape());
                       const T coef = T{2} * inv_n * g[0];
                       for (std::size_t i = 0; i < x.size(); ++i) ga[i] = coef * (x[i] - y[i]);
                       t.accumulate(aid, ga);
                       if (t.requires_grad(Var<T>{&t, bid}))
                         t.accumulate(bid, kernels::scale(ga, T{-1}));
                     },
                     "mse");
}

#define CIMNET_INSTANTIATE(T)                                                           \
  template Var<T> pad2d(Var<T>, std::size_t);                                           \
  template Var<T> unfold(Var<T>, std::size_t, std::size_t);                             \
  template Var<T> matmul(Var<T>, Var<T>);                                               \
  template Var<T> transpose(Var<T>);                                                    \
  template Var<T> reshape(Var<T>, Shape);                                               \
  template Var<T> add_row_bias(Var<T>, Var<T>);                                         \
  template Var<T> relu(Var<T>);                                                         \
  template Var<T> pixel_shuffle(Var<T>, std::size_t);                                   \
  template Var<T> assemble_blocks(Var<T>, std::size_t, std::size_t, std::size_t,        \
                                  std::size_t, std::size_t);                            \
  template Var<T> add(Var<T>, Var<T>);                                                  \
  template Var<T> sub(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                  \
  template Var<T> scale(Var<T>, T);                                                     \
  template Var<T> sum(Var<T>);                                                          \
  template Var<T> mse(Var<T>, Var<T>);

CIMNET_INSTANTIATE(float)
CIMNET_INSTANTIATE(double)

#undef CIMNET_INSTANTIATE

}  // namespace ag

namespace {

struct Eval {
  double value;
  std::uint64_t signature;
};

Eval evaluate_at(const ScalarFn& f, const TensorD& x) {
  Tape<double> tape;
  auto v = tape.leaf(x, false);
  auto out = f(v);
  if (out.value().size() != 1) throw DimensionError("grad_check: function must be scalar");
  return {out.value()[0], tape.activation_signature()};
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const TensorD& x, GradCheckOptions opts) {
  if (!(opts.eps > 0.0)) throw Error("grad_check: eps must be positive");
  Tape<double> tape;
  auto xv = tape.leaf(x, true);
  auto loss = f(xv);
  const std::uint64_t base_sig = tape.activation_signature();
  tape.backward(loss);
  const TensorD analytic = tape.grad(xv);

  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opts.max_coords != 0 && opts.max_coords < coords.size()) {
    Rng rng(opts.seed, "grad_check");
    for (std::size_t i = 0; i < opts.max_coords; ++i) {
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    }
    coords.resize(opts.max_coords);
  }

  GradCheckResult result;
  TensorD probe = x;
  for (auto i : coords) {
    const double orig = probe[i];
    probe[i] = orig + opts.eps;
    const Eval plus = evaluate_at(f, probe);
    probe[i] = orig - opts.eps;
    const Eval minus = evaluate_at(f, probe);
    probe[i] = orig;
    if (plus.signature != base_sig || minus.signature != base_sig) {
      ++result.skipped;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * opts.eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace cimnet
