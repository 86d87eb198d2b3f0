#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stf/errors.hpp"
#include "stf/tensor.hpp"

namespace stf::ad {

enum class OpKind { add, sub, mul, relu, tanh, scale, hadamard_mask };

enum class ReduceKind { sum, mean };

// Records primitive operations and replays them in reverse to accumulate
// gradients. A tape and the tensors flowing through it form a single-owner
// unit: build, forward-read, and backward on one thread at a time. Distinct
// units may run in parallel only if they share no tensors (clone parameters
// per thread first).
template <typename S>
class Tape {
 public:
  using T = BasicTensor<S>;
  using NodePtr = std::shared_ptr<TensorNode<S>>;

  // ---- elementwise family ----------------------------------------------

  T elementwise(OpKind kind, const T& a) {
    switch (kind) {
      case OpKind::relu:
        return relu(a);
      case OpKind::tanh:
        return tanh(a);
      default:
        throw ValueError("elementwise: op kind requires a second operand");
    }
  }

  T elementwise(OpKind kind, const T& a, const T& b) {
    switch (kind) {
      case OpKind::add:
        return add(a, b);
      case OpKind::sub:
        return sub(a, b);
      case OpKind::mul:
        return mul(a, b);
      case OpKind::scale:
        return scale(a, b);
      case OpKind::hadamard_mask:
        return hadamard_mask(a, b);
      case OpKind::relu:
      case OpKind::tanh:
        throw ValueError("elementwise: unary op kind given two operands");
      default:
        throw ValueError("elementwise: unknown op kind " +
                         std::to_string(static_cast<int>(kind)));
    }
  }

  T add(const T& a, const T& b) {
    return binary_broadcast(
        a, b, [](S x, S y) { return x + y; },
        /*da=*/[](S, S, S g) { return g; },
        /*db=*/[](S, S, S g) { return g; }, /*grad_to_b=*/true);
  }

  T sub(const T& a, const T& b) {
    return binary_broadcast(
        a, b, [](S x, S y) { return x - y; },
        [](S, S, S g) { return g; },
        [](S, S, S g) { return -g; }, true);
  }

  T mul(const T& a, const T& b) {
    return binary_broadcast(
        a, b, [](S x, S y) { return x * y; },
        [](S, S y, S g) { return g * y; },
        [](S x, S, S g) { return g * x; }, true);
  }

  // Same forward as mul, but the mask is treated as a constant: no gradient
  // ever flows into b.
  T hadamard_mask(const T& a, const T& b) {
    return binary_broadcast(
        a, b, [](S x, S y) { return x * y; },
        [](S, S y, S g) { return g * y; },
        [](S, S, S) { return S(0); }, false);
  }

  T scale(const T& a, const T& factor) {
    if (factor.size() != 1) {
      throw ShapeError("scale: factor must be a scalar, got shape " +
                       shape_str(factor.shape()));
    }
    const S c = factor.data()[0];
    T out = make_out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;
    finish_op(out, {a, factor}, [an = a.node(), fn = factor.node(), on = out.node(), c]() {
      const auto& g = on->adj;
      if (an->requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) an->adj[i] += g[i] * c;
      }
      if (fn->requires_grad) {
        S acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * an->value[i];
        fn->adj[0] += acc;
      }
    });
    return out;
  }

  T scale(const T& a, S factor) { return scale(a, T::scalar(factor)); }

  T relu(const T& a) {
    T out = make_out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] > S(0) ? av[i] : S(0);
    finish_op(out, {a}, [an = a.node(), on = out.node()]() {
      if (!an->requires_grad) return;
      const auto& g = on->adj;
      // Subgradient at 0 is 0.
      for (std::size_t i = 0; i < g.size(); ++i)
        an->adj[i] += an->value[i] > S(0) ? g[i] : S(0);
    });
    return out;
  }

  T tanh(const T& a) {
    T out = make_out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::tanh(av[i]);
    finish_op(out, {a}, [an = a.node(), on = out.node()]() {
      if (!an->requires_grad) return;
      const auto& g = on->adj;
      for (std::size_t i = 0; i < g.size(); ++i)
        an->adj[i] += g[i] * (S(1) - on->value[i] * on->value[i]);
    });
    return out;
  }

  T logistic(const T& a) {
    T out = make_out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const S x = av[i];
      if (x >= S(0)) {
        ov[i] = S(1) / (S(1) + std::exp(-x));
      } else {
        const S e = std::exp(x);
        ov[i] = e / (S(1) + e);
      }
    }
    finish_op(out, {a}, [an = a.node(), on = out.node()]() {
      if (!an->requires_grad) return;
      const auto& g = on->adj;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const S y = on->value[i];
        an->adj[i] += g[i] * y * (S(1) - y);
      }
    });
    return out;
  }

  // ---- linear algebra ----------------------------------------------------

  T matmul(const T& a, const T& b) {
    if (a.rank() != 2 || b.rank() != 2) {
      throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
      throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
    T out = T::zeros({m, n});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const S aik = av[static_cast<std::size_t>(i) * k + kk];
        const S* brow = bv.data() + static_cast<std::size_t>(kk) * n;
        S* orow = ov.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
    }
    adopt_out(out);
    finish_op(out, {a, b}, [an = a.node(), bn = b.node(), on = out.node(), m, k, n]() {
      const auto& g = on->adj;
      if (an->requires_grad) {
        // dA = g . B^T
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            S acc = 0;
            const S* grow = g.data() + static_cast<std::size_t>(i) * n;
            const S* brow = bn->value.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            an->adj[static_cast<std::size_t>(i) * k + kk] += acc;
          }
      }
      if (bn->requires_grad) {
        // dB = A^T . g
        for (int kk = 0; kk < k; ++kk)
          for (int i = 0; i < m; ++i) {
            const S aik = an->value[static_cast<std::size_t>(i) * k + kk];
            const S* grow = g.data() + static_cast<std::size_t>(i) * n;
            S* brow = bn->adj.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
          }
      }
    });
    return out;
  }

  T transpose(const T& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expects rank-2, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    T out = make_out({n, m});
    const auto& av = a.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ov[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    finish_op(out, {a}, [an = a.node(), on = out.node(), m, n]() {
      if (!an->requires_grad) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->adj[static_cast<std::size_t>(i) * n + j] +=
              on->adj[static_cast<std::size_t>(j) * m + i];
    });
    return out;
  }

  // y[o,t,n] = sum_c w[o,c] * x[c,t,n] -- applies a channel mixing matrix to
  // every (t,n) position of a rank-3 feature map.
  T channel_map(const T& w, const T& x) {
    if (w.rank() != 2 || x.rank() != 3) {
      throw ShapeError("channel_map: expects [O,C] and [C,T,N], got " + shape_str(w.shape()) +
                       " and " + shape_str(x.shape()));
    }
    const int o = w.dim(0), c = w.dim(1);
    if (c != x.dim(0)) {
      throw ShapeError("channel_map: channel mismatch, " + shape_str(w.shape()) + " vs " +
                       shape_str(x.shape()));
    }
    const int plane = x.dim(1) * x.dim(2);
    T out = T::zeros({o, x.dim(1), x.dim(2)});
    const auto& wv = w.data();
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int oo = 0; oo < o; ++oo) {
      for (int cc = 0; cc < c; ++cc) {
        const S wv_oc = wv[static_cast<std::size_t>(oo) * c + cc];
        const S* xrow = xv.data() + static_cast<std::size_t>(cc) * plane;
        S* orow = ov.data() + static_cast<std::size_t>(oo) * plane;
        for (int p = 0; p < plane; ++p) orow[p] += wv_oc * xrow[p];
      }
    }
    adopt_out(out);
    finish_op(out, {w, x}, [wn = w.node(), xn = x.node(), on = out.node(), o, c, plane]() {
      const auto& g = on->adj;
      if (wn->requires_grad) {
        for (int oo = 0; oo < o; ++oo)
          for (int cc = 0; cc < c; ++cc) {
            S acc = 0;
            const S* grow = g.data() + static_cast<std::size_t>(oo) * plane;
            const S* xrow = xn->value.data() + static_cast<std::size_t>(cc) * plane;
            for (int p = 0; p < plane; ++p) acc += grow[p] * xrow[p];
            wn->adj[static_cast<std::size_t>(oo) * c + cc] += acc;
          }
      }
      if (xn->requires_grad) {
        for (int cc = 0; cc < c; ++cc)
          for (int oo = 0; oo < o; ++oo) {
            const S wv_oc = wn->value[static_cast<std::size_t>(oo) * c + cc];
            const S* grow = g.data() + static_cast<std::size_t>(oo) * plane;
            S* xrow = xn->adj.data() + static_cast<std::size_t>(cc) * plane;
            for (int p = 0; p < plane; ++p) xrow[p] += wv_oc * grow[p];
          }
      }
    });
    return out;
  }

  // y[c,t,j] = sum_n x[c,t,n] * m[n,j] -- right-multiplies every frame by a
  // joint-mixing matrix.
  T joint_map(const T& x, const T& m) {
    if (x.rank() != 3 || m.rank() != 2) {
      throw ShapeError("joint_map: expects [C,T,N] and [N,M], got " + shape_str(x.shape()) +
                       " and " + shape_str(m.shape()));
    }
    const int n = x.dim(2);
    if (m.dim(0) != n) {
      throw ShapeError("joint_map: joint count mismatch, " + shape_str(x.shape()) + " vs " +
                       shape_str(m.shape()));
    }
    const int rows = x.dim(0) * x.dim(1);
    const int jm = m.dim(1);
    T out = T::zeros({x.dim(0), x.dim(1), jm});
    const auto& xv = x.data();
    const auto& mv = m.data();
    auto& ov = out.data();
    for (int r = 0; r < rows; ++r) {
      const S* xrow = xv.data() + static_cast<std::size_t>(r) * n;
      S* orow = ov.data() + static_cast<std::size_t>(r) * jm;
      for (int nn = 0; nn < n; ++nn) {
        const S xrn = xrow[nn];
        const S* mrow = mv.data() + static_cast<std::size_t>(nn) * jm;
        for (int j = 0; j < jm; ++j) orow[j] += xrn * mrow[j];
      }
    }
    adopt_out(out);
    finish_op(out, {x, m}, [xn = x.node(), mn = m.node(), on = out.node(), rows, n, jm]() {
      const auto& g = on->adj;
      if (xn->requires_grad) {
        for (int r = 0; r < rows; ++r) {
          const S* grow = g.data() + static_cast<std::size_t>(r) * jm;
          S* xrow = xn->adj.data() + static_cast<std::size_t>(r) * n;
          for (int nn = 0; nn < n; ++nn) {
            S acc = 0;
            const S* mrow = mn->value.data() + static_cast<std::size_t>(nn) * jm;
            for (int j = 0; j < jm; ++j) acc += grow[j] * mrow[j];
            xrow[nn] += acc;
          }
        }
      }
      if (mn->requires_grad) {
        for (int r = 0; r < rows; ++r) {
          const S* grow = g.data() + static_cast<std::size_t>(r) * jm;
          const S* xrow = xn->value.data() + static_cast<std::size_t>(r) * n;
          for (int nn = 0; nn < n; ++nn) {
            const S xrn = xrow[nn];
            S* mrow = mn->adj.data() + static_cast<std::size_t>(nn) * jm;
            for (int j = 0; j < jm; ++j) mrow[j] += xrn * grow[j];
          }
        }
      }
    });
    return out;
  }

  // Cross-correlation of a [C_in,T,N] map with a [C_out,C_in,k_t,k_n] kernel
  // over the (T,N) plane. Zero padding keeps the joint axis length and makes
  // T' = ceil(T / stride_t).
  T conv_tn(const T& x, const T& kernel, int stride_t = 1) {
    if (x.rank() != 3 || kernel.rank() != 4) {
      throw ShapeError("conv_tn: expects [C_in,T,N] input and [C_out,C_in,k_t,k_n] kernel, got " +
                       shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
    }
    const int ci = x.dim(0), t = x.dim(1), n = x.dim(2);
    const int co = kernel.dim(0), kt = kernel.dim(2), kn = kernel.dim(3);
    if (kernel.dim(1) != ci) {
      throw ShapeError("conv_tn: kernel input channels " + std::to_string(kernel.dim(1)) +
                       " do not match input channels " + std::to_string(ci));
    }
    if (kt % 2 == 0 || kn % 2 == 0) {
      throw ValueError("conv_tn: kernel extents must be odd, got k_t=" + std::to_string(kt) +
                       " k_n=" + std::to_string(kn));
    }
    if (stride_t < 1) throw ValueError("conv_tn: stride must be positive");
    const int pad_t = (kt - 1) / 2, pad_n = (kn - 1) / 2;
    if (kt > t + 2 * pad_t || kn > n + 2 * pad_n) {
      throw ShapeError("conv_tn: kernel larger than padded input");
    }
    const int to = (t + stride_t - 1) / stride_t;
    T out = T::zeros({co, to, n});
    const auto& xv = x.data();
    const auto& kv = kernel.data();
    auto& ov = out.data();
    for (int oc = 0; oc < co; ++oc) {
      for (int tp = 0; tp < to; ++tp) {
        for (int np = 0; np < n; ++np) {
          S acc = 0;
          for (int ic = 0; ic < ci; ++ic) {
            for (int dt = 0; dt < kt; ++dt) {
              const int ti = tp * stride_t + dt - pad_t;
              if (ti < 0 || ti >= t) continue;
              const S* xrow = xv.data() + (static_cast<std::size_t>(ic) * t + ti) * n;
              const S* krow =
                  kv.data() + ((static_cast<std::size_t>(oc) * ci + ic) * kt + dt) * kn;
              for (int dn = 0; dn < kn; ++dn) {
                const int ni = np + dn - pad_n;
                if (ni < 0 || ni >= n) continue;
                acc += xrow[ni] * krow[dn];
              }
            }
          }
          ov[(static_cast<std::size_t>(oc) * to + tp) * n + np] = acc;
        }
      }
    }
    adopt_out(out);
    finish_op(out, {x, kernel},
              [xn = x.node(), kn_ = kernel.node(), on = out.node(), ci, t, n, co, kt, kn, pad_t,
               pad_n, stride_t, to]() {
                const auto& g = on->adj;
                const bool gx = xn->requires_grad, gk = kn_->requires_grad;
                for (int oc = 0; oc < co; ++oc) {
                  for (int tp = 0; tp < to; ++tp) {
                    for (int np = 0; np < n; ++np) {
                      const S gv = g[(static_cast<std::size_t>(oc) * to + tp) * n + np];
                      if (gv == S(0)) continue;
                      for (int ic = 0; ic < ci; ++ic) {
                        for (int dt = 0; dt < kt; ++dt) {
                          const int ti = tp * stride_t + dt - pad_t;
                          if (ti < 0 || ti >= t) continue;
                          for (int dn = 0; dn < kn; ++dn) {
                            const int ni = np + dn - pad_n;
                            if (ni < 0 || ni >= n) continue;
                            const std::size_t xi =
                                (static_cast<std::size_t>(ic) * t + ti) * n + ni;
                            const std::size_t kidx =
                                ((static_cast<std::size_t>(oc) * ci + ic) * kt + dt) * kn + dn;
                            if (gx) xn->adj[xi] += gv * kn_->value[kidx];
                            if (gk) kn_->adj[kidx] += gv * xn->value[xi];
                          }
                        }
                      }
                    }
                  }
                }
              });
    return out;
  }

  // ---- reductions and normalizers ---------------------------------------

  T reduce(const T& x, std::vector<int> axes, ReduceKind kind) {
    const int rank = x.rank();
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (int a : axes) {
      if (a < 0 || a >= rank)
        throw ValueError("reduce: axis " + std::to_string(a) + " out of range for shape " +
                         shape_str(x.shape()));
    }
    if (axes.empty()) throw ValueError("reduce: empty axis set");
    std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
    std::size_t z = 1;
    for (int a : axes) {
      reduced[static_cast<std::size_t>(a)] = true;
      z *= static_cast<std::size_t>(x.dim(a));
    }
    if (z == 0) throw ValueError("reduce: reduction over a zero-size dimension");
    Shape out_shape;
    for (int a = 0; a < rank; ++a)
      if (!reduced[static_cast<std::size_t>(a)]) out_shape.push_back(x.dim(a));
    if (out_shape.empty()) out_shape = {1};

    // Flat-index map input -> output, reused by the backward rule.
    const auto& in_shape = x.shape();
    std::vector<std::size_t> out_stride_for_axis(static_cast<std::size_t>(rank), 0);
    {
      std::size_t stride = 1;
      for (int a = rank - 1; a >= 0; --a) {
        if (!reduced[static_cast<std::size_t>(a)]) {
          out_stride_for_axis[static_cast<std::size_t>(a)] = stride;
          stride *= static_cast<std::size_t>(in_shape[static_cast<std::size_t>(a)]);
        }
      }
    }
    auto out_index = [rank, &in_shape, &out_stride_for_axis](std::size_t flat) {
      std::size_t oi = 0;
      for (int a = rank - 1; a >= 0; --a) {
        const std::size_t d = static_cast<std::size_t>(in_shape[static_cast<std::size_t>(a)]);
        const std::size_t idx = flat % d;
        flat /= d;
        oi += idx * out_stride_for_axis[static_cast<std::size_t>(a)];
      }
      return oi;
    };

    T out = T::zeros(out_shape);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[out_index(i)] += xv[i];
    const S inv_z = kind == ReduceKind::mean ? S(1) / static_cast<S>(z) : S(1);
    if (kind == ReduceKind::mean) {
      for (auto& v : ov) v *= inv_z;
    }
    adopt_out(out);
    // Capture the index map by value pieces; rebuild it in the closure.
    finish_op(out, {x},
              [xn = x.node(), on = out.node(), in_shape, out_stride_for_axis, rank, inv_z]() {
                if (!xn->requires_grad) return;
                for (std::size_t i = 0; i < xn->adj.size(); ++i) {
                  std::size_t flat = i, oi = 0;
                  for (int a = rank - 1; a >= 0; --a) {
                    const std::size_t d =
                        static_cast<std::size_t>(in_shape[static_cast<std::size_t>(a)]);
                    oi += (flat % d) * out_stride_for_axis[static_cast<std::size_t>(a)];
                    flat /= d;
                  }
                  xn->adj[i] += on->adj[oi] * inv_z;
                }
              });
    return out;
  }

  T softmax(const T& x) {
    if (x.rank() != 2) throw ShapeError("softmax: expects rank-2 [batch, classes], got " +
                                        shape_str(x.shape()));
    const int b = x.dim(0), c = x.dim(1);
    T out = make_out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int i = 0; i < b; ++i) {
      const S* row = xv.data() + static_cast<std::size_t>(i) * c;
      S* orow = ov.data() + static_cast<std::size_t>(i) * c;
      S m = row[0];
      for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
      S denom = 0;
      for (int j = 0; j < c; ++j) {
        orow[j] = std::exp(row[j] - m);
        denom += orow[j];
      }
      for (int j = 0; j < c; ++j) orow[j] /= denom;
    }
    finish_op(out, {x}, [xn = x.node(), on = out.node(), b, c]() {
      if (!xn->requires_grad) return;
      for (int i = 0; i < b; ++i) {
        const S* p = on->value.data() + static_cast<std::size_t>(i) * c;
        const S* g = on->adj.data() + static_cast<std::size_t>(i) * c;
        S dot = 0;
        for (int j = 0; j < c; ++j) dot += g[j] * p[j];
        S* xa = xn->adj.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) xa[j] += p[j] * (g[j] - dot);
      }
    });
    return out;
  }

  // Mean negative log-probability of the target classes, computed in the
  // stabilized log-sum-exp form. The returned probabilities are a detached
  // byproduct; differentiate via the loss (or via softmax()).
  std::pair<T, T> softmax_xent(const T& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2)
      throw ShapeError("softmax_xent: expects rank-2 logits, got " + shape_str(logits.shape()));
    const int b = logits.dim(0), c = logits.dim(1);
    if (c < 2) throw ValueError("softmax_xent: needs at least 2 classes");
    if (static_cast<int>(targets.size()) != b)
      throw ShapeError("softmax_xent: got " + std::to_string(targets.size()) +
                       " targets for batch " + std::to_string(b));
    for (int t : targets) {
      if (t < 0 || t >= c)
        throw ValueError("softmax_xent: target class " + std::to_string(t) +
                         " out of range [0," + std::to_string(c) + ")");
    }
    T probs = T::zeros({b, c});
    const auto& xv = logits.data();
    auto& pv = probs.data();
    S loss_acc = 0;
    for (int i = 0; i < b; ++i) {
      const S* row = xv.data() + static_cast<std::size_t>(i) * c;
      S* prow = pv.data() + static_cast<std::size_t>(i) * c;
      S m = row[0];
      for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
      S denom = 0;
      for (int j = 0; j < c; ++j) {
        prow[j] = std::exp(row[j] - m);
        denom += prow[j];
      }
      for (int j = 0; j < c; ++j) prow[j] /= denom;
      loss_acc += -(row[targets[static_cast<std::size_t>(i)]] - m - std::log(denom));
    }
    T loss = T::scalar(loss_acc / static_cast<S>(b));
    adopt_out(loss);
    finish_op(loss, {logits},
              [xn = logits.node(), ln = loss.node(), pv_copy = pv, targets, b, c]() {
                if (!xn->requires_grad) return;
                const S g = ln->adj[0] / static_cast<S>(b);
                for (int i = 0; i < b; ++i) {
                  const S* prow = pv_copy.data() + static_cast<std::size_t>(i) * c;
                  S* xa = xn->adj.data() + static_cast<std::size_t>(i) * c;
                  const int t = targets[static_cast<std::size_t>(i)];
                  for (int j = 0; j < c; ++j) xa[j] += g * (prow[j] - (j == t ? S(1) : S(0)));
                }
              });
    return {loss, probs};
  }

  T pick(const T& x, std::size_t flat_index) {
    if (flat_index >= x.size())
      throw ValueError("pick: index " + std::to_string(flat_index) + " out of range for size " +
                       std::to_string(x.size()));
    T out = T::scalar(x.data()[flat_index]);
    adopt_out(out);
    finish_op(out, {x}, [xn = x.node(), on = out.node(), flat_index]() {
      if (!xn->requires_grad) return;
      xn->adj[flat_index] += on->adj[0];
    });
    return out;
  }

  // (x - min) / (max - min); a constant input maps to all zeros. The backward
  // rule treats the (first) argmin/argmax positions as the carriers of the
  // min/max subgradient.
  T minmax_normalize(const T& x) {
    const auto& xv = x.data();
    std::size_t imin = 0, imax = 0;
    for (std::size_t i = 1; i < xv.size(); ++i) {
      if (xv[i] < xv[imin]) imin = i;
      if (xv[i] > xv[imax]) imax = i;
    }
    const S lo = xv[imin], hi = xv[imax];
    const bool degenerate = !(hi > lo);
    T out = make_out(x.shape());
    auto& ov = out.data();
    if (degenerate) {
      std::fill(ov.begin(), ov.end(), S(0));
    } else {
      const S inv = S(1) / (hi - lo);
      for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = (xv[i] - lo) * inv;
    }
    finish_op(out, {x}, [xn = x.node(), on = out.node(), imin, imax, lo, hi, degenerate]() {
      if (!xn->requires_grad || degenerate) return;
      const S inv = S(1) / (hi - lo);
      const auto& g = on->adj;
      S sum_g = 0, dot_gy = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        sum_g += g[i];
        dot_gy += g[i] * on->value[i];
      }
      for (std::size_t i = 0; i < g.size(); ++i) xn->adj[i] += g[i] * inv;
      xn->adj[imin] += (dot_gy - sum_g) * inv;
      xn->adj[imax] -= dot_gy * inv;
    });
    return out;
  }

  T frobenius_norm(const T& x) {
    const auto& xv = x.data();
    S acc = 0;
    for (S v : xv) acc += v * v;
    const S norm = std::sqrt(acc);
    T out = T::scalar(norm);
    adopt_out(out);
    finish_op(out, {x}, [xn = x.node(), on = out.node(), norm]() {
      if (!xn->requires_grad || !(norm > S(0))) return;
      const S g = on->adj[0] / norm;
      for (std::size_t i = 0; i < xn->adj.size(); ++i) xn->adj[i] += g * xn->value[i];
    });
    return out;
  }

  // Endpoint-aligned linear resampling of a [T,N] map along the first axis.
  T interp_time(const T& x, int t_target) {
    if (x.rank() != 2)
      throw ShapeError("interp_time: expects rank-2 [T,N], got " + shape_str(x.shape()));
    if (t_target < 1) throw ValueError("interp_time: target length must be >= 1");
    const int t = x.dim(0), n = x.dim(1);
    std::vector<int> lo(static_cast<std::size_t>(t_target));
    std::vector<S> w(static_cast<std::size_t>(t_target));
    for (int i = 0; i < t_target; ++i) {
      if (t == 1 || t_target == 1) {
        lo[static_cast<std::size_t>(i)] = 0;
        w[static_cast<std::size_t>(i)] = 0;
      } else {
        const double p = static_cast<double>(i) * (t - 1) / (t_target - 1);
        int i0 = static_cast<int>(p);
        if (i0 > t - 2) i0 = t - 2;
        lo[static_cast<std::size_t>(i)] = i0;
        w[static_cast<std::size_t>(i)] = static_cast<S>(p - i0);
      }
    }
    T out = T::zeros({t_target, n});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int i = 0; i < t_target; ++i) {
      const int i0 = lo[static_cast<std::size_t>(i)];
      const int i1 = std::min(i0 + 1, t - 1);
      const S wi = w[static_cast<std::size_t>(i)];
      const S* r0 = xv.data() + static_cast<std::size_t>(i0) * n;
      const S* r1 = xv.data() + static_cast<std::size_t>(i1) * n;
      S* orow = ov.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] = (S(1) - wi) * r0[j] + wi * r1[j];
    }
    adopt_out(out);
    finish_op(out, {x}, [xn = x.node(), on = out.node(), lo, w, t, n, t_target]() {
      if (!xn->requires_grad) return;
      for (int i = 0; i < t_target; ++i) {
        const int i0 = lo[static_cast<std::size_t>(i)];
        const int i1 = std::min(i0 + 1, t - 1);
        const S wi = w[static_cast<std::size_t>(i)];
        const S* grow = on->adj.data() + static_cast<std::size_t>(i) * n;
        S* a0 = xn->adj.data() + static_cast<std::size_t>(i0) * n;
        S* a1 = xn->adj.data() + static_cast<std::size_t>(i1) * n;
        for (int j = 0; j < n; ++j) {
          a0[j] += (S(1) - wi) * grow[j];
          a1[j] += wi * grow[j];
        }
      }
    });
    return out;
  }

  T reshape(const T& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size()) {
      throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                       shape_str(new_shape));
    }
    T out = T::from(std::move(new_shape), x.data());
    adopt_out(out);
    finish_op(out, {x}, [xn = x.node(), on = out.node()]() {
      if (!xn->requires_grad) return;
      for (std::size_t i = 0; i < xn->adj.size(); ++i) xn->adj[i] += on->adj[i];
    });
    return out;
  }

  // ---- backward ------------------------------------------------------------

  // Accumulates d(root)/d(tensor) into .grad for every requires_grad tensor
  // reachable from root. Repeated calls keep accumulating; clear_grads()
  // resets.
  void backward(const T& root) {
    if (root.size() != 1)
      throw ShapeError("backward: root must be scalar, got shape " + shape_str(root.shape()));
    if (!seen_.count(root.node().get()))
      throw ValueError("backward: root tensor is not on this tape");
    for (auto& n : nodes_) {
      n->adj.assign(n->value.size(), S(0));
      n->reached = false;
    }
    root.node()->adj[0] = S(1);
    root.node()->reached = true;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      if (!it->out->reached) continue;
      it->pull();
      for (auto& in : it->ins) in->reached = true;
    }
    for (auto& n : nodes_) {
      if (!n->reached || !n->requires_grad) continue;
      if (n->grad.empty()) n->grad.assign(n->value.size(), S(0));
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->adj[i];
    }
  }

  // Clears the persistent .grad of every tensor this tape has touched.
  void clear_grads() {
    for (auto& n : nodes_) n->grad.clear();
  }

  std::size_t num_steps() const { return steps_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Step {
    NodePtr out;
    std::vector<NodePtr> ins;
    std::function<void()> pull;
  };

  void register_node(const NodePtr& n) {
    if (seen_.insert(n.get()).second) nodes_.push_back(n);
  }

  // Fresh output node registered on this tape; requires_grad set later by
  // finish_op.
  T make_out(Shape shape) {
    T out = T::zeros(std::move(shape));
    register_node(out.node());
    return out;
  }

  void adopt_out(T& out) { register_node(out.node()); }

  void finish_op(T& out, std::initializer_list<T> inputs, std::function<void()> pull) {
    bool rg = false;
    Step step;
    step.out = out.node();
    for (const T& in : inputs) {
      register_node(in.node());
      step.ins.push_back(in.node());
      rg = rg || in.requires_grad();
    }
    out.node()->requires_grad = rg;
    if (!rg) return;  // dead end for gradients; no need to replay
    step.pull = std::move(pull);
    steps_.push_back(std::move(step));
  }

  // Shared implementation for broadcasting binary elementwise ops. b may have
  // size-1 axes that stretch to a's extent; ranks must match.
  template <typename FwdFn, typename DaFn, typename DbFn>
  T binary_broadcast(const T& a, const T& b, FwdFn fwd, DaFn da, DbFn db, bool grad_to_b) {
    if (a.rank() != b.rank()) {
      throw ShapeError("elementwise: rank mismatch between " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    }
    const int rank = a.rank();
    bool same = true;
    for (int i = 0; i < rank; ++i) {
      if (b.dim(i) == a.dim(i)) continue;
      if (b.dim(i) == 1) {
        same = false;
        continue;
      }
      throw ShapeError("elementwise: shape " + shape_str(b.shape()) +
                       " does not broadcast to " + shape_str(a.shape()));
    }
    T out = make_out(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();

    if (same) {
      for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i], bv[i]);
      finish_op(out, {a, b}, [an = a.node(), bn = b.node(), on = out.node(), da, db,
                              grad_to_b]() {
        const auto& g = on->adj;
        if (an->requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i)
            an->adj[i] += da(an->value[i], bn->value[i], g[i]);
        if (grad_to_b && bn->requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i)
            bn->adj[i] += db(an->value[i], bn->value[i], g[i]);
      });
      return out;
    }

    // Strides of b against a's index space; stretched axes get stride 0.
    std::vector<std::size_t> bstride(static_cast<std::size_t>(rank), 0);
    {
      std::size_t stride = 1;
      for (int i = rank - 1; i >= 0; --i) {
        bstride[static_cast<std::size_t>(i)] = (b.dim(i) == 1) ? 0 : stride;
        stride *= static_cast<std::size_t>(b.dim(i));
      }
    }
    const Shape ashape = a.shape();
    auto b_index = [rank, &ashape, &bstride](std::size_t flat) {
      std::size_t bi = 0;
      for (int i = rank - 1; i >= 0; --i) {
        const std::size_t d = static_cast<std::size_t>(ashape[static_cast<std::size_t>(i)]);
        bi += (flat % d) * bstride[static_cast<std::size_t>(i)];
        flat /= d;
      }
      return bi;
    };
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i], bv[b_index(i)]);
    finish_op(out, {a, b},
              [an = a.node(), bn = b.node(), on = out.node(), da, db, grad_to_b, ashape, bstride,
               rank]() {
                const auto& g = on->adj;
                auto bidx = [&](std::size_t flat) {
                  std::size_t bi = 0;
                  for (int i = rank - 1; i >= 0; --i) {
                    const std::size_t d =
                        static_cast<std::size_t>(ashape[static_cast<std::size_t>(i)]);
                    bi += (flat % d) * bstride[static_cast<std::size_t>(i)];
                    flat /= d;
                  }
                  return bi;
                };
                if (an->requires_grad)
                  for (std::size_t i = 0; i < g.size(); ++i)
                    an->adj[i] += da(an->value[i], bn->value[bidx(i)], g[i]);
                if (grad_to_b && bn->requires_grad)
                  for (std::size_t i = 0; i < g.size(); ++i)
                    bn->adj[bidx(i)] += db(an->value[i], bn->value[bidx(i)], g[i]);
              });
    return out;
  }

  std::vector<Step> steps_;
  std::vector<NodePtr> nodes_;
  std::unordered_set<TensorNode<S>*> seen_;
};

}  // namespace stf::ad
