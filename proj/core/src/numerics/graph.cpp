// SPDX-License-Identifier: Apache-2.0
#include "bipete/numerics/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace bipete::num {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

enum BinaryOp { kAdd, kSub, kMul };
enum UnaryOp { kSigmoid, kTanh, kExp, kLog, kGelu };

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Precision precision_from_env() {
  const char* env = std::getenv("BIPETE_PRECISION");
  if (env == nullptr) return Precision::f32;
  const std::string_view v(env);
  if (v == "f32" || v.empty()) return Precision::f32;
  if (v == "f64") return Precision::f64;
  throw ConfigError("BIPETE_PRECISION must be f32 or f64, got '" + std::string(v) + "'");
}

std::string_view precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::push(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool rg = false;
  for (auto in : inputs) rg = rg || node(in).requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::custom(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward) {
  return push(std::move(value), inputs, std::move(backward));
}

template <typename T>
std::span<T> Graph<T>::grad_buffer(Var v) {
  auto& n = node(v);
  if (!n.requires_grad) throw ContractError("gradient requested for a node without requires_grad");
  if (n.grad.empty()) n.grad.assign(n.value.numel(), T(0));
  return {n.grad.data(), n.grad.size()};
}

template <typename T>
std::span<T> Graph<T>::write_buffer(Var v, bool& fresh) {
  auto& n = node(v);
  if (!n.requires_grad) throw ContractError("gradient requested for a node without requires_grad");
  fresh = n.grad.empty();
  if (fresh) n.grad.resize(n.value.numel());
  return {n.grad.data(), n.grad.size()};
}

template <typename T>
void Graph<T>::accumulate_grad(Var v, std::span<const T> g) {
  if (!node(v).requires_grad) return;
  bool fresh;
  auto buf = write_buffer(v, fresh);
  if (buf.size() != g.size()) throw ShapeError("gradient size mismatch");
  if (fresh) {
    std::copy(g.begin(), g.end(), buf.begin());
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }
}

template <typename T>
void Graph<T>::backward(Var root) {
  auto& r = node(root);
  if (r.value.numel() != 1) {
    throw ContractError("backward needs a scalar root, got " + shape_str(r.value.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!r.requires_grad) return;
  r.grad.assign(1, T(1));
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    // Callbacks only touch their inputs' grad vectors, never this one's.
    n.backward(*this, std::span<const T>(n.grad.data(), n.grad.size()));
  }
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
  const auto& n = node(v);
  if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape());
  return Tensor<T>(n.value.shape(), std::vector<T>(n.grad.begin(), n.grad.end()));
}

// ---------------------------------------------------------------------------

template <typename T>
Var Graph<T>::matmul(Var a, Var b, bool transpose_b) {
  const auto& sa = shape(a);
  const auto& sb = shape(b);
  if (sa.size() < 2) throw ShapeError("matmul lhs must have rank >= 2, got " + shape_str(sa));
  const std::size_t k = sa.back();

  if (sb.size() == 2) {
    const std::size_t bk = transpose_b ? sb[1] : sb[0];
    const std::size_t m = transpose_b ? sb[0] : sb[1];
    if (bk != k) throw ShapeError("matmul " + shape_str(sa) + " x " + shape_str(sb));
    const std::size_t rows = shape_numel(sa) / k;
    Shape out_shape = sa;
    out_shape.back() = m;
    std::vector<T> out(rows * m);
    MapC<T> A(value(a).data().data(), rows, k);
    MapM<T> C(out.data(), rows, m);
    if (transpose_b) {
      MapC<T> B(value(b).data().data(), m, k);
      C.noalias() = A * B.transpose();
    } else {
      MapC<T> B(value(b).data().data(), k, m);
      C.noalias() = A * B;
    }
    return push(Tensor<T>(out_shape, std::move(out)), {a, b},
                [a, b, rows, k, m, transpose_b](Graph& g, std::span<const T> dout) {
                  MapC<T> dC(dout.data(), rows, m);
                  bool fresh;
                  if (g.requires_grad(a)) {
                    MapM<T> dA(g.write_buffer(a, fresh).data(), rows, k);
                    if (transpose_b) {
                      MapC<T> B(g.value(b).data().data(), m, k);
                      if (fresh) dA.noalias() = dC * B; else dA.noalias() += dC * B;
                    } else {
                      MapC<T> B(g.value(b).data().data(), k, m);
                      if (fresh) dA.noalias() = dC * B.transpose(); else dA.noalias() += dC * B.transpose();
                    }
                  }
                  if (g.requires_grad(b)) {
                    MapC<T> A(g.value(a).data().data(), rows, k);
                    if (transpose_b) {
                      MapM<T> dB(g.write_buffer(b, fresh).data(), m, k);
                      if (fresh) dB.noalias() = dC.transpose() * A; else dB.noalias() += dC.transpose() * A;
                    } else {
                      MapM<T> dB(g.write_buffer(b, fresh).data(), k, m);
                      if (fresh) dB.noalias() = A.transpose() * dC; else dB.noalias() += A.transpose() * dC;
                    }
                  }
                });
  }

  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) {
    throw ShapeError("batched matmul needs [B,n,k] x [B,k,m], got " + shape_str(sa) + " x " +
                     shape_str(sb));
  }
  const std::size_t batch = sa[0];
  const std::size_t n = sa[1];
  const std::size_t bk = transpose_b ? sb[2] : sb[1];
  const std::size_t m = transpose_b ? sb[1] : sb[2];
  if (bk != k) throw ShapeError("matmul " + shape_str(sa) + " x " + shape_str(sb));
  std::vector<T> out(batch * n * m);
  const T* pa = value(a).data().data();
  const T* pb = value(b).data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    MapC<T> A(pa + i * n * k, n, k);
    MapM<T> C(out.data() + i * n * m, n, m);
    if (transpose_b) {
      C.noalias() = A * MapC<T>(pb + i * m * k, m, k).transpose();
    } else {
      C.noalias() = A * MapC<T>(pb + i * k * m, k, m);
    }
  }
  return push(
      Tensor<T>(Shape{batch, n, m}, std::move(out)), {a, b},
      [a, b, batch, n, k, m, transpose_b](Graph& g, std::span<const T> dout) {
        const T* pa = g.value(a).data().data();
        const T* pb = g.value(b).data().data();
        bool fresh_a = false, fresh_b = false;
        T* da = g.requires_grad(a) ? g.write_buffer(a, fresh_a).data() : nullptr;
        T* db = g.requires_grad(b) ? g.write_buffer(b, fresh_b).data() : nullptr;
        for (std::size_t i = 0; i < batch; ++i) {
          MapC<T> dC(dout.data() + i * n * m, n, m);
          if (da != nullptr) {
            MapM<T> dA(da + i * n * k, n, k);
            if (fresh_a) dA.setZero();
            if (transpose_b) {
              dA.noalias() += dC * MapC<T>(pb + i * m * k, m, k);
            } else {
              dA.noalias() += dC * MapC<T>(pb + i * k * m, k, m).transpose();
            }
          }
          if (db != nullptr) {
            MapC<T> A(pa + i * n * k, n, k);
            if (transpose_b) {
              MapM<T> dB(db + i * m * k, m, k);
              if (fresh_b) dB.setZero();
              dB.noalias() += dC.transpose() * A;
            } else {
              MapM<T> dB(db + i * k * m, k, m);
              if (fresh_b) dB.setZero();
              dB.noalias() += A.transpose() * dC;
            }
          }
        }
      });
}

template <typename T>
Var Graph<T>::elementwise_binary(Var a, Var b, int op) {
  const auto& sa = shape(a);
  const auto& sb = shape(b);
  if (!is_suffix(sa, sb)) {
    throw ShapeError("cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  }
  const auto& va = value(a).vec();
  const auto& vb = value(b).vec();
  const std::size_t nb = vb.size();
  const std::size_t outer = nb == 0 ? 0 : va.size() / nb;
  std::vector<T> out(va.size());
  for (std::size_t o = 0; o < outer; ++o) {
    const T* x = va.data() + o * nb;
    T* y = out.data() + o * nb;
    if (op == kAdd) {
      for (std::size_t j = 0; j < nb; ++j) y[j] = x[j] + vb[j];
    } else if (op == kSub) {
      for (std::size_t j = 0; j < nb; ++j) y[j] = x[j] - vb[j];
    } else {
      for (std::size_t j = 0; j < nb; ++j) y[j] = x[j] * vb[j];
    }
  }
  return push(Tensor<T>(sa, std::move(out)), {a, b},
              [a, b, op, nb, outer](Graph& g, std::span<const T> d) {
                if (g.requires_grad(a)) {
                  if (op == kMul) {
                    bool fresh;
                    auto da = g.write_buffer(a, fresh);
                    const auto& vb = g.value(b).vec();
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t j = 0; j < nb; ++j) {
                        const T v = d[o * nb + j] * vb[j];
                        da[o * nb + j] = fresh ? v : da[o * nb + j] + v;
                      }
                    }
                  } else {
                    g.accumulate_grad(a, d);
                  }
                }
                if (g.requires_grad(b)) {
                  auto db = g.grad_buffer(b);
                  if (op == kMul) {
                    const auto& va = g.value(a).vec();
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t j = 0; j < nb; ++j) db[j] += d[o * nb + j] * va[o * nb + j];
                    }
                  } else {
                    const T sign = op == kSub ? T(-1) : T(1);
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t j = 0; j < nb; ++j) db[j] += sign * d[o * nb + j];
                    }
                  }
                }
              });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  return elementwise_binary(a, b, kAdd);
}
template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  return elementwise_binary(a, b, kSub);
}
template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  return elementwise_binary(a, b, kMul);
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  const auto& va = value(a).vec();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * factor;
  return push(Tensor<T>(shape(a), std::move(out)), {a}, [a, factor](Graph& g, std::span<const T> d) {
    bool fresh;
    auto da = g.write_buffer(a, fresh);
    for (std::size_t i = 0; i < d.size(); ++i) da[i] = fresh ? d[i] * factor : da[i] + d[i] * factor;
  });
}

template <typename T>
Var Graph<T>::concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const Shape first = shape(parts[0]);
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (auto p : parts) {
    const auto& s = shape(p);
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat " + shape_str(first) + " with " + shape_str(s));
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& vp = value(parts[p]).vec();
    const std::size_t chunk = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(vp.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset));
    }
    offset += chunk;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(Tensor<T>(out_shape, std::move(out)), inputs,
              [inputs, extents, outer, inner, total](Graph& g, std::span<const T> d) {
                std::size_t offset = 0;
                for (std::size_t p = 0; p < inputs.size(); ++p) {
                  const std::size_t chunk = extents[p] * inner;
                  if (g.requires_grad(inputs[p])) {
                    auto dp = g.grad_buffer(inputs[p]);
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t j = 0; j < chunk; ++j) {
                        dp[o * chunk + j] += d[o * total * inner + offset + j];
                      }
                    }
                  }
                  offset += chunk;
                }
              });
}

template <typename T>
Var Graph<T>::slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape s = shape(a);
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of axis " +
                     std::to_string(axis) + " in " + shape_str(s));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  const auto& va = value(a).vec();
  std::vector<T> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(va.begin() + static_cast<std::ptrdiff_t>((o * s[axis] + begin) * inner), len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  }
  const std::size_t full = s[axis];
  return push(Tensor<T>(out_shape, std::move(out)), {a},
              [a, outer, inner, len, begin, full](Graph& g, std::span<const T> d) {
                auto da = g.grad_buffer(a);
                for (std::size_t o = 0; o < outer; ++o) {
                  for (std::size_t j = 0; j < len * inner; ++j) {
                    da[(o * full + begin) * inner + j] += d[o * len * inner + j];
                  }
                }
              });
}

template <typename T>
Var Graph<T>::transpose(Var a, std::vector<std::size_t> perm) {
  const Shape s = shape(a);
  const std::size_t rank = s.size();
  if (perm.size() != rank) throw ShapeError("permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // Source offset of each output element, walking the output in row-major order.
  const std::size_t n = shape_numel(s);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += src_strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= src_strides[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  const auto& va = value(a).vec();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = va[src[i]];
  return push(Tensor<T>(out_shape, std::move(out)), {a},
              [a, src = std::move(src)](Graph& g, std::span<const T> d) {
                bool fresh;
                auto da = g.write_buffer(a, fresh);
                if (fresh) {
                  for (std::size_t i = 0; i < d.size(); ++i) da[src[i]] = d[i];
                } else {
                  for (std::size_t i = 0; i < d.size(); ++i) da[src[i]] += d[i];
                }
              });
}

template <typename T>
Var Graph<T>::reshape(Var a, Shape new_shape) {
  auto out = value(a).reshaped(std::move(new_shape));
  return push(std::move(out), {a}, [a](Graph& g, std::span<const T> d) { g.accumulate_grad(a, d); });
}

template <typename T>
Var Graph<T>::softmax(Var a) {
  const auto& s = shape(a);
  if (s.empty()) throw ShapeError("softmax of a scalar");
  const std::size_t cols = s.back();
  const std::size_t rows = cols == 0 ? 0 : shape_numel(s) / cols;
  const auto& va = value(a).vec();
  std::vector<T> out(va.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = va.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = *std::max_element(x, x + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  const Var self{nodes_.size()};
  return push(Tensor<T>(s, std::move(out)), {a}, [a, self, rows, cols](Graph& g, std::span<const T> d) {
    const auto& y = g.value(self).vec();
    bool fresh;
    auto da = g.write_buffer(a, fresh);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += d[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const T v = y[r * cols + c] * (d[r * cols + c] - dot);
        da[r * cols + c] = fresh ? v : da[r * cols + c] + v;
      }
    }
  });
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const auto& s = shape(x);
  if (s.empty()) throw ShapeError("layer_norm of a scalar");
  const std::size_t cols = s.back();
  if (shape(gamma) != Shape{cols} || shape(beta) != Shape{cols}) {
    throw ShapeError("layer_norm affine params must be [" + std::to_string(cols) + "]");
  }
  const std::size_t rows = shape_numel(s) / cols;
  const auto& vx = value(x).vec();
  const auto& vg = value(gamma).vec();
  const auto& vb = value(beta).vec();
  std::vector<T> out(vx.size());
  std::vector<T> xhat(vx.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = vx.data() + r * cols;
    T mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (xr[c] - mu) * is;
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * vg[c] + vb[c];
    }
  }
  return push(Tensor<T>(s, std::move(out)), {x, gamma, beta},
              [x, gamma, beta, rows, cols, xhat = std::move(xhat),
               inv_std = std::move(inv_std)](Graph& g, std::span<const T> d) {
                const auto& vg = g.value(gamma).vec();
                if (g.requires_grad(gamma) || g.requires_grad(beta)) {
                  std::vector<T> dg(cols, 0), db(cols, 0);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      dg[c] += d[r * cols + c] * xhat[r * cols + c];
                      db[c] += d[r * cols + c];
                    }
                  }
                  g.accumulate_grad(gamma, dg);
                  g.accumulate_grad(beta, db);
                }
                if (g.requires_grad(x)) {
                  bool fresh;
                  auto dx = g.write_buffer(x, fresh);
                  const T n = static_cast<T>(cols);
                  for (std::size_t r = 0; r < rows; ++r) {
                    T sum_dy = 0, sum_dy_xhat = 0;
                    for (std::size_t c = 0; c < cols; ++c) {
                      const T dy = d[r * cols + c] * vg[c];
                      sum_dy += dy;
                      sum_dy_xhat += dy * xhat[r * cols + c];
                    }
                    for (std::size_t c = 0; c < cols; ++c) {
                      const T dy = d[r * cols + c] * vg[c];
                      const T v = inv_std[r] * (dy - sum_dy / n - xhat[r * cols + c] * sum_dy_xhat / n);
                      dx[r * cols + c] = fresh ? v : dx[r * cols + c] + v;
                    }
                  }
                }
              });
}

template <typename T>
Var Graph<T>::unary(Var a, int op) {
  const auto& va = value(a).vec();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    const T x = va[i];
    switch (op) {
      case kSigmoid: out[i] = stable_sigmoid(x); break;
      case kTanh: out[i] = std::tanh(x); break;
      case kExp: out[i] = std::exp(x); break;
      case kLog:
        if (!(x > T(0))) throw DomainError("log of non-positive value " + std::to_string(x));
        out[i] = std::log(x);
        break;
      default: out[i] = T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>)); break;
    }
  }
  const Var self{nodes_.size()};
  return push(Tensor<T>(shape(a), std::move(out)), {a}, [a, self, op](Graph& g, std::span<const T> d) {
    const auto& x = g.value(a).vec();
    const auto& y = g.value(self).vec();
    bool fresh;
    auto da = g.write_buffer(a, fresh);
    for (std::size_t i = 0; i < d.size(); ++i) {
      T local;
      switch (op) {
        case kSigmoid: local = y[i] * (T(1) - y[i]); break;
        case kTanh: local = T(1) - y[i] * y[i]; break;
        case kExp: local = y[i]; break;
        case kLog: local = T(1) / x[i]; break;
        default: {
          const T cdf = T(0.5) * (T(1) + std::erf(x[i] / std::numbers::sqrt2_v<T>));
          const T pdf = std::exp(T(-0.5) * x[i] * x[i]) * std::numbers::inv_sqrtpi_v<T> /
                        std::numbers::sqrt2_v<T>;
          local = cdf + x[i] * pdf;
        }
      }
      da[i] = fresh ? d[i] * local : da[i] + d[i] * local;
    }
  });
}

template <typename T>
Var Graph<T>::sigmoid(Var a) {
  return unary(a, kSigmoid);
}
template <typename T>
Var Graph<T>::tanh(Var a) {
  return unary(a, kTanh);
}
template <typename T>
Var Graph<T>::exp(Var a) {
  return unary(a, kExp);
}
template <typename T>
Var Graph<T>::log(Var a) {
  return unary(a, kLog);
}
template <typename T>
Var Graph<T>::gelu(Var a) {
  return unary(a, kGelu);
}

template <typename T>
Var Graph<T>::sum(Var a) {
  T total = 0;
  for (T v : value(a).vec()) total += v;
  return push(Tensor<T>::scalar(total), {a}, [a](Graph& g, std::span<const T> d) {
    auto da = g.grad_buffer(a);
    for (auto& v : da) v += d[0];
  });
}

template <typename T>
Var Graph<T>::mean(Var a) {
  const std::size_t n = value(a).numel();
  if (n == 0) throw DomainError("mean of an empty tensor");
  T total = 0;
  for (T v : value(a).vec()) total += v;
  const T inv = T(1) / static_cast<T>(n);
  return push(Tensor<T>::scalar(total * inv), {a}, [a, inv](Graph& g, std::span<const T> d) {
    auto da = g.grad_buffer(a);
    for (auto& v : da) v += d[0] * inv;
  });
}

template <typename T>
Var Graph<T>::embedding(Var table, std::span<const int> ids) {
  const auto& s = shape(table);
  if (s.size() != 2) throw ShapeError("embedding table must be [V, d], got " + shape_str(s));
  const std::size_t vocab = s[0];
  const std::size_t d = s[1];
  const auto& vt = value(table).vec();
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw RangeError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(vt.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return push(Tensor<T>(Shape{ids.size(), d}, std::move(out)), {table},
              [table, d, idv = std::move(idv)](Graph& g, std::span<const T> dout) {
                auto dt = g.grad_buffer(table);
                for (std::size_t i = 0; i < idv.size(); ++i) {
                  const auto row = static_cast<std::size_t>(idv[i]) * d;
                  for (std::size_t j = 0; j < d; ++j) dt[row + j] += dout[i * d + j];
                }
              });
}

template <typename T>
Var Graph<T>::masked_fill(Var a, std::span<const std::uint8_t> mask, T fill) {
  const auto& va = value(a).vec();
  if (mask.size() != va.size()) throw ShapeError("mask size does not match tensor");
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = mask[i] ? fill : va[i];
  std::vector<std::uint8_t> mv(mask.begin(), mask.end());
  return push(Tensor<T>(shape(a), std::move(out)), {a},
              [a, mv = std::move(mv)](Graph& g, std::span<const T> d) {
                bool fresh;
                auto da = g.write_buffer(a, fresh);
                for (std::size_t i = 0; i < d.size(); ++i) {
                  const T v = mv[i] ? T(0) : d[i];
                  da[i] = fresh ? v : da[i] + v;
                }
              });
}

template <typename T>
Var Graph<T>::gru_step(Var x_gates, Var h_prev, Var w_hh, Var b_hh, std::span<const T> row_mask) {
  const auto& sh = shape(h_prev);
  if (sh.size() != 2) throw ShapeError("gru hidden state must be [B, H], got " + shape_str(sh));
  const std::size_t batch = sh[0];
  const std::size_t hid = sh[1];
  if (shape(x_gates) != Shape{batch, 3 * hid}) {
    throw ShapeError("gru input gates " + shape_str(shape(x_gates)) + " vs hidden " + shape_str(sh));
  }
  if (shape(w_hh) != Shape{hid, 3 * hid} || shape(b_hh) != Shape{3 * hid}) {
    throw ShapeError("gru recurrent weights must be [H, 3H] and [3H]");
  }
  if (!row_mask.empty() && row_mask.size() != batch) throw ShapeError("gru row mask size");

  const auto& xg = value(x_gates).vec();
  const auto& h = value(h_prev).vec();
  std::vector<T> hg(batch * 3 * hid);
  {
    MapC<T> H(h.data(), batch, hid);
    MapC<T> W(value(w_hh).data().data(), hid, 3 * hid);
    MapM<T> HG(hg.data(), batch, 3 * hid);
    HG.noalias() = H * W;
  }
  const auto& bh = value(b_hh).vec();
  // Cached activations: r, z, n per element, plus h W_n + b_n.
  std::vector<T> cache(batch * hid * 4);
  std::vector<T> out(batch * hid);
  for (std::size_t b = 0; b < batch; ++b) {
    const T m = row_mask.empty() ? T(1) : row_mask[b];
    for (std::size_t j = 0; j < hid; ++j) {
      const std::size_t g3 = b * 3 * hid;
      const T hn = hg[g3 + 2 * hid + j] + bh[2 * hid + j];
      const T r = stable_sigmoid(xg[g3 + j] + hg[g3 + j] + bh[j]);
      const T z = stable_sigmoid(xg[g3 + hid + j] + hg[g3 + hid + j] + bh[hid + j]);
      const T n = std::tanh(xg[g3 + 2 * hid + j] + r * hn);
      const T hp = h[b * hid + j];
      const T hnew = (T(1) - z) * n + z * hp;
      out[b * hid + j] = m * hnew + (T(1) - m) * hp;
      T* c = cache.data() + (b * hid + j) * 4;
      c[0] = r;
      c[1] = z;
      c[2] = n;
      c[3] = hn;
    }
  }
  std::vector<T> mask(row_mask.begin(), row_mask.end());
  return push(
      Tensor<T>(sh, std::move(out)), {x_gates, h_prev, w_hh, b_hh},
      [x_gates, h_prev, w_hh, b_hh, batch, hid, cache = std::move(cache),
       mask = std::move(mask)](Graph& g, std::span<const T> d) {
        const auto& h = g.value(h_prev).vec();
        std::vector<T> dgates(batch * 3 * hid);  // d(pre-activation), shared by x and h paths
        std::vector<T> dhg(batch * 3 * hid);     // d(h W + b) per gate
        std::vector<T> dh_direct(batch * hid);
        for (std::size_t b = 0; b < batch; ++b) {
          const T m = mask.empty() ? T(1) : mask[b];
          for (std::size_t j = 0; j < hid; ++j) {
            const T* c = cache.data() + (b * hid + j) * 4;
            const T r = c[0], z = c[1], n = c[2], hn = c[3];
            const T dout = d[b * hid + j];
            const T dnew = m * dout;
            dh_direct[b * hid + j] = (T(1) - m) * dout + z * dnew;
            const T dn_pre = dnew * (T(1) - z) * (T(1) - n * n);
            const T dz_pre = dnew * (h[b * hid + j] - n) * z * (T(1) - z);
            const T dr_pre = dn_pre * hn * r * (T(1) - r);
            const std::size_t g3 = b * 3 * hid;
            dgates[g3 + j] = dr_pre;
            dgates[g3 + hid + j] = dz_pre;
            dgates[g3 + 2 * hid + j] = dn_pre;
            dhg[g3 + j] = dr_pre;
            dhg[g3 + hid + j] = dz_pre;
            dhg[g3 + 2 * hid + j] = dn_pre * r;
          }
        }
        g.accumulate_grad(x_gates, dgates);
        MapC<T> DHG(dhg.data(), batch, 3 * hid);
        if (g.requires_grad(b_hh)) {
          auto db = g.grad_buffer(b_hh);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t k = 0; k < 3 * hid; ++k) db[k] += dhg[b * 3 * hid + k];
          }
        }
        if (g.requires_grad(w_hh)) {
          MapC<T> H(h.data(), batch, hid);
          MapM<T> DW(g.grad_buffer(w_hh).data(), hid, 3 * hid);
          DW.noalias() += H.transpose() * DHG;
        }
        if (g.requires_grad(h_prev)) {
          MapC<T> W(g.value(w_hh).data().data(), hid, 3 * hid);
          MapM<T> DH(g.grad_buffer(h_prev).data(), batch, hid);
          DH.noalias() += DHG * W.transpose();
          for (std::size_t i = 0; i < dh_direct.size(); ++i) DH.data()[i] += dh_direct[i];
        }
      });
}

template <typename T>
Var Graph<T>::bce_with_logits(Var logits, std::span<const T> labels) {
  const auto& z = value(logits).vec();
  if (z.size() != labels.size() || z.empty()) throw ShapeError("bce logits/labels size mismatch");
  const T n = static_cast<T>(z.size());
  T total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const T x = z[i];
    total += std::max(x, T(0)) - x * labels[i] + std::log1p(std::exp(-std::abs(x)));
  }
  std::vector<T> lab(labels.begin(), labels.end());
  return push(Tensor<T>::scalar(total / n), {logits},
              [logits, n, lab = std::move(lab)](Graph& g, std::span<const T> d) {
                const auto& z = g.value(logits).vec();
                auto dz = g.grad_buffer(logits);
                for (std::size_t i = 0; i < z.size(); ++i) {
                  dz[i] += d[0] * (stable_sigmoid(z[i]) - lab[i]) / n;
                }
              });
}

template class Graph<float>;
template class Graph<double>;

}  // namespace bipete::num
