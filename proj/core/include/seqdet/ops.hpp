#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "seqdet/gemm.hpp"
#include "seqdet/parallel.hpp"
#include "seqdet/tensor.hpp"

namespace seqdet {

namespace detail {

// Per-thread scratch reused across convolution calls; pool workers persist,
// so these allocate once and then stay warm.
template <typename T>
TensorBuffer<T>& scratch(int slot) {
  thread_local std::array<TensorBuffer<T>, 2> bufs;
  return bufs[static_cast<size_t>(slot)];
}

// Fixed-lane reduction matching dot(); order depends only on length.
template <typename T>
inline T ksum(const T* a, std::int64_t n) {
  T lanes[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  std::int64_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (int l = 0; l < 8; ++l) lanes[l] += a[j + l];
  for (int l = 0; j < n; ++j, ++l) lanes[l] += a[j];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution geometry
// ---------------------------------------------------------------------------

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kh = 1, kw = 1;
  int kt = 1;  // 1 for 2D; 2 pairs consecutive frames
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  int pt = 0;
};

inline std::int64_t conv_out_dim(std::int64_t in, int k, int s, int p) {
  return (in + 2 * p - k) / s + 1;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename BwdF>
Tensor<T> binary_ew(const Tensor<T>& a, const Tensor<T>& b, FwdF fwd, BwdF bwd,
                    const char* name) {
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  attach_graph<T>(out, {a, b}, [na = a.node(), nb = b.node(), bwd](const TensorNode<T>& o) {
    const std::int64_t n = static_cast<std::int64_t>(o.value.size());
    T* ga = na->requires_grad ? na->grad_data() : nullptr;
    T* gb = nb->requires_grad ? nb->grad_data() : nullptr;
    for (std::int64_t i = 0; i < n; ++i) {
      T da, db;
      bwd(na->value[i], nb->value[i], o.grad[i], da, db);
      if (ga) ga[i] += da;
      if (gb) gb[i] += db;
    }
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew<T>(
      a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) { da = g; db = g; }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew<T>(
      a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) { da = g; db = -g; }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew<T>(
      a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; }, "mul");
}

template <typename T>
Tensor<T> div_ew(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew<T>(
      a, b, [](T x, T y) { return x / y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g / y;
        db = -g * x / (y * y);
      },
      "div");
}

template <typename T>
Tensor<T> min_ew(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew<T>(
      a, b, [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y, T g, T& da, T& db) {
        da = x <= y ? g : T(0);
        db = x <= y ? T(0) : g;
      },
      "min");
}

template <typename T>
Tensor<T> max_ew(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew<T>(
      a, b, [](T x, T y) { return x >= y ? x : y; },
      [](T x, T y, T g, T& da, T& db) {
        da = x >= y ? g : T(0);
        db = x >= y ? T(0) : g;
      },
      "max");
}

template <typename T, typename FwdF, typename BwdF>
Tensor<T> unary_ew(const Tensor<T>& a, FwdF fwd, BwdF bwd) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  attach_graph<T>(out, {a}, [na = a.node(), bwd](const TensorNode<T>& o) {
    T* ga = na->grad_data();
    const std::int64_t n = static_cast<std::int64_t>(o.value.size());
    for (std::int64_t i = 0; i < n; ++i) ga[i] += bwd(na->value[i], o.value[i], o.grad[i]);
  });
  return out;
}

// y = mul*x + add
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T mul, T add = T(0)) {
  return unary_ew<T>(
      a, [mul, add](T x) { return mul * x + add; },
      [mul](T, T, T g) { return g * mul; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return affine(a, T(1), s);
}
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return affine(a, s);
}

template <typename T>
Tensor<T> exp_ew(const Tensor<T>& a) {
  return unary_ew<T>(
      a, [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

template <typename T>
Tensor<T> log_ew(const Tensor<T>& a) {
  return unary_ew<T>(
      a, [](T x) { return std::log(x); }, [](T x, T, T g) { return g / x; });
}

template <typename T>
Tensor<T> sqrt_ew(const Tensor<T>& a) {
  return unary_ew<T>(
      a, [](T x) { return std::sqrt(x); },
      [](T, T y, T g) { return g / (T(2) * (y > T(1e-12) ? y : T(1e-12))); });
}

template <typename T>
Tensor<T> atan_ew(const Tensor<T>& a) {
  return unary_ew<T>(
      a, [](T x) { return std::atan(x); },
      [](T x, T, T g) { return g / (T(1) + x * x); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary_ew<T>(
      a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](T x, T, T g) { return (x >= lo && x <= hi) ? g : T(0); });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Act { kSigmoid, kTanh, kSilu, kLeakyRelu };

template <typename T>
inline T sigmoid_val(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
Tensor<T> activation(const Tensor<T>& a, Act kind, T slope = T(0.1)) {
  switch (kind) {
    case Act::kSigmoid:
      return unary_ew<T>(
          a, [](T x) { return sigmoid_val(x); },
          [](T, T y, T g) { return g * y * (T(1) - y); });
    case Act::kTanh:
      return unary_ew<T>(
          a, [](T x) { return std::tanh(x); },
          [](T, T y, T g) { return g * (T(1) - y * y); });
    case Act::kSilu:
      return unary_ew<T>(
          a, [](T x) { return x * sigmoid_val(x); },
          [](T x, T, T g) {
            const T s = sigmoid_val(x);
            return g * (s + x * s * (T(1) - s));
          });
    case Act::kLeakyRelu:
      return unary_ew<T>(
          a, [slope](T x) { return x >= T(0) ? x : slope * x; },
          [slope](T x, T, T g) { return x >= T(0) ? g : slope * g; });
  }
  throw std::invalid_argument("unknown activation kind");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return activation(a, Act::kSigmoid);
}
template <typename T>
Tensor<T> tanh_act(const Tensor<T>& a) {
  return activation(a, Act::kTanh);
}
template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return activation(a, Act::kSilu);
}

// Stable binary cross-entropy on logits; `target` carries no gradient.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& x, const Tensor<T>& target) {
  require(x.shape() == target.shape(), "bce_with_logits: shape mismatch");
  require(!target.requires_grad(), "bce_with_logits: target must not require grad");
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  const T* px = x.data();
  const T* pt = target.data();
  T* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T v = px[i];
    po[i] = (v > T(0) ? v : T(0)) - v * pt[i] + std::log1p(std::exp(-std::abs(v)));
  }
  attach_graph<T>(out, {x, target}, [nx = x.node(), nt = target.node()](const TensorNode<T>& o) {
    T* gx = nx->grad_data();
    const std::int64_t n = static_cast<std::int64_t>(o.value.size());
    for (std::int64_t i = 0; i < n; ++i)
      gx[i] += o.grad[i] * (sigmoid_val(nx->value[i]) - nt->value[i]);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros({1});
  out.data()[0] = detail::ksum(a.data(), a.numel());
  attach_graph<T>(out, {a}, [na = a.node()](const TensorNode<T>& o) {
    T* g = na->grad_data();
    const T go = o.grad[0];
    for (size_t i = 0; i < na->value.size(); ++i) g[i] += go;
  });
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  const T inv = T(1) / static_cast<T>(a.numel());
  return mul_scalar(sum_all(a), inv);
}

// ---------------------------------------------------------------------------
// Shape ops (all copying; gradients scatter back)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor<T> out = Tensor<T>::uninit(shape);
  std::memcpy(out.data(), a.data(), sizeof(T) * static_cast<size_t>(a.numel()));
  attach_graph<T>(out, {a}, [na = a.node()](const TensorNode<T>& o) {
    T* g = na->grad_data();
    for (size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& a, int dim, std::int64_t start, std::int64_t len) {
  const Shape& s = a.shape();
  require(dim >= 0 && dim < static_cast<int>(s.size()), "narrow: bad dim");
  require(start >= 0 && len > 0 && start + len <= s[dim], "narrow: range out of bounds");
  Shape os = s;
  os[dim] = len;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s[i];
  for (size_t i = dim + 1; i < s.size(); ++i) inner *= s[i];
  Tensor<T> out = Tensor<T>::uninit(os);
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t u = 0; u < outer; ++u)
    std::memcpy(po + u * len * inner, pa + (u * s[dim] + start) * inner,
                sizeof(T) * static_cast<size_t>(len * inner));
  attach_graph<T>(out, {a},
                  [na = a.node(), dim, start, len, outer, inner, full = s[dim]](
                      const TensorNode<T>& o) {
                    T* g = na->grad_data();
                    for (std::int64_t u = 0; u < outer; ++u) {
                      const T* src = o.grad.data() + u * len * inner;
                      T* dst = g + (u * full + start) * inner;
                      for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                    }
                  });
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int dim) {
  require(!parts.empty(), "concat: empty input list");
  const Shape& s0 = parts[0].shape();
  require(dim >= 0 && dim < static_cast<int>(s0.size()), "concat: bad dim");
  std::int64_t dim_total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.size() == s0.size(), "concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != dim)
        require(s[i] == s0[i], "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0) +
                                   " outside dim " + std::to_string(dim));
    dim_total += s[dim];
  }
  Shape os = s0;
  os[dim] = dim_total;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s0[i];
  for (size_t i = dim + 1; i < s0.size(); ++i) inner *= s0[i];
  Tensor<T> out = Tensor<T>::uninit(os);
  T* po = out.data();
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t len = p.shape()[dim];
    const T* pa = p.data();
    for (std::int64_t u = 0; u < outer; ++u)
      std::memcpy(po + (u * dim_total + offset) * inner, pa + u * len * inner,
                  sizeof(T) * static_cast<size_t>(len * inner));
    offset += len;
  }
  std::vector<std::shared_ptr<TensorNode<T>>> pnodes;
  std::vector<std::int64_t> lens;
  for (const auto& p : parts) {
    pnodes.push_back(p.node());
    lens.push_back(p.shape()[dim]);
  }
  attach_graph<T>(out, parts,
                  [pnodes, lens, outer, inner, dim_total](const TensorNode<T>& o) {
                    std::int64_t offset = 0;
                    for (size_t pi = 0; pi < pnodes.size(); ++pi) {
                      const std::int64_t len = lens[pi];
                      if (pnodes[pi]->requires_grad) {
                        T* g = pnodes[pi]->grad_data();
                        for (std::int64_t u = 0; u < outer; ++u) {
                          const T* src = o.grad.data() + (u * dim_total + offset) * inner;
                          T* dst = g + u * len * inner;
                          for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                        }
                      }
                      offset += len;
                    }
                  });
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat<T>({a, b}, 1);
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
  const Shape& s = a.shape();
  require(perm.size() == s.size(), "permute: rank mismatch");
  const int nd = static_cast<int>(s.size());
  Shape os(s.size());
  for (int i = 0; i < nd; ++i) os[i] = s[perm[i]];
  std::vector<std::int64_t> in_stride(nd, 1), out_stride(nd, 1);
  for (int i = nd - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * s[i + 1];
  for (int i = nd - 2; i >= 0; --i) out_stride[i] = out_stride[i + 1] * os[i + 1];
  // stride of output dim i in input space
  std::vector<std::int64_t> map_stride(nd);
  for (int i = 0; i < nd; ++i) map_stride[i] = in_stride[perm[i]];
  Tensor<T> out = Tensor<T>::uninit(os);
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t oi = 0; oi < n; ++oi) {
    std::int64_t rem = oi, ii = 0;
    for (int d = 0; d < nd; ++d) {
      const std::int64_t q = rem / out_stride[d];
      rem -= q * out_stride[d];
      ii += q * map_stride[d];
    }
    po[oi] = pa[ii];
  }
  attach_graph<T>(out, {a},
                  [na = a.node(), out_stride, map_stride, nd](const TensorNode<T>& o) {
                    T* g = na->grad_data();
                    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
                    for (std::int64_t oi = 0; oi < n; ++oi) {
                      std::int64_t rem = oi, ii = 0;
                      for (int d = 0; d < nd; ++d) {
                        const std::int64_t q = rem / out_stride[d];
                        rem -= q * out_stride[d];
                        ii += q * map_stride[d];
                      }
                      g[ii] += o.grad[oi];
                    }
                  });
  return out;
}

// rows from a 2-d tensor; duplicate indices accumulate on backward
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::int64_t>& rows) {
  require(a.shape().size() == 2, "gather_rows: expects a 2-d tensor");
  const std::int64_t R = a.dim(0), D = a.dim(1);
  for (auto r : rows) require(r >= 0 && r < R, "gather_rows: row index out of range");
  Tensor<T> out = Tensor<T>::uninit({static_cast<std::int64_t>(rows.size()), D});
  const T* pa = a.data();
  T* po = out.data();
  for (size_t i = 0; i < rows.size(); ++i)
    std::memcpy(po + static_cast<std::int64_t>(i) * D, pa + rows[i] * D,
                sizeof(T) * static_cast<size_t>(D));
  attach_graph<T>(out, {a}, [na = a.node(), rows, D](const TensorNode<T>& o) {
    T* g = na->grad_data();
    for (size_t i = 0; i < rows.size(); ++i) {
      const T* src = o.grad.data() + static_cast<std::int64_t>(i) * D;
      T* dst = g + rows[i] * D;
      for (std::int64_t j = 0; j < D; ++j) dst[j] += src[j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
  return a.detach();
}

// ---------------------------------------------------------------------------
// Spatial ops
// ---------------------------------------------------------------------------

// Nearest-neighbour 2x upsample of [N,C,H,W].
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& a) {
  require(a.shape().size() == 4, "upsample2x: expects [N,C,H,W]");
  const std::int64_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor<T> out = Tensor<T>::uninit({N, C, 2 * H, 2 * W});
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = pa + nc * H * W;
    T* dst = po + nc * 4 * H * W;
    for (std::int64_t y = 0; y < 2 * H; ++y)
      for (std::int64_t x = 0; x < 2 * W; ++x) dst[y * 2 * W + x] = src[(y / 2) * W + x / 2];
  }
  attach_graph<T>(out, {a}, [na = a.node(), N, C, H, W](const TensorNode<T>& o) {
    T* g = na->grad_data();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      const T* src = o.grad.data() + nc * 4 * H * W;
      T* dst = g + nc * H * W;
      for (std::int64_t y = 0; y < 2 * H; ++y)
        for (std::int64_t x = 0; x < 2 * W; ++x) dst[(y / 2) * W + x / 2] += src[y * 2 * W + x];
    }
  });
  return out;
}

// Max pooling over [N,C,H,W]; padded positions never win.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& a, int k, int s, int p) {
  require(a.shape().size() == 4, "maxpool2d: expects [N,C,H,W]");
  const std::int64_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const std::int64_t Ho = conv_out_dim(H, k, s, p);
  const std::int64_t Wo = conv_out_dim(W, k, s, p);
  require(Ho > 0 && Wo > 0, "maxpool2d: empty output for input " + shape_str(a.shape()));
  Tensor<T> out = Tensor<T>::uninit({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<size_t>(N * C * Ho * Wo));
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = pa + nc * H * W;
    T* dst = po + nc * Ho * Wo;
    std::int64_t* am = argmax->data() + nc * Ho * Wo;
    for (std::int64_t oy = 0; oy < Ho; ++oy)
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        T best = T(0);
        std::int64_t best_i = -1;
        for (int dy = 0; dy < k; ++dy) {
          const std::int64_t y = oy * s + dy - p;
          if (y < 0 || y >= H) continue;
          for (int dx = 0; dx < k; ++dx) {
            const std::int64_t x = ox * s + dx - p;
            if (x < 0 || x >= W) continue;
            const T v = src[y * W + x];
            if (best_i < 0 || v > best) {
              best = v;
              best_i = y * W + x;
            }
          }
        }
        require(best_i >= 0, "maxpool2d: window with no valid position");
        dst[oy * Wo + ox] = best;
        am[oy * Wo + ox] = best_i;
      }
  }
  attach_graph<T>(out, {a}, [na = a.node(), argmax, N, C, H, W, Ho, Wo](const TensorNode<T>& o) {
    T* g = na->grad_data();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      const T* gout = o.grad.data() + nc * Ho * Wo;
      const std::int64_t* am = argmax->data() + nc * Ho * Wo;
      T* gin = g + nc * H * W;
      for (std::int64_t i = 0; i < Ho * Wo; ++i) gin[am[i]] += gout[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation; no kernel flip)
// ---------------------------------------------------------------------------

namespace detail {

// Column layout: row index = ((c*kt + dt)*kh + dy)*kw + dx, so a kt=1 kernel
// produces exactly the 2-d layout and kt=1 conv3d matches conv2d bit for bit.
template <typename T>
void im2col(const T* src, std::int64_t C, std::int64_t Ti, std::int64_t H, std::int64_t W,
            const ConvSpec& sp, std::int64_t To, std::int64_t Ho, std::int64_t Wo, T* col) {
  const std::int64_t cols = To * Ho * Wo;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (int dt = 0; dt < sp.kt; ++dt)
      for (int dy = 0; dy < sp.kh; ++dy)
        for (int dx = 0; dx < sp.kw; ++dx, ++row) {
          T* dst = col + row * cols;
          std::int64_t j = 0;
          for (std::int64_t ot = 0; ot < To; ++ot) {
            const std::int64_t t = ot + dt - sp.pt;
            const bool t_ok = (t >= 0 && t < Ti);
            for (std::int64_t oy = 0; oy < Ho; ++oy) {
              const std::int64_t y = oy * sp.sh + dy - sp.ph;
              const bool y_ok = t_ok && y >= 0 && y < H;
              for (std::int64_t ox = 0; ox < Wo; ++ox, ++j) {
                const std::int64_t x = ox * sp.sw + dx - sp.pw;
                dst[j] = (y_ok && x >= 0 && x < W) ? src[((c * Ti + t) * H + y) * W + x] : T(0);
              }
            }
          }
        }
}

template <typename T>
void col2im_add(const T* col, std::int64_t C, std::int64_t Ti, std::int64_t H, std::int64_t W,
                const ConvSpec& sp, std::int64_t To, std::int64_t Ho, std::int64_t Wo, T* dst) {
  const std::int64_t cols = To * Ho * Wo;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (int dt = 0; dt < sp.kt; ++dt)
      for (int dy = 0; dy < sp.kh; ++dy)
        for (int dx = 0; dx < sp.kw; ++dx, ++row) {
          const T* src = col + row * cols;
          std::int64_t j = 0;
          for (std::int64_t ot = 0; ot < To; ++ot) {
            const std::int64_t t = ot + dt - sp.pt;
            const bool t_ok = (t >= 0 && t < Ti);
            for (std::int64_t oy = 0; oy < Ho; ++oy) {
              const std::int64_t y = oy * sp.sh + dy - sp.ph;
              const bool y_ok = t_ok && y >= 0 && y < H;
              for (std::int64_t ox = 0; ox < Wo; ++ox, ++j) {
                const std::int64_t x = ox * sp.sw + dx - sp.pw;
                if (y_ok && x >= 0 && x < W) dst[((c * Ti + t) * H + y) * W + x] += src[j];
              }
            }
          }
        }
}

// Shared implementation; conv2d is the Ti == To == kt == 1 case.
template <typename T>
Tensor<T> conv_impl(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                    const ConvSpec& sp, bool temporal) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  const char* name = temporal ? "conv3d" : "conv2d";
  require(is.size() == (temporal ? 5u : 4u),
          std::string(name) + ": bad input rank " + shape_str(is));
  require(ws.size() == (temporal ? 5u : 4u),
          std::string(name) + ": bad weight rank " + shape_str(ws));
  const std::int64_t N = is[0], C = is[1];
  const std::int64_t Ti = temporal ? is[2] : 1;
  const std::int64_t H = is[temporal ? 3 : 2], W = is[temporal ? 4 : 3];
  const std::int64_t O = ws[0];
  require(C == sp.in_channels && ws[1] == C,
          std::string(name) + ": channel mismatch, input " + shape_str(is) + " weight " +
              shape_str(ws) + " spec expects " + std::to_string(sp.in_channels));
  require(O == sp.out_channels, std::string(name) + ": weight out channels disagree with spec");
  require(ws[temporal ? 3 : 2] == sp.kh && ws[temporal ? 4 : 3] == sp.kw,
          std::string(name) + ": kernel size disagrees with spec");
  if (temporal)
    require(ws[2] == sp.kt && sp.kt >= 1 && sp.kt <= 3,
            "conv3d: temporal kernel must be 1, 2 or 3 and match the weights");
  if (bias.defined()) require(bias.numel() == O, std::string(name) + ": bias size mismatch");

  const std::int64_t To = temporal ? (Ti + 2 * sp.pt - sp.kt + 1) : 1;
  const std::int64_t Ho = conv_out_dim(H, sp.kh, sp.sh, sp.ph);
  const std::int64_t Wo = conv_out_dim(W, sp.kw, sp.sw, sp.pw);
  require(To > 0 && Ho > 0 && Wo > 0,
          std::string(name) + ": zero-sized output for input " + shape_str(is));

  const std::int64_t K = C * sp.kt * sp.kh * sp.kw;
  const std::int64_t cols = To * Ho * Wo;
  Shape os = temporal ? Shape{N, O, To, Ho, Wo} : Shape{N, O, Ho, Wo};
  Tensor<T> out = Tensor<T>::uninit(os);

  const T* wp = weight.data();
  const T* bp = bias.defined() ? bias.data() : nullptr;
  const T* ip = input.data();
  T* op = out.data();
  const std::int64_t in_stride = C * Ti * H * W;

  auto run_sample = [&](std::int64_t n, TensorBuffer<T>& col) {
    im2col(ip + n * in_stride, C, Ti, H, W, sp, To, Ho, Wo, col.data());
    gemm(wp, col.data(), op + n * O * cols, O, K, cols, false);
    if (bp) {
      T* dst = op + n * O * cols;
      for (std::int64_t o = 0; o < O; ++o)
        for (std::int64_t j = 0; j < cols; ++j) dst[o * cols + j] += bp[o];
    }
  };
  if (N > 1 && N >= num_threads()) {
    parallel_for(N, [&](std::int64_t b, std::int64_t e) {
      auto& col = detail::scratch<T>(0);
      col.resize(static_cast<size_t>(K * cols));
      for (std::int64_t n = b; n < e; ++n) run_sample(n, col);
    });
  } else {
    auto& col = detail::scratch<T>(0);
    col.resize(static_cast<size_t>(K * cols));
    for (std::int64_t n = 0; n < N; ++n) run_sample(n, col);
  }

  std::vector<Tensor<T>> parents = {input, weight};
  if (bias.defined()) parents.push_back(bias);
  attach_graph<T>(
      out, parents,
      [ni = input.node(), nw = weight.node(),
       nb = bias.defined() ? bias.node() : std::shared_ptr<TensorNode<T>>(), sp, N, C, Ti, H, W, O,
       To, Ho, Wo, K, cols, in_stride](const TensorNode<T>& o) {
        const T* gout = o.grad.data();
        // input gradient: parallel over samples (disjoint writes)
        if (ni->requires_grad) {
          T* gin = ni->grad_data();
          auto run = [&](std::int64_t n, TensorBuffer<T>& colg) {
            gemm_at_b(nw->value.data(), gout + n * O * cols, colg.data(), O, K, cols, false);
            col2im_add(colg.data(), C, Ti, H, W, sp, To, Ho, Wo, gin + n * in_stride);
          };
          if (N > 1 && N >= num_threads()) {
            parallel_for(N, [&](std::int64_t b, std::int64_t e) {
              auto& colg = detail::scratch<T>(0);
              colg.resize(static_cast<size_t>(K * cols));
              for (std::int64_t n = b; n < e; ++n) run(n, colg);
            });
          } else {
            auto& colg = detail::scratch<T>(0);
            colg.resize(static_cast<size_t>(K * cols));
            for (std::int64_t n = 0; n < N; ++n) run(n, colg);
          }
        }
        // weight gradient: samples accumulated in order
        if (nw->requires_grad) {
          T* gw = nw->grad_data();
          auto& col = detail::scratch<T>(1);
          col.resize(static_cast<size_t>(K * cols));
          for (std::int64_t n = 0; n < N; ++n) {
            im2col(ni->value.data() + n * in_stride, C, Ti, H, W, sp, To, Ho, Wo, col.data());
            gemm_abt(gout + n * O * cols, col.data(), gw, O, cols, K, true);
          }
        }
        if (nb && nb->requires_grad) {
          T* gb = nb->grad_data();
          for (std::int64_t o = 0; o < O; ++o) {
            T acc = T(0);
            for (std::int64_t n = 0; n < N; ++n) acc += ksum(gout + (n * O + o) * cols, cols);
            gb[o] += acc;
          }
        }
      });
  return out;
}

}  // namespace detail

// input [N,C,H,W], weight [O,C,kh,kw], bias [O] (optional, pass undefined)
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  ConvSpec sp = spec;
  sp.kt = 1;
  sp.pt = 0;
  return detail::conv_impl(input, weight, bias, sp, false);
}

// input [N,C,T,H,W], weight [O,C,kt,kh,kw]
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  return detail::conv_impl(input, weight, bias, spec, true);
}

// ---------------------------------------------------------------------------
// Batch normalisation over [N,C,H,W]
// ---------------------------------------------------------------------------

// Running buffers are plain tensors owned by the caller and are updated only
// when `training` is set; a frozen layer passes training = false.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                      bool training) {
  require(x.shape().size() == 4, "batchnorm2d: expects [N,C,H,W]");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(gamma.numel() == C && beta.numel() == C, "batchnorm2d: affine size mismatch");
  require(running_mean.numel() == C && running_var.numel() == C,
          "batchnorm2d: running stats size mismatch");
  const std::int64_t plane = H * W;
  const std::int64_t m = N * plane;

  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  const T* px = x.data();

  if (training) {
    T* rm = running_mean.data();
    T* rv = running_var.data();
    for (std::int64_t c = 0; c < C; ++c) {
      T s = T(0);
      for (std::int64_t n = 0; n < N; ++n)
        s += detail::ksum(px + (n * C + c) * plane, plane);
      const T mu = s / static_cast<T>(m);
      T v = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = px + (n * C + c) * plane;
        T lanes = T(0);
        for (std::int64_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          lanes += d * d;
        }
        v += lanes;
      }
      v /= static_cast<T>(m);
      (*mean)[c] = mu;
      (*invstd)[c] = T(1) / std::sqrt(v + eps);
      const T unbiased = m > 1 ? v * static_cast<T>(m) / static_cast<T>(m - 1) : v;
      rm[c] = (T(1) - momentum) * rm[c] + momentum * mu;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    const T* rm = running_mean.data();
    const T* rv = running_var.data();
    for (std::int64_t c = 0; c < C; ++c) {
      (*mean)[c] = rm[c];
      (*invstd)[c] = T(1) / std::sqrt(rv[c] + eps);
    }
  }

  Tensor<T> out = Tensor<T>::uninit(x.shape());
  T* po = out.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T mu = (*mean)[c], is = (*invstd)[c], g = pg[c], b = pb[c];
      const T* src = px + (n * C + c) * plane;
      T* dst = po + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * is * g + b;
    }

  attach_graph<T>(
      out, {x, gamma, beta},
      [nx = x.node(), ng = gamma.node(), nb = beta.node(), mean, invstd, N, C, plane, m,
       training](const TensorNode<T>& o) {
        const T* px = nx->value.data();
        const T* gy = o.grad.data();
        const T* pg = ng->value.data();
        for (std::int64_t c = 0; c < C; ++c) {
          const T mu = (*mean)[c], is = (*invstd)[c];
          T sum_gy = T(0), sum_gy_xhat = T(0);
          for (std::int64_t n = 0; n < N; ++n) {
            const T* gp = gy + (n * C + c) * plane;
            const T* xp = px + (n * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_gy += gp[i];
              sum_gy_xhat += gp[i] * (xp[i] - mu) * is;
            }
          }
          if (ng->requires_grad) ng->grad_data()[c] += sum_gy_xhat;
          if (nb->requires_grad) nb->grad_data()[c] += sum_gy;
          if (nx->requires_grad) {
            T* gx = nx->grad_data();
            const T k = pg[c] * is;
            if (training) {
              const T inv_m = T(1) / static_cast<T>(m);
              for (std::int64_t n = 0; n < N; ++n) {
                const T* gp = gy + (n * C + c) * plane;
                const T* xp = px + (n * C + c) * plane;
                T* dst = gx + (n * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                  const T xhat = (xp[i] - mu) * is;
                  dst[i] += k * (gp[i] - sum_gy * inv_m - xhat * sum_gy_xhat * inv_m);
                }
              }
            } else {
              for (std::int64_t n = 0; n < N; ++n) {
                const T* gp = gy + (n * C + c) * plane;
                T* dst = gx + (n * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) dst[i] += k * gp[i];
              }
            }
          }
        }
      });
  return out;
}

}  // namespace seqdet
