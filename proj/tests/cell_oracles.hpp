#pragma once

// Sequential per-timestep references for the recurrent cells, built on the
// nested-loop convolutions from oracles.hpp. No code is shared with the
// library's batched/temporal-convolution path.

#include "oracles.hpp"
#include "seqdet/cells.hpp"

namespace oracles {

template <typename T>
seqdet::Tensor<T> frame_of(const seqdet::Tensor<T>& x_seq, std::int64_t t) {
  const auto& s = x_seq.shape();  // [B,T,C,H,W]
  const std::int64_t B = s[0], Tn = s[1], C = s[2], H = s[3], W = s[4];
  auto out = seqdet::Tensor<T>::zeros({B, C, H, W});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < C * H * W; ++i)
      out.at(b * C * H * W + i) = x_seq.at((b * Tn + t) * C * H * W + i);
  return out;
}

template <typename T>
seqdet::Tensor<T> pair_frames(const seqdet::Tensor<T>& a, const seqdet::Tensor<T>& b) {
  const auto& s = a.shape();  // [B,C,H,W]
  const std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  auto out = seqdet::Tensor<T>::zeros({B, C, 2, H, W});
  for (std::int64_t bb = 0; bb < B; ++bb)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < H * W; ++i) {
        out.at((((bb * C + c) * 2) + 0) * H * W + i) = a.at((bb * C + c) * H * W + i);
        out.at((((bb * C + c) * 2) + 1) * H * W + i) = b.at((bb * C + c) * H * W + i);
      }
  return out;
}

// h_t = f_t . h_{t-1} + (1 - f_t) . z_t applied step by step.
template <typename T>
std::vector<seqdet::Tensor<T>> qrnn_loops(const seqdet::QrnnCell<T>& cell,
                                          const seqdet::Tensor<T>& x_seq) {
  const std::int64_t Tn = x_seq.dim(1);
  const int k = cell.ksize;
  seqdet::ConvSpec sp2{.in_channels = cell.channels, .out_channels = cell.channels,
                       .kh = k, .kw = k, .kt = 1, .sh = 1, .sw = 1,
                       .ph = k / 2, .pw = k / 2, .pt = 0};
  seqdet::ConvSpec sp3 = sp2;
  sp3.kt = 2;

  std::vector<seqdet::Tensor<T>> hs;
  auto x1 = frame_of(x_seq, 0);
  auto h = conv2d_loops(x1, cell.w_h0, cell.b_h0, sp2);
  for (std::int64_t i = 0; i < h.numel(); ++i) h.at(i) = std::tanh(h.at(i));
  hs.push_back(h);

  for (std::int64_t t = 1; t < Tn; ++t) {
    auto window = pair_frames(frame_of(x_seq, t - 1), frame_of(x_seq, t));
    auto z = conv3d_loops(window, cell.w_z, cell.b_z, sp3);
    auto f = conv3d_loops(window, cell.w_f, cell.b_f, sp3);
    auto h_next = seqdet::Tensor<T>::zeros(h.shape());
    for (std::int64_t i = 0; i < h.numel(); ++i) {
      const T zt = std::tanh(z.at(i));
      const T ft = T(1) / (T(1) + std::exp(-f.at(i)));
      h_next.at(i) = ft * h.at(i) + (T(1) - ft) * zt;
    }
    h = h_next;
    hs.push_back(h);
  }
  return hs;
}

template <typename T>
std::vector<seqdet::Tensor<T>> convlstm_loops(const seqdet::ConvLstmCell<T>& cell,
                                              const seqdet::Tensor<T>& x_seq) {
  const auto& s = x_seq.shape();
  const std::int64_t B = s[0], Tn = s[1], C = s[2], H = s[3], W = s[4];
  const int k = cell.ksize;
  seqdet::ConvSpec sp{.in_channels = 2 * cell.channels, .out_channels = cell.channels,
                      .kh = k, .kw = k, .kt = 1, .sh = 1, .sw = 1,
                      .ph = k / 2, .pw = k / 2, .pt = 0};

  auto h = seqdet::Tensor<T>::zeros({B, C, H, W});
  auto mem = seqdet::Tensor<T>::zeros({B, C, H, W});
  std::vector<seqdet::Tensor<T>> hs;
  for (std::int64_t t = 0; t < Tn; ++t) {
    auto x_t = frame_of(x_seq, t);
    auto cat = seqdet::Tensor<T>::zeros({B, 2 * C, H, W});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < C * H * W; ++i) {
        cat.at((b * 2 * C) * H * W + i) = x_t.at(b * C * H * W + i);
        cat.at((b * 2 * C + C) * H * W + i) = h.at(b * C * H * W + i);
      }
    auto gi = conv2d_loops(cat, cell.w_i, cell.b_i, sp);
    auto gf = conv2d_loops(cat, cell.w_f, cell.b_f, sp);
    auto go = conv2d_loops(cat, cell.w_o, cell.b_o, sp);
    auto gc = conv2d_loops(cat, cell.w_c, cell.b_c, sp);
    auto h_next = seqdet::Tensor<T>::zeros(h.shape());
    for (std::int64_t i = 0; i < h.numel(); ++i) {
      const T it = T(1) / (T(1) + std::exp(-gi.at(i)));
      const T ft = T(1) / (T(1) + std::exp(-gf.at(i)));
      const T ot = T(1) / (T(1) + std::exp(-go.at(i)));
      const T ct = cell.tanh_candidate ? std::tanh(gc.at(i))
                                       : T(1) / (T(1) + std::exp(-gc.at(i)));
      mem.at(i) = ft * mem.at(i) + it * ct;
      h_next.at(i) = ot * std::tanh(mem.at(i));
    }
    h = h_next;
    hs.push_back(h);
  }
  return hs;
}

}  // namespace oracles
