#pragma once

#include <utility>

#include "seqdet/ops.hpp"
#include "seqdet/rng.hpp"
#include "seqdet/tensor.hpp"

namespace seqdet {

enum class TemporalKind { kNone, kQrnn, kConvLstm };

inline const char* temporal_kind_name(TemporalKind k) {
  switch (k) {
    case TemporalKind::kNone:
      return "none";
    case TemporalKind::kQrnn:
      return "qrnn";
    case TemporalKind::kConvLstm:
      return "convlstm";
  }
  return "?";
}

// Recurrent state threaded between streaming calls. A QRNN state carries the
// previous frame's features so the next call can keep using the two-frame
// convolution across the boundary; ConvLSTM carries hidden + memory maps.
template <typename T>
struct TemporalState {
  TemporalKind kind = TemporalKind::kNone;
  Tensor<T> h;
  Tensor<T> s;        // ConvLSTM memory
  Tensor<T> carried;  // QRNN: features of the last seen frame

  bool fresh() const { return !h.defined(); }
};

template <typename T>
TemporalState<T> reset_state(const TemporalState<T>& st) {
  TemporalState<T> out;
  out.kind = st.kind;
  return out;
}

// ---------------------------------------------------------------------------
// QRNN cell: gates from a two-frame 3D convolution computed in parallel
// across time, followed by the elementwise F-pool recurrence
//   h_t = f_t (.) h_{t-1} + (1 - f_t) (.) z_t
// The first hidden state of a fresh stream comes from a 2D convolution.
// ---------------------------------------------------------------------------

template <typename T>
struct QrnnCell {
  int channels = 0;
  int ksize = 3;
  Tensor<T> w_h0, b_h0;  // 2D conv, C -> C
  Tensor<T> w_z, b_z;    // 3D conv, kt = 2
  Tensor<T> w_f, b_f;

  static QrnnCell init(int channels, Rng& rng, int ksize = 3) {
    QrnnCell c;
    c.channels = channels;
    c.ksize = ksize;
    const std::int64_t C = channels;
    const T std2 = static_cast<T>(std::sqrt(2.0 / (double(C) * ksize * ksize)));
    const T std3 = static_cast<T>(std::sqrt(2.0 / (double(C) * 2 * ksize * ksize)));
    c.w_h0 = Tensor<T>::randn({C, C, ksize, ksize}, rng, std2, true);
    c.b_h0 = Tensor<T>::zeros({C}, true);
    c.w_z = Tensor<T>::randn({C, C, 2, ksize, ksize}, rng, std3, true);
    c.b_z = Tensor<T>::zeros({C}, true);
    c.w_f = Tensor<T>::randn({C, C, 2, ksize, ksize}, rng, std3, true);
    c.b_f = Tensor<T>::zeros({C}, true);
    return c;
  }

  static QrnnCell zeros(int channels, int ksize = 3) {
    QrnnCell c;
    c.channels = channels;
    c.ksize = ksize;
    const std::int64_t C = channels;
    c.w_h0 = Tensor<T>::zeros({C, C, ksize, ksize}, true);
    c.b_h0 = Tensor<T>::zeros({C}, true);
    c.w_z = Tensor<T>::zeros({C, C, 2, ksize, ksize}, true);
    c.b_z = Tensor<T>::zeros({C}, true);
    c.w_f = Tensor<T>::zeros({C, C, 2, ksize, ksize}, true);
    c.b_f = Tensor<T>::zeros({C}, true);
    return c;
  }

  // Near-identity warm start: the candidate gate reads `scale * x_t` through
  // tanh and the forget gate is saturated low, so h_t tracks z_t.
  static QrnnCell passthrough(int channels, T scale, int ksize = 3) {
    QrnnCell c = zeros(channels, ksize);
    const int mid = ksize / 2;
    for (int ch = 0; ch < channels; ++ch) {
      c.w_h0.at(((static_cast<std::int64_t>(ch) * channels + ch) * ksize + mid) * ksize + mid) =
          scale;
      // current frame is the second temporal tap
      c.w_z.at((((static_cast<std::int64_t>(ch) * channels + ch) * 2 + 1) * ksize + mid) * ksize +
               mid) = scale;
    }
    for (int ch = 0; ch < channels; ++ch) c.b_f.at(ch) = T(-20);
    return c;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    return {{"w_h0", w_h0}, {"b_h0", b_h0}, {"w_z", w_z},
            {"b_z", b_z},   {"w_f", w_f},   {"b_f", b_f}};
  }
};

// x_seq is [B,T,C,H,W]; returns ([B,T,C,H,W], state').
template <typename T>
std::pair<Tensor<T>, TemporalState<T>> qrnn_forward(const QrnnCell<T>& cell,
                                                    const Tensor<T>& x_seq,
                                                    const TemporalState<T>* state = nullptr) {
  require(x_seq.shape().size() == 5, "qrnn_forward: expects [B,T,C,H,W]");
  const std::int64_t B = x_seq.dim(0), Tn = x_seq.dim(1), C = x_seq.dim(2), H = x_seq.dim(3),
                     W = x_seq.dim(4);
  require(Tn >= 1, "qrnn_forward: empty sequence");
  require(C == cell.channels, "qrnn_forward: channel mismatch, input has " + std::to_string(C) +
                                  ", cell expects " + std::to_string(cell.channels));
  const bool streaming = state != nullptr && !state->fresh();
  if (streaming) {
    require(state->carried.defined() && state->h.defined(),
            "qrnn_forward: state is missing carried frame or hidden map");
    require(state->h.shape() == Shape({B, C, H, W}),
            "qrnn_forward: state shape " + shape_str(state->h.shape()) +
                " does not match input frames " + shape_str(Shape{B, C, H, W}));
  }

  const int k = cell.ksize;
  const int pad = k / 2;
  ConvSpec spec2{.in_channels = static_cast<int>(C),
                 .out_channels = static_cast<int>(C),
                 .kh = k,
                 .kw = k,
                 .kt = 1,
                 .sh = 1,
                 .sw = 1,
                 .ph = pad,
                 .pw = pad,
                 .pt = 0};
  ConvSpec spec3 = spec2;
  spec3.kt = 2;

  // [B,T,C,H,W] -> [B,C,T,H,W] for the temporal convolution
  Tensor<T> x_tchw = permute(x_seq, {0, 2, 1, 3, 4});
  Tensor<T> frames = x_tchw;
  if (streaming) {
    Tensor<T> prev = reshape(state->carried, {B, C, std::int64_t(1), H, W});
    frames = concat<T>({prev, x_tchw}, 2);
  }

  std::vector<Tensor<T>> h_steps;
  Tensor<T> h_prev;
  std::int64_t gate_steps = frames.dim(2) - 1;  // one gate per consecutive frame pair

  if (streaming) {
    h_prev = state->h;
  } else {
    Tensor<T> x1 = reshape(narrow(x_tchw, 2, 0, 1), {B, C, H, W});
    h_prev = tanh_act(conv2d(x1, cell.w_h0, cell.b_h0, spec2));
    h_steps.push_back(h_prev);
  }

  if (gate_steps > 0) {
    Tensor<T> z_all = tanh_act(conv3d(frames, cell.w_z, cell.b_z, spec3));
    Tensor<T> f_all = sigmoid(conv3d(frames, cell.w_f, cell.b_f, spec3));
    for (std::int64_t t = 0; t < gate_steps; ++t) {
      Tensor<T> z_t = reshape(narrow(z_all, 2, t, 1), {B, C, H, W});
      Tensor<T> f_t = reshape(narrow(f_all, 2, t, 1), {B, C, H, W});
      Tensor<T> keep = mul(f_t, h_prev);
      Tensor<T> inject = mul(affine(f_t, T(-1), T(1)), z_t);  // i_t = 1 - f_t
      h_prev = add(keep, inject);
      h_steps.push_back(h_prev);
    }
  }

  std::vector<Tensor<T>> stacked;
  stacked.reserve(h_steps.size());
  for (auto& h : h_steps) stacked.push_back(reshape(h, {B, std::int64_t(1), C, H, W}));
  Tensor<T> h_seq = stacked.size() == 1 ? stacked[0] : concat<T>(stacked, 1);

  TemporalState<T> out_state;
  out_state.kind = TemporalKind::kQrnn;
  out_state.h = h_prev.detach();
  out_state.carried = reshape(narrow(x_tchw, 2, Tn - 1, 1), {B, C, H, W}).detach();
  return {h_seq, out_state};
}

// ---------------------------------------------------------------------------
// ConvLSTM cell with the attention input fixed to ones:
//   i,f,o,c = gate(W_* [x, h_{t-1}] + b_*),  s_t = f.s_{t-1} + i.c,
//   h_t = o . tanh(s_t)
// The candidate activation defaults to sigmoid; `tanh_candidate` switches to
// the tanh variant.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLstmCell {
  int channels = 0;
  int ksize = 3;
  bool tanh_candidate = false;
  Tensor<T> w_i, b_i, w_f, b_f, w_o, b_o, w_c, b_c;  // each conv over [x, h]

  static ConvLstmCell init(int channels, Rng& rng, int ksize = 3, bool tanh_candidate = false) {
    ConvLstmCell c;
    c.channels = channels;
    c.ksize = ksize;
    c.tanh_candidate = tanh_candidate;
    const std::int64_t C = channels;
    const T std = static_cast<T>(std::sqrt(2.0 / (double(2 * C) * ksize * ksize)));
    auto w = [&] { return Tensor<T>::randn({C, 2 * C, ksize, ksize}, rng, std, true); };
    auto b = [&] { return Tensor<T>::zeros({C}, true); };
    c.w_i = w();
    c.b_i = b();
    c.w_f = w();
    c.b_f = b();
    c.w_o = w();
    c.b_o = b();
    c.w_c = w();
    c.b_c = b();
    // keep early memory writable
    for (int ch = 0; ch < channels; ++ch) c.b_f.at(ch) = T(1);
    return c;
  }

  static ConvLstmCell zeros(int channels, int ksize = 3, bool tanh_candidate = false) {
    ConvLstmCell c;
    c.channels = channels;
    c.ksize = ksize;
    c.tanh_candidate = tanh_candidate;
    const std::int64_t C = channels;
    auto w = [&] { return Tensor<T>::zeros({C, 2 * C, ksize, ksize}, true); };
    auto b = [&] { return Tensor<T>::zeros({C}, true); };
    c.w_i = w();
    c.b_i = b();
    c.w_f = w();
    c.b_f = b();
    c.w_o = w();
    c.b_o = b();
    c.w_c = w();
    c.b_c = b();
    return c;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    return {{"w_i", w_i}, {"b_i", b_i}, {"w_f", w_f}, {"b_f", b_f},
            {"w_o", w_o}, {"b_o", b_o}, {"w_c", w_c}, {"b_c", b_c}};
  }
};

template <typename T>
std::pair<Tensor<T>, TemporalState<T>> convlstm_forward(const ConvLstmCell<T>& cell,
                                                        const Tensor<T>& x_seq,
                                                        const TemporalState<T>* state = nullptr) {
  require(x_seq.shape().size() == 5, "convlstm_forward: expects [B,T,C,H,W]");
  const std::int64_t B = x_seq.dim(0), Tn = x_seq.dim(1), C = x_seq.dim(2), H = x_seq.dim(3),
                     W = x_seq.dim(4);
  require(Tn >= 1, "convlstm_forward: empty sequence");
  require(C == cell.channels, "convlstm_forward: channel mismatch, input has " +
                                  std::to_string(C) + ", cell expects " +
                                  std::to_string(cell.channels));

  const int k = cell.ksize;
  ConvSpec spec{.in_channels = static_cast<int>(2 * C),
                .out_channels = static_cast<int>(C),
                .kh = k,
                .kw = k,
                .kt = 1,
                .sh = 1,
                .sw = 1,
                .ph = k / 2,
                .pw = k / 2,
                .pt = 0};

  Tensor<T> h_prev, s_prev;
  if (state != nullptr && !state->fresh()) {
    require(state->h.shape() == Shape({B, C, H, W}) && state->s.defined(),
            "convlstm_forward: state does not match input frames " +
                shape_str(Shape{B, C, H, W}));
    h_prev = state->h;
    s_prev = state->s;
  } else {
    h_prev = Tensor<T>::zeros({B, C, H, W});
    s_prev = Tensor<T>::zeros({B, C, H, W});
  }

  std::vector<Tensor<T>> h_steps;
  for (std::int64_t t = 0; t < Tn; ++t) {
    Tensor<T> x_t = reshape(narrow(x_seq, 1, t, 1), {B, C, H, W});
    Tensor<T> xh = concat_channels(x_t, h_prev);  // a_t = ones: attention removed
    Tensor<T> i_t = sigmoid(conv2d(xh, cell.w_i, cell.b_i, spec));
    Tensor<T> f_t = sigmoid(conv2d(xh, cell.w_f, cell.b_f, spec));
    Tensor<T> o_t = sigmoid(conv2d(xh, cell.w_o, cell.b_o, spec));
    Tensor<T> c_raw = conv2d(xh, cell.w_c, cell.b_c, spec);
    Tensor<T> c_t = cell.tanh_candidate ? tanh_act(c_raw) : sigmoid(c_raw);
    s_prev = add(mul(f_t, s_prev), mul(i_t, c_t));
    h_prev = mul(o_t, tanh_act(s_prev));
    h_steps.push_back(h_prev);
  }

  std::vector<Tensor<T>> stacked;
  stacked.reserve(h_steps.size());
  for (auto& h : h_steps) stacked.push_back(reshape(h, {B, std::int64_t(1), C, H, W}));
  Tensor<T> h_seq = stacked.size() == 1 ? stacked[0] : concat<T>(stacked, 1);

  TemporalState<T> out_state;
  out_state.kind = TemporalKind::kConvLstm;
  out_state.h = h_prev.detach();
  out_state.s = s_prev.detach();
  return {h_seq, out_state};
}

}  // namespace seqdet
