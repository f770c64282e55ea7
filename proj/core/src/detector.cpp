#include "seqdet/detector.hpp"

#include <algorithm>
#include <cmath>

#include "seqdet/serialize.hpp"

namespace seqdet {

namespace {

constexpr float kBnEps = 1e-3f;
constexpr float kBnMomentum = 0.03f;

// base anchor plan at 640 input, finest scale first
const float kBaseAnchors[9][2] = {{10, 13},  {16, 30},   {33, 23},   {30, 61},  {62, 45},
                                  {59, 119}, {116, 90},  {156, 198}, {373, 326}};

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kSmall:
      return "small";
    case Variant::kMedium:
      return "medium";
    case Variant::kLarge:
      return "large";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::kSmall, Variant::kMedium, Variant::kLarge})
    if (name == variant_name(v)) return v;
  throw std::invalid_argument("unknown variant: " + name);
}

DetectorConfig DetectorConfig::for_variant(Variant v, int input_size) {
  DetectorConfig c;
  c.variant = v;
  c.input_size = input_size;
  switch (v) {
    case Variant::kSmall:
      c.channels = {128, 256, 512};
      c.depth_multiple = 0.33;
      break;
    case Variant::kMedium:
      c.channels = {192, 384, 768};
      c.depth_multiple = 0.67;
      break;
    case Variant::kLarge:
      c.channels = {256, 512, 1024};
      c.depth_multiple = 1.0;
      break;
  }
  const float s = static_cast<float>(input_size) / 640.f;
  for (int i = 0; i < 9; ++i) {
    c.anchors[static_cast<size_t>(i)][0] = std::max(1.f, kBaseAnchors[i][0] * s);
    c.anchors[static_cast<size_t>(i)][1] = std::max(1.f, kBaseAnchors[i][1] * s);
  }
  return c;
}

void DetectorConfig::validate() const {
  require(input_size > 0 && input_size % 32 == 0,
          "config: input_size must be a positive multiple of 32, got " +
              std::to_string(input_size));
  require(channels[0] < channels[1] && channels[1] < channels[2],
          "config: pyramid channels must increase across the three scales");
  require(channels[0] % 4 == 0, "config: first pyramid stage must be divisible by 4");
  require(num_classes >= 1, "config: need at least one class");
  require(seq_len >= 1, "config: seq_len must be positive");
  require(depth_multiple > 0, "config: depth_multiple must be positive");
  for (const auto& a : anchors)
    require(a[0] > 0 && a[1] > 0, "config: anchors must be positive");
}

nlohmann::json DetectorConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = variant_name(variant);
  j["channels"] = channels;
  j["input_size"] = input_size;
  j["seq_len"] = seq_len;
  j["temporal"] = temporal_kind_name(temporal);
  j["convlstm_tanh_candidate"] = convlstm_tanh_candidate;
  j["strides"] = strides;
  j["num_classes"] = num_classes;
  j["depth_multiple"] = depth_multiple;
  j["seed"] = seed;
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : anchors) a.push_back({p[0], p[1]});
  j["anchors"] = a;
  return j;
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c = for_variant(variant_from_name(j.value("variant", "small")),
                                 j.value("input_size", 640));
  if (j.contains("channels")) c.channels = j.at("channels").get<std::array<int, 3>>();
  c.seq_len = j.value("seq_len", 2);
  const std::string tk = j.value("temporal", "none");
  c.temporal = tk == "qrnn"       ? TemporalKind::kQrnn
               : tk == "convlstm" ? TemporalKind::kConvLstm
                                  : TemporalKind::kNone;
  c.convlstm_tanh_candidate = j.value("convlstm_tanh_candidate", false);
  c.num_classes = j.value("num_classes", 3);
  if (j.contains("depth_multiple")) c.depth_multiple = j.at("depth_multiple").get<double>();
  c.seed = j.value("seed", 0ull);
  if (j.contains("anchors")) {
    const auto& a = j.at("anchors");
    for (size_t i = 0; i < 9 && i < a.size(); ++i) {
      c.anchors[i][0] = a[i][0].get<float>();
      c.anchors[i][1] = a[i][1].get<float>();
    }
  }
  c.validate();
  return c;
}

std::array<std::array<float, 2>, 9> anchors_from_dataset(const DatasetManifest& m,
                                                         int input_size, std::uint64_t seed) {
  std::vector<std::array<float, 2>> boxes;
  for (size_t si = 0; si < m.sequences.size(); ++si) {
    const auto& info = m.sequences[si];
    for (const auto& lp : info.label_paths) {
      std::vector<std::string> errors;
      for (const auto& b : parse_label_file(lp, static_cast<int>(m.classes.size()), &errors))
        boxes.push_back({b.w * input_size, b.h * input_size});
    }
  }
  auto fallback = DetectorConfig::for_variant(Variant::kSmall, input_size).anchors;
  if (boxes.size() < 9) return fallback;

  Rng rng(seed);
  std::array<std::array<float, 2>, 9> centers;
  for (auto& c : centers) c = boxes[static_cast<size_t>(rng.randint(std::int64_t(boxes.size())))];
  std::vector<int> assign(boxes.size(), 0);
  for (int iter = 0; iter < 25; ++iter) {
    for (size_t i = 0; i < boxes.size(); ++i) {
      double best = 1e30;
      for (int k = 0; k < 9; ++k) {
        const double dw = boxes[i][0] - centers[static_cast<size_t>(k)][0];
        const double dh = boxes[i][1] - centers[static_cast<size_t>(k)][1];
        const double d = dw * dw + dh * dh;
        if (d < best) {
          best = d;
          assign[i] = k;
        }
      }
    }
    for (int k = 0; k < 9; ++k) {
      double sw = 0, sh = 0;
      int n = 0;
      for (size_t i = 0; i < boxes.size(); ++i)
        if (assign[i] == k) {
          sw += boxes[i][0];
          sh += boxes[i][1];
          ++n;
        }
      if (n == 0)
        centers[static_cast<size_t>(k)] =
            boxes[static_cast<size_t>(rng.randint(std::int64_t(boxes.size())))];
      else
        centers[static_cast<size_t>(k)] = {static_cast<float>(sw / n),
                                           static_cast<float>(sh / n)};
    }
  }
  std::sort(centers.begin(), centers.end(),
            [](const auto& a, const auto& b) { return a[0] * a[1] < b[0] * b[1]; });
  for (auto& c : centers) {
    c[0] = std::max(1.f, c[0]);
    c[1] = std::max(1.f, c[1]);
  }
  return centers;
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

void ConvBnAct::init(std::string n, int cin, int cout, int k, int stride, Rng& rng, bool act_) {
  name = std::move(n);
  act = act_;
  spec = ConvSpec{.in_channels = cin, .out_channels = cout, .kh = k, .kw = k, .kt = 1,
                  .sh = stride, .sw = stride, .ph = k / 2, .pw = k / 2, .pt = 0};
  const float std = std::sqrt(2.f / (static_cast<float>(cin) * k * k));
  w = Tensorf::randn({cout, cin, k, k}, rng, std, true);
  gamma = Tensorf::full({cout}, 1.f, true);
  beta = Tensorf::zeros({cout}, true);
  rmean = Tensorf::zeros({cout});
  rvar = Tensorf::full({cout}, 1.f);
}

Tensorf ConvBnAct::forward(const Tensorf& x, bool training) {
  Tensorf y = conv2d(x, w, Tensorf(), spec);
  y = batchnorm2d(y, gamma, beta, rmean, rvar, kBnMomentum, kBnEps, training);
  return act ? silu(y) : y;
}

void ConvBnAct::visit_params(const std::function<void(const std::string&, Tensorf&)>& fn) {
  fn(name + ".w", w);
  fn(name + ".bn.gamma", gamma);
  fn(name + ".bn.beta", beta);
}

void ConvBnAct::visit_buffers(const std::function<void(const std::string&, Tensorf&)>& fn) {
  fn(name + ".bn.rmean", rmean);
  fn(name + ".bn.rvar", rvar);
}

void CspBlock::init(std::string n, int cin, int cout, int repeats, bool shortcut_, Rng& rng) {
  name = std::move(n);
  shortcut = shortcut_;
  const int mid = cout / 2;
  cv1.init(name + ".cv1", cin, mid, 1, 1, rng);
  cv2.init(name + ".cv2", cin, mid, 1, 1, rng);
  cv3.init(name + ".cv3", 2 * mid, cout, 1, 1, rng);
  bottlenecks.clear();
  for (int i = 0; i < repeats; ++i) {
    std::array<ConvBnAct, 2> b;
    b[0].init(name + ".m" + std::to_string(i) + ".cv1", mid, mid, 1, 1, rng);
    b[1].init(name + ".m" + std::to_string(i) + ".cv2", mid, mid, 3, 1, rng);
    bottlenecks.push_back(std::move(b));
  }
}

Tensorf CspBlock::forward(const Tensorf& x, bool training) {
  Tensorf y1 = cv1.forward(x, training);
  for (auto& b : bottlenecks) {
    Tensorf h = b[1].forward(b[0].forward(y1, training), training);
    y1 = shortcut ? add(y1, h) : h;
  }
  Tensorf y2 = cv2.forward(x, training);
  return cv3.forward(concat_channels(y1, y2), training);
}

void CspBlock::visit_params(const std::function<void(const std::string&, Tensorf&)>& fn) {
  cv1.visit_params(fn);
  cv2.visit_params(fn);
  cv3.visit_params(fn);
  for (auto& b : bottlenecks) {
    b[0].visit_params(fn);
    b[1].visit_params(fn);
  }
}

void CspBlock::visit_buffers(const std::function<void(const std::string&, Tensorf&)>& fn) {
  cv1.visit_buffers(fn);
  cv2.visit_buffers(fn);
  cv3.visit_buffers(fn);
  for (auto& b : bottlenecks) {
    b[0].visit_buffers(fn);
    b[1].visit_buffers(fn);
  }
}

void SppBlock::init(std::string n, int c, Rng& rng) {
  name = std::move(n);
  cv1.init(name + ".cv1", c, c / 2, 1, 1, rng);
  cv2.init(name + ".cv2", 2 * c, c, 1, 1, rng);
}

Tensorf SppBlock::forward(const Tensorf& x, bool training) {
  Tensorf y = cv1.forward(x, training);
  Tensorf p5 = maxpool2d(y, 5, 1, 2);
  Tensorf p9 = maxpool2d(y, 9, 1, 4);
  Tensorf p13 = maxpool2d(y, 13, 1, 6);
  return cv2.forward(concat<float>({y, p5, p9, p13}, 1), training);
}

void SppBlock::visit_params(const std::function<void(const std::string&, Tensorf&)>& fn) {
  cv1.visit_params(fn);
  cv2.visit_params(fn);
}

void SppBlock::visit_buffers(const std::function<void(const std::string&, Tensorf&)>& fn) {
  cv1.visit_buffers(fn);
  cv2.visit_buffers(fn);
}

// ---------------------------------------------------------------------------
// Model assembly
// ---------------------------------------------------------------------------

DetectorModel DetectorModel::create(const DetectorConfig& cfg) {
  cfg.validate();
  DetectorModel m;
  m.config = cfg;
  Rng rng(cfg.seed);
  const int c3 = cfg.channels[0], c4 = cfg.channels[1], c5 = cfg.channels[2];
  const int c1 = c3 / 4, c2 = c3 / 2;
  const int n = cfg.repeats();

  m.stem.init("backbone.stem", 3, c1, 3, 2, rng);
  m.down2.init("backbone.down2", c1, c2, 3, 2, rng);
  m.csp2.init("backbone.csp2", c2, c2, n, true, rng);
  m.down3.init("backbone.down3", c2, c3, 3, 2, rng);
  m.csp3.init("backbone.csp3", c3, c3, n, true, rng);
  m.down4.init("backbone.down4", c3, c4, 3, 2, rng);
  m.csp4.init("backbone.csp4", c4, c4, n, true, rng);
  m.down5.init("backbone.down5", c4, c5, 3, 2, rng);
  m.spp.init("backbone.spp", c5, rng);
  m.csp5.init("backbone.csp5", c5, c5, n, true, rng);

  m.lat5.init("neck.lat5", c5, c4, 1, 1, rng);
  m.neck_td4.init("neck.td4", 2 * c4, c4, n, false, rng);
  m.lat4.init("neck.lat4", c4, c3, 1, 1, rng);
  m.neck_td3.init("neck.td3", 2 * c3, c3, n, false, rng);
  m.fuse3.init("neck.fuse3", c3, c3, 3, 2, rng);
  m.neck_bu4.init("neck.bu4", 2 * c3, c4, n, false, rng);
  m.fuse4.init("neck.fuse4", c4, c4, 3, 2, rng);
  m.neck_bu5.init("neck.bu5", 2 * c4, c5, n, false, rng);

  if (cfg.temporal == TemporalKind::kQrnn) {
    for (int c : cfg.channels) m.qrnn.push_back(QrnnCell<float>::init(c, rng));
  } else if (cfg.temporal == TemporalKind::kConvLstm) {
    for (int c : cfg.channels)
      m.convlstm.push_back(
          ConvLstmCell<float>::init(c, rng, 3, cfg.convlstm_tanh_candidate));
  }

  const int ho = cfg.head_channels();
  const int channels[3] = {c3, c4, c5};
  for (int i = 0; i < 3; ++i) {
    const float std = std::sqrt(2.f / static_cast<float>(channels[i]));
    m.head_w[static_cast<size_t>(i)] = Tensorf::randn({ho, channels[i], 1, 1}, rng, std, true);
    Tensorf b = Tensorf::zeros({ho}, true);
    // prior: few objects per cell, flat class distribution
    const float grid = static_cast<float>(cfg.input_size / cfg.strides[static_cast<size_t>(i)]);
    const float obj_bias = std::log(8.f / (grid * grid));
    const float cls_bias = std::log(0.6f / (static_cast<float>(cfg.num_classes) - 0.99f));
    for (int a = 0; a < 3; ++a) {
      b.at(a * (5 + cfg.num_classes) + 4) = obj_bias;
      for (int c = 0; c < cfg.num_classes; ++c) b.at(a * (5 + cfg.num_classes) + 5 + c) = cls_bias;
    }
    m.head_b[static_cast<size_t>(i)] = b;
  }
  return m;
}

FeaturePyramid DetectorModel::backbone_forward(const Tensorf& frames, bool training) {
  require(frames.shape().size() == 4 && frames.dim(1) == 3,
          "backbone: expects [N,3,S,S], got " + shape_str(frames.shape()));
  require(frames.dim(2) == config.input_size && frames.dim(3) == config.input_size,
          "backbone: frame size " + std::to_string(frames.dim(2)) + " does not match config " +
              std::to_string(config.input_size));
  const bool bn_train = training && !backbone_neck_frozen;
  Tensorf x = stem.forward(frames, bn_train);
  x = csp2.forward(down2.forward(x, bn_train), bn_train);
  Tensorf p3 = csp3.forward(down3.forward(x, bn_train), bn_train);
  Tensorf p4 = csp4.forward(down4.forward(p3, bn_train), bn_train);
  Tensorf p5 = csp5.forward(spp.forward(down5.forward(p4, bn_train), bn_train), bn_train);
  return {p3, p4, p5};
}

FeaturePyramid DetectorModel::neck_forward(const FeaturePyramid& p, bool training) {
  require(p.p3.dim(1) == config.channels[0] && p.p4.dim(1) == config.channels[1] &&
              p.p5.dim(1) == config.channels[2],
          "neck: pyramid channels do not match config");
  const bool bn_train = training && !backbone_neck_frozen;
  Tensorf n5 = lat5.forward(p.p5, bn_train);
  Tensorf td4 = neck_td4.forward(concat_channels(upsample2x(n5), p.p4), bn_train);
  Tensorf n4 = lat4.forward(td4, bn_train);
  Tensorf out3 = neck_td3.forward(concat_channels(upsample2x(n4), p.p3), bn_train);
  Tensorf out4 = neck_bu4.forward(concat_channels(fuse3.forward(out3, bn_train), n4), bn_train);
  Tensorf out5 = neck_bu5.forward(concat_channels(fuse4.forward(out4, bn_train), n5), bn_train);
  return {out3, out4, out5};
}

FeaturePyramid DetectorModel::temporal_forward(const FeaturePyramid& p, std::int64_t batch,
                                               std::int64_t seq_len, StreamState* state) {
  if (config.temporal == TemporalKind::kNone) return p;
  if (state != nullptr) {
    require(state->variant == config.variant && state->input_size == config.input_size,
            "temporal state belongs to a different model configuration");
  }
  FeaturePyramid out = p;
  Tensorf* maps[3] = {&out.p3, &out.p4, &out.p5};
  for (int i = 0; i < 3; ++i) {
    Tensorf& m = *maps[i];
    const std::int64_t C = m.dim(1), H = m.dim(2), W = m.dim(3);
    require(m.dim(0) == batch * seq_len, "temporal: pyramid rows do not factor into B*T");
    Tensorf seq = reshape(m, {batch, seq_len, C, H, W});
    TemporalState<float>* st =
        (state && state->started) ? &state->scales[static_cast<size_t>(i)] : nullptr;
    std::pair<Tensorf, TemporalState<float>> r =
        config.temporal == TemporalKind::kQrnn
            ? qrnn_forward(qrnn[static_cast<size_t>(i)], seq, st)
            : convlstm_forward(convlstm[static_cast<size_t>(i)], seq, st);
    if (state) state->scales[static_cast<size_t>(i)] = r.second;
    m = reshape(r.first, {batch * seq_len, C, H, W});
  }
  if (state) state->started = true;
  return out;
}

std::array<Tensorf, 3> DetectorModel::head_forward(const FeaturePyramid& p) {
  const Tensorf* maps[3] = {&p.p3, &p.p4, &p.p5};
  std::array<Tensorf, 3> raw;
  for (int i = 0; i < 3; ++i) {
    const Tensorf& x = *maps[i];
    ConvSpec spec{.in_channels = static_cast<int>(x.dim(1)),
                  .out_channels = config.head_channels(), .kh = 1, .kw = 1, .kt = 1,
                  .sh = 1, .sw = 1, .ph = 0, .pw = 0, .pt = 0};
    Tensorf y =
        conv2d(x, head_w[static_cast<size_t>(i)], head_b[static_cast<size_t>(i)], spec);
    const std::int64_t N = y.dim(0), H = y.dim(2), W = y.dim(3);
    y = reshape(y, {N, 3, 5 + config.num_classes, H, W});
    raw[static_cast<size_t>(i)] = permute(y, {0, 1, 3, 4, 2});
  }
  return raw;
}

std::array<Tensorf, 3> DetectorModel::forward_clip(const Tensorf& clip, bool training,
                                                   StreamState* state) {
  require(clip.shape().size() == 5, "forward_clip: expects [B,T,3,S,S]");
  const std::int64_t B = clip.dim(0), T = clip.dim(1);
  Tensorf frames = reshape(clip, {B * T, clip.dim(2), clip.dim(3), clip.dim(4)});
  FeaturePyramid p = neck_forward(backbone_forward(frames, training), training);
  p = temporal_forward(p, B, T, state);
  return head_forward(p);
}

StreamState DetectorModel::make_state() const {
  StreamState s;
  s.variant = config.variant;
  s.input_size = config.input_size;
  s.started = false;
  for (auto& sc : s.scales) sc.kind = config.temporal == TemporalKind::kConvLstm
                                          ? TemporalKind::kConvLstm
                                          : TemporalKind::kQrnn;
  return s;
}

std::vector<Detection> DetectorModel::detect_stream(const Tensorf& frame, StreamState& state,
                                                    double conf_thresh, double iou_thresh) {
  require(frame.shape().size() == 4 && frame.dim(0) == 1,
          "detect_stream: expects a single [1,3,S,S] frame");
  NoGradGuard no_grad;
  Tensorf clip = reshape(frame, {1, 1, frame.dim(1), frame.dim(2), frame.dim(3)});
  auto raw = forward_clip(clip, false, &state);
  auto dets = decode(raw, config);
  return nms(dets.at(0), conf_thresh, iou_thresh);
}

void DetectorModel::visit_params(const std::function<void(const std::string&, Tensorf&)>& fn) {
  for (ConvBnAct* c : {&stem, &down2, &down3, &down4, &down5, &lat5, &lat4, &fuse3, &fuse4})
    c->visit_params(fn);
  for (CspBlock* c : {&csp2, &csp3, &csp4, &csp5, &neck_td4, &neck_td3, &neck_bu4, &neck_bu5})
    c->visit_params(fn);
  spp.visit_params(fn);
  visit_trainable(fn);
}

void DetectorModel::visit_trainable(
    const std::function<void(const std::string&, Tensorf&)>& fn) {
  static const char* scale_names[3] = {"p3", "p4", "p5"};
  for (size_t i = 0; i < qrnn.size(); ++i)
    for (auto& [n, t] : qrnn[i].named_params()) {
      Tensorf copy = t;
      fn("qrnn." + std::string(scale_names[i]) + "." + n, copy);
    }
  for (size_t i = 0; i < convlstm.size(); ++i)
    for (auto& [n, t] : convlstm[i].named_params()) {
      Tensorf copy = t;
      fn("convlstm." + std::string(scale_names[i]) + "." + n, copy);
    }
  for (int i = 0; i < 3; ++i) {
    fn("head." + std::string(scale_names[i]) + ".w", head_w[static_cast<size_t>(i)]);
    fn("head." + std::string(scale_names[i]) + ".b", head_b[static_cast<size_t>(i)]);
  }
}

void DetectorModel::visit_buffers(const std::function<void(const std::string&, Tensorf&)>& fn) {
  for (ConvBnAct* c : {&stem, &down2, &down3, &down4, &down5, &lat5, &lat4, &fuse3, &fuse4})
    c->visit_buffers(fn);
  for (CspBlock* c : {&csp2, &csp3, &csp4, &csp5, &neck_td4, &neck_td3, &neck_bu4, &neck_bu5})
    c->visit_buffers(fn);
  spp.visit_buffers(fn);
}

std::int64_t DetectorModel::parameter_count(bool trainable_only) {
  std::int64_t n = 0;
  auto count = [&](const std::string&, Tensorf& t) { n += t.numel(); };
  if (trainable_only && backbone_neck_frozen)
    visit_trainable(count);
  else
    visit_params(count);
  return n;
}

void DetectorModel::init_passthrough_cells(float scale) {
  require(config.temporal == TemporalKind::kQrnn,
          "pass-through warm start is defined for the QRNN cells");
  for (size_t i = 0; i < 3; ++i)
    qrnn[i] = QrnnCell<float>::passthrough(config.channels[i], scale);
  // the cell emits tanh(scale * x); compensate in the copied linear head
  for (auto& w : head_w)
    for (std::int64_t j = 0; j < w.numel(); ++j) w.at(j) /= scale;
}

void DetectorModel::save_checkpoint(const std::string& path,
                                    const nlohmann::json& extra_meta) const {
  TensorArchive arc;
  auto* self = const_cast<DetectorModel*>(this);
  self->visit_params([&](const std::string& n, Tensorf& t) { arc.put(n, t); });
  self->visit_buffers([&](const std::string& n, Tensorf& t) { arc.put(n, t); });
  arc.meta["config"] = config.to_json();
  if (!extra_meta.is_null())
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it)
      arc.meta[it.key()] = it.value();
  arc.save(path);
}

DetectorModel DetectorModel::load_checkpoint(const std::string& path,
                                             nlohmann::json* meta_out) {
  TensorArchive arc = TensorArchive::load(path);
  DetectorModel m = create(DetectorConfig::from_json(arc.meta.at("config")));
  auto missing = m.load_weights(arc);
  if (!missing.empty())
    throw std::runtime_error("checkpoint " + path + " is missing tensor " + missing.front());
  if (meta_out) *meta_out = arc.meta;
  return m;
}

std::vector<std::string> DetectorModel::load_weights(const TensorArchive& arc) {
  std::vector<std::string> missing;
  auto copy = [&](const std::string& n, Tensorf& t) {
    if (!arc.has(n)) {
      missing.push_back(n);
      return;
    }
    Tensorf src = arc.get_f32(n);
    require(src.shape() == t.shape(), "checkpoint tensor " + n + " has shape " +
                                          shape_str(src.shape()) + ", model expects " +
                                          shape_str(t.shape()));
    std::copy(src.data(), src.data() + src.numel(), t.data());
  };
  visit_params(copy);
  visit_buffers(copy);
  return missing;
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

std::vector<std::vector<Detection>> decode(const std::array<Tensorf, 3>& raw,
                                           const DetectorConfig& cfg, bool clip_boxes) {
  const std::int64_t N = raw[0].dim(0);
  const int nc = cfg.num_classes;
  const int stride_count = 5 + nc;
  std::vector<std::vector<Detection>> out(static_cast<size_t>(N));
  for (int s = 0; s < 3; ++s) {
    const Tensorf& r = raw[static_cast<size_t>(s)];
    require(r.dim(4) == stride_count, "decode: raw tensor has wrong tail dimension");
    const std::int64_t H = r.dim(2), W = r.dim(3);
    const float stride = static_cast<float>(cfg.strides[static_cast<size_t>(s)]);
    const float* d = r.data();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t a = 0; a < 3; ++a) {
        const auto& anchor = cfg.anchors[static_cast<size_t>(s * 3 + a)];
        for (std::int64_t gy = 0; gy < H; ++gy)
          for (std::int64_t gx = 0; gx < W; ++gx) {
            const float* v = d + (((n * 3 + a) * H + gy) * W + gx) * stride_count;
            const float sx = sigmoid_val(v[0]);
            const float sy = sigmoid_val(v[1]);
            const float sw = sigmoid_val(v[2]);
            const float sh = sigmoid_val(v[3]);
            Detection det;
            det.box.cx = (2.f * sx - 0.5f + static_cast<float>(gx)) * stride;
            det.box.cy = (2.f * sy - 0.5f + static_cast<float>(gy)) * stride;
            det.box.w = anchor[0] * (2.f * sw) * (2.f * sw);
            det.box.h = anchor[1] * (2.f * sh) * (2.f * sh);
            float best_cls = -1e30f;
            int best_id = 0;
            for (int c = 0; c < nc; ++c)
              if (v[5 + c] > best_cls) {
                best_cls = v[5 + c];
                best_id = c;
              }
            det.class_id = best_id;
            det.confidence = sigmoid_val(v[4]) * sigmoid_val(best_cls);
            if (clip_boxes) {
              const float S = static_cast<float>(cfg.input_size);
              float x0 = std::max(0.f, det.box.cx - det.box.w / 2);
              float y0 = std::max(0.f, det.box.cy - det.box.h / 2);
              float x1 = std::min(S, det.box.cx + det.box.w / 2);
              float y1 = std::min(S, det.box.cy + det.box.h / 2);
              if (x1 <= x0 || y1 <= y0) continue;
              det.box.cx = (x0 + x1) / 2;
              det.box.cy = (y0 + y1) / 2;
              det.box.w = x1 - x0;
              det.box.h = y1 - y0;
            }
            out[static_cast<size_t>(n)].push_back(det);
          }
      }
  }
  return out;
}

}  // namespace seqdet
