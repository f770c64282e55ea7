#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqdet/cells.hpp"
#include "seqdet/dataset.hpp"
#include "seqdet/metrics.hpp"
#include "seqdet/ops.hpp"
#include "seqdet/tensor.hpp"

namespace seqdet {

enum class Variant { kSmall, kMedium, kLarge };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct DetectorConfig {
  Variant variant = Variant::kSmall;
  std::array<int, 3> channels = {128, 256, 512};  // pyramid plan (c3, c4, c5)
  int input_size = 640;
  int seq_len = 2;
  TemporalKind temporal = TemporalKind::kNone;
  bool convlstm_tanh_candidate = false;
  std::array<int, 3> strides = {8, 16, 32};
  int num_classes = 3;
  double depth_multiple = 0.33;  // scales CSP bottleneck repeats
  std::uint64_t seed = 0;
  // (w, h) pixel pairs, three per scale, finest scale first
  std::array<std::array<float, 2>, 9> anchors;

  static DetectorConfig for_variant(Variant v, int input_size = 640);
  void validate() const;
  int head_channels() const { return 3 * (5 + num_classes); }
  int repeats() const { return std::max(1, static_cast<int>(std::lround(3 * depth_multiple))); }

  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

// k-means over training box dimensions, 9 clusters split by area across the
// three scales; falls back to the scaled defaults when boxes are scarce.
std::array<std::array<float, 2>, 9> anchors_from_dataset(const DatasetManifest& m,
                                                         int input_size, std::uint64_t seed);

struct FeaturePyramid {
  Tensorf p3, p4, p5;  // strides 8, 16, 32
};

// ---------------------------------------------------------------------------
// Building blocks (conv + batchnorm + SiLU, CSP split blocks, SPP)
// ---------------------------------------------------------------------------

struct ConvBnAct {
  std::string name;
  ConvSpec spec;
  Tensorf w, gamma, beta, rmean, rvar;
  bool act = true;

  void init(std::string n, int cin, int cout, int k, int stride, Rng& rng, bool act_ = true);
  Tensorf forward(const Tensorf& x, bool training);
  void visit_params(const std::function<void(const std::string&, Tensorf&)>& fn);
  void visit_buffers(const std::function<void(const std::string&, Tensorf&)>& fn);
};

struct CspBlock {
  std::string name;
  ConvBnAct cv1, cv2, cv3;
  std::vector<std::array<ConvBnAct, 2>> bottlenecks;
  bool shortcut = true;

  void init(std::string n, int cin, int cout, int repeats, bool shortcut_, Rng& rng);
  Tensorf forward(const Tensorf& x, bool training);
  void visit_params(const std::function<void(const std::string&, Tensorf&)>& fn);
  void visit_buffers(const std::function<void(const std::string&, Tensorf&)>& fn);
};

struct SppBlock {
  std::string name;
  ConvBnAct cv1, cv2;

  void init(std::string n, int c, Rng& rng);
  Tensorf forward(const Tensorf& x, bool training);
  void visit_params(const std::function<void(const std::string&, Tensorf&)>& fn);
  void visit_buffers(const std::function<void(const std::string&, Tensorf&)>& fn);
};

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

// Streaming state: one recurrent state per pyramid scale.
struct StreamState {
  std::array<TemporalState<float>, 3> scales;
  Variant variant = Variant::kSmall;
  int input_size = 0;
  bool started = false;
};

class DetectorModel {
 public:
  DetectorConfig config;

  // backbone
  ConvBnAct stem, down2, down3, down4, down5;
  CspBlock csp2, csp3, csp4, csp5;
  SppBlock spp;
  // neck (top-down then bottom-up)
  ConvBnAct lat5, lat4, fuse3, fuse4;
  CspBlock neck_td4, neck_td3, neck_bu4, neck_bu5;
  // temporal cells, one per scale
  std::vector<QrnnCell<float>> qrnn;          // size 3 when enabled
  std::vector<ConvLstmCell<float>> convlstm;  // size 3 when enabled
  // head: one 1x1 conv per scale
  std::array<Tensorf, 3> head_w, head_b;

  bool backbone_neck_frozen = false;

  static DetectorModel create(const DetectorConfig& cfg);

  // frames normalized to [0,1], shape [N,3,S,S]
  FeaturePyramid backbone_forward(const Tensorf& frames, bool training);
  FeaturePyramid neck_forward(const FeaturePyramid& p, bool training);
  // pyramid reshaped to [B,T,C,H,W] per scale; identity when temporal none
  FeaturePyramid temporal_forward(const FeaturePyramid& p, std::int64_t batch,
                                  std::int64_t seq_len, StreamState* state = nullptr);
  // raw logits per scale: [N, 3, H, W, 5+classes]
  std::array<Tensorf, 3> head_forward(const FeaturePyramid& p);

  // backbone -> neck -> temporal -> head over a [B,T,3,S,S] clip
  std::array<Tensorf, 3> forward_clip(const Tensorf& clip, bool training,
                                      StreamState* state = nullptr);

  // causal single-frame path; decodes and suppresses with the given
  // thresholds, threading the recurrent state
  std::vector<Detection> detect_stream(const Tensorf& frame, StreamState& state,
                                       double conf_thresh = 0.25, double iou_thresh = 0.45);

  StreamState make_state() const;

  void visit_params(const std::function<void(const std::string&, Tensorf&)>& fn);
  void visit_buffers(const std::function<void(const std::string&, Tensorf&)>& fn);
  // cells + head only (what stage-2 training updates)
  void visit_trainable(const std::function<void(const std::string&, Tensorf&)>& fn);

  std::int64_t parameter_count(bool trainable_only);

  // warm start for stage 2: near-identity cells and a head copy compensated
  // for the cell's tanh attenuation
  void init_passthrough_cells(float scale);

  void save_checkpoint(const std::string& path, const nlohmann::json& extra_meta = {}) const;
  static DetectorModel load_checkpoint(const std::string& path,
                                       nlohmann::json* meta_out = nullptr);
  // copies tensors present in the archive; returns names that were absent
  std::vector<std::string> load_weights(const class TensorArchive& arc);
};

// Anchor-head decoding: cx = (2s(tx)-0.5+gx)*stride, w = aw*(2s(tw))^2,
// confidence = s(obj) * max_cls s(cls); boxes clipped to the frame.
std::vector<std::vector<Detection>> decode(const std::array<Tensorf, 3>& raw,
                                           const DetectorConfig& cfg, bool clip_boxes = true);

}  // namespace seqdet
