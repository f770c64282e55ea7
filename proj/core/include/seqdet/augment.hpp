#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqdet/image.hpp"
#include "seqdet/rng.hpp"

namespace seqdet {

enum class Technique {
  kStaticAffineHsv,
  kTemporalMosaic,
  kTemporalMixup,
  kRandomErasing,
  kRandomBlur,
  kGaussianNoise,
};

const char* technique_name(Technique t);
Technique technique_from_name(const std::string& name);

// The five temporal techniques sampled per call. One geometry / one mixing
// coefficient / one transform per sequence; photometric noise per frame.

struct MosaicParams {
  float center_lo = 0.5f;  // center sampled in [lo, hi] * frame size, per axis
  float center_hi = 1.5f;
  float min_box_px = 2.0f;  // clipped boxes below this extent are dropped
};

// Four equal-length sequences tiled with one sampled geometry for all t;
// canvas is twice the working resolution, then resized back.
LabeledSequence temporal_mosaic(const std::array<LabeledSequence, 4>& seqs, Rng& rng,
                                const MosaicParams& p = {});

// lambda ~ Beta(alpha, alpha) drawn once per pair; labels are unioned.
LabeledSequence temporal_mixup(const LabeledSequence& a, const LabeledSequence& b, Rng& rng,
                               double alpha = 8.0);
LabeledSequence mixup_with_lambda(const LabeledSequence& a, const LabeledSequence& b,
                                  float lambda);

struct ErasingParams {
  double prob_per_frame = 0.5;
  double area_lo = 0.02, area_hi = 0.2;
  double aspect_lo = 0.3, aspect_hi = 3.3;
};

// Frame 1 is never modified; later frames get one rectangle of uniform random
// color or salt-and-pepper noise. Labels unchanged.
LabeledSequence random_erasing(const LabeledSequence& seq, Rng& rng,
                               const ErasingParams& p = {});

struct BlurParams {
  double prob_per_frame = 0.5;
  double sigma_lo = 0.5, sigma_hi = 2.0;
};

LabeledSequence random_blur(const LabeledSequence& seq, Rng& rng, const BlurParams& p = {});

struct NoiseParams {
  double prob_per_frame = 0.5;
  double sigma_lo = 0.01, sigma_hi = 0.05;  // in [0,1] pixel units
};

LabeledSequence gaussian_noise(const LabeledSequence& seq, Rng& rng, const NoiseParams& p = {});

struct StaticAugmentParams {
  double degrees = 10.0;
  double translate = 0.1;  // fraction of the frame
  double scale = 0.1;      // 1 +- scale
  double shear_deg = 2.0;
  double perspective = 0.0005;
  double hsv_h = 0.015;  // hue shift fraction
  double hsv_s = 0.3;    // 1 +- s gain
  double hsv_v = 0.3;
  float min_box_px = 2.0f;
};

// One affine+perspective matrix and one HSV shift per sequence, applied
// identically to every frame; boxes ride through the matrix.
LabeledSequence static_augment(const LabeledSequence& seq, Rng& rng,
                               const StaticAugmentParams& p = {});

// sampled parameters, exposed for the temporal-consistency checks
struct StaticSample {
  double mat[9];
  double h_shift, s_gain, v_gain;
};
StaticSample sample_static_params(Rng& rng, const StaticAugmentParams& p, int size);
LabeledSequence apply_static_sample(const LabeledSequence& seq, const StaticSample& s,
                                    float min_box_px = 2.0f);

// ---------------------------------------------------------------------------
// Declarative pipeline
// ---------------------------------------------------------------------------

struct AugmentSpec {
  Technique technique = Technique::kGaussianNoise;
  double probability = 1.0;
  nlohmann::json params = nlohmann::json::object();  // technique-specific overrides
  std::uint64_t seed = 0;
};

struct AugmentPipeline {
  std::vector<AugmentSpec> specs;

  bool enabled(Technique t) const;
  static AugmentPipeline from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // canonical subset: geometric before photometric before occlusion
  static AugmentPipeline preset(const std::vector<Technique>& techniques);
};

// Applies the pipeline in canonical order. `sample_more` supplies partner
// sequences for mosaic/mixup.
LabeledSequence apply_pipeline(const AugmentPipeline& pipe, const LabeledSequence& seq,
                               Rng& rng, const std::function<LabeledSequence()>& sample_more);

// every box inside [0,1] with positive area; frame/label counts aligned
bool labels_valid(const LabeledSequence& seq);

// ---------------------------------------------------------------------------
// Greedy combination search: each round adds the best-scoring remaining
// technique to the best combination so far; stops when no addition improves
// (a tie is accepted and ends the search).
// ---------------------------------------------------------------------------

struct GreedyTrial {
  std::string id;
  std::vector<Technique> combination;
  double score = 0;
};

struct GreedyReport {
  std::vector<GreedyTrial> trials;
  std::vector<Technique> best_combination;
  double best_score = 0;
  bool aborted = false;
  std::string abort_reason;

  void write_csv(const std::string& path) const;
};

GreedyReport greedy_search(
    const std::vector<Technique>& techniques,
    const std::function<double(const std::vector<Technique>&)>& train_and_eval);

}  // namespace seqdet
