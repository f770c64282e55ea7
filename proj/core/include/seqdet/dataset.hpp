#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqdet/image.hpp"
#include "seqdet/rng.hpp"

namespace seqdet {

inline const std::vector<std::string> kDefaultClasses = {"hand", "gun", "phone"};

enum class DatasetMode { kStatic, kTemporal };

// Layout on disk: root/{train,test}/{sequence_id}/{frame}.png plus one .txt
// per frame with lines "class cx cy w h", coordinates normalized.
struct SequenceInfo {
  std::string id;
  std::vector<std::string> frame_paths;  // playback order
  std::vector<std::string> label_paths;
  std::int64_t frame_count() const { return static_cast<std::int64_t>(frame_paths.size()); }
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::string what, std::vector<std::string> items)
      : std::runtime_error(std::move(what)), items_(std::move(items)) {}
  const std::vector<std::string>& items() const { return items_; }

 private:
  std::vector<std::string> items_;
};

struct DatasetManifest {
  std::string root;
  std::string split;
  DatasetMode mode = DatasetMode::kTemporal;
  std::vector<std::string> classes = kDefaultClasses;
  std::vector<SequenceInfo> sequences;

  std::int64_t total_frames() const;
  std::int64_t shortest_sequence() const;

  // Optional in-memory cache filled by preload(); load_clip serves from it.
  void preload();
  bool preloaded() const { return !cache_.empty(); }
  const LabeledSequence& cached(std::int64_t seq) const { return cache_[size_t(seq)]; }

  std::vector<LabeledSequence> cache_;
};

// Walks and validates the directory; throws DatasetError with one item per
// problem (missing label file, bad coordinate, unknown class, ...).
DatasetManifest load_dataset(const std::string& root, const std::string& split,
                             DatasetMode mode,
                             const std::vector<std::string>& classes = kDefaultClasses);

std::vector<BoxLabel> parse_label_file(const std::string& path, int num_classes,
                                       std::vector<std::string>* errors);

LabeledSequence load_clip(const DatasetManifest& m, std::int64_t seq, std::int64_t start,
                          std::int64_t len);

// Uniform over all (sequence, start offset) windows of length seq_len.
std::vector<LabeledSequence> sample_batch(const DatasetManifest& m, int batch_size,
                                          int seq_len, Rng& rng);

// Static pools merge every frame of both datasets as independent images.
std::int64_t mixed_frame_count(const DatasetManifest& a, const DatasetManifest& b);

// ---------------------------------------------------------------------------
// Synthetic moving-shapes videos (circle/rectangle/triangle standing in for
// the three classes) with exact analytic boxes, optional partial occlusions.
// ---------------------------------------------------------------------------

struct SynthShape {
  int class_id = 0;  // 0 circle, 1 rectangle, 2 triangle
  float x = 0, y = 0;    // center, pixels, at t = 0
  float vx = 0, vy = 0;  // pixels per frame
  float half_w = 6, half_h = 6;
  float color[3] = {0.8f, 0.4f, 0.3f};
  int stripe_phase = 0;
};

struct SynthOccluder {
  float x = 0, y = 0, vx = 0, vy = 0;
  float half_w = 4, half_h = 10;
  int t_begin = 0, t_end = 0;  // active frames [t_begin, t_end)
  float gray = 0.5f;
};

struct SynthScene {
  int size = 64;
  int frames = 16;
  std::uint64_t noise_seed = 0;
  float bg_base = 0.35f;
  std::vector<SynthShape> shapes;
  std::vector<SynthOccluder> occluders;
};

struct SynthParams {
  std::uint64_t seed = 0;
  int sequences = 8;
  int test_sequences = 2;
  int frames = 16;
  int size = 64;
  double occlusion_prob = 0.5;  // chance that a sequence gets an occlusion event
  int min_shapes = 1;
  int max_shapes = 3;
};

SynthScene make_scene(Rng& rng, const SynthParams& p);

// Shape center at frame t under border-bouncing linear motion.
std::pair<float, float> shape_center(const SynthScene& scene, const SynthShape& s, int t);

// Renders frame t; per-shape coverage masks (size*size bools) land in
// `masks` when given, computed before occluders are painted.
Image render_frame(const SynthScene& scene, int t,
                   std::vector<std::vector<bool>>* masks = nullptr);

std::vector<BoxLabel> scene_labels(const SynthScene& scene, int t);

// Writes train/test splits under out_root; returns scenes per split for
// callers that want the ground-truth geometry.
void synth_video_gen(const SynthParams& p, const std::string& out_root);

}  // namespace seqdet
