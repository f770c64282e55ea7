#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "seqdet/augment.hpp"
#include "seqdet/dataset.hpp"
#include "seqdet/detector.hpp"
#include "seqdet/loss.hpp"
#include "seqdet/metrics.hpp"

namespace seqdet {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 8;
  int seq_len = 2;
  double lr0 = 0.01;
  double lrf = 0.1;  // cosine floor as a fraction of lr0
  double momentum = 0.937;
  double weight_decay = 5e-4;
  int warmup_epochs = 3;
  std::string freeze_policy = "none";  // none | through_neck
  AugmentPipeline augment;
  int eval_every = 1;
  std::uint64_t seed = 0;
  double eval_conf = 0.001;
  double eval_iou = 0.45;
  int steps_per_epoch = 0;       // 0 = one pass over the training frames
  double early_stop_map50 = -1;  // stop once the watched split reaches this
  std::string early_stop_split = "train";

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochLog {
  int epoch = 0;
  double box = 0, obj = 0, cls = 0, total = 0;
  double map50 = 0, map50_95 = 0;
  double lr = 0;
  double wall_ms = 0;
};

struct TrainResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_map50 = 0;
  double best_map50_95 = 0;
  int best_epoch = -1;
  bool early_stopped = false;
  std::vector<EpochLog> history;
};

// SGD with momentum; weight decay applies to tensors of rank >= 2.
class Sgd {
 public:
  explicit Sgd(std::vector<Tensorf> params, double momentum, double weight_decay);
  void step(double lr);
  void zero_grad();
  std::int64_t parameter_count() const;

 private:
  std::vector<Tensorf> params_;
  std::vector<std::vector<float>> velocity_;
  double momentum_, weight_decay_;
};

double cosine_lr(const TrainConfig& cfg, double fractional_epoch);

Tensorf image_to_tensor(const Image& im);
// [B, T, 3, S, S] plus per-row (b*T + t) label lists
Tensorf clips_to_tensor(const std::vector<LabeledSequence>& clips,
                        std::vector<std::vector<BoxLabel>>* row_labels);

LossConfig loss_config_for(const DetectorConfig& cfg);

// Streams every sequence of the split through the model (state reset per
// video) and scores detections against the labels.
EvalReport evaluate_model(DetectorModel& model, const DatasetManifest& data, double conf_thresh,
                          double iou_thresh);

void freeze_through_neck(DetectorModel& model);

// Stage 1: per-frame training of the static detector (temporal modules off).
TrainResult train_static(DetectorModel& model, DatasetManifest& train,
                         const DatasetManifest& test, const TrainConfig& cfg,
                         const std::string& out_dir);

// Stage 2: loads the static checkpoint, freezes backbone through neck, warm
// starts the temporal cells, and fine-tunes cells + head on clips.
TrainResult train_temporal(DetectorModel& model, const std::string& static_checkpoint,
                           DatasetManifest& train, const DatasetManifest& test,
                           const TrainConfig& cfg, const std::string& out_dir);

void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& history);

}  // namespace seqdet
