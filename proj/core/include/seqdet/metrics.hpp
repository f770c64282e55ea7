#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace seqdet {

// Axis-aligned box in (cx, cy, w, h), pixel units unless noted.
struct Box {
  float cx = 0, cy = 0, w = 0, h = 0;
};

struct Detection {
  Box box;
  int class_id = 0;
  float confidence = 0;
};

struct GtBox {
  Box box;
  int class_id = 0;
};

// Predictions and ground truth for one image/frame.
struct EvalSample {
  std::vector<Detection> preds;
  std::vector<GtBox> gts;
};

double iou(const Box& a, const Box& b);

// Class-wise greedy suppression: keep the highest-confidence box, drop
// overlapping boxes of the same class with IoU > iou_thresh. Output sorted by
// confidence descending with a lexicographic tie-break on box coordinates, so
// the result is independent of input order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double conf_thresh,
                           double iou_thresh);

// Per-class average precision (101-point interpolation) at one IoU
// threshold. Classes absent from the ground truth are omitted.
std::map<int, double> average_precision(const std::vector<EvalSample>& samples,
                                        double iou_thresh);

// (mAP at 0.50, mean over thresholds 0.50:0.05:0.95)
std::pair<double, double> map_50_95(const std::vector<EvalSample>& samples);

inline std::vector<double> map_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

// recall/precision pairs of the raw PR curve for one class
std::vector<std::pair<double, double>> pr_curve(const std::vector<EvalSample>& samples,
                                                int class_id, double iou_thresh);
void write_pr_curves_csv(const std::string& path, const std::vector<EvalSample>& samples,
                         double iou_thresh);

struct EvalReport {
  std::map<int, std::vector<double>> per_class_ap;  // class -> AP per threshold
  double map50 = 0;
  double map50_95 = 0;
  double fps = 0;
  double t_model_ms = 0;
  double t_nms_ms = 0;
  std::string cpu_model;
  int threads = 0;
  std::string precision = "float32";

  nlohmann::json to_json() const;
};

EvalReport evaluate_samples(const std::vector<EvalSample>& samples);

// Times `model_once` (one frame, batch 1) and the NMS pass separately and
// combines them as fps = 1000 / (t_model + t_nms), medians over `runs`.
struct FpsResult {
  double t_model_ms = 0;
  double t_nms_ms = 0;
  double fps = 0;
  int runs = 0;
  int warmup = 0;
};

FpsResult fps_benchmark(const std::function<std::vector<Detection>()>& model_once,
                        double conf_thresh, double iou_thresh, int warmup, int runs);

std::string cpu_model_string();

}  // namespace seqdet
