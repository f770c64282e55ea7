#include "seqdet/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "seqdet/parallel.hpp"

namespace seqdet {

double iou(const Box& a, const Box& b) {
  const double ax0 = double(a.cx) - double(a.w) / 2, ax1 = double(a.cx) + double(a.w) / 2;
  const double ay0 = double(a.cy) - double(a.h) / 2, ay1 = double(a.cy) + double(a.h) / 2;
  const double bx0 = double(b.cx) - double(b.w) / 2, bx1 = double(b.cx) + double(b.w) / 2;
  const double by0 = double(b.cy) - double(b.h) / 2, by1 = double(b.cy) + double(b.h) / 2;
  const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

namespace {

bool det_order(const Detection& a, const Detection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
  if (a.box.cy != b.box.cy) return a.box.cy < b.box.cy;
  if (a.box.w != b.box.w) return a.box.w < b.box.w;
  if (a.box.h != b.box.h) return a.box.h < b.box.h;
  return a.class_id < b.class_id;
}

}  // namespace

std::vector<Detection> nms(const std::vector<Detection>& dets, double conf_thresh,
                           double iou_thresh) {
  std::vector<Detection> sorted;
  for (const auto& d : dets)
    if (d.confidence >= conf_thresh) sorted.push_back(d);
  std::sort(sorted.begin(), sorted.end(), det_order);

  std::vector<Detection> kept;
  for (const auto& d : sorted) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id != d.class_id) continue;
      if (iou(k.box, d.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

namespace {

struct RankedPred {
  int image = 0;
  Detection det;
};

// Cumulative PR points for one class, predictions confidence-descending,
// each matching at most one still-unmatched ground truth at IoU >= thresh.
std::vector<std::pair<double, double>> pr_points(const std::vector<EvalSample>& samples,
                                                 int class_id, double iou_thresh,
                                                 std::int64_t* gt_total_out) {
  std::vector<RankedPred> preds;
  std::int64_t gt_total = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    for (const auto& p : samples[i].preds)
      if (p.class_id == class_id) preds.push_back({static_cast<int>(i), p});
    for (const auto& g : samples[i].gts)
      if (g.class_id == class_id) ++gt_total;
  }
  if (gt_total_out) *gt_total_out = gt_total;
  std::sort(preds.begin(), preds.end(), [](const RankedPred& a, const RankedPred& b) {
    if (a.det.confidence != b.det.confidence) return a.det.confidence > b.det.confidence;
    if (a.image != b.image) return a.image < b.image;
    return det_order(a.det, b.det);
  });

  std::vector<std::vector<bool>> used(samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    used[i].assign(samples[i].gts.size(), false);

  std::vector<std::pair<double, double>> points;  // (recall, precision)
  std::int64_t tp = 0, fp = 0;
  for (const auto& rp : preds) {
    const auto& gts = samples[static_cast<size_t>(rp.image)].gts;
    double best_iou = 0.0;
    int best_gt = -1;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (gts[gi].class_id != class_id || used[static_cast<size_t>(rp.image)][gi]) continue;
      const double v = iou(rp.det.box, gts[gi].box);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0) {
      used[static_cast<size_t>(rp.image)][static_cast<size_t>(best_gt)] = true;
      ++tp;
    } else {
      ++fp;
    }
    if (gt_total > 0)
      points.emplace_back(double(tp) / double(gt_total), double(tp) / double(tp + fp));
  }
  return points;
}

double ap_101(const std::vector<std::pair<double, double>>& points) {
  if (points.empty()) return 0.0;
  double total = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    double best = 0.0;
    for (const auto& [recall, precision] : points)
      if (recall >= r) best = std::max(best, precision);
    total += best;
  }
  return total / 101.0;
}

}  // namespace

std::map<int, double> average_precision(const std::vector<EvalSample>& samples,
                                        double iou_thresh) {
  std::set<int> classes;
  for (const auto& s : samples)
    for (const auto& g : s.gts) classes.insert(g.class_id);
  std::map<int, double> ap;
  for (int c : classes) {
    std::int64_t gt_total = 0;
    const auto points = pr_points(samples, c, iou_thresh, &gt_total);
    if (gt_total == 0) continue;  // AP undefined without ground truth
    ap[c] = ap_101(points);
  }
  return ap;
}

std::pair<double, double> map_50_95(const std::vector<EvalSample>& samples) {
  const auto thresholds = map_thresholds();
  double map50 = 0.0;
  double sum_all_t = 0.0;
  int counted = 0;
  for (size_t ti = 0; ti < thresholds.size(); ++ti) {
    const auto ap = average_precision(samples, thresholds[ti]);
    if (ap.empty()) continue;
    double mean = 0.0;
    for (const auto& [c, v] : ap) mean += v;
    mean /= static_cast<double>(ap.size());
    if (ti == 0) map50 = mean;
    sum_all_t += mean;
    ++counted;
  }
  return {map50, counted ? sum_all_t / counted : 0.0};
}

std::vector<std::pair<double, double>> pr_curve(const std::vector<EvalSample>& samples,
                                                int class_id, double iou_thresh) {
  std::int64_t gt_total = 0;
  return pr_points(samples, class_id, iou_thresh, &gt_total);
}

void write_pr_curves_csv(const std::string& path, const std::vector<EvalSample>& samples,
                         double iou_thresh) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "class,recall,precision\n";
  std::set<int> classes;
  for (const auto& s : samples)
    for (const auto& g : s.gts) classes.insert(g.class_id);
  for (int c : classes)
    for (const auto& [r, p] : pr_curve(samples, c, iou_thresh))
      os << c << "," << r << "," << p << "\n";
}

EvalReport evaluate_samples(const std::vector<EvalSample>& samples) {
  EvalReport rep;
  const auto thresholds = map_thresholds();
  std::set<int> classes;
  for (const auto& s : samples)
    for (const auto& g : s.gts) classes.insert(g.class_id);
  for (size_t ti = 0; ti < thresholds.size(); ++ti) {
    const auto ap = average_precision(samples, thresholds[ti]);
    for (const auto& [c, v] : ap) {
      auto& row = rep.per_class_ap[c];
      row.resize(thresholds.size(), 0.0);
      row[ti] = v;
    }
  }
  auto [m50, m5095] = map_50_95(samples);
  rep.map50 = m50;
  rep.map50_95 = m5095;
  rep.cpu_model = cpu_model_string();
  rep.threads = num_threads();
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["map50"] = map50;
  j["map50_95"] = map50_95;
  j["fps"] = fps;
  j["t_model_ms"] = t_model_ms;
  j["t_nms_ms"] = t_nms_ms;
  j["cpu_model"] = cpu_model;
  j["threads"] = threads;
  j["precision"] = precision;
  nlohmann::json ap = nlohmann::json::object();
  for (const auto& [c, row] : per_class_ap) ap[std::to_string(c)] = row;
  j["per_class_ap"] = ap;
  nlohmann::json th = nlohmann::json::array();
  for (double t : map_thresholds()) th.push_back(t);
  j["iou_thresholds"] = th;
  return j;
}

FpsResult fps_benchmark(const std::function<std::vector<Detection>()>& model_once,
                        double conf_thresh, double iou_thresh, int warmup, int runs) {
  if (runs < 30) throw std::invalid_argument("fps_benchmark: need at least 30 runs");
  if (warmup < 5) throw std::invalid_argument("fps_benchmark: need at least 5 warmup runs");
  using clock = std::chrono::steady_clock;

  std::vector<double> t_model, t_nms;
  std::vector<Detection> last;
  for (int i = 0; i < warmup + runs; ++i) {
    const auto a = clock::now();
    auto dets = model_once();
    const auto b = clock::now();
    auto kept = nms(dets, conf_thresh, iou_thresh);
    const auto c = clock::now();
    if (i >= warmup) {
      t_model.push_back(std::chrono::duration<double, std::milli>(b - a).count());
      t_nms.push_back(std::chrono::duration<double, std::milli>(c - b).count());
    }
    last = std::move(kept);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  FpsResult r;
  r.t_model_ms = median(t_model);
  r.t_nms_ms = median(t_nms);
  r.fps = 1000.0 / (r.t_model_ms + r.t_nms_ms);
  r.runs = runs;
  r.warmup = warmup;
  return r;
}

std::string cpu_model_string() {
  std::ifstream is("/proc/cpuinfo");
  std::string line;
  while (std::getline(is, line)) {
    const auto pos = line.find("model name");
    if (pos != std::string::npos) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string name = line.substr(colon + 1);
        while (!name.empty() && name.front() == ' ') name.erase(name.begin());
        return name;
      }
    }
  }
  return "unknown";
}

}  // namespace seqdet
