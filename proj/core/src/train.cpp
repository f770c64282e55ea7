#include "seqdet/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "seqdet/serialize.hpp"

namespace fs = std::filesystem;

namespace seqdet {

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seq_len"] = seq_len;
  j["lr0"] = lr0;
  j["lrf"] = lrf;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["warmup_epochs"] = warmup_epochs;
  j["freeze_policy"] = freeze_policy;
  j["augment"] = augment.to_json();
  j["eval_every"] = eval_every;
  j["seed"] = seed;
  j["eval_conf"] = eval_conf;
  j["eval_iou"] = eval_iou;
  j["steps_per_epoch"] = steps_per_epoch;
  j["early_stop_map50"] = early_stop_map50;
  j["early_stop_split"] = early_stop_split;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", 200);
  c.batch_size = j.value("batch_size", 8);
  c.seq_len = j.value("seq_len", 2);
  c.lr0 = j.value("lr0", 0.01);
  c.lrf = j.value("lrf", 0.1);
  c.momentum = j.value("momentum", 0.937);
  c.weight_decay = j.value("weight_decay", 5e-4);
  c.warmup_epochs = j.value("warmup_epochs", 3);
  c.freeze_policy = j.value("freeze_policy", "none");
  if (j.contains("augment")) c.augment = AugmentPipeline::from_json(j.at("augment"));
  c.eval_every = j.value("eval_every", 1);
  c.seed = j.value("seed", 0ull);
  c.eval_conf = j.value("eval_conf", 0.001);
  c.eval_iou = j.value("eval_iou", 0.45);
  c.steps_per_epoch = j.value("steps_per_epoch", 0);
  c.early_stop_map50 = j.value("early_stop_map50", -1.0);
  c.early_stop_split = j.value("early_stop_split", "train");
  require(c.epochs >= 1 && c.batch_size >= 1, "train config: epochs and batch_size must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

Sgd::Sgd(std::vector<Tensorf> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i)
    velocity_[i].assign(static_cast<size_t>(params_[i].numel()), 0.f);
}

void Sgd::step(double lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensorf& p = params_[i];
    if (!p.has_grad()) continue;
    const bool decay = p.shape().size() >= 2;
    float* w = p.data();
    const float* g = p.grad().data();
    float* v = velocity_[i].data();
    const float m = static_cast<float>(momentum_);
    const float wd = decay ? static_cast<float>(weight_decay_) : 0.f;
    const float step_lr = static_cast<float>(lr);
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      const float grad = g[j] + wd * w[j];
      v[j] = m * v[j] + grad;
      w[j] -= step_lr * v[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::int64_t Sgd::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

double cosine_lr(const TrainConfig& cfg, double fractional_epoch) {
  if (cfg.warmup_epochs > 0 && fractional_epoch < cfg.warmup_epochs)
    return cfg.lr0 * (0.1 + 0.9 * fractional_epoch / cfg.warmup_epochs);
  const double span = std::max(1.0, double(cfg.epochs) - cfg.warmup_epochs);
  const double t = std::min(1.0, (fractional_epoch - cfg.warmup_epochs) / span);
  const double floor = cfg.lr0 * cfg.lrf;
  return floor + (cfg.lr0 - floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---------------------------------------------------------------------------
// Tensor packing
// ---------------------------------------------------------------------------

Tensorf image_to_tensor(const Image& im) {
  Tensorf t = Tensorf::zeros({1, 3, im.height, im.width});
  float* d = t.data();
  const std::int64_t plane = static_cast<std::int64_t>(im.height) * im.width;
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c)
        d[c * plane + y * im.width + x] = im.at(y, x, c);
  return t;
}

Tensorf clips_to_tensor(const std::vector<LabeledSequence>& clips,
                        std::vector<std::vector<BoxLabel>>* row_labels) {
  require(!clips.empty() && !clips[0].frames.empty(), "clips_to_tensor: empty batch");
  const std::int64_t B = static_cast<std::int64_t>(clips.size());
  const std::int64_t T = clips[0].length();
  const int S = clips[0].frames[0].height;
  Tensorf t = Tensorf::zeros({B, T, 3, S, S});
  float* d = t.data();
  const std::int64_t plane = static_cast<std::int64_t>(S) * S;
  if (row_labels) row_labels->clear();
  for (std::int64_t b = 0; b < B; ++b) {
    require(clips[static_cast<size_t>(b)].length() == T,
            "clips_to_tensor: ragged clip lengths in one batch");
    for (std::int64_t f = 0; f < T; ++f) {
      const Image& im = clips[static_cast<size_t>(b)].frames[static_cast<size_t>(f)];
      require(im.height == S && im.width == S, "clips_to_tensor: mixed frame sizes");
      float* dst = d + ((b * T + f) * 3) * plane;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
          for (int c = 0; c < 3; ++c) dst[c * plane + y * S + x] = im.at(y, x, c);
      if (row_labels)
        row_labels->push_back(clips[static_cast<size_t>(b)].labels[static_cast<size_t>(f)]);
    }
  }
  return t;
}

LossConfig loss_config_for(const DetectorConfig& cfg) {
  LossConfig lc;
  lc.anchors = cfg.anchors;
  lc.strides = cfg.strides;
  lc.num_classes = cfg.num_classes;
  lc.input_size = cfg.input_size;
  return lc;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalReport evaluate_model(DetectorModel& model, const DatasetManifest& data, double conf_thresh,
                          double iou_thresh) {
  NoGradGuard no_grad;
  std::vector<EvalSample> samples;
  const float S = static_cast<float>(model.config.input_size);
  for (std::int64_t si = 0; si < static_cast<std::int64_t>(data.sequences.size()); ++si) {
    LabeledSequence seq = load_clip(data, si, 0, data.sequences[static_cast<size_t>(si)].frame_count());
    StreamState state = model.make_state();  // fresh per video
    for (std::int64_t t = 0; t < seq.length(); ++t) {
      EvalSample sample;
      sample.preds = model.detect_stream(image_to_tensor(seq.frames[static_cast<size_t>(t)]),
                                         state, conf_thresh, iou_thresh);
      for (const auto& b : seq.labels[static_cast<size_t>(t)]) {
        GtBox g;
        g.class_id = b.class_id;
        g.box = Box{b.cx * S, b.cy * S, b.w * S, b.h * S};
        sample.gts.push_back(g);
      }
      samples.push_back(std::move(sample));
    }
  }
  return evaluate_samples(samples);
}

void freeze_through_neck(DetectorModel& model) { model.backbone_neck_frozen = true; }

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

std::vector<Tensorf> collect_trainable(DetectorModel& model) {
  std::vector<Tensorf> params;
  auto grab = [&](const std::string&, Tensorf& t) { params.push_back(t); };
  if (model.backbone_neck_frozen)
    model.visit_trainable(grab);
  else
    model.visit_params(grab);
  return params;
}

struct BestTracker {
  double map50 = -1, map50_95 = -1;
  int epoch = -1;
};

TrainResult run_training(DetectorModel& model, DatasetManifest& train,
                         const DatasetManifest& test, const TrainConfig& cfg,
                         const std::string& out_dir, const std::string& stage) {
  require(!train.sequences.empty(), "training: empty train split");
  fs::create_directories(fs::path(out_dir) / "checkpoints");
  fs::create_directories(fs::path(out_dir) / "logs");
  if (!train.preloaded()) train.preload();

  const int seq_len = stage == "static" ? 1 : cfg.seq_len;
  Rng master(cfg.seed);
  Sgd opt(collect_trainable(model), cfg.momentum, cfg.weight_decay);

  std::int64_t steps = cfg.steps_per_epoch;
  if (steps <= 0) steps = (train.total_frames() + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult result;
  BestTracker best;
  const std::string best_path = (fs::path(out_dir) / "checkpoints" / "best.ckpt").string();
  const std::string last_path = (fs::path(out_dir) / "checkpoints" / "last.ckpt").string();
  const LossConfig loss_cfg = loss_config_for(model.config);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    Rng rng = master.fork(static_cast<std::uint64_t>(epoch));
    double box_acc = 0, obj_acc = 0, cls_acc = 0, total_acc = 0;

    for (std::int64_t step = 0; step < steps; ++step) {
      auto clips = sample_batch(train, cfg.batch_size, seq_len, rng);
      if (!cfg.augment.specs.empty()) {
        for (auto& clip : clips)
          clip = apply_pipeline(cfg.augment, clip, rng,
                                [&] { return sample_batch(train, 1, seq_len, rng)[0]; });
      }
      std::vector<std::vector<BoxLabel>> row_labels;
      Tensorf batch = clips_to_tensor(clips, &row_labels);
      auto raw = model.forward_clip(batch, /*training=*/true);
      auto loss = detection_loss<float>(raw, row_labels, loss_cfg);
      const double total = static_cast<double>(loss.total.item());
      if (!std::isfinite(total))
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step));
      opt.zero_grad();
      loss.total.backward();
      const double lr = cosine_lr(cfg, epoch + double(step) / double(steps));
      opt.step(lr);
      box_acc += loss.box;
      obj_acc += loss.obj;
      cls_acc += loss.cls;
      total_acc += total;
    }

    EpochLog log;
    log.epoch = epoch;
    log.box = box_acc / double(steps);
    log.obj = obj_acc / double(steps);
    log.cls = cls_acc / double(steps);
    log.total = total_acc / double(steps);
    log.lr = cosine_lr(cfg, epoch);

    const bool eval_now = (epoch % std::max(1, cfg.eval_every) == 0) || epoch == cfg.epochs - 1;
    if (eval_now) {
      auto rep = evaluate_model(model, test, cfg.eval_conf, cfg.eval_iou);
      log.map50 = rep.map50;
      log.map50_95 = rep.map50_95;
      if (rep.map50_95 > best.map50_95) {
        best.map50_95 = rep.map50_95;
        best.map50 = rep.map50;
        best.epoch = epoch;
        nlohmann::json meta;
        meta["stage"] = stage;
        meta["epoch"] = epoch;
        meta["map50"] = rep.map50;
        meta["map50_95"] = rep.map50_95;
        meta["rng_state"] = master.state();
        model.save_checkpoint(best_path, meta);
      }
    }
    log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            epoch_start)
                      .count();
    result.history.push_back(log);

    if (cfg.early_stop_map50 > 0 && eval_now) {
      double watched = log.map50;
      if (cfg.early_stop_split == "train") {
        auto rep = evaluate_model(model, train, cfg.eval_conf, cfg.eval_iou);
        watched = rep.map50;
      }
      if (watched >= cfg.early_stop_map50) {
        result.early_stopped = true;
        if (best.epoch < 0) {
          // ensure a checkpoint exists even if eval_every skipped scoring
          nlohmann::json meta;
          meta["stage"] = stage;
          meta["epoch"] = epoch;
          model.save_checkpoint(best_path, meta);
          best.epoch = epoch;
        }
        break;
      }
    }
  }

  {
    nlohmann::json meta;
    meta["stage"] = stage;
    meta["epoch"] = result.history.empty() ? 0 : result.history.back().epoch;
    meta["rng_state"] = master.state();
    model.save_checkpoint(last_path, meta);
  }
  result.best_checkpoint = best.epoch >= 0 ? best_path : last_path;
  result.last_checkpoint = last_path;
  result.best_map50 = best.map50;
  result.best_map50_95 = best.map50_95;
  result.best_epoch = best.epoch;
  write_train_log_csv((fs::path(out_dir) / "logs" / (stage + "_train_log.csv")).string(),
                      result.history);
  return result;
}

}  // namespace

TrainResult train_static(DetectorModel& model, DatasetManifest& train,
                         const DatasetManifest& test, const TrainConfig& cfg,
                         const std::string& out_dir) {
  require(model.config.temporal == TemporalKind::kNone,
          "train_static: use a model without temporal modules");
  DatasetManifest static_train = train;
  static_train.mode = DatasetMode::kStatic;
  return run_training(model, static_train, test, cfg, out_dir, "static");
}

TrainResult train_temporal(DetectorModel& model, const std::string& static_checkpoint,
                           DatasetManifest& train, const DatasetManifest& test,
                           const TrainConfig& cfg, const std::string& out_dir) {
  require(model.config.temporal != TemporalKind::kNone,
          "train_temporal: model has no temporal modules");
  require(cfg.freeze_policy == "through_neck",
          "train_temporal: the two-stage protocol freezes backbone through neck");

  TensorArchive arc = TensorArchive::load(static_checkpoint);
  auto missing = model.load_weights(arc);
  for (const auto& name : missing)
    require(name.rfind("qrnn.", 0) == 0 || name.rfind("convlstm.", 0) == 0,
            "static checkpoint is missing non-temporal tensor " + name);
  if (model.config.temporal == TemporalKind::kQrnn)
    model.init_passthrough_cells(0.25f);

  freeze_through_neck(model);
  require(train.mode == DatasetMode::kTemporal, "train_temporal: temporal dataset required");
  return run_training(model, train, test, cfg, out_dir, "temporal");
}

void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "epoch,box_loss,obj_loss,cls_loss,total_loss,map50,map50_95,lr,wall_ms\n";
  for (const auto& h : history)
    os << h.epoch << "," << h.box << "," << h.obj << "," << h.cls << "," << h.total << ","
       << h.map50 << "," << h.map50_95 << "," << h.lr << "," << h.wall_ms << "\n";
}

}  // namespace seqdet
