#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "seqdet/gradcheck.hpp"
#include "seqdet/parallel.hpp"
#include "seqdet/serialize.hpp"
#include "seqdet/train.hpp"

using namespace seqdet;
namespace fs = std::filesystem;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

DetectorConfig micro_config(TemporalKind temporal = TemporalKind::kNone) {
  DetectorConfig c = DetectorConfig::for_variant(Variant::kSmall, 64);
  c.channels = {16, 32, 64};
  c.temporal = temporal;
  c.seed = 3;
  return c;
}

struct TempDataset {
  fs::path root;
  DatasetManifest train, test;
  explicit TempDataset(const std::string& name, int seqs = 4, int frames = 4,
                       std::uint64_t seed = 11) {
    root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    SynthParams p;
    p.seed = seed;
    p.sequences = seqs;
    p.test_sequences = 2;
    p.frames = frames;
    p.size = 64;
    synth_video_gen(p, root.string());
    train = load_dataset(root.string(), "train", DatasetMode::kTemporal);
    test = load_dataset(root.string(), "test", DatasetMode::kTemporal);
    train.preload();
    test.preload();
  }
  ~TempDataset() { fs::remove_all(root); }
};

LossConfig micro_loss_config() {
  LossConfig lc;
  lc.anchors = DetectorConfig::for_variant(Variant::kSmall, 64).anchors;
  lc.num_classes = 3;
  lc.input_size = 64;
  return lc;
}

}  // namespace

TEST_CASE("saturated logits decoded exactly onto the targets drive the loss to zero") {
  LossConfig lc = micro_loss_config();
  std::vector<std::vector<BoxLabel>> targets(1);
  targets[0].push_back(BoxLabel{1, 0.43f, 0.52f, 0.28f, 0.22f});

  std::array<Tensord, 3> raw = {Tensord::zeros({1, 3, 8, 8, 8}),
                                Tensord::zeros({1, 3, 4, 4, 8}),
                                Tensord::zeros({1, 3, 2, 2, 8})};
  // silence everything, then shape each matched cell onto its target
  for (auto& r : raw)
    for (std::int64_t i = 0; i < r.numel(); ++i)
      if (i % 8 == 4) r.at(i) = -30.0;

  LossConfig lcd = lc;
  for (const auto& a : assign_targets(targets, lcd)) {
    Tensord& r = raw[static_cast<size_t>(a.scale)];
    const std::int64_t H = r.dim(2), W = r.dim(3);
    const double stride = lcd.strides[static_cast<size_t>(a.scale)];
    const auto& anchor = lcd.anchors[static_cast<size_t>(a.scale * 3 + a.anchor)];
    double* v = r.data() + (((a.image * 3 + a.anchor) * H + a.gy) * W + a.gx) * 8;
    v[0] = logit((a.tcx / stride - double(a.gx) + 0.5) / 2.0);
    v[1] = logit((a.tcy / stride - double(a.gy) + 0.5) / 2.0);
    v[2] = logit(std::sqrt(a.tw / anchor[0]) / 2.0);
    v[3] = logit(std::sqrt(a.th / anchor[1]) / 2.0);
    v[4] = 30.0;
    for (int c = 0; c < 3; ++c) v[5 + c] = (c == a.class_id) ? 30.0 : -30.0;
  }

  auto loss = detection_loss<double>(raw, targets, lcd);
  CHECK(loss.box < 1e-6);
  CHECK(loss.obj < 1e-6);
  CHECK(loss.cls < 1e-6);
  CHECK(loss.total.item() < 1e-6);
}

TEST_CASE("empty target set leaves only a well-defined objectness term") {
  LossConfig lc = micro_loss_config();
  std::vector<std::vector<BoxLabel>> targets(2);
  std::array<Tensord, 3> raw = {Tensord::full({2, 3, 8, 8, 8}, -20.0),
                                Tensord::full({2, 3, 4, 4, 8}, -20.0),
                                Tensord::full({2, 3, 2, 2, 8}, -20.0)};
  auto loss = detection_loss<double>(raw, targets, lc);
  CHECK(loss.box == 0.0);
  CHECK(loss.cls == 0.0);
  CHECK(loss.obj < 1e-6);
  CHECK(std::isfinite(loss.total.item()));
}

TEST_CASE("loss gradient w.r.t. raw predictions matches finite differences") {
  LossConfig lc = micro_loss_config();
  std::vector<std::vector<BoxLabel>> targets(1);
  targets[0].push_back(BoxLabel{0, 0.4f, 0.45f, 0.3f, 0.3f});
  targets[0].push_back(BoxLabel{2, 0.7f, 0.6f, 0.2f, 0.25f});

  Rng rng(7);
  std::function<Tensord(std::vector<Tensord>&)> f = [&](std::vector<Tensord>& in) {
    std::array<Tensord, 3> raw = {in[0], in[1], in[2]};
    return detection_loss<double>(raw, targets, lc).total;
  };
  std::vector<Tensord> inputs = {Tensord::uniform({1, 3, 8, 8, 8}, rng, -1.5, 1.5),
                                 Tensord::uniform({1, 3, 4, 4, 8}, rng, -1.5, 1.5),
                                 Tensord::uniform({1, 3, 2, 2, 8}, rng, -1.5, 1.5)};
  CHECK(grad_check<double>(f, inputs, 1e-5, 3000, 42) < 1e-3);
}

TEST_CASE("anchor assignment respects the shape-ratio gate and neighbour cells") {
  LossConfig lc = micro_loss_config();
  std::vector<std::vector<BoxLabel>> targets(1);
  targets[0].push_back(BoxLabel{0, 0.5f, 0.5f, 0.25f, 0.25f});
  auto as = assign_targets(targets, lc);
  REQUIRE(!as.empty());
  for (const auto& a : as) {
    const auto& anchor = lc.anchors[static_cast<size_t>(a.scale * 3 + a.anchor)];
    const float rw = std::max(a.tw / anchor[0], anchor[0] / a.tw);
    const float rh = std::max(a.th / anchor[1], anchor[1] / a.th);
    CHECK(std::max(rw, rh) < lc.anchor_ratio_thresh);
    const double stride = lc.strides[static_cast<size_t>(a.scale)];
    const double dx = a.tcx / stride - double(a.gx);
    const double dy = a.tcy / stride - double(a.gy);
    CHECK(dx > -0.5);
    CHECK(dx < 1.5);
    CHECK(dy > -0.5);
    CHECK(dy < 1.5);
  }
}

TEST_CASE("frozen backbone and neck stay bitwise fixed while the head moves") {
  TempDataset ds("seqdet_train_freeze");
  auto model = DetectorModel::create(micro_config(TemporalKind::kQrnn));

  // snapshot a static checkpoint to start from
  auto static_model = DetectorModel::create(micro_config(TemporalKind::kNone));
  const auto ckpt = (ds.root / "static.ckpt").string();
  static_model.save_checkpoint(ckpt);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.steps_per_epoch = 5;
  cfg.eval_every = 100;  // skip scoring; this test watches the weights
  cfg.freeze_policy = "through_neck";
  cfg.seed = 5;
  const auto out = (ds.root / "run").string();

  std::map<std::string, std::vector<float>> before;
  // capture what the frozen region should stay equal to: the checkpoint
  {
    auto probe = DetectorModel::create(micro_config(TemporalKind::kQrnn));
    probe.load_weights(TensorArchive::load(ckpt));
    probe.visit_params([&](const std::string& n, Tensorf& t) {
      before[n].assign(t.data(), t.data() + t.numel());
    });
    probe.visit_buffers([&](const std::string& n, Tensorf& t) {
      before[n].assign(t.data(), t.data() + t.numel());
    });
  }

  auto result = train_temporal(model, ckpt, ds.train, ds.test, cfg, out);
  CHECK(result.history.size() == 2);

  bool head_changed = false;
  model.visit_params([&](const std::string& n, Tensorf& t) {
    const bool frozen = n.rfind("backbone.", 0) == 0 || n.rfind("neck.", 0) == 0;
    if (frozen) {
      const auto& b = before.at(n);
      for (std::int64_t i = 0; i < t.numel(); ++i)
        REQUIRE(t.at(i) == b[static_cast<size_t>(i)]);
    } else if (n.rfind("head.", 0) == 0) {
      const auto& b = before.at(n);
      for (std::int64_t i = 0; i < t.numel(); ++i)
        if (t.at(i) != b[static_cast<size_t>(i)]) head_changed = true;
    }
  });
  model.visit_buffers([&](const std::string& n, Tensorf& t) {
    const auto& b = before.at(n);  // running stats locked under freeze
    for (std::int64_t i = 0; i < t.numel(); ++i)
      REQUIRE(t.at(i) == b[static_cast<size_t>(i)]);
  });
  CHECK(head_changed);
}

TEST_CASE("optimizer parameter census matches total minus frozen") {
  auto model = DetectorModel::create(micro_config(TemporalKind::kQrnn));
  const std::int64_t total = model.parameter_count(false);
  freeze_through_neck(model);
  const std::int64_t trainable = model.parameter_count(true);
  CHECK(trainable < total);

  std::int64_t frozen_count = 0, head_cell_count = 0;
  model.visit_params([&](const std::string& n, Tensorf& t) {
    if (n.rfind("backbone.", 0) == 0 || n.rfind("neck.", 0) == 0)
      frozen_count += t.numel();
    else
      head_cell_count += t.numel();
  });
  CHECK(trainable == head_cell_count);
  CHECK(total == frozen_count + head_cell_count);

  std::vector<Tensorf> params;
  model.visit_trainable([&](const std::string&, Tensorf& t) { params.push_back(t); });
  Sgd opt(params, 0.937, 5e-4);
  CHECK(opt.parameter_count() == trainable);
}

TEST_CASE("zero learning rate leaves weights and scores unchanged") {
  TempDataset ds("seqdet_train_lr0");
  auto model = DetectorModel::create(micro_config());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.steps_per_epoch = 3;
  cfg.lr0 = 0.0;
  cfg.lrf = 0.0;
  cfg.warmup_epochs = 0;
  cfg.eval_every = 1;
  cfg.seed = 6;

  std::map<std::string, std::vector<float>> before;
  model.visit_params([&](const std::string& n, Tensorf& t) {
    before[n].assign(t.data(), t.data() + t.numel());
  });
  auto result = train_static(model, ds.train, ds.test, cfg, (ds.root / "run").string());
  model.visit_params([&](const std::string& n, Tensorf& t) {
    const auto& b = before.at(n);
    for (std::int64_t i = 0; i < t.numel(); ++i)
      REQUIRE(t.at(i) == b[static_cast<size_t>(i)]);
  });
  REQUIRE(result.history.size() == 2);
  CHECK(result.history[0].map50_95 == doctest::Approx(result.history[1].map50_95).epsilon(1e-12));
}

TEST_CASE("best checkpoint stores the maximum of the per-epoch scores") {
  TempDataset ds("seqdet_train_best");
  auto model = DetectorModel::create(micro_config());
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.steps_per_epoch = 4;
  cfg.eval_every = 1;
  cfg.seed = 7;
  cfg.lr0 = 0.02;
  auto result = train_static(model, ds.train, ds.test, cfg, (ds.root / "run").string());
  REQUIRE(result.history.size() == 3);
  double max_seen = -1;
  for (const auto& h : result.history) max_seen = std::max(max_seen, h.map50_95);
  CHECK(result.best_map50_95 == doctest::Approx(max_seen));

  nlohmann::json meta;
  auto best = DetectorModel::load_checkpoint(result.best_checkpoint, &meta);
  CHECK(meta.at("map50_95").get<double>() == doctest::Approx(result.best_map50_95));
  CHECK(meta.contains("rng_state"));

  // reloading reproduces the recorded score exactly
  auto rep = evaluate_model(best, ds.test, cfg.eval_conf, cfg.eval_iou);
  CHECK(std::abs(rep.map50_95 - meta.at("map50_95").get<double>()) < 1e-9);
}

TEST_CASE("identical seeds give identical loss trajectories (reference mode)") {
  set_num_threads(1);
  TempDataset ds("seqdet_train_det");
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  cfg.steps_per_epoch = 3;
  cfg.eval_every = 100;
  cfg.seed = 12;
  cfg.augment = AugmentPipeline::preset({Technique::kRandomBlur, Technique::kGaussianNoise});

  auto run = [&](const std::string& tag) {
    auto model = DetectorModel::create(micro_config());
    return train_static(model, ds.train, ds.test, cfg, (ds.root / tag).string());
  };
  auto a = run("a");
  auto b = run("b");
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].total == b.history[i].total);
    REQUIRE(a.history[i].box == b.history[i].box);
    REQUIRE(a.history[i].obj == b.history[i].obj);
  }
  set_num_threads(0);
}

TEST_CASE("smoke run: epoch loss decreases through the first epochs on a toy set") {
  TempDataset ds("seqdet_train_smoke", /*seqs=*/8, /*frames=*/4, /*seed=*/21);
  int ok = 0;
  std::string log;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfgm = micro_config();
    cfgm.channels = {8, 16, 32};
    cfgm.seed = seed;
    auto model = DetectorModel::create(cfgm);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 8;
    cfg.steps_per_epoch = 32;  // epoch mean over 256 samples keeps noise low
    cfg.eval_every = 100;
    cfg.seed = seed;
    cfg.lr0 = 0.02;
    cfg.lrf = 1.0;  // flat rate after warmup; descent stays above sampling noise
    auto r = train_static(model, ds.train, ds.test, cfg,
                          (ds.root / ("smoke" + std::to_string(seed))).string());
    bool decreasing = true;
    log += "seed " + std::to_string(seed) + ":";
    for (size_t i = 0; i < r.history.size(); ++i) {
      log += " " + std::to_string(r.history[i].total);
      if (i > 0) decreasing = decreasing && r.history[i].total < r.history[i - 1].total;
    }
    log += "\n";
    ok += decreasing ? 1 : 0;
  }
  INFO(log);
  CHECK(ok >= 9);
}

TEST_CASE("training log csv has the full schema") {
  std::vector<EpochLog> hist(2);
  hist[0].epoch = 0;
  hist[1].epoch = 1;
  const std::string path = "train_log_schema.csv";
  write_train_log_csv(path, hist);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "epoch,box_loss,obj_loss,cls_loss,total_loss,map50,map50_95,lr,wall_ms");
  std::remove(path.c_str());
}
