#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "seqdet/dataset.hpp"
#include "seqdet/image_io.hpp"

using namespace seqdet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<unsigned char> file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("generated dataset round-trips through the loader") {
  TempDir tmp("seqdet_ds_roundtrip");
  SynthParams p;
  p.seed = 5;
  p.sequences = 3;
  p.test_sequences = 1;
  p.frames = 6;
  p.size = 64;
  synth_video_gen(p, tmp.path.string());

  auto m = load_dataset(tmp.path.string(), "train", DatasetMode::kTemporal);
  CHECK(m.sequences.size() == 3);
  CHECK(m.total_frames() == 18);
  CHECK(m.classes == kDefaultClasses);

  // labels on disk equal the analytic scene labels bit for bit (%.9g floats)
  Rng rng(p.seed);
  SynthScene scene0 = make_scene(rng, p);
  auto clip = load_clip(m, 0, 0, p.frames);
  for (int t = 0; t < p.frames; ++t) {
    auto expect = scene_labels(scene0, t);
    const auto& got = clip.labels[static_cast<size_t>(t)];
    REQUIRE(got.size() == expect.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].class_id == expect[i].class_id);
      CHECK(got[i].cx == expect[i].cx);
      CHECK(got[i].cy == expect[i].cy);
      CHECK(got[i].w == expect[i].w);
      CHECK(got[i].h == expect[i].h);
    }
  }
}

TEST_CASE("same seed produces a bit-identical dataset") {
  TempDir a("seqdet_ds_det_a"), b("seqdet_ds_det_b");
  SynthParams p;
  p.seed = 99;
  p.sequences = 2;
  p.test_sequences = 1;
  p.frames = 3;
  synth_video_gen(p, a.path.string());
  synth_video_gen(p, b.path.string());
  for (const auto& rel : {"train/seq_0000/000000.png", "train/seq_0001/000002.png",
                          "test/seq_0000/000001.png", "train/seq_0000/000001.txt"}) {
    REQUIRE(file_bytes(a.path / rel) == file_bytes(b.path / rel));
  }
}

TEST_CASE("empty label file means a valid background frame") {
  TempDir tmp("seqdet_ds_empty");
  fs::create_directories(tmp.path / "train" / "vid");
  write_png((tmp.path / "train/vid/000000.png").string(), Image::filled(32, 32, 0.5f));
  std::ofstream(tmp.path / "train/vid/000000.txt");
  auto m = load_dataset(tmp.path.string(), "train", DatasetMode::kTemporal);
  auto clip = load_clip(m, 0, 0, 1);
  CHECK(clip.labels[0].empty());
}

TEST_CASE("out-of-range coordinates and missing labels are itemized with paths") {
  TempDir tmp("seqdet_ds_bad");
  fs::create_directories(tmp.path / "train" / "vid");
  write_png((tmp.path / "train/vid/000000.png").string(), Image::filled(32, 32, 0.5f));
  std::ofstream(tmp.path / "train/vid/000000.txt") << "0 1.2 0.5 0.1 0.1\n";
  write_png((tmp.path / "train/vid/000001.png").string(), Image::filled(32, 32, 0.5f));
  // no 000001.txt
  write_png((tmp.path / "train/vid/000002.png").string(), Image::filled(32, 32, 0.5f));
  std::ofstream(tmp.path / "train/vid/000002.txt") << "7 0.5 0.5 0.1 0.1\n";

  try {
    load_dataset(tmp.path.string(), "train", DatasetMode::kTemporal);
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    REQUIRE(e.items().size() == 3);
    bool saw_range = false, saw_missing = false, saw_class = false;
    for (const auto& item : e.items()) {
      if (item.find("000000.txt") != std::string::npos &&
          item.find("out of [0,1]") != std::string::npos)
        saw_range = true;
      if (item.find("000001.txt") != std::string::npos &&
          item.find("missing label file") != std::string::npos)
        saw_missing = true;
      if (item.find("000002.txt") != std::string::npos &&
          item.find("unknown class") != std::string::npos)
        saw_class = true;
    }
    CHECK(saw_range);
    CHECK(saw_missing);
    CHECK(saw_class);
  }
}

TEST_CASE("frames sort in numeric playback order") {
  TempDir tmp("seqdet_ds_sort");
  fs::create_directories(tmp.path / "train" / "vid");
  for (const char* stem : {"2", "10", "1"}) {
    write_png((tmp.path / "train/vid" / (std::string(stem) + ".png")).string(),
              Image::filled(8, 8, 0.5f));
    std::ofstream(tmp.path / "train/vid" / (std::string(stem) + ".txt"));
  }
  auto m = load_dataset(tmp.path.string(), "train", DatasetMode::kTemporal);
  REQUIRE(m.sequences[0].frame_count() == 3);
  CHECK(m.sequences[0].frame_paths[0].find("/1.png") != std::string::npos);
  CHECK(m.sequences[0].frame_paths[1].find("/2.png") != std::string::npos);
  CHECK(m.sequences[0].frame_paths[2].find("/10.png") != std::string::npos);
}

namespace {

// in-memory manifest: sampling statistics without disk traffic
DatasetManifest fake_manifest(int n_seqs, int frames) {
  DatasetManifest m;
  m.mode = DatasetMode::kTemporal;
  for (int s = 0; s < n_seqs; ++s) {
    SequenceInfo info;
    info.id = "fake" + std::to_string(s);
    for (int t = 0; t < frames; ++t) {
      info.frame_paths.push_back(info.id + "/" + std::to_string(t) + ".png");
      info.label_paths.push_back(info.id + "/" + std::to_string(t) + ".txt");
    }
    m.sequences.push_back(info);
    LabeledSequence seq;
    seq.source_id = info.id;
    for (int t = 0; t < frames; ++t) {
      seq.frames.push_back(Image::filled(1, 1, 0.f));
      seq.labels.emplace_back();
    }
    m.cache_.push_back(std::move(seq));
  }
  return m;
}

}  // namespace

TEST_CASE("a 100-frame video offers 99 two-frame windows, all reachable") {
  auto m = fake_manifest(1, 100);
  Rng rng(3);
  std::set<std::string> seen;
  for (int i = 0; i < 3000; ++i)
    for (const auto& clip : sample_batch(m, 1, 2, rng)) seen.insert(clip.source_id);
  CHECK(seen.size() == 99);
}

TEST_CASE("sampling is deterministic for a fixed seed") {
  auto m = fake_manifest(4, 16);
  Rng a(42), b(42);
  for (int i = 0; i < 20; ++i) {
    auto ba = sample_batch(m, 4, 2, a);
    auto bb = sample_batch(m, 4, 2, b);
    for (size_t j = 0; j < ba.size(); ++j) REQUIRE(ba[j].source_id == bb[j].source_id);
  }
}

TEST_CASE("window starts are uniform (chi-square over 10^4 draws)") {
  auto m = fake_manifest(1, 100);  // 99 windows
  Rng rng(7);
  std::map<std::string, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[sample_batch(m, 1, 2, rng)[0].source_id]++;
  const double expected = double(draws) / 99.0;
  double chi2 = 0;
  for (const auto& [k, v] : counts) chi2 += (v - expected) * (v - expected) / expected;
  // df = 98, 99.9th percentile ~ 148
  CHECK(chi2 < 148.0);
}

TEST_CASE("seq_len beyond the shortest sequence is rejected") {
  auto m = fake_manifest(2, 5);
  Rng rng(1);
  CHECK_THROWS_WITH_AS(sample_batch(m, 1, 6, rng), doctest::Contains("shortest"),
                       std::invalid_argument);
}

TEST_CASE("static pools combine frame counts additively") {
  auto a = fake_manifest(3, 10);
  auto b = fake_manifest(5, 4);
  CHECK(mixed_frame_count(a, b) == 30 + 20);
}

TEST_CASE("analytic trajectory: labels track position exactly before any bounce") {
  SynthScene scene;
  scene.size = 64;
  scene.frames = 8;
  SynthShape s;
  s.class_id = 1;
  s.x = 20.f;
  s.y = 20.f;
  s.vx = 1.0f;
  s.vy = 0.5f;
  s.half_w = 6.f;
  s.half_h = 5.f;
  scene.shapes.push_back(s);
  for (int t = 0; t < 8; ++t) {
    auto labels = scene_labels(scene, t);
    REQUIRE(labels.size() == 1);
    CHECK(labels[0].cx == (20.f + 1.0f * t) / 64.f);
    CHECK(labels[0].cy == (20.f + 0.5f * t) / 64.f);
    CHECK(labels[0].w == 12.f / 64.f);
    CHECK(labels[0].h == 10.f / 64.f);
  }
}

TEST_CASE("rendered shapes stay inside their analytic boxes with tight slack") {
  SynthParams p;
  p.size = 64;
  p.frames = 10;
  p.occlusion_prob = 0.0;
  p.min_shapes = 1;
  p.max_shapes = 1;  // isolated shapes give unambiguous masks
  Rng rng(31);
  for (int trial = 0; trial < 8; ++trial) {
    SynthScene scene = make_scene(rng, p);
    for (int t = 0; t < p.frames; ++t) {
      std::vector<std::vector<bool>> masks;
      render_frame(scene, t, &masks);
      auto labels = scene_labels(scene, t);
      REQUIRE(masks.size() == labels.size());
      for (size_t si = 0; si < masks.size(); ++si) {
        const auto& b = labels[si];
        const double bx0 = double(b.cx - b.w / 2) * p.size;
        const double bx1 = double(b.cx + b.w / 2) * p.size;
        const double by0 = double(b.cy - b.h / 2) * p.size;
        const double by1 = double(b.cy + b.h / 2) * p.size;
        int mx0 = p.size, my0 = p.size, mx1 = -1, my1 = -1;
        for (int y = 0; y < p.size; ++y)
          for (int x = 0; x < p.size; ++x)
            if (masks[si][static_cast<size_t>(y) * p.size + x]) {
              mx0 = std::min(mx0, x);
              my0 = std::min(my0, y);
              mx1 = std::max(mx1, x);
              my1 = std::max(my1, y);
            }
        REQUIRE(mx1 >= 0);  // visible
        // covered pixel areas stay within one pixel of the box...
        CHECK(mx0 + 0.5 >= bx0 - 1.0);
        CHECK(my0 + 0.5 >= by0 - 1.0);
        CHECK(mx1 + 0.5 <= bx1 + 1.0);
        CHECK(my1 + 0.5 <= by1 + 1.0);
        // ...and the box is tight to at most one pixel of slack per side
        CHECK(mx0 + 0.5 - bx0 <= 1.0);
        CHECK(my0 + 0.5 - by0 <= 1.0);
        CHECK(bx1 - (mx1 + 0.5) <= 1.0);
        CHECK(by1 - (my1 + 0.5) <= 1.0);
      }
    }
  }
}

TEST_CASE("occluders hide pixels but never labels") {
  SynthParams p;
  p.size = 64;
  p.frames = 12;
  p.occlusion_prob = 1.0;
  p.min_shapes = 1;
  p.max_shapes = 1;
  Rng rng(17);
  SynthScene scene = make_scene(rng, p);
  REQUIRE(scene.occluders.size() == 1);
  for (int t = 0; t < p.frames; ++t) CHECK(scene_labels(scene, t).size() == 1);
}
