#include "seqdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seqdet/image_io.hpp"
#include "seqdet/tensor.hpp"

namespace fs = std::filesystem;

namespace seqdet {

namespace {

// Leading-digits value for numeric-aware ordering; locale independent.
long long numeric_stem(const std::string& stem) {
  long long v = 0;
  bool any = false;
  for (char ch : stem) {
    if (ch < '0' || ch > '9') break;
    v = v * 10 + (ch - '0');
    any = true;
  }
  return any ? v : -1;
}

bool is_image_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::int64_t DatasetManifest::total_frames() const {
  std::int64_t n = 0;
  for (const auto& s : sequences) n += s.frame_count();
  return n;
}

std::int64_t DatasetManifest::shortest_sequence() const {
  std::int64_t n = sequences.empty() ? 0 : sequences.front().frame_count();
  for (const auto& s : sequences) n = std::min(n, s.frame_count());
  return n;
}

void DatasetManifest::preload() {
  cache_.clear();  // load_clip must read from disk while the cache is rebuilt
  std::vector<LabeledSequence> fresh;
  fresh.reserve(sequences.size());
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(sequences.size()); ++i)
    fresh.push_back(load_clip(*this, i, 0, sequences[static_cast<size_t>(i)].frame_count()));
  cache_ = std::move(fresh);
}

std::vector<BoxLabel> parse_label_file(const std::string& path, int num_classes,
                                       std::vector<std::string>* errors) {
  std::vector<BoxLabel> out;
  std::ifstream is(path);
  if (!is) {
    if (errors) errors->push_back(path + ": cannot open label file");
    return out;
  }
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    BoxLabel b;
    if (!(ls >> b.class_id >> b.cx >> b.cy >> b.w >> b.h)) {
      if (errors)
        errors->push_back(path + ":" + std::to_string(lineno) + ": expected 'class cx cy w h'");
      continue;
    }
    bool ok = true;
    if (b.class_id < 0 || b.class_id >= num_classes) {
      if (errors)
        errors->push_back(path + ":" + std::to_string(lineno) + ": unknown class index " +
                          std::to_string(b.class_id));
      ok = false;
    }
    for (float v : {b.cx, b.cy, b.w, b.h}) {
      if (!(v >= 0.f && v <= 1.f)) {
        if (errors)
          errors->push_back(path + ":" + std::to_string(lineno) +
                            ": coordinate out of [0,1] range");
        ok = false;
        break;
      }
    }
    if (ok && (b.w <= 0.f || b.h <= 0.f)) {
      if (errors)
        errors->push_back(path + ":" + std::to_string(lineno) + ": non-positive box size");
      ok = false;
    }
    if (ok) out.push_back(b);
  }
  return out;
}

DatasetManifest load_dataset(const std::string& root, const std::string& split,
                             DatasetMode mode, const std::vector<std::string>& classes) {
  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.mode = mode;
  m.classes = classes;

  std::vector<std::string> errors;
  const fs::path base = fs::path(root) / split;
  if (!fs::is_directory(base))
    throw DatasetError("dataset split directory not found: " + base.string(),
                       {base.string() + ": missing directory"});

  std::vector<fs::path> seq_dirs;
  for (const auto& e : fs::directory_iterator(base))
    if (e.is_directory()) seq_dirs.push_back(e.path());
  std::sort(seq_dirs.begin(), seq_dirs.end());

  for (const auto& dir : seq_dirs) {
    SequenceInfo info;
    info.id = dir.filename().string();
    std::vector<fs::path> frames;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && is_image_file(e.path())) frames.push_back(e.path());
    std::sort(frames.begin(), frames.end(), [](const fs::path& a, const fs::path& b) {
      const long long na = numeric_stem(a.stem().string());
      const long long nb = numeric_stem(b.stem().string());
      if (na != nb) return na < nb;
      return a.string() < b.string();
    });
    for (const auto& f : frames) {
      fs::path label = f;
      label.replace_extension(".txt");
      if (!fs::is_regular_file(label)) {
        errors.push_back(label.string() + ": missing label file");
        continue;
      }
      parse_label_file(label.string(), static_cast<int>(classes.size()), &errors);
      info.frame_paths.push_back(f.string());
      info.label_paths.push_back(label.string());
    }
    if (!info.frame_paths.empty()) m.sequences.push_back(std::move(info));
  }

  if (m.sequences.empty()) errors.push_back(base.string() + ": no sequences with frames found");
  if (!errors.empty()) {
    std::string what = "dataset validation failed with " + std::to_string(errors.size()) +
                       " problem(s); first: " + errors.front();
    throw DatasetError(what, errors);
  }
  return m;
}

LabeledSequence load_clip(const DatasetManifest& m, std::int64_t seq, std::int64_t start,
                          std::int64_t len) {
  const auto& info = m.sequences.at(static_cast<size_t>(seq));
  require(start >= 0 && len >= 1 && start + len <= info.frame_count(),
          "load_clip: window [" + std::to_string(start) + ", " + std::to_string(start + len) +
              ") out of range for sequence " + info.id);
  LabeledSequence out;
  out.source_id = info.id + "@" + std::to_string(start);
  if (m.preloaded()) {
    const LabeledSequence& full = m.cached(seq);
    for (std::int64_t t = start; t < start + len; ++t) {
      out.frames.push_back(full.frames[static_cast<size_t>(t)]);
      out.labels.push_back(full.labels[static_cast<size_t>(t)]);
    }
    return out;
  }
  for (std::int64_t t = start; t < start + len; ++t) {
    out.frames.push_back(read_image(info.frame_paths[static_cast<size_t>(t)]));
    std::vector<std::string> errors;
    out.labels.push_back(parse_label_file(info.label_paths[static_cast<size_t>(t)],
                                          static_cast<int>(m.classes.size()), &errors));
    if (!errors.empty()) throw DatasetError("label parse failed: " + errors.front(), errors);
  }
  return out;
}

std::vector<LabeledSequence> sample_batch(const DatasetManifest& m, int batch_size, int seq_len,
                                          Rng& rng) {
  require(batch_size >= 1 && seq_len >= 1, "sample_batch: bad batch/seq_len");
  if (m.mode == DatasetMode::kStatic)
    require(seq_len == 1, "sample_batch: static mode uses seq_len = 1");
  require(!m.sequences.empty(), "sample_batch: empty dataset");
  require(seq_len <= m.shortest_sequence(),
          "sample_batch: seq_len " + std::to_string(seq_len) +
              " exceeds the shortest sequence (" + std::to_string(m.shortest_sequence()) + ")");

  std::vector<std::int64_t> windows(m.sequences.size());
  std::int64_t total = 0;
  for (size_t i = 0; i < m.sequences.size(); ++i) {
    windows[i] = m.sequences[i].frame_count() - seq_len + 1;
    total += windows[i];
  }

  std::vector<LabeledSequence> batch;
  for (int b = 0; b < batch_size; ++b) {
    std::int64_t pick = rng.randint(total);
    size_t si = 0;
    while (pick >= windows[si]) {
      pick -= windows[si];
      ++si;
    }
    batch.push_back(load_clip(m, static_cast<std::int64_t>(si), pick, seq_len));
  }
  return batch;
}

std::int64_t mixed_frame_count(const DatasetManifest& a, const DatasetManifest& b) {
  return a.total_frames() + b.total_frames();
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

namespace {

float shape_margin(const SynthShape& s) { return std::max(s.half_w, s.half_h) + 2.f; }

// one reflecting-boundary step per frame
std::pair<float, float> advance(float pos, float vel, float lo, float hi, int steps) {
  for (int i = 0; i < steps; ++i) {
    pos += vel;
    if (pos < lo) {
      pos = 2 * lo - pos;
      vel = -vel;
    } else if (pos > hi) {
      pos = 2 * hi - pos;
      vel = -vel;
    }
  }
  return {pos, vel};
}

// Pixel-area coverage: a pixel counts as shape when its unit square overlaps
// the analytic shape, approximated by inflating the shape half a pixel. This
// keeps the rendered extent within half a pixel of the analytic box on flat
// sides and under one pixel on tapered ones.
bool inside_shape(const SynthShape& s, float cx, float cy, float px, float py) {
  const float dx = px - cx;
  const float dy = py - cy;
  const float hw = s.half_w + 0.5f;
  const float hh = s.half_h + 0.5f;
  switch (s.class_id) {
    case 0: {  // ellipse
      const float nx = dx / hw;
      const float ny = dy / hh;
      return nx * nx + ny * ny <= 1.f;
    }
    case 1:  // rectangle
      return std::abs(dx) <= hw && std::abs(dy) <= hh;
    default: {  // flat-topped trapezoid, narrow side up
      if (dy < -hh || dy > hh) return false;
      const float frac = (dy + hh) / (2.f * hh);
      return std::abs(dx) <= hw * (0.3f + 0.7f * frac);
    }
  }
}

}  // namespace

SynthScene make_scene(Rng& rng, const SynthParams& p) {
  SynthScene scene;
  scene.size = p.size;
  scene.frames = p.frames;
  scene.noise_seed = rng.next_u64();
  scene.bg_base = static_cast<float>(rng.uniform(0.28, 0.42));

  const int n_shapes =
      p.min_shapes + static_cast<int>(rng.randint(p.max_shapes - p.min_shapes + 1));
  const float scale = static_cast<float>(p.size) / 64.f;
  for (int i = 0; i < n_shapes; ++i) {
    SynthShape s;
    s.class_id = static_cast<int>(rng.randint(3));
    if (s.class_id == 0) {
      s.half_w = s.half_h = static_cast<float>(rng.uniform(5.0, 9.0)) * scale;
    } else if (s.class_id == 1) {
      s.half_w = static_cast<float>(rng.uniform(5.0, 10.0)) * scale;
      s.half_h = static_cast<float>(rng.uniform(4.0, 8.0)) * scale;
    } else {
      // base narrower than height keeps the box tight at the bottom row
      s.half_h = static_cast<float>(rng.uniform(5.0, 9.0)) * scale;
      s.half_w = s.half_h * static_cast<float>(rng.uniform(0.7, 1.0));
    }
    const float margin = shape_margin(s);
    s.x = static_cast<float>(rng.uniform(margin, p.size - margin));
    s.y = static_cast<float>(rng.uniform(margin, p.size - margin));
    const double speed = rng.uniform(0.5, 2.0) * scale;
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    s.vx = static_cast<float>(speed * std::cos(angle));
    s.vy = static_cast<float>(speed * std::sin(angle));
    // class-keyed palette with per-instance jitter
    const float base[3][3] = {{0.85f, 0.45f, 0.30f}, {0.20f, 0.30f, 0.80f}, {0.25f, 0.75f, 0.35f}};
    for (int c = 0; c < 3; ++c)
      s.color[c] = base[s.class_id][c] + static_cast<float>(rng.uniform(-0.06, 0.06));
    s.stripe_phase = static_cast<int>(rng.randint(6));
    scene.shapes.push_back(s);
  }

  if (!scene.shapes.empty() && rng.bernoulli(p.occlusion_prob) && p.frames >= 8) {
    const auto& target =
        scene.shapes[static_cast<size_t>(rng.randint(std::int64_t(scene.shapes.size())))];
    SynthOccluder oc;
    oc.t_begin = 2 + static_cast<int>(rng.randint(std::max(1, p.frames - 7)));
    oc.t_end = oc.t_begin + 3 + static_cast<int>(rng.randint(3));
    oc.t_end = std::min(oc.t_end, p.frames);
    const int t_mid = (oc.t_begin + oc.t_end) / 2;
    auto [cx, cy] = shape_center(scene, target, t_mid);
    // covers roughly the middle band of the shape, tracking its motion
    oc.half_w = target.half_w * 0.55f;
    oc.half_h = target.half_h + 3.f;
    oc.vx = target.vx;
    oc.vy = target.vy;
    oc.x = cx - oc.vx * static_cast<float>(t_mid);
    oc.y = cy - oc.vy * static_cast<float>(t_mid);
    oc.gray = static_cast<float>(rng.uniform(0.45, 0.6));
    scene.occluders.push_back(oc);
  }
  return scene;
}

std::pair<float, float> shape_center(const SynthScene& scene, const SynthShape& s, int t) {
  const float margin = shape_margin(s);
  auto [x, vx] = advance(s.x, s.vx, margin, scene.size - margin, t);
  auto [y, vy] = advance(s.y, s.vy, margin, scene.size - margin, t);
  (void)vx;
  (void)vy;
  return {x, y};
}

Image render_frame(const SynthScene& scene, int t, std::vector<std::vector<bool>>* masks) {
  const int S = scene.size;
  Image im = Image::filled(S, S, scene.bg_base);
  Rng noise(scene.noise_seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(t + 1)));
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const float n = static_cast<float>(noise.uniform(-0.06, 0.06));
      for (int c = 0; c < 3; ++c) im.at(y, x, c) += n;
    }

  if (masks) masks->assign(scene.shapes.size(), std::vector<bool>(size_t(S) * S, false));

  for (size_t si = 0; si < scene.shapes.size(); ++si) {
    const auto& s = scene.shapes[si];
    auto [cx, cy] = shape_center(scene, s, t);
    const int x0 = std::max(0, static_cast<int>(cx - s.half_w - 1));
    const int x1 = std::min(S - 1, static_cast<int>(cx + s.half_w + 1));
    const int y0 = std::max(0, static_cast<int>(cy - s.half_h - 1));
    const int y1 = std::min(S - 1, static_cast<int>(cy + s.half_h + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!inside_shape(s, cx, cy, x + 0.5f, y + 0.5f)) continue;
        const float stripe =
            ((x + y + s.stripe_phase) % 6 < 3) ? 1.f : 0.8f;  // light texture
        for (int c = 0; c < 3; ++c) im.at(y, x, c) = s.color[c] * stripe;
        if (masks) (*masks)[si][static_cast<size_t>(y) * S + x] = true;
      }
  }

  for (const auto& oc : scene.occluders) {
    if (t < oc.t_begin || t >= oc.t_end) continue;
    const float cx = oc.x + oc.vx * static_cast<float>(t);
    const float cy = oc.y + oc.vy * static_cast<float>(t);
    const int x0 = std::max(0, static_cast<int>(cx - oc.half_w));
    const int x1 = std::min(S - 1, static_cast<int>(cx + oc.half_w));
    const int y0 = std::max(0, static_cast<int>(cy - oc.half_h));
    const int y1 = std::min(S - 1, static_cast<int>(cy + oc.half_h));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        for (int c = 0; c < 3; ++c) im.at(y, x, c) = oc.gray;
  }

  for (auto& v : im.data) v = std::min(1.f, std::max(0.f, v));
  return im;
}

std::vector<BoxLabel> scene_labels(const SynthScene& scene, int t) {
  std::vector<BoxLabel> out;
  const float S = static_cast<float>(scene.size);
  for (const auto& s : scene.shapes) {
    auto [cx, cy] = shape_center(scene, s, t);
    BoxLabel b;
    b.class_id = s.class_id;
    b.cx = cx / S;
    b.cy = cy / S;
    b.w = 2.f * s.half_w / S;
    b.h = 2.f * s.half_h / S;
    out.push_back(b);
  }
  return out;
}

void synth_video_gen(const SynthParams& p, const std::string& out_root) {
  require(p.size % 32 == 0, "synth_video_gen: size must be divisible by 32");
  require(p.sequences >= 1 && p.frames >= 1, "synth_video_gen: need sequences and frames");
  Rng rng(p.seed);

  auto write_split = [&](const std::string& split, int count) {
    for (int s = 0; s < count; ++s) {
      SynthScene scene = make_scene(rng, p);
      char seq_name[32];
      std::snprintf(seq_name, sizeof(seq_name), "seq_%04d", s);
      const fs::path dir = fs::path(out_root) / split / seq_name;
      fs::create_directories(dir);
      for (int t = 0; t < p.frames; ++t) {
        char frame_name[32];
        std::snprintf(frame_name, sizeof(frame_name), "%06d", t);
        write_png((dir / (std::string(frame_name) + ".png")).string(), render_frame(scene, t));
        std::ofstream label(dir / (std::string(frame_name) + ".txt"));
        for (const auto& b : scene_labels(scene, t)) {
          char line[160];
          std::snprintf(line, sizeof(line), "%d %.9g %.9g %.9g %.9g\n", b.class_id,
                        double(b.cx), double(b.cy), double(b.w), double(b.h));
          label << line;
        }
      }
    }
  };
  write_split("train", p.sequences);
  write_split("test", p.test_sequences);
}

}  // namespace seqdet
