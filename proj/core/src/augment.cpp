#include "seqdet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "seqdet/tensor.hpp"

namespace seqdet {

const char* technique_name(Technique t) {
  switch (t) {
    case Technique::kStaticAffineHsv:
      return "static_affine_hsv";
    case Technique::kTemporalMosaic:
      return "t_mosaic";
    case Technique::kTemporalMixup:
      return "t_mixup";
    case Technique::kRandomErasing:
      return "r_erasing";
    case Technique::kRandomBlur:
      return "r_blur";
    case Technique::kGaussianNoise:
      return "g_noise";
  }
  return "?";
}

Technique technique_from_name(const std::string& name) {
  for (Technique t : {Technique::kStaticAffineHsv, Technique::kTemporalMosaic,
                      Technique::kTemporalMixup, Technique::kRandomErasing,
                      Technique::kRandomBlur, Technique::kGaussianNoise})
    if (name == technique_name(t)) return t;
  throw std::invalid_argument("unknown augmentation technique: " + name);
}

namespace {

constexpr float kBorderGray = 114.f / 255.f;

void clip01(float& v) { v = std::min(1.f, std::max(0.f, v)); }

// ---- color space ----------------------------------------------------------

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx <= 0.f ? 0.f : d / mx;
  if (d <= 0.f) {
    h = 0.f;
    return;
  }
  if (mx == r)
    h = std::fmod((g - b) / d + 6.f, 6.f);
  else if (mx == g)
    h = (b - r) / d + 2.f;
  else
    h = (r - g) / d + 4.f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const int i = static_cast<int>(h) % 6;
  const float f = h - std::floor(h);
  const float p = v * (1.f - s);
  const float q = v * (1.f - s * f);
  const float t = v * (1.f - s * (1.f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// ---- 3x3 projective helpers ------------------------------------------------

void mat_mul(const double a[9], const double b[9], double out[9]) {
  double r[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r[i * 3 + j] =
          a[i * 3 + 0] * b[0 * 3 + j] + a[i * 3 + 1] * b[1 * 3 + j] + a[i * 3 + 2] * b[2 * 3 + j];
  std::memcpy(out, r, sizeof(r));
}

bool mat_inverse(const double m[9], double out[9]) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::abs(det) < 1e-12) return false;
  const double inv = 1.0 / det;
  out[0] = (m[4] * m[8] - m[5] * m[7]) * inv;
  out[1] = (m[2] * m[7] - m[1] * m[8]) * inv;
  out[2] = (m[1] * m[5] - m[2] * m[4]) * inv;
  out[3] = (m[5] * m[6] - m[3] * m[8]) * inv;
  out[4] = (m[0] * m[8] - m[2] * m[6]) * inv;
  out[5] = (m[2] * m[3] - m[0] * m[5]) * inv;
  out[6] = (m[3] * m[7] - m[4] * m[6]) * inv;
  out[7] = (m[1] * m[6] - m[0] * m[7]) * inv;
  out[8] = (m[0] * m[4] - m[1] * m[3]) * inv;
  return true;
}

bool is_identity(const double m[9]) {
  static const double I[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i)
    if (std::abs(m[i] - I[i]) > 1e-12) return false;
  return true;
}

Image warp_projective(const Image& im, const double m[9]) {
  double inv[9];
  if (!mat_inverse(m, inv)) throw std::runtime_error("static_augment: singular transform");
  Image out = Image::filled(im.height, im.width, kBorderGray);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double w = inv[6] * px + inv[7] * py + inv[8];
      const double sx = (inv[0] * px + inv[1] * py + inv[2]) / w - 0.5;
      const double sy = (inv[3] * px + inv[4] * py + inv[5]) / w - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < im.channels; ++c) {
        auto sample = [&](int yy, int xx) -> double {
          if (xx < 0 || xx >= im.width || yy < 0 || yy >= im.height) return kBorderGray;
          return im.at(yy, xx, c);
        };
        const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                         fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        out.at(y, x, c) = static_cast<float>(v);
      }
    }
  return out;
}

// ---- separable gaussian ----------------------------------------------------

// reflective padding; constant inputs pass through unchanged
Image gaussian_blur(const Image& im, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;

  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return std::clamp(i, 0, n - 1);
  };

  Image tmp = im, out = im;
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<size_t>(i + radius)] * im.at(y, reflect(x + i, im.width), c);
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<size_t>(i + radius)] * tmp.at(reflect(y + i, im.height), x, c);
        out.at(y, x, c) = static_cast<float>(acc);
      }
  return out;
}

void check_same_dims(const LabeledSequence& a, const LabeledSequence& b, const char* who) {
  require(a.length() == b.length(),
          std::string(who) + ": sequence lengths differ (" + std::to_string(a.length()) +
              " vs " + std::to_string(b.length()) + ")");
  require(!a.frames.empty() && a.frames[0].same_dims(b.frames[0]),
          std::string(who) + ": frame dimensions differ");
}

}  // namespace

// ---------------------------------------------------------------------------
// Temporal mosaic
// ---------------------------------------------------------------------------

LabeledSequence temporal_mosaic(const std::array<LabeledSequence, 4>& seqs, Rng& rng,
                                const MosaicParams& p) {
  for (int q = 1; q < 4; ++q) check_same_dims(seqs[0], seqs[static_cast<size_t>(q)], "t_mosaic");
  const int H = seqs[0].frames[0].height;
  const int W = seqs[0].frames[0].width;
  const std::int64_t T = seqs[0].length();

  // one geometry for the whole clip
  const int cx = static_cast<int>(std::lround(rng.uniform(p.center_lo * W, p.center_hi * W)));
  const int cy = static_cast<int>(std::lround(rng.uniform(p.center_lo * H, p.center_hi * H)));

  struct Region {
    int cx0, cy0, cx1, cy1;  // canvas
    int sx0, sy0;            // source origin
  };
  Region regions[4];
  // top-left, top-right, bottom-left, bottom-right
  regions[0] = {std::max(cx - W, 0), std::max(cy - H, 0), cx, cy, 0, 0};
  regions[0].sx0 = W - (regions[0].cx1 - regions[0].cx0);
  regions[0].sy0 = H - (regions[0].cy1 - regions[0].cy0);
  regions[1] = {cx, std::max(cy - H, 0), std::min(cx + W, 2 * W), cy, 0, 0};
  regions[1].sy0 = H - (regions[1].cy1 - regions[1].cy0);
  regions[2] = {std::max(cx - W, 0), cy, cx, std::min(cy + H, 2 * H), 0, 0};
  regions[2].sx0 = W - (regions[2].cx1 - regions[2].cx0);
  regions[3] = {cx, cy, std::min(cx + W, 2 * W), std::min(cy + H, 2 * H), 0, 0};

  LabeledSequence out;
  out.source_id = "mosaic(" + seqs[0].source_id + ")";
  for (std::int64_t t = 0; t < T; ++t) {
    Image canvas = Image::filled(2 * H, 2 * W, kBorderGray);
    std::vector<BoxLabel> boxes;
    for (int q = 0; q < 4; ++q) {
      const Region& r = regions[q];
      const Image& src = seqs[static_cast<size_t>(q)].frames[static_cast<size_t>(t)];
      for (int y = r.cy0; y < r.cy1; ++y)
        for (int x = r.cx0; x < r.cx1; ++x)
          for (int c = 0; c < 3; ++c)
            canvas.at(y, x, c) = src.at(r.sy0 + (y - r.cy0), r.sx0 + (x - r.cx0), c);

      const float off_x = static_cast<float>(r.cx0 - r.sx0);
      const float off_y = static_cast<float>(r.cy0 - r.sy0);
      for (const auto& b : seqs[static_cast<size_t>(q)].labels[static_cast<size_t>(t)]) {
        float x0 = b.cx * W - b.w * W / 2 + off_x;
        float x1 = b.cx * W + b.w * W / 2 + off_x;
        float y0 = b.cy * H - b.h * H / 2 + off_y;
        float y1 = b.cy * H + b.h * H / 2 + off_y;
        x0 = std::max(x0, static_cast<float>(r.cx0));
        y0 = std::max(y0, static_cast<float>(r.cy0));
        x1 = std::min(x1, static_cast<float>(r.cx1));
        y1 = std::min(y1, static_cast<float>(r.cy1));
        if (x1 - x0 < p.min_box_px || y1 - y0 < p.min_box_px) continue;
        BoxLabel nb;
        nb.class_id = b.class_id;
        // canvas is 2W x 2H and is scaled straight back to W x H
        nb.cx = (x0 + x1) / 2 / (2.f * W);
        nb.cy = (y0 + y1) / 2 / (2.f * H);
        nb.w = (x1 - x0) / (2.f * W);
        nb.h = (y1 - y0) / (2.f * H);
        boxes.push_back(nb);
      }
    }
    // 2x2 average back to the working resolution
    Image resized = Image::filled(H, W, 0.f);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c)
          resized.at(y, x, c) =
              0.25f * (canvas.at(2 * y, 2 * x, c) + canvas.at(2 * y, 2 * x + 1, c) +
                       canvas.at(2 * y + 1, 2 * x, c) + canvas.at(2 * y + 1, 2 * x + 1, c));
    out.frames.push_back(std::move(resized));
    out.labels.push_back(std::move(boxes));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temporal mixup
// ---------------------------------------------------------------------------

LabeledSequence temporal_mixup(const LabeledSequence& a, const LabeledSequence& b, Rng& rng,
                               double alpha) {
  return mixup_with_lambda(a, b, static_cast<float>(rng.beta(alpha, alpha)));
}

LabeledSequence mixup_with_lambda(const LabeledSequence& a, const LabeledSequence& b,
                                  float lam) {
  check_same_dims(a, b, "t_mixup");
  LabeledSequence out;
  out.source_id = "mixup(" + a.source_id + "," + b.source_id + ")";
  for (std::int64_t t = 0; t < a.length(); ++t) {
    const Image& fa = a.frames[static_cast<size_t>(t)];
    const Image& fb = b.frames[static_cast<size_t>(t)];
    Image f = fa;
    for (size_t i = 0; i < f.data.size(); ++i)
      f.data[i] = lam * fa.data[i] + (1.f - lam) * fb.data[i];
    out.frames.push_back(std::move(f));
    std::vector<BoxLabel> merged = a.labels[static_cast<size_t>(t)];
    const auto& lb = b.labels[static_cast<size_t>(t)];
    merged.insert(merged.end(), lb.begin(), lb.end());
    out.labels.push_back(std::move(merged));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random erasing
// ---------------------------------------------------------------------------

LabeledSequence random_erasing(const LabeledSequence& seq, Rng& rng, const ErasingParams& p) {
  LabeledSequence out = seq;
  // frame 1 stays clean so the clip always holds one unoccluded view
  for (std::int64_t t = 1; t < out.length(); ++t) {
    if (!rng.bernoulli(p.prob_per_frame)) continue;
    Image& im = out.frames[static_cast<size_t>(t)];
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double area = rng.uniform(p.area_lo, p.area_hi) * im.height * im.width;
      const double aspect = rng.uniform(p.aspect_lo, p.aspect_hi);
      const int rw = static_cast<int>(std::lround(std::sqrt(area * aspect)));
      const int rh = static_cast<int>(std::lround(std::sqrt(area / aspect)));
      if (rw < 1 || rh < 1 || rw >= im.width || rh >= im.height) continue;
      const int x0 = static_cast<int>(rng.randint(im.width - rw + 1));
      const int y0 = static_cast<int>(rng.randint(im.height - rh + 1));
      if (rng.bernoulli(0.5)) {
        const float r = static_cast<float>(rng.uniform());
        const float g = static_cast<float>(rng.uniform());
        const float b = static_cast<float>(rng.uniform());
        for (int y = y0; y < y0 + rh; ++y)
          for (int x = x0; x < x0 + rw; ++x) {
            im.at(y, x, 0) = r;
            im.at(y, x, 1) = g;
            im.at(y, x, 2) = b;
          }
      } else {
        for (int y = y0; y < y0 + rh; ++y)
          for (int x = x0; x < x0 + rw; ++x) {
            const float v = rng.bernoulli(0.5) ? 1.f : 0.f;  // salt and pepper
            for (int c = 0; c < 3; ++c) im.at(y, x, c) = v;
          }
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random blur / gaussian noise
// ---------------------------------------------------------------------------

LabeledSequence random_blur(const LabeledSequence& seq, Rng& rng, const BlurParams& p) {
  LabeledSequence out = seq;
  for (auto& frame : out.frames) {
    if (!rng.bernoulli(p.prob_per_frame)) continue;
    frame = gaussian_blur(frame, rng.uniform(p.sigma_lo, p.sigma_hi));
  }
  return out;
}

LabeledSequence gaussian_noise(const LabeledSequence& seq, Rng& rng, const NoiseParams& p) {
  LabeledSequence out = seq;
  for (auto& frame : out.frames) {
    if (!rng.bernoulli(p.prob_per_frame)) continue;
    const double sigma = rng.uniform(p.sigma_lo, p.sigma_hi);
    for (auto& v : frame.data) {
      v += static_cast<float>(rng.normal(0.0, sigma));
      clip01(v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Static affine + HSV
// ---------------------------------------------------------------------------

StaticSample sample_static_params(Rng& rng, const StaticAugmentParams& p, int size) {
  const double c = size / 2.0;
  const double deg2rad = 3.14159265358979323846 / 180.0;
  const double angle = rng.uniform(-p.degrees, p.degrees) * deg2rad;
  const double scale = 1.0 + rng.uniform(-p.scale, p.scale);
  const double shear_x = std::tan(rng.uniform(-p.shear_deg, p.shear_deg) * deg2rad);
  const double shear_y = std::tan(rng.uniform(-p.shear_deg, p.shear_deg) * deg2rad);
  const double tx = rng.uniform(-p.translate, p.translate) * size;
  const double ty = rng.uniform(-p.translate, p.translate) * size;
  const double p1 = rng.uniform(-p.perspective, p.perspective);
  const double p2 = rng.uniform(-p.perspective, p.perspective);

  const double to_origin[9] = {1, 0, -c, 0, 1, -c, 0, 0, 1};
  const double persp[9] = {1, 0, 0, 0, 1, 0, p1, p2, 1};
  const double rot[9] = {scale * std::cos(angle), -scale * std::sin(angle), 0,
                         scale * std::sin(angle), scale * std::cos(angle),  0,
                         0,                       0,                        1};
  const double shear[9] = {1, shear_x, 0, shear_y, 1, 0, 0, 0, 1};
  const double back[9] = {1, 0, c + tx, 0, 1, c + ty, 0, 0, 1};

  StaticSample s;
  double m[9];
  mat_mul(persp, to_origin, m);
  mat_mul(rot, m, m);
  mat_mul(shear, m, m);
  mat_mul(back, m, m);
  std::memcpy(s.mat, m, sizeof(m));
  s.h_shift = rng.uniform(-p.hsv_h, p.hsv_h);
  s.s_gain = 1.0 + rng.uniform(-p.hsv_s, p.hsv_s);
  s.v_gain = 1.0 + rng.uniform(-p.hsv_v, p.hsv_v);
  return s;
}

LabeledSequence apply_static_sample(const LabeledSequence& seq, const StaticSample& s,
                                    float min_box_px) {
  const int size = seq.frames.empty() ? 0 : seq.frames[0].width;
  const bool warp = !is_identity(s.mat);
  const bool shift_colors =
      std::abs(s.h_shift) > 1e-12 || std::abs(s.s_gain - 1) > 1e-12 ||
      std::abs(s.v_gain - 1) > 1e-12;

  LabeledSequence out = seq;
  for (std::int64_t t = 0; t < out.length(); ++t) {
    Image& im = out.frames[static_cast<size_t>(t)];
    if (warp) im = warp_projective(im, s.mat);
    if (shift_colors) {
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x) {
          float h, sat, val;
          rgb_to_hsv(im.at(y, x, 0), im.at(y, x, 1), im.at(y, x, 2), h, sat, val);
          h = std::fmod(h + static_cast<float>(s.h_shift) * 6.f + 6.f, 6.f);
          sat = std::min(1.f, std::max(0.f, sat * static_cast<float>(s.s_gain)));
          val = std::min(1.f, std::max(0.f, val * static_cast<float>(s.v_gain)));
          hsv_to_rgb(h, sat, val, im.at(y, x, 0), im.at(y, x, 1), im.at(y, x, 2));
        }
    }
    if (warp) {
      std::vector<BoxLabel> boxes;
      for (const auto& b : out.labels[static_cast<size_t>(t)]) {
        const double bx0 = double(b.cx - b.w / 2) * size, bx1 = double(b.cx + b.w / 2) * size;
        const double by0 = double(b.cy - b.h / 2) * size, by1 = double(b.cy + b.h / 2) * size;
        const double corners[4][2] = {{bx0, by0}, {bx1, by0}, {bx0, by1}, {bx1, by1}};
        double nx0 = 1e30, ny0 = 1e30, nx1 = -1e30, ny1 = -1e30;
        for (const auto& pt : corners) {
          const double w = s.mat[6] * pt[0] + s.mat[7] * pt[1] + s.mat[8];
          const double x = (s.mat[0] * pt[0] + s.mat[1] * pt[1] + s.mat[2]) / w;
          const double y = (s.mat[3] * pt[0] + s.mat[4] * pt[1] + s.mat[5]) / w;
          nx0 = std::min(nx0, x);
          ny0 = std::min(ny0, y);
          nx1 = std::max(nx1, x);
          ny1 = std::max(ny1, y);
        }
        nx0 = std::max(nx0, 0.0);
        ny0 = std::max(ny0, 0.0);
        nx1 = std::min(nx1, double(size));
        ny1 = std::min(ny1, double(size));
        if (nx1 - nx0 < min_box_px || ny1 - ny0 < min_box_px) continue;
        BoxLabel nb;
        nb.class_id = b.class_id;
        nb.cx = static_cast<float>((nx0 + nx1) / 2 / size);
        nb.cy = static_cast<float>((ny0 + ny1) / 2 / size);
        nb.w = static_cast<float>((nx1 - nx0) / size);
        nb.h = static_cast<float>((ny1 - ny0) / size);
        boxes.push_back(nb);
      }
      out.labels[static_cast<size_t>(t)] = std::move(boxes);
    }
  }
  return out;
}

LabeledSequence static_augment(const LabeledSequence& seq, Rng& rng,
                               const StaticAugmentParams& p) {
  require(!seq.frames.empty(), "static_augment: empty sequence");
  const StaticSample s = sample_static_params(rng, p, seq.frames[0].width);
  return apply_static_sample(seq, s, p.min_box_px);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

bool AugmentPipeline::enabled(Technique t) const {
  for (const auto& s : specs)
    if (s.technique == t) return true;
  return false;
}

AugmentPipeline AugmentPipeline::from_json(const nlohmann::json& j) {
  AugmentPipeline p;
  for (const auto& row : j) {
    AugmentSpec s;
    s.technique = technique_from_name(row.at("technique").get<std::string>());
    s.probability = row.value("probability", 1.0);
    require(s.probability >= 0.0 && s.probability <= 1.0,
            "augmentation probability must be in [0,1]");
    s.params = row.value("params", nlohmann::json::object());
    s.seed = row.value("seed", 0ull);
    p.specs.push_back(std::move(s));
  }
  return p;
}

nlohmann::json AugmentPipeline::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : specs) {
    nlohmann::json row;
    row["technique"] = technique_name(s.technique);
    row["probability"] = s.probability;
    row["params"] = s.params;
    row["seed"] = s.seed;
    j.push_back(row);
  }
  return j;
}

AugmentPipeline AugmentPipeline::preset(const std::vector<Technique>& techniques) {
  AugmentPipeline p;
  for (Technique t : techniques) {
    AugmentSpec s;
    s.technique = t;
    // geometry-level techniques fire every sample; photometric ones half the time
    s.probability =
        (t == Technique::kTemporalMosaic || t == Technique::kTemporalMixup ||
         t == Technique::kStaticAffineHsv)
            ? 1.0
            : 0.5;
    p.specs.push_back(s);
  }
  return p;
}

LabeledSequence apply_pipeline(const AugmentPipeline& pipe, const LabeledSequence& seq,
                               Rng& rng, const std::function<LabeledSequence()>& sample_more) {
  const AugmentSpec* by_tech[6] = {};
  for (const auto& s : pipe.specs) by_tech[static_cast<int>(s.technique)] = &s;

  auto want = [&](Technique t) -> const AugmentSpec* {
    const AugmentSpec* s = by_tech[static_cast<int>(t)];
    if (!s) return nullptr;
    return rng.bernoulli(s->probability) ? s : nullptr;
  };

  // geometric stage for one source clip
  auto geo = [&](const LabeledSequence& base) {
    if (by_tech[static_cast<int>(Technique::kStaticAffineHsv)] &&
        rng.bernoulli(by_tech[static_cast<int>(Technique::kStaticAffineHsv)]->probability))
      return static_augment(base, rng);
    return base;
  };

  LabeledSequence cur = geo(seq);
  if (want(Technique::kTemporalMosaic)) {
    std::array<LabeledSequence, 4> quad = {cur, geo(sample_more()), geo(sample_more()),
                                           geo(sample_more())};
    cur = temporal_mosaic(quad, rng);
  }
  if (const AugmentSpec* s = want(Technique::kTemporalMixup)) {
    LabeledSequence partner = geo(sample_more());
    if (by_tech[static_cast<int>(Technique::kTemporalMosaic)]) {
      std::array<LabeledSequence, 4> quad = {partner, geo(sample_more()), geo(sample_more()),
                                             geo(sample_more())};
      partner = temporal_mosaic(quad, rng);
    }
    const double alpha = s->params.value("alpha", 8.0);
    cur = temporal_mixup(cur, partner, rng, alpha);
  }
  if (want(Technique::kRandomBlur)) cur = random_blur(cur, rng, BlurParams{.prob_per_frame = 1.0});
  if (want(Technique::kGaussianNoise))
    cur = gaussian_noise(cur, rng, NoiseParams{.prob_per_frame = 1.0});
  if (want(Technique::kRandomErasing))
    cur = random_erasing(cur, rng, ErasingParams{.prob_per_frame = 1.0});
  return cur;
}

bool labels_valid(const LabeledSequence& seq) {
  if (seq.labels.size() != seq.frames.size()) return false;
  for (const auto& frame_labels : seq.labels)
    for (const auto& b : frame_labels) {
      if (!(b.w > 0.f && b.h > 0.f)) return false;
      const float eps = 1e-5f;
      if (b.cx - b.w / 2 < -eps || b.cx + b.w / 2 > 1.f + eps) return false;
      if (b.cy - b.h / 2 < -eps || b.cy + b.h / 2 > 1.f + eps) return false;
    }
  return true;
}

// ---------------------------------------------------------------------------
// Greedy combination search
// ---------------------------------------------------------------------------

GreedyReport greedy_search(
    const std::vector<Technique>& techniques,
    const std::function<double(const std::vector<Technique>&)>& train_and_eval) {
  GreedyReport rep;
  int trial_idx = 0;
  auto next_id = [&] {
    std::string id;
    int k = trial_idx++;
    id.push_back(static_cast<char>('A' + k % 26));
    if (k >= 26) id += std::to_string(k / 26);
    return id;
  };
  auto run_trial = [&](const std::vector<Technique>& combo) -> std::optional<double> {
    GreedyTrial t;
    t.id = next_id();
    t.combination = combo;
    try {
      t.score = train_and_eval(combo);
    } catch (const std::exception& e) {
      rep.aborted = true;
      rep.abort_reason = e.what();
      return std::nullopt;
    }
    rep.trials.push_back(t);
    return t.score;
  };

  auto baseline = run_trial({});
  if (!baseline) return rep;
  rep.best_combination = {};
  rep.best_score = *baseline;

  std::vector<Technique> remaining = techniques;
  while (!remaining.empty()) {
    double round_best = -1e30;
    size_t round_pick = remaining.size();
    for (size_t i = 0; i < remaining.size(); ++i) {
      std::vector<Technique> combo = rep.best_combination;
      combo.push_back(remaining[i]);
      auto score = run_trial(combo);
      if (!score) return rep;  // partial report on callback failure
      if (*score > round_best) {
        round_best = *score;
        round_pick = i;
      }
    }
    if (round_pick == remaining.size() || round_best < rep.best_score) break;
    const bool tie = round_best == rep.best_score;
    rep.best_combination.push_back(remaining[round_pick]);
    rep.best_score = round_best;
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(round_pick));
    if (tie) break;  // equal score with more techniques: keep it, stop searching
  }
  return rep;
}

void GreedyReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "trial_id,combination,mAP50_95\n";
  for (const auto& t : trials) {
    os << t.id << ",";
    if (t.combination.empty()) {
      os << "baseline";
    } else {
      for (size_t i = 0; i < t.combination.size(); ++i)
        os << (i ? "+" : "") << technique_name(t.combination[i]);
    }
    os << "," << t.score << "\n";
  }
}

}  // namespace seqdet
