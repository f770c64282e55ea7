#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "seqdet/image.hpp"
#include "seqdet/ops.hpp"
#include "seqdet/tensor.hpp"

namespace seqdet {

struct LossConfig {
  std::array<std::array<float, 2>, 9> anchors;  // pixels, finest scale first
  std::array<int, 3> strides = {8, 16, 32};
  int num_classes = 3;
  int input_size = 64;
  float box_weight = 0.05f;
  float obj_weight = 1.0f;
  float cls_weight = 0.5f;
  float anchor_ratio_thresh = 4.0f;           // shape-ratio gate for anchor matches
  std::array<float, 3> obj_balance = {4.f, 1.f, 0.4f};
};

// One positive sample: ground truth routed to (scale, anchor, cell) on the
// responsible cell and its two nearest neighbours.
struct Assignment {
  int scale = 0;
  int anchor = 0;
  std::int64_t image = 0;
  std::int64_t gy = 0, gx = 0;
  float tcx = 0, tcy = 0, tw = 0, th = 0;  // target box, pixels
  int class_id = 0;
};

inline std::vector<Assignment> assign_targets(
    const std::vector<std::vector<BoxLabel>>& targets, const LossConfig& cfg) {
  std::vector<Assignment> out;
  for (std::int64_t img = 0; img < static_cast<std::int64_t>(targets.size()); ++img) {
    for (const auto& b : targets[static_cast<size_t>(img)]) {
      const float cx = b.cx * cfg.input_size;
      const float cy = b.cy * cfg.input_size;
      const float w = b.w * cfg.input_size;
      const float h = b.h * cfg.input_size;
      for (int s = 0; s < 3; ++s) {
        const float stride = static_cast<float>(cfg.strides[static_cast<size_t>(s)]);
        const std::int64_t grid = cfg.input_size / cfg.strides[static_cast<size_t>(s)];
        for (int a = 0; a < 3; ++a) {
          const auto& anchor = cfg.anchors[static_cast<size_t>(s * 3 + a)];
          const float rw = std::max(w / anchor[0], anchor[0] / w);
          const float rh = std::max(h / anchor[1], anchor[1] / h);
          if (std::max(rw, rh) >= cfg.anchor_ratio_thresh) continue;

          const float fx = cx / stride;
          const float fy = cy / stride;
          std::int64_t gx = static_cast<std::int64_t>(fx);
          std::int64_t gy = static_cast<std::int64_t>(fy);
          gx = std::min(std::max<std::int64_t>(gx, 0), grid - 1);
          gy = std::min(std::max<std::int64_t>(gy, 0), grid - 1);

          std::vector<std::pair<std::int64_t, std::int64_t>> cells = {{gy, gx}};
          const float ox = fx - static_cast<float>(gx);
          const float oy = fy - static_cast<float>(gy);
          if (ox < 0.5f && gx > 0) cells.push_back({gy, gx - 1});
          if (ox >= 0.5f && gx < grid - 1) cells.push_back({gy, gx + 1});
          if (oy < 0.5f && gy > 0) cells.push_back({gy - 1, gx});
          if (oy >= 0.5f && gy < grid - 1) cells.push_back({gy + 1, gx});

          for (auto [cgy, cgx] : cells) {
            // the decoded centre reaches (-0.5, 1.5) around the cell
            const float dx = fx - static_cast<float>(cgx);
            const float dy = fy - static_cast<float>(cgy);
            if (dx <= -0.5f || dx >= 1.5f || dy <= -0.5f || dy >= 1.5f) continue;
            Assignment as;
            as.scale = s;
            as.anchor = a;
            as.image = img;
            as.gy = cgy;
            as.gx = cgx;
            as.tcx = cx;
            as.tcy = cy;
            as.tw = w;
            as.th = h;
            as.class_id = b.class_id;
            out.push_back(as);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct LossBreakdown {
  Tensor<T> total;  // scalar, differentiable
  double box = 0, obj = 0, cls = 0;
};

// Composite detection loss: mean(1 - CIoU) over matched boxes, binary
// cross-entropy objectness over every cell (balanced per scale), binary
// cross-entropy over matched class rows.
template <typename T>
LossBreakdown<T> detection_loss(const std::array<Tensor<T>, 3>& raw,
                                const std::vector<std::vector<BoxLabel>>& targets,
                                const LossConfig& cfg) {
  const int tail = 5 + cfg.num_classes;
  for (int s = 0; s < 3; ++s)
    require(raw[static_cast<size_t>(s)].shape().size() == 5 &&
                raw[static_cast<size_t>(s)].dim(4) == tail,
            "detection_loss: raw scale " + std::to_string(s) + " has unexpected shape " +
                shape_str(raw[static_cast<size_t>(s)].shape()));
  require(raw[0].dim(0) == static_cast<std::int64_t>(targets.size()),
          "detection_loss: target list does not match batch rows");

  const auto assignments = assign_targets(targets, cfg);

  // per-scale row tables [N*3*H*W, tail]
  std::array<Tensor<T>, 3> rows;
  for (int s = 0; s < 3; ++s) {
    const Tensor<T>& r = raw[static_cast<size_t>(s)];
    rows[static_cast<size_t>(s)] =
        reshape(r, {r.dim(0) * 3 * r.dim(2) * r.dim(3), static_cast<std::int64_t>(tail)});
  }

  Tensor<T> box_term = Tensor<T>::zeros({1});
  Tensor<T> cls_term = Tensor<T>::zeros({1});

  std::array<std::vector<std::int64_t>, 3> matched_rows;
  std::array<std::vector<const Assignment*>, 3> matched_as;
  for (const auto& a : assignments) {
    const Tensor<T>& r = raw[static_cast<size_t>(a.scale)];
    const std::int64_t H = r.dim(2), W = r.dim(3);
    const std::int64_t row = ((a.image * 3 + a.anchor) * H + a.gy) * W + a.gx;
    matched_rows[static_cast<size_t>(a.scale)].push_back(row);
    matched_as[static_cast<size_t>(a.scale)].push_back(&a);
  }

  std::int64_t total_matches = 0;
  std::vector<Tensor<T>> ciou_parts;
  std::vector<Tensor<T>> cls_parts;
  for (int s = 0; s < 3; ++s) {
    const auto& rows_idx = matched_rows[static_cast<size_t>(s)];
    if (rows_idx.empty()) continue;
    const auto& as = matched_as[static_cast<size_t>(s)];
    const std::int64_t n = static_cast<std::int64_t>(rows_idx.size());
    total_matches += n;
    const float stride = static_cast<float>(cfg.strides[static_cast<size_t>(s)]);

    Tensor<T> m = gather_rows(rows[static_cast<size_t>(s)], rows_idx);  // [n, tail]
    Tensor<T> tx = reshape(narrow(m, 1, 0, 1), {n});
    Tensor<T> ty = reshape(narrow(m, 1, 1, 1), {n});
    Tensor<T> tw = reshape(narrow(m, 1, 2, 1), {n});
    Tensor<T> th = reshape(narrow(m, 1, 3, 1), {n});

    // per-row constants
    Tensor<T> gx = Tensor<T>::zeros({n});
    Tensor<T> gy = Tensor<T>::zeros({n});
    Tensor<T> aw = Tensor<T>::zeros({n});
    Tensor<T> ah = Tensor<T>::zeros({n});
    Tensor<T> bx = Tensor<T>::zeros({n});
    Tensor<T> by = Tensor<T>::zeros({n});
    Tensor<T> bw = Tensor<T>::zeros({n});
    Tensor<T> bh = Tensor<T>::zeros({n});
    for (std::int64_t i = 0; i < n; ++i) {
      const Assignment& a = *as[static_cast<size_t>(i)];
      gx.at(i) = static_cast<T>(a.gx);
      gy.at(i) = static_cast<T>(a.gy);
      aw.at(i) = static_cast<T>(cfg.anchors[static_cast<size_t>(s * 3 + a.anchor)][0]);
      ah.at(i) = static_cast<T>(cfg.anchors[static_cast<size_t>(s * 3 + a.anchor)][1]);
      bx.at(i) = static_cast<T>(a.tcx);
      by.at(i) = static_cast<T>(a.tcy);
      bw.at(i) = static_cast<T>(a.tw);
      bh.at(i) = static_cast<T>(a.th);
    }

    // decode to pixels
    Tensor<T> px = mul_scalar(add(affine(sigmoid(tx), T(2), T(-0.5)), gx), T(stride));
    Tensor<T> py = mul_scalar(add(affine(sigmoid(ty), T(2), T(-0.5)), gy), T(stride));
    Tensor<T> sw2 = mul_scalar(sigmoid(tw), T(2));
    Tensor<T> sh2 = mul_scalar(sigmoid(th), T(2));
    Tensor<T> pw = mul(mul(sw2, sw2), aw);
    Tensor<T> ph = mul(mul(sh2, sh2), ah);

    // CIoU against the constant targets
    const T eps = T(1e-7);
    Tensor<T> half = Tensor<T>::full({n}, T(0.5));
    Tensor<T> px0 = sub(px, mul(pw, half)), px1 = add(px, mul(pw, half));
    Tensor<T> py0 = sub(py, mul(ph, half)), py1 = add(py, mul(ph, half));
    Tensor<T> bx0 = sub(bx, mul(bw, half)), bx1 = add(bx, mul(bw, half));
    Tensor<T> by0 = sub(by, mul(bh, half)), by1 = add(by, mul(bh, half));

    Tensor<T> zero = Tensor<T>::zeros({n});
    Tensor<T> iw = max_ew(sub(min_ew(px1, bx1), max_ew(px0, bx0)), zero);
    Tensor<T> ih = max_ew(sub(min_ew(py1, by1), max_ew(py0, by0)), zero);
    Tensor<T> inter = mul(iw, ih);
    Tensor<T> uni = add_scalar(sub(add(mul(pw, ph), mul(bw, bh)), inter), eps);
    Tensor<T> iou_v = div_ew(inter, uni);

    Tensor<T> cw = sub(max_ew(px1, bx1), min_ew(px0, bx0));
    Tensor<T> ch = sub(max_ew(py1, by1), min_ew(py0, by0));
    Tensor<T> c2 = add_scalar(add(mul(cw, cw), mul(ch, ch)), eps);
    Tensor<T> dx = sub(px, bx);
    Tensor<T> dy = sub(py, by);
    Tensor<T> rho2 = add(mul(dx, dx), mul(dy, dy));

    const T four_over_pi2 = T(4.0 / (3.14159265358979323846 * 3.14159265358979323846));
    Tensor<T> v_angle = sub(atan_ew(div_ew(bw, add_scalar(bh, eps))),
                            atan_ew(div_ew(pw, add_scalar(ph, eps))));
    Tensor<T> v = mul_scalar(mul(v_angle, v_angle), four_over_pi2);
    // alpha is treated as a constant factor
    Tensor<T> alpha = div_ew(detach(v), add_scalar(sub(detach(v), detach(iou_v)), T(1) + eps));
    Tensor<T> ciou = sub(sub(iou_v, div_ew(rho2, c2)), mul(alpha, v));
    ciou_parts.push_back(sum_all(affine(ciou, T(-1), T(1))));  // sum(1 - ciou)

    if (cfg.num_classes > 1) {
      Tensor<T> cls_logits = narrow(m, 1, 5, cfg.num_classes);
      Tensor<T> cls_target = Tensor<T>::zeros({n, cfg.num_classes});
      for (std::int64_t i = 0; i < n; ++i)
        cls_target.at(i * cfg.num_classes + as[static_cast<size_t>(i)]->class_id) = T(1);
      cls_parts.push_back(sum_all(bce_with_logits(cls_logits, cls_target)));
    }
  }

  if (total_matches > 0) {
    Tensor<T> acc = ciou_parts[0];
    for (size_t i = 1; i < ciou_parts.size(); ++i) acc = add(acc, ciou_parts[i]);
    box_term = mul_scalar(acc, T(1) / static_cast<T>(total_matches));
    if (!cls_parts.empty()) {
      Tensor<T> cacc = cls_parts[0];
      for (size_t i = 1; i < cls_parts.size(); ++i) cacc = add(cacc, cls_parts[i]);
      cls_term = mul_scalar(cacc, T(1) / static_cast<T>(total_matches * cfg.num_classes));
    }
  }

  // objectness over every cell, balanced per scale
  Tensor<T> obj_term = Tensor<T>::zeros({1});
  for (int s = 0; s < 3; ++s) {
    const std::int64_t R = rows[static_cast<size_t>(s)].dim(0);
    Tensor<T> obj_logits = reshape(narrow(rows[static_cast<size_t>(s)], 1, 4, 1), {R});
    Tensor<T> obj_target = Tensor<T>::zeros({R});
    for (auto row : matched_rows[static_cast<size_t>(s)]) obj_target.at(row) = T(1);
    Tensor<T> term = mean_all(bce_with_logits(obj_logits, obj_target));
    obj_term = add(obj_term, mul_scalar(term, T(cfg.obj_balance[static_cast<size_t>(s)])));
  }

  LossBreakdown<T> out;
  out.box = static_cast<double>(box_term.item());
  out.obj = static_cast<double>(obj_term.item());
  out.cls = static_cast<double>(cls_term.item());
  out.total = add(add(mul_scalar(box_term, T(cfg.box_weight)),
                      mul_scalar(obj_term, T(cfg.obj_weight))),
                  mul_scalar(cls_term, T(cfg.cls_weight)));
  return out;
}

}  // namespace seqdet
