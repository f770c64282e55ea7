#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seqdet {

// HWC float image, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;

  static Image filled(int h, int w, float v, int c = 3) {
    Image im;
    im.height = h;
    im.width = w;
    im.channels = c;
    im.data.assign(static_cast<size_t>(h) * w * c, v);
    return im;
  }

  float& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool same_dims(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Normalized box label, coordinates in [0,1] relative to the image.
struct BoxLabel {
  int class_id = 0;
  float cx = 0, cy = 0, w = 0, h = 0;
};

// T frames with per-frame labels; the unit of temporal training data.
struct LabeledSequence {
  std::vector<Image> frames;
  std::vector<std::vector<BoxLabel>> labels;
  std::string source_id;

  std::int64_t length() const { return static_cast<std::int64_t>(frames.size()); }
};

// Rectangle outline in pixel coordinates, clipped to the image.
void draw_box(Image& im, float cx, float cy, float w, float h, float r, float g, float b);

}  // namespace seqdet
