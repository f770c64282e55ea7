#pragma once

#include <string>

#include "seqdet/image.hpp"

namespace seqdet {

// 8-bit RGB with deterministic encoder settings.
void write_png(const std::string& path, const Image& im);

// PNG or JPEG, dispatched on the file signature.
Image read_image(const std::string& path);

}  // namespace seqdet
