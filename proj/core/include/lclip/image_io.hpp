#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lclip {

// Minimal deterministic PNG writer (8-bit RGB, zlib-compressed).
void write_png(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height);

// Nearest-neighbour upscale before writing; used for latent previews.
void write_png_scaled(const std::string& path, const std::vector<uint8_t>& rgb, int width,
                      int height, int scale);

} // namespace lclip
