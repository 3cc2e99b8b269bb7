#include "lclip/image_io.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lclip/common.hpp"

namespace lclip {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32_be(out, static_cast<uint32_t>(data.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
    put_u32_be(out, crc);
}

} // namespace

void write_png(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height) {
    check(width > 0 && height > 0, "write_png: bad dimensions");
    check(rgb.size() == static_cast<size_t>(width) * height * 3,
          "write_png: buffer size does not match ", width, "x", height, " RGB");

    // filter byte 0 in front of every scanline
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = rgb.data() + static_cast<size_t>(y) * width * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(width) * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    check(compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) == Z_OK,
          "write_png: zlib compression failed");
    comp.resize(comp_len);

    std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(width));
    put_u32_be(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(2); // color type: truecolor
    ihdr.push_back(0); // compression
    ihdr.push_back(0); // filter
    ihdr.push_back(0); // interlace
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "IDAT", comp);
    put_chunk(png, "IEND", {});

    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "write_png: cannot open ", path);
    out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    out.flush();
    check(out.good(), "write_png: write failed for ", path);
}

void write_png_scaled(const std::string& path, const std::vector<uint8_t>& rgb, int width,
                      int height, int scale) {
    check(scale >= 1, "write_png_scaled: scale must be >= 1");
    if (scale == 1) {
        write_png(path, rgb, width, height);
        return;
    }
    std::vector<uint8_t> up(static_cast<size_t>(width) * height * 3 *
                            static_cast<size_t>(scale) * scale);
    const int w2 = width * scale;
    for (int y = 0; y < height * scale; ++y)
        for (int x = 0; x < w2; ++x) {
            const size_t src = (static_cast<size_t>(y / scale) * width + x / scale) * 3;
            const size_t dst = (static_cast<size_t>(y) * w2 + x) * 3;
            up[dst] = rgb[src];
            up[dst + 1] = rgb[src + 1];
            up[dst + 2] = rgb[src + 2];
        }
    write_png(path, up, w2, height * scale);
}

} // namespace lclip
