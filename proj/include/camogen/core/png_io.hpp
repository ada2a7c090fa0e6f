#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace camogen::png {

// Minimal PNG support: exactly the formats the corpus uses
//   - 8-bit RGB   (images)
//   - 16-bit gray (depth maps)
//   - 8-bit gray  (masks, values 0/255)
// plus tEXt chunks so every emitted file can carry the config hash.

struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;   // 1 or 3
    int bit_depth = 8;  // 8 or 16
    // Samples row-major, channel-interleaved. For bit_depth 16 each sample is
    // two bytes, big-endian (PNG wire order).
    std::vector<uint8_t> raw;
    std::map<std::string, std::string> text;

    size_t bytes_per_row() const {
        return static_cast<size_t>(width) * channels * (bit_depth / 8);
    }
    uint16_t sample16(int y, int x) const {
        const size_t off = static_cast<size_t>(y) * bytes_per_row() + static_cast<size_t>(x) * 2;
        return static_cast<uint16_t>((raw[off] << 8) | raw[off + 1]);
    }
    void set_sample16(int y, int x, uint16_t v) {
        const size_t off = static_cast<size_t>(y) * bytes_per_row() + static_cast<size_t>(x) * 2;
        raw[off] = static_cast<uint8_t>(v >> 8);
        raw[off + 1] = static_cast<uint8_t>(v & 0xff);
    }
};

Image make_rgb8(int height, int width);
Image make_gray8(int height, int width);
Image make_gray16(int height, int width);

std::vector<uint8_t> encode(const Image& img);
Image decode(const std::vector<uint8_t>& bytes);  // throws std::runtime_error on malformed input

void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file(const std::string& path);

}  // namespace camogen::png
