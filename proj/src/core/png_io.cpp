#include "camogen/core/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace camogen::png {
namespace {

const uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& body) {
    put_u32(out, static_cast<uint32_t>(body.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), body.begin(), body.end());
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
    put_u32(out, crc);
}

std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& in) {
    uLongf bound = ::compressBound(static_cast<uLong>(in.size()));
    std::vector<uint8_t> out(bound);
    // fixed compression level: identical bytes for identical input
    if (::compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    out.resize(bound);
    return out;
}

std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& in, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf outlen = static_cast<uLongf>(expected);
    const int rc = ::uncompress(out.data(), &outlen, in.data(), static_cast<uLong>(in.size()));
    if (rc != Z_OK || outlen != expected) throw std::runtime_error("png: inflate failed");
    return out;
}

int channels_for_color_type(int ct) {
    switch (ct) {
        case 0: return 1;  // gray
        case 2: return 3;  // RGB
        default: return 0;
    }
}

uint8_t paeth(uint8_t a, uint8_t b, uint8_t c) {
    const int p = static_cast<int>(a) + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

Image make_rgb8(int height, int width) {
    Image img;
    img.width = width;
    img.height = height;
    img.channels = 3;
    img.bit_depth = 8;
    img.raw.assign(static_cast<size_t>(height) * width * 3, 0);
    return img;
}

Image make_gray8(int height, int width) {
    Image img;
    img.width = width;
    img.height = height;
    img.channels = 1;
    img.bit_depth = 8;
    img.raw.assign(static_cast<size_t>(height) * width, 0);
    return img;
}

Image make_gray16(int height, int width) {
    Image img;
    img.width = width;
    img.height = height;
    img.channels = 1;
    img.bit_depth = 16;
    img.raw.assign(static_cast<size_t>(height) * width * 2, 0);
    return img;
}

std::vector<uint8_t> encode(const Image& img) {
    if (img.width <= 0 || img.height <= 0) throw std::runtime_error("png: empty image");
    if (img.bit_depth != 8 && img.bit_depth != 16) throw std::runtime_error("png: bad bit depth");
    if (img.channels != 1 && img.channels != 3) throw std::runtime_error("png: bad channel count");
    if (img.raw.size() != img.bytes_per_row() * img.height)
        throw std::runtime_error("png: raw size mismatch");

    std::vector<uint8_t> out(kSignature, kSignature + 8);

    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(img.width));
    put_u32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(static_cast<uint8_t>(img.bit_depth));
    ihdr.push_back(img.channels == 3 ? 2 : 0);
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // no interlace
    append_chunk(out, "IHDR", ihdr);

    for (const auto& [key, value] : img.text) {
        std::vector<uint8_t> body(key.begin(), key.end());
        body.push_back(0);
        body.insert(body.end(), value.begin(), value.end());
        append_chunk(out, "tEXt", body);
    }

    // filter type 0 on every scanline
    const size_t stride = img.bytes_per_row();
    std::vector<uint8_t> filtered;
    filtered.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        filtered.push_back(0);
        const uint8_t* row = img.raw.data() + static_cast<size_t>(y) * stride;
        filtered.insert(filtered.end(), row, row + stride);
    }
    append_chunk(out, "IDAT", zlib_deflate(filtered));
    append_chunk(out, "IEND", {});
    return out;
}

Image decode(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw std::runtime_error("png: bad signature");

    Image img;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= bytes.size() && !saw_iend) {
        const uint32_t len = get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
        char type[5] = {0};
        std::memcpy(type, bytes.data() + pos + 4, 4);
        const uint8_t* body = bytes.data() + pos + 8;

        const uint32_t stored_crc = get_u32(body + len);
        const uint32_t actual_crc = static_cast<uint32_t>(
            ::crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(4 + len)));
        if (stored_crc != actual_crc) throw std::runtime_error("png: chunk crc mismatch");

        if (std::strcmp(type, "IHDR") == 0) {
            if (len != 13) throw std::runtime_error("png: bad IHDR");
            img.width = static_cast<int>(get_u32(body));
            img.height = static_cast<int>(get_u32(body + 4));
            img.bit_depth = body[8];
            const int color_type = body[9];
            img.channels = channels_for_color_type(color_type);
            if (img.channels == 0) throw std::runtime_error("png: unsupported color type");
            if (img.bit_depth != 8 && img.bit_depth != 16)
                throw std::runtime_error("png: unsupported bit depth");
            if (body[12] != 0) throw std::runtime_error("png: interlace unsupported");
            saw_ihdr = true;
        } else if (std::strcmp(type, "IDAT") == 0) {
            idat.insert(idat.end(), body, body + len);
        } else if (std::strcmp(type, "tEXt") == 0) {
            const uint8_t* sep = static_cast<const uint8_t*>(std::memchr(body, 0, len));
            if (sep) {
                std::string key(body, sep);
                std::string value(sep + 1, body + len);
                img.text[key] = value;
            }
        } else if (std::strcmp(type, "IEND") == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || idat.empty()) throw std::runtime_error("png: missing IHDR/IDAT");

    const size_t stride = img.bytes_per_row();
    const size_t expected = (stride + 1) * img.height;
    std::vector<uint8_t> filtered = zlib_inflate(idat, expected);

    img.raw.assign(stride * img.height, 0);
    const int bpp = img.channels * (img.bit_depth / 8);
    for (int y = 0; y < img.height; ++y) {
        const uint8_t ft = filtered[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = filtered.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        uint8_t* dst = img.raw.data() + static_cast<size_t>(y) * stride;
        const uint8_t* up = y > 0 ? dst - stride : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            const uint8_t left = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
            const uint8_t above = up ? up[x] : 0;
            const uint8_t ul = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
            switch (ft) {
                case 0: dst[x] = src[x]; break;
                case 1: dst[x] = static_cast<uint8_t>(src[x] + left); break;
                case 2: dst[x] = static_cast<uint8_t>(src[x] + above); break;
                case 3: dst[x] = static_cast<uint8_t>(src[x] + ((left + above) >> 1)); break;
                case 4: dst[x] = static_cast<uint8_t>(src[x] + paeth(left, above, ul)); break;
                default: throw std::runtime_error("png: unknown filter type");
            }
        }
    }
    return img;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for read: " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

}  // namespace camogen::png
