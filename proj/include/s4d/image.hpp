// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "s4d/core.hpp"

namespace s4d {

// Planar float image: v[(c*h + y)*w + x]. Planar matches the .imgf32 disk
// layout and keeps per-channel metric loops simple.
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<float> v;

    Image() = default;
    Image(int h_, int w_, int c_, float fill = 0.f) : h(h_), w(w_), c(c_), v(std::size_t(h_) * w_ * c_, fill) {}

    float& at(int ch, int y, int x) { return v[(std::size_t(ch) * h + y) * w + x]; }
    float at(int ch, int y, int x) const { return v[(std::size_t(ch) * h + y) * w + x]; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }

    bool finite() const {
        for (float f : v)
            if (!std::isfinite(f)) return false;
        return true;
    }
};

// Bilinear sample of one channel at (x, y) in pixel coordinates where pixel
// centers sit at integer positions. Exact at integer grid points.
inline double bilinear(const Image& img, int ch, double x, double y) {
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    double fx = x - x0;
    double fy = y - y0;
    auto clampx = [&](int xi) { return std::clamp(xi, 0, img.w - 1); };
    auto clampy = [&](int yi) { return std::clamp(yi, 0, img.h - 1); };
    double v00 = img.at(ch, clampy(y0), clampx(x0));
    double v01 = img.at(ch, clampy(y0), clampx(x0 + 1));
    double v10 = img.at(ch, clampy(y0 + 1), clampx(x0));
    double v11 = img.at(ch, clampy(y0 + 1), clampx(x0 + 1));
    double top = v00 * (1.0 - fx) + v01 * fx;
    double bot = v10 * (1.0 - fx) + v11 * fx;
    return top * (1.0 - fy) + bot * fy;
}

// ---------------------------------------------------------------- .imgf32

// Lossless planar float container: magic "IF32", u32 h, w, c, then
// c*h*w little-endian f32 planes.
inline void save_imgf32(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open for write: " + path);
    f.write("IF32", 4);
    std::uint32_t dims[3] = {std::uint32_t(img.h), std::uint32_t(img.w), std::uint32_t(img.c)};
    f.write(reinterpret_cast<const char*>(dims), sizeof dims);
    f.write(reinterpret_cast<const char*>(img.v.data()), std::streamsize(img.v.size() * 4));
    require(f.good(), "write failed: " + path);
}

inline Image load_imgf32(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    require(f.gcount() == 4 && std::memcmp(magic, "IF32", 4) == 0, "not an .imgf32 file: " + path);
    std::uint32_t dims[3];
    f.read(reinterpret_cast<char*>(dims), sizeof dims);
    require(f.gcount() == sizeof dims, "truncated .imgf32 header: " + path);
    require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0 && dims[0] < (1u << 20) && dims[1] < (1u << 20) && dims[2] <= 64,
            "bad .imgf32 dimensions: " + path);
    Image img{int(dims[0]), int(dims[1]), int(dims[2])};
    f.read(reinterpret_cast<char*>(img.v.data()), std::streamsize(img.v.size() * 4));
    require(std::size_t(f.gcount()) == img.v.size() * 4, "truncated .imgf32 data: " + path);
    return img;
}

// ---------------------------------------------------------------- PNG

namespace detail {

inline void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back((v >> 24) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back(v & 0xff);
}

inline void png_chunk(std::vector<unsigned char>& out, const char type[4],
                      const unsigned char* data, std::size_t n) {
    put_u32_be(out, std::uint32_t(n));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (n) out.insert(out.end(), data, data + n);
    std::uint32_t crc = std::uint32_t(crc32(0L, out.data() + start, uInt(4 + n)));
    put_u32_be(out, crc);
}

} // namespace detail

inline unsigned char to_u8(float v) {
    float s = std::clamp(v, 0.0f, 1.0f) * 255.0f;
    return static_cast<unsigned char>(std::lround(s));
}

// 8-bit RGB PNG. Filter type 0 on every scanline; zlib level 6.
inline void save_png(const Image& img, const std::string& path) {
    require(img.c == 3 || img.c == 1, "save_png expects 1 or 3 channels");
    const int channels = img.c;
    std::vector<unsigned char> raw((std::size_t(img.w) * channels + 1) * img.h);
    std::size_t p = 0;
    for (int y = 0; y < img.h; ++y) {
        raw[p++] = 0; // filter: none
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < channels; ++ch) raw[p++] = to_u8(img.at(ch, y, x));
    }
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<unsigned char> idat(bound);
    int zr = compress2(idat.data(), &bound, raw.data(), uLong(raw.size()), 6);
    require(zr == Z_OK, "zlib compression failed");
    idat.resize(bound);

    std::vector<unsigned char> out;
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.insert(out.end(), sig, sig + 8);
    unsigned char ihdr[13];
    auto wr32 = [](unsigned char* d, std::uint32_t v) {
        d[0] = (v >> 24) & 0xff; d[1] = (v >> 16) & 0xff; d[2] = (v >> 8) & 0xff; d[3] = v & 0xff;
    };
    wr32(ihdr, std::uint32_t(img.w));
    wr32(ihdr + 4, std::uint32_t(img.h));
    ihdr[8] = 8;                                  // bit depth
    ihdr[9] = channels == 3 ? 2 : 0;              // color type
    ihdr[10] = ihdr[11] = ihdr[12] = 0;           // deflate, adaptive, no interlace
    detail::png_chunk(out, "IHDR", ihdr, 13);
    detail::png_chunk(out, "IDAT", idat.data(), idat.size());
    detail::png_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    require(f.good(), "write failed: " + path);
}

// Reads 8-bit gray / RGB / RGBA PNGs (no palette, no interlace) into a
// float RGB image in [0,1].
inline Image load_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(bytes.size() > 8 && bytes[0] == 0x89 && bytes[1] == 'P', "not a PNG: " + path);

    auto rd32 = [&](std::size_t off) -> std::uint32_t {
        return (std::uint32_t(bytes[off]) << 24) | (std::uint32_t(bytes[off + 1]) << 16) |
               (std::uint32_t(bytes[off + 2]) << 8) | std::uint32_t(bytes[off + 3]);
    };

    std::uint32_t w = 0, h = 0;
    int color_type = -1, bit_depth = 0;
    std::vector<unsigned char> idat;
    std::size_t off = 8;
    while (off + 8 <= bytes.size()) {
        std::uint32_t len = rd32(off);
        require(off + 12 + len <= bytes.size(), "truncated PNG: " + path);
        const char* type = reinterpret_cast<const char*>(&bytes[off + 4]);
        const unsigned char* data = &bytes[off + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = rd32(off + 8);
            h = rd32(off + 12);
            bit_depth = data[8];
            color_type = data[9];
            require(data[12] == 0, "interlaced PNG unsupported: " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        off += 12 + len;
    }
    require(w > 0 && h > 0, "missing IHDR: " + path);
    require(bit_depth == 8, "only 8-bit PNGs supported: " + path);
    int nch;
    switch (color_type) {
        case 0: nch = 1; break;
        case 2: nch = 3; break;
        case 6: nch = 4; break;
        default: throw ValidationError("unsupported PNG color type in " + path);
    }

    std::size_t stride = std::size_t(w) * nch;
    std::vector<unsigned char> raw((stride + 1) * h);
    uLongf rawlen = uLongf(raw.size());
    int zr = uncompress(raw.data(), &rawlen, idat.data(), uLong(idat.size()));
    require(zr == Z_OK && rawlen == raw.size(), "PNG inflate failed: " + path);

    // Unfilter.
    std::vector<unsigned char> pix(stride * h);
    for (std::uint32_t y = 0; y < h; ++y) {
        unsigned char filter = raw[y * (stride + 1)];
        const unsigned char* src = &raw[y * (stride + 1) + 1];
        unsigned char* dst = &pix[y * stride];
        const unsigned char* up = y ? &pix[(y - 1) * stride] : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            int a = i >= std::size_t(nch) ? dst[i - nch] : 0;
            int b = up ? up[i] : 0;
            int cc = (up && i >= std::size_t(nch)) ? up[i - nch] : 0;
            int x = src[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: {
                    int pp = a + b - cc;
                    int pa = std::abs(pp - a), pb = std::abs(pp - b), pc = std::abs(pp - cc);
                    x += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
                    break;
                }
                default: throw ValidationError("bad PNG filter in " + path);
            }
            dst[i] = static_cast<unsigned char>(x & 0xff);
        }
    }

    Image img(int(h), int(w), 3);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const unsigned char* p = &pix[y * stride + x * nch];
            float r, g, b;
            if (nch == 1) r = g = b = p[0] / 255.0f;
            else { r = p[0] / 255.0f; g = p[1] / 255.0f; b = p[2] / 255.0f; }
            img.at(0, int(y), int(x)) = r;
            img.at(1, int(y), int(x)) = g;
            img.at(2, int(y), int(x)) = b;
        }
    return img;
}

// Saves both representations next to each other ("frame.png" + "frame.imgf32").
inline void save_frame(const Image& img, const std::string& path_base) {
    save_png(img, path_base + ".png");
    save_imgf32(img, path_base + ".imgf32");
}

} // namespace s4d
