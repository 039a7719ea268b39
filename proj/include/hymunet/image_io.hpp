#pragma once

#include <png.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "hymunet/tensor.hpp"

namespace hym {

// 8-bit-backed image held as [0,1] doubles, HWC layout, 1 or 3 channels.
struct Image {
    long h = 0, w = 0, channels = 1;
    std::vector<double> v;

    Image() = default;
    Image(long height, long width, long c)
        : h(height), w(width), channels(c), v(height * width * c, 0.0) {}

    double& at(long i, long j, long c) { return v[(i * w + j) * channels + c]; }
    double at(long i, long j, long c) const { return v[(i * w + j) * channels + c]; }
};

namespace detail {

inline std::uint8_t to_byte(double x) {
    const double s = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
    return static_cast<std::uint8_t>(s * 255.0 + 0.5);
}

struct FileHandle {
    std::FILE* f = nullptr;
    explicit FileHandle(const std::string& path, const char* mode)
        : f(std::fopen(path.c_str(), mode)) {}
    ~FileHandle() {
        if (f) std::fclose(f);
    }
};

}  // namespace detail

inline Image read_png(const std::string& path) {
    detail::FileHandle fh(path, "rb");
    check(fh.f != nullptr, "read_png: cannot open " + path);
    png_byte sig[8];
    check(std::fread(sig, 1, 8, fh.f) == 8 && png_sig_cmp(sig, 0, 8) == 0,
          "read_png: " + path + " is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check(png != nullptr, "read_png: init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail("read_png: init failure");
    }

    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png: failed decoding " + path);
    }
    png_init_io(png, fh.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const long h = png_get_image_height(png, info);
    const long w = png_get_image_width(png, info);
    const long c = png_get_channels(png, info);
    if (c != 1 && c != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png: " + path + " has unsupported channel count " + std::to_string(c));
    }
    pixels.resize(static_cast<std::size_t>(h) * w * c);
    rows.resize(h);
    for (long i = 0; i < h; ++i) rows[i] = pixels.data() + i * w * c;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(h, w, c);
    for (std::size_t i = 0; i < pixels.size(); ++i) img.v[i] = pixels[i] / 255.0;
    return img;
}

inline void write_png(const std::string& path, const Image& img) {
    check(img.channels == 1 || img.channels == 3, "write_png: need 1 or 3 channels");
    check(img.h > 0 && img.w > 0, "write_png: empty image");
    detail::FileHandle fh(path, "wb");
    check(fh.f != nullptr, "write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check(png != nullptr, "write_png: init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail("write_png: init failure");
    }

    std::vector<png_byte> pixels(img.v.size());
    std::vector<png_bytep> rows(img.h);
    for (std::size_t i = 0; i < img.v.size(); ++i) pixels[i] = detail::to_byte(img.v[i]);
    for (long i = 0; i < img.h; ++i) rows[i] = pixels.data() + i * img.w * img.channels;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("write_png: failed encoding " + path);
    }
    png_init_io(png, fh.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

namespace detail {

inline int pnm_next_value(std::istream& is) {
    // skips whitespace and '#' comments between header fields
    while (true) {
        int ch = is.peek();
        if (ch == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(ch)) {
            is.get();
        } else {
            break;
        }
    }
    int value = -1;
    is >> value;
    return value;
}

}  // namespace detail

// binary PGM (P5, 1 channel) / PPM (P6, 3 channels), 8-bit only
inline Image read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(static_cast<bool>(is), "read_pnm: cannot open " + path);
    std::string magic;
    is >> magic;
    check(magic == "P5" || magic == "P6", "read_pnm: " + path + " is not binary PGM/PPM");
    const long c = magic == "P5" ? 1 : 3;
    const long w = detail::pnm_next_value(is);
    const long h = detail::pnm_next_value(is);
    const long maxval = detail::pnm_next_value(is);
    check(w > 0 && h > 0, "read_pnm: bad dimensions in " + path);
    check(maxval == 255, "read_pnm: only 8-bit maxval 255 supported, got " +
                             std::to_string(maxval) + " in " + path);
    is.get();  // single whitespace after maxval
    std::vector<char> raw(static_cast<std::size_t>(h) * w * c);
    is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    check(static_cast<bool>(is), "read_pnm: truncated pixel data in " + path);
    Image img(h, w, c);
    for (std::size_t i = 0; i < raw.size(); ++i)
        img.v[i] = static_cast<std::uint8_t>(raw[i]) / 255.0;
    return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
    check(img.channels == 1 || img.channels == 3, "write_pnm: need 1 or 3 channels");
    std::ofstream os(path, std::ios::binary);
    check(static_cast<bool>(os), "write_pnm: cannot open " + path);
    os << (img.channels == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<char> raw(img.v.size());
    for (std::size_t i = 0; i < img.v.size(); ++i)
        raw[i] = static_cast<char>(detail::to_byte(img.v[i]));
    os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    check(static_cast<bool>(os), "write_pnm: write failed for " + path);
}

inline Image read_image(const std::string& path) {
    if (path.ends_with(".png")) return read_png(path);
    if (path.ends_with(".pgm") || path.ends_with(".ppm")) return read_pnm(path);
    fail("read_image: unsupported format for " + path + " (use .png, .pgm, or .ppm)");
}

inline void write_image(const std::string& path, const Image& img) {
    if (path.ends_with(".png")) return write_png(path, img);
    if (path.ends_with(".pgm") || path.ends_with(".ppm")) return write_pnm(path, img);
    fail("write_image: unsupported format for " + path + " (use .png, .pgm, or .ppm)");
}

}  // namespace hym
