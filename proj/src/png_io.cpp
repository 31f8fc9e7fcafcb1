#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "sslam/dataio.hpp"

namespace sslam {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct Raster {
    int width = 0, height = 0, channels = 0, depth = 0;
    std::vector<png_byte> data;
    std::size_t row_bytes = 0;
};

Raster read_png(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw FormatError("not a PNG: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng initialization failed");
    }
    Raster r;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_bit_depth(png, info) == 16) png_set_swap(png);  // host little endian
    png_read_update_info(png, info);

    r.width = int(png_get_image_width(png, info));
    r.height = int(png_get_image_height(png, info));
    r.channels = png_get_channels(png, info);
    r.depth = png_get_bit_depth(png, info);
    r.row_bytes = png_get_rowbytes(png, info);
    r.data.resize(r.row_bytes * std::size_t(r.height));
    rows.resize(std::size_t(r.height));
    for (int y = 0; y < r.height; ++y) rows[y] = r.data.data() + r.row_bytes * std::size_t(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return r;
}

void write_png(const std::filesystem::path& path, const Raster& r) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw Error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng initialization failed");
    }
    std::vector<png_bytep> rows(std::size_t(r.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG encoding failed: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, png_uint_32(r.width), png_uint_32(r.height), r.depth,
                 r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 1);
    png_write_info(png, info);
    if (r.depth == 16) png_set_swap(png);
    for (int y = 0; y < r.height; ++y) rows[y] = const_cast<png_bytep>(r.data.data() + r.row_bytes * std::size_t(y));
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

DepthImage read_depth_png(const std::filesystem::path& path) {
    const Raster r = read_png(path);
    if (r.channels != 1 || r.depth != 16) throw FormatError("depth PNG must be 16-bit gray: " + path.string());
    DepthImage d(r.height, r.width);
    for (int y = 0; y < r.height; ++y) {
        const auto* row = reinterpret_cast<const std::uint16_t*>(r.data.data() + r.row_bytes * std::size_t(y));
        for (int x = 0; x < r.width; ++x) d(y, x) = float(row[x] / kTumDepthScale);
    }
    return d;
}

void write_depth_png(const std::filesystem::path& path, const DepthImage& depth) {
    Raster r;
    r.width = int(depth.cols());
    r.height = int(depth.rows());
    r.channels = 1;
    r.depth = 16;
    r.row_bytes = std::size_t(r.width) * 2;
    r.data.resize(r.row_bytes * std::size_t(r.height));
    auto* out = reinterpret_cast<std::uint16_t*>(r.data.data());
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
            const double v = std::isfinite(depth(y, x)) ? std::round(double(depth(y, x)) * kTumDepthScale) : 0.0;
            out[std::size_t(y) * std::size_t(r.width) + std::size_t(x)] = std::uint16_t(std::clamp(v, 0.0, 65535.0));
        }
    }
    write_png(path, r);
}

ColorImage read_color_png(const std::filesystem::path& path) {
    const Raster r = read_png(path);
    if (r.depth != 8 || (r.channels != 1 && r.channels != 3)) throw FormatError("color PNG must be 8-bit: " + path.string());
    ColorImage c{ImageF(r.height, r.width), ImageF(r.height, r.width), ImageF(r.height, r.width)};
    for (int y = 0; y < r.height; ++y) {
        const png_byte* row = r.data.data() + r.row_bytes * std::size_t(y);
        for (int x = 0; x < r.width; ++x) {
            const png_byte* px = row + x * r.channels;
            c.r(y, x) = px[0] / 255.0f;
            c.g(y, x) = px[r.channels == 3 ? 1 : 0] / 255.0f;
            c.b(y, x) = px[r.channels == 3 ? 2 : 0] / 255.0f;
        }
    }
    return c;
}

void write_color_png(const std::filesystem::path& path, const ColorImage& color) {
    Raster r;
    r.width = int(color.r.cols());
    r.height = int(color.r.rows());
    r.channels = 3;
    r.depth = 8;
    r.row_bytes = std::size_t(r.width) * 3;
    r.data.resize(r.row_bytes * std::size_t(r.height));
    auto quant = [](float v) { return png_byte(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
            png_byte* px = r.data.data() + r.row_bytes * std::size_t(y) + std::size_t(x) * 3;
            px[0] = quant(color.r(y, x));
            px[1] = quant(color.g(y, x));
            px[2] = quant(color.b(y, x));
        }
    }
    write_png(path, r);
}

}  // namespace sslam
