#include "pointpose/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace pointpose::io {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const char* what) {
    throw std::runtime_error(path + ": " + what);
}

void write_png(const std::string& path, int width, int height, int bit_depth, int color_type,
               const std::vector<png_bytep>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(path, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(path, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail(path, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(path, "libpng write error");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);  // buffers are host little-endian
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void read_png(const std::string& path, int expect_color_type, int expect_depth, int& width,
              int& height, std::vector<uint8_t>& out) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(path, "cannot open");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(path, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(path, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "libpng read error");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    int depth = png_get_bit_depth(png, info);
    int ctype = png_get_color_type(png, info);
    if (depth != expect_depth || ctype != expect_color_type) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "unexpected PNG pixel format");
    }
    if (depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    size_t rowbytes = png_get_rowbytes(png, info);
    out.resize(rowbytes * static_cast<size_t>(height));
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<size_t>(y)] = out.data() + rowbytes * static_cast<size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void save_png_gray16(const std::string& path, int width, int height,
                     const std::vector<uint16_t>& pixels) {
    if (pixels.size() != static_cast<size_t>(width) * height)
        fail(path, "pixel buffer size mismatch");
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<size_t>(y)] =
            reinterpret_cast<png_bytep>(const_cast<uint16_t*>(pixels.data()) + static_cast<size_t>(y) * width);
    write_png(path, width, height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

std::vector<uint16_t> load_png_gray16(const std::string& path, int& width, int& height) {
    std::vector<uint8_t> raw;
    read_png(path, PNG_COLOR_TYPE_GRAY, 16, width, height, raw);
    std::vector<uint16_t> out(static_cast<size_t>(width) * height);
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

void save_png_rgb8(const std::string& path, int width, int height,
                   const std::vector<uint8_t>& pixels) {
    if (pixels.size() != static_cast<size_t>(width) * height * 3)
        fail(path, "pixel buffer size mismatch");
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width * 3);
    write_png(path, width, height, 8, PNG_COLOR_TYPE_RGB, rows);
}

std::vector<uint8_t> load_png_rgb8(const std::string& path, int& width, int& height) {
    std::vector<uint8_t> out;
    read_png(path, PNG_COLOR_TYPE_RGB, 8, width, height, out);
    return out;
}

}  // namespace pointpose::io
