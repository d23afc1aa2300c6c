#include "lsic/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace lsic {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

Tensor load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("load_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("load_png: init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("load_png: init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("load_png: decode error in " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
    Tensor out({3, static_cast<int>(h), static_cast<int>(w)});
    std::size_t plane = static_cast<std::size_t>(h) * w;
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.data[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] =
                    row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] / 127.5 - 1.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void save_png(const std::string& path, const Tensor& image) {
    check_shape(image.rank() == 3 && image.dim(0) == 3, "save_png expects (3,H,W)");
    int h = image.dim(1), w = image.dim(2);

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("save_png: cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("save_png: init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("save_png: init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("save_png: encode error for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = image.data[static_cast<std::size_t>(c) * plane +
                                      static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
                v = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
                row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<png_byte>(std::lround(v));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor resize_area(const Tensor& image, int out_h, int out_w) {
    check_shape(image.rank() == 3, "resize_area expects (C,H,W)");
    int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    check_shape(out_h >= 1 && out_w >= 1 && h % out_h == 0 && w % out_w == 0,
                "resize_area: output must divide input");
    int fy = h / out_h, fx = w / out_w;
    double inv = 1.0 / (static_cast<double>(fy) * fx);
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < fy; ++dy)
                    for (int dx = 0; dx < fx; ++dx)
                        acc += image.data[(static_cast<std::size_t>(ch) * h + y * fy + dy) * w +
                                          x * fx + dx];
                out.data[(static_cast<std::size_t>(ch) * out_h + y) * out_w + x] = acc * inv;
            }
    return out;
}

Tensor resize_nearest(const Tensor& image, int out_h, int out_w) {
    check_shape(image.rank() == 3, "resize_nearest expects (C,H,W)");
    int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y) {
            int sy = static_cast<int>((static_cast<long>(y) * h) / out_h);
            for (int x = 0; x < out_w; ++x) {
                int sx = static_cast<int>((static_cast<long>(x) * w) / out_w);
                out.data[(static_cast<std::size_t>(ch) * out_h + y) * out_w + x] =
                    image.data[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
            }
        }
    return out;
}

Hsv rgb_to_hsv(double r, double g, double b) {
    double mx = std::max({r, g, b});
    double mn = std::min({r, g, b});
    double d = mx - mn;
    Hsv out{0.0, 0.0, mx};
    if (d > 1e-12) {
        if (mx == r)
            out.h = 60.0 * std::fmod((g - b) / d, 6.0);
        else if (mx == g)
            out.h = 60.0 * ((b - r) / d + 2.0);
        else
            out.h = 60.0 * ((r - g) / d + 4.0);
        if (out.h < 0.0) out.h += 360.0;
    }
    if (mx > 1e-12) out.s = d / mx;
    return out;
}

double hue_distance(double a, double b) {
    return std::fabs(std::fmod(a - b + 540.0, 360.0) - 180.0);
}

Tensor clamp_image(const Tensor& image, double lo, double hi) {
    Tensor out = image;
    for (double& v : out.data) v = std::clamp(v, lo, hi);
    return out;
}

Tensor image_grid(const std::vector<Tensor>& images, int columns) {
    if (images.empty()) throw std::invalid_argument("image_grid: no images");
    int h = images.front().dim(1), w = images.front().dim(2);
    for (const auto& im : images)
        check_shape(im.rank() == 3 && im.dim(0) == 3 && im.dim(1) == h && im.dim(2) == w,
                    "image_grid: images must share shape");
    int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
    Tensor out({3, rows * h, columns * w});
    std::fill(out.data.begin(), out.data.end(), 1.0);
    for (int i = 0; i < static_cast<int>(images.size()); ++i) {
        int r = i / columns, ccol = i % columns;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out.data[(static_cast<std::size_t>(c) * rows * h + r * h + y) *
                                 static_cast<std::size_t>(columns) * w +
                             ccol * w + x] =
                        images[static_cast<std::size_t>(i)]
                            .data[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    return out;
}

} // namespace lsic
