#pragma once

#include <string>

#include "lsic/tensor.hpp"

namespace lsic {

// Image convention throughout: (3,H,W) doubles in [-1,1]; batches prepend N.

Tensor load_png(const std::string& path);              // -> (3,H,W) in [-1,1]
void save_png(const std::string& path, const Tensor& image); // clamps to [-1,1]

// Box-filter downsampling by an integer factor (ground truth for the
// hierarchical output scales).
Tensor resize_area(const Tensor& image, int out_h, int out_w);

// Nearest-neighbour resize; used for CLI inputs of arbitrary size.
Tensor resize_nearest(const Tensor& image, int out_h, int out_w);

struct Hsv {
    double h; // degrees [0, 360)
    double s;
    double v;
};

// r,g,b in [0,1]
Hsv rgb_to_hsv(double r, double g, double b);

// minimal angular distance between two hues, in degrees [0, 180]
double hue_distance(double a, double b);

// (N,3,H,W) or (3,H,W) -> same shape, values clamped to [lo, hi]
Tensor clamp_image(const Tensor& image, double lo = -1.0, double hi = 1.0);

// Mosaic of equally sized images arranged in a grid, row-major.
Tensor image_grid(const std::vector<Tensor>& images, int columns);

} // namespace lsic
