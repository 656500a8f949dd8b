#pragma once

#include <string>
#include <vector>

#include "bppn/tensor.hpp"

// Minimal raster rendering so runs need no external plotting stack.

namespace bppn {

// Line plot with axes and tick labels; returns binary PPM (P6) bytes.
std::string render_curve_ppm(const std::vector<double>& xs, const std::vector<double>& ys,
                             int width = 480, int height = 360);

// Grayscale image with a heat overlay of `map` (both [H,W], values in [0,1]).
std::string render_overlay_ppm(const Tensor& gray, const Tensor& map);

std::string render_gray_ppm(const Tensor& gray);

}  // namespace bppn
