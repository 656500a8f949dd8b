#pragma once

#include <vector>

#include "bppn/tensor.hpp"

// Plain float-image helpers shared by preprocessing, augmentation and
// evaluation. Images are rank-2 tensors [H,W] with values in [0,1].

namespace bppn {

// Half-pixel-centre bilinear resampling; out-of-range reads clamp to edge.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// Inverse-mapped affine warp: scale then rotate (degrees, about the image
// centre) then translate by (tx,ty) pixels. Bilinear sampling, zero fill.
Tensor warp_affine(const Tensor& image, float tx, float ty, float rot_deg, float scale);

struct OtsuResult {
    int threshold_bin = 0;   // 8-bit bin; foreground is value > threshold
    bool degenerate = false; // constant/one-sided image: full frame kept
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // crop rectangle, half-open
};

// 256-bin Otsu threshold maximising between-class variance (first maximum on
// plateaus), then the tight bounding box of foreground pixels.
OtsuResult otsu_box(const Tensor& image);

// Crop to the Otsu box and resize back to out_h x out_w.
struct CropResult {
    Tensor image;
    OtsuResult box;
};
CropResult otsu_crop(const Tensor& image, int out_h, int out_w);

}  // namespace bppn
