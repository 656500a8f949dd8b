#include "bppn/imageops.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "bppn/error.hpp"

namespace bppn {

namespace {

float sample_clamped(const Tensor& img, int y, int x) {
    y = std::clamp(y, 0, img.dim(0) - 1);
    x = std::clamp(x, 0, img.dim(1) - 1);
    return img.at2(y, x);
}

float sample_zero(const Tensor& img, int y, int x) {
    if (y < 0 || y >= img.dim(0) || x < 0 || x >= img.dim(1)) return 0.0f;
    return img.at2(y, x);
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 2) throw ShapeError("resize_bilinear: image must be [H,W]");
    if (out_h < 1 || out_w < 1) throw ConfigError("resize_bilinear: empty output");
    const int h = image.dim(0), w = image.dim(1);
    Tensor out({out_h, out_w});
    const float sy = static_cast<float>(h) / out_h;
    const float sx = static_cast<float>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        const float fy = (oy + 0.5f) * sy - 0.5f;
        const int y0 = static_cast<int>(std::floor(fy));
        const float wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            const float fx = (ox + 0.5f) * sx - 0.5f;
            const int x0 = static_cast<int>(std::floor(fx));
            const float wx = fx - x0;
            const float v00 = sample_clamped(image, y0, x0);
            const float v01 = sample_clamped(image, y0, x0 + 1);
            const float v10 = sample_clamped(image, y0 + 1, x0);
            const float v11 = sample_clamped(image, y0 + 1, x0 + 1);
            out.at2(oy, ox) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                              wy * ((1 - wx) * v10 + wx * v11);
        }
    }
    return out;
}

Tensor warp_affine(const Tensor& image, float tx, float ty, float rot_deg, float scale) {
    if (image.rank() != 2) throw ShapeError("warp_affine: image must be [H,W]");
    if (!(scale > 0.0f)) throw ConfigError("warp_affine: scale must be positive");
    const int h = image.dim(0), w = image.dim(1);
    const float cy = 0.5f * h, cx = 0.5f * w;
    const float rad = rot_deg * 3.14159265358979323846f / 180.0f;
    const float c = std::cos(rad), s = std::sin(rad);
    Tensor out({h, w});
    for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
            // invert translate -> rotate -> scale
            const float u = (ox + 0.5f) - cx - tx;
            const float v = (oy + 0.5f) - cy - ty;
            const float ru = (c * u + s * v) / scale;
            const float rv = (-s * u + c * v) / scale;
            const float fx = ru + cx - 0.5f;
            const float fy = rv + cy - 0.5f;
            const int x0 = static_cast<int>(std::floor(fx));
            const int y0 = static_cast<int>(std::floor(fy));
            const float wx = fx - x0, wy = fy - y0;
            const float v00 = sample_zero(image, y0, x0);
            const float v01 = sample_zero(image, y0, x0 + 1);
            const float v10 = sample_zero(image, y0 + 1, x0);
            const float v11 = sample_zero(image, y0 + 1, x0 + 1);
            out.at2(oy, ox) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                              wy * ((1 - wx) * v10 + wx * v11);
        }
    }
    return out;
}

OtsuResult otsu_box(const Tensor& image) {
    if (image.rank() != 2 || image.numel() == 0) throw ShapeError("otsu_box: empty image");
    const int h = image.dim(0), w = image.dim(1);
    std::array<std::int64_t, 256> hist{};
    for (float v : image.data) {
        int bin = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        ++hist[static_cast<std::size_t>(bin)];
    }
    const double total = static_cast<double>(image.numel());
    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += static_cast<double>(i) * hist[i];

    double best_var = -1.0;
    int best_t = -1;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < 255; ++t) {  // foreground = bins > t, so both sides non-empty only for t<255
        w0 += hist[t];
        sum0 += static_cast<double>(t) * hist[t];
        const double w1 = total - w0;
        if (w0 <= 0.0 || w1 <= 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }

    OtsuResult r;
    if (best_t < 0) {
        r.degenerate = true;
        r.x0 = 0;
        r.y0 = 0;
        r.x1 = w;
        r.y1 = h;
        return r;
    }
    r.threshold_bin = best_t;
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int bin = static_cast<int>(
                std::lround(std::clamp(image.at2(y, x), 0.0f, 1.0f) * 255.0f));
            if (bin > best_t) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
        }
    }
    r.x0 = x0;
    r.y0 = y0;
    r.x1 = x1 + 1;
    r.y1 = y1 + 1;
    return r;
}

CropResult otsu_crop(const Tensor& image, int out_h, int out_w) {
    CropResult res;
    res.box = otsu_box(image);
    const int ch = res.box.y1 - res.box.y0;
    const int cw = res.box.x1 - res.box.x0;
    Tensor crop({ch, cw});
    for (int y = 0; y < ch; ++y) {
        for (int x = 0; x < cw; ++x) {
            crop.at2(y, x) = image.at2(res.box.y0 + y, res.box.x0 + x);
        }
    }
    res.image = resize_bilinear(crop, out_h, out_w);
    return res;
}

}  // namespace bppn
