#include "bppn/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bppn/error.hpp"

namespace bppn {

namespace {

struct Canvas {
    int w, h;
    std::vector<unsigned char> px;  // rgb

    Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_ * 3, 255) {}

    void set(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
        px[i] = r;
        px[i + 1] = g;
        px[i + 2] = b;
    }

    void line(int x0, int y0, int x1, int y1, unsigned char r, unsigned char g,
              unsigned char b) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void dot(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
        for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
                if (dx * dx + dy * dy <= 4) set(x + dx, y + dy, r, g, b);
            }
        }
    }

    std::string to_ppm() const {
        std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
        out.append(reinterpret_cast<const char*>(px.data()), px.size());
        return out;
    }
};

// 3x5 digit glyphs for tick labels
const char* kGlyphs[12] = {
    "111101101101111",  // 0
    "010110010010111",  // 1
    "111001111100111",  // 2
    "111001111001111",  // 3
    "101101111001001",  // 4
    "111100111001111",  // 5
    "111100111101111",  // 6
    "111001001001001",  // 7
    "111101111101111",  // 8
    "111101111001111",  // 9
    "000000010000000",  // .
    "000000000000000",  // space
};

void draw_glyph(Canvas& c, int x, int y, int g) {
    for (int r = 0; r < 5; ++r) {
        for (int col = 0; col < 3; ++col) {
            if (kGlyphs[g][r * 3 + col] == '1') c.set(x + col, y + r, 60, 60, 60);
        }
    }
}

void draw_number(Canvas& c, int x, int y, double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    for (const char* p = buf; *p; ++p) {
        if (*p >= '0' && *p <= '9') {
            draw_glyph(c, x, y, *p - '0');
        } else if (*p == '.') {
            draw_glyph(c, x, y, 10);
        }
        x += 4;
    }
}

}  // namespace

std::string render_curve_ppm(const std::vector<double>& xs, const std::vector<double>& ys,
                             int width, int height) {
    if (xs.size() != ys.size() || xs.empty()) {
        throw ConfigError("render_curve: need matching non-empty series");
    }
    Canvas c(width, height);
    const int ml = 48, mr = 16, mt = 16, mb = 36;  // margins
    const int px0 = ml, px1 = width - mr, py0 = height - mb, py1 = mt;

    double xmin = xs[0], xmax = xs[0];
    for (double v : xs) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    const double ymin = 0.0, ymax = 1.0;  // metric curves live in [0,1]

    auto sx = [&](double v) {
        return px0 + static_cast<int>(std::lround((v - xmin) / (xmax - xmin) * (px1 - px0)));
    };
    auto sy = [&](double v) {
        return py0 - static_cast<int>(std::lround((v - ymin) / (ymax - ymin) * (py0 - py1)));
    };

    // frame and gridlines
    for (int i = 0; i <= 10; ++i) {
        const double fy = ymin + (ymax - ymin) * i / 10.0;
        c.line(px0, sy(fy), px1, sy(fy), 225, 225, 225);
    }
    c.line(px0, py0, px1, py0, 0, 0, 0);
    c.line(px0, py0, px0, py1, 0, 0, 0);
    for (int i = 0; i <= 5; ++i) {
        const double fy = ymin + (ymax - ymin) * i / 5.0;
        c.line(px0 - 3, sy(fy), px0, sy(fy), 0, 0, 0);
        draw_number(c, 8, sy(fy) - 2, fy);
        const double fx = xmin + (xmax - xmin) * i / 5.0;
        c.line(sx(fx), py0, sx(fx), py0 + 3, 0, 0, 0);
        draw_number(c, sx(fx) - 8, py0 + 8, fx);
    }

    for (std::size_t i = 1; i < xs.size(); ++i) {
        c.line(sx(xs[i - 1]), sy(std::clamp(ys[i - 1], 0.0, 1.0)), sx(xs[i]),
               sy(std::clamp(ys[i], 0.0, 1.0)), 30, 60, 200);
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        c.dot(sx(xs[i]), sy(std::clamp(ys[i], 0.0, 1.0)), 30, 60, 200);
    }
    return c.to_ppm();
}

std::string render_overlay_ppm(const Tensor& gray, const Tensor& map) {
    if (gray.rank() != 2 || !gray.same_shape(map)) {
        throw ShapeError("render_overlay: image and map must share [H,W]");
    }
    const int h = gray.dim(0), w = gray.dim(1);
    Canvas c(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float g = std::clamp(gray.at2(y, x), 0.0f, 1.0f);
            const float a = 0.6f * std::clamp(map.at2(y, x), 0.0f, 1.0f);
            const float r = (1 - a) * g + a;
            const float gb = (1 - a) * g;
            c.set(x, y, static_cast<unsigned char>(std::lround(r * 255)),
                  static_cast<unsigned char>(std::lround(gb * 255)),
                  static_cast<unsigned char>(std::lround(gb * 255)));
        }
    }
    return c.to_ppm();
}

std::string render_gray_ppm(const Tensor& gray) {
    if (gray.rank() != 2) throw ShapeError("render_gray: image must be [H,W]");
    const int h = gray.dim(0), w = gray.dim(1);
    Canvas c(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto v = static_cast<unsigned char>(
                std::lround(std::clamp(gray.at2(y, x), 0.0f, 1.0f) * 255));
            c.set(x, y, v, v, v);
        }
    }
    return c.to_ppm();
}

}  // namespace bppn
