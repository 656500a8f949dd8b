#include "bppn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "bppn/error.hpp"

namespace bppn {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg);
}

// Unpacks x [Cin,H,W] (one sample) into col [Cin*kh*kw, Hout*Wout].
void im2col(const float* x, int cin, int h, int w, int kh, int kw, int stride, int pad,
            int hout, int wout, float* col) {
    const int hw = hout * wout;
    for (int c = 0; c < cin; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                float* dst = col + ((static_cast<std::size_t>(c) * kh + i) * kw + j) * hw;
                for (int oy = 0; oy < hout; ++oy) {
                    const int iy = oy * stride - pad + i;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst + static_cast<std::size_t>(oy) * wout, 0,
                                    sizeof(float) * static_cast<std::size_t>(wout));
                        continue;
                    }
                    const float* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
                    float* row = dst + static_cast<std::size_t>(oy) * wout;
                    for (int ox = 0; ox < wout; ++ox) {
                        const int ix = ox * stride - pad + j;
                        row[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatter-adds col gradients back onto the input image.
void col2im_add(const float* col, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int hout, int wout, float* gx) {
    const int hw = hout * wout;
    for (int c = 0; c < cin; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const float* src = col + ((static_cast<std::size_t>(c) * kh + i) * kw + j) * hw;
                for (int oy = 0; oy < hout; ++oy) {
                    const int iy = oy * stride - pad + i;
                    if (iy < 0 || iy >= h) continue;
                    float* dst = gx + (static_cast<std::size_t>(c) * h + iy) * w;
                    const float* row = src + static_cast<std::size_t>(oy) * wout;
                    for (int ox = 0; ox < wout; ++ox) {
                        const int ix = ox * stride - pad + j;
                        if (ix >= 0 && ix < w) dst[ix] += row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    require(x.rank() == 4, "conv2d: input must be [N,Cin,H,W]");
    require(w.rank() == 4, "conv2d: kernel must be [Cout,Cin,kh,kw]");
    require(b.rank() == 1, "conv2d: bias must be [Cout]");
    if (stride < 1) throw ConfigError("conv2d: stride must be positive");
    if (padding < 0) throw ConfigError("conv2d: padding must be non-negative");
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    require(w.dim(1) == cin, "conv2d: kernel Cin mismatch");
    require(b.dim(0) == cout, "conv2d: bias Cout mismatch");
    require(kh <= h + 2 * padding && kw <= wid + 2 * padding,
            "conv2d: kernel larger than padded input");
    const int hout = (h + 2 * padding - kh) / stride + 1;
    const int wout = (wid + 2 * padding - kw) / stride + 1;
    require(hout >= 1 && wout >= 1, "conv2d: empty output");

    Tensor out({n, cout, hout, wout});
    const int k = cin * kh * kw;
    const int hw = hout * wout;
    std::vector<float> col(static_cast<std::size_t>(k) * hw);
    // four output channels share each converted column load
    std::vector<double> acc(4 * static_cast<std::size_t>(hw));
    for (int s = 0; s < n; ++s) {
        im2col(x.data.data() + x.idx4(s, 0, 0, 0), cin, h, wid, kh, kw, stride, padding, hout,
               wout, col.data());
        for (int co = 0; co < cout; co += 4) {
            const int nb = std::min(4, cout - co);
            for (int j = 0; j < nb; ++j) {
                std::fill(acc.begin() + j * hw, acc.begin() + (j + 1) * hw,
                          static_cast<double>(b.data[static_cast<std::size_t>(co + j)]));
            }
            for (int kk = 0; kk < k; ++kk) {
                const float* crow = col.data() + static_cast<std::size_t>(kk) * hw;
                double wv[4];
                for (int j = 0; j < nb; ++j) {
                    wv[j] = w.data[(static_cast<std::size_t>(co + j)) * k + kk];
                }
                if (nb == 4) {
                    double* a0 = acc.data();
                    double* a1 = acc.data() + hw;
                    double* a2 = acc.data() + 2 * hw;
                    double* a3 = acc.data() + 3 * hw;
                    for (int p = 0; p < hw; ++p) {
                        const double c = crow[p];
                        a0[p] += wv[0] * c;
                        a1[p] += wv[1] * c;
                        a2[p] += wv[2] * c;
                        a3[p] += wv[3] * c;
                    }
                } else {
                    for (int j = 0; j < nb; ++j) {
                        double* a = acc.data() + static_cast<std::size_t>(j) * hw;
                        for (int p = 0; p < hw; ++p) a[p] += wv[j] * crow[p];
                    }
                }
            }
            for (int j = 0; j < nb; ++j) {
                float* orow = out.data.data() + out.idx4(s, co + j, 0, 0);
                const double* a = acc.data() + static_cast<std::size_t>(j) * hw;
                for (int p = 0; p < hw; ++p) orow[p] = static_cast<float>(a[p]);
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, int stride, int padding,
                     const Tensor& gout, std::vector<float>* gx, std::vector<float>* gw,
                     std::vector<float>* gb) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int hout = gout.dim(2), wout = gout.dim(3);
    require(gout.dim(0) == n && gout.dim(1) == cout, "conv2d_backward: gout shape mismatch");
    const int k = cin * kh * kw;
    const int hw = hout * wout;

    std::vector<float> col(static_cast<std::size_t>(k) * hw);
    std::vector<float> gcol;
    std::vector<double> acc(static_cast<std::size_t>(hw));
    const bool need_col = gw != nullptr;
    for (int s = 0; s < n; ++s) {
        if (need_col) {
            im2col(x.data.data() + x.idx4(s, 0, 0, 0), cin, h, wid, kh, kw, stride, padding,
                   hout, wout, col.data());
        }
        const float* go = gout.data.data() + gout.idx4(s, 0, 0, 0);
        if (gb) {
            for (int co = 0; co < cout; ++co) {
                double t = 0.0;
                const float* row = go + static_cast<std::size_t>(co) * hw;
                for (int p = 0; p < hw; ++p) t += row[p];
                (*gb)[co] += static_cast<float>(t);
            }
        }
        if (gw) {
            // four kernel rows share each converted gout load
            for (int co = 0; co < cout; ++co) {
                const float* row = go + static_cast<std::size_t>(co) * hw;
                float* gwrow = gw->data() + static_cast<std::size_t>(co) * k;
                int kk = 0;
                for (; kk + 4 <= k; kk += 4) {
                    const float* c0 = col.data() + static_cast<std::size_t>(kk) * hw;
                    const float* c1 = c0 + hw;
                    const float* c2 = c1 + hw;
                    const float* c3 = c2 + hw;
                    double t0 = 0.0, t1 = 0.0, t2 = 0.0, t3 = 0.0;
                    for (int p = 0; p < hw; ++p) {
                        const double g = row[p];
                        t0 += g * c0[p];
                        t1 += g * c1[p];
                        t2 += g * c2[p];
                        t3 += g * c3[p];
                    }
                    gwrow[kk] += static_cast<float>(t0);
                    gwrow[kk + 1] += static_cast<float>(t1);
                    gwrow[kk + 2] += static_cast<float>(t2);
                    gwrow[kk + 3] += static_cast<float>(t3);
                }
                for (; kk < k; ++kk) {
                    const float* crow = col.data() + static_cast<std::size_t>(kk) * hw;
                    double t = 0.0;
                    for (int p = 0; p < hw; ++p) t += static_cast<double>(row[p]) * crow[p];
                    gwrow[kk] += static_cast<float>(t);
                }
            }
        }
        if (gx) {
            gcol.resize(static_cast<std::size_t>(k) * hw);
            acc.resize(4 * static_cast<std::size_t>(hw));
            for (int kk = 0; kk < k; kk += 4) {
                const int nb = std::min(4, k - kk);
                std::fill(acc.begin(), acc.begin() + static_cast<std::size_t>(nb) * hw, 0.0);
                for (int co = 0; co < cout; ++co) {
                    const float* row = go + static_cast<std::size_t>(co) * hw;
                    double wv[4];
                    for (int j = 0; j < nb; ++j) {
                        wv[j] = w.data[static_cast<std::size_t>(co) * k + kk + j];
                    }
                    if (nb == 4) {
                        double* a0 = acc.data();
                        double* a1 = acc.data() + hw;
                        double* a2 = acc.data() + 2 * hw;
                        double* a3 = acc.data() + 3 * hw;
                        for (int p = 0; p < hw; ++p) {
                            const double g = row[p];
                            a0[p] += wv[0] * g;
                            a1[p] += wv[1] * g;
                            a2[p] += wv[2] * g;
                            a3[p] += wv[3] * g;
                        }
                    } else {
                        for (int j = 0; j < nb; ++j) {
                            double* a = acc.data() + static_cast<std::size_t>(j) * hw;
                            for (int p = 0; p < hw; ++p) a[p] += wv[j] * row[p];
                        }
                    }
                }
                for (int j = 0; j < nb; ++j) {
                    float* grow = gcol.data() + static_cast<std::size_t>(kk + j) * hw;
                    const double* a = acc.data() + static_cast<std::size_t>(j) * hw;
                    for (int p = 0; p < hw; ++p) grow[p] = static_cast<float>(a[p]);
                }
            }
            col2im_add(gcol.data(), cin, h, wid, kh, kw, stride, padding, hout, wout,
                       gx->data() + x.idx4(s, 0, 0, 0));
        }
    }
}

Tensor relu(const Tensor& x) {
    Tensor out;
    out.shape = x.shape;
    out.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
    return out;
}

void relu_backward(const Tensor& x, const Tensor& gout, std::vector<float>* gx) {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (x.data[i] > 0.0f) (*gx)[i] += gout.data[i];
    }
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "dense: ranks must be 2/2/1");
    const int n = x.dim(0), f = x.dim(1), o = w.dim(1);
    require(w.dim(0) == f, "dense: weight rows must match input features");
    require(b.dim(0) == o, "dense: bias size must match outputs");
    Tensor out({n, o});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < o; ++j) {
            double acc = b.data[j];
            for (int kk = 0; kk < f; ++kk) {
                acc += static_cast<double>(x.at2(i, kk)) * w.at2(kk, j);
            }
            out.at2(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gout,
                    std::vector<float>* gx, std::vector<float>* gw, std::vector<float>* gb) {
    const int n = x.dim(0), f = x.dim(1), o = w.dim(1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < o; ++j) {
            const double g = gout.at2(i, j);
            if (gb) (*gb)[j] += static_cast<float>(g);
            for (int kk = 0; kk < f; ++kk) {
                if (gw) (*gw)[w.idx2(kk, j)] += static_cast<float>(g * x.at2(i, kk));
                if (gx) (*gx)[x.idx2(i, kk)] += static_cast<float>(g * w.at2(kk, j));
            }
        }
    }
    (void)n; (void)f; (void)o;
}

Tensor softmax(const Tensor& x) {
    require(x.rank() == 2, "softmax: input must be [N,K]");
    const int n = x.dim(0), k = x.dim(1);
    Tensor out({n, k});
    for (int i = 0; i < n; ++i) {
        float mx = x.at2(i, 0);
        for (int j = 1; j < k; ++j) mx = std::max(mx, x.at2(i, j));
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            const float e = std::exp(x.at2(i, j) - mx);
            out.at2(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < k; ++j) out.at2(i, j) = static_cast<float>(out.at2(i, j) / sum);
    }
    return out;
}

void softmax_backward(const Tensor& probs, const Tensor& gout, std::vector<float>* gx) {
    const int n = probs.dim(0), k = probs.dim(1);
    for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < k; ++j) {
            dot += static_cast<double>(gout.at2(i, j)) * probs.at2(i, j);
        }
        for (int j = 0; j < k; ++j) {
            (*gx)[probs.idx2(i, j)] +=
                static_cast<float>(probs.at2(i, j) * (gout.at2(i, j) - dot));
        }
    }
}

Tensor global_avg_pool(const Tensor& x) {
    require(x.rank() == 4, "global_avg_pool: input must be [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require(hw >= 1, "global_avg_pool: empty spatial extent");
    Tensor out({n, c});
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const float* p = x.data.data() + x.idx4(i, ch, 0, 0);
            double acc = 0.0;
            for (int j = 0; j < hw; ++j) acc += p[j];
            out.at2(i, ch) = static_cast<float>(acc / hw);
        }
    }
    return out;
}

void global_avg_pool_backward(const std::vector<int>& xshape, const Tensor& gout,
                              std::vector<float>* gx) {
    const int n = xshape[0], c = xshape[1], hw = xshape[2] * xshape[3];
    const float inv = 1.0f / static_cast<float>(hw);
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const float g = gout.at2(i, ch) * inv;
            float* p = gx->data() + ((static_cast<std::size_t>(i) * c + ch) * hw);
            for (int j = 0; j < hw; ++j) p[j] += g;
        }
    }
}

Tensor sqdist_map(const Tensor& features, const Tensor& prototype) {
    require(prototype.rank() == 1, "sqdist_map: prototype must be [D]");
    return sqdist_map(features, std::span<const float>(prototype.data));
}

Tensor sqdist_map(const Tensor& features, std::span<const float> prototype) {
    require(features.rank() == 4, "sqdist_map: features must be [N,D,h,w]");
    const int n = features.dim(0), d = features.dim(1);
    const int h = features.dim(2), w = features.dim(3);
    require(static_cast<int>(prototype.size()) == d, "sqdist_map: channel count mismatch");
    const int hw = h * w;
    Tensor out({n, h, w});
    std::vector<double> acc(static_cast<std::size_t>(hw));
    for (int s = 0; s < n; ++s) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int c = 0; c < d; ++c) {
            const float* f = features.data.data() + features.idx4(s, c, 0, 0);
            const double pv = prototype[static_cast<std::size_t>(c)];
            for (int p = 0; p < hw; ++p) {
                const double diff = f[p] - pv;
                acc[p] += diff * diff;
            }
        }
        float* o = out.data.data() + out.idx3(s, 0, 0);
        for (int p = 0; p < hw; ++p) o[p] = static_cast<float>(acc[p]);
    }
    return out;
}

void sqdist_map_backward(const Tensor& features, std::span<const float> prototype,
                         const Tensor& gout, std::vector<float>* gfeatures,
                         std::span<float> gprototype) {
    const int n = features.dim(0), d = features.dim(1);
    const int hw = features.dim(2) * features.dim(3);
    for (int s = 0; s < n; ++s) {
        const float* go = gout.data.data() + static_cast<std::size_t>(s) * hw;
        for (int c = 0; c < d; ++c) {
            const float* f = features.data.data() + features.idx4(s, c, 0, 0);
            const float pv = prototype[static_cast<std::size_t>(c)];
            float* gf = gfeatures ? gfeatures->data() + features.idx4(s, c, 0, 0) : nullptr;
            double gp = 0.0;
            for (int p = 0; p < hw; ++p) {
                const float t = 2.0f * (f[p] - pv) * go[p];
                if (gf) gf[p] += t;
                gp -= t;
            }
            if (!gprototype.empty()) gprototype[static_cast<std::size_t>(c)] += static_cast<float>(gp);
        }
    }
}

Tensor exp_sim(const Tensor& dist, float temperature) {
    if (!(temperature > 0.0f)) throw ConfigError("exp_sim: temperature must be positive");
    Tensor out;
    out.shape = dist.shape;
    out.data.resize(dist.data.size());
    const float inv_t = 1.0f / temperature;
    for (std::size_t i = 0; i < dist.data.size(); ++i) {
        out.data[i] = std::exp(-dist.data[i] * inv_t);
    }
    return out;
}

void exp_sim_backward(const Tensor& sim, float temperature, const Tensor& gout,
                      std::vector<float>* gdist) {
    const float inv_t = 1.0f / temperature;
    for (std::size_t i = 0; i < sim.data.size(); ++i) {
        (*gdist)[i] += -sim.data[i] * inv_t * gout.data[i];
    }
}

SpatialMax spatial_max(const Tensor& map) {
    require(map.rank() == 3, "spatial_max: map must be [N,h,w]");
    const int n = map.dim(0), hw = map.dim(1) * map.dim(2);
    if (hw < 1) throw ShapeError("spatial_max: empty spatial extent");
    SpatialMax out;
    out.values = Tensor({n});
    out.argpos.resize(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        const float* p = map.data.data() + static_cast<std::size_t>(s) * hw;
        int best = 0;
        for (int i = 1; i < hw; ++i) {
            if (p[i] > p[best]) best = i;  // strict: ties keep smallest index
        }
        out.values.data[static_cast<std::size_t>(s)] = p[best];
        out.argpos[static_cast<std::size_t>(s)] = best;
    }
    return out;
}

void spatial_max_backward(const std::vector<int>& mapshape, const SpatialMax& mx,
                          const Tensor& gvalues, std::vector<float>* gmap) {
    const int n = mapshape[0], hw = mapshape[1] * mapshape[2];
    for (int s = 0; s < n; ++s) {
        (*gmap)[static_cast<std::size_t>(s) * hw + mx.argpos[static_cast<std::size_t>(s)]] +=
            gvalues.data[static_cast<std::size_t>(s)];
    }
}

}  // namespace bppn
