#include "bppn/reference.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "bppn/error.hpp"

namespace bppn::ref {

namespace {

struct Image {
    int ch = 0, h = 0, w = 0;
    std::vector<double> v;

    double at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
};

Image conv3x3(const Image& in, const Param& weight, const Param& bias, int stride) {
    const int cout = weight.value.dim(0), cin = weight.value.dim(1);
    Image out;
    out.ch = cout;
    out.h = (in.h + 2 - 3) / stride + 1;
    out.w = (in.w + 2 - 3) / stride + 1;
    out.v.assign(static_cast<std::size_t>(cout) * out.h * out.w, 0.0);
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < out.h; ++oy) {
            for (int ox = 0; ox < out.w; ++ox) {
                double acc = bias.value.data[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * stride - 1 + ky;
                            const int ix = ox * stride - 1 + kx;
                            if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                            acc += static_cast<double>(
                                       weight.value.data[((static_cast<std::size_t>(co) * cin +
                                                           ci) * 3 + ky) * 3 + kx]) *
                                   in.at(ci, iy, ix);
                        }
                    }
                }
                out.v[(static_cast<std::size_t>(co) * out.h + oy) * out.w + ox] = acc;
            }
        }
    }
    return out;
}

void relu_inplace(Image& im) {
    for (double& v : im.v) v = v > 0.0 ? v : 0.0;
}

std::array<double, 2> softmax2(double a, double b) {
    const double mx = std::max(a, b);
    const double ea = std::exp(a - mx), eb = std::exp(b - mx);
    return {ea / (ea + eb), eb / (ea + eb)};
}

struct SampleForward {
    Image features;
    std::array<double, 2> gprobs{};
    std::array<double, 2> lprobs{};
};

SampleForward forward_one(const ModelState& model, const float* pixels, bool with_proto) {
    const BackboneConfig& bb = model.cfg.backbone;
    Image cur;
    cur.ch = 1;
    cur.h = bb.height;
    cur.w = bb.width;
    cur.v.assign(pixels, pixels + static_cast<std::size_t>(bb.height) * bb.width);
    for (std::size_t b = 0; b < bb.stage_channels.size(); ++b) {
        cur = conv3x3(cur, model.backbone[b * 4], model.backbone[b * 4 + 1], 1);
        relu_inplace(cur);
        cur = conv3x3(cur, model.backbone[b * 4 + 2], model.backbone[b * 4 + 3], 2);
        relu_inplace(cur);
    }

    SampleForward out;
    const int d = cur.ch, hw = cur.h * cur.w;
    std::vector<double> gap(static_cast<std::size_t>(d), 0.0);
    for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int p = 0; p < hw; ++p) acc += cur.v[static_cast<std::size_t>(c) * hw + p];
        gap[static_cast<std::size_t>(c)] = acc / hw;
    }
    const Param& gw = model.global_head[0];
    const Param& gb = model.global_head[1];
    double logits[2];
    for (int o = 0; o < 2; ++o) {
        double acc = gb.value.data[static_cast<std::size_t>(o)];
        for (int c = 0; c < d; ++c) {
            acc += gap[static_cast<std::size_t>(c)] *
                   static_cast<double>(gw.value.data[static_cast<std::size_t>(c) * 2 + o]);
        }
        logits[o] = acc;
    }
    out.gprobs = softmax2(logits[0], logits[1]);

    if (!with_proto) {
        out.features = std::move(cur);
        return out;
    }

    const PrototypeSet& ps = model.prototypes;
    std::vector<double> scores(static_cast<std::size_t>(ps.count));
    for (int m = 0; m < ps.count; ++m) {
        double best = -1.0;
        for (int p = 0; p < hw; ++p) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c) {
                const double diff = cur.v[static_cast<std::size_t>(c) * hw + p] -
                                    static_cast<double>(ps.vec(m)[c]);
                acc += diff * diff;
            }
            const double sim = std::exp(-acc / static_cast<double>(ps.temperature));
            if (sim > best) best = sim;
        }
        scores[static_cast<std::size_t>(m)] = best;
    }
    const Param& kw = model.proto_head[0];
    const Param& kb = model.proto_head[1];
    double klogits[2];
    for (int o = 0; o < 2; ++o) {
        double acc = kb.value.data[static_cast<std::size_t>(o)];
        for (int m = 0; m < ps.count; ++m) {
            acc += scores[static_cast<std::size_t>(m)] *
                   static_cast<double>(kw.value.data[static_cast<std::size_t>(m) * 2 + o]);
        }
        klogits[o] = acc;
    }
    out.lprobs = softmax2(klogits[0], klogits[1]);
    out.features = std::move(cur);
    return out;
}

double min_dist_term(const Batch& batch, const ModelState& model, bool other_class) {
    const int n = batch.size();
    const PrototypeSet& ps = model.prototypes;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const SampleForward f = forward_one(
            model, batch.images.data.data() + batch.images.idx4(i, 0, 0, 0), false);
        const int d = f.features.ch, hw = f.features.h * f.features.w;
        double best = -1.0;
        for (int m = 0; m < ps.count; ++m) {
            const bool own = ps.class_of(m) == batch.labels[static_cast<std::size_t>(i)];
            if (own == other_class) continue;
            for (int p = 0; p < hw; ++p) {
                double acc = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double diff = f.features.v[static_cast<std::size_t>(c) * hw + p] -
                                        static_cast<double>(ps.vec(m)[c]);
                    acc += diff * diff;
                }
                if (best < 0.0 || acc < best) best = acc;
            }
        }
        total += best;
    }
    return total / n;
}

}  // namespace

double objective(const Batch& batch, const ModelState& model, const HyperParams& hp,
                 const ObjectiveFlags& flags) {
    const int n = batch.size();
    const bool need_proto = flags.use_ppn || flags.kd_weight != 0.0;

    double ce_g = 0.0, ce_l = 0.0, kd = 0.0, cluster = 0.0, separation = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = batch.labels[static_cast<std::size_t>(i)];
        const SampleForward f = forward_one(
            model, batch.images.data.data() + batch.images.idx4(i, 0, 0, 0), need_proto);
        ce_g -= std::log(std::max(1e-12, f.gprobs[static_cast<std::size_t>(y)]));
        if (need_proto) {
            ce_l -= std::log(std::max(1e-12, f.lprobs[static_cast<std::size_t>(y)]));
            const double teacher =
                flags.frozen_teacher
                    ? static_cast<double>(flags.frozen_teacher->at2(i, y))
                    : f.gprobs[static_cast<std::size_t>(y)];
            kd += std::max(0.0, teacher - f.lprobs[static_cast<std::size_t>(y)] +
                                    static_cast<double>(hp.omega));
        }
    }
    ce_g /= n;
    ce_l /= n;
    kd /= n;

    double total = flags.ceg_weight * ce_g;
    if (flags.use_ppn) {
        cluster = min_dist_term(batch, model, false);
        separation = min_dist_term(batch, model, true);
        const double hinge = std::max(0.0, static_cast<double>(hp.gamma) - separation);
        total += ce_l + hp.lambda1 * cluster + hp.lambda2 * hinge;
    }
    total += flags.kd_weight * kd;
    return total;
}

double cluster_term(const Batch& batch, const ModelState& model) {
    return min_dist_term(batch, model, false);
}

double separation_term(const Batch& batch, const ModelState& model) {
    return min_dist_term(batch, model, true);
}

}  // namespace bppn::ref
