#pragma once

// Independent reference implementations used only by tests. Each oracle is a
// deliberately naive re-derivation (enumeration, pairwise counting, exhaustive
// search) kept separate from the library code paths it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "bppn/model.hpp"
#include "bppn/tensor.hpp"

namespace oracle {

// --- float64 op replicas for finite-difference evaluation -----------------------
// Direct-loop re-derivations; the fp32 kernels under test share no code here.

inline double conv2d_mix(const bppn::Tensor& x, const bppn::Tensor& w, const bppn::Tensor& b,
                         int stride, int pad, const std::vector<float>& mix) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int hout = (h + 2 * pad - kh) / stride + 1;
    const int wout = (wid + 2 * pad - kw) / stride + 1;
    double total = 0.0;
    std::size_t mi = 0;
    for (int s = 0; s < n; ++s) {
        for (int co = 0; co < cout; ++co) {
            for (int oy = 0; oy < hout; ++oy) {
                for (int ox = 0; ox < wout; ++ox) {
                    double acc = b.data[static_cast<std::size_t>(co)];
                    for (int ci = 0; ci < cin; ++ci) {
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                                acc += static_cast<double>(w.at4(co, ci, ky, kx)) *
                                       x.at4(s, ci, iy, ix);
                            }
                        }
                    }
                    total += acc * mix[mi++];
                }
            }
        }
    }
    return total;
}

inline double dense_mix(const bppn::Tensor& x, const bppn::Tensor& w, const bppn::Tensor& b,
                        const std::vector<float>& mix) {
    const int n = x.dim(0), f = x.dim(1), o = w.dim(1);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < o; ++j) {
            double acc = b.data[static_cast<std::size_t>(j)];
            for (int k = 0; k < f; ++k) {
                acc += static_cast<double>(x.at2(i, k)) * w.at2(k, j);
            }
            total += acc * mix[static_cast<std::size_t>(i) * o + j];
        }
    }
    return total;
}

inline double spatial_max_mix(const bppn::Tensor& map, const std::vector<float>& mix) {
    const int n = map.dim(0), hw = map.dim(1) * map.dim(2);
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        double best = map.data[static_cast<std::size_t>(s) * hw];
        for (int i = 1; i < hw; ++i) {
            best = std::max(best, static_cast<double>(map.data[static_cast<std::size_t>(s) * hw + i]));
        }
        total += best * mix[static_cast<std::size_t>(s)];
    }
    return total;
}

// conv -> relu -> squared-distance map -> exp similarity -> spatial max
inline double proto_pipeline(const bppn::Tensor& x, const bppn::Tensor& k,
                             const bppn::Tensor& b, const bppn::Tensor& proto, double T) {
    const int cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
    const int cout = k.dim(0);
    std::vector<double> act(static_cast<std::size_t>(cout) * h * wid);
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < h; ++oy) {
            for (int ox = 0; ox < wid; ++ox) {
                double acc = b.data[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy - 1 + ky, ix = ox - 1 + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                            acc += static_cast<double>(k.at4(co, ci, ky, kx)) *
                                   x.at4(0, ci, iy, ix);
                        }
                    }
                }
                act[(static_cast<std::size_t>(co) * h + oy) * wid + ox] = std::max(0.0, acc);
            }
        }
    }
    double best = -1.0;
    for (int p = 0; p < h * wid; ++p) {
        double d = 0.0;
        for (int c = 0; c < cout; ++c) {
            const double diff = act[static_cast<std::size_t>(c) * h * wid + p] -
                                static_cast<double>(proto.data[static_cast<std::size_t>(c)]);
            d += diff * diff;
        }
        best = std::max(best, std::exp(-d / T));
    }
    return best;
}

// mean over samples of the minimum over every (prototype of the wanted side,
// spatial position) pair, enumerated flat
inline double double_min_enumeration(const bppn::Tensor& features, const bppn::PrototypeSet& ps,
                                     const std::vector<int>& labels, bool other_class) {
    const int n = features.dim(0), d = features.dim(1);
    const int hw = features.dim(2) * features.dim(3);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> candidates;
        for (int m = 0; m < ps.count; ++m) {
            const bool own = ps.class_of(m) == labels[static_cast<std::size_t>(i)];
            if (own == other_class) continue;
            for (int pos = 0; pos < hw; ++pos) {
                double acc = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double diff =
                        features.data[(static_cast<std::size_t>(i) * d + c) * hw + pos] -
                        ps.vec(m)[c];
                    acc += diff * diff;
                }
                candidates.push_back(acc);
            }
        }
        total += *std::min_element(candidates.begin(), candidates.end());
    }
    return total / n;
}

// fraction of (positive, negative) pairs ordered correctly, ties at 0.5
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

// exhaustive 256-threshold search for the between-class variance maximiser,
// recomputed from raw pixels per candidate threshold
inline int exhaustive_otsu(const bppn::Tensor& image) {
    int best_t = -1;
    double best_var = -1.0;
    for (int t = 0; t < 255; ++t) {
        double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
        for (float v : image.data) {
            const int bin = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            if (bin <= t) {
                n0 += 1;
                s0 += bin;
            } else {
                n1 += 1;
                s1 += bin;
            }
        }
        if (n0 == 0 || n1 == 0) continue;
        const double mu0 = s0 / n0, mu1 = s1 / n1;
        const double var = n0 * n1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    return best_t;
}

// step-trace reference for greedy selection: no sorted lists, just repeated
// scans for the nearest unused image of each prototype in index order
struct TraceEntry {
    int image = -1;
    double distance = 0.0;
};
inline std::vector<TraceEntry> greedy_trace(
    const std::vector<std::vector<std::pair<int, double>>>& unsorted_per_proto) {
    std::vector<TraceEntry> out;
    std::vector<int> used;
    for (const auto& cands : unsorted_per_proto) {
        TraceEntry pick;
        for (const auto& [img, dist] : cands) {
            if (std::find(used.begin(), used.end(), img) != used.end()) continue;
            if (pick.image < 0 || dist < pick.distance ||
                (dist == pick.distance && img < pick.image)) {
                pick.image = img;
                pick.distance = dist;
            }
        }
        out.push_back(pick);
        if (pick.image >= 0) used.push_back(pick.image);
    }
    return out;
}

// minimum total distance over all injective prototype->image assignments
inline double best_injection_total(
    const std::vector<std::vector<std::pair<int, double>>>& per_proto, std::size_t proto = 0,
    std::uint32_t used_mask = 0) {
    if (proto == per_proto.size()) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [img, dist] : per_proto[proto]) {
        if (used_mask & (1u << img)) continue;
        best = std::min(best, dist + best_injection_total(per_proto, proto + 1,
                                                          used_mask | (1u << img)));
    }
    return best;
}

// average precision recomputed per cut from scratch
struct PrCase {
    double conf = 0.0;
    bool has_mask = false;
    bool tp = false;
};
inline double ap_enumeration(std::vector<PrCase> cases) {
    std::size_t with_mask = 0;
    for (const auto& c : cases) with_mask += c.has_mask ? 1 : 0;
    std::vector<double> cuts;
    for (const auto& c : cases) cuts.push_back(c.conf);
    std::sort(cuts.begin(), cuts.end(), std::greater<>());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    double ap = 0.0, prev_recall = 0.0;
    for (double cut : cuts) {
        double tp = 0, det = 0;
        for (const auto& c : cases) {
            if (c.conf >= cut) {
                det += 1;
                tp += c.tp ? 1 : 0;
            }
        }
        const double precision = tp / det;
        const double recall = tp / static_cast<double>(with_mask);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

}  // namespace oracle
