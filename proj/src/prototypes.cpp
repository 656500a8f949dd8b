#include "bppn/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <thread>

#include "bppn/error.hpp"
#include "bppn/io.hpp"

namespace bppn {

namespace {

Tensor batch_of(const Dataset& ds, int begin, int end) {
    const Tensor& first = ds.samples[static_cast<std::size_t>(begin)].image;
    Tensor x({end - begin, 1, first.dim(0), first.dim(1)});
    for (int i = begin; i < end; ++i) {
        const Tensor& img = ds.samples[static_cast<std::size_t>(i)].image;
        std::copy(img.data.begin(), img.data.end(),
                  x.data.begin() + static_cast<std::size_t>(i - begin) * img.numel());
    }
    return x;
}

}  // namespace

std::vector<Tensor> extract_features(const ModelState& model, const Dataset& ds,
                                     int workers) {
    const int n = static_cast<int>(ds.samples.size());
    std::vector<Tensor> feats(static_cast<std::size_t>(n));
    constexpr int kChunk = 16;
    auto run_range = [&](int lo, int hi) {
        for (int b = lo; b < hi; b += kChunk) {
            const int e = std::min(b + kChunk, hi);
            Tensor fm = backbone_forward(model, batch_of(ds, b, e));
            const int d = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
            const std::size_t per = static_cast<std::size_t>(d) * h * w;
            for (int i = b; i < e; ++i) {
                Tensor f({d, h, w});
                std::memcpy(f.data.data(), fm.data.data() + static_cast<std::size_t>(i - b) * per,
                            per * sizeof(float));
                feats[static_cast<std::size_t>(i)] = std::move(f);
            }
        }
    };
    if (workers <= 1 || n < 2 * kChunk) {
        run_range(0, n);
        return feats;
    }
    // each image lands in its own slot, so parallel extraction stays bitwise
    // identical to the serial order
    const int nw = std::min(workers, (n + kChunk - 1) / kChunk);
    std::vector<std::thread> pool;
    const int per_w = ((n + nw - 1) / nw + kChunk - 1) / kChunk * kChunk;
    for (int t = 0; t < nw; ++t) {
        const int lo = t * per_w, hi = std::min(n, (t + 1) * per_w);
        if (lo >= hi) break;
        pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
    return feats;
}

DistanceTable build_distance_table(const ModelState& model, const Dataset& ds, int workers) {
    return build_distance_table(model, ds, extract_features(model, ds, workers));
}

DistanceTable build_distance_table(const ModelState& model, const Dataset& ds,
                                   const std::vector<Tensor>& features) {
    const PrototypeSet& ps = model.prototypes;
    for (int cls = 0; cls < 2; ++cls) {
        bool any = false;
        for (const auto& s : ds.samples) any = any || (s.label == cls);
        if (!any) throw ConfigError("distance table: class " + std::to_string(cls) +
                                    " has zero images");
    }
    const int d = ps.dim();
    DistanceTable table;
    table.per_prototype.resize(static_cast<std::size_t>(ps.count));
    for (int m = 0; m < ps.count; ++m) {
        const int cls = ps.class_of(m);
        const float* pv = ps.vec(m);
        auto& rows = table.per_prototype[static_cast<std::size_t>(m)];
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            if (ds.samples[i].label != cls) continue;
            const Tensor& f = features[i];
            const int h = f.dim(1), w = f.dim(2);
            const int hw = h * w;
            DistanceRecord rec;
            rec.image_index = static_cast<int>(i);
            double best = -1.0;
            int best_pos = 0;
            for (int pos = 0; pos < hw; ++pos) {
                double acc = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double diff = f.data[static_cast<std::size_t>(c) * hw + pos] - pv[c];
                    acc += diff * diff;
                }
                if (best < 0.0 || acc < best) {
                    best = acc;
                    best_pos = pos;
                }
            }
            rec.row = best_pos / w;
            rec.col = best_pos % w;
            rec.distance = best;
            rows.push_back(rec);
        }
        std::sort(rows.begin(), rows.end(), [](const DistanceRecord& a, const DistanceRecord& b) {
            if (a.distance != b.distance) return a.distance < b.distance;
            return a.image_index < b.image_index;
        });
    }
    return table;
}

std::vector<Assignment> greedy_assign(const DistanceTable& table,
                                      const std::vector<int>& image_labels,
                                      const PrototypeSet& ps) {
    const int M = static_cast<int>(table.per_prototype.size());
    for (int cls = 0; cls < 2; ++cls) {
        int imgs = 0;
        for (int l : image_labels) imgs += (l == cls) ? 1 : 0;
        int protos = 0;
        for (int m = 0; m < M; ++m) protos += (ps.class_of(m) == cls) ? 1 : 0;
        if (imgs < protos) {
            throw InsufficientImagesError(
                "greedy selection: class " + std::to_string(cls) + " has " +
                std::to_string(imgs) + " images for " + std::to_string(protos) + " prototypes");
        }
    }
    std::vector<char> used(image_labels.size(), 0);
    std::vector<Assignment> out;
    for (int m = 0; m < M; ++m) {
        const auto& rows = table.per_prototype[static_cast<std::size_t>(m)];
        const DistanceRecord* pick = nullptr;
        for (const auto& rec : rows) {
            if (!used[static_cast<std::size_t>(rec.image_index)]) {
                pick = &rec;
                break;
            }
        }
        if (!pick) {
            throw InsufficientImagesError("greedy selection: prototype " + std::to_string(m) +
                                          " has no unused image left");
        }
        used[static_cast<std::size_t>(pick->image_index)] = 1;
        out.push_back(Assignment{m, *pick});
    }
    return out;
}

std::vector<Assignment> nearest_assign(const DistanceTable& table) {
    std::vector<Assignment> out;
    for (std::size_t m = 0; m < table.per_prototype.size(); ++m) {
        const auto& rows = table.per_prototype[m];
        if (rows.empty()) {
            throw InsufficientImagesError("nearest selection: prototype " + std::to_string(m) +
                                          " has an empty candidate list");
        }
        out.push_back(Assignment{static_cast<int>(m), rows.front()});
    }
    return out;
}

void push_prototypes(ModelState& model, const Dataset& ds, bool greedy, int workers) {
    push_prototypes(model, ds, greedy, extract_features(model, ds, workers));
}

void push_prototypes(ModelState& model, const Dataset& ds, bool greedy,
                     const std::vector<Tensor>& feats) {
    const DistanceTable table = build_distance_table(model, ds, feats);
    std::vector<int> labels;
    labels.reserve(ds.samples.size());
    for (const auto& s : ds.samples) labels.push_back(s.label);

    const std::vector<Assignment> picks =
        greedy ? greedy_assign(table, labels, model.prototypes) : nearest_assign(table);

    PrototypeSet& ps = model.prototypes;
    ps.provenance.assign(static_cast<std::size_t>(ps.count), Provenance{});
    const int d = ps.dim();
    for (const Assignment& a : picks) {
        const Tensor& f = feats[static_cast<std::size_t>(a.record.image_index)];
        const int hw = f.dim(1) * f.dim(2);
        const int pos = a.record.row * f.dim(2) + a.record.col;
        float* dst = ps.vec_mut(a.prototype);
        for (int c = 0; c < d; ++c) {
            dst[c] = f.data[static_cast<std::size_t>(c) * hw + pos];
        }
        ps.provenance[static_cast<std::size_t>(a.prototype)] =
            Provenance{a.record.image_index, a.record.row, a.record.col,
                       static_cast<float>(a.record.distance)};
    }
}

DiversityReport diversity_metrics(const PrototypeSet& ps) {
    if (ps.per_class() < 2) {
        throw MetricError("diversity: need at least 2 prototypes per class");
    }
    const int d = ps.dim();
    DiversityReport rep;
    for (int cls = 0; cls < 2; ++cls) {
        double cos_sum = 0.0, l2_sum = 0.0;
        int pairs = 0;
        for (int a = 0; a < ps.count; ++a) {
            if (ps.class_of(a) != cls) continue;
            for (int b = a + 1; b < ps.count; ++b) {
                if (ps.class_of(b) != cls) continue;
                const float* pa = ps.vec(a);
                const float* pb = ps.vec(b);
                double dot = 0.0, na = 0.0, nb = 0.0, dist = 0.0;
                for (int c = 0; c < d; ++c) {
                    dot += static_cast<double>(pa[c]) * pb[c];
                    na += static_cast<double>(pa[c]) * pa[c];
                    nb += static_cast<double>(pb[c]) * pb[c];
                    const double diff = static_cast<double>(pa[c]) - pb[c];
                    dist += diff * diff;
                }
                if (na == 0.0 || nb == 0.0) {
                    throw MetricError("diversity: cosine undefined for a zero prototype");
                }
                cos_sum += 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
                l2_sum += std::sqrt(dist);
                ++pairs;
            }
        }
        rep.cosine[cls] = cos_sum / pairs;
        rep.l2[cls] = l2_sum / pairs;
    }
    return rep;
}

std::string provenance_csv(const ModelState& model) {
    const PrototypeSet& ps = model.prototypes;
    if (!ps.pushed()) throw MissingProvenanceError("provenance_csv: model has not been pushed");
    std::string out = "prototype,class,image_index,row,col,distance\n";
    for (int m = 0; m < ps.count; ++m) {
        const Provenance& p = ps.provenance[static_cast<std::size_t>(m)];
        out += std::to_string(m) + "," + std::to_string(ps.class_of(m)) + "," +
               std::to_string(p.image_index) + "," + std::to_string(p.row) + "," +
               std::to_string(p.col) + "," + format_float(p.distance) + "\n";
    }
    return out;
}

}  // namespace bppn
