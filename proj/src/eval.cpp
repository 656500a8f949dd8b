#include "bppn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "bppn/error.hpp"
#include "bppn/imageops.hpp"
#include "bppn/io.hpp"
#include "bppn/plot.hpp"

namespace bppn {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw ShapeError("roc_auc: scores and labels must match and be non-empty");
    }
    std::size_t npos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ConfigError("roc_auc: labels must be 0 or 1");
        npos += static_cast<std::size_t>(l);
    }
    const std::size_t nneg = labels.size() - npos;
    if (npos == 0 || nneg == 0) {
        throw MetricError("roc_auc: undefined when only one class is present");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks over tie groups, then the Mann-Whitney U statistic
    double rank_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1) rank_pos += avg_rank;
        }
        i = j + 1;
    }
    const double u = rank_pos - static_cast<double>(npos) * (static_cast<double>(npos) + 1.0) / 2.0;
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

Tensor binarize_map(const Tensor& map, float threshold, int out_h, int out_w) {
    Tensor up = resize_bilinear(map, out_h, out_w);
    for (float& v : up.data) v = (v > threshold) ? 1.0f : 0.0f;
    return up;
}

double iou(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("iou: mask shapes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool av = a.data[i] > 0.5f, bv = b.data[i] > 0.5f;
        inter += (av && bv) ? 1 : 0;
        uni += (av || bv) ? 1 : 0;
    }
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double pr_auc_at_iou(const std::vector<LocalisationCase>& cases, double iou_threshold) {
    struct Det {
        double conf;
        bool tp;
    };
    std::vector<Det> dets;
    std::size_t with_mask = 0;
    for (const auto& c : cases) {
        if (c.excluded) continue;
        const bool tp = c.has_mask() && c.iou_value >= iou_threshold;
        dets.push_back({c.cancer_prob, tp});
        with_mask += c.has_mask() ? 1 : 0;
    }
    if (with_mask == 0) {
        throw MetricError("pr_auc: no non-excluded case carries a ground-truth mask");
    }
    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.conf > b.conf; });

    // average precision over distinct confidence cuts
    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, seen = 0;
    std::size_t i = 0;
    while (i < dets.size()) {
        std::size_t j = i;
        while (j + 1 < dets.size() && dets[j + 1].conf == dets[i].conf) ++j;
        for (std::size_t k = i; k <= j; ++k) {
            ++seen;
            tp += dets[k].tp ? 1 : 0;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        const double recall = static_cast<double>(tp) / static_cast<double>(with_mask);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    return ap;
}

std::vector<SweepPoint> localisation_sweep(const std::vector<LocalisationCase>& cases) {
    std::vector<SweepPoint> out;
    for (int i = 1; i <= 10; ++i) {
        const double thr = static_cast<double>(i) * 0.05;
        out.push_back({thr, pr_auc_at_iou(cases, thr)});
    }
    return out;
}

EvalReport evaluate(const ModelState& model, const Dataset& test, int workers) {
    const int n = static_cast<int>(test.samples.size());
    if (n == 0) throw ConfigError("evaluate: empty test set");
    const int H = model.cfg.backbone.height, W = model.cfg.backbone.width;
    const int M = model.prototypes.count;
    const int cancer_lo = model.prototypes.per_class();  // cancer prototypes are the top half

    EvalReport rep;
    rep.cases.resize(static_cast<std::size_t>(n));
    std::vector<double> pg(static_cast<std::size_t>(n)), pl(static_cast<std::size_t>(n)),
        pe(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));

    auto run_one = [&](int i) {
        const Sample& s = test.samples[static_cast<std::size_t>(i)];
        Tensor x({1, 1, H, W});
        x.data = s.image.data;
        Prediction pred = predict(model, x);
        pg[static_cast<std::size_t>(i)] = pred.global_probs.at2(0, 1);
        pl[static_cast<std::size_t>(i)] = pred.proto_probs.at2(0, 1);
        pe[static_cast<std::size_t>(i)] = pred.ensemble.at2(0, 1);
        labels[static_cast<std::size_t>(i)] = s.label;

        LocalisationCase& lc = rep.cases[static_cast<std::size_t>(i)];
        lc.image_id = s.name;
        lc.cancer_prob = pred.ensemble.at2(0, 1);
        lc.excluded = lc.cancer_prob < 0.1;
        int best = cancer_lo;
        for (int m = cancer_lo; m < M; ++m) {
            if (pred.scores.at2(0, m) > pred.scores.at2(0, best)) best = m;
        }
        lc.top_proto = best;
        lc.top_score = pred.scores.at2(0, best);
        const Tensor& map = pred.maps[static_cast<std::size_t>(best)];
        Tensor flat({map.dim(1), map.dim(2)});
        std::copy(map.data.begin(), map.data.end(), flat.data.begin());
        Tensor up = resize_bilinear(flat, H, W);
        lc.region = up;
        for (float& v : lc.region.data) v = (v > 0.5f) ? 1.0f : 0.0f;
        if (s.has_mask()) {
            lc.mask = s.mask;
            lc.iou_value = iou(lc.region, lc.mask);
            std::size_t peak = 0;
            for (std::size_t k = 1; k < up.data.size(); ++k) {
                if (up.data[k] > up.data[peak]) peak = k;
            }
            lc.argmax_in_mask = lc.mask.data[peak] > 0.5f;
        }
    };

    if (workers <= 1) {
        for (int i = 0; i < n; ++i) run_one(i);
    } else {
        // per-case slots: parallel order cannot change any result bit
        std::vector<std::thread> pool;
        const int nw = std::min(workers, n);
        for (int t = 0; t < nw; ++t) {
            pool.emplace_back([&, t]() {
                for (int i = t; i < n; i += nw) run_one(i);
            });
        }
        for (auto& th : pool) th.join();
    }

    rep.auc_global = roc_auc(pg, labels);
    rep.auc_proto = roc_auc(pl, labels);
    rep.auc_ensemble = roc_auc(pe, labels);
    rep.diversity = diversity_metrics(model.prototypes);
    rep.sweep = localisation_sweep(rep.cases);

    int included_pos = 0, in_mask = 0;
    for (const auto& c : rep.cases) {
        rep.num_excluded += c.excluded ? 1 : 0;
        if (!c.excluded && c.has_mask()) {
            ++included_pos;
            in_mask += c.argmax_in_mask ? 1 : 0;
        }
    }
    rep.argmax_in_mask_rate =
        included_pos > 0 ? static_cast<double>(in_mask) / included_pos : 0.0;
    return rep;
}

std::string metrics_json(const EvalReport& r) {
    std::string j = "{\n";
    j += "  \"auc\": {\n";
    j += "    \"global\": " + format_float(r.auc_global) + ",\n";
    j += "    \"protopnet\": " + format_float(r.auc_proto) + ",\n";
    j += "    \"ensemble\": " + format_float(r.auc_ensemble) + "\n  },\n";
    j += "  \"diversity\": {\n";
    j += "    \"cosine\": {\"non_cancer\": " + format_float(r.diversity.cosine[0]) +
         ", \"cancer\": " + format_float(r.diversity.cosine[1]) + "},\n";
    j += "    \"l2\": {\"non_cancer\": " + format_float(r.diversity.l2[0]) +
         ", \"cancer\": " + format_float(r.diversity.l2[1]) + "}\n  },\n";
    j += "  \"pr_auc_vs_iou\": [\n";
    for (std::size_t i = 0; i < r.sweep.size(); ++i) {
        j += "    {\"iou\": " + format_float(r.sweep[i].iou_threshold) +
             ", \"pr_auc\": " + format_float(r.sweep[i].pr_auc) + "}";
        j += (i + 1 < r.sweep.size()) ? ",\n" : "\n";
    }
    j += "  ],\n";
    j += "  \"localisation\": {\n";
    j += "    \"cases\": " + std::to_string(r.cases.size()) + ",\n";
    j += "    \"excluded\": " + std::to_string(r.num_excluded) + ",\n";
    j += "    \"argmax_in_mask_rate\": " + format_float(r.argmax_in_mask_rate) + "\n  }\n";
    j += "}\n";
    return j;
}

std::string localisation_csv(const EvalReport& r) {
    std::string out = "image_id,cancer_prob,excluded,top_proto,top_score,iou,argmax_in_mask\n";
    for (const auto& c : r.cases) {
        out += c.image_id + "," + format_float(c.cancer_prob) + "," +
               (c.excluded ? "1" : "0") + "," + std::to_string(c.top_proto) + "," +
               format_float(c.top_score) + "," + format_float(c.iou_value) + "," +
               (c.argmax_in_mask ? "1" : "0") + "\n";
    }
    return out;
}

std::string sweep_csv(const EvalReport& r) {
    std::string out = "iou_threshold,pr_auc\n";
    for (const auto& p : r.sweep) {
        out += format_float(p.iou_threshold) + "," + format_float(p.pr_auc) + "\n";
    }
    return out;
}

void write_eval_artifacts(const EvalReport& report, const std::filesystem::path& out_dir) {
    atomic_write_file(out_dir / "metrics.json", metrics_json(report));
    atomic_write_file(out_dir / "localisation.csv", localisation_csv(report));
    atomic_write_file(out_dir / "pr_auc_sweep.csv", sweep_csv(report));
    std::vector<double> xs, ys;
    for (const auto& p : report.sweep) {
        xs.push_back(p.iou_threshold);
        ys.push_back(p.pr_auc);
    }
    atomic_write_file(out_dir / "pr_auc_sweep.ppm", render_curve_ppm(xs, ys));
}

}  // namespace bppn
