// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failed criteria. Heavy end-to-end criteria share nine full training runs
// (three seeds x {default, no-distillation, no-greedy-push}).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "bppn/data.hpp"
#include "bppn/error.hpp"
#include "bppn/eval.hpp"
#include "bppn/gradcheck_suite.hpp"
#include "bppn/imageops.hpp"
#include "bppn/io.hpp"
#include "bppn/losses.hpp"
#include "bppn/model.hpp"
#include "bppn/prototypes.hpp"
#include "bppn/rng.hpp"
#include "bppn/training.hpp"
#include "oracles.hpp"

using namespace bppn;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& id, const std::string& name, bool pass,
            const std::string& detail) {
    std::printf("[%s] criterion %s: %s%s%s\n", pass ? "PASS" : "FAIL", id.c_str(), name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

// --- criterion 1: gradient correctness -------------------------------------------

void criterion_gradients() {
    const double t0 = now_seconds();
    const auto checks = run_registered_gradchecks(2024, 20);
    const double dt = now_seconds() - t0;
    bool all = true;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& c : checks) {
        all = all && c.pass;
        if (c.max_rel_err > worst) {
            worst = c.max_rel_err;
            worst_name = c.name;
        }
    }
    const bool in_time = dt < 120.0;
    report("1", "gradient correctness", all && in_time,
           "worst rel err " + fmt(worst, 6) + " (" + worst_name + "), " + fmt(dt, 1) + " s");
}

// --- criterion 2: oracle equivalence ----------------------------------------------

void criterion_oracles() {
    Rng rng = make_rng(0xacce97ULL);
    int mismatches = 0;

    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> grid(1, 4), chans(2, 6), counts(1, 4), ns(1, 3);
        const int h = grid(rng), w = grid(rng), d = chans(rng);
        const int m = 2 * counts(rng);
        const int n = ns(rng);
        PrototypeSet ps;
        ps.count = m;
        ps.temperature = 1.0f;
        Tensor pv({m, d});
        for (float& v : pv.data) v = uniform_float(rng, -2.0f, 2.0f);
        ps.vectors = Param("p", std::move(pv));
        Tensor feat({n, d, h, w});
        for (float& v : feat.data) v = uniform_float(rng, -2.0f, 2.0f);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) {
            labels.push_back(uniform_float(rng, 0.0f, 1.0f) > 0.5f ? 1 : 0);
        }
        if (cluster_loss(feat, ps, labels) !=
            oracle::double_min_enumeration(feat, ps, labels, false)) {
            ++mismatches;
        }
        if (separation_loss(feat, ps, labels) !=
            oracle::double_min_enumeration(feat, ps, labels, true)) {
            ++mismatches;
        }
    }

    double worst_auc = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> size(2, 60);
        const int n = size(rng);
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) {
            scores.push_back(std::round(uniform_float(rng, 0.0f, 1.0f) * 16.0) / 16.0);
            labels.push_back(uniform_float(rng, 0.0f, 1.0f) > 0.5f ? 1 : 0);
        }
        labels[0] = 0;
        labels[static_cast<std::size_t>(n - 1)] = 1;
        worst_auc = std::max(worst_auc, std::abs(roc_auc(scores, labels) -
                                                 oracle::pairwise_auc(scores, labels)));
    }

    int otsu_mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Tensor img({16, 16});
        const float lo = uniform_float(rng, 0.05f, 0.35f);
        const float hi = uniform_float(rng, 0.55f, 0.95f);
        for (float& v : img.data) {
            const bool bright = uniform_float(rng, 0.0f, 1.0f) > 0.5f;
            v = (bright ? hi : lo) + uniform_float(rng, -0.04f, 0.04f);
        }
        if (otsu_box(img).threshold_bin != oracle::exhaustive_otsu(img)) ++otsu_mismatches;
    }

    report("2", "oracle equivalence",
           mismatches == 0 && worst_auc <= 1e-9 && otsu_mismatches == 0,
           "cluster/sep mismatches " + std::to_string(mismatches) + ", worst AUC delta " +
               fmt(worst_auc, 12) + ", otsu mismatches " + std::to_string(otsu_mismatches));
}

// --- criterion 3: prototype postconditions ----------------------------------------

void criterion_prototypes() {
    ModelConfig mc;
    mc.backbone.height = 16;
    mc.backbone.width = 16;
    mc.backbone.stage_channels = {4, 4};
    mc.prototype_count = 6;
    ModelState model = ModelState::init(mc, 301);

    GenConfig g;
    g.count_pos = 8;
    g.count_neg = 8;
    g.height = 16;
    g.width = 16;
    g.radius_min = 2.0f;
    g.radius_max = 4.0f;
    g.seed = 302;
    Dataset ds = generate(g);

    const auto feats = extract_features(model, ds);
    push_prototypes(model, ds, true, feats);

    bool bitwise = true;
    std::set<int> images;
    bool distinct = true;
    for (int m = 0; m < model.prototypes.count; ++m) {
        const Provenance& pv = model.prototypes.provenance[static_cast<std::size_t>(m)];
        distinct = distinct && images.insert(pv.image_index).second;
        const Tensor& f = feats[static_cast<std::size_t>(pv.image_index)];
        const int hw = f.dim(1) * f.dim(2);
        const int pos = pv.row * f.dim(2) + pv.col;
        for (int c = 0; c < model.prototypes.dim(); ++c) {
            bitwise = bitwise &&
                      model.prototypes.vec(m)[c] == f.data[static_cast<std::size_t>(c) * hw + pos];
        }
        bitwise = bitwise &&
                  ds.samples[static_cast<std::size_t>(pv.image_index)].label ==
                      model.prototypes.class_of(m);
    }

    // greedy vs step-trace reference on 100 random tables
    Rng rng = make_rng(303);
    int trace_mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<int> protos(1, 4), extra(0, 6);
        const int ppc = protos(rng);
        const int ipc = ppc + extra(rng);
        PrototypeSet ps;
        ps.count = 2 * ppc;
        ps.vectors = Param("p", Tensor({2 * ppc, 2}));
        std::vector<int> labels;
        for (int i = 0; i < 2 * ipc; ++i) labels.push_back(i < ipc ? 0 : 1);
        DistanceTable table;
        table.per_prototype.resize(static_cast<std::size_t>(ps.count));
        std::vector<std::vector<std::pair<int, double>>> cands(static_cast<std::size_t>(ps.count));
        for (int m = 0; m < ps.count; ++m) {
            const int cls = ps.class_of(m);
            auto& rows = table.per_prototype[static_cast<std::size_t>(m)];
            for (int i = 0; i < ipc; ++i) {
                DistanceRecord rec{cls * ipc + i, 0, 0, uniform_float(rng, 0.0f, 1.0f)};
                rows.push_back(rec);
                cands[static_cast<std::size_t>(m)].emplace_back(rec.image_index, rec.distance);
            }
            std::sort(rows.begin(), rows.end(),
                      [](const DistanceRecord& a, const DistanceRecord& b) {
                          if (a.distance != b.distance) return a.distance < b.distance;
                          return a.image_index < b.image_index;
                      });
        }
        const auto got = greedy_assign(table, labels, ps);
        const auto expect = oracle::greedy_trace(cands);
        for (std::size_t m = 0; m < got.size(); ++m) {
            if (got[m].record.image_index != expect[m].image) ++trace_mismatches;
        }
    }

    // shortage errors out rather than silently reusing an image
    bool shortage_errors = false;
    try {
        ModelConfig big = mc;
        big.prototype_count = 10;  // 5 per class vs 2 images per class
        ModelState starved = ModelState::init(big, 304);
        GenConfig tiny = g;
        tiny.count_pos = 2;
        tiny.count_neg = 2;
        push_prototypes(starved, generate(tiny));
    } catch (const InsufficientImagesError&) {
        shortage_errors = true;
    }

    report("3", "prototype push postconditions",
           bitwise && distinct && trace_mismatches == 0 && shortage_errors,
           std::string("bitwise ") + (bitwise ? "yes" : "NO") + ", distinct " +
               (distinct ? "yes" : "NO") + ", trace mismatches " +
               std::to_string(trace_mismatches) + ", shortage errors " +
               (shortage_errors ? "yes" : "NO"));
}

// --- criteria 4-7: synthetic end-to-end runs --------------------------------------

struct RunSummary {
    double auc_g = 0.0, auc_l = 0.0, auc_e = 0.0;
    double pr05 = 0.0;
    bool sweep_monotone = true;
    DiversityReport diversity;
    double argmax_rate = 0.0;
    double seconds = 0.0;
    std::vector<EpochLog> history;
};

struct Scale {
    int train_per_class = 200;
    int test_per_class = 100;
    std::array<int, 3> epochs = {10, 10, 5};
};

RunSummary run_end_to_end(std::uint64_t seed, bool with_kd, bool greedy, const Scale& scale) {
    GenConfig g;
    g.count_pos = scale.train_per_class;
    g.count_neg = scale.train_per_class;
    g.seed = seed;
    Dataset train_set = generate(g);
    GenConfig gt = g;
    gt.count_pos = scale.test_per_class;
    gt.count_neg = scale.test_per_class;
    gt.seed = mix_seed(seed, 0x7e57ULL);
    Dataset test_set = generate(gt);

    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = scale.epochs;
    cfg.greedy_push = greedy;
    if (!with_kd) cfg.hp.beta = 0.0f;

    preprocess_otsu(train_set, cfg.model.backbone.height, cfg.model.backbone.width);
    preprocess_otsu(test_set, cfg.model.backbone.height, cfg.model.backbone.width);

    const double t0 = now_seconds();
    TrainResult result = train(train_set, cfg);
    RunSummary s;
    s.seconds = now_seconds() - t0;
    s.history = result.history;

    const EvalReport rep = evaluate(result.model, test_set);
    s.auc_g = rep.auc_global;
    s.auc_l = rep.auc_proto;
    s.auc_e = rep.auc_ensemble;
    s.pr05 = rep.sweep.front().pr_auc;
    for (std::size_t i = 1; i < rep.sweep.size(); ++i) {
        s.sweep_monotone =
            s.sweep_monotone && rep.sweep[i].pr_auc <= rep.sweep[i - 1].pr_auc + 1e-12;
    }
    s.diversity = rep.diversity;
    s.argmax_rate = rep.argmax_in_mask_rate;
    return s;
}

void criteria_end_to_end(const std::vector<std::uint64_t>& seeds, const Scale& scale) {
    std::vector<RunSummary> base, no_kd, no_greedy;
    for (std::uint64_t seed : seeds) {
        base.push_back(run_end_to_end(seed, true, true, scale));
        const RunSummary& s = base.back();
        std::printf("       seed %llu default: auc g/l/e %.4f/%.4f/%.4f pr05 %.4f argmax %.2f "
                    "(%.0f s)\n",
                    static_cast<unsigned long long>(seed), s.auc_g, s.auc_l, s.auc_e, s.pr05,
                    s.argmax_rate, s.seconds);
        std::fflush(stdout);
        no_kd.push_back(run_end_to_end(seed, false, true, scale));
        std::printf("       seed %llu no-kd: protopnet auc %.4f (%.0f s)\n",
                    static_cast<unsigned long long>(seed), no_kd.back().auc_l,
                    no_kd.back().seconds);
        std::fflush(stdout);
        no_greedy.push_back(run_end_to_end(seed, true, false, scale));
        std::printf("       seed %llu no-greedy: cos %.4f/%.4f l2 %.4f/%.4f (%.0f s)\n",
                    static_cast<unsigned long long>(seed), no_greedy.back().diversity.cosine[0],
                    no_greedy.back().diversity.cosine[1], no_greedy.back().diversity.l2[0],
                    no_greedy.back().diversity.l2[1], no_greedy.back().seconds);
        std::fflush(stdout);
    }
    const double n = static_cast<double>(seeds.size());

    // 4: ensemble quality and runtime per seed
    {
        bool pass = true;
        double min_e = 1.0, max_t = 0.0;
        for (const auto& s : base) {
            pass = pass && s.auc_e >= 0.95;
            pass = pass && s.auc_e >= std::max(s.auc_g, s.auc_l) - 0.01;
            pass = pass && s.seconds < 600.0;
            min_e = std::min(min_e, s.auc_e);
            max_t = std::max(max_t, s.seconds);
        }
        report("4", "synthetic end-to-end ensemble", pass,
               "min ensemble AUC " + fmt(min_e) + ", max run time " + fmt(max_t, 0) + " s");
    }

    // 4-aux: per-stage final-epoch mean loss does not exceed epoch 1 (mean over seeds)
    {
        bool pass = true;
        std::string detail;
        for (int stage = 1; stage <= 3; ++stage) {
            double first = 0.0, last = 0.0;
            for (const auto& s : base) {
                std::vector<double> totals;
                for (const auto& h : s.history) {
                    if (h.stage == stage) totals.push_back(h.total);
                }
                first += totals.front();
                last += totals.back();
            }
            pass = pass && last / n <= first / n;
            detail += "s" + std::to_string(stage) + " " + fmt(first / n, 3) + "->" +
                      fmt(last / n, 3) + (stage < 3 ? ", " : "");
        }
        report("4-aux", "stage losses decrease", pass, detail);
    }

    // 5: distillation direction on the protopnet branch
    {
        double with = 0.0, without = 0.0;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            with += base[i].auc_l;
            without += no_kd[i].auc_l;
        }
        with /= n;
        without /= n;
        const double diff = with - without;
        report("5", "distillation ablation direction", with >= without - 0.005,
               "protopnet AUC with KD " + fmt(with) + ", without " + fmt(without) +
                   ", signed diff " + fmt(diff, 4));
    }

    // 6: greedy selection increases prototype diversity
    {
        double g_cos[2] = {0, 0}, g_l2[2] = {0, 0}, p_cos[2] = {0, 0}, p_l2[2] = {0, 0};
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            for (int c = 0; c < 2; ++c) {
                g_cos[c] += base[i].diversity.cosine[c] / n;
                g_l2[c] += base[i].diversity.l2[c] / n;
                p_cos[c] += no_greedy[i].diversity.cosine[c] / n;
                p_l2[c] += no_greedy[i].diversity.l2[c] / n;
            }
        }
        const bool pass = g_cos[0] >= p_cos[0] && g_cos[1] >= p_cos[1] && g_l2[0] >= p_l2[0] &&
                          g_l2[1] >= p_l2[1];
        report("6", "greedy selection diversity direction", pass,
               "cosine " + fmt(p_cos[0]) + "/" + fmt(p_cos[1]) + " -> " + fmt(g_cos[0]) + "/" +
                   fmt(g_cos[1]) + ", L2 " + fmt(p_l2[0]) + "/" + fmt(p_l2[1]) + " -> " +
                   fmt(g_l2[0]) + "/" + fmt(g_l2[1]));
    }

    // 7: localisation quality and sweep shape
    {
        double mean_pr = 0.0;
        bool monotone = true;
        for (const auto& s : base) {
            mean_pr += s.pr05 / n;
            monotone = monotone && s.sweep_monotone;
        }
        report("7", "localisation PR-AUC and sweep shape", mean_pr >= 0.5 && monotone,
               "mean PR-AUC@0.05 " + fmt(mean_pr) + ", sweeps monotone " +
                   (monotone ? "yes" : "NO"));
    }

    // 7-aux: top-1 cancer prototype peak lands inside the lesion
    {
        double rate = 0.0;
        for (const auto& s : base) rate += s.argmax_rate / n;
        report("7-aux", "prototype peak inside lesion", rate >= 0.70,
               "mean argmax-in-mask rate " + fmt(rate, 3));
    }
}

// --- criterion 8: determinism and formats ------------------------------------------

int run_cli(const std::string& cli, const std::string& args) {
    const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
}

void criterion_determinism(const std::string& cli) {
    const fs::path root = fs::temp_directory_path() / "bppn_acceptance_det";
    fs::remove_all(root);
    const std::string gen_args =
        " --train-pos 40 --train-neg 40 --test-pos 20 --test-neg 20 --size 32x32"
        " --radius-min 2 --radius-max 5 --seed 99";
    const std::string train_args =
        " --epochs 2,2,1 --prototypes 6 --feature-dim 16 --seed 99 --workers 1";

    bool cli_ok = true;
    for (const char* tag : {"r1", "r2"}) {
        const fs::path r = root / tag;
        cli_ok = cli_ok && run_cli(cli, "gen-data --out " + (r / "data").string() + gen_args) == 0;
        cli_ok = cli_ok &&
                 run_cli(cli, "train --data " + (r / "data").string() + " --out " +
                                  (r / "train").string() + train_args) == 0;
        cli_ok = cli_ok &&
                 run_cli(cli, "eval --checkpoint " + (r / "train" / "final.ckpt").string() +
                                  " --data " + (r / "data").string() + " --out " +
                                  (r / "eval").string() + " --seed 99 --workers 1") == 0;
    }
    if (!cli_ok) {
        report("8", "determinism and formats", false, "pipeline run failed");
        return;
    }

    const bool metrics_same =
        read_file_bytes(root / "r1" / "eval" / "metrics.json") ==
        read_file_bytes(root / "r2" / "eval" / "metrics.json");
    const bool ckpt_same = read_file_bytes(root / "r1" / "train" / "final.ckpt") ==
                           read_file_bytes(root / "r2" / "train" / "final.ckpt");

    // dataset round-trip: save(load(dir)) reproduces every byte
    bool dataset_roundtrip = true;
    {
        Dataset ds = load_dataset(root / "r1" / "data" / "train");
        const fs::path copy = root / "roundtrip";
        save_dataset(ds, copy);
        for (const auto& e : fs::recursive_directory_iterator(root / "r1" / "data" / "train")) {
            if (!e.is_regular_file()) continue;
            const fs::path rel = fs::relative(e.path(), root / "r1" / "data" / "train");
            dataset_roundtrip = dataset_roundtrip &&
                                read_file_bytes(e.path()) == read_file_bytes(copy / rel);
        }
    }

    // checkpoint round-trip through the decoder
    bool ckpt_roundtrip = false;
    {
        const std::string bytes = read_file_bytes(root / "r1" / "train" / "final.ckpt");
        ckpt_roundtrip = encode_checkpoint(decode_checkpoint(bytes, "acceptance")) == bytes;
    }

    report("8", "determinism and formats",
           metrics_same && ckpt_same && dataset_roundtrip && ckpt_roundtrip,
           std::string("metrics ") + (metrics_same ? "same" : "DIFFER") + ", checkpoint " +
               (ckpt_same ? "same" : "DIFFER") + ", dataset roundtrip " +
               (dataset_roundtrip ? "ok" : "BROKEN") + ", checkpoint roundtrip " +
               (ckpt_roundtrip ? "ok" : "BROKEN"));
}

}  // namespace

int main(int argc, char** argv) {
    bool fast = false;
    std::string cli;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--fast") fast = true;
        if (arg.rfind("--cli=", 0) == 0) cli = arg.substr(6);
    }
    if (cli.empty()) {
        const char* env = std::getenv("BPPN_CLI");
        if (env) cli = env;
    }

    std::printf("acceptance suite%s\n", fast ? " (fast mode: reduced scale, 1 seed)" : "");
    criterion_gradients();
    criterion_oracles();
    criterion_prototypes();

    Scale scale;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    if (fast) {
        scale.train_per_class = 100;
        scale.test_per_class = 50;
        scale.epochs = {4, 4, 2};
        seeds = {1};
    }
    criteria_end_to_end(seeds, scale);

    if (cli.empty()) {
        report("8", "determinism and formats", false,
               "bppn binary not found; set BPPN_CLI or pass --cli=PATH");
    } else {
        criterion_determinism(cli);
    }

    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
