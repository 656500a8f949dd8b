// bppn: synthetic-data generation, three-stage training, evaluation and
// prototype explanations for the ensembled global + prototype classifier.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "bppn/data.hpp"
#include "bppn/error.hpp"
#include "bppn/eval.hpp"
#include "bppn/gradcheck_suite.hpp"
#include "bppn/imageops.hpp"
#include "bppn/io.hpp"
#include "bppn/manifest.hpp"
#include "bppn/model.hpp"
#include "bppn/plot.hpp"
#include "bppn/prototypes.hpp"
#include "bppn/training.hpp"

namespace fs = std::filesystem;
using namespace bppn;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

struct CommonOpts {
    std::uint64_t seed = 7;
    std::string out;
    int workers = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool out_required = true) {
    cmd->add_option("--seed", o.seed, "Master RNG seed")->capture_default_str();
    auto* out = cmd->add_option("--out", o.out, "Output directory");
    if (out_required) out->required();
    cmd->add_option("--workers", o.workers, "Worker threads for data/eval (1 = fully serial)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->set_config("--config", "", "key=value config file; flags win");
}

std::pair<int, int> parse_size(const std::string& s) {
    int h = 0, w = 0;
    if (std::sscanf(s.c_str(), "%dx%d", &h, &w) != 2 || h < 8 || w < 8) {
        throw ConfigError("--size must look like 64x64");
    }
    return {h, w};
}

void kv(RunManifest& m, const std::string& k, const std::string& v) {
    m.config.emplace_back(k, v);
}
void kv(RunManifest& m, const std::string& k, const char* v) {
    m.config.emplace_back(k, std::string(v));
}
void kv(RunManifest& m, const std::string& k, double v) { kv(m, k, format_float(v)); }
void kv(RunManifest& m, const std::string& k, std::uint64_t v) { kv(m, k, std::to_string(v)); }
void kv(RunManifest& m, const std::string& k, int v) { kv(m, k, std::to_string(v)); }
void kv(RunManifest& m, const std::string& k, bool v) { kv(m, k, v ? "true" : "false"); }

// receptive field and stride of one feature-map cell in input pixels
std::pair<int, int> backbone_receptive_field(const BackboneConfig& bb) {
    int rf = 1, jump = 1;
    for (std::size_t i = 0; i < bb.stage_channels.size(); ++i) {
        rf += 2 * jump;  // 3x3 stride 1
        rf += 2 * jump;  // 3x3 stride 2
        jump *= 2;
    }
    return {rf, jump};
}

// --- gen-data --------------------------------------------------------------------

struct GenOpts {
    CommonOpts common;
    int train_pos = 200, train_neg = 200, test_pos = 100, test_neg = 100;
    std::string size = "64x64";
    double radius_min = 5.0, radius_max = 10.0;
    double boost_min = 0.30, boost_max = 0.50;
    double texture_scale = 0.30;
};

int cmd_gen_data(const GenOpts& o) {
    Timer timer;
    const auto [h, w] = parse_size(o.size);
    auto make_cfg = [&](int pos, int neg, std::uint64_t seed) {
        GenConfig g;
        g.count_pos = pos;
        g.count_neg = neg;
        g.height = h;
        g.width = w;
        g.radius_min = static_cast<float>(o.radius_min);
        g.radius_max = static_cast<float>(o.radius_max);
        g.boost_min = static_cast<float>(o.boost_min);
        g.boost_max = static_cast<float>(o.boost_max);
        g.texture_scale = static_cast<float>(o.texture_scale);
        g.seed = seed;
        return g;
    };
    const fs::path out(o.common.out);
    save_dataset(generate(make_cfg(o.train_pos, o.train_neg, o.common.seed)), out / "train");
    save_dataset(generate(make_cfg(o.test_pos, o.test_neg, mix_seed(o.common.seed, 0x7e57ULL))),
                 out / "test");

    RunManifest m;
    m.command = "gen-data";
    m.seed = o.common.seed;
    kv(m, "seed", o.common.seed);
    kv(m, "train_pos", o.train_pos);
    kv(m, "train_neg", o.train_neg);
    kv(m, "test_pos", o.test_pos);
    kv(m, "test_neg", o.test_neg);
    kv(m, "size", o.size);
    kv(m, "radius_min", o.radius_min);
    kv(m, "radius_max", o.radius_max);
    kv(m, "boost_min", o.boost_min);
    kv(m, "boost_max", o.boost_max);
    kv(m, "texture_scale", o.texture_scale);
    kv(m, "workers", o.common.workers);
    m.artifacts = {(out / "train").string(), (out / "test").string()};
    m.duration_seconds = timer.seconds();
    write_manifest(m, out / "manifest.json");
    std::cout << "wrote " << (out / "train").string() << " and " << (out / "test").string()
              << "\n";
    return 0;
}

// --- train -----------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string data;
    std::vector<int> epochs = {10, 10, 5};
    double lr = 0.001, weight_decay = 1e-5;
    int batch_size = 8;
    double alpha = 1.0, beta = 0.5, omega = 0.2, lambda1 = 0.1, lambda2 = 0.1, gamma = 10.0;
    double temp = 0.0;  // 0 = feature dim
    int prototypes = 10;
    int feature_dim = 32;
    bool no_kd = false;
    bool no_greedy = false;
    double aug_translate = 3.0, aug_rotate = 10.0, aug_scale = 0.1;
    int push_frequency = 1;
};

TrainConfig resolve_train_config(const TrainOpts& o, int input_h, int input_w) {
    TrainConfig cfg;
    cfg.lr = static_cast<float>(o.lr);
    cfg.weight_decay = static_cast<float>(o.weight_decay);
    cfg.batch_size = o.batch_size;
    if (o.epochs.size() != 3) throw ConfigError("--epochs needs exactly three values S1,S2,S3");
    cfg.epochs = {o.epochs[0], o.epochs[1], o.epochs[2]};
    cfg.hp.alpha = static_cast<float>(o.alpha);
    cfg.hp.beta = o.no_kd ? 0.0f : static_cast<float>(o.beta);
    cfg.hp.omega = static_cast<float>(o.omega);
    cfg.hp.lambda1 = static_cast<float>(o.lambda1);
    cfg.hp.lambda2 = static_cast<float>(o.lambda2);
    cfg.hp.gamma = static_cast<float>(o.gamma);
    cfg.aug_translate_px = static_cast<float>(o.aug_translate);
    cfg.aug_rotate_deg = static_cast<float>(o.aug_rotate);
    cfg.aug_scale_delta = static_cast<float>(o.aug_scale);
    cfg.seed = o.common.seed;
    cfg.push_frequency = o.push_frequency;
    cfg.greedy_push = !o.no_greedy;
    cfg.model.backbone.height = input_h;
    cfg.model.backbone.width = input_w;
    cfg.model.backbone.stage_channels = {16, 32, o.feature_dim};
    cfg.model.prototype_count = o.prototypes;
    cfg.model.temperature = static_cast<float>(o.temp);
    return cfg;
}

int cmd_train(const TrainOpts& o) {
    Timer timer;
    Dataset train_set = load_dataset(fs::path(o.data) / "train");
    const TrainConfig cfg = resolve_train_config(o, train_set.gen.height, train_set.gen.width);
    cfg.validate();
    preprocess_otsu(train_set, cfg.model.backbone.height, cfg.model.backbone.width);

    const fs::path out(o.common.out);
    TrainResult result = train(train_set, cfg, out);

    RunManifest m;
    m.command = "train";
    m.seed = o.common.seed;
    kv(m, "seed", o.common.seed);
    kv(m, "data", o.data);
    kv(m, "epochs", std::to_string(cfg.epochs[0]) + "," + std::to_string(cfg.epochs[1]) + "," +
                        std::to_string(cfg.epochs[2]));
    kv(m, "lr", o.lr);
    kv(m, "weight_decay", o.weight_decay);
    kv(m, "batch_size", o.batch_size);
    kv(m, "alpha", o.alpha);
    kv(m, "beta", static_cast<double>(cfg.hp.beta));
    kv(m, "omega", o.omega);
    kv(m, "lambda1", o.lambda1);
    kv(m, "lambda2", o.lambda2);
    kv(m, "gamma", o.gamma);
    kv(m, "temp", static_cast<double>(cfg.model.effective_temperature()));
    kv(m, "prototypes", o.prototypes);
    kv(m, "feature_dim", o.feature_dim);
    kv(m, "no_kd", o.no_kd);
    kv(m, "no_greedy", o.no_greedy);
    kv(m, "aug_translate", o.aug_translate);
    kv(m, "aug_rotate", o.aug_rotate);
    kv(m, "aug_scale", o.aug_scale);
    kv(m, "push_frequency", o.push_frequency);
    kv(m, "workers", o.common.workers);
    for (const char* f : {"stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "final.ckpt",
                          "history.csv", "provenance.csv"}) {
        m.artifacts.push_back((out / f).string());
    }
    m.duration_seconds = timer.seconds();
    write_manifest(m, out / "manifest.json");

    const EpochLog& last = result.history.back();
    std::cout << "trained 3 stages; final epoch loss " << format_float(last.total)
              << ", train-batch ensemble AUC " << format_float(last.auc_ensemble) << "\n";
    return 0;
}

// --- eval ------------------------------------------------------------------------

struct EvalOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string data;
};

int cmd_eval(const EvalOpts& o) {
    Timer timer;
    const ModelState model = load_checkpoint(o.checkpoint);
    Dataset test_set = load_dataset(fs::path(o.data) / "test");
    preprocess_otsu(test_set, model.cfg.backbone.height, model.cfg.backbone.width);
    const EvalReport report = evaluate(model, test_set, o.common.workers);

    const fs::path out(o.common.out);
    write_eval_artifacts(report, out);

    RunManifest m;
    m.command = "eval";
    m.seed = o.common.seed;
    kv(m, "seed", o.common.seed);
    kv(m, "checkpoint", o.checkpoint);
    kv(m, "data", o.data);
    kv(m, "workers", o.common.workers);
    for (const char* f : {"metrics.json", "localisation.csv", "pr_auc_sweep.csv",
                          "pr_auc_sweep.ppm"}) {
        m.artifacts.push_back((out / f).string());
    }
    m.duration_seconds = timer.seconds();
    write_manifest(m, out / "manifest.json");

    std::cout << "AUC global " << format_float(report.auc_global) << ", protopnet "
              << format_float(report.auc_proto) << ", ensemble "
              << format_float(report.auc_ensemble) << "; PR-AUC@0.05 "
              << format_float(report.sweep.front().pr_auc) << "\n";
    return 0;
}

// --- explain ---------------------------------------------------------------------

struct ExplainOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string data;
    int image = 0;
    int topk = 2;
};

int cmd_explain(const ExplainOpts& o) {
    Timer timer;
    const ModelState model = load_checkpoint(o.checkpoint);
    const int H = model.cfg.backbone.height, W = model.cfg.backbone.width;

    Dataset train_set = load_dataset(fs::path(o.data) / "train");
    Dataset test_set = load_dataset(fs::path(o.data) / "test");
    preprocess_otsu(train_set, H, W);
    preprocess_otsu(test_set, H, W);
    if (o.image < 0 || o.image >= static_cast<int>(test_set.samples.size())) {
        throw ConfigError("--image out of range; test split has " +
                          std::to_string(test_set.samples.size()) + " images");
    }
    const Sample& sample = test_set.samples[static_cast<std::size_t>(o.image)];
    const fs::path out(o.common.out);
    fs::create_directories(out);

    const auto [rf, jump] = backbone_receptive_field(model.cfg.backbone);
    std::string report = "image " + sample.name + " (test index " + std::to_string(o.image) +
                         "), label " + std::to_string(sample.label) + "\n";
    {
        Tensor x({1, 1, H, W});
        x.data = sample.image.data;
        Prediction pred = predict(model, x);
        report += "global p(cancer) " + format_float(pred.global_probs.at2(0, 1)) +
                  ", protopnet " + format_float(pred.proto_probs.at2(0, 1)) + ", ensemble " +
                  format_float(pred.ensemble.at2(0, 1)) + "\n";
    }

    std::vector<std::string> artifacts;
    atomic_write_file(out / "test_image.ppm", render_gray_ppm(sample.image));
    artifacts.push_back((out / "test_image.ppm").string());

    for (int cls = 0; cls < 2; ++cls) {
        const auto ranked = explain_class(sample.image, model, cls, o.topk);
        report += std::string(cls == 1 ? "cancer" : "non-cancer") + " prototypes:\n";
        for (const auto& e : ranked) {
            const Provenance& pv = e.provenance;
            report += "  prototype " + std::to_string(e.prototype_id) + " score " +
                      format_float(e.score) + " source image " + std::to_string(pv.image_index) +
                      " cell (" + std::to_string(pv.row) + "," + std::to_string(pv.col) +
                      ") distance " + format_float(pv.distance) + "\n";

            const std::string stem = "proto_" + std::to_string(e.prototype_id);
            atomic_write_file(out / (stem + "_overlay.ppm"),
                              render_overlay_ppm(sample.image, e.map));
            artifacts.push_back((out / (stem + "_overlay.ppm")).string());

            // source patch: receptive field of the provenance cell
            const Tensor& src = train_set.samples[static_cast<std::size_t>(pv.image_index)].image;
            const int cy = pv.row * jump + jump / 2, cx = pv.col * jump + jump / 2;
            const int y0 = std::max(0, cy - rf / 2), x0 = std::max(0, cx - rf / 2);
            const int y1 = std::min(H, cy + rf / 2 + 1), x1 = std::min(W, cx + rf / 2 + 1);
            Tensor patch({y1 - y0, x1 - x0});
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) patch.at2(y - y0, x - x0) = src.at2(y, x);
            }
            atomic_write_file(out / (stem + "_source.ppm"), render_gray_ppm(patch));
            artifacts.push_back((out / (stem + "_source.ppm")).string());
        }
    }
    atomic_write_file(out / "report.txt", report);
    artifacts.push_back((out / "report.txt").string());

    RunManifest m;
    m.command = "explain";
    m.seed = o.common.seed;
    kv(m, "checkpoint", o.checkpoint);
    kv(m, "data", o.data);
    kv(m, "image", o.image);
    kv(m, "topk", o.topk);
    m.artifacts = artifacts;
    m.duration_seconds = timer.seconds();
    write_manifest(m, out / "manifest.json");
    std::cout << report;
    return 0;
}

// --- gradcheck ---------------------------------------------------------------------

struct GradcheckOpts {
    CommonOpts common;
    int trials = 20;
};

int cmd_gradcheck(const GradcheckOpts& o) {
    Timer timer;
    const auto checks = run_registered_gradchecks(o.common.seed, o.trials);
    bool all_pass = true;
    std::string table = "check,max_rel_err,tolerance,pass\n";
    for (const auto& c : checks) {
        std::printf("%-28s max rel err %.3e  (tol %.0e)  %s\n", c.name.c_str(), c.max_rel_err,
                    c.tolerance, c.pass ? "ok" : "FAIL");
        table += c.name + "," + format_float(c.max_rel_err) + "," + format_float(c.tolerance) +
                 "," + (c.pass ? "1" : "0") + "\n";
        all_pass = all_pass && c.pass;
    }
    if (!o.common.out.empty()) {
        const fs::path out(o.common.out);
        atomic_write_file(out / "gradcheck.csv", table);
        RunManifest m;
        m.command = "gradcheck";
        m.seed = o.common.seed;
        kv(m, "seed", o.common.seed);
        kv(m, "trials", o.trials);
        m.artifacts = {(out / "gradcheck.csv").string()};
        m.duration_seconds = timer.seconds();
        write_manifest(m, out / "manifest.json");
    }
    if (!all_pass) {
        std::cerr << "gradient check failed\n";
        return 1;
    }
    return 0;
}

// --- report -----------------------------------------------------------------------

struct ReportOpts {
    CommonOpts common;
    std::string metrics;
};

int cmd_report(const ReportOpts& o) {
    Timer timer;
    const auto j = nlohmann::json::parse(read_file_bytes(o.metrics));
    std::string r;
    r += "classification AUC\n";
    r += "  GlobalNet  " + format_float(j["auc"]["global"].get<double>()) + "\n";
    r += "  ProtoPNet  " + format_float(j["auc"]["protopnet"].get<double>()) + "\n";
    r += "  Ensemble   " + format_float(j["auc"]["ensemble"].get<double>()) + "\n";
    r += "\nprototype diversity (mean pairwise, per class)\n";
    r += "                 cosine            L2\n";
    char line[128];
    std::snprintf(line, sizeof(line), "  non-cancer     %-16s  %s\n",
                  format_float(j["diversity"]["cosine"]["non_cancer"].get<double>()).c_str(),
                  format_float(j["diversity"]["l2"]["non_cancer"].get<double>()).c_str());
    r += line;
    std::snprintf(line, sizeof(line), "  cancer         %-16s  %s\n",
                  format_float(j["diversity"]["cosine"]["cancer"].get<double>()).c_str(),
                  format_float(j["diversity"]["l2"]["cancer"].get<double>()).c_str());
    r += line;
    r += "\nlesion localisation PR-AUC vs IoU threshold\n";
    for (const auto& p : j["pr_auc_vs_iou"]) {
        std::snprintf(line, sizeof(line), "  IoU >= %-5s  PR-AUC %s\n",
                      format_float(p["iou"].get<double>()).c_str(),
                      format_float(p["pr_auc"].get<double>()).c_str());
        r += line;
    }
    std::cout << r;
    if (!o.common.out.empty()) {
        const fs::path out(o.common.out);
        atomic_write_file(out / "report.txt", r);
        RunManifest m;
        m.command = "report";
        m.seed = o.common.seed;
        kv(m, "metrics", o.metrics);
        m.artifacts = {(out / "report.txt").string()};
        m.duration_seconds = timer.seconds();
        write_manifest(m, out / "manifest.json");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"global + prototype ensemble classifier on synthetic lesion data"};
    app.require_subcommand(1);

    GenOpts gen;
    CLI::App* cgen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    add_common(cgen, gen.common);
    cgen->add_option("--train-pos", gen.train_pos)->capture_default_str();
    cgen->add_option("--train-neg", gen.train_neg)->capture_default_str();
    cgen->add_option("--test-pos", gen.test_pos)->capture_default_str();
    cgen->add_option("--test-neg", gen.test_neg)->capture_default_str();
    cgen->add_option("--size", gen.size, "Image size HxW")->capture_default_str();
    cgen->add_option("--radius-min", gen.radius_min)->capture_default_str();
    cgen->add_option("--radius-max", gen.radius_max)->capture_default_str();
    cgen->add_option("--boost-min", gen.boost_min)->capture_default_str();
    cgen->add_option("--boost-max", gen.boost_max)->capture_default_str();
    cgen->add_option("--texture-scale", gen.texture_scale)->capture_default_str();

    TrainOpts tr;
    CLI::App* ctrain = app.add_subcommand("train", "Run the three-stage training schedule");
    add_common(ctrain, tr.common);
    ctrain->add_option("--data", tr.data, "Dataset root (with train/)")->required();
    ctrain->add_option("--epochs", tr.epochs, "Epochs per stage S1,S2,S3")
        ->delimiter(',')
        ->expected(3);
    ctrain->add_option("--lr", tr.lr)->capture_default_str();
    ctrain->add_option("--weight-decay", tr.weight_decay)->capture_default_str();
    ctrain->add_option("--batch-size", tr.batch_size)->capture_default_str();
    ctrain->add_option("--alpha", tr.alpha)->capture_default_str();
    ctrain->add_option("--beta", tr.beta)->capture_default_str();
    ctrain->add_option("--omega", tr.omega)->capture_default_str();
    ctrain->add_option("--lambda1", tr.lambda1)->capture_default_str();
    ctrain->add_option("--lambda2", tr.lambda2)->capture_default_str();
    ctrain->add_option("--gamma", tr.gamma)->capture_default_str();
    ctrain->add_option("--temp", tr.temp, "Similarity temperature (0 = feature dim)")
        ->capture_default_str();
    ctrain->add_option("--prototypes", tr.prototypes, "Prototype count M")
        ->capture_default_str();
    ctrain->add_option("--feature-dim", tr.feature_dim)->capture_default_str();
    ctrain->add_flag("--no-kd", tr.no_kd, "Disable distillation (beta = 0)");
    ctrain->add_flag("--no-greedy", tr.no_greedy,
                     "Unconstrained nearest-image push (ablation)");
    ctrain->add_option("--aug-translate", tr.aug_translate)->capture_default_str();
    ctrain->add_option("--aug-rotate", tr.aug_rotate)->capture_default_str();
    ctrain->add_option("--aug-scale", tr.aug_scale)->capture_default_str();
    ctrain->add_option("--push-frequency", tr.push_frequency)->capture_default_str();

    EvalOpts ev;
    CLI::App* ceval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    add_common(ceval, ev.common);
    ceval->add_option("--checkpoint", ev.checkpoint)->required();
    ceval->add_option("--data", ev.data, "Dataset root (with test/)")->required();

    ExplainOpts ex;
    CLI::App* cexplain = app.add_subcommand("explain", "Prototype explanation for one image");
    add_common(cexplain, ex.common);
    cexplain->add_option("--checkpoint", ex.checkpoint)->required();
    cexplain->add_option("--data", ex.data, "Dataset root (train/ + test/)")->required();
    cexplain->add_option("--image", ex.image, "Test-split image index")->required();
    cexplain->add_option("--topk", ex.topk)->capture_default_str();

    GradcheckOpts gc;
    CLI::App* cgrad = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    add_common(cgrad, gc.common, /*out_required=*/false);
    cgrad->add_option("--trials", gc.trials)->capture_default_str();

    ReportOpts rp;
    CLI::App* creport = app.add_subcommand("report", "Readable summary of a metrics.json");
    add_common(creport, rp.common, /*out_required=*/false);
    creport->add_option("--metrics", rp.metrics, "Path to metrics.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message
        return 2;
    }

    try {
        if (cgen->parsed()) return cmd_gen_data(gen);
        if (ctrain->parsed()) return cmd_train(tr);
        if (ceval->parsed()) return cmd_eval(ev);
        if (cexplain->parsed()) return cmd_explain(ex);
        if (cgrad->parsed()) return cmd_gradcheck(gc);
        if (creport->parsed()) return cmd_report(rp);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
