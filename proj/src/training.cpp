#include "bppn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bppn/error.hpp"
#include "bppn/eval.hpp"
#include "bppn/imageops.hpp"
#include "bppn/io.hpp"
#include "bppn/prototypes.hpp"

namespace bppn {

void TrainConfig::validate() const {
    if (!(lr > 0.0f)) throw ConfigError("train: learning rate must be positive");
    if (weight_decay < 0.0f) throw ConfigError("train: weight decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    for (int e : epochs) {
        if (e < 1) throw ConfigError("train: every stage needs at least one epoch");
    }
    if (push_frequency < 1) throw ConfigError("train: push frequency must be >= 1");
    if (aug_translate_px < 0 || aug_rotate_deg < 0 || aug_scale_delta < 0 ||
        aug_scale_delta >= 1.0f) {
        throw ConfigError("train: invalid augmentation ranges");
    }
    hp.validate();
    model.validate();
}

// --- optimiser -----------------------------------------------------------------

void adam_init(AdamState& state, std::span<Param* const> params) {
    state.m.clear();
    state.v.clear();
    state.step = 0;
    for (const Param* p : params) {
        state.m.emplace_back(p->value.data.size(), 0.0f);
        state.v.emplace_back(p->value.data.size(), 0.0f);
    }
}

void adam_step(std::span<Param* const> params, AdamState& state, float lr,
               float weight_decay, float beta1, float beta2, float eps) {
    if (state.m.size() != params.size()) {
        throw ConfigError("adam_step: state not initialised for this param set");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        if (p.frozen) continue;
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = p.value.grad[i];
            if (!std::isfinite(g)) {
                throw NumericError("adam_step: non-finite gradient in '" + p.name +
                                   "' at coordinate " + std::to_string(i));
            }
            double val = p.value.data[i];
            val -= static_cast<double>(lr) * weight_decay * val;
            const double mi = beta1 * m[i] + (1.0 - beta1) * g;
            const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            val -= static_cast<double>(lr) * mhat / (std::sqrt(vhat) + eps);
            p.value.data[i] = static_cast<float>(val);
        }
    }
}

// --- augmentation ----------------------------------------------------------------

Sample augment(const Sample& sample, const TrainConfig& cfg, Rng& rng) {
    const float tx = uniform_float(rng, -cfg.aug_translate_px, cfg.aug_translate_px);
    const float ty = uniform_float(rng, -cfg.aug_translate_px, cfg.aug_translate_px);
    const float rot = uniform_float(rng, -cfg.aug_rotate_deg, cfg.aug_rotate_deg);
    const float sc = uniform_float(rng, 1.0f - cfg.aug_scale_delta, 1.0f + cfg.aug_scale_delta);
    Sample out;
    out.name = sample.name;
    out.label = sample.label;
    out.image = warp_affine(sample.image, tx, ty, rot, sc);
    if (sample.has_mask()) {
        out.mask = warp_affine(sample.mask, tx, ty, rot, sc);
        for (float& v : out.mask.data) v = (v > 0.5f) ? 1.0f : 0.0f;
    }
    return out;
}

// --- schedule --------------------------------------------------------------------

namespace {

Batch assemble_batch(const Dataset& ds, std::span<const int> indices, const TrainConfig& cfg,
                     int stage, int epoch) {
    const int H = cfg.model.backbone.height, W = cfg.model.backbone.width;
    Batch b;
    b.images = Tensor({static_cast<int>(indices.size()), 1, H, W});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const int idx = indices[k];
        Rng rng = make_rng(mix_seed(cfg.seed + 0xa9ULL, (static_cast<std::uint64_t>(stage) << 40) ^
                                                            (static_cast<std::uint64_t>(epoch) << 20) ^
                                                            static_cast<std::uint64_t>(idx)));
        Sample s = augment(ds.samples[static_cast<std::size_t>(idx)], cfg, rng);
        if (s.image.dim(0) != H || s.image.dim(1) != W) {
            throw ShapeError("train: sample size does not match model input");
        }
        std::copy(s.image.data.begin(), s.image.data.end(),
                  b.images.data.begin() + k * s.image.numel());
        b.labels.push_back(s.label);
        b.indices.push_back(idx);
    }
    return b;
}

struct StageSetup {
    ObjectiveFlags flags;
    std::vector<Param*> trainable;
};

StageSetup setup_stage(int stage, ModelState& model, const TrainConfig& cfg) {
    StageSetup s;
    switch (stage) {
        case 1:
            model.set_frozen(ParamGroup::Backbone, false);
            model.set_frozen(ParamGroup::GlobalHead, false);
            model.set_frozen(ParamGroup::Prototypes, true);
            model.set_frozen(ParamGroup::ProtoHead, true);
            s.flags.ceg_weight = 1.0;
            s.flags.use_ppn = false;
            s.flags.kd_weight = 0.0;
            s.flags.plan = {true, true, false};
            break;
        case 2:
            model.set_frozen(ParamGroup::Backbone, true);
            model.set_frozen(ParamGroup::GlobalHead, true);
            model.set_frozen(ParamGroup::Prototypes, false);
            model.set_frozen(ParamGroup::ProtoHead, false);
            s.flags.ceg_weight = 0.0;
            s.flags.use_ppn = true;
            s.flags.kd_weight = cfg.hp.beta;
            s.flags.plan = {false, false, true};
            break;
        case 3:
            for (ParamGroup g : {ParamGroup::Backbone, ParamGroup::GlobalHead,
                                 ParamGroup::Prototypes, ParamGroup::ProtoHead}) {
                model.set_frozen(g, false);
            }
            s.flags.ceg_weight = cfg.hp.alpha;
            s.flags.use_ppn = true;
            s.flags.kd_weight = cfg.hp.beta;
            s.flags.plan = {true, true, true};
            break;
        default:
            throw ConfigError("run_stage: stage must be 1, 2 or 3");
    }
    for (Param* p : model.all_params()) {
        if (!p->frozen) s.trainable.push_back(p);
    }
    return s;
}

double safe_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    try {
        return roc_auc(scores, labels);
    } catch (const MetricError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

}  // namespace

void run_stage(int stage, ModelState& model, const Dataset& train, const TrainConfig& cfg,
               std::vector<EpochLog>& history, std::string* last_good_checkpoint) {
    cfg.validate();
    const StageSetup setup = setup_stage(stage, model, cfg);
    AdamState adam;
    adam_init(adam, setup.trainable);

    const int n = static_cast<int>(train.samples.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    // stage 2 freezes the backbone, so the push sees the same features every
    // epoch; extract them once
    std::vector<Tensor> frozen_feats;
    if (stage == 2) frozen_feats = extract_features(model, train);

    const int num_epochs = cfg.epochs[static_cast<std::size_t>(stage - 1)];
    for (int epoch = 1; epoch <= num_epochs; ++epoch) {
        Rng shuffle_rng = make_rng(mix_seed(cfg.seed + 0x5c0ULL,
                                            static_cast<std::uint64_t>(stage) * 1000 +
                                                static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochLog log;
        log.stage = stage;
        log.epoch = epoch;
        std::vector<double> sg, sl, se;
        std::vector<int> lab;
        int batches = 0;
        for (int b = 0; b < n; b += cfg.batch_size) {
            const int e = std::min(b + cfg.batch_size, n);
            Batch batch = assemble_batch(
                train, std::span<const int>(order.data() + b, static_cast<std::size_t>(e - b)),
                cfg, stage, epoch);
            model.zero_grads();
            BatchForward cache;
            const LossBreakdown loss =
                objective_grad_cached(batch, model, cfg.hp, setup.flags, cache);
            if (!std::isfinite(loss.total)) {
                throw NumericError("run_stage: non-finite loss at stage " +
                                   std::to_string(stage) + " epoch " + std::to_string(epoch));
            }
            adam_step(setup.trainable, adam, cfg.lr, cfg.weight_decay);

            log.ce_global += loss.ce_global;
            log.ce_proto += loss.ce_proto;
            log.cluster += loss.cluster;
            log.separation += loss.separation;
            log.kd += loss.kd;
            log.total += loss.total;
            ++batches;
            for (int i = 0; i < batch.size(); ++i) {
                sg.push_back(cache.global_probs.at2(i, 1));
                if (cache.has_proto_branch) {
                    sl.push_back(cache.proto_probs.at2(i, 1));
                    se.push_back(0.5 * (cache.global_probs.at2(i, 1) +
                                        cache.proto_probs.at2(i, 1)));
                }
                lab.push_back(batch.labels[static_cast<std::size_t>(i)]);
            }
        }
        log.ce_global /= batches;
        log.ce_proto /= batches;
        log.cluster /= batches;
        log.separation /= batches;
        log.kd /= batches;
        log.total /= batches;
        log.auc_global = safe_auc(sg, lab);
        log.auc_proto = sl.empty() ? std::numeric_limits<double>::quiet_NaN() : safe_auc(sl, lab);
        log.auc_ensemble =
            se.empty() ? std::numeric_limits<double>::quiet_NaN() : safe_auc(se, lab);
        history.push_back(log);

        if (stage >= 2 && epoch % cfg.push_frequency == 0) {
            if (stage == 2) {
                push_prototypes(model, train, cfg.greedy_push, frozen_feats);
            } else {
                push_prototypes(model, train, cfg.greedy_push);
            }
        }
        if (last_good_checkpoint) *last_good_checkpoint = encode_checkpoint(model);
    }
}

std::string history_csv(const std::vector<EpochLog>& history) {
    std::string out =
        "stage,epoch,ce_global,ce_proto,cluster,separation,kd,total,auc_global,auc_proto,"
        "auc_ensemble\n";
    for (const auto& h : history) {
        out += std::to_string(h.stage) + "," + std::to_string(h.epoch) + "," +
               format_float(h.ce_global) + "," + format_float(h.ce_proto) + "," +
               format_float(h.cluster) + "," + format_float(h.separation) + "," +
               format_float(h.kd) + "," + format_float(h.total) + "," +
               format_float(h.auc_global) + "," + format_float(h.auc_proto) + "," +
               format_float(h.auc_ensemble) + "\n";
    }
    return out;
}

TrainResult train(const Dataset& train_set, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir) {
    cfg.validate();
    if (train_set.count_with_label(0) == 0 || train_set.count_with_label(1) == 0) {
        throw ConfigError("train: dataset must contain both classes");
    }
    TrainResult res;
    res.model = ModelState::init(cfg.model, cfg.seed);

    std::string last_good;
    const bool emit = !out_dir.empty();
    if (emit) std::filesystem::create_directories(out_dir);
    try {
        for (int stage = 1; stage <= 3; ++stage) {
            run_stage(stage, res.model, train_set, cfg, res.history, &last_good);
            if (emit) {
                save_checkpoint(res.model, out_dir / ("stage" + std::to_string(stage) + ".ckpt"));
            }
        }
    } catch (const NumericError&) {
        if (emit && !last_good.empty()) {
            atomic_write_file(out_dir / "last_good.ckpt", last_good);
        }
        throw;
    }

    // thaw everything and guarantee provenance before the final artifact
    for (ParamGroup g : {ParamGroup::Backbone, ParamGroup::GlobalHead, ParamGroup::Prototypes,
                         ParamGroup::ProtoHead}) {
        res.model.set_frozen(g, false);
    }
    if (!res.model.prototypes.pushed()) {
        push_prototypes(res.model, train_set, cfg.greedy_push);
    }
    if (emit) {
        save_checkpoint(res.model, out_dir / "final.ckpt");
        atomic_write_file(out_dir / "history.csv", history_csv(res.history));
        atomic_write_file(out_dir / "provenance.csv", provenance_csv(res.model));
    }
    return res;
}

}  // namespace bppn
