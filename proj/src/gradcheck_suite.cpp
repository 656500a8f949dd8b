#include "bppn/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <memory>

#include "bppn/gradcheck.hpp"
#include "bppn/losses.hpp"
#include "bppn/model.hpp"
#include "bppn/reference.hpp"
#include "bppn/rng.hpp"

namespace bppn {

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.backbone.height = 8;
    cfg.backbone.width = 8;
    cfg.backbone.stage_channels = {6, 4};  // D = 4, downsample 4 -> 2x2 feature grid
    cfg.prototype_count = 4;
    return cfg;
}

Batch toy_batch(const ModelConfig& cfg, Rng& rng) {
    Batch b;
    b.images = Tensor({2, 1, cfg.backbone.height, cfg.backbone.width});
    for (float& v : b.images.data) v = uniform_float(rng, 0.0f, 1.0f);
    b.labels = {0, 1};
    return b;
}

using TermFn = std::function<double(ModelState&, const Batch&, bool with_grad)>;

double run_one(const TermFn& term, ModelState& model, const Batch& batch,
               std::vector<Param*> params, double step) {
    auto eval = [&]() { return term(model, batch, false); };
    auto eval_and_grad = [&]() {
        model.zero_grads();
        return term(model, batch, true);
    };
    return grad_check(eval, eval_and_grad, std::move(params), step).max_rel_err;
}

// min-distance terms: fp32 backward under check, float64 reference forward
// for the finite-difference side
TermFn make_min_term(bool separation) {
    return [separation](ModelState& model, const Batch& batch, bool with_grad) {
        if (!with_grad) {
            return separation ? ref::separation_term(batch, model)
                              : ref::cluster_term(batch, model);
        }
        BatchForward cache;
        model_forward(model, batch.images, cache, false);
        const double v = separation
                             ? separation_loss(cache.features(), model.prototypes, batch.labels)
                             : cluster_loss(cache.features(), model.prototypes, batch.labels);
        cache.features().ensure_grad();
        if (separation) {
            separation_loss_backward(cache.features(), model.prototypes, batch.labels, 1.0,
                                     &cache.features().grad,
                                     &model.prototypes.vectors.value.grad);
        } else {
            cluster_loss_backward(cache.features(), model.prototypes, batch.labels, 1.0,
                                  &cache.features().grad,
                                  &model.prototypes.vectors.value.grad);
        }
        model_backward(model, cache, {true, false, false});
        return v;
    };
}

TermFn make_objective_term(const HyperParams& hp, ObjectiveFlags flags, bool freeze_teacher) {
    // The teacher is frozen at the point where the analytic gradient was taken
    // (the grad pass runs first) and stays fixed for the perturbed evaluations,
    // matching the stop-gradient contract of the distillation term.
    auto teacher = std::make_shared<Tensor>();
    return [hp, flags, freeze_teacher, teacher](ModelState& model, const Batch& batch,
                                                bool with_grad) {
        ObjectiveFlags f = flags;
        if (freeze_teacher) {
            if (with_grad) {
                BatchForward warm;
                model_forward(model, batch.images, warm, false);
                *teacher = warm.global_probs;
            }
            f.frozen_teacher = teacher.get();
        }
        if (with_grad) return objective_grad(batch, model, hp, f).total;
        return ref::objective(batch, model, hp, f);
    };
}

}  // namespace

std::vector<NamedCheck> run_registered_gradchecks(std::uint64_t seed, int trials) {
    constexpr double kStep = 1e-3;
    constexpr double kTol = 1e-3;

    struct Entry {
        std::string name;
        TermFn term;
        std::vector<ParamGroup> groups;
    };
    std::vector<Entry> entries;

    const HyperParams defaults;
    auto flags = [](double ceg, bool ppn, double kd, BackwardPlan plan) {
        ObjectiveFlags f;
        f.ceg_weight = ceg;
        f.use_ppn = ppn;
        f.kd_weight = kd;
        f.plan = plan;
        return f;
    };

    entries.push_back({"ce_global",
                       make_objective_term(defaults, flags(1.0, false, 0.0, {true, true, false}),
                                           false),
                       {ParamGroup::Backbone, ParamGroup::GlobalHead}});
    {
        HyperParams hp = defaults;
        hp.lambda1 = 0.0f;
        hp.lambda2 = 0.0f;
        entries.push_back({"ce_protopnet",
                           make_objective_term(hp, flags(0.0, true, 0.0, {true, false, true}),
                                               false),
                           {ParamGroup::Backbone, ParamGroup::Prototypes, ParamGroup::ProtoHead}});
    }
    entries.push_back({"cluster", make_min_term(false),
                       {ParamGroup::Backbone, ParamGroup::Prototypes}});
    entries.push_back({"separation", make_min_term(true),
                       {ParamGroup::Backbone, ParamGroup::Prototypes}});
    entries.push_back({"kd_hinge",
                       make_objective_term(defaults, flags(0.0, false, 1.0, {true, false, true}),
                                           true),
                       {ParamGroup::Backbone, ParamGroup::Prototypes, ParamGroup::ProtoHead}});
    entries.push_back({"protopnet_loss",
                       make_objective_term(defaults, flags(0.0, true, 0.0, {true, false, true}),
                                           false),
                       {ParamGroup::Backbone, ParamGroup::Prototypes, ParamGroup::ProtoHead}});
    entries.push_back({"combined_student_params",
                       make_objective_term(defaults, flags(1.0, true, 0.5, {true, true, true}),
                                           false),
                       {ParamGroup::Prototypes, ParamGroup::ProtoHead}});
    entries.push_back({"combined_all_params",
                       make_objective_term(defaults, flags(1.0, true, 0.5, {true, true, true}),
                                           true),
                       {ParamGroup::Backbone, ParamGroup::GlobalHead, ParamGroup::Prototypes,
                        ParamGroup::ProtoHead}});

    std::vector<NamedCheck> results;
    for (const Entry& entry : entries) {
        NamedCheck check;
        check.name = entry.name;
        check.tolerance = kTol;
        for (int trial = 0; trial < trials; ++trial) {
            const std::uint64_t trial_seed = mix_seed(seed, static_cast<std::uint64_t>(trial));
            ModelState model = ModelState::init(toy_config(), trial_seed);
            Rng rng = make_rng(mix_seed(trial_seed, 0xda7aULL));
            Batch batch = toy_batch(model.cfg, rng);
            std::vector<Param*> params;
            for (ParamGroup g : entry.groups) {
                for (Param* p : model.params_of(g)) params.push_back(p);
            }
            check.max_rel_err =
                std::max(check.max_rel_err, run_one(entry.term, model, batch, params, kStep));
        }
        check.pass = check.max_rel_err <= check.tolerance;
        results.push_back(check);
    }
    return results;
}

}  // namespace bppn
