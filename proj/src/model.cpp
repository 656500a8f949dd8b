#include "bppn/model.hpp"

#include <algorithm>
#include <cmath>

#include "bppn/error.hpp"
#include "bppn/imageops.hpp"
#include "bppn/rng.hpp"

namespace bppn {

void BackboneConfig::validate() const {
    if (stage_channels.empty()) throw ConfigError("backbone: need at least one stage");
    for (int c : stage_channels) {
        if (c < 1) throw ConfigError("backbone: channel counts must be >= 1");
    }
    const int s = downsample();
    if (height % s != 0 || width % s != 0) {
        throw ConfigError("backbone: input " + std::to_string(height) + "x" +
                          std::to_string(width) + " not divisible by downsample factor " +
                          std::to_string(s));
    }
}

void ModelConfig::validate() const {
    backbone.validate();
    if (prototype_count < 2 || prototype_count % 2 != 0) {
        throw ConfigError("model: prototype count must be even and >= 2");
    }
    if (temperature < 0.0f) throw ConfigError("model: temperature must be positive");
}

namespace {

Param he_conv(const std::string& name, int cout, int cin, int k, Rng& rng) {
    Tensor w({cout, cin, k, k});
    const float std = std::sqrt(2.0f / static_cast<float>(cin * k * k));
    for (float& v : w.data) v = normal_float(rng, 0.0f, std);
    return Param(name, std::move(w));
}

Param zeros_param(const std::string& name, std::vector<int> shape) {
    return Param(name, Tensor(std::move(shape)));
}

}  // namespace

ModelState ModelState::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelState m;
    m.cfg = cfg;
    Rng rng = make_rng(mix_seed(seed, 0xb0d31ULL));

    int cin = 1;
    for (std::size_t b = 0; b < cfg.backbone.stage_channels.size(); ++b) {
        const int ch = cfg.backbone.stage_channels[b];
        const std::string stem = "backbone.b" + std::to_string(b);
        m.backbone.push_back(he_conv(stem + ".conv_a.weight", ch, cin, 3, rng));
        m.backbone.push_back(zeros_param(stem + ".conv_a.bias", {ch}));
        m.backbone.push_back(he_conv(stem + ".conv_b.weight", ch, ch, 3, rng));
        m.backbone.push_back(zeros_param(stem + ".conv_b.bias", {ch}));
        cin = ch;
    }

    const int d = cfg.backbone.feature_dim();
    {
        Tensor w({d, 2});
        const float std = std::sqrt(1.0f / static_cast<float>(d));
        for (float& v : w.data) v = normal_float(rng, 0.0f, std);
        m.global_head.push_back(Param("global.fc.weight", std::move(w)));
        m.global_head.push_back(zeros_param("global.fc.bias", {2}));
    }

    const int M = cfg.prototype_count;
    {
        Tensor p({M, d});
        for (float& v : p.data) v = uniform_float(rng, 0.0f, 1.0f);
        m.prototypes.count = M;
        m.prototypes.temperature = cfg.effective_temperature();
        m.prototypes.vectors = Param("prototypes.vectors", std::move(p));
    }

    {
        // class-connection init: +1 from a prototype to its own class, -0.5 to the other
        Tensor w({M, 2});
        for (int i = 0; i < M; ++i) {
            const int own = m.prototypes.class_of(i);
            w.at2(i, own) = 1.0f;
            w.at2(i, 1 - own) = -0.5f;
        }
        m.proto_head.push_back(Param("head.fc.weight", std::move(w)));
        m.proto_head.push_back(zeros_param("head.fc.bias", {2}));
    }
    return m;
}

std::vector<Param*> ModelState::params_of(ParamGroup g) {
    std::vector<Param*> out;
    switch (g) {
        case ParamGroup::Backbone:
            for (auto& p : backbone) out.push_back(&p);
            break;
        case ParamGroup::GlobalHead:
            for (auto& p : global_head) out.push_back(&p);
            break;
        case ParamGroup::Prototypes:
            out.push_back(&prototypes.vectors);
            break;
        case ParamGroup::ProtoHead:
            for (auto& p : proto_head) out.push_back(&p);
            break;
    }
    return out;
}

std::vector<Param*> ModelState::all_params() {
    std::vector<Param*> out;
    for (ParamGroup g : {ParamGroup::Backbone, ParamGroup::GlobalHead, ParamGroup::Prototypes,
                         ParamGroup::ProtoHead}) {
        for (Param* p : params_of(g)) out.push_back(p);
    }
    return out;
}

void ModelState::set_frozen(ParamGroup g, bool frozen) {
    for (Param* p : params_of(g)) p->frozen = frozen;
}

void ModelState::zero_grads() {
    for (Param* p : all_params()) p->value.zero_grad();
}

// --- forward ---------------------------------------------------------------------

Tensor backbone_forward(const ModelState& model, const Tensor& x) {
    BatchForward cache;
    model_forward(model, x, cache, /*with_proto_branch=*/false);
    return cache.features();
}

void model_forward(const ModelState& model, const Tensor& x, BatchForward& cache,
                   bool with_proto_branch) {
    const BackboneConfig& bb = model.cfg.backbone;
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != bb.height || x.dim(3) != bb.width) {
        throw ShapeError("model_forward: input must be [N,1," + std::to_string(bb.height) +
                         "," + std::to_string(bb.width) + "], got " + shape_str(x.shape));
    }
    cache = BatchForward{};
    cache.input = x;

    const Tensor* cur = &cache.input;
    for (std::size_t b = 0; b < bb.stage_channels.size(); ++b) {
        for (int half = 0; half < 2; ++half) {
            const Param& w = model.backbone[b * 4 + static_cast<std::size_t>(half) * 2];
            const Param& bias = model.backbone[b * 4 + static_cast<std::size_t>(half) * 2 + 1];
            const int stride = (half == 0) ? 1 : 2;
            cache.conv_out.push_back(conv2d(*cur, w.value, bias.value, stride, 1));
            cache.conv_act.push_back(relu(cache.conv_out.back()));
            cur = &cache.conv_act.back();
        }
    }

    const Tensor& feat = cache.features();
    cache.gap = global_avg_pool(feat);
    cache.global_logits = dense(cache.gap, model.global_head[0].value,
                                model.global_head[1].value);
    cache.global_probs = softmax(cache.global_logits);

    if (!with_proto_branch) return;
    cache.has_proto_branch = true;

    const PrototypeSet& ps = model.prototypes;
    const int n = x.dim(0), M = ps.count;
    cache.scores = Tensor({n, M});
    cache.dists.resize(static_cast<std::size_t>(M));
    cache.maps.resize(static_cast<std::size_t>(M));
    cache.peaks.resize(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
        auto& dist = cache.dists[static_cast<std::size_t>(m)];
        auto& map = cache.maps[static_cast<std::size_t>(m)];
        dist = sqdist_map(feat, std::span<const float>(ps.vec(m), static_cast<std::size_t>(ps.dim())));
        map = exp_sim(dist, ps.temperature);
        cache.peaks[static_cast<std::size_t>(m)] = spatial_max(map);
        for (int i = 0; i < n; ++i) {
            cache.scores.at2(i, m) = cache.peaks[static_cast<std::size_t>(m)].values.data[static_cast<std::size_t>(i)];
        }
    }
    cache.proto_logits = dense(cache.scores, model.proto_head[0].value,
                               model.proto_head[1].value);
    cache.proto_probs = softmax(cache.proto_logits);
}

void model_backward(ModelState& model, BatchForward& cache, const BackwardPlan& plan) {
    Tensor& feat = cache.features();
    feat.ensure_grad();

    if (plan.into_proto_branch) {
        if (!cache.has_proto_branch) throw Error("model_backward: proto branch not forwarded");
        const PrototypeSet& ps = model.prototypes;
        const int n = cache.input.dim(0), M = ps.count;

        // proto probs -> logits -> scores (+ theta_k)
        cache.proto_logits.ensure_grad();
        if (cache.proto_probs.has_grad()) {
            Tensor gp;
            gp.shape = cache.proto_probs.shape;
            gp.data = cache.proto_probs.grad;
            softmax_backward(cache.proto_probs, gp, &cache.proto_logits.grad);
        }
        cache.scores.ensure_grad();
        {
            Tensor gl;
            gl.shape = cache.proto_logits.shape;
            gl.data = cache.proto_logits.grad;
            dense_backward(cache.scores, model.proto_head[0].value, gl, &cache.scores.grad,
                           &model.proto_head[0].value.grad, &model.proto_head[1].value.grad);
        }

        // scores -> maps -> dists -> features and prototypes
        Param& pv = model.prototypes.vectors;
        for (int m = 0; m < M; ++m) {
            Tensor gvals({n});
            for (int i = 0; i < n; ++i) {
                gvals.data[static_cast<std::size_t>(i)] = cache.scores.grad[cache.scores.idx2(i, m)];
            }
            auto& map = cache.maps[static_cast<std::size_t>(m)];
            map.ensure_grad();
            spatial_max_backward(map.shape, cache.peaks[static_cast<std::size_t>(m)], gvals,
                                 &map.grad);
            auto& dist = cache.dists[static_cast<std::size_t>(m)];
            dist.ensure_grad();
            {
                Tensor gm;
                gm.shape = map.shape;
                gm.data = map.grad;
                exp_sim_backward(map, ps.temperature, gm, &dist.grad);
            }
            Tensor gd;
            gd.shape = dist.shape;
            gd.data = dist.grad;
            std::span<float> gproto(pv.value.grad.data() + static_cast<std::size_t>(m) * ps.dim(),
                                    static_cast<std::size_t>(ps.dim()));
            sqdist_map_backward(feat, std::span<const float>(ps.vec(m), static_cast<std::size_t>(ps.dim())),
                                gd, &feat.grad, gproto);
        }
    }

    if (plan.into_global_head || plan.into_backbone) {
        // global probs -> logits -> gap (+ theta_h)
        cache.global_logits.ensure_grad();
        if (cache.global_probs.has_grad()) {
            Tensor gp;
            gp.shape = cache.global_probs.shape;
            gp.data = cache.global_probs.grad;
            softmax_backward(cache.global_probs, gp, &cache.global_logits.grad);
        }
        cache.gap.ensure_grad();
        {
            Tensor gl;
            gl.shape = cache.global_logits.shape;
            gl.data = cache.global_logits.grad;
            dense_backward(cache.gap, model.global_head[0].value, gl, &cache.gap.grad,
                           plan.into_global_head ? &model.global_head[0].value.grad : nullptr,
                           plan.into_global_head ? &model.global_head[1].value.grad : nullptr);
        }
        Tensor gg;
        gg.shape = cache.gap.shape;
        gg.data = cache.gap.grad;
        global_avg_pool_backward(feat.shape, gg, &feat.grad);
    }

    if (!plan.into_backbone) return;

    // walk the conv stack backwards; conv_act[i] = relu(conv_out[i])
    const std::size_t n_convs = cache.conv_out.size();
    std::vector<float>* gact = &feat.grad;
    for (std::size_t ci = n_convs; ci-- > 0;) {
        Tensor& out = cache.conv_out[ci];
        out.ensure_grad();
        {
            Tensor ga;
            ga.shape = cache.conv_act[ci].shape;
            ga.data = *gact;
            relu_backward(out, ga, &out.grad);
        }
        const Tensor& in = (ci == 0) ? cache.input : cache.conv_act[ci - 1];
        Param& w = model.backbone[(ci / 2) * 4 + (ci % 2) * 2];
        Param& b = model.backbone[(ci / 2) * 4 + (ci % 2) * 2 + 1];
        const int stride = (ci % 2 == 0) ? 1 : 2;
        Tensor go;
        go.shape = out.shape;
        go.data = out.grad;
        if (ci == 0) {
            conv2d_backward(in, w.value, stride, 1, go, nullptr, &w.value.grad, &b.value.grad);
        } else {
            Tensor& prev = cache.conv_act[ci - 1];
            prev.ensure_grad();
            conv2d_backward(in, w.value, stride, 1, go, &prev.grad, &w.value.grad,
                            &b.value.grad);
            gact = &prev.grad;
        }
    }
}

Tensor ensemble_predict(const Tensor& global_probs, const Tensor& proto_probs) {
    if (!global_probs.same_shape(proto_probs)) {
        throw ShapeError("ensemble_predict: branch outputs differ in shape");
    }
    Tensor out;
    out.shape = global_probs.shape;
    out.data.resize(global_probs.numel());
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = 0.5f * (global_probs.data[i] + proto_probs.data[i]);
    }
    return out;
}

Prediction predict(const ModelState& model, const Tensor& x) {
    BatchForward cache;
    model_forward(model, x, cache, true);
    Prediction p;
    p.global_probs = cache.global_probs;
    p.proto_probs = cache.proto_probs;
    p.ensemble = ensemble_predict(p.global_probs, p.proto_probs);
    p.scores = cache.scores;
    p.maps = std::move(cache.maps);
    return p;
}

// --- explanation -------------------------------------------------------------------

namespace {

Tensor as_batch_of_one(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("explain: image must be [H,W]");
    Tensor b({1, 1, x.dim(0), x.dim(1)});
    b.data = x.data;
    return b;
}

std::vector<Explanation> rank_prototypes(const Tensor& x, const ModelState& model,
                                         int cls_filter, int k) {
    if (k < 1) throw ConfigError("explain: k must be positive");
    if (!model.prototypes.pushed()) {
        throw MissingProvenanceError("explain: model has no prototype provenance; push first");
    }
    Prediction pred = predict(model, as_batch_of_one(x));
    std::vector<int> order;
    for (int m = 0; m < model.prototypes.count; ++m) {
        if (cls_filter >= 0 && model.prototypes.class_of(m) != cls_filter) continue;
        order.push_back(m);
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return pred.scores.at2(0, a) > pred.scores.at2(0, b);
    });
    if (static_cast<int>(order.size()) > k) order.resize(static_cast<std::size_t>(k));

    std::vector<Explanation> out;
    for (int m : order) {
        Explanation e;
        e.prototype_id = m;
        e.cls = model.prototypes.class_of(m);
        e.score = pred.scores.at2(0, m);
        const Tensor& map = pred.maps[static_cast<std::size_t>(m)];
        Tensor flat({map.dim(1), map.dim(2)});
        std::copy(map.data.begin(), map.data.end(), flat.data.begin());
        e.map = resize_bilinear(flat, x.dim(0), x.dim(1));
        e.provenance = model.prototypes.provenance[static_cast<std::size_t>(m)];
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

std::vector<Explanation> explain(const Tensor& x, const ModelState& model, int k) {
    return rank_prototypes(x, model, -1, k);
}

std::vector<Explanation> explain_class(const Tensor& x, const ModelState& model, int cls,
                                       int k) {
    return rank_prototypes(x, model, cls, k);
}

}  // namespace bppn
