#include "bppn/losses.hpp"

#include <algorithm>
#include <cmath>

#include "bppn/error.hpp"

namespace bppn {

namespace {

constexpr double kCeClamp = 1e-12;

void check_labels(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2 || probs.dim(1) != 2) {
        throw ShapeError("loss: probabilities must be [N,2]");
    }
    if (static_cast<std::size_t>(probs.dim(0)) != labels.size()) {
        throw ShapeError("loss: label count does not match batch");
    }
    for (int l : labels) {
        if (l != 0 && l != 1) throw ConfigError("loss: labels must be 0 or 1");
    }
}

// argmin of the double minimum for one sample: over prototypes with
// class == want (or != want when invert), over all spatial positions.
struct MinHit {
    int proto = -1;
    int pos = -1;
    double dist = 0.0;
};

MinHit double_min(const Tensor& features, const PrototypeSet& ps, int sample, int want,
                  bool invert) {
    const int d = features.dim(1);
    const int hw = features.dim(2) * features.dim(3);
    MinHit best;
    for (int m = 0; m < ps.count; ++m) {
        const bool own = ps.class_of(m) == want;
        if (own == invert) continue;
        const float* pv = ps.vec(m);
        const float* base = features.data.data() + features.idx4(sample, 0, 0, 0);
        for (int pos = 0; pos < hw; ++pos) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c) {
                const double diff = base[static_cast<std::size_t>(c) * hw + pos] - pv[c];
                acc += diff * diff;
            }
            if (best.proto < 0 || acc < best.dist) {
                best.proto = m;
                best.pos = pos;
                best.dist = acc;
            }
        }
    }
    return best;
}

}  // namespace

void HyperParams::validate() const {
    if (alpha < 0 || beta < 0 || lambda1 < 0 || lambda2 < 0) {
        throw ConfigError("hyperparams: weights must be non-negative");
    }
    if (!(omega > 0)) throw ConfigError("hyperparams: omega must be > 0");
    if (!(gamma > 0)) throw ConfigError("hyperparams: gamma must be > 0");
}

double ce_loss(const Tensor& probs, const std::vector<int>& labels) {
    check_labels(probs, labels);
    const int n = probs.dim(0);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double p = std::max(kCeClamp, static_cast<double>(probs.at2(i, labels[static_cast<std::size_t>(i)])));
        acc -= std::log(p);
    }
    return acc / n;
}

double ce_loss(const Tensor& probs, const Tensor& onehot) {
    if (!probs.same_shape(onehot)) throw ShapeError("ce_loss: shape mismatch");
    std::vector<int> labels;
    for (int i = 0; i < onehot.dim(0); ++i) {
        const float a = onehot.at2(i, 0), b = onehot.at2(i, 1);
        if (!((a == 0.0f && b == 1.0f) || (a == 1.0f && b == 0.0f))) {
            throw ConfigError("ce_loss: row " + std::to_string(i) + " is not one-hot");
        }
        labels.push_back(b == 1.0f ? 1 : 0);
    }
    return ce_loss(probs, labels);
}

void ce_loss_backward(const Tensor& probs, const std::vector<int>& labels, double weight,
                      std::vector<float>* gprobs) {
    const int n = probs.dim(0);
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double p = probs.at2(i, y);
        if (p > kCeClamp) {
            (*gprobs)[probs.idx2(i, y)] += static_cast<float>(-weight / (n * p));
        }
    }
}

double kd_loss(const Tensor& global_probs, const Tensor& proto_probs,
               const std::vector<int>& labels, float omega) {
    check_labels(global_probs, labels);
    check_labels(proto_probs, labels);
    const int n = global_probs.dim(0);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double h = static_cast<double>(global_probs.at2(i, y)) -
                         static_cast<double>(proto_probs.at2(i, y)) + omega;
        acc += std::max(0.0, h);
    }
    return acc / n;
}

void kd_loss_backward(const Tensor& global_probs, const Tensor& proto_probs,
                      const std::vector<int>& labels, float omega, double weight,
                      std::vector<float>* gproto_probs) {
    const int n = global_probs.dim(0);
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double h = static_cast<double>(global_probs.at2(i, y)) -
                         static_cast<double>(proto_probs.at2(i, y)) + omega;
        if (h > 0.0) {
            (*gproto_probs)[proto_probs.idx2(i, y)] += static_cast<float>(-weight / n);
        }
    }
}

namespace {

double class_min_loss(const Tensor& features, const PrototypeSet& ps,
                      const std::vector<int>& labels, bool invert) {
    if (features.rank() != 4) throw ShapeError("cluster/separation: features must be [N,D,h,w]");
    if (ps.per_class() < 1) throw ConfigError("cluster/separation: a class has zero prototypes");
    if (features.dim(1) != ps.dim()) throw ShapeError("cluster/separation: feature dim mismatch");
    const int n = features.dim(0);
    if (static_cast<std::size_t>(n) != labels.size()) {
        throw ShapeError("cluster/separation: label count mismatch");
    }
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += double_min(features, ps, i, labels[static_cast<std::size_t>(i)], invert).dist;
    }
    return acc / n;
}

void class_min_backward(const Tensor& features, const PrototypeSet& ps,
                        const std::vector<int>& labels, bool invert, double weight,
                        std::vector<float>* gfeatures, std::vector<float>* gprototypes) {
    const int n = features.dim(0);
    const int d = features.dim(1);
    const int hw = features.dim(2) * features.dim(3);
    for (int i = 0; i < n; ++i) {
        const MinHit hit = double_min(features, ps, i, labels[static_cast<std::size_t>(i)], invert);
        const float* pv = ps.vec(hit.proto);
        for (int c = 0; c < d; ++c) {
            const std::size_t fi = (static_cast<std::size_t>(i) * d + static_cast<std::size_t>(c)) * hw +
                                   static_cast<std::size_t>(hit.pos);
            const float diff = features.data[fi] - pv[c];
            const float g = static_cast<float>(2.0 * weight / n) * diff;
            if (gfeatures) (*gfeatures)[fi] += g;
            if (gprototypes) {
                (*gprototypes)[static_cast<std::size_t>(hit.proto) * d + static_cast<std::size_t>(c)] -= g;
            }
        }
    }
}

}  // namespace

double cluster_loss(const Tensor& features, const PrototypeSet& ps,
                    const std::vector<int>& labels) {
    return class_min_loss(features, ps, labels, /*invert=*/false);
}

void cluster_loss_backward(const Tensor& features, const PrototypeSet& ps,
                           const std::vector<int>& labels, double weight,
                           std::vector<float>* gfeatures, std::vector<float>* gprototypes) {
    class_min_backward(features, ps, labels, false, weight, gfeatures, gprototypes);
}

double separation_loss(const Tensor& features, const PrototypeSet& ps,
                       const std::vector<int>& labels) {
    return class_min_loss(features, ps, labels, /*invert=*/true);
}

void separation_loss_backward(const Tensor& features, const PrototypeSet& ps,
                              const std::vector<int>& labels, double weight,
                              std::vector<float>* gfeatures, std::vector<float>* gprototypes) {
    class_min_backward(features, ps, labels, true, weight, gfeatures, gprototypes);
}

// --- composition --------------------------------------------------------------------

LossBreakdown objective_forward(const Batch& batch, const ModelState& model,
                                const HyperParams& hp, const ObjectiveFlags& flags,
                                BatchForward& cache) {
    hp.validate();
    const bool need_proto = flags.use_ppn || flags.kd_weight != 0.0;
    model_forward(model, batch.images, cache, need_proto);

    LossBreakdown out;
    out.ce_global = ce_loss(cache.global_probs, batch.labels);
    if (need_proto) {
        out.ce_proto = ce_loss(cache.proto_probs, batch.labels);
        out.cluster = cluster_loss(cache.features(), model.prototypes, batch.labels);
        out.separation = separation_loss(cache.features(), model.prototypes, batch.labels);
        out.sep_hinge = std::max(0.0, static_cast<double>(hp.gamma) - out.separation);
        const Tensor& teacher = flags.frozen_teacher ? *flags.frozen_teacher : cache.global_probs;
        out.kd = kd_loss(teacher, cache.proto_probs, batch.labels, hp.omega);
        out.ppn = out.ce_proto + hp.lambda1 * out.cluster + hp.lambda2 * out.sep_hinge;
    }
    out.total = (flags.use_ppn ? out.ppn : 0.0) + flags.ceg_weight * out.ce_global +
                flags.kd_weight * out.kd;
    return out;
}

LossBreakdown objective_grad(const Batch& batch, ModelState& model, const HyperParams& hp,
                             const ObjectiveFlags& flags) {
    BatchForward cache;
    return objective_grad_cached(batch, model, hp, flags, cache);
}

LossBreakdown objective_grad_cached(const Batch& batch, ModelState& model,
                                    const HyperParams& hp, const ObjectiveFlags& flags,
                                    BatchForward& cache) {
    const LossBreakdown out = objective_forward(batch, model, hp, flags, cache);

    if (flags.ceg_weight != 0.0) {
        cache.global_probs.ensure_grad();
        ce_loss_backward(cache.global_probs, batch.labels, flags.ceg_weight,
                         &cache.global_probs.grad);
    }
    if (flags.use_ppn || flags.kd_weight != 0.0) {
        cache.proto_probs.ensure_grad();
        if (flags.use_ppn) {
            ce_loss_backward(cache.proto_probs, batch.labels, 1.0, &cache.proto_probs.grad);
            cache.features().ensure_grad();
            cluster_loss_backward(cache.features(), model.prototypes, batch.labels, hp.lambda1,
                                  &cache.features().grad, &model.prototypes.vectors.value.grad);
            if (out.separation < hp.gamma) {
                separation_loss_backward(cache.features(), model.prototypes, batch.labels,
                                         -static_cast<double>(hp.lambda2),
                                         &cache.features().grad,
                                         &model.prototypes.vectors.value.grad);
            }
        }
        if (flags.kd_weight != 0.0) {
            const Tensor& teacher =
                flags.frozen_teacher ? *flags.frozen_teacher : cache.global_probs;
            kd_loss_backward(teacher, cache.proto_probs, batch.labels, hp.omega,
                             flags.kd_weight, &cache.proto_probs.grad);
        }
    }
    model_backward(model, cache, flags.plan);
    return out;
}

LossBreakdown protopnet_loss(const Batch& batch, const ModelState& model,
                             const HyperParams& hp) {
    ObjectiveFlags flags;
    flags.ceg_weight = 0.0;
    flags.kd_weight = 0.0;
    flags.use_ppn = true;
    BatchForward cache;
    LossBreakdown out = objective_forward(batch, model, hp, flags, cache);
    out.total = out.ppn;
    return out;
}

LossBreakdown total_objective(const Batch& batch, const ModelState& model,
                              const HyperParams& hp) {
    ObjectiveFlags flags;
    flags.ceg_weight = hp.alpha;
    flags.kd_weight = hp.beta;
    flags.use_ppn = true;
    BatchForward cache;
    return objective_forward(batch, model, hp, flags, cache);
}

}  // namespace bppn
