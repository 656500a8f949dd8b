#pragma once

#include <vector>

#include "bppn/model.hpp"
#include "bppn/tensor.hpp"

namespace bppn {

struct HyperParams {
    float alpha = 1.0f;    // weight of the global cross-entropy term
    float beta = 0.5f;     // weight of the distillation term
    float omega = 0.2f;    // distillation hinge margin
    float lambda1 = 0.1f;  // cluster-loss weight
    float lambda2 = 0.1f;  // separation-hinge weight
    float gamma = 10.0f;   // separation margin

    void validate() const;
};

struct Batch {
    Tensor images;            // [N,1,H,W]
    std::vector<int> labels;  // 0/1 per sample
    std::vector<int> indices; // dataset indices, bookkeeping only

    int size() const { return static_cast<int>(labels.size()); }
};

// --- individual terms ---------------------------------------------------------

// mean over the batch of -log(p at labelled class), input clamped at 1e-12
double ce_loss(const Tensor& probs, const std::vector<int>& labels);
double ce_loss(const Tensor& probs, const Tensor& onehot);  // validates one-hot rows
void ce_loss_backward(const Tensor& probs, const std::vector<int>& labels, double weight,
                      std::vector<float>* gprobs);

// mean of max(0, y'g - y'l + omega); the teacher term is a constant, so the
// gradient flows only into the student probabilities.
double kd_loss(const Tensor& global_probs, const Tensor& proto_probs,
               const std::vector<int>& labels, float omega);
void kd_loss_backward(const Tensor& global_probs, const Tensor& proto_probs,
                      const std::vector<int>& labels, float omega, double weight,
                      std::vector<float>* gproto_probs);

// mean over the batch of min over own-class prototypes of the min over all
// spatial feature vectors z of ||z - p||^2
double cluster_loss(const Tensor& features, const PrototypeSet& ps,
                    const std::vector<int>& labels);
void cluster_loss_backward(const Tensor& features, const PrototypeSet& ps,
                           const std::vector<int>& labels, double weight,
                           std::vector<float>* gfeatures, std::vector<float>* gprototypes);

// same double-minimum over the prototypes NOT of the image's class
double separation_loss(const Tensor& features, const PrototypeSet& ps,
                       const std::vector<int>& labels);
void separation_loss_backward(const Tensor& features, const PrototypeSet& ps,
                              const std::vector<int>& labels, double weight,
                              std::vector<float>* gfeatures, std::vector<float>* gprototypes);

// --- composition ----------------------------------------------------------------

struct LossBreakdown {
    double ce_global = 0.0;
    double ce_proto = 0.0;
    double cluster = 0.0;
    double separation = 0.0;
    double sep_hinge = 0.0;  // max(0, gamma - separation)
    double kd = 0.0;
    double ppn = 0.0;    // ce_proto + lambda1*cluster + lambda2*sep_hinge
    double total = 0.0;  // ppn + alpha*ce_global + beta*kd
};

/// Which terms are live and which parameter groups receive gradients; the
/// three training stages are different settings of this struct.
struct ObjectiveFlags {
    double ceg_weight = 1.0;  // 0 disables the global CE term
    bool use_ppn = true;
    double kd_weight = 0.5;  // 0 disables distillation
    BackwardPlan plan;

    // KD teacher probabilities frozen at an earlier forward; used by the
    // finite-difference harness so the numeric derivative matches the
    // stop-gradient contract. Null means "teacher from this forward".
    const Tensor* frozen_teacher = nullptr;
};

LossBreakdown objective_forward(const Batch& batch, const ModelState& model,
                                const HyperParams& hp, const ObjectiveFlags& flags,
                                BatchForward& cache);

// forward + backward; accumulates into the model's param grads
LossBreakdown objective_grad(const Batch& batch, ModelState& model, const HyperParams& hp,
                             const ObjectiveFlags& flags);
LossBreakdown objective_grad_cached(const Batch& batch, ModelState& model,
                                    const HyperParams& hp, const ObjectiveFlags& flags,
                                    BatchForward& cache);

// Eq-style fixed compositions (forward only)
LossBreakdown protopnet_loss(const Batch& batch, const ModelState& model,
                             const HyperParams& hp);
LossBreakdown total_objective(const Batch& batch, const ModelState& model,
                              const HyperParams& hp);

}  // namespace bppn
