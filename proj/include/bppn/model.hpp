#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bppn/ops.hpp"
#include "bppn/tensor.hpp"

namespace bppn {

// --- configuration -----------------------------------------------------------

/// Shared CNN backbone: per stage [conv 3x3, relu, conv 3x3 stride 2, relu],
/// so the downsample factor is 2^stages (default 8 on 64x64 inputs). The last
/// stage's channel count is the feature dimension D.
struct BackboneConfig {
    int height = 64;
    int width = 64;
    std::vector<int> stage_channels = {16, 32, 32};

    int feature_dim() const { return stage_channels.back(); }
    int downsample() const { return 1 << static_cast<int>(stage_channels.size()); }
    int map_h() const { return height / downsample(); }
    int map_w() const { return width / downsample(); }
    void validate() const;
};

struct ModelConfig {
    BackboneConfig backbone;
    int prototype_count = 10;   // M, split M/2 per class
    float temperature = 0.0f;   // <= 0 means "use D"

    float effective_temperature() const {
        return temperature > 0.0f ? temperature : static_cast<float>(backbone.feature_dim());
    }
    void validate() const;
};

// --- prototypes ----------------------------------------------------------------

struct Provenance {
    int image_index = -1;
    int row = 0;
    int col = 0;
    float distance = 0.0f;
};

/// M learnable D-vectors; the first M/2 belong to class 0 (non-cancer), the
/// rest to class 1 (cancer). Provenance stays empty until the first push;
/// after a push every vector equals a real training-image feature vector.
struct PrototypeSet {
    int count = 0;
    float temperature = 0.0f;
    Param vectors;  // [M, D]
    std::vector<Provenance> provenance;

    int class_of(int m) const { return (m < count / 2) ? 0 : 1; }
    int per_class() const { return count / 2; }
    bool pushed() const { return !provenance.empty(); }
    const float* vec(int m) const {
        return vectors.value.data.data() + static_cast<std::size_t>(m) * dim();
    }
    float* vec_mut(int m) {
        return vectors.value.data.data() + static_cast<std::size_t>(m) * dim();
    }
    int dim() const { return vectors.value.dim(1); }
};

// --- model state ---------------------------------------------------------------

enum class ParamGroup { Backbone, GlobalHead, Prototypes, ProtoHead };

struct ModelState {
    ModelConfig cfg;
    std::vector<Param> backbone;   // theta_f
    std::vector<Param> global_head;  // theta_h: fc weight [D,2], bias [2]
    PrototypeSet prototypes;       // theta_g
    std::vector<Param> proto_head;   // theta_k: fc weight [M,2], bias [2]

    static ModelState init(const ModelConfig& cfg, std::uint64_t seed);

    std::vector<Param*> params_of(ParamGroup g);
    std::vector<Param*> all_params();
    void set_frozen(ParamGroup g, bool frozen);
    void zero_grads();
};

// --- forward cache ---------------------------------------------------------------

/// Activations of one batch forward, kept for the backward pass. Gradient
/// buffers on the cached tensors collect the loss contributions before
/// model_backward() propagates them into the parameter grads.
struct BatchForward {
    Tensor input;                  // [N,1,H,W]
    std::vector<Tensor> conv_out;  // pre-relu output per conv
    std::vector<Tensor> conv_act;  // post-relu per conv; last one is the feature map
    Tensor gap;                    // [N,D]
    Tensor global_logits, global_probs;
    std::vector<Tensor> dists;     // per prototype [N,h,w]
    std::vector<Tensor> maps;      // per prototype [N,h,w]
    std::vector<SpatialMax> peaks; // per prototype
    Tensor scores;                 // [N,M]
    Tensor proto_logits, proto_probs;
    bool has_proto_branch = false;

    Tensor& features() { return conv_act.back(); }
    const Tensor& features() const { return conv_act.back(); }
};

struct BackwardPlan {
    bool into_backbone = true;
    bool into_global_head = true;
    bool into_proto_branch = true;
};

// input [N,1,H,W] -> feature map [N,D,H/s,W/s]
Tensor backbone_forward(const ModelState& model, const Tensor& x);

// Full forward (optionally without the prototype branch, which stage 1 never
// touches). Leaves every intermediate in the cache.
void model_forward(const ModelState& model, const Tensor& x, BatchForward& cache,
                   bool with_proto_branch = true);

// Consumes grads already accumulated on cache.global_probs / cache.proto_probs
// / cache.features() / prototype vectors and chains them into parameter grads.
void model_backward(ModelState& model, BatchForward& cache, const BackwardPlan& plan);

Tensor ensemble_predict(const Tensor& global_probs, const Tensor& proto_probs);

struct Prediction {
    Tensor global_probs;  // [N,2]
    Tensor proto_probs;   // [N,2]
    Tensor ensemble;      // [N,2]
    Tensor scores;        // [N,M]
    std::vector<Tensor> maps;  // per prototype [N,h,w]
};
Prediction predict(const ModelState& model, const Tensor& x);

// --- explanation -----------------------------------------------------------------

struct Explanation {
    int prototype_id = 0;
    int cls = 0;
    float score = 0.0f;
    Tensor map;            // upsampled to input H x W, values preserved in (0,1]
    Provenance provenance;
};

// Top-k prototypes by max-pooling score on image x (rank 2 [H,W]); requires a
// pushed model so every prototype has provenance.
std::vector<Explanation> explain(const Tensor& x, const ModelState& model, int k);
std::vector<Explanation> explain_class(const Tensor& x, const ModelState& model, int cls,
                                       int k);

// --- checkpoint -------------------------------------------------------------------

// Binary format: "BPPN", u32 version, u32 entry count, then per-param records
// (u32 name length, name bytes, u32 rank, u32 extents, raw little-endian f32),
// then u32 provenance count and (u32 image, u32 row, u32 col, f32 distance)
// records. Byte-identical round-trip.
std::string encode_checkpoint(const ModelState& model);
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
ModelState decode_checkpoint(const std::string& bytes, const std::string& origin);

}  // namespace bppn
