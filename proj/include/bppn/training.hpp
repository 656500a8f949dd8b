#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bppn/data.hpp"
#include "bppn/losses.hpp"
#include "bppn/model.hpp"
#include "bppn/rng.hpp"

namespace bppn {

struct TrainConfig {
    float lr = 0.001f;
    float weight_decay = 1e-5f;
    int batch_size = 8;
    std::array<int, 3> epochs = {10, 10, 5};
    HyperParams hp;
    float aug_translate_px = 3.0f;
    float aug_rotate_deg = 10.0f;
    float aug_scale_delta = 0.1f;  // scale drawn from [1-d, 1+d]
    std::uint64_t seed = 7;
    int push_frequency = 1;  // epochs between pushes in stages 2 and 3
    bool greedy_push = true;
    ModelConfig model;

    void validate() const;
};

// --- optimiser -----------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<float>> m;  // first moments, one slab per param
    std::vector<std::vector<float>> v;  // second moments
    long step = 0;
};

void adam_init(AdamState& state, std::span<Param* const> params);

// Decoupled weight decay (value -= lr*wd*value) before the bias-corrected
// moment update. Frozen params are skipped outright. Non-finite gradients
// abort with the offending parameter named.
void adam_step(std::span<Param* const> params, AdamState& state, float lr,
               float weight_decay, float beta1 = 0.9f, float beta2 = 0.999f,
               float eps = 1e-8f);

// --- augmentation ----------------------------------------------------------------

// Random translate/rotate/scale within the config ranges, bilinear, zero
// fill; mask transformed identically. Identity when all ranges are zero.
Sample augment(const Sample& sample, const TrainConfig& cfg, Rng& rng);

// --- schedule --------------------------------------------------------------------

struct EpochLog {
    int stage = 0;
    int epoch = 0;  // 1-based within the stage
    double ce_global = 0.0;
    double ce_proto = 0.0;
    double cluster = 0.0;
    double separation = 0.0;
    double kd = 0.0;
    double total = 0.0;
    double auc_global = 0.0;
    double auc_proto = 0.0;    // nan in stage 1
    double auc_ensemble = 0.0; // nan in stage 1
};

std::string history_csv(const std::vector<EpochLog>& history);

struct TrainResult {
    ModelState model;
    std::vector<EpochLog> history;
};

// Stage 1 fits backbone + GlobalNet on the global cross-entropy; stage 2
// fits prototypes + FC head with everything else frozen (distillation term
// included, global CE constant and dropped); stage 3 fine-tunes the full
// objective. Pushes run after every push_frequency epochs of stages 2 and 3.
void run_stage(int stage, ModelState& model, const Dataset& train, const TrainConfig& cfg,
               std::vector<EpochLog>& history, std::string* last_good_checkpoint = nullptr);

// Full schedule; when out_dir is non-empty, writes stage checkpoints,
// final.ckpt, history.csv and prototype provenance there.
TrainResult train(const Dataset& train, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {});

}  // namespace bppn
