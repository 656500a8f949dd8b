#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bppn/tensor.hpp"

namespace bppn {

/// One weakly-labelled image. The mask exists only for the cancer class and
/// is consumed exclusively by evaluation; no training loss may read it.
struct Sample {
    std::string name;  // file stem, e.g. "0012"
    Tensor image;      // [H,W], values in [0,1]
    int label = 0;     // 0 = non-cancer, 1 = cancer
    Tensor mask;       // [H,W] binary, empty unless label == 1

    bool has_mask() const { return mask.numel() > 0; }
};

struct GenConfig {
    int count_pos = 200;
    int count_neg = 200;
    int height = 64;
    int width = 64;
    float radius_min = 5.0f;   // lesion semi-axis range, pixels
    float radius_max = 10.0f;
    float boost_min = 0.30f;   // lesion intensity lift over background
    float boost_max = 0.50f;
    float texture_scale = 0.30f;  // background bump amplitude ceiling
    std::uint64_t seed = 7;

    void validate() const;
};

struct Dataset {
    std::vector<Sample> samples;
    GenConfig gen;

    int count_with_label(int label) const;
};

// Negatives: smooth low-frequency Gaussian-bump background plus uniform
// noise. Positives: same background plus one bright elliptical lesion whose
// exact ellipse is the ground-truth mask. Pure function of the config; pixel
// values are already quantised to the 8-bit grid the PGM files store.
Dataset generate(const GenConfig& config);

// Directory layout: images/NNNN.pgm, masks/NNNN.pgm, labels.csv, genconfig.txt
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Otsu crop + bilinear resize applied to every image (and mask) in place.
void preprocess_otsu(Dataset& ds, int out_h, int out_w);

// 8-bit binary PGM (P5, maxval 255)
void write_pgm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pgm(const std::filesystem::path& path);
std::string encode_pgm(const Tensor& image);

}  // namespace bppn
