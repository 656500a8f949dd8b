#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bppn/data.hpp"
#include "bppn/model.hpp"
#include "bppn/prototypes.hpp"

namespace bppn {

// Mann-Whitney statistic: fraction of (positive, negative) pairs ranked
// correctly, ties counted 0.5. Errors when only one class is present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Bilinear upsample to H x W, then strictly-greater thresholding.
Tensor binarize_map(const Tensor& map, float threshold, int out_h, int out_w);

// |a AND b| / |a OR b|; 0 when the union is empty.
double iou(const Tensor& a, const Tensor& b);

struct LocalisationCase {
    std::string image_id;
    double cancer_prob = 0.0;  // ensemble cancer probability = detection confidence
    Tensor region;             // thresholded upsampled top-1 cancer-prototype map
    Tensor mask;               // ground truth; empty for non-cancer images
    bool excluded = false;     // cancer_prob < 0.1
    int top_proto = -1;
    double top_score = 0.0;
    bool argmax_in_mask = false;  // peak of the upsampled map falls inside the mask
    double iou_value = 0.0;       // against the mask; 0 when no mask

    bool has_mask() const { return mask.numel() > 0; }
};

// One detection per non-excluded case; true positive iff IoU >= threshold;
// average precision over descending distinct confidences. Recall denominator
// is the number of non-excluded cases that carry a ground-truth mask.
double pr_auc_at_iou(const std::vector<LocalisationCase>& cases, double iou_threshold);

struct SweepPoint {
    double iou_threshold = 0.0;
    double pr_auc = 0.0;
};
std::vector<SweepPoint> localisation_sweep(const std::vector<LocalisationCase>& cases);

struct EvalReport {
    double auc_global = 0.0;
    double auc_proto = 0.0;
    double auc_ensemble = 0.0;
    DiversityReport diversity;
    std::vector<SweepPoint> sweep;
    std::vector<LocalisationCase> cases;
    int num_excluded = 0;
    double argmax_in_mask_rate = 0.0;  // over non-excluded true-cancer cases
};

// Full measurement pass over a (preprocessed) test set.
EvalReport evaluate(const ModelState& model, const Dataset& test, int workers = 1);

std::string metrics_json(const EvalReport& report);
std::string localisation_csv(const EvalReport& report);
std::string sweep_csv(const EvalReport& report);

// Writes metrics.json, localisation.csv, pr_auc_sweep.csv and plot images.
void write_eval_artifacts(const EvalReport& report, const std::filesystem::path& out_dir);

}  // namespace bppn
