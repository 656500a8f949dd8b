#pragma once

#include <string>
#include <vector>

#include "bppn/data.hpp"
#include "bppn/model.hpp"

namespace bppn {

struct DistanceRecord {
    int image_index = -1;
    int row = 0;
    int col = 0;
    double distance = 0.0;  // min over spatial positions of ||z - p_m||^2
};

/// Per prototype: one record per same-class training image (its best spatial
/// position), sorted ascending by (distance, image index).
struct DistanceTable {
    std::vector<std::vector<DistanceRecord>> per_prototype;
};

struct Assignment {
    int prototype = -1;
    DistanceRecord record;
};

// Feature maps of every image under the current backbone, un-augmented.
std::vector<Tensor> extract_features(const ModelState& model, const Dataset& ds,
                                     int workers = 1);

DistanceTable build_distance_table(const ModelState& model, const Dataset& ds,
                                   int workers = 1);
DistanceTable build_distance_table(const ModelState& model, const Dataset& ds,
                                   const std::vector<Tensor>& features);

// Sequential greedy selection: prototypes in ascending index order, each takes
// its nearest not-yet-used image. Errors out when a class has fewer distinct
// images than prototypes; images are never silently reused.
std::vector<Assignment> greedy_assign(const DistanceTable& table,
                                      const std::vector<int>& image_labels,
                                      const PrototypeSet& ps);

// Ablation variant: unconstrained per-prototype argmin, duplicates allowed.
std::vector<Assignment> nearest_assign(const DistanceTable& table);

// Replaces every prototype with the feature vector at its assigned (image,
// position), copied bitwise, and records provenance. theta_k is untouched.
void push_prototypes(ModelState& model, const Dataset& ds, bool greedy = true,
                     int workers = 1);
// Variant for a frozen backbone, where the caller holds the features.
void push_prototypes(ModelState& model, const Dataset& ds, bool greedy,
                     const std::vector<Tensor>& features);

struct DiversityReport {
    double cosine[2] = {0.0, 0.0};  // per class: mean pairwise 1 - cos
    double l2[2] = {0.0, 0.0};      // per class: mean pairwise euclidean
};
DiversityReport diversity_metrics(const PrototypeSet& ps);

// prototype id, class, image index, row, col, distance
std::string provenance_csv(const ModelState& model);

}  // namespace bppn
