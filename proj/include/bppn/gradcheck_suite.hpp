#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bppn {

struct NamedCheck {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-3;
    bool pass = false;
};

/// The registered gradient checks: every loss term and the combined objective
/// on a toy model (8x8 inputs, D=4, M=4), central differences with step 1e-3,
/// `trials` random points each. The distillation term treats the teacher as a
/// constant, so checks that cover teacher-side parameters freeze the teacher
/// probabilities at the evaluation point.
std::vector<NamedCheck> run_registered_gradchecks(std::uint64_t seed, int trials = 20);

}  // namespace bppn
