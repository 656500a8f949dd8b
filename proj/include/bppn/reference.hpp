#pragma once

#include "bppn/losses.hpp"
#include "bppn/model.hpp"

// Double-precision forward-only evaluation of the objective, written as
// direct loops with no code shared with the fp32 kernels. The
// finite-difference harness perturbs fp32 parameters and evaluates through
// this path, so the difference quotient is not drowned by single-precision
// rounding of intermediate activations.

namespace bppn::ref {

// Same composition semantics as objective_forward, including the
// frozen-teacher contract for the distillation term.
double objective(const Batch& batch, const ModelState& model, const HyperParams& hp,
                 const ObjectiveFlags& flags);

double cluster_term(const Batch& batch, const ModelState& model);
double separation_term(const Batch& batch, const ModelState& model);

}  // namespace bppn::ref
