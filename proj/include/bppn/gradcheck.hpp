#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bppn/tensor.hpp"

namespace bppn {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_coord = 0;
    int retries = 0;  // kink-avoidance rounds consumed
};

/// Central finite-difference verification of reverse-mode gradients.
///
/// `eval` runs the forward pass and returns the scalar objective;
/// `eval_and_grad` additionally zeroes and refills every param's grad buffer.
/// Per coordinate the relative error is |analytic - numeric| / max(1e-8, |numeric|).
/// If a coordinate sits on a relu/max kink (the two one-sided slopes disagree)
/// the whole point is jittered and the check retried, up to 5 times.
GradCheckResult grad_check(const std::function<double()>& eval,
                           const std::function<double()>& eval_and_grad,
                           std::span<Param* const> params, double step);

GradCheckResult grad_check(const std::function<double()>& eval,
                           const std::function<double()>& eval_and_grad,
                           std::vector<Param*> params, double step);

}  // namespace bppn
