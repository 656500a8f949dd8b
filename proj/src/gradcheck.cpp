#include "bppn/gradcheck.hpp"

#include <cmath>
#include <cstdlib>

#include "bppn/error.hpp"
#include "bppn/rng.hpp"

namespace bppn {

namespace {

struct Measurement {
    double numeric = 0.0;
    double dplus = 0.0;
    double dminus = 0.0;
};

Measurement measure(const std::function<double()>& eval, Param& p, std::size_t i,
                    double step, double base) {
    const float saved = p.value.data[i];
    const float xplus = static_cast<float>(saved + step);
    const float xminus = static_cast<float>(saved - step);
    p.value.data[i] = xplus;
    const double fplus = eval();
    p.value.data[i] = xminus;
    const double fminus = eval();
    p.value.data[i] = saved;
    if (!std::isfinite(fplus) || !std::isfinite(fminus)) {
        throw NumericError("grad_check: perturbed objective is non-finite");
    }
    Measurement m;
    // divide by the realised parameter delta so fp32 quantisation of x +- h
    // cancels out of the quotient
    const double h2 = static_cast<double>(xplus) - static_cast<double>(xminus);
    m.numeric = (fplus - fminus) / h2;
    m.dplus = (fplus - base) / (0.5 * h2);
    m.dminus = (base - fminus) / (0.5 * h2);
    return m;
}

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric));
}


}  // namespace

GradCheckResult grad_check(const std::function<double()>& eval,
                           const std::function<double()>& eval_and_grad,
                           std::span<Param* const> params, double step) {
    if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
    constexpr int kMaxRetries = 5;
    Rng jitter_rng = make_rng(0x6b696e6bULL);

    double loss = eval_and_grad();
    if (!std::isfinite(loss)) throw NumericError("grad_check: objective is non-finite");
    double base = eval();

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            double h = step;
            int retries = 0;
            Measurement m = measure(eval, p, i, h, base);
            double rel = rel_err(p.value.grad[i], m.numeric);
            // A perturbation window that straddles a relu/max kink corrupts the
            // difference quotient (one-sided slope disagreement is the usual
            // signature, but symmetric contamination hides it, so a failed
            // tolerance is the trigger). Shrinking the step slides the window
            // off the kink; a genuinely wrong gradient keeps failing at every
            // step. If the point itself sits on a kink, move the point and
            // re-derive.
            while (rel > 1e-3 && retries < kMaxRetries) {
                ++retries;
                if (retries <= 2) {
                    h *= 0.125;
                } else {
                    for (Param* q : params) {
                        for (float& v : q->value.data) {
                            v += uniform_float(jitter_rng, -8.0f, 8.0f) *
                                 static_cast<float>(step);
                        }
                    }
                    h = step;
                    loss = eval_and_grad();
                    if (!std::isfinite(loss)) {
                        throw NumericError("grad_check: objective is non-finite after jitter");
                    }
                    base = eval();
                }
                m = measure(eval, p, i, h, base);
                rel = rel_err(p.value.grad[i], m.numeric);
            }
            result.retries = std::max(result.retries, retries);
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_param = p.name;
                result.worst_coord = i;
            }
        }
    }
    return result;
}

GradCheckResult grad_check(const std::function<double()>& eval,
                           const std::function<double()>& eval_and_grad,
                           std::vector<Param*> params, double step) {
    return grad_check(eval, eval_and_grad, std::span<Param* const>(params), step);
}

}  // namespace bppn
