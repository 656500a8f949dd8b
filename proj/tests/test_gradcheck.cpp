#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "bppn/error.hpp"
#include "bppn/gradcheck.hpp"
#include "bppn/gradcheck_suite.hpp"
#include "bppn/rng.hpp"

using namespace bppn;

namespace {

double sq_norm(const Param& p) {
    double acc = 0.0;
    for (float v : p.value.data) acc += static_cast<double>(v) * v;
    return acc;
}

}  // namespace

TEST_CASE("quadratic objective checks out to 1e-4") {
    Rng rng = make_rng(11);
    Param p("p", Tensor({5}));
    for (float& v : p.value.data) v = uniform_float(rng, -2.0f, 2.0f);
    auto eval = [&]() { return sq_norm(p); };
    auto eval_and_grad = [&]() {
        p.value.zero_grad();
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            p.value.grad[i] = 2.0f * p.value.data[i];
        }
        return sq_norm(p);
    };
    const auto r = grad_check(eval, eval_and_grad, {&p}, 1e-3);
    CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("zero step is rejected") {
    Param p("p", Tensor({2}, 1.0f));
    auto eval = [&]() { return 0.0; };
    CHECK_THROWS_AS(grad_check(eval, eval, {&p}, 0.0), ConfigError);
    CHECK_THROWS_AS(grad_check(eval, eval, {&p}, -1e-3), ConfigError);
}

TEST_CASE("non-finite objective is reported") {
    Param p("p", Tensor({1}, 1.0f));
    auto eval = [&]() { return std::numeric_limits<double>::quiet_NaN(); };
    CHECK_THROWS_AS(grad_check(eval, eval, {&p}, 1e-3), NumericError);
}

TEST_CASE("a wrong gradient is not rescued by retries") {
    Rng rng = make_rng(13);
    Param p("p", Tensor({4}));
    for (float& v : p.value.data) v = uniform_float(rng, 0.5f, 2.0f);
    auto eval = [&]() { return sq_norm(p); };
    auto eval_and_grad = [&]() {
        p.value.zero_grad();
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            p.value.grad[i] = 2.0f * p.value.data[i] * 1.05f;  // 5% off
        }
        return sq_norm(p);
    };
    const auto r = grad_check(eval, eval_and_grad, {&p}, 1e-3);
    CHECK(r.max_rel_err > 1e-2);
}

TEST_CASE("kinked objective recovers via retries") {
    // f = sum |x_i|: smooth away from 0; one coordinate starts within the
    // fd window of the kink so the first measurement is contaminated
    Param p("p", Tensor({3}));
    p.value.data = {1.0f, -1.5f, 2e-4f};
    auto eval = [&]() {
        double acc = 0.0;
        for (float v : p.value.data) acc += std::abs(static_cast<double>(v));
        return acc;
    };
    auto eval_and_grad = [&]() {
        p.value.zero_grad();
        double acc = 0.0;
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            acc += std::abs(static_cast<double>(p.value.data[i]));
            p.value.grad[i] =
                p.value.data[i] > 0.0f ? 1.0f : (p.value.data[i] < 0.0f ? -1.0f : 0.0f);
        }
        return acc;
    };
    const auto r = grad_check(eval, eval_and_grad, {&p}, 1e-3);
    CHECK(r.max_rel_err <= 1e-3);
    CHECK(r.retries >= 1);
}

TEST_CASE("registered suite smoke run") {
    const auto checks = run_registered_gradchecks(99, /*trials=*/2);
    CHECK(checks.size() == 8);
    for (const auto& c : checks) {
        INFO(c.name, " -> ", c.max_rel_err);
        CHECK(c.pass);
    }
}
