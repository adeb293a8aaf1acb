#include "doctest.h"

#include <cmath>

#include "lapsynth/errors.hpp"
#include "lapsynth/rng.hpp"
#include "lapsynth/schedule.hpp"

using namespace lapsynth;

namespace {

// Independent long-double evaluation of the cosine schedule.
long double cosine_oracle(int t, int T, long double s) {
    const long double pi = 3.141592653589793238462643383279502884L;
    auto f = [&](int u) {
        const long double c = std::cos((static_cast<long double>(u) / T + s) / (1.0L + s) * pi / 2.0L);
        return c * c;
    };
    return 1e-5L + (1.0L - 1e-5L) * f(t) / f(0);
}

}  // namespace

TEST_CASE("cosine_schedule") {
    const auto s = cosine_schedule(1000);
    REQUIRE(s.alpha_bar.size() == 1001);
    CHECK(s.alpha_bar[0] == 1.0);
    for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[t - 1u]);
    CHECK(s.alpha_bar.back() >= kAlphaBarFloor);
    CHECK(s.alpha_bar.back() > 0.0);
    CHECK(std::abs(s.alpha_bar[500] - static_cast<double>(cosine_oracle(500, 1000, 0.008L))) < 1e-14);
    CHECK(std::abs(s.alpha_bar[137] - static_cast<double>(cosine_oracle(137, 1000, 0.008L))) < 1e-14);
    CHECK_THROWS_AS(cosine_schedule(0), ArgumentError);
    CHECK(cosine_schedule(1).alpha_bar.size() == 2);
}

TEST_CASE("snr") {
    NoiseSchedule s;
    s.T = 3;
    s.alpha_bar = {1.0, 0.8, 0.5, 1.0 - 1e-12};
    CHECK(snr(s, 1) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(snr(s, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(snr(s, 3) == kSnrCap);
    CHECK(snr_from_alpha_bar(1.0) == kSnrCap);
    CHECK_THROWS_AS(snr(s, 0), ArgumentError);
    CHECK_THROWS_AS(snr(s, 4), ArgumentError);

    const auto cos = cosine_schedule(1000);
    for (int t = 2; t <= 1000; ++t) CHECK(snr(cos, t) < snr(cos, t - 1));
}

TEST_CASE("p2_weight") {
    for (double v : {0.0, 0.3, 1.0, 7.0, 1e6}) CHECK(p2_weight(v, {0.0, 1.0}) == 1.0);
    CHECK(p2_weight(1.0, {1.0, 1.0}) == doctest::Approx(0.5));
    CHECK(p2_weight(3.0, {1.0, 1.0}) == doctest::Approx(0.25));
    double prev = p2_weight(0.0, {0.5, 2.0});
    CHECK(prev == doctest::Approx(std::pow(2.0, -0.5)));
    for (double v = 0.1; v < 100.0; v *= 1.7) {
        const double w = p2_weight(v, {0.5, 2.0});
        CHECK(w < prev);
        CHECK(w > 0.0);
        prev = w;
    }
}

TEST_CASE("edm_sigma_grid") {
    const auto g = edm_sigma_grid(10);
    REQUIRE(g.sigmas.size() == 11);
    CHECK(g.sigmas[0] == 80.0);
    CHECK(g.sigmas[9] == 0.002);
    CHECK(g.sigmas[10] == 0.0);
    for (std::size_t i = 1; i < g.sigmas.size(); ++i) CHECK(g.sigmas[i] < g.sigmas[i - 1]);

    // High-precision recomputation of interior points.
    const long double hi = std::pow(80.0L, 1.0L / 7.0L), lo = std::pow(0.002L, 1.0L / 7.0L);
    for (int i = 1; i < 9; ++i) {
        const long double ref = std::pow(hi + (i / 9.0L) * (lo - hi), 7.0L);
        CHECK(std::abs(g.sigmas[static_cast<std::size_t>(i)] - static_cast<double>(ref)) / static_cast<double>(ref) <
              1e-12);
    }

    const auto lin = edm_sigma_grid(5, 1.0, 5.0, 1.0);
    for (int i = 0; i < 5; ++i) CHECK(lin.sigmas[static_cast<std::size_t>(i)] == doctest::Approx(5.0 - i));

    CHECK_THROWS_AS(edm_sigma_grid(1), ArgumentError);
    CHECK_THROWS_AS(edm_sigma_grid(4, 2.0, 1.0), ArgumentError);
    CHECK_THROWS_AS(edm_sigma_grid(4, 0.0, 1.0), ArgumentError);
}

TEST_CASE("edm_precondition") {
    const auto one = edm_precondition(1.0, 1.0);
    CHECK(one.c_skip == doctest::Approx(0.5));
    CHECK(one.c_in == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(one.c_out == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(one.c_noise == doctest::Approx(0.0));

    const auto small = edm_precondition(1e-9, 0.5);
    CHECK(small.c_skip == doctest::Approx(1.0));
    CHECK(small.c_out < 1e-8);

    // sigma = 2, sigma_data = 0.5 evaluated by hand: sigma^2 + sd^2 = 4.25.
    const auto p = edm_precondition(2.0, 0.5);
    CHECK(p.c_skip == doctest::Approx(0.25 / 4.25).epsilon(1e-14));
    CHECK(p.c_out == doctest::Approx(1.0 / std::sqrt(4.25)).epsilon(1e-14));
    CHECK(p.c_in == doctest::Approx(1.0 / std::sqrt(4.25)).epsilon(1e-14));
    CHECK(p.c_noise == doctest::Approx(std::log(2.0) / 4.0).epsilon(1e-14));

    CHECK_THROWS_AS(edm_precondition(0.0, 0.5), ArgumentError);
    CHECK_THROWS_AS(edm_precondition(1.0, -1.0), ArgumentError);
    CHECK(edm_loss_weight(1.0, 1.0) == doctest::Approx(2.0));
}

TEST_CASE("forward_diffuse") {
    Rng rng(4);
    const Eigen::VectorXd x0 = standard_normal(16, rng);
    const Eigen::VectorXd eps = standard_normal(16, rng);
    CHECK(forward_diffuse_vp(x0, eps, 1.0) == x0);
    CHECK((forward_diffuse_vp(x0, eps, 0.0) - eps).norm() == 0.0);
    CHECK(forward_diffuse_ve(x0, eps, 0.0) == x0);
    CHECK_THROWS_AS(forward_diffuse_vp(x0, Eigen::VectorXd::Zero(3), 0.5), ShapeError);

    SUBCASE("linear in x0 and eps") {
        const Eigen::VectorXd y0 = standard_normal(16, rng), e2 = standard_normal(16, rng);
        const double a = 0.37;
        const auto lhs = forward_diffuse_vp(2.0 * x0 + y0, 2.0 * eps + e2, a);
        const Eigen::VectorXd rhs = 2.0 * forward_diffuse_vp(x0, eps, a) + forward_diffuse_vp(y0, e2, a);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("variance preserved for unit-variance data") {
        const auto sched = cosine_schedule(1000);
        for (int t : {1, 250, 500, 999}) {
            constexpr int n = 100000;
            const Eigen::VectorXd xs = standard_normal(n, rng);
            const Eigen::VectorXd es = standard_normal(n, rng);
            const Eigen::VectorXd xt = forward_diffuse(xs, t, es, sched);
            const double mean = xt.mean();
            const double var = (xt.array() - mean).square().sum() / (n - 1);
            // Sampling std of the variance estimator for Gaussian data: sqrt(2/(n-1)).
            CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / (n - 1)));
        }
    }
}
