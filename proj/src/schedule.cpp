#include "lapsynth/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lapsynth/errors.hpp"

namespace lapsynth {

double NoiseSchedule::sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar.at(static_cast<std::size_t>(t))); }

double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const {
    return std::sqrt(1.0 - alpha_bar.at(static_cast<std::size_t>(t)));
}

double NoiseSchedule::ve_sigma(int t) const {
    const double a = alpha_bar.at(static_cast<std::size_t>(t));
    return std::sqrt((1.0 - a) / a);
}

NoiseSchedule cosine_schedule(int T, double s) {
    if (T < 1) throw ArgumentError("schedule needs T >= 1");
    if (!(s >= 0.0)) throw ArgumentError("cosine offset must be non-negative");
    auto f = [&](int t) {
        const double c = std::cos((static_cast<double>(t) / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule out;
    out.T = T;
    out.cosine_offset = s;
    out.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
    const double f0 = f(0);
    for (int t = 0; t <= T; ++t)
        out.alpha_bar[static_cast<std::size_t>(t)] = kAlphaBarFloor + (1.0 - kAlphaBarFloor) * (f(t) / f0);
    out.alpha_bar[0] = 1.0;
    return out;
}

double snr_from_alpha_bar(double alpha_bar) {
    if (!(alpha_bar > 0.0) || alpha_bar > 1.0) throw ArgumentError("alpha_bar must lie in (0, 1]");
    if (alpha_bar >= 1.0) return kSnrCap;
    return std::min(kSnrCap, alpha_bar / (1.0 - alpha_bar));
}

double snr(const NoiseSchedule& schedule, int t) {
    if (t <= 0 || t > schedule.T) throw ArgumentError("timestep out of range: " + std::to_string(t));
    return snr_from_alpha_bar(schedule.alpha_bar[static_cast<std::size_t>(t)]);
}

double p2_weight(double snr_value, const P2Config& cfg) {
    if (!(snr_value >= 0.0)) throw ArgumentError("SNR must be non-negative");
    if (!(cfg.gamma >= 0.0) || !(cfg.k > 0.0)) throw ArgumentError("P2 needs gamma >= 0 and k > 0");
    return std::pow(cfg.k + snr_value, -cfg.gamma);
}

SigmaGrid edm_sigma_grid(int N, double sigma_min, double sigma_max, double rho) {
    if (N < 2) throw ArgumentError("sigma grid needs N >= 2");
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min)) throw ArgumentError("need 0 < sigma_min < sigma_max");
    if (!(rho > 0.0)) throw ArgumentError("rho must be positive");
    SigmaGrid g;
    g.sigma_min = sigma_min;
    g.sigma_max = sigma_max;
    g.rho = rho;
    g.sigmas.resize(static_cast<std::size_t>(N) + 1);
    const double hi = std::pow(sigma_max, 1.0 / rho);
    const double lo = std::pow(sigma_min, 1.0 / rho);
    for (int i = 0; i < N; ++i)
        g.sigmas[static_cast<std::size_t>(i)] = std::pow(hi + (static_cast<double>(i) / (N - 1)) * (lo - hi), rho);
    g.sigmas.front() = sigma_max;
    g.sigmas[static_cast<std::size_t>(N) - 1] = sigma_min;
    g.sigmas.back() = 0.0;
    return g;
}

EdmPrecondition edm_precondition(double sigma, double sigma_data) {
    if (!(sigma > 0.0) || !(sigma_data > 0.0)) throw ArgumentError("sigma and sigma_data must be positive");
    const double s2 = sigma * sigma;
    const double d2 = sigma_data * sigma_data;
    const double root = std::sqrt(s2 + d2);
    return {d2 / (s2 + d2), sigma * sigma_data / root, 1.0 / root, std::log(sigma) / 4.0};
}

double edm_loss_weight(double sigma, double sigma_data) {
    if (!(sigma > 0.0) || !(sigma_data > 0.0)) throw ArgumentError("sigma and sigma_data must be positive");
    const double sd = sigma * sigma_data;
    return (sigma * sigma + sigma_data * sigma_data) / (sd * sd);
}

Eigen::VectorXd forward_diffuse_vp(const Eigen::VectorXd& x0, const Eigen::VectorXd& eps, double alpha_bar) {
    if (x0.size() != eps.size()) throw ShapeError("noise and image sizes differ");
    if (!(alpha_bar >= 0.0) || alpha_bar > 1.0) throw ArgumentError("alpha_bar must lie in [0, 1]");
    return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * eps;
}

Eigen::VectorXd forward_diffuse(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                                const NoiseSchedule& schedule) {
    if (t < 0 || t > schedule.T) throw ArgumentError("timestep out of range: " + std::to_string(t));
    return forward_diffuse_vp(x0, eps, schedule.alpha_bar[static_cast<std::size_t>(t)]);
}

Eigen::VectorXd forward_diffuse_ve(const Eigen::VectorXd& x0, const Eigen::VectorXd& eps, double sigma) {
    if (x0.size() != eps.size()) throw ShapeError("noise and image sizes differ");
    if (!(sigma >= 0.0)) throw ArgumentError("sigma must be non-negative");
    return x0 + sigma * eps;
}

}  // namespace lapsynth
