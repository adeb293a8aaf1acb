#pragma once

#include <vector>

#include <Eigen/Core>

namespace lapsynth {

inline constexpr double kAlphaBarFloor = 1e-5;
inline constexpr double kSnrCap = 1e8;

/// Discrete variance-preserving schedule; alpha_bar has T + 1 entries with
/// alpha_bar[0] = 1.
struct NoiseSchedule {
    int T = 0;
    double cosine_offset = 0.008;
    std::vector<double> alpha_bar;

    double sqrt_alpha_bar(int t) const;
    double sqrt_one_minus_alpha_bar(int t) const;
    /// Equivalent variance-exploding noise level sqrt((1 - a) / a).
    double ve_sigma(int t) const;
};

/// Cosine schedule cos^2(((t/T + s) / (1 + s)) * pi/2), normalized so
/// alpha_bar[0] = 1 and mapped affinely onto [kAlphaBarFloor, 1], which keeps
/// the sequence strictly decreasing down to the floor.
NoiseSchedule cosine_schedule(int T, double s = 0.008);

/// alpha_bar / (1 - alpha_bar), capped at kSnrCap.
double snr_from_alpha_bar(double alpha_bar);

/// SNR at step t, 0 < t <= T.
double snr(const NoiseSchedule& schedule, int t);

struct P2Config {
    double gamma = 1.0;
    double k = 1.0;
};

/// Perception-prioritized loss multiplier 1 / (k + snr)^gamma.
double p2_weight(double snr_value, const P2Config& cfg);

struct SigmaGrid {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    /// N + 1 entries: N descending noise levels followed by a terminal 0.
    std::vector<double> sigmas;

    int steps() const noexcept { return static_cast<int>(sigmas.size()) - 1; }
};

SigmaGrid edm_sigma_grid(int N, double sigma_min = 0.002, double sigma_max = 80.0, double rho = 7.0);

inline constexpr double kSigmaData = 0.5;

struct EdmPrecondition {
    double c_skip;
    double c_out;
    double c_in;
    double c_noise;
};

EdmPrecondition edm_precondition(double sigma, double sigma_data = kSigmaData);

/// EDM loss weight (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2.
double edm_loss_weight(double sigma, double sigma_data = kSigmaData);

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps
Eigen::VectorXd forward_diffuse_vp(const Eigen::VectorXd& x0, const Eigen::VectorXd& eps, double alpha_bar);
Eigen::VectorXd forward_diffuse(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                                const NoiseSchedule& schedule);
/// x0 + sigma * eps
Eigen::VectorXd forward_diffuse_ve(const Eigen::VectorXd& x0, const Eigen::VectorXd& eps, double sigma);

}  // namespace lapsynth
