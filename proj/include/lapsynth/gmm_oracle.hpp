#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lapsynth/model.hpp"
#include "lapsynth/rng.hpp"

namespace lapsynth {

/// Diagonal-covariance Gaussian mixture over flattened image space.
struct GaussianMixture {
    std::vector<double> weights;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::VectorXd> variances;

    Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
    std::size_t components() const noexcept { return weights.size(); }

    /// Throws unless weights are non-negative, sum to 1 within 1e-12, and
    /// every variance is positive.
    void validate() const;

    Eigen::VectorXd mean() const;
    Eigen::VectorXd sample(Rng& rng, std::size_t* component = nullptr) const;

    /// E[x0 | x0 + sigma * eps = x].
    Eigen::VectorXd posterior_mean(const Eigen::VectorXd& x, double sigma) const;
};

/// Closed-form optimal denoiser for per-condition mixtures; conditions are
/// matched exactly against registered vectors.
class GmmOracle : public Denoiser {
public:
    void add(Eigen::VectorXd condition, GaussianMixture mixture);
    const GaussianMixture& mixture_for(const Eigen::VectorXd& condition) const;

    Eigen::Index dim() const override;

    /// Posterior mean estimate of x0 from x_sigma; sigma = 0 returns x.
    Eigen::VectorXd denoise(const Eigen::VectorXd& x, double sigma, const Eigen::VectorXd& condition) const;

    Eigen::VectorXd predict_x0(const Eigen::VectorXd& x, double sigma, const Eigen::VectorXd& cond,
                               const Eigen::VectorXd& aux) const override;

    /// VP adapter: x_t / sqrt(a) is a VE state at sigma = sqrt((1 - a) / a).
    Eigen::VectorXd predict_eps(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule,
                                const Eigen::VectorXd& cond, const Eigen::VectorXd& aux) const override;

private:
    std::vector<std::pair<Eigen::VectorXd, GaussianMixture>> entries_;
};

}  // namespace lapsynth
