#include "lapsynth/gmm_oracle.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "lapsynth/errors.hpp"

namespace lapsynth {

void GaussianMixture::validate() const {
    if (weights.empty()) throw ArgumentError("mixture has no components");
    if (means.size() != weights.size() || variances.size() != weights.size())
        throw ShapeError("mixture component lists differ in length");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ArgumentError("mixture weights must be non-negative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ArgumentError("mixture weights must sum to 1");
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (means[k].size() != dim() || variances[k].size() != dim()) throw ShapeError("component dimension mismatch");
        if (!(variances[k].array() > 0.0).all()) throw ArgumentError("variances must be positive");
    }
}

Eigen::VectorXd GaussianMixture::mean() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
    for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k];
    return m;
}

Eigen::VectorXd GaussianMixture::sample(Rng& rng, std::size_t* component) const {
    double u = uniform01(rng);
    std::size_t k = 0;
    while (k + 1 < weights.size() && u >= weights[k]) u -= weights[k++];
    if (component) *component = k;
    return means[k] + (variances[k].array().sqrt() * standard_normal(dim(), rng).array()).matrix();
}

Eigen::VectorXd GaussianMixture::posterior_mean(const Eigen::VectorXd& x, double sigma) const {
    if (x.size() != dim()) throw ShapeError("state dimension does not match mixture");
    if (!(sigma >= 0.0)) throw ArgumentError("sigma must be non-negative");
    if (sigma == 0.0) return x;
    const double s2 = sigma * sigma;
    const std::size_t K = weights.size();
    std::vector<double> logp(K, -std::numeric_limits<double>::infinity());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
        if (weights[k] <= 0.0) continue;
        const Eigen::ArrayXd var = variances[k].array() + s2;
        const Eigen::ArrayXd diff = x.array() - means[k].array();
        logp[k] = std::log(weights[k]) - 0.5 * ((diff.square() / var).sum() + var.log().sum());
        best = std::max(best, logp[k]);
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
    double norm = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        if (!std::isfinite(logp[k])) continue;
        const double r = std::exp(logp[k] - best);
        const Eigen::ArrayXd gain = variances[k].array() / (variances[k].array() + s2);
        out += r * (means[k].array() + gain * (x.array() - means[k].array())).matrix();
        norm += r;
    }
    return out / norm;
}

void GmmOracle::add(Eigen::VectorXd condition, GaussianMixture mixture) {
    mixture.validate();
    if (!entries_.empty() && mixture.dim() != entries_.front().second.dim())
        throw ShapeError("all mixtures must share one dimension");
    for (auto& [c, m] : entries_)
        if (c.size() == condition.size() && c == condition) {
            m = std::move(mixture);
            return;
        }
    entries_.emplace_back(std::move(condition), std::move(mixture));
}

const GaussianMixture& GmmOracle::mixture_for(const Eigen::VectorXd& condition) const {
    for (const auto& [c, m] : entries_)
        if (c.size() == condition.size() && c == condition) return m;
    throw ArgumentError("no mixture registered for this condition");
}

Eigen::Index GmmOracle::dim() const { return entries_.empty() ? 0 : entries_.front().second.dim(); }

Eigen::VectorXd GmmOracle::denoise(const Eigen::VectorXd& x, double sigma, const Eigen::VectorXd& condition) const {
    return mixture_for(condition).posterior_mean(x, sigma);
}

Eigen::VectorXd GmmOracle::predict_x0(const Eigen::VectorXd& x, double sigma, const Eigen::VectorXd& cond,
                                      const Eigen::VectorXd&) const {
    return denoise(x, sigma, cond);
}

Eigen::VectorXd GmmOracle::predict_eps(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule,
                                       const Eigen::VectorXd& cond, const Eigen::VectorXd&) const {
    const double a = schedule.alpha_bar.at(static_cast<std::size_t>(t));
    if (a >= 1.0) throw ArgumentError("noise prediction undefined at t = 0");
    const double root_a = std::sqrt(a);
    const Eigen::VectorXd x0 = denoise(x_t / root_a, std::sqrt((1.0 - a) / a), cond);
    return (x_t - root_a * x0) / std::sqrt(1.0 - a);
}

}  // namespace lapsynth
