#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lapsynth/gmm_oracle.hpp"
#include "lapsynth/model.hpp"
#include "lapsynth/rng.hpp"

// Independent reference computations shared by the unit tests and the
// acceptance run.
namespace oracle {

using namespace lapsynth;

using LMat = std::vector<std::vector<long double>>;

// Cyclic Jacobi eigenvalues of a symmetric matrix.
inline std::vector<long double> jacobi_eigenvalues(LMat a) {
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        long double off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-36L) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0) continue;
                const long double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                const long double t = (theta >= 0 ? 1 : -1) / (std::fabs(theta) + std::sqrt(theta * theta + 1));
                const long double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const long double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const long double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
    }
    std::vector<long double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(a[i][i]);
    return out;
}

// Fréchet distance via Cholesky S1 = L L^T: the eigenvalues of L^T S2 L are
// those of S1 S2.
inline long double frechet_oracle(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) {
    auto moments = [](const Eigen::MatrixXd& x, std::vector<long double>& mu, LMat& cov) {
        const std::size_t n = static_cast<std::size_t>(x.rows()), d = static_cast<std::size_t>(x.cols());
        mu.assign(d, 0);
        cov.assign(d, std::vector<long double>(d, 0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < d; ++k) mu[k] += x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        for (auto& m : mu) m /= static_cast<long double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b)
                    cov[a][b] += (x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) - mu[a]) *
                                 (x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) - mu[b]);
        for (auto& row : cov)
            for (auto& v : row) v /= static_cast<long double>(n - 1);
    };
    std::vector<long double> m1, m2;
    LMat c1, c2;
    moments(x1, m1, c1);
    moments(x2, m2, c2);
    const std::size_t d = m1.size();
    LMat l(d, std::vector<long double>(d, 0));
    for (std::size_t j = 0; j < d; ++j) {
        long double s = c1[j][j];
        for (std::size_t k = 0; k < j; ++k) s -= l[j][k] * l[j][k];
        l[j][j] = std::sqrt(s);
        for (std::size_t i = j + 1; i < d; ++i) {
            long double t = c1[i][j];
            for (std::size_t k = 0; k < j; ++k) t -= l[i][k] * l[j][k];
            l[i][j] = t / l[j][j];
        }
    }
    LMat m(d, std::vector<long double>(d, 0));
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) m[a][b] += l[i][a] * c2[i][j] * l[j][b];
    long double result = 0;
    for (std::size_t k = 0; k < d; ++k) result += (m1[k] - m2[k]) * (m1[k] - m2[k]) + c1[k][k] + c2[k][k];
    for (long double ev : jacobi_eigenvalues(m)) result -= 2 * std::sqrt(std::max(ev, 0.0L));
    return result;
}

inline Eigen::MatrixXd gaussian_rows(int n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& mix, Rng& rng) {
    Eigen::MatrixXd z(n, mean.size());
    for (int i = 0; i < n; ++i) z.row(i) = (mix * standard_normal(mean.size(), rng) + mean).transpose();
    return z;
}

inline double silhouette(const Eigen::MatrixXd& y, const std::vector<int>& labels) {
    const auto n = y.rows();
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double same = 0, other = 0;
        int n_same = 0, n_other = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d = (y.row(i) - y.row(j)).norm();
            if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
                same += d;
                ++n_same;
            } else {
                other += d;
                ++n_other;
            }
        }
        const double a = same / n_same, b = other / n_other;
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Mean over dimensions of the 1-Wasserstein distance between the empirical
// marginal and the true mixture marginal, by integrating |F_n - F|.
inline double marginal_w1(const GaussianMixture& mix, const std::vector<Eigen::VectorXd>& xs) {
    double total = 0.0;
    for (Eigen::Index d = 0; d < mix.dim(); ++d) {
        std::vector<double> v;
        for (const auto& x : xs) v.push_back(x[d]);
        std::sort(v.begin(), v.end());
        const double lo = std::min(v.front(), -10.0), hi = std::max(v.back(), 10.0), h = 1e-3;
        std::size_t below = 0;
        double w1 = 0.0;
        for (double t = lo; t < hi; t += h) {
            while (below < v.size() && v[below] <= t) ++below;
            double F = 0.0;
            for (std::size_t k = 0; k < mix.components(); ++k)
                F += mix.weights[k] * normal_cdf((t - mix.means[k][d]) / std::sqrt(mix.variances[k][d]));
            w1 += std::abs(static_cast<double>(below) / v.size() - F) * h;
        }
        total += w1;
    }
    return total / static_cast<double>(mix.dim());
}

// Central finite differences over one scalar parameter.
template <class Set>
inline double central_difference(DenoiserParams p, const DenoiserBatch& batch, double h, Set set) {
    set(p, h);
    const double up = denoiser_loss(p, batch);
    set(p, -2.0 * h);
    const double down = denoiser_loss(p, batch);
    return (up - down) / (2.0 * h);
}

inline double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
    const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double a = analytic.data()[i], n = numeric.data()[i];
        const double denom = std::max({std::abs(a), std::abs(n), 1e-4 * scale, 1e-12});
        worst = std::max(worst, std::abs(a - n) / denom);
    }
    return worst;
}

/// Per-component (max |mean error|, covariance Frobenius error) after
/// assigning each sample to its most likely component.
inline std::vector<std::pair<double, double>> component_moment_errors(const GaussianMixture& mix,
                                                                     const std::vector<Eigen::VectorXd>& xs,
                                                                     std::vector<double>* counts = nullptr) {
    const std::size_t K = mix.components();
    std::vector<Eigen::VectorXd> sum(K, Eigen::VectorXd::Zero(mix.dim()));
    std::vector<Eigen::MatrixXd> outer(K, Eigen::MatrixXd::Zero(mix.dim(), mix.dim()));
    std::vector<double> n(K, 0.0);
    for (const auto& x : xs) {
        std::size_t best = 0;
        double best_lp = -1e300;
        for (std::size_t k = 0; k < K; ++k) {
            const Eigen::ArrayXd d = x.array() - mix.means[k].array();
            const double lp = std::log(mix.weights[k]) -
                              0.5 * ((d.square() / mix.variances[k].array()).sum() + mix.variances[k].array().log().sum());
            if (lp > best_lp) best_lp = lp, best = k;
        }
        sum[best] += x;
        outer[best] += x * x.transpose();
        n[best] += 1;
    }
    std::vector<std::pair<double, double>> out;
    for (std::size_t k = 0; k < K; ++k) {
        if (n[k] < 2) {
            out.emplace_back(HUGE_VAL, HUGE_VAL);
            continue;
        }
        const Eigen::VectorXd mean = sum[k] / n[k];
        const Eigen::MatrixXd cov = (outer[k] - n[k] * mean * mean.transpose()) / (n[k] - 1);
        const Eigen::MatrixXd truth = mix.variances[k].asDiagonal();
        out.emplace_back((mean - mix.means[k]).cwiseAbs().maxCoeff(), (cov - truth).norm());
    }
    if (counts) *counts = n;
    return out;
}

}  // namespace oracle
