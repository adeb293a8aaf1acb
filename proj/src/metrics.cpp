#include "lapsynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "lapsynth/errors.hpp"
#include "lapsynth/resize.hpp"
#include "lapsynth/rng.hpp"

namespace lapsynth {

namespace {

constexpr double kClampTolerance = 1e-10;

// Eigen-decomposition of a symmetric PSD matrix with small negative
// eigenvalues clamped to zero.
Eigen::VectorXd psd_eigenvalues(const Eigen::MatrixXd& m, Eigen::MatrixXd* vectors, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                      vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError(std::string("eigen-decomposition failed for ") + what);
    Eigen::VectorXd vals = es.eigenvalues();
    const double tol = kClampTolerance * std::max(std::abs(m.trace()), std::numeric_limits<double>::min());
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals[i] < -tol) throw NumericError(std::string("negative eigenvalue beyond tolerance in ") + what);
        vals[i] = std::max(vals[i], 0.0);
    }
    if (vectors) *vectors = es.eigenvectors();
    return vals;
}

Eigen::MatrixXd draw_rows(const Eigen::MatrixXd& m, int count, Rng& rng) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(m.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Eigen::MatrixXd out(count, m.cols());
    for (int k = 0; k < count; ++k) {
        const auto j = static_cast<std::size_t>(k) + static_cast<std::size_t>(rng() % (idx.size() - static_cast<std::size_t>(k)));
        std::swap(idx[static_cast<std::size_t>(k)], idx[j]);
        out.row(k) = m.row(idx[static_cast<std::size_t>(k)]);
    }
    return out;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
    const Eigen::VectorXd sq = x.rowwise().squaredNorm();
    Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + sq;
    d.rowwise() += sq.transpose();
    d = d.cwiseMax(0.0);
    d.diagonal().setZero();
    return d;
}

}  // namespace

// -- extractors ------------------------------------------------------------

FeatureExtractor FeatureExtractor::random_projection(int image_size, int dim, std::uint64_t seed) {
    if (image_size <= 0 || dim <= 0) throw ArgumentError("projection sizes must be positive");
    FeatureExtractor e;
    e.id_ = kRandomProjectionExtractor;
    e.height_ = e.width_ = image_size;
    const auto in = static_cast<Eigen::Index>(image_size) * image_size * e.channels_;
    Rng rng(derive_seed(seed, "random-projection"));
    std::normal_distribution<double> n01(0.0, 1.0);
    e.projection_ = Eigen::MatrixXd::NullaryExpr(dim, in, [&] { return n01(rng); }) / std::sqrt(static_cast<double>(in));
    return e;
}

FeatureExtractor FeatureExtractor::recognizer(RecognizerParams params) {
    if (params.w1.size() == 0) throw ArgumentError("recognizer extractor needs trained parameters");
    FeatureExtractor e;
    e.id_ = kRecognizerExtractor;
    e.height_ = params.image_height;
    e.width_ = params.image_width;
    e.channels_ = params.channels;
    e.params_ = std::move(params);
    return e;
}

FeatureExtractor FeatureExtractor::by_id(const std::string& id, int image_size, int dim, std::uint64_t seed,
                                         const RecognizerParams* params) {
    if (id == kRandomProjectionExtractor) return random_projection(image_size, dim, seed);
    if (id == kRecognizerExtractor) {
        if (!params) throw ArgumentError("extractor '" + id + "' needs recognizer parameters");
        return recognizer(*params);
    }
    throw ArgumentError("unknown extractor id '" + id + "'");
}

Eigen::Index FeatureExtractor::dim() const noexcept {
    return id_ == kRecognizerExtractor ? params_.hidden_dim() : projection_.rows();
}

Eigen::VectorXd FeatureExtractor::features(const ImageTensor& image, ResizeRoute route) const {
    if (image.channels() != channels_) throw ShapeError("extractor expects " + std::to_string(channels_) + " channels");
    const bool same = image.height() == height_ && image.width() == width_;
    const ImageTensor resized = same ? image
                                     : (route == ResizeRoute::Clean ? clean_resize(image, height_, width_)
                                                                    : nearest_resize(image, height_, width_));
    if (!resized.flat().allFinite()) throw NumericError("non-finite image values");
    if (id_ == kRecognizerExtractor) return params_.hidden(resized.flat().transpose()).row(0).transpose();
    return projection_ * resized.flat();
}

EmbeddingSet extract_features(const std::vector<ImageTensor>& images, const FeatureExtractor& extractor, ResizeRoute route,
                              std::string source) {
    EmbeddingSet set;
    set.source = std::move(source);
    set.extractor_id = extractor.id();
    set.features.resize(static_cast<Eigen::Index>(images.size()), extractor.dim());
    for (std::size_t i = 0; i < images.size(); ++i)
        set.features.row(static_cast<Eigen::Index>(i)) = extractor.features(images[i], route).transpose();
    return set;
}

// -- Fréchet ---------------------------------------------------------------

void fit_gaussian(const Eigen::MatrixXd& rows, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
    if (rows.rows() < 2) throw ArgumentError("at least two rows are needed to fit a Gaussian");
    mean = rows.colwise().mean().transpose();
    const Eigen::MatrixXd centered = rows.rowwise() - mean.transpose();
    cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
    if (!cov.allFinite()) throw NumericError("non-finite covariance");
}

double frechet_from_moments(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                            const Eigen::MatrixXd& cov2) {
    const auto d = mu1.size();
    if (mu2.size() != d || cov1.rows() != d || cov1.cols() != d || cov2.rows() != d || cov2.cols() != d)
        throw ShapeError("Gaussian moments differ in dimension");
    if (!cov1.allFinite() || !cov2.allFinite() || !mu1.allFinite() || !mu2.allFinite())
        throw NumericError("non-finite Gaussian moments");
    Eigen::MatrixXd v;
    const Eigen::VectorXd l1 = psd_eigenvalues(cov1, &v, "the first covariance");
    const Eigen::MatrixXd root1 = v * l1.cwiseSqrt().asDiagonal() * v.transpose();
    const Eigen::VectorXd lm = psd_eigenvalues(root1 * cov2 * root1, nullptr, "the covariance product");
    const double dist = (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * lm.cwiseSqrt().sum();
    return std::max(dist, 0.0);
}

double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.dim() != b.dim()) throw ShapeError("embedding sets differ in dimension");
    Eigen::VectorXd m1, m2;
    Eigen::MatrixXd c1, c2;
    fit_gaussian(a.features, m1, c1);
    fit_gaussian(b.features, m2, c2);
    return frechet_from_moments(m1, c1, m2, c2);
}

// -- KID -------------------------------------------------------------------

double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.cols() != y.cols()) throw ShapeError("kernel inputs differ in dimension");
    if (x.rows() < 2 || y.rows() < 2) throw ArgumentError("unbiased MMD needs at least two rows per side");
    const double inv_d = 1.0 / static_cast<double>(x.cols());
    auto kernel = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        return ((a * b.transpose()) * inv_d).array().unaryExpr([](double v) { return (v + 1.0) * (v + 1.0) * (v + 1.0); }).matrix().eval();
    };
    const Eigen::MatrixXd kxx = kernel(x, x), kyy = kernel(y, y), kxy = kernel(x, y);
    const auto m = static_cast<double>(x.rows()), n = static_cast<double>(y.rows());
    return (kxx.sum() - kxx.trace()) / (m * (m - 1.0)) + (kyy.sum() - kyy.trace()) / (n * (n - 1.0)) -
           2.0 * kxy.sum() / (m * n);
}

KidResult kid(const EmbeddingSet& a, const EmbeddingSet& b, int n_subsets, int subset_size, std::uint64_t seed) {
    if (subset_size < 2) throw ArgumentError("KID subset size must be at least 2");
    if (n_subsets < 1) throw ArgumentError("KID needs at least one subset");
    if (a.dim() != b.dim()) throw ShapeError("embedding sets differ in dimension");
    if (a.size() < subset_size || b.size() < subset_size) throw ArgumentError("embedding set smaller than the KID subset size");
    if (!a.features.allFinite() || !b.features.allFinite()) throw NumericError("non-finite embeddings");
    KidResult r;
    Rng rng(derive_seed(seed, "kid-subsets"));
    for (int s = 0; s < n_subsets; ++s) {
        const Eigen::MatrixXd x = draw_rows(a.features, subset_size, rng);
        const Eigen::MatrixXd y = draw_rows(b.features, subset_size, rng);
        r.subsets.push_back(mmd2_unbiased(x, y));
    }
    r.mean = std::accumulate(r.subsets.begin(), r.subsets.end(), 0.0) / n_subsets;
    double ss = 0.0;
    for (double v : r.subsets) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / n_subsets);
    return r;
}

// -- t-SNE -----------------------------------------------------------------

TsneAffinities tsne_affinities(const Eigen::MatrixXd& points, double perplexity) {
    const auto n = points.rows();
    if (!(perplexity > 0.0)) throw ArgumentError("perplexity must be positive");
    if (static_cast<double>(n) <= 3.0 * perplexity) throw ArgumentError("t-SNE needs more than 3 * perplexity points");
    if (!points.allFinite()) throw NumericError("non-finite t-SNE input");
    const Eigen::MatrixXd d = squared_distances(points);
    const double target = std::log(perplexity);

    TsneAffinities out;
    out.conditional = Eigen::MatrixXd::Zero(n, n);
    out.beta = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd row(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double dmin = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) dmin = std::min(dmin, d(i, j));
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double entropy = 0.0;
        for (int it = 0; it < 400; ++it) {
            double z = 0.0, weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double shifted = d(i, j) - dmin;
                row[j] = j == i ? 0.0 : std::exp(-beta * shifted);
                z += row[j];
                weighted += row[j] * shifted;
            }
            entropy = std::log(z) + beta * weighted / z;
            row /= z;
            const double err = entropy - target;
            if (std::abs(err) < 1e-12 || (!std::isinf(hi) && hi - lo <= 1e-15 * hi)) break;
            if (err > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        if (std::abs(entropy - target) > 1e-7)
            throw CalibrationError("perplexity calibration failed for row " + std::to_string(i));
        out.conditional.row(i) = row.transpose();
        out.beta[i] = beta;
    }
    out.joint = (out.conditional + out.conditional.transpose()) / (2.0 * static_cast<double>(n));
    return out;
}

Eigen::MatrixXd tsne(const Eigen::MatrixXd& points, const TsneConfig& cfg) {
    if (cfg.out_dims < 1) throw ArgumentError("t-SNE output dimension must be positive");
    if (cfg.iters < 0) throw ArgumentError("t-SNE iteration count must be non-negative");
    const auto aff = tsne_affinities(points, cfg.perplexity);
    const Eigen::MatrixXd p = aff.joint.cwiseMax(1e-12);
    const auto n = points.rows();

    Rng rng(derive_seed(cfg.seed, "tsne-init"));
    std::normal_distribution<double> init(0.0, 1e-4);
    Eigen::MatrixXd y = Eigen::MatrixXd::NullaryExpr(n, cfg.out_dims, [&] { return init(rng); });
    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, cfg.out_dims);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, cfg.out_dims);

    for (int it = 0; it < cfg.iters; ++it) {
        const double exaggeration = it < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
        const double momentum = it < cfg.exaggeration_iters ? 0.5 : 0.8;
        Eigen::MatrixXd num = (1.0 + squared_distances(y).array()).inverse().matrix();
        num.diagonal().setZero();
        const double z = num.sum();
        const Eigen::MatrixXd pq = ((exaggeration * p).array() - num.array() / z).cwiseProduct(num.array()).matrix();
        const Eigen::MatrixXd grad = 4.0 * (pq.rowwise().sum().asDiagonal() * y - pq * y);
        for (Eigen::Index k = 0; k < grad.size(); ++k) {
            double& g = gains.data()[k];
            g = (grad.data()[k] > 0) != (update.data()[k] > 0) ? g + 0.2 : g * 0.8;
            g = std::max(g, 0.01);
        }
        update = momentum * update - cfg.learning_rate * gains.cwiseProduct(grad);
        y += update;
        y.rowwise() -= y.colwise().mean();
        if (!y.allFinite()) throw NumericError("t-SNE diverged at iteration " + std::to_string(it));
    }
    return y;
}

void write_tsne_csv(const Eigen::MatrixXd& coords, const std::vector<std::string>& ids,
                    const std::vector<std::string>& sources, const std::filesystem::path& path) {
    if (coords.cols() < 2) throw ShapeError("t-SNE CSV needs two coordinates per row");
    if (static_cast<Eigen::Index>(ids.size()) != coords.rows() || sources.size() != ids.size())
        throw ShapeError("ids and sources must match the coordinate rows");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "id,x,y,source\n";
    char buf[96];
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g", coords(i, 0), coords(i, 1));
        out << ids[static_cast<std::size_t>(i)] << ',' << buf << ',' << sources[static_cast<std::size_t>(i)] << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

// -- report ----------------------------------------------------------------

FidelityReport fidelity_report(const std::vector<ImageTensor>& real, const std::vector<ImageTensor>& synthetic,
                               const FidelityConfig& cfg, const RecognizerParams& recognizer) {
    const auto need = static_cast<std::size_t>(std::max(2, cfg.kid_subset_size));
    if (real.size() < need || synthetic.size() < need)
        throw ArgumentError("image pools must hold at least " + std::to_string(need) + " images");
    const auto projection = FeatureExtractor::random_projection(cfg.image_size, cfg.projection_dim, cfg.seed);
    const auto alt = FeatureExtractor::recognizer(recognizer);

    FidelityReport r;
    r.config = cfg;
    r.n_real = static_cast<int>(real.size());
    r.n_synthetic = static_cast<int>(synthetic.size());
    r.recognizer_checksum = recognizer.checksum();

    const auto plain_real = extract_features(real, projection, ResizeRoute::Nearest, "real");
    const auto plain_synth = extract_features(synthetic, projection, ResizeRoute::Nearest, "synthetic");
    r.frechet = frechet_distance(plain_real, plain_synth);
    r.frechet_clean = frechet_distance(extract_features(real, projection, ResizeRoute::Clean, "real"),
                                       extract_features(synthetic, projection, ResizeRoute::Clean, "synthetic"));
    r.frechet_alt = frechet_distance(extract_features(real, alt, ResizeRoute::Clean, "real"),
                                     extract_features(synthetic, alt, ResizeRoute::Clean, "synthetic"));
    const auto k = kid(plain_real, plain_synth, cfg.kid_subsets, cfg.kid_subset_size, cfg.seed);
    r.kid_mean = k.mean;
    r.kid_std = k.std;
    return r;
}

std::string fidelity_report_json(const FidelityReport& r) {
    nlohmann::json j;
    j["frechet"] = r.frechet;
    j["frechet_clean"] = r.frechet_clean;
    j["frechet_alt"] = r.frechet_alt;
    j["kid_mean"] = r.kid_mean;
    j["kid_std"] = r.kid_std;
    j["labels"] = {{"frechet", std::string("Fréchet (extractor=") + kRandomProjectionExtractor + ", resize=nearest)"},
                   {"frechet_clean", std::string("Fréchet (extractor=") + kRandomProjectionExtractor + ", resize=clean)"},
                   {"frechet_alt", std::string("Fréchet (extractor=") + kRecognizerExtractor + ", resize=clean)"},
                   {"kid", std::string("KID (extractor=") + kRandomProjectionExtractor + ", resize=nearest)"}};
    char checksum[24];
    std::snprintf(checksum, sizeof checksum, "%016llx", static_cast<unsigned long long>(r.recognizer_checksum));
    j["config"] = {{"image_size", r.config.image_size},
                   {"projection_dim", r.config.projection_dim},
                   {"kid_subsets", r.config.kid_subsets},
                   {"kid_subset_size", r.config.kid_subset_size},
                   {"seed", r.config.seed},
                   {"n_real", r.n_real},
                   {"n_synthetic", r.n_synthetic},
                   {"recognizer_checksum", checksum}};
    return j.dump(2) + "\n";
}

}  // namespace lapsynth
