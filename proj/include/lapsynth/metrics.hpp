#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lapsynth/downstream.hpp"
#include "lapsynth/image.hpp"

namespace lapsynth {

inline constexpr const char* kRandomProjectionExtractor = "seeded-random-projection";
inline constexpr const char* kRecognizerExtractor = "toy-classifier-penultimate";

/// How images are brought to the extractor's input size.
enum class ResizeRoute { Nearest, Clean };

struct EmbeddingSet {
    Eigen::MatrixXd features;
    std::string source;
    std::string extractor_id;

    Eigen::Index size() const noexcept { return features.rows(); }
    Eigen::Index dim() const noexcept { return features.cols(); }
};

class FeatureExtractor {
public:
    /// Linear map of the flattened image onto `dim` N(0, 1/input) directions.
    static FeatureExtractor random_projection(int image_size, int dim, std::uint64_t seed);
    /// Hidden layer of a trained recognizer.
    static FeatureExtractor recognizer(RecognizerParams params);
    /// Looks up an extractor by id; the recognizer id needs `params`.
    static FeatureExtractor by_id(const std::string& id, int image_size, int dim, std::uint64_t seed,
                                  const RecognizerParams* params = nullptr);

    const std::string& id() const noexcept { return id_; }
    int image_height() const noexcept { return height_; }
    int image_width() const noexcept { return width_; }
    Eigen::Index dim() const noexcept;

    Eigen::VectorXd features(const ImageTensor& image, ResizeRoute route = ResizeRoute::Nearest) const;

private:
    std::string id_;
    int height_ = 0;
    int width_ = 0;
    int channels_ = 3;
    Eigen::MatrixXd projection_;
    RecognizerParams params_;
};

EmbeddingSet extract_features(const std::vector<ImageTensor>& images, const FeatureExtractor& extractor,
                              ResizeRoute route = ResizeRoute::Nearest, std::string source = "real");

/// Sample mean and Bessel-corrected covariance of the rows.
void fit_gaussian(const Eigen::MatrixXd& rows, Eigen::VectorXd& mean, Eigen::MatrixXd& cov);

/// d^2 = |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), the trace term from the
/// eigenvalues of S1^(1/2) S2 S1^(1/2).
double frechet_from_moments(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                            const Eigen::MatrixXd& cov2);

double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b);

/// Unbiased MMD^2 with kernel (x.y / D + 1)^3.
double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct KidResult {
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> subsets;
};

/// Mean and population standard deviation over subsets drawn without
/// replacement from each set.
KidResult kid(const EmbeddingSet& a, const EmbeddingSet& b, int n_subsets, int subset_size, std::uint64_t seed);

struct TsneAffinities {
    /// Row-conditional p_{j|i}.
    Eigen::MatrixXd conditional;
    /// Symmetrized joint P summing to one.
    Eigen::MatrixXd joint;
    Eigen::VectorXd beta;
};

/// Per-row precision found by bisection so the row entropy is
/// log2(perplexity) bits. Throws CalibrationError when a row cannot be matched.
TsneAffinities tsne_affinities(const Eigen::MatrixXd& points, double perplexity);

struct TsneConfig {
    double perplexity = 30.0;
    int out_dims = 2;
    int iters = 1000;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
    std::uint64_t seed = 0;
};

/// Exact t-SNE with momentum, gains and early exaggeration.
Eigen::MatrixXd tsne(const Eigen::MatrixXd& points, const TsneConfig& cfg);

/// id,x,y,source
void write_tsne_csv(const Eigen::MatrixXd& coords, const std::vector<std::string>& ids,
                    const std::vector<std::string>& sources, const std::filesystem::path& path);

struct FidelityConfig {
    int image_size = 16;
    int projection_dim = 64;
    int kid_subsets = 10;
    int kid_subset_size = 100;
    std::uint64_t seed = 0;
};

struct FidelityReport {
    double frechet = 0.0;
    double frechet_clean = 0.0;
    double frechet_alt = 0.0;
    double kid_mean = 0.0;
    double kid_std = 0.0;
    int n_real = 0;
    int n_synthetic = 0;
    FidelityConfig config;
    std::uint64_t recognizer_checksum = 0;
};

/// Fréchet on random-projection features after nearest resizing, the same
/// after clean resizing, Fréchet on recognizer features, and KID on the
/// random-projection features.
FidelityReport fidelity_report(const std::vector<ImageTensor>& real, const std::vector<ImageTensor>& synthetic,
                               const FidelityConfig& cfg, const RecognizerParams& recognizer);

std::string fidelity_report_json(const FidelityReport& report);

}  // namespace lapsynth
