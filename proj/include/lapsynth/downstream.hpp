#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lapsynth/dataio.hpp"
#include "lapsynth/image.hpp"

namespace lapsynth {

/// Images flattened to rows with multi-hot triplet-class labels.
struct RecognitionSet {
    Eigen::MatrixXd x;
    Eigen::MatrixXd y;
    std::vector<std::string> groups;
    /// Triplet-map ids in column order.
    std::vector<int> class_ids;
    int image_height = 0;
    int image_width = 0;
    int channels = 3;

    Eigen::Index size() const noexcept { return x.rows(); }
    Eigen::Index n_classes() const noexcept { return y.cols(); }
};

/// Multi-hot labels: column k is set when any triplet of the record equals
/// the k-th entry of `classes`. All images must share one shape.
RecognitionSet make_recognition_set(const std::vector<LabeledRecord>& records, const TripletMap& classes);

/// Rows of `set` selected by `rows`, in that order.
RecognitionSet subset_rows(const RecognitionSet& set, const std::vector<Eigen::Index>& rows);

/// Concatenates two sets with matching shape and classes.
RecognitionSet concat_sets(const RecognitionSet& a, const RecognitionSet& b);

struct RecognizerConfig {
    int hidden = 32;
    int epochs = 50;
    /// Minibatch size; 0 trains on the full set each step. A tail shorter than
    /// half a batch joins the last full batch.
    int batch_size = 32;
    double learning_rate = 1e-2;

    void validate() const;
};

/// One tanh hidden layer followed by per-class logits.
struct RecognizerParams {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;
    int image_height = 0;
    int image_width = 0;
    int channels = 3;
    std::vector<int> class_ids;

    Eigen::Index input_dim() const noexcept { return w1.cols(); }
    Eigen::Index hidden_dim() const noexcept { return w1.rows(); }
    Eigen::Index n_classes() const noexcept { return w2.rows(); }

    /// Hidden activations for rows of x.
    Eigen::MatrixXd hidden(const Eigen::MatrixXd& x) const;
    /// Per-class logits for rows of x.
    Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;

    std::uint64_t checksum() const;
};

RecognizerParams init_recognizer(Eigen::Index input_dim, Eigen::Index n_classes, int hidden, std::uint64_t seed);

/// Mean binary cross-entropy over rows and classes.
double recognizer_loss(const RecognizerParams& params, const RecognitionSet& set);

/// Minibatch Adam on per-class binary cross-entropy with a seeded uniform
/// shuffle every epoch. `epoch_loss`, when given, receives the full-set loss
/// after each epoch.
RecognizerParams train_recognizer(const RecognitionSet& set, const RecognizerConfig& cfg, std::uint64_t seed,
                                  std::vector<double>* epoch_loss = nullptr);

void save_recognizer(const RecognizerParams& params, const std::filesystem::path& path);
RecognizerParams load_recognizer(const std::filesystem::path& path);

/// AP = sum_n (R_n - R_{n-1}) P_n over the descending score ranking; ties
/// keep the original order. Empty when there are no positives.
std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

/// Mean over defined class APs. Throws when none is defined.
double rap(const std::vector<std::optional<double>>& per_class_ap);

struct APReport {
    std::vector<std::optional<double>> per_class_ap;
    double rap = 0.0;
};

APReport evaluate_recognizer(const RecognizerParams& params, const RecognitionSet& set);

/// Leakage-free fold index per row: sorted distinct groups are dealt to folds
/// round-robin.
std::vector<int> group_folds(const std::vector<std::string>& groups, int folds);

struct MixSpec {
    /// Triplet-map ids that receive synthetic items.
    std::vector<int> target_classes{0, 1, 2};
    /// Synthetic share of each targeted class, in [0, 1).
    std::vector<double> proportions{0.0, 0.05};
    int folds = 5;
    int seeds = 3;
    std::uint64_t seed = 0;
    RecognizerConfig recognizer;

    void validate() const;
};

struct MixRun {
    int fold = 0;
    int seed_index = 0;
    double proportion = 0.0;
    double baseline_rap = 0.0;
    double rap = 0.0;
    double delta_rap = 0.0;
    int n_synthetic = 0;
};

struct MixCell {
    double proportion = 0.0;
    double mean_delta_rap = 0.0;
    double median_delta_rap = 0.0;
    /// Median over seeds of the fold-averaged delta.
    double seed_median_delta_rap = 0.0;
    double min_delta_rap = 0.0;
    double max_delta_rap = 0.0;
    int n_runs = 0;
};

struct MixReport {
    std::vector<MixCell> cells;
    std::vector<MixRun> runs;
    /// Synthetic items whose pixels equal a real item.
    int duplicate_count = 0;
};

/// For every (fold, seed) trains on the real training folds with and without
/// synthetic items and scores RAP on the held-out fold. A targeted class with
/// n real training positives receives round(p / (1 - p) * n) synthetic items
/// carrying that class.
MixReport mix_experiment(const std::vector<LabeledRecord>& real, const std::vector<LabeledRecord>& synthetic,
                         const TripletMap& classes, const MixSpec& spec);

std::string mix_report_json(const MixReport& report, const MixSpec& spec);
/// proportion,mean_delta_rap,min,max,n_runs
std::string mix_report_csv(const MixReport& report);

}  // namespace lapsynth
