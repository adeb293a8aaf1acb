#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lapsynth/dataio.hpp"
#include "lapsynth/model.hpp"
#include "lapsynth/rng.hpp"
#include "lapsynth/schedule.hpp"

namespace lapsynth {

struct TrainConfig {
    Parameterization parameterization = Parameterization::EDM;
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 1e-3;
    P2Config p2;
    /// When false every sample weight is 1.
    bool p2_weighting = true;
    double p_uncond = 0.1;
    std::uint64_t seed = 0;
    /// Save a checkpoint every this many epochs; 0 keeps only the final one.
    int checkpoint_every = 0;

    int schedule_steps = 1000;
    double cosine_offset = 0.008;
    double sigma_data = kSigmaData;
    double p_mean = -1.2;
    double p_std = 1.2;

    int time_dim = 16;
    int cond_dim = 32;
    std::vector<int> hidden = {256, 256, 256};

    /// Train on segmented pairs as well as triplet prompts.
    bool include_segmented = false;
    /// Non-zero makes this a super-resolution stage conditioned on images
    /// downsampled to this size and upsampled back. The stage models the
    /// residual between the image and that upsampled input.
    int cascade_base_size = 0;
    double aux_noise = 0.1;
    /// sigma_data of a super-resolution stage; 0 estimates it as the residual
    /// pixel std (floored at 0.01).
    double sr_sigma_data = 0.0;

    /// Throws ArgumentError on out-of-range values.
    void validate() const;
};

/// Key-value text: one `key = value` per line, `#` starts a comment.
/// Unknown or repeated keys raise ParseError.
TrainConfig parse_train_config(const std::string& text);
std::string format_train_config(const TrainConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path);

/// First and second moment estimates for the network and embedding table.
struct AdamState {
    DenoiserParams m, v;
    Eigen::MatrixXd m_embed, v_embed;
    long step = 0;

    static AdamState zeros_like(const DiffusionModel& model);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// Independent streams so that changing one consumer never shifts another.
struct TrainRngs {
    Rng dropout, noise, level, shuffle;

    static TrainRngs from_seed(std::uint64_t seed);
};

/// One minibatch: clean images, prompt token ids and optional aux images.
struct TrainBatch {
    std::vector<Eigen::VectorXd> x0;
    std::vector<std::vector<int>> tokens;
    std::vector<Eigen::VectorXd> aux;

    std::size_t size() const noexcept { return x0.size(); }
};

struct TrainState {
    DiffusionModel model;
    AdamState adam;
    TrainRngs rngs;
};

/// Builds an untrained model and optimizer state for images of size h x w.
TrainState init_train_state(const TrainConfig& cfg, const Vocabulary& vocabulary, int height, int width);

/// True with probability p_uncond.
bool draw_dropout(double p_uncond, Rng& rng);

/// Returns `null_embedding` with probability p_uncond, else `condition`.
Eigen::VectorXd condition_dropout(const Eigen::VectorXd& condition, const Eigen::VectorXd& null_embedding,
                                  double p_uncond, Rng& rng);

/// Assembles the regression batch for the configured objective. VP regresses
/// eps with weight p2(SNR_t); EDM regresses the preconditioned network output
/// toward (x0 - c_skip x_sigma) / c_out with weight lambda(sigma) c_out^2 p2.
DenoiserBatch make_denoiser_batch(TrainState& state, const TrainBatch& batch, const TrainConfig& cfg,
                                  std::vector<std::vector<int>>* used_tokens = nullptr);

/// One Adam step on the network and the embedding table; returns the loss.
/// Throws NumericError on a non-finite loss.
double train_step(TrainState& state, const TrainBatch& batch, const TrainConfig& cfg);

struct TrainReport {
    std::vector<double> epoch_loss;
    double wall_seconds = 0.0;
    std::filesystem::path final_checkpoint;
};

struct FitResult {
    DiffusionModel model;
    TrainReport report;
};

/// Flattened training examples taken from a dataset. For super-resolution
/// stages x0 holds residuals and aux the clean upsampled inputs.
struct TrainingSet {
    std::vector<Eigen::VectorXd> x0;
    std::vector<std::vector<int>> tokens;
    std::vector<Eigen::VectorXd> aux;
    int height = 0, width = 0;
};

TrainingSet prepare_training_set(const LabeledDataset& dataset, const TrainConfig& cfg,
                                 const EmbeddingTable& embeddings);

/// Full training run. With a non-empty `out_dir` writes checkpoints, the
/// loss history CSV (epoch,mean_loss) and the config echo there.
FitResult fit(const LabeledDataset& dataset, const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
              const std::function<void(int, double)>& on_epoch = {});

}  // namespace lapsynth
