#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lapsynth/schedule.hpp"
#include "lapsynth/vocabulary.hpp"

namespace lapsynth {

enum class Parameterization { VP, EDM };

std::string to_string(Parameterization p);
Parameterization parameterization_from_string(const std::string& s);

/// Layer widths of the denoiser. The network input is the flattened noisy
/// image, the timestep embedding, the condition vector and an optional
/// auxiliary image (the upsampled base output of a cascade stage).
struct DenoiserShape {
    int image_dim = 0;
    int time_dim = 16;
    int cond_dim = 32;
    int aux_dim = 0;
    std::vector<int> hidden = {256, 256, 256};

    int input_dim() const noexcept { return image_dim + time_dim + cond_dim + aux_dim; }
    friend bool operator==(const DenoiserShape&, const DenoiserShape&) = default;
};

/// Fully connected softplus network; the last layer is linear.
struct DenoiserParams {
    DenoiserShape shape;
    std::vector<Eigen::MatrixXd> weights;  // out x in
    std::vector<Eigen::VectorXd> biases;

    /// He fan-in initialization, seeded; biases start at zero.
    static DenoiserParams initialize(const DenoiserShape& shape, std::uint64_t seed);
    static DenoiserParams zeros(const DenoiserShape& shape);

    std::size_t parameter_count() const;
    bool all_finite() const;

    DenoiserParams& operator+=(const DenoiserParams& other);
    DenoiserParams& operator*=(double s);
};

/// Column-batched network inputs. Each matrix has one column per sample.
struct DenoiserInput {
    Eigen::MatrixXd x;
    Eigen::MatrixXd time;
    Eigen::MatrixXd cond;
    Eigen::MatrixXd aux;

    Eigen::Index batch() const noexcept { return x.cols(); }
};

Eigen::VectorXd timestep_embedding(double value, int dim);

/// Raw network output F for every column of `input`.
Eigen::MatrixXd denoiser_forward(const DenoiserParams& params, const DenoiserInput& input);

struct LossConfig {
    /// Global multiplier applied on top of the per-sample weights.
    double scale = 1.0;
};

/// Regression batch: minimize mean_b w_b * mean_d (F_b - target_b)^2.
struct DenoiserBatch {
    DenoiserInput input;
    Eigen::MatrixXd target;
    Eigen::VectorXd weight;
};

struct DenoiserGradient {
    double loss = 0.0;
    DenoiserParams params;
    /// d loss / d condition input, cond_dim x batch.
    Eigen::MatrixXd d_cond;
};

/// Exact gradient of the weighted regression loss. Throws NumericError when
/// the loss is not finite.
DenoiserGradient denoiser_backward(const DenoiserParams& params, const DenoiserBatch& batch,
                                   const LossConfig& loss_cfg = {});

double denoiser_loss(const DenoiserParams& params, const DenoiserBatch& batch, const LossConfig& loss_cfg = {});

/// Anything the samplers can query for a clean-image estimate.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual Eigen::Index dim() const = 0;

    /// Noise prediction for a variance-preserving state x_t at step t.
    virtual Eigen::VectorXd predict_eps(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule,
                                        const Eigen::VectorXd& cond, const Eigen::VectorXd& aux) const;

    /// Clean-image estimate D(x; sigma) for a variance-exploding state.
    virtual Eigen::VectorXd predict_x0(const Eigen::VectorXd& x, double sigma, const Eigen::VectorXd& cond,
                                       const Eigen::VectorXd& aux) const;
};

/// Trained network plus its conditioning table and geometry.
struct DiffusionModel : Denoiser {
    Parameterization parameterization = Parameterization::VP;
    DenoiserParams params;
    EmbeddingTable embeddings;
    std::uint64_t vocabulary_hash = 0;
    int image_height = 16;
    int image_width = 16;
    int channels = 3;
    int schedule_steps = 1000;
    double cosine_offset = 0.008;
    double sigma_data = kSigmaData;
    /// Std of the Gaussian noise added to the auxiliary image (cascade stages).
    double aux_noise = 0.0;
    /// Super-resolution stages model x0 minus the clean upsampled input.
    bool residual = false;

    Eigen::Index dim() const override { return params.shape.image_dim; }
    NoiseSchedule schedule() const { return cosine_schedule(schedule_steps, cosine_offset); }

    Eigen::VectorXd predict_eps(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule,
                                const Eigen::VectorXd& cond, const Eigen::VectorXd& aux) const override;
    Eigen::VectorXd predict_x0(const Eigen::VectorXd& x, double sigma, const Eigen::VectorXd& cond,
                               const Eigen::VectorXd& aux) const override;

    /// Checksum over the serialized checkpoint bytes.
    std::uint64_t checksum() const;
};

/// Network time input for a VP step t of a T-step schedule.
Eigen::VectorXd vp_time_features(int t, int T, int dim);
/// Network time input for the EDM noise level c_noise = ln(sigma) / 4.
Eigen::VectorXd edm_time_features(double sigma, int dim);

// -- checkpoints -------------------------------------------------------------
//
// Layout: "LSCK" | u32 version | u32 header length | JSON header |
// little-endian float32 payload (per layer W row-major then b, then the
// embedding rows) | u64 FNV-1a checksum of everything before it.

std::string serialize_checkpoint(const DiffusionModel& model);
DiffusionModel deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const DiffusionModel& model, const std::filesystem::path& path);
DiffusionModel load_checkpoint(const std::filesystem::path& path);

}  // namespace lapsynth
