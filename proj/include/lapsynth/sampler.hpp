#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lapsynth/dataio.hpp"
#include "lapsynth/image.hpp"
#include "lapsynth/model.hpp"
#include "lapsynth/rng.hpp"
#include "lapsynth/schedule.hpp"

namespace lapsynth {

enum class SamplerMethod { DDPM, EDM };

std::string to_string(SamplerMethod m);
SamplerMethod sampler_method_from_string(const std::string& s);

/// How the per-step clean-image estimate is constrained.
enum class X0Clip { None, Static, Dynamic };

struct SamplerConfig {
    SamplerMethod method = SamplerMethod::EDM;
    int steps = 32;
    double psi = 3.0;
    X0Clip x0_clip = X0Clip::Dynamic;
    double threshold_percentile = 0.995;
    /// Clamp the trajectory end to [-1, 1].
    bool final_clamp = true;

    double s_churn = 0.0;
    double s_tmin = 0.0;
    double s_tmax = std::numeric_limits<double>::infinity();
    double s_noise = 1.0;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;

    std::uint64_t seed = 0;

    void validate() const;
};

/// Key-value text in the same format as the training config.
SamplerConfig parse_sampler_config(const std::string& text);
std::string format_sampler_config(const SamplerConfig& cfg);

/// Condition vectors handed to the denoiser. `uncond` is only queried when
/// psi != 1; `aux` is the cascade input (empty for base models).
struct Conditioning {
    Eigen::VectorXd cond;
    Eigen::VectorXd uncond;
    Eigen::VectorXd aux;
};

/// uncond + psi * (cond - uncond); psi = 1 returns cond exactly.
Eigen::VectorXd guided_prediction(const Eigen::VectorXd& pred_cond, const Eigen::VectorXd& pred_uncond, double psi);

/// Linear-interpolated percentile of |values|, p in (0, 1].
double abs_percentile(const Eigen::VectorXd& values, double p);

/// s = max(1, percentile_p |x|); clamp to [-s, s] and divide by s.
Eigen::VectorXd dynamic_threshold(const Eigen::VectorXd& x0_hat, double p);

/// Evenly spaced timesteps T = tau_N > ... > tau_1 >= 1 used by respaced
/// ancestral sampling.
std::vector<int> respaced_timesteps(int T, int steps);

/// Ancestral VP sampling from x_T ~ N(0, I) over respaced steps.
Eigen::VectorXd ddpm_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, const Conditioning& c,
                            const SamplerConfig& cfg, Rng& rng);

/// Heun sampler with optional churn over `grid`. When `initial` is given it
/// replaces the sigma_max * N(0, I) start.
Eigen::VectorXd edm_sample(const Denoiser& denoiser, const SigmaGrid& grid, const Conditioning& c,
                           const SamplerConfig& cfg, Rng& rng, const Eigen::VectorXd* initial = nullptr);

/// Conditioning for a trained model: prompt tokens vs the null row.
Conditioning model_conditioning(const DiffusionModel& model, const std::string& prompt_text,
                                const std::string& null_token = "null");

/// Raw sampler output of a trained model (residual for SR stages).
Eigen::VectorXd sample_vector(const DiffusionModel& model, const Conditioning& c, const SamplerConfig& cfg, Rng& rng);

/// One image from a trained base model with the configured method.
ImageTensor sample_image(const DiffusionModel& model, const Conditioning& c, const SamplerConfig& cfg, Rng& rng);

/// Base sample at h, clean_resize to 2h, then the SR stage conditioned on the
/// upsampled image plus aux_noise Gaussian augmentation; the SR residual is
/// added to the upsampled image.
/// Both stages encode `prompt_text` with their own embedding tables.
ImageTensor cascade_sample(const DiffusionModel& base, const DiffusionModel& sr, const std::string& prompt_text,
                           const SamplerConfig& cfg, Rng& rng);

struct SampleBatch {
    std::vector<ImageTensor> images;
    std::vector<PromptRecord> prompts;
    std::vector<std::uint64_t> seeds;
    std::string model_id;
    std::string config_hash;
    SamplerConfig config;

    std::size_t size() const noexcept { return images.size(); }
};

/// Per-item seed from the master seed and the record's image id, so a
/// permutation of the prompts permutes the outputs.
std::uint64_t item_seed(std::uint64_t master, const PromptRecord& record);

/// One image per prompt. Failures are collected and raised as BatchError.
SampleBatch batch_generate(const DiffusionModel& model, const std::vector<PromptRecord>& prompts,
                           const SamplerConfig& cfg);

/// PNG files under images/ plus samples.jsonl (image path, prompt_text, psi,
/// method, seed).
void write_sample_batch(const SampleBatch& batch, const std::filesystem::path& dir);

}  // namespace lapsynth
