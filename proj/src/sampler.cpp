#include "lapsynth/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lapsynth/errors.hpp"
#include "lapsynth/keyvalue.hpp"
#include "lapsynth/png_io.hpp"
#include "lapsynth/resize.hpp"

namespace lapsynth {

namespace {

Eigen::VectorXd constrain_x0(const Eigen::VectorXd& x0, const SamplerConfig& cfg) {
    switch (cfg.x0_clip) {
        case X0Clip::None: return x0;
        case X0Clip::Static: return x0.cwiseMax(-1.0).cwiseMin(1.0);
        case X0Clip::Dynamic: return dynamic_threshold(x0, cfg.threshold_percentile);
    }
    return x0;
}

void check_conditioning(const Conditioning& c, double psi) {
    if (psi != 1.0 && c.uncond.size() != c.cond.size())
        throw ShapeError("guidance needs an unconditional vector of the condition's size");
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string clip_name(X0Clip c) {
    switch (c) {
        case X0Clip::None: return "none";
        case X0Clip::Static: return "static";
        case X0Clip::Dynamic: return "dynamic";
    }
    return "dynamic";
}

X0Clip clip_from_string(const std::string& s) {
    if (s == "none") return X0Clip::None;
    if (s == "static") return X0Clip::Static;
    if (s == "dynamic") return X0Clip::Dynamic;
    throw ArgumentError("unknown x0 clip mode '" + s + "'");
}

}  // namespace

std::string to_string(SamplerMethod m) { return m == SamplerMethod::DDPM ? "ddpm" : "edm"; }

SamplerMethod sampler_method_from_string(const std::string& s) {
    if (s == "ddpm" || s == "vp") return SamplerMethod::DDPM;
    if (s == "edm") return SamplerMethod::EDM;
    throw ArgumentError("unknown sampler method '" + s + "'");
}

void SamplerConfig::validate() const {
    if (steps < 1) throw ArgumentError("steps must be >= 1");
    if (method == SamplerMethod::EDM && steps < 2) throw ArgumentError("edm sampling needs steps >= 2");
    if (!(psi >= 0.0) || !std::isfinite(psi)) throw ArgumentError("guidance scale must be >= 0");
    if (!(threshold_percentile > 0.0 && threshold_percentile <= 1.0))
        throw ArgumentError("threshold percentile must lie in (0, 1]");
    if (!(s_churn >= 0.0) || !(s_noise >= 0.0) || !(s_tmin <= s_tmax)) throw ArgumentError("invalid churn settings");
    if (!(sigma_min > 0.0 && sigma_max > sigma_min) || !(rho > 0.0)) throw ArgumentError("invalid sigma grid");
}

SamplerConfig parse_sampler_config(const std::string& text) {
    SamplerConfig cfg;
    std::size_t line = 0;
    for (const auto& kv : parse_key_values(text)) {
        line = kv.line;
        const std::string& v = kv.value;
        try {
            if (kv.key == "method") cfg.method = sampler_method_from_string(v);
            else if (kv.key == "steps") cfg.steps = parse_number<int>(v, line);
            else if (kv.key == "psi") cfg.psi = parse_number<double>(v, line);
            else if (kv.key == "x0_clip") cfg.x0_clip = clip_from_string(v);
            else if (kv.key == "threshold_percentile") cfg.threshold_percentile = parse_number<double>(v, line);
            else if (kv.key == "final_clamp") cfg.final_clamp = parse_bool(v, line);
            else if (kv.key == "s_churn") cfg.s_churn = parse_number<double>(v, line);
            else if (kv.key == "s_tmin") cfg.s_tmin = parse_number<double>(v, line);
            else if (kv.key == "s_tmax") cfg.s_tmax = v == "inf" ? std::numeric_limits<double>::infinity() : parse_number<double>(v, line);
            else if (kv.key == "s_noise") cfg.s_noise = parse_number<double>(v, line);
            else if (kv.key == "sigma_min") cfg.sigma_min = parse_number<double>(v, line);
            else if (kv.key == "sigma_max") cfg.sigma_max = parse_number<double>(v, line);
            else if (kv.key == "rho") cfg.rho = parse_number<double>(v, line);
            else if (kv.key == "seed") cfg.seed = parse_number<std::uint64_t>(v, line);
            else throw ParseError(line, "unknown key '" + kv.key + "'");
        } catch (const ArgumentError& e) {
            throw ParseError(line, e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const ArgumentError& e) {
        throw ParseError(line, e.what());
    }
    return cfg;
}

std::string format_sampler_config(const SamplerConfig& cfg) {
    std::string out;
    auto put = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    put("method", to_string(cfg.method));
    put("steps", std::to_string(cfg.steps));
    put("psi", format_double(cfg.psi));
    put("x0_clip", clip_name(cfg.x0_clip));
    put("threshold_percentile", format_double(cfg.threshold_percentile));
    put("final_clamp", cfg.final_clamp ? "true" : "false");
    put("s_churn", format_double(cfg.s_churn));
    put("s_tmin", format_double(cfg.s_tmin));
    put("s_tmax", std::isinf(cfg.s_tmax) ? "inf" : format_double(cfg.s_tmax));
    put("s_noise", format_double(cfg.s_noise));
    put("sigma_min", format_double(cfg.sigma_min));
    put("sigma_max", format_double(cfg.sigma_max));
    put("rho", format_double(cfg.rho));
    put("seed", std::to_string(cfg.seed));
    return out;
}

Eigen::VectorXd guided_prediction(const Eigen::VectorXd& pred_cond, const Eigen::VectorXd& pred_uncond, double psi) {
    if (pred_cond.size() != pred_uncond.size()) throw ShapeError("guided predictions differ in size");
    if (psi == 1.0) return pred_cond;
    return pred_uncond + psi * (pred_cond - pred_uncond);
}

double abs_percentile(const Eigen::VectorXd& values, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("percentile must lie in (0, 1]");
    if (values.size() == 0) throw ArgumentError("percentile of an empty tensor");
    std::vector<double> a(static_cast<std::size_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i) a[static_cast<std::size_t>(i)] = std::abs(values[i]);
    const double pos = p * static_cast<double>(a.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, a.size() - 1);
    std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(lo), a.end());
    const double v_lo = a[lo];
    if (hi == lo) return v_lo;
    const double v_hi = *std::min_element(a.begin() + static_cast<std::ptrdiff_t>(lo) + 1, a.end());
    return v_lo + (pos - static_cast<double>(lo)) * (v_hi - v_lo);
}

Eigen::VectorXd dynamic_threshold(const Eigen::VectorXd& x0_hat, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("percentile must lie in (0, 1]");
    if (x0_hat.size() == 0) return x0_hat;
    const double s = std::max(1.0, abs_percentile(x0_hat, p));
    if (s == 1.0) return x0_hat.cwiseMax(-1.0).cwiseMin(1.0);
    return x0_hat.cwiseMax(-s).cwiseMin(s) / s;
}

std::vector<int> respaced_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw ArgumentError("need 1 <= steps <= T");
    std::vector<int> out;
    for (int i = steps; i >= 1; --i)
        out.push_back(static_cast<int>(std::llround(static_cast<double>(i) * T / steps)));
    return out;
}

Eigen::VectorXd ddpm_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, const Conditioning& c,
                            const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    check_conditioning(c, cfg.psi);
    const auto taus = respaced_timesteps(schedule.T, cfg.steps);
    const Eigen::Index D = denoiser.dim();
    Eigen::VectorXd x = standard_normal(D, rng);
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const int t = taus[i];
        const int t_prev = i + 1 < taus.size() ? taus[i + 1] : 0;
        const double a = schedule.alpha_bar[static_cast<std::size_t>(t)];
        const double a_prev = schedule.alpha_bar[static_cast<std::size_t>(t_prev)];

        Eigen::VectorXd eps;
        if (cfg.psi == 1.0) eps = denoiser.predict_eps(x, t, schedule, c.cond, c.aux);
        else if (cfg.psi == 0.0) eps = denoiser.predict_eps(x, t, schedule, c.uncond, c.aux);
        else
            eps = guided_prediction(denoiser.predict_eps(x, t, schedule, c.cond, c.aux),
                                    denoiser.predict_eps(x, t, schedule, c.uncond, c.aux), cfg.psi);

        const Eigen::VectorXd x0 = constrain_x0((x - std::sqrt(1.0 - a) * eps) / std::sqrt(a), cfg);
        const double alpha_step = a / a_prev;
        const double beta = 1.0 - alpha_step;
        const double coef_x0 = std::sqrt(a_prev) * beta / (1.0 - a);
        const double coef_xt = std::sqrt(alpha_step) * (1.0 - a_prev) / (1.0 - a);
        x = coef_x0 * x0 + coef_xt * x;
        if (t_prev > 0) {
            const double var = (1.0 - a_prev) / (1.0 - a) * beta;
            x += std::sqrt(var) * standard_normal(D, rng);
        }
        if (!x.allFinite()) throw SamplerError(i + 1, "non-finite state at t = " + std::to_string(t));
    }
    if (cfg.final_clamp) x = x.cwiseMax(-1.0).cwiseMin(1.0);
    return x;
}

Eigen::VectorXd edm_sample(const Denoiser& denoiser, const SigmaGrid& grid, const Conditioning& c,
                           const SamplerConfig& cfg, Rng& rng, const Eigen::VectorXd* initial) {
    cfg.validate();
    check_conditioning(c, cfg.psi);
    const int N = grid.steps();
    if (N < 1 || grid.sigmas.back() != 0.0) throw ArgumentError("sigma grid must end at 0");
    const Eigen::Index D = denoiser.dim();

    auto denoise = [&](const Eigen::VectorXd& x, double sigma) {
        Eigen::VectorXd d;
        if (cfg.psi == 1.0) d = denoiser.predict_x0(x, sigma, c.cond, c.aux);
        else if (cfg.psi == 0.0) d = denoiser.predict_x0(x, sigma, c.uncond, c.aux);
        else
            d = guided_prediction(denoiser.predict_x0(x, sigma, c.cond, c.aux),
                                  denoiser.predict_x0(x, sigma, c.uncond, c.aux), cfg.psi);
        return constrain_x0(d, cfg);
    };

    Eigen::VectorXd x;
    if (initial) {
        if (initial->size() != D) throw ShapeError("initial state has the wrong size");
        x = *initial;
    } else {
        x = grid.sigmas.front() * standard_normal(D, rng);
    }
    const double gamma_max = std::min(cfg.s_churn / N, std::sqrt(2.0) - 1.0);
    for (int i = 0; i < N; ++i) {
        const double sigma = grid.sigmas[static_cast<std::size_t>(i)];
        const double sigma_next = grid.sigmas[static_cast<std::size_t>(i) + 1];
        const double gamma = (sigma >= cfg.s_tmin && sigma <= cfg.s_tmax) ? gamma_max : 0.0;
        const double sigma_hat = sigma * (1.0 + gamma);
        Eigen::VectorXd x_hat = x;
        if (gamma > 0.0)
            x_hat += std::sqrt(sigma_hat * sigma_hat - sigma * sigma) * cfg.s_noise * standard_normal(D, rng);

        const Eigen::VectorXd d = (x_hat - denoise(x_hat, sigma_hat)) / sigma_hat;
        x = x_hat + (sigma_next - sigma_hat) * d;
        if (sigma_next != 0.0) {
            const Eigen::VectorXd d_next = (x - denoise(x, sigma_next)) / sigma_next;
            x = x_hat + (sigma_next - sigma_hat) * 0.5 * (d + d_next);
        }
        if (!x.allFinite()) throw SamplerError(static_cast<std::size_t>(i) + 1, "non-finite state");
    }
    if (cfg.final_clamp) x = x.cwiseMax(-1.0).cwiseMin(1.0);
    return x;
}

Conditioning model_conditioning(const DiffusionModel& model, const std::string& prompt_text,
                                const std::string& null_token) {
    const auto& table = model.embeddings;
    return {table.encode_ids(table.token_ids(prompt_text, null_token)), table.null_embedding(), Eigen::VectorXd()};
}

Eigen::VectorXd sample_vector(const DiffusionModel& model, const Conditioning& c, const SamplerConfig& cfg, Rng& rng) {
    const bool want_edm = cfg.method == SamplerMethod::EDM;
    if (want_edm != (model.parameterization == Parameterization::EDM))
        throw ArgumentError("sampler method " + to_string(cfg.method) + " does not match a " +
                            to_string(model.parameterization) + " model");
    Eigen::VectorXd x =
        want_edm ? edm_sample(model, edm_sigma_grid(cfg.steps, cfg.sigma_min, cfg.sigma_max, cfg.rho), c, cfg, rng)
                 : ddpm_sample(model, model.schedule(), c, cfg, rng);
    return x;
}

ImageTensor sample_image(const DiffusionModel& model, const Conditioning& c, const SamplerConfig& cfg, Rng& rng) {
    if (model.residual) throw ArgumentError("super-resolution stages sample through cascade_sample");
    Eigen::VectorXd x = sample_vector(model, c, cfg, rng).cwiseMax(-1.0).cwiseMin(1.0);
    return ImageTensor(model.image_height, model.image_width, model.channels, std::move(x));
}

ImageTensor cascade_sample(const DiffusionModel& base, const DiffusionModel& sr, const std::string& prompt_text,
                           const SamplerConfig& cfg, Rng& rng) {
    if (sr.image_height != 2 * base.image_height || sr.image_width != 2 * base.image_width)
        throw ShapeError("super-resolution stage must emit twice the base size");
    if (!sr.residual || sr.params.shape.aux_dim != sr.params.shape.image_dim)
        throw ShapeError("second stage is not a super-resolution model");
    if (base.channels != sr.channels) throw ShapeError("stages disagree on channel count");
    const ImageTensor low = sample_image(base, model_conditioning(base, prompt_text), cfg, rng);
    const ImageTensor up = clean_resize(low, sr.image_height, sr.image_width);
    Conditioning c = model_conditioning(sr, prompt_text);
    c.aux = up.flat() + sr.aux_noise * standard_normal(up.flat().size(), rng);
    Eigen::VectorXd x = (up.flat() + sample_vector(sr, c, cfg, rng)).cwiseMax(-1.0).cwiseMin(1.0);
    return ImageTensor(sr.image_height, sr.image_width, sr.channels, std::move(x));
}

std::uint64_t item_seed(std::uint64_t master, const PromptRecord& record) {
    return derive_seed(master, "sample-item", fnv1a64(record.image_id));
}

SampleBatch batch_generate(const DiffusionModel& model, const std::vector<PromptRecord>& prompts,
                           const SamplerConfig& cfg) {
    cfg.validate();
    SampleBatch out;
    out.config = cfg;
    out.model_id = hex64(model.checksum());
    out.config_hash = hex64(fnv1a64(format_sampler_config(cfg)));
    std::vector<std::pair<std::size_t, std::string>> failures;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const std::uint64_t seed = item_seed(cfg.seed, prompts[i]);
        try {
            Rng rng(seed);
            out.images.push_back(sample_image(model, model_conditioning(model, prompts[i].prompt_text), cfg, rng));
            out.prompts.push_back(prompts[i]);
            out.seeds.push_back(seed);
        } catch (const Error& e) {
            failures.emplace_back(i, e.what());
        }
    }
    if (!failures.empty()) throw BatchError(std::move(failures));
    return out;
}

void write_sample_batch(const SampleBatch& batch, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
    const auto manifest = dir / "samples.jsonl";
    std::ofstream out(manifest);
    if (!out) throw IoError("cannot write " + manifest.string());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu.png", i);
        const std::string rel = std::string("images/") + name;
        write_png(dir / rel, batch.images[i]);
        nlohmann::json j;
        j["image_path"] = rel;
        j["image_id"] = batch.prompts[i].image_id;
        j["prompt_text"] = batch.prompts[i].prompt_text;
        j["psi"] = batch.config.psi;
        j["method"] = to_string(batch.config.method);
        j["seed"] = batch.seeds[i];
        j["model_id"] = batch.model_id;
        j["config_hash"] = batch.config_hash;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("failed writing " + manifest.string());
}

}  // namespace lapsynth
