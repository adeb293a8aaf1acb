#include "lapsynth/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lapsynth/errors.hpp"
#include "lapsynth/keyvalue.hpp"
#include "lapsynth/resize.hpp"

namespace lapsynth {

namespace {

void adam_update(Eigen::Ref<Eigen::MatrixXd> param, Eigen::Ref<Eigen::MatrixXd> m, Eigen::Ref<Eigen::MatrixXd> v,
                 const Eigen::Ref<const Eigen::MatrixXd>& grad, double lr, double bc1, double bc2) {
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.cwiseAbs2();
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kAdamEpsilon);
}

std::size_t bounded(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0) throw ArgumentError("epochs must be >= 0");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning_rate must be >= 0");
    if (!(p_uncond >= 0.0 && p_uncond < 1.0)) throw ArgumentError("p_uncond must lie in [0, 1)");
    if (!(p2.gamma >= 0.0) || !(p2.k > 0.0)) throw ArgumentError("p2 requires gamma >= 0 and k > 0");
    if (checkpoint_every < 0) throw ArgumentError("checkpoint_every must be >= 0");
    if (schedule_steps < 1) throw ArgumentError("schedule_steps must be >= 1");
    if (!(cosine_offset > 0.0)) throw ArgumentError("cosine_offset must be positive");
    if (!(sigma_data > 0.0)) throw ArgumentError("sigma_data must be positive");
    if (!(p_std > 0.0) || !std::isfinite(p_mean)) throw ArgumentError("invalid sigma sampling parameters");
    if (time_dim < 2 || time_dim % 2 != 0) throw ArgumentError("time_dim must be even and >= 2");
    if (cond_dim < 1) throw ArgumentError("cond_dim must be >= 1");
    for (int h : hidden)
        if (h < 1) throw ArgumentError("hidden widths must be positive");
    if (cascade_base_size < 0) throw ArgumentError("cascade_base_size must be >= 0");
    if (!(aux_noise >= 0.0)) throw ArgumentError("aux_noise must be >= 0");
    if (!(sr_sigma_data >= 0.0)) throw ArgumentError("sr_sigma_data must be >= 0");
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::size_t line = 0;
    for (const auto& kv : parse_key_values(text)) {
        const std::string& key = kv.key;
        const std::string& value = kv.value;
        line = kv.line;
        if (key == "parameterization") {
            try {
                cfg.parameterization = parameterization_from_string(value);
            } catch (const Error& e) {
                throw ParseError(line, e.what());
            }
        } else if (key == "epochs") cfg.epochs = parse_number<int>(value, line);
        else if (key == "batch_size") cfg.batch_size = parse_number<int>(value, line);
        else if (key == "learning_rate") cfg.learning_rate = parse_number<double>(value, line);
        else if (key == "p2_gamma") cfg.p2.gamma = parse_number<double>(value, line);
        else if (key == "p2_k") cfg.p2.k = parse_number<double>(value, line);
        else if (key == "p2_weighting") cfg.p2_weighting = parse_bool(value, line);
        else if (key == "p_uncond") cfg.p_uncond = parse_number<double>(value, line);
        else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, line);
        else if (key == "checkpoint_every") cfg.checkpoint_every = parse_number<int>(value, line);
        else if (key == "schedule_steps") cfg.schedule_steps = parse_number<int>(value, line);
        else if (key == "cosine_offset") cfg.cosine_offset = parse_number<double>(value, line);
        else if (key == "sigma_data") cfg.sigma_data = parse_number<double>(value, line);
        else if (key == "p_mean") cfg.p_mean = parse_number<double>(value, line);
        else if (key == "p_std") cfg.p_std = parse_number<double>(value, line);
        else if (key == "time_dim") cfg.time_dim = parse_number<int>(value, line);
        else if (key == "cond_dim") cfg.cond_dim = parse_number<int>(value, line);
        else if (key == "hidden") cfg.hidden = parse_int_list(value, line);
        else if (key == "include_segmented") cfg.include_segmented = parse_bool(value, line);
        else if (key == "cascade_base_size") cfg.cascade_base_size = parse_number<int>(value, line);
        else if (key == "aux_noise") cfg.aux_noise = parse_number<double>(value, line);
        else if (key == "sr_sigma_data") cfg.sr_sigma_data = parse_number<double>(value, line);
        else throw ParseError(line, "unknown key '" + key + "'");
    }
    try {
        cfg.validate();
    } catch (const ArgumentError& e) {
        throw ParseError(line, e.what());
    }
    return cfg;
}

std::string format_train_config(const TrainConfig& cfg) {
    std::ostringstream out;
    std::string hidden;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(cfg.hidden[i]);
    out << "parameterization = " << to_string(cfg.parameterization) << "\n"
        << "epochs = " << cfg.epochs << "\n"
        << "batch_size = " << cfg.batch_size << "\n"
        << "learning_rate = " << format_double(cfg.learning_rate) << "\n"
        << "p2_gamma = " << format_double(cfg.p2.gamma) << "\n"
        << "p2_k = " << format_double(cfg.p2.k) << "\n"
        << "p2_weighting = " << (cfg.p2_weighting ? "true" : "false") << "\n"
        << "p_uncond = " << format_double(cfg.p_uncond) << "\n"
        << "seed = " << cfg.seed << "\n"
        << "checkpoint_every = " << cfg.checkpoint_every << "\n"
        << "schedule_steps = " << cfg.schedule_steps << "\n"
        << "cosine_offset = " << format_double(cfg.cosine_offset) << "\n"
        << "sigma_data = " << format_double(cfg.sigma_data) << "\n"
        << "p_mean = " << format_double(cfg.p_mean) << "\n"
        << "p_std = " << format_double(cfg.p_std) << "\n"
        << "time_dim = " << cfg.time_dim << "\n"
        << "cond_dim = " << cfg.cond_dim << "\n"
        << "hidden = " << hidden << "\n"
        << "include_segmented = " << (cfg.include_segmented ? "true" : "false") << "\n"
        << "cascade_base_size = " << cfg.cascade_base_size << "\n"
        << "aux_noise = " << format_double(cfg.aux_noise) << "\n"
        << "sr_sigma_data = " << format_double(cfg.sr_sigma_data) << "\n";
    return out.str();
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    return parse_train_config(read_text_file(path));
}

AdamState AdamState::zeros_like(const DiffusionModel& model) {
    AdamState s;
    s.m = DenoiserParams::zeros(model.params.shape);
    s.v = DenoiserParams::zeros(model.params.shape);
    s.m_embed = Eigen::MatrixXd::Zero(model.embeddings.rows().rows(), model.embeddings.rows().cols());
    s.v_embed = s.m_embed;
    return s;
}

TrainRngs TrainRngs::from_seed(std::uint64_t seed) {
    return {Rng(derive_seed(seed, "train-dropout")), Rng(derive_seed(seed, "train-noise")),
            Rng(derive_seed(seed, "train-level")), Rng(derive_seed(seed, "train-shuffle"))};
}

TrainState init_train_state(const TrainConfig& cfg, const Vocabulary& vocabulary, int height, int width) {
    cfg.validate();
    if (height < 1 || width < 1) throw ArgumentError("image size must be positive");
    TrainState st;
    DiffusionModel& m = st.model;
    m.parameterization = cfg.parameterization;
    m.image_height = height;
    m.image_width = width;
    m.channels = 3;
    m.schedule_steps = cfg.schedule_steps;
    m.cosine_offset = cfg.cosine_offset;
    m.sigma_data = cfg.sigma_data;
    m.aux_noise = cfg.cascade_base_size > 0 ? cfg.aux_noise : 0.0;
    m.residual = cfg.cascade_base_size > 0;
    DenoiserShape shape;
    shape.image_dim = height * width * 3;
    shape.time_dim = cfg.time_dim;
    shape.cond_dim = cfg.cond_dim;
    shape.aux_dim = cfg.cascade_base_size > 0 ? shape.image_dim : 0;
    shape.hidden = cfg.hidden;
    m.params = DenoiserParams::initialize(shape, derive_seed(cfg.seed, "denoiser-init"));
    m.embeddings = EmbeddingTable::initialize(vocabulary, cfg.cond_dim, derive_seed(cfg.seed, "embedding-init"));
    m.vocabulary_hash = vocabulary.hash();
    st.adam = AdamState::zeros_like(m);
    st.rngs = TrainRngs::from_seed(cfg.seed);
    return st;
}

bool draw_dropout(double p_uncond, Rng& rng) {
    if (!(p_uncond >= 0.0 && p_uncond < 1.0)) throw ArgumentError("p_uncond must lie in [0, 1)");
    return uniform01(rng) < p_uncond;
}

Eigen::VectorXd condition_dropout(const Eigen::VectorXd& condition, const Eigen::VectorXd& null_embedding,
                                  double p_uncond, Rng& rng) {
    return draw_dropout(p_uncond, rng) ? null_embedding : condition;
}

DenoiserBatch make_denoiser_batch(TrainState& state, const TrainBatch& batch, const TrainConfig& cfg,
                                  std::vector<std::vector<int>>* used_tokens) {
    const DiffusionModel& m = state.model;
    const DenoiserShape& s = m.params.shape;
    const auto B = static_cast<Eigen::Index>(batch.size());
    if (B == 0) throw ArgumentError("empty batch");
    if (batch.tokens.size() != batch.size()) throw ShapeError("batch token list length differs");
    if (s.aux_dim > 0 && batch.aux.size() != batch.size()) throw ShapeError("batch needs one aux image per item");

    DenoiserBatch out;
    out.input.x.resize(s.image_dim, B);
    out.input.time.resize(s.time_dim, B);
    out.input.cond.resize(s.cond_dim, B);
    out.input.aux.resize(s.aux_dim, B);
    out.target.resize(s.image_dim, B);
    out.weight.resize(B);
    if (used_tokens) used_tokens->assign(batch.size(), {});

    const NoiseSchedule sched = m.schedule();
    std::normal_distribution<double> log_sigma(cfg.p_mean, cfg.p_std);
    std::uniform_int_distribution<int> step(1, sched.T);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& x0 = batch.x0[static_cast<std::size_t>(b)];
        if (x0.size() != s.image_dim) throw ShapeError("batch image has the wrong size");
        std::vector<int> ids = batch.tokens[static_cast<std::size_t>(b)];
        if (draw_dropout(cfg.p_uncond, state.rngs.dropout)) ids = {m.embeddings.null_id()};
        out.input.cond.col(b) = m.embeddings.encode_ids(ids);
        if (used_tokens) (*used_tokens)[static_cast<std::size_t>(b)] = std::move(ids);

        const Eigen::VectorXd eps = standard_normal(s.image_dim, state.rngs.noise);
        if (s.aux_dim > 0) {
            const auto& aux = batch.aux[static_cast<std::size_t>(b)];
            if (aux.size() != s.aux_dim) throw ShapeError("aux image has the wrong size");
            out.input.aux.col(b) = aux + m.aux_noise * standard_normal(s.aux_dim, state.rngs.noise);
        }

        double snr_value;
        if (m.parameterization == Parameterization::VP) {
            const int t = step(state.rngs.level);
            const double a = sched.alpha_bar[static_cast<std::size_t>(t)];
            out.input.x.col(b) = forward_diffuse_vp(x0, eps, a);
            out.input.time.col(b) = vp_time_features(t, sched.T, s.time_dim);
            out.target.col(b) = eps;
            out.weight[b] = 1.0;
            snr_value = snr_from_alpha_bar(a);
        } else {
            const double sigma = std::exp(log_sigma(state.rngs.level));
            const auto pc = edm_precondition(sigma, m.sigma_data);
            const Eigen::VectorXd x_sigma = x0 + sigma * eps;
            out.input.x.col(b) = pc.c_in * x_sigma;
            out.input.time.col(b) = edm_time_features(sigma, s.time_dim);
            out.target.col(b) = (x0 - pc.c_skip * x_sigma) / pc.c_out;
            out.weight[b] = edm_loss_weight(sigma, m.sigma_data) * pc.c_out * pc.c_out;
            snr_value = std::min(1.0 / (sigma * sigma), kSnrCap);
        }
        if (cfg.p2_weighting) out.weight[b] *= p2_weight(snr_value, cfg.p2);
    }
    return out;
}

double train_step(TrainState& state, const TrainBatch& batch, const TrainConfig& cfg) {
    std::vector<std::vector<int>> tokens;
    const DenoiserBatch db = make_denoiser_batch(state, batch, cfg, &tokens);
    const DenoiserGradient g = denoiser_backward(state.model.params, db);

    Eigen::MatrixXd embed_grad = Eigen::MatrixXd::Zero(state.adam.m_embed.rows(), state.adam.m_embed.cols());
    for (std::size_t b = 0; b < tokens.size(); ++b) {
        const double share = 1.0 / static_cast<double>(tokens[b].size());
        for (int id : tokens[b])
            embed_grad.row(id) += share * g.d_cond.col(static_cast<Eigen::Index>(b)).transpose();
    }

    AdamState& adam = state.adam;
    ++adam.step;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.step));
    auto& p = state.model.params;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        adam_update(p.weights[l], adam.m.weights[l], adam.v.weights[l], g.params.weights[l], cfg.learning_rate, bc1,
                    bc2);
        adam_update(p.biases[l], adam.m.biases[l], adam.v.biases[l], g.params.biases[l], cfg.learning_rate, bc1, bc2);
    }
    adam_update(state.model.embeddings.rows(), adam.m_embed, adam.v_embed, embed_grad, cfg.learning_rate, bc1, bc2);
    return g.loss;
}

TrainingSet prepare_training_set(const LabeledDataset& dataset, const TrainConfig& cfg,
                                 const EmbeddingTable& embeddings) {
    TrainingSet set;
    for (const auto& rec : dataset.records) {
        if (rec.prompt.is_segmented && !cfg.include_segmented) continue;
        const ImageTensor& img = rec.image;
        if (img.channels() != 3) throw ShapeError("training images must have 3 channels");
        if (set.x0.empty()) {
            set.height = img.height();
            set.width = img.width();
        } else if (img.height() != set.height || img.width() != set.width) {
            throw ShapeError("training images differ in size (" + rec.prompt.image_id + ")");
        }
        set.tokens.push_back(embeddings.token_ids(rec.prompt.prompt_text, dataset.vocabulary.null_token));
        if (cfg.cascade_base_size > 0) {
            const int h = cfg.cascade_base_size;
            set.aux.push_back(clean_resize(clean_resize(img, h, h), img.height(), img.width()).flat());
            set.x0.push_back(img.flat() - set.aux.back());
        } else {
            set.x0.push_back(img.flat());
        }
    }
    if (set.x0.empty()) throw ArgumentError("no training records after filtering");
    return set;
}

FitResult fit(const LabeledDataset& dataset, const TrainConfig& cfg, const std::filesystem::path& out_dir,
              const std::function<void(int, double)>& on_epoch) {
    cfg.validate();
    if (dataset.records.empty()) throw ArgumentError("dataset is empty");
    const auto start = std::chrono::steady_clock::now();

    const ImageTensor& first = dataset.records.front().image;
    TrainState st = init_train_state(cfg, dataset.vocabulary, first.height(), first.width());
    const TrainingSet set = prepare_training_set(dataset, cfg, st.model.embeddings);
    if (set.height != first.height() || set.width != first.width())
        st = init_train_state(cfg, dataset.vocabulary, set.height, set.width);
    if (cfg.cascade_base_size > 0) {
        double sigma = cfg.sr_sigma_data;
        if (sigma == 0.0) {
            double sum = 0.0, sq = 0.0, n = 0.0;
            for (const auto& r : set.x0) {
                sum += r.sum();
                sq += r.squaredNorm();
                n += static_cast<double>(r.size());
            }
            sigma = std::max(0.01, std::sqrt(std::max(0.0, sq / n - (sum / n) * (sum / n))));
        }
        st.model.sigma_data = sigma;
    }

    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
        std::ofstream echo(out_dir / "train_config.txt");
        if (!echo) throw IoError("cannot write " + (out_dir / "train_config.txt").string());
        echo << format_train_config(cfg);
    }

    FitResult result;
    std::vector<std::size_t> order(set.x0.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[bounded(st.rngs.shuffle, i + 1)]);
        double total = 0.0;
        for (std::size_t lo = 0; lo < order.size(); lo += bs) {
            TrainBatch batch;
            for (std::size_t j = lo; j < std::min(order.size(), lo + bs); ++j) {
                batch.x0.push_back(set.x0[order[j]]);
                batch.tokens.push_back(set.tokens[order[j]]);
                if (!set.aux.empty()) batch.aux.push_back(set.aux[order[j]]);
            }
            total += train_step(st, batch, cfg) * static_cast<double>(batch.size());
        }
        const double mean = total / static_cast<double>(order.size());
        if (!std::isfinite(mean)) throw NumericError("epoch " + std::to_string(epoch) + " mean loss is not finite");
        result.report.epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof name, "checkpoint_epoch%04d.lsck", epoch);
            save_checkpoint(st.model, out_dir / name);
        }
    }

    if (!out_dir.empty()) {
        result.report.final_checkpoint = out_dir / "model.lsck";
        save_checkpoint(st.model, result.report.final_checkpoint);
        const auto csv_path = out_dir / "loss.csv";
        std::ofstream csv(csv_path);
        if (!csv) throw IoError("cannot write " + csv_path.string());
        csv << "epoch,mean_loss\n";
        for (std::size_t e = 0; e < result.report.epoch_loss.size(); ++e)
            csv << (e + 1) << "," << format_double(result.report.epoch_loss[e]) << "\n";
    }
    result.model = std::move(st.model);
    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace lapsynth
