#include "lapsynth/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "lapsynth/errors.hpp"
#include "lapsynth/rng.hpp"

namespace lapsynth {
namespace {

// softplus(x) = log(1 + e^x), evaluated without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<int> layer_widths(const DenoiserShape& s) {
    std::vector<int> w{s.input_dim()};
    w.insert(w.end(), s.hidden.begin(), s.hidden.end());
    w.push_back(s.image_dim);
    return w;
}

void check_shape(const DenoiserShape& s) {
    if (s.image_dim <= 0 || s.time_dim < 0 || s.cond_dim < 0 || s.aux_dim < 0)
        throw ShapeError("invalid denoiser shape");
    for (int h : s.hidden)
        if (h <= 0) throw ShapeError("hidden widths must be positive");
}

Eigen::MatrixXd stack_input(const DenoiserParams& p, const DenoiserInput& in) {
    const auto& s = p.shape;
    const Eigen::Index B = in.x.cols();
    auto check = [&](const Eigen::MatrixXd& m, int rows, const char* what) {
        if (rows == 0 && m.size() == 0) return;
        if (m.rows() != rows || m.cols() != B)
            throw ShapeError(std::string(what) + " block has shape " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                             std::to_string(B));
    };
    check(in.x, s.image_dim, "image");
    check(in.time, s.time_dim, "time");
    check(in.cond, s.cond_dim, "condition");
    check(in.aux, s.aux_dim, "auxiliary");
    Eigen::MatrixXd z(s.input_dim(), B);
    Eigen::Index row = 0;
    z.middleRows(row, s.image_dim) = in.x;
    row += s.image_dim;
    if (s.time_dim) z.middleRows(row, s.time_dim) = in.time;
    row += s.time_dim;
    if (s.cond_dim) z.middleRows(row, s.cond_dim) = in.cond;
    row += s.cond_dim;
    if (s.aux_dim) z.middleRows(row, s.aux_dim) = in.aux;
    return z;
}

struct ForwardCache {
    std::vector<Eigen::MatrixXd> activations;  // inputs of each layer
    std::vector<Eigen::MatrixXd> pre;          // pre-activations of each layer
    Eigen::MatrixXd output;
};

ForwardCache forward_cached(const DenoiserParams& p, const DenoiserInput& in) {
    if (p.weights.size() != p.biases.size() || p.weights.empty()) throw ShapeError("malformed parameter chain");
    ForwardCache c;
    c.activations.push_back(stack_input(p, in));
    const std::size_t L = p.weights.size();
    for (std::size_t l = 0; l < L; ++l) {
        const auto& W = p.weights[l];
        if (W.cols() != c.activations.back().rows()) throw ShapeError("layer shape chain is inconsistent");
        Eigen::MatrixXd a = W * c.activations.back();
        a.colwise() += p.biases[l];
        if (l + 1 == L) {
            c.output = std::move(a);
        } else {
            Eigen::MatrixXd h = a.unaryExpr([](double v) { return softplus(v); });
            c.pre.push_back(std::move(a));
            c.activations.push_back(std::move(h));
        }
    }
    return c;
}

Eigen::VectorXd sample_weights(const DenoiserBatch& batch) {
    const Eigen::Index B = batch.input.batch();
    if (batch.weight.size() == 0) return Eigen::VectorXd::Ones(B);
    if (batch.weight.size() != B) throw ShapeError("weight count does not match batch");
    return batch.weight;
}

// Little-endian helpers.
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw IoError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
};

constexpr std::uint32_t kCheckpointVersion = 1;

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::string to_string(Parameterization p) { return p == Parameterization::VP ? "vp" : "edm"; }

Parameterization parameterization_from_string(const std::string& s) {
    if (s == "vp" || s == "ddpm") return Parameterization::VP;
    if (s == "edm") return Parameterization::EDM;
    throw ArgumentError("unknown parameterization: " + s);
}

DenoiserParams DenoiserParams::zeros(const DenoiserShape& shape) {
    check_shape(shape);
    DenoiserParams p;
    p.shape = shape;
    const auto w = layer_widths(shape);
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        p.weights.push_back(Eigen::MatrixXd::Zero(w[l + 1], w[l]));
        p.biases.push_back(Eigen::VectorXd::Zero(w[l + 1]));
    }
    return p;
}

DenoiserParams DenoiserParams::initialize(const DenoiserShape& shape, std::uint64_t seed) {
    auto p = zeros(shape);
    Rng rng(derive_seed(seed, "denoiser-init"));
    for (auto& W : p.weights) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(W.cols())));
        for (Eigen::Index j = 0; j < W.cols(); ++j)
            for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = dist(rng);
    }
    return p;
}

std::size_t DenoiserParams::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
}

bool DenoiserParams::all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l)
        if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
}

DenoiserParams& DenoiserParams::operator+=(const DenoiserParams& other) {
    if (weights.size() != other.weights.size()) throw ShapeError("parameter chains differ");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += other.weights[l];
        biases[l] += other.biases[l];
    }
    return *this;
}

DenoiserParams& DenoiserParams::operator*=(double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] *= s;
        biases[l] *= s;
    }
    return *this;
}

Eigen::VectorXd timestep_embedding(double value, int dim) {
    if (dim < 0 || dim % 2 != 0) throw ArgumentError("time embedding dimension must be even");
    const int half = dim / 2;
    Eigen::VectorXd e(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
        e[i] = std::sin(value * freq);
        e[half + i] = std::cos(value * freq);
    }
    return e;
}

Eigen::VectorXd vp_time_features(int t, int T, int dim) { return timestep_embedding(1000.0 * t / T, dim); }

Eigen::VectorXd edm_time_features(double sigma, int dim) {
    return timestep_embedding(1000.0 * edm_precondition(sigma).c_noise, dim);
}

Eigen::MatrixXd denoiser_forward(const DenoiserParams& params, const DenoiserInput& input) {
    if (!params.all_finite()) throw NumericError("non-finite weights");
    return forward_cached(params, input).output;
}

double denoiser_loss(const DenoiserParams& params, const DenoiserBatch& batch, const LossConfig& loss_cfg) {
    const auto out = forward_cached(params, batch.input).output;
    if (batch.target.rows() != out.rows() || batch.target.cols() != out.cols())
        throw ShapeError("target shape does not match output");
    const auto w = sample_weights(batch);
    const double D = static_cast<double>(out.rows());
    const double B = static_cast<double>(out.cols());
    const Eigen::VectorXd per = (out - batch.target).colwise().squaredNorm().transpose() / D;
    return loss_cfg.scale * w.dot(per) / B;
}

DenoiserGradient denoiser_backward(const DenoiserParams& params, const DenoiserBatch& batch,
                                   const LossConfig& loss_cfg) {
    if (batch.input.batch() == 0) throw ArgumentError("empty batch");
    auto cache = forward_cached(params, batch.input);
    const auto& out = cache.output;
    if (batch.target.rows() != out.rows() || batch.target.cols() != out.cols())
        throw ShapeError("target shape does not match output");
    const auto w = sample_weights(batch);
    const double D = static_cast<double>(out.rows());
    const double B = static_cast<double>(out.cols());

    const Eigen::MatrixXd residual = out - batch.target;
    DenoiserGradient g;
    g.loss = loss_cfg.scale * w.dot(residual.colwise().squaredNorm().transpose()) / (D * B);
    if (!std::isfinite(g.loss)) throw NumericError("non-finite training loss");

    g.params = DenoiserParams::zeros(params.shape);
    Eigen::MatrixXd delta = residual * (2.0 * loss_cfg.scale / (D * B));
    delta.array().rowwise() *= w.transpose().array();

    const std::size_t L = params.weights.size();
    for (std::size_t l = L; l-- > 0;) {
        g.params.weights[l] = delta * cache.activations[l].transpose();
        g.params.biases[l] = delta.rowwise().sum();
        Eigen::MatrixXd up = params.weights[l].transpose() * delta;
        if (l == 0) {
            const auto& s = params.shape;
            g.d_cond = up.middleRows(s.image_dim + s.time_dim, s.cond_dim);
        } else {
            delta = up.cwiseProduct(cache.pre[l - 1].unaryExpr([](double v) { return sigmoid(v); }));
        }
    }
    return g;
}

Eigen::VectorXd Denoiser::predict_eps(const Eigen::VectorXd&, int, const NoiseSchedule&, const Eigen::VectorXd&,
                                      const Eigen::VectorXd&) const {
    throw ArgumentError("denoiser does not provide noise predictions");
}

Eigen::VectorXd Denoiser::predict_x0(const Eigen::VectorXd&, double, const Eigen::VectorXd&,
                                     const Eigen::VectorXd&) const {
    throw ArgumentError("denoiser does not provide clean-image predictions");
}

Eigen::VectorXd DiffusionModel::predict_eps(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule,
                                            const Eigen::VectorXd& cond, const Eigen::VectorXd& aux) const {
    if (parameterization != Parameterization::VP) throw ArgumentError("model was trained with the EDM objective");
    DenoiserInput in{x_t, vp_time_features(t, schedule.T, params.shape.time_dim), cond, aux};
    return denoiser_forward(params, in).col(0);
}

Eigen::VectorXd DiffusionModel::predict_x0(const Eigen::VectorXd& x, double sigma, const Eigen::VectorXd& cond,
                                           const Eigen::VectorXd& aux) const {
    if (parameterization != Parameterization::EDM) throw ArgumentError("model was trained with the VP objective");
    const auto pc = edm_precondition(sigma, sigma_data);
    DenoiserInput in{pc.c_in * x, edm_time_features(sigma, params.shape.time_dim), cond, aux};
    return pc.c_skip * x + pc.c_out * denoiser_forward(params, in).col(0);
}

std::uint64_t DiffusionModel::checksum() const {
    const auto bytes = serialize_checkpoint(*this);
    Reader r{bytes, bytes.size() - 8};
    return r.u64();
}

// -- checkpoints -------------------------------------------------------------

std::string serialize_checkpoint(const DiffusionModel& m) {
    const auto& s = m.params.shape;
    nlohmann::json h;
    h["parameterization"] = to_string(m.parameterization);
    h["shape"] = {{"image_dim", s.image_dim}, {"time_dim", s.time_dim}, {"cond_dim", s.cond_dim},
                  {"aux_dim", s.aux_dim},     {"hidden", s.hidden}};
    nlohmann::json chain = nlohmann::json::array();
    for (const auto& W : m.params.weights) chain.push_back({W.rows(), W.cols()});
    h["layers"] = chain;
    h["image"] = {{"height", m.image_height}, {"width", m.image_width}, {"channels", m.channels}};
    h["schedule"] = {{"family", "cosine"}, {"T", m.schedule_steps}, {"s", m.cosine_offset}};
    h["sigma_data"] = m.sigma_data;
    h["aux_noise"] = m.aux_noise;
    h["residual"] = m.residual;
    h["vocabulary_hash"] = hex64(m.vocabulary_hash);
    h["embedding"] = {{"dim", m.embeddings.dim()}, {"words", m.embeddings.words()}};
    const std::string header = h.dump();

    std::string out = "LSCK";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    for (std::size_t l = 0; l < m.params.weights.size(); ++l) {
        const auto& W = m.params.weights[l];
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            for (Eigen::Index j = 0; j < W.cols(); ++j) put_f32(out, W(i, j));
        for (Eigen::Index i = 0; i < m.params.biases[l].size(); ++i) put_f32(out, m.params.biases[l][i]);
    }
    const auto& E = m.embeddings.rows();
    for (Eigen::Index i = 0; i < E.rows(); ++i)
        for (Eigen::Index j = 0; j < E.cols(); ++j) put_f32(out, E(i, j));
    put_u64(out, fnv1a64(out));
    return out;
}

DiffusionModel deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 20 || bytes.compare(0, 4, "LSCK") != 0) throw IoError("not a checkpoint");
    {
        Reader tail{bytes, bytes.size() - 8};
        if (tail.u64() != fnv1a64(std::string_view(bytes).substr(0, bytes.size() - 8)))
            throw IoError("checkpoint checksum mismatch");
    }
    Reader r{bytes, 4};
    if (r.u32() != kCheckpointVersion) throw IoError("unsupported checkpoint version");
    const std::uint32_t header_len = r.u32();
    r.need(header_len);
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.substr(r.pos, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt checkpoint header: ") + e.what());
    }
    r.pos += header_len;

    DiffusionModel m;
    try {
        m.parameterization = parameterization_from_string(h.at("parameterization").get<std::string>());
        const auto& sh = h.at("shape");
        DenoiserShape shape;
        shape.image_dim = sh.at("image_dim");
        shape.time_dim = sh.at("time_dim");
        shape.cond_dim = sh.at("cond_dim");
        shape.aux_dim = sh.at("aux_dim");
        shape.hidden = sh.at("hidden").get<std::vector<int>>();
        m.params = DenoiserParams::zeros(shape);
        const auto& chain = h.at("layers");
        if (chain.size() != m.params.weights.size()) throw IoError("layer chain does not match shape");
        for (std::size_t l = 0; l < chain.size(); ++l)
            if (chain[l][0].get<Eigen::Index>() != m.params.weights[l].rows() ||
                chain[l][1].get<Eigen::Index>() != m.params.weights[l].cols())
                throw IoError("layer chain does not match shape");
        m.image_height = h.at("image").at("height");
        m.image_width = h.at("image").at("width");
        m.channels = h.at("image").at("channels");
        m.schedule_steps = h.at("schedule").at("T");
        m.cosine_offset = h.at("schedule").at("s");
        m.sigma_data = h.at("sigma_data");
        m.aux_noise = h.at("aux_noise");
        m.residual = h.at("residual");
        m.vocabulary_hash = std::stoull(h.at("vocabulary_hash").get<std::string>(), nullptr, 16);

        for (std::size_t l = 0; l < m.params.weights.size(); ++l) {
            auto& W = m.params.weights[l];
            for (Eigen::Index i = 0; i < W.rows(); ++i)
                for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = r.f32();
            for (Eigen::Index i = 0; i < m.params.biases[l].size(); ++i) m.params.biases[l][i] = r.f32();
        }
        auto words = h.at("embedding").at("words").get<std::vector<std::string>>();
        const int dim = h.at("embedding").at("dim");
        Eigen::MatrixXd rows(static_cast<Eigen::Index>(words.size()) + 1, dim);
        for (Eigen::Index i = 0; i < rows.rows(); ++i)
            for (Eigen::Index j = 0; j < rows.cols(); ++j) rows(i, j) = r.f32();
        m.embeddings = EmbeddingTable(std::move(words), std::move(rows));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (r.pos != bytes.size() - 8) throw IoError("checkpoint payload size mismatch");
    return m;
}

void save_checkpoint(const DiffusionModel& model, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

DiffusionModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return deserialize_checkpoint(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace lapsynth
