#include "cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lapsynth/dataio.hpp"
#include "lapsynth/downstream.hpp"
#include "lapsynth/errors.hpp"
#include "lapsynth/keyvalue.hpp"
#include "lapsynth/metrics.hpp"
#include "lapsynth/model.hpp"
#include "lapsynth/png_io.hpp"
#include "lapsynth/sampler.hpp"
#include "lapsynth/survey.hpp"
#include "lapsynth/trainer.hpp"
#include "plots.hpp"

namespace lapsynth::cli {

namespace {

namespace fs = std::filesystem;

const std::vector<double> kDefaultPsiGrid = {1.0, 3.0, 5.0, 7.0, 10.0};

struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::vector<double> psi;
    int steps = 0;
    std::string model;

    CLI::Option* seed_opt = nullptr;
    CLI::Option* psi_opt = nullptr;
    CLI::Option* steps_opt = nullptr;
    CLI::Option* model_opt = nullptr;

    bool has_seed() const { return seed_opt && seed_opt->count() > 0; }
    bool has_psi() const { return psi_opt && psi_opt->count() > 0; }
    bool has_steps() const { return steps_opt && steps_opt->count() > 0; }
    bool has_model() const { return model_opt && model_opt->count() > 0; }
};

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

// -- config ----------------------------------------------------------------

class ConfigMap {
public:
    ConfigMap() = default;
    explicit ConfigMap(std::vector<KeyValue> items) : items_(std::move(items)) {}

    static ConfigMap load(const std::string& path) {
        if (path.empty()) return {};
        return ConfigMap(parse_key_values(read_text_file(path)));
    }

    bool has(const std::string& key) const {
        return std::any_of(items_.begin(), items_.end(), [&](const KeyValue& kv) { return kv.key == key; });
    }

    std::optional<KeyValue> take(const std::string& key) {
        const auto it = std::find_if(items_.begin(), items_.end(), [&](const KeyValue& kv) { return kv.key == key; });
        if (it == items_.end()) return std::nullopt;
        KeyValue kv = *it;
        items_.erase(it);
        return kv;
    }

    std::string str(const std::string& key, const std::string& def = "") {
        const auto kv = take(key);
        return kv ? kv->value : def;
    }

    std::string required(const std::string& key) {
        const auto kv = take(key);
        if (!kv || kv->value.empty()) throw ArgumentError("config key '" + key + "' is required");
        return kv->value;
    }

    template <class T>
    T number(const std::string& key, T def) {
        const auto kv = take(key);
        return kv ? parse_number<T>(kv->value, kv->line) : def;
    }

    bool flag(const std::string& key, bool def) {
        const auto kv = take(key);
        return kv ? parse_bool(kv->value, kv->line) : def;
    }

    std::vector<int> ints(const std::string& key, std::vector<int> def) {
        const auto kv = take(key);
        return kv ? parse_int_list(kv->value, kv->line) : def;
    }

    std::vector<double> reals(const std::string& key, std::vector<double> def) {
        const auto kv = take(key);
        if (!kv) return def;
        std::vector<double> out;
        for (const auto& item : split_list(kv->value)) out.push_back(parse_number<double>(item, kv->line));
        if (out.empty()) throw ParseError(kv->line, "empty list for '" + key + "'");
        return out;
    }

    /// Hands every remaining pair to a module parser, which rejects unknown keys.
    std::string rest_text() {
        std::string text;
        for (const auto& kv : items_) text += kv.key + " = " + kv.value + "\n";
        items_.clear();
        return text;
    }

    void finish() const {
        if (!items_.empty()) throw ParseError(items_.front().line, "unknown config key '" + items_.front().key + "'");
    }

private:
    std::vector<KeyValue> items_;
};

class Echo {
public:
    template <class T>
    void put(const std::string& key, const T& value) {
        std::ostringstream s;
        s << value;
        text_ += key + " = " + s.str() + "\n";
    }
    void append(const std::string& text) { text_ += text; }
    const std::string& text() const { return text_; }

private:
    std::string text_;
};

// -- run directory ---------------------------------------------------------

std::pair<std::uint64_t, std::uintmax_t> hash_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::uint64_t h = fnv1a64("");
    std::uintmax_t bytes = 0;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto n = static_cast<std::size_t>(in.gcount());
        h = fnv1a64(std::string_view(buf.data(), n), h);
        bytes += n;
    }
    return {h, bytes};
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

class Run {
public:
    static constexpr const char* kManifest = "run_manifest.json";
    static constexpr const char* kEcho = "config_echo.txt";

    Run(std::string subcommand, fs::path out, std::vector<std::string> args)
        : subcommand_(std::move(subcommand)), out_(std::move(out)), args_(std::move(args)) {
        std::error_code ec;
        fs::create_directories(out_, ec);
        if (ec) throw IoError("cannot create " + out_.string() + ": " + ec.message());
    }

    const fs::path& dir() const { return out_; }
    Echo& echo() { return echo_; }

    void input(const fs::path& path) {
        if (!fs::is_regular_file(path)) throw IoError("input not found: " + path.string());
        inputs_.push_back(path);
    }

    void finish() {
        write_file(out_ / kEcho, echo_.text());
        nlohmann::json j;
        j["tool"] = "lapsynth";
        j["subcommand"] = subcommand_;
        j["args"] = args_;
        j["config_echo"] = kEcho;
        j["inputs"] = nlohmann::json::array();
        for (const auto& p : inputs_) {
            const auto [h, n] = hash_file(p);
            j["inputs"].push_back({{"path", p.string()}, {"bytes", n}, {"fnv1a64", hex64(h)}});
        }
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(out_))
            if (e.is_regular_file() && e.path().filename() != kManifest) files.push_back(fs::relative(e.path(), out_));
        std::sort(files.begin(), files.end());
        j["outputs"] = nlohmann::json::array();
        for (const auto& rel : files) {
            const auto [h, n] = hash_file(out_ / rel);
            j["outputs"].push_back({{"path", rel.generic_string()}, {"bytes", n}, {"fnv1a64", hex64(h)}});
        }
        write_file(out_ / kManifest, j.dump(2) + "\n");
    }

private:
    std::string subcommand_;
    fs::path out_;
    std::vector<std::string> args_;
    Echo echo_;
    std::vector<fs::path> inputs_;
};

// -- inputs ----------------------------------------------------------------

fs::path dataset_manifest(const std::string& path) {
    fs::path p(path);
    if (fs::is_directory(p)) p /= "manifest.jsonl";
    if (!fs::is_regular_file(p)) throw IoError("dataset manifest not found: " + p.string());
    return p;
}

struct SampleDir {
    double psi = 0.0;
    fs::path dir;
};

/// A sample run directory (sweep.json) or a single psi directory (samples.jsonl).
std::vector<SampleDir> sample_dirs(const std::string& path) {
    const fs::path root(path);
    if (fs::is_regular_file(root / "sweep.json")) {
        std::ifstream in(root / "sweep.json");
        const auto j = nlohmann::json::parse(in);
        std::vector<SampleDir> out;
        for (const auto& e : j.at("sweep")) out.push_back({e.at("psi").get<double>(), root / e.at("dir").get<std::string>()});
        return out;
    }
    if (fs::is_regular_file(root / "samples.jsonl")) {
        std::ifstream in(root / "samples.jsonl");
        std::string line;
        double psi = 0.0;
        if (std::getline(in, line) && !line.empty()) psi = nlohmann::json::parse(line).value("psi", 0.0);
        return {{psi, root}};
    }
    throw IoError("no sweep.json or samples.jsonl under " + root.string());
}

struct LoadedSamples {
    std::vector<ImageTensor> images;
    std::vector<fs::path> paths;
};

LoadedSamples load_samples(const fs::path& dir) {
    std::ifstream in(dir / "samples.jsonl");
    if (!in) throw IoError("cannot read " + (dir / "samples.jsonl").string());
    LoadedSamples out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        std::string rel;
        try {
            rel = nlohmann::json::parse(line).at("image_path").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, (dir / "samples.jsonl").string() + ": " + e.what());
        }
        out.paths.push_back(dir / rel);
        out.images.push_back(read_png(dir / rel));
    }
    return out;
}

std::vector<ImageTensor> images_of(const LabeledDataset& ds) {
    std::vector<ImageTensor> out;
    out.reserve(ds.records.size());
    for (const auto& r : ds.records) out.push_back(r.image);
    return out;
}

TripletMap triplet_map_from(ConfigMap& cfg, Echo& echo, Run& run, const Vocabulary& vocab) {
    const auto path = cfg.str("triplet_map");
    if (path.empty()) return default_triplet_map(vocab);
    run.input(path);
    echo.put("triplet_map", path);
    return parse_triplet_map(read_text_file(path), vocab);
}

RecognizerParams recognizer_from(ConfigMap& cfg, Echo& echo, Run& run, const LabeledDataset& real, std::uint64_t seed,
                                 std::ostream& out) {
    const auto path = cfg.str("recognizer");
    const int epochs = cfg.number<int>("recognizer_epochs", RecognizerConfig{}.epochs);
    if (!path.empty()) {
        run.input(path);
        echo.put("recognizer", path);
        return load_recognizer(path);
    }
    echo.put("recognizer_epochs", epochs);
    RecognizerConfig rc;
    rc.epochs = epochs;
    out << "training feature recognizer on " << real.size() << " images\n";
    auto params = train_recognizer(make_recognition_set(real.records, default_triplet_map(real.vocabulary)), rc,
                                   derive_seed(seed, "cli-recognizer"));
    save_recognizer(params, run.dir() / "recognizer.json");
    return params;
}

std::uint64_t resolve_seed(ConfigMap& cfg, const Flags& f) {
    const auto seed = cfg.number<std::uint64_t>("seed", 0);
    return f.has_seed() ? f.seed : seed;
}

// -- subcommands -----------------------------------------------------------

void cmd_gen_data(ConfigMap& cfg, const Flags& f, Run& run, std::ostream& out) {
    ToyConfig toy;
    toy.n_records = cfg.number("n_records", toy.n_records);
    toy.image_size = cfg.number("image_size", toy.image_size);
    toy.n_videos = cfg.number("n_videos", toy.n_videos);
    toy.noise = cfg.number("noise", toy.noise);
    toy.second_triplet_probability = cfg.number("second_triplet_probability", toy.second_triplet_probability);
    const auto split = split_from_string(cfg.str("split", "train"));
    const auto seed = resolve_seed(cfg, f);
    cfg.finish();

    auto& e = run.echo();
    e.put("n_records", toy.n_records);
    e.put("image_size", toy.image_size);
    e.put("n_videos", toy.n_videos);
    e.put("noise", format_double(toy.noise));
    e.put("second_triplet_probability", format_double(toy.second_triplet_probability));
    e.put("split", to_string(split));
    e.put("seed", seed);

    const auto vocab = default_vocabulary();
    auto ds = make_toy_dataset(seed, toy, vocab);
    ds.split = split;
    write_manifest(ds, run.dir());
    write_file(run.dir() / "triplet_map.txt", format_triplet_map(default_triplet_map(vocab), vocab));
    out << "wrote " << ds.size() << " records to " << (run.dir() / "manifest.jsonl").string() << "\n";
}

void cmd_train(ConfigMap& cfg, const Flags& f, Run& run, std::ostream& out) {
    const auto data = dataset_manifest(cfg.required("data"));
    const bool cfg_has_seed = cfg.has("seed");
    auto tc = parse_train_config(cfg.rest_text());
    if (f.has_seed() || !cfg_has_seed) tc.seed = f.seed;
    if (f.has_model()) tc.parameterization = parameterization_from_string(f.model);
    tc.validate();

    run.input(data);
    run.echo().put("data", data.string());
    run.echo().append(format_train_config(tc));

    const auto ds = read_manifest(data, default_vocabulary());
    out << "training " << to_string(tc.parameterization) << " model on " << ds.size() << " records for " << tc.epochs
        << " epochs\n";
    const auto result = fit(ds, tc, run.dir(), [&](int epoch, double loss) {
        out << "epoch " << epoch << " loss " << format_double(loss) << "\n" << std::flush;
    });
    out << "checkpoint " << result.report.final_checkpoint.string() << "\n";
}

void cmd_sample(ConfigMap& cfg, const Flags& f, Run& run, std::ostream& out) {
    const fs::path checkpoint = cfg.required("checkpoint");
    const auto prompts_path = dataset_manifest(cfg.required("prompts"));
    const auto sr_path = cfg.str("sr_checkpoint");
    const int n_samples = cfg.number("n_samples", 200);
    auto grid = cfg.reals("psi", kDefaultPsiGrid);
    if (f.has_psi()) grid = f.psi;
    const bool method_given = cfg.has("method");
    const bool cfg_has_seed = cfg.has("seed");
    auto sc = parse_sampler_config(cfg.rest_text());
    if (f.has_seed() || !cfg_has_seed) sc.seed = f.seed;
    if (f.has_steps()) sc.steps = f.steps;
    if (n_samples <= 0) throw ArgumentError("n_samples must be positive");
    if (grid.empty()) throw ArgumentError("psi list is empty");

    run.input(checkpoint);
    run.input(prompts_path);
    const auto model = load_checkpoint(checkpoint);
    std::optional<DiffusionModel> sr;
    if (!sr_path.empty()) {
        run.input(sr_path);
        sr = load_checkpoint(sr_path);
    }
    if (f.has_model())
        sc.method = f.model == "vp" ? SamplerMethod::DDPM : SamplerMethod::EDM;
    else if (!method_given)
        sc.method = model.parameterization == Parameterization::VP ? SamplerMethod::DDPM : SamplerMethod::EDM;

    const auto vocab = default_vocabulary();
    const auto ds = read_manifest(prompts_path, vocab);
    std::vector<PromptRecord> prompts;
    for (std::size_t i = 0; i < ds.records.size() && prompts.size() < static_cast<std::size_t>(n_samples); ++i)
        prompts.push_back(ds.records[i].prompt);

    auto& e = run.echo();
    e.put("checkpoint", checkpoint.string());
    e.put("prompts", prompts_path.string());
    if (sr) e.put("sr_checkpoint", sr_path);
    e.put("n_samples", n_samples);
    e.put("psi", join_doubles(grid));
    {
        std::istringstream lines(format_sampler_config(sc));
        for (std::string line; std::getline(lines, line);)
            if (line.rfind("psi ", 0) != 0) e.append(line + "\n");
    }

    nlohmann::json sweep;
    sweep["checkpoint"] = checkpoint.string();
    sweep["sweep"] = nlohmann::json::array();
    for (double psi : grid) {
        auto c = sc;
        c.psi = psi;
        c.validate();
        SampleBatch batch;
        if (sr) {
            batch.config = c;
            batch.model_id = hex64(model.checksum() ^ sr->checksum());
            batch.config_hash = hex64(fnv1a64(format_sampler_config(c)));
            for (const auto& p : prompts) {
                const auto s = item_seed(c.seed, p);
                Rng rng(s);
                batch.images.push_back(cascade_sample(model, *sr, p.prompt_text, c, rng));
                batch.prompts.push_back(p);
                batch.seeds.push_back(s);
            }
        } else {
            batch = batch_generate(model, prompts, c);
        }
        const auto dir_name = "psi_" + format_double(psi);
        const auto dir = run.dir() / dir_name;
        write_sample_batch(batch, dir);

        std::ofstream labels(dir / "manifest.jsonl");
        if (!labels) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            char id[32], rel[48];
            std::snprintf(id, sizeof id, "synth_%05zu", i);
            std::snprintf(rel, sizeof rel, "images/sample_%05zu.png", i);
            auto rec = batch.prompts[i];
            rec.image_id = id;
            labels << manifest_line(rec, rel, vocab) << "\n";
        }
        sweep["sweep"].push_back({{"psi", psi}, {"dir", dir_name}, {"n", batch.size()}});
        out << "psi " << format_double(psi) << ": " << batch.size() << " images in " << dir.string() << "\n" << std::flush;
    }
    write_file(run.dir() / "sweep.json", sweep.dump(2) + "\n");
}

void cmd_eval_fidelity(ConfigMap& cfg, const Flags& f, Run& run, std::ostream& out) {
    const auto real_path = dataset_manifest(cfg.required("real"));
    const auto synth_root = cfg.required("synthetic");
    FidelityConfig fc;
    fc.image_size = cfg.number("image_size", fc.image_size);
    fc.projection_dim = cfg.number("projection_dim", fc.projection_dim);
    fc.kid_subsets = cfg.number("kid_subsets", fc.kid_subsets);
    fc.kid_subset_size = cfg.number("kid_subset_size", fc.kid_subset_size);
    auto tag = cfg.str("model_tag");
    if (tag.empty()) tag = fs::path(synth_root).lexically_normal().filename().string();
    fc.seed = resolve_seed(cfg, f);

    auto& e = run.echo();
    e.put("real", real_path.string());
    e.put("synthetic", synth_root);
    e.put("model_tag", tag);
    e.put("image_size", fc.image_size);
    e.put("projection_dim", fc.projection_dim);
    e.put("kid_subsets", fc.kid_subsets);
    e.put("kid_subset_size", fc.kid_subset_size);
    e.put("seed", fc.seed);

    run.input(real_path);
    const auto real = read_manifest(real_path, default_vocabulary());
    const auto recognizer = recognizer_from(cfg, e, run, real, fc.seed, out);
    cfg.finish();
    const auto real_images = images_of(real);

    nlohmann::json report;
    report["model_tag"] = tag;
    report["sweep"] = nlohmann::json::array();
    std::string csv = "psi,frechet,frechet_clean,frechet_alt,kid_mean,kid_std\n";
    for (const auto& sd : sample_dirs(synth_root)) {
        run.input(sd.dir / "samples.jsonl");
        const auto samples = load_samples(sd.dir);
        const auto r = fidelity_report(real_images, samples.images, fc, recognizer);
        report["sweep"].push_back({{"psi", sd.psi},
                                   {"samples", sd.dir.string()},
                                   {"report", nlohmann::json::parse(fidelity_report_json(r))}});
        char line[256];
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", sd.psi, r.frechet, r.frechet_clean,
                      r.frechet_alt, r.kid_mean, r.kid_std);
        csv += line;
        out << "psi " << format_double(sd.psi) << ": frechet " << format_double(r.frechet) << ", frechet_clean "
            << format_double(r.frechet_clean) << ", frechet_alt " << format_double(r.frechet_alt) << ", kid "
            << format_double(r.kid_mean) << " +- " << format_double(r.kid_std) << "\n";
    }
    write_file(run.dir() / "fidelity.json", report.dump(2) + "\n");
    write_file(run.dir() / "fidelity.csv", csv);
}

void cmd_eval_tsne(ConfigMap& cfg, const Flags& f, Run& run, std::ostream& out) {
    const auto real_path = dataset_manifest(cfg.required("real"));
    const auto synth_root = cfg.required("synthetic");
    const int n_real = cfg.number("n_real", 600);
    const int n_synth = cfg.number("n_synthetic", 600);
    const auto extractor_id = cfg.str("extractor", kRandomProjectionExtractor);
    const int image_size = cfg.number("image_size", 16);
    const int dim = cfg.number("projection_dim", 64);
    TsneConfig tc;
    tc.perplexity = cfg.number("perplexity", tc.perplexity);
    tc.iters = cfg.number("iters", tc.iters);
    tc.seed = resolve_seed(cfg, f);
    const bool psi_given = cfg.has("psi") || f.has_psi();
    double psi = cfg.number("psi", 3.0);
    if (f.has_psi()) {
        if (f.psi.size() != 1) throw ArgumentError("eval-tsne takes a single psi");
        psi = f.psi.front();
    }

    auto& e = run.echo();
    e.put("real", real_path.string());
    e.put("synthetic", synth_root);
    e.put("n_real", n_real);
    e.put("n_synthetic", n_synth);
    e.put("extractor", extractor_id);
    e.put("image_size", image_size);
    e.put("projection_dim", dim);
    e.put("perplexity", format_double(tc.perplexity));
    e.put("iters", tc.iters);
    e.put("seed", tc.seed);

    run.input(real_path);
    const auto real = read_manifest(real_path, default_vocabulary());
    std::optional<RecognizerParams> recognizer;
    if (extractor_id == kRecognizerExtractor) recognizer = recognizer_from(cfg, e, run, real, tc.seed, out);
    cfg.finish();

    const auto dirs = sample_dirs(synth_root);
    auto chosen = dirs.front();
    if (dirs.size() > 1 || psi_given) {
        const auto it = std::find_if(dirs.begin(), dirs.end(), [&](const SampleDir& d) { return d.psi == psi; });
        if (it == dirs.end()) throw ArgumentError("no samples at psi " + format_double(psi) + " under " + synth_root);
        chosen = *it;
    }
    e.put("psi", format_double(chosen.psi));
    run.input(chosen.dir / "samples.jsonl");
    const auto samples = load_samples(chosen.dir);

    const auto extractor = FeatureExtractor::by_id(extractor_id, image_size, dim, tc.seed, recognizer ? &*recognizer : nullptr);
    std::vector<ImageTensor> real_images, synth_images;
    std::vector<std::string> ids, sources;
    for (std::size_t i = 0; i < real.records.size() && real_images.size() < static_cast<std::size_t>(n_real); ++i) {
        real_images.push_back(real.records[i].image);
        ids.push_back(real.records[i].prompt.image_id);
        sources.push_back("real");
    }
    for (std::size_t i = 0; i < samples.images.size() && synth_images.size() < static_cast<std::size_t>(n_synth); ++i) {
        synth_images.push_back(samples.images[i]);
        ids.push_back(samples.paths[i].stem().string());
        sources.push_back("synthetic");
    }
    const auto a = extract_features(real_images, extractor, ResizeRoute::Clean, "real");
    const auto b = extract_features(synth_images, extractor, ResizeRoute::Clean, "synthetic");
    Eigen::MatrixXd points(a.size() + b.size(), a.dim());
    points << a.features, b.features;
    out << "t-SNE on " << points.rows() << " embeddings (" << extractor_id << ")\n" << std::flush;
    const auto coords = tsne(points, tc);
    write_tsne_csv(coords, ids, sources, run.dir() / "tsne.csv");
}

void cmd_downstream(ConfigMap& cfg, const Flags& f, Run& run, std::ostream& out) {
    const auto real_path = dataset_manifest(cfg.required("real"));
    const auto synth_path = dataset_manifest(cfg.required("synthetic"));
    MixSpec spec;
    spec.target_classes = cfg.ints("target_classes", spec.target_classes);
    spec.proportions = cfg.reals("proportions", spec.proportions);
    spec.folds = cfg.number("folds", spec.folds);
    spec.seeds = cfg.number("seeds", spec.seeds);
    spec.recognizer.hidden = cfg.number("hidden", spec.recognizer.hidden);
    spec.recognizer.epochs = cfg.number("epochs", spec.recognizer.epochs);
    spec.recognizer.batch_size = cfg.number("batch_size", spec.recognizer.batch_size);
    spec.recognizer.learning_rate = cfg.number("learning_rate", spec.recognizer.learning_rate);
    spec.seed = resolve_seed(cfg, f);
    auto tag = cfg.str("model_tag");
    if (tag.empty()) tag = synth_path.parent_path().filename().string();

    auto& e = run.echo();
    const auto vocab = default_vocabulary();
    const auto classes = triplet_map_from(cfg, e, run, vocab);
    cfg.finish();
    e.put("real", real_path.string());
    e.put("synthetic", synth_path.string());
    e.put("model_tag", tag);
    e.put("target_classes", join_ints(spec.target_classes));
    e.put("proportions", join_doubles(spec.proportions));
    e.put("folds", spec.folds);
    e.put("seeds", spec.seeds);
    e.put("hidden", spec.recognizer.hidden);
    e.put("epochs", spec.recognizer.epochs);
    e.put("batch_size", spec.recognizer.batch_size);
    e.put("learning_rate", format_double(spec.recognizer.learning_rate));
    e.put("seed", spec.seed);

    run.input(real_path);
    run.input(synth_path);
    const auto real = read_manifest(real_path, vocab);
    const auto synth = read_manifest(synth_path, vocab);
    out << "mixing experiment: " << real.size() << " real, " << synth.size() << " synthetic, " << spec.folds
        << " folds x " << spec.seeds << " seeds\n" << std::flush;
    const auto report = mix_experiment(real.records, synth.records, classes, spec);
    auto j = nlohmann::json::parse(mix_report_json(report, spec));
    j["model_tag"] = tag;
    write_file(run.dir() / "mix_report.json", j.dump(2) + "\n");
    write_file(run.dir() / "mix_report.csv", mix_report_csv(report));
    for (const auto& c : report.cells)
        out << "proportion " << format_double(c.proportion) << ": mean delta RAP " << format_double(c.mean_delta_rap)
            << ", seed median " << format_double(c.seed_median_delta_rap) << " over " << c.n_runs << " runs\n";
    if (report.duplicate_count > 0)
        out << "warning: " << report.duplicate_count << " synthetic items duplicate real images\n";
}

std::vector<SurveyImage> real_survey_images(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot read " + manifest.string());
    const auto vocab = default_vocabulary();
    std::vector<SurveyImage> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        std::string rel;
        const auto rec = parse_manifest_line(line, vocab, &rel, line_no);
        out.push_back({"real_" + rec.image_id, manifest.parent_path() / rel});
    }
    return out;
}

SurveyPool survey_pool_from(ConfigMap& cfg, std::uint64_t seed, Run& run) {
    auto& e = run.echo();
    const auto pool_path = cfg.str("pool");
    if (!pool_path.empty()) {
        run.input(pool_path);
        e.put("pool", pool_path);
        return load_pool(pool_path);
    }
    const auto real_path = dataset_manifest(cfg.required("real"));
    const auto synth_spec = cfg.required("synthetic");
    PoolOptions opt;
    opt.n_questions = cfg.number("n_questions", opt.n_questions);
    opt.min_real = cfg.number("min_real", opt.min_real);
    opt.max_real = cfg.number("max_real", opt.max_real);
    opt.attention_check = cfg.flag("attention_check", opt.attention_check);
    e.put("real", real_path.string());
    e.put("synthetic", synth_spec);
    e.put("n_questions", opt.n_questions);
    e.put("min_real", opt.min_real);
    e.put("max_real", opt.max_real);
    e.put("attention_check", opt.attention_check ? "true" : "false");

    run.input(real_path);
    const auto real = real_survey_images(real_path);
    std::vector<SynthPool> synth;
    for (const auto& item : split_list(synth_spec)) {
        auto tp = parse_tagged_path(item);
        if (tp.tag.empty()) tp.tag = tp.path.lexically_normal().filename().string();
        const auto dirs = sample_dirs(tp.path.string());
        SynthPool pool{tp.tag, {}};
        for (const auto& sd : dirs) {
            run.input(sd.dir / "samples.jsonl");
            const auto samples = load_samples(sd.dir);
            for (std::size_t i = 0; i < samples.paths.size(); ++i)
                pool.images.push_back({tp.tag + "_psi" + format_double(sd.psi) + "_" + std::to_string(i), samples.paths[i]});
        }
        synth.push_back(std::move(pool));
    }
    Rng rng(derive_seed(seed, "survey-pool"));
    auto pool = make_question_pool(real, synth, opt, rng);
    save_pool(pool, run.dir() / "pool.json");
    return pool;
}

void cmd_survey_serve(ConfigMap& cfg, const Flags& f, Run& run, std::ostream& out) {
    const auto seed = resolve_seed(cfg, f);
    const auto host = cfg.str("host", "127.0.0.1");
    const int port = cfg.number("port", 8080);
    const fs::path log = cfg.str("log", (run.dir() / "responses.jsonl").string());
    auto pool = survey_pool_from(cfg, seed, run);
    cfg.finish();
    auto& e = run.echo();
    e.put("host", host);
    e.put("port", port);
    e.put("log", log.string());
    e.put("seed", seed);
    if (!fs::exists(run.dir() / "pool.json")) save_pool(pool, run.dir() / "pool.json");
    run.finish();

    SurveyServiceConfig sc;
    sc.log_path = log;
    sc.order_seed = seed;
    if (const char* token = std::getenv("SURVEY_ADMIN_TOKEN")) sc.admin_token = token;

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);
    SurveyService service(std::move(pool), sc);
    const int bound = service.start(host, port);
    out << "survey listening on http://" << host << ":" << bound << " (" << (sc.admin_token.empty() ? "results disabled" : "results enabled")
        << ")\n" << std::flush;
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
    pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
    out << "survey stopped\n";
}

void cmd_survey_score(ConfigMap& cfg, const Flags&, Run& run, std::ostream& out) {
    const fs::path pool_path = cfg.required("pool");
    const fs::path log_path = cfg.required("log");
    cfg.finish();
    run.echo().put("pool", pool_path.string());
    run.echo().put("log", log_path.string());
    run.input(pool_path);
    run.input(log_path);
    const auto scores = score(read_response_log(log_path), load_pool(pool_path));
    write_file(run.dir() / "scores.json", scores_to_json(scores));
    std::string csv = "model_tag,tp,fp,tn,fn,tpr,fpr\n";
    for (const auto& [tag, s] : scores) {
        csv += tag + "," + std::to_string(s.tp) + "," + std::to_string(s.fp) + "," + std::to_string(s.tn) + "," +
               std::to_string(s.fn) + "," + (s.tpr() ? format_double(*s.tpr()) : "") + "," +
               (s.fpr() ? format_double(*s.fpr()) : "") + "\n";
        out << tag << ": TPR " << (s.tpr() ? format_percent(*s.tpr()) : "n/a") << ", FPR "
            << (s.fpr() ? format_percent(*s.fpr()) : "n/a") << " (TP " << s.tp << ", FP " << s.fp << ", TN " << s.tn
            << ", FN " << s.fn << ")\n";
    }
    write_file(run.dir() / "scores.csv", csv);
}

void cmd_plots(ConfigMap& cfg, const Flags&, Run& run, std::ostream& out) {
    PlotInputs in;
    auto collect = [&](const std::string& key, std::vector<TaggedPath>& dst) {
        const auto value = cfg.str(key);
        if (value.empty()) return;
        run.echo().put(key, value);
        for (const auto& item : split_list(value)) dst.push_back(parse_tagged_path(item));
    };
    collect("fidelity", in.fidelity);
    collect("tsne", in.tsne);
    collect("mix", in.mix);
    cfg.finish();
    const auto files = emit_plots(in, run.dir());
    for (const auto* list : {&in.fidelity, &in.tsne, &in.mix})
        for (const auto& p : *list) run.input(p.path);
    for (const auto& p : files) out << "wrote " << p.string() << "\n";
}

using Command = void (*)(ConfigMap&, const Flags&, Run&, std::ostream&);

struct Subcommand {
    const char* name;
    const char* help;
    Command run;
    bool sampling_flags;
    bool model_flag;
};

const Subcommand kSubcommands[] = {
    {"gen-data", "Render the procedural toy corpus", cmd_gen_data, false, false},
    {"train", "Train a denoiser on a dataset manifest", cmd_train, false, true},
    {"sample", "Generate images over a conditioning-scale sweep", cmd_sample, true, true},
    {"eval-fidelity", "Fréchet and KID scores of a sample sweep", cmd_eval_fidelity, false, false},
    {"eval-tsne", "2-D t-SNE embedding of real and generated images", cmd_eval_tsne, true, false},
    {"downstream", "Real/synthetic mixing experiment for the recognizer", cmd_downstream, false, false},
    {"survey-serve", "Serve the real-vs-synthetic survey over HTTP", cmd_survey_serve, false, false},
    {"survey-score", "Score a survey response log", cmd_survey_score, false, false},
    {"plots", "Emit SVG and CSV plots from report files", cmd_plots, false, false},
};

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Toy text-conditioned diffusion experiments", "lapsynth"};
    app.require_subcommand(1, 1);
    app.failure_message(CLI::FailureMessage::help);

    std::map<std::string, Flags> flags;
    std::map<std::string, CLI::App*> subs;
    for (const auto& s : kSubcommands) {
        auto& f = flags[s.name];
        auto* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("--config", f.config, "key = value config file");
        f.seed_opt = sub->add_option("--seed", f.seed, "master seed");
        sub->add_option("--out", f.out, "output directory")->required();
        if (s.sampling_flags) {
            f.psi_opt = sub->add_option("--psi", f.psi, "comma-separated conditioning scales")->delimiter(',');
            f.steps_opt = sub->add_option("--steps", f.steps, "sampler steps")->check(CLI::PositiveNumber);
        }
        if (s.model_flag) f.model_opt = sub->add_option("--model", f.model, "vp or edm")->check(CLI::IsMember({"vp", "edm"}));
        subs[s.name] = sub;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    for (const auto& s : kSubcommands) {
        if (!subs[s.name]->parsed()) continue;
        const auto& f = flags[s.name];
        try {
            auto cfg = ConfigMap::load(f.config);
            std::vector<std::string> args(argv + 1, argv + argc);
            Run run(s.name, f.out, args);
            if (!f.config.empty()) run.input(f.config);
            s.run(cfg, f, run, out);
            if (std::string(s.name) != "survey-serve") run.finish();
            return kExitOk;
        } catch (const std::exception& e) {
            err << "lapsynth " << s.name << ": error: " << e.what() << "\n";
            return kExitFailure;
        }
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace lapsynth::cli
