#include "lapsynth/dataio.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lapsynth/errors.hpp"
#include "lapsynth/png_io.hpp"
#include "lapsynth/resize.hpp"

namespace lapsynth {
namespace {

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

void check_triplet(const TripletLabel& t, const Vocabulary& v) {
    if (t.instrument != kNullIndex) v.instrument(t.instrument);
    if (t.verb != kNullIndex) v.verb(t.verb);
    if (t.target != kNullIndex) v.target(t.target);
}

}  // namespace

std::string PromptRecord::group() const {
    const auto pos = image_id.find('_');
    return pos == std::string::npos ? image_id : image_id.substr(0, pos);
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ArgumentError("unknown split: " + std::string(s));
}

void LabeledDataset::validate() const {
    if (records.empty()) throw ArgumentError("dataset is empty");
    vocabulary.validate();
    for (const auto& r : records) {
        for (const auto& t : r.prompt.triplets) check_triplet(t, vocabulary);
        if (r.prompt.phase != kNullIndex) vocabulary.phase(r.prompt.phase);
        for (int c : r.prompt.classes) vocabulary.segmentation_class(c);
        if (r.prompt.triplets.empty() && r.prompt.classes.empty())
            throw ArgumentError("record " + r.prompt.image_id + " has neither triplets nor classes");
    }
}

// -- prompts ---------------------------------------------------------------

std::string build_prompt(const std::vector<TripletLabel>& triplets, int phase, const Vocabulary& vocabulary) {
    for (const auto& t : triplets) check_triplet(t, vocabulary);
    if (phase != kNullIndex) vocabulary.phase(phase);

    struct Group {
        std::vector<int> instruments;
        int verb;
        int target;
    };
    std::vector<Group> groups;
    for (const auto& t : triplets) {
        if (t.has_null()) continue;
        if (!groups.empty() && groups.back().verb == t.verb && groups.back().target == t.target)
            groups.back().instruments.push_back(t.instrument);
        else
            groups.push_back({{t.instrument}, t.verb, t.target});
    }
    if (groups.empty() && phase == kNullIndex) throw ArgumentError("prompt needs a triplet or a phase");

    std::string out;
    for (const auto& g : groups) {
        if (!out.empty()) out += " and ";
        for (std::size_t i = 0; i < g.instruments.size(); ++i) {
            if (i) out += " and ";
            out += vocabulary.instrument(g.instruments[i]);
        }
        out += ' ';
        out += vocabulary.verb(g.verb);
        out += ' ';
        out += vocabulary.target(g.target);
    }
    if (phase != kNullIndex) {
        if (!out.empty()) out += ' ';
        out += "in ";
        out += vocabulary.phase(phase);
    }
    return lowercase(std::move(out));
}

std::string build_segmented_prompt(const std::vector<std::string>& class_names) {
    if (class_names.empty()) throw ArgumentError("segmented prompt needs at least one class");
    std::string out;
    for (const auto& n : class_names) {
        if (!out.empty()) out += " and ";
        out += n;
    }
    return lowercase(std::move(out));
}

std::string render_prompt(const PromptRecord& record, const Vocabulary& vocabulary) {
    if (record.is_segmented) {
        std::vector<std::string> names;
        for (int c : record.classes) names.push_back(vocabulary.segmentation_class(c));
        return build_segmented_prompt(names);
    }
    return build_prompt(record.triplets, record.phase, vocabulary);
}

// -- transforms ------------------------------------------------------------

ImageTensor hflip(const ImageTensor& image) {
    ImageTensor out(image.height(), image.width(), image.channels());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < image.channels(); ++c) out.at(y, image.width() - 1 - x, c) = image.at(y, x, c);
    return out;
}

ImageTensor center_crop(const ImageTensor& image, int out_size) {
    if (out_size <= 0 || out_size > image.height() || out_size > image.width())
        throw ArgumentError("crop size exceeds image");
    const int oy = (image.height() - out_size) / 2;
    const int ox = (image.width() - out_size) / 2;
    ImageTensor out(out_size, out_size, image.channels());
    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x)
            for (int c = 0; c < image.channels(); ++c) out.at(y, x, c) = image.at(y + oy, x + ox, c);
    return out;
}

ImageTensor transform_image(const ImageTensor& image, int out_size, bool flip, Rng& rng) {
    if (image.empty()) throw ArgumentError("empty image");
    if (out_size <= 0) throw ArgumentError("output size must be positive");
    const int shorter = std::min(image.height(), image.width());
    if (shorter < out_size)
        throw ArgumentError("output size " + std::to_string(out_size) + " exceeds shorter side " +
                            std::to_string(shorter));
    ImageTensor resized = image;
    if (shorter > out_size) {
        const double ratio = static_cast<double>(out_size) / shorter;
        const int h = std::max(out_size, static_cast<int>(std::lround(image.height() * ratio)));
        const int w = std::max(out_size, static_cast<int>(std::lround(image.width() * ratio)));
        resized = clean_resize(image, h, w);
    }
    ImageTensor out = center_crop(resized, out_size);
    if (flip && uniform01(rng) < 0.5) out = hflip(out);
    out.clamp();
    return out;
}

// -- segmented pairs -------------------------------------------------------

std::vector<LabeledRecord> make_segmented_pairs(const ImageTensor& image, const ClassMask& mask,
                                                const Vocabulary& vocabulary, std::string_view base_id,
                                                const SegmentedPairOptions& options) {
    if (mask.height != image.height() || mask.width != image.width() ||
        mask.ids.size() != static_cast<std::size_t>(image.height()) * image.width())
        throw ShapeError("mask and image dimensions differ");

    std::set<int> present;
    for (int id : mask.ids) {
        vocabulary.segmentation_class(id);
        if (id != options.background_class) present.insert(id);
    }

    std::vector<std::vector<int>> subsets;
    if (options.singles)
        for (int c : present) subsets.push_back({c});
    if (options.combined && present.size() > 1) subsets.emplace_back(present.begin(), present.end());

    std::vector<LabeledRecord> out;
    for (const auto& subset : subsets) {
        ImageTensor cut = image;
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x)
                if (std::find(subset.begin(), subset.end(), mask.at(y, x)) == subset.end())
                    for (int c = 0; c < image.channels(); ++c) cut.at(y, x, c) = -1.0;

        PromptRecord p;
        p.image_id = std::string(base_id) + "_seg";
        std::vector<std::string> names;
        for (int c : subset) {
            p.image_id += "-" + std::to_string(c);
            names.push_back(vocabulary.segmentation_class(c));
        }
        p.classes = subset;
        p.is_segmented = true;
        p.prompt_text = build_segmented_prompt(names);
        out.push_back({std::move(p), std::move(cut)});
    }
    return out;
}

// -- toy corpus ------------------------------------------------------------

namespace {

struct Rgb {
    double r, g, b;
};

Rgb hsv(double h, double s, double v) {
    h = h - std::floor(h);
    const double f = h * 6.0;
    const int i = static_cast<int>(f) % 6;
    const double frac = f - std::floor(f);
    const double p = v * (1 - s), q = v * (1 - s * frac), t = v * (1 - s * (1 - frac));
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

bool glyph_hit(int instrument, double dx, double dy) {
    constexpr double r = 0.2;
    constexpr double w = 0.07;
    const double d = std::hypot(dx, dy);
    switch (instrument % 7) {
        case 0: return std::abs(dy) < w && std::abs(dx) < r;
        case 1: return d < r * 0.8;
        case 2: return (std::abs(dx) < w && std::abs(dy) < r) || (std::abs(dy) < w && std::abs(dx) < r);
        case 3: return std::abs(dx) < w && std::abs(dy) < r;
        case 4: return d > r * 0.45 && d < r;
        case 5: return std::abs(dx - dy) < w * 1.4 && std::abs(dx) < r;
        default: return std::max(std::abs(dx), std::abs(dy)) < r * 0.75;
    }
}

int segmentation_for_target(const std::string& target, const Vocabulary& v) {
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"gallbladder", "gallbladder"}, {"liver", "liver"},
        {"cystic duct", "cystic duct"}, {"abdominal wall cavity", "abdominal wall"},
        {"omentum", "fat"},             {"gut", "gastrointestinal tract"},
        {"blood vessel", "hepatic vein"}, {"fluid", "blood"}};
    for (const auto& [t, s] : table)
        if (t == target) {
            auto it = std::find(v.segmentation_classes.begin(), v.segmentation_classes.end(), s);
            if (it != v.segmentation_classes.end()) return static_cast<int>(it - v.segmentation_classes.begin());
        }
    auto it = std::find(v.segmentation_classes.begin(), v.segmentation_classes.end(), "connective tissue");
    return it != v.segmentation_classes.end() ? static_cast<int>(it - v.segmentation_classes.begin()) : 0;
}

int segmentation_for_instrument(const std::string& instrument, const Vocabulary& v) {
    auto it = std::find(v.segmentation_classes.begin(), v.segmentation_classes.end(), instrument);
    return it != v.segmentation_classes.end() ? static_cast<int>(it - v.segmentation_classes.begin()) : 0;
}

std::size_t weighted_pick(const std::vector<double>& cumulative, Rng& rng) {
    const double u = uniform01(rng) * cumulative.back();
    return static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
}

std::vector<double> cumulative_of(const std::vector<double>& w) {
    std::vector<double> c(w.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!(w[i] >= 0.0)) throw ArgumentError("weights must be non-negative");
        acc += w[i];
        c[i] = acc;
    }
    if (acc <= 0.0) throw ArgumentError("weights sum to zero");
    return c;
}

void add_noise(ImageTensor& image, double amplitude, Rng& rng) {
    if (amplitude <= 0.0) return;
    std::uniform_real_distribution<double> dist(-amplitude, amplitude);
    auto& v = image.flat();
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += dist(rng);
}

}  // namespace

std::vector<TripletLabel> default_triplet_pool(const Vocabulary& v) {
    const std::vector<std::array<const char*, 3>> names = {
        {"grasper", "retract", "liver"},        {"hook", "dissect", "gallbladder"},
        {"grasper", "retract", "gallbladder"},  {"grasper", "grasp", "gallbladder"},
        {"hook", "dissect", "omentum"},         {"clipper", "clip", "cystic duct"},
        {"scissors", "cut", "cystic artery"},   {"bipolar", "coagulate", "liver"},
        {"irrigator", "aspirate", "fluid"},     {"grasper", "pack", "gallbladder"},
        {"hook", "dissect", "cystic duct"},     {"bipolar", "coagulate", "abdominal wall cavity"}};
    std::vector<TripletLabel> pool;
    for (const auto& n : names) pool.push_back({v.instrument_index(n[0]), v.verb_index(n[1]), v.target_index(n[2])});
    return pool;
}

ToyRecord render_toy_record(const std::vector<TripletLabel>& triplets, int phase, int image_size,
                            const Vocabulary& vocabulary) {
    if (image_size <= 0) throw ArgumentError("image size must be positive");
    for (const auto& t : triplets) check_triplet(t, vocabulary);
    const int target = triplets.empty() || triplets.front().target == kNullIndex ? 0 : triplets.front().target;
    const int phase_id = phase == kNullIndex ? 0 : phase;
    if (phase != kNullIndex) vocabulary.phase(phase);

    const auto n_targets = static_cast<double>(vocabulary.targets.size());
    const Rgb base = hsv(target / n_targets, 0.65, 0.75);
    const double theta = phase_id * std::numbers::pi / static_cast<double>(vocabulary.phases.size());
    const double freq = 1.0 + (phase_id % 3) * 0.75;
    const double ph_shift = phase_id * 0.9;
    const int target_class = segmentation_for_target(vocabulary.target(target), vocabulary);

    ToyRecord out;
    out.record.image = ImageTensor(image_size, image_size, 3);
    out.mask = {image_size, image_size, std::vector<int>(static_cast<std::size_t>(image_size) * image_size, target_class)};
    auto& img = out.record.image;

    for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) {
            const double u = (x + 0.5) / image_size;
            const double v = (y + 0.5) / image_size;
            const double shade = 0.55 + 0.45 * (1.0 - v);
            const double tex =
                0.22 * std::sin(2.0 * std::numbers::pi * freq * (u * std::cos(theta) + v * std::sin(theta)) + ph_shift);
            img.at(y, x, 0) = 2.0 * base.r * shade - 1.0 + tex;
            img.at(y, x, 1) = 2.0 * base.g * shade - 1.0 + tex;
            img.at(y, x, 2) = 2.0 * base.b * shade - 1.0 + tex;
        }

    for (std::size_t k = 0; k < triplets.size(); ++k) {
        const auto& t = triplets[k];
        if (t.instrument == kNullIndex) continue;
        const int slot = t.verb == kNullIndex ? 4 : t.verb % 9;
        double cx = 0.22 + 0.28 * (slot % 3);
        const double cy = 0.22 + 0.28 * (slot / 3);
        if (k % 2 == 1) cx = 1.0 - cx;
        const Rgb col = hsv(t.instrument / 7.0 + 0.5, 0.35, 0.97);
        const int inst_class = segmentation_for_instrument(vocabulary.instrument(t.instrument), vocabulary);
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                const double u = (x + 0.5) / image_size;
                const double v = (y + 0.5) / image_size;
                if (!glyph_hit(t.instrument, u - cx, v - cy)) continue;
                img.at(y, x, 0) = 2.0 * col.r - 1.0;
                img.at(y, x, 1) = 2.0 * col.g - 1.0;
                img.at(y, x, 2) = 2.0 * col.b - 1.0;
                out.mask.ids[static_cast<std::size_t>(y) * image_size + x] = inst_class;
            }
    }
    img.clamp();

    auto& p = out.record.prompt;
    p.triplets = triplets;
    p.phase = phase;
    p.prompt_text = build_prompt(triplets, phase, vocabulary);
    return out;
}

LabeledRecord draw_toy_record(const std::vector<TripletLabel>& triplets, int phase, int image_size, double noise,
                              std::string image_id, const Vocabulary& vocabulary, Rng& rng) {
    auto rendered = render_toy_record(triplets, phase, image_size, vocabulary);
    add_noise(rendered.record.image, noise, rng);
    rendered.record.image.clamp();
    quantize_8bit(rendered.record.image);
    rendered.record.prompt.image_id = std::move(image_id);
    return std::move(rendered.record);
}

std::vector<ToyRecord> make_toy_records(std::uint64_t seed, const ToyConfig& config, const Vocabulary& vocabulary) {
    if (config.n_records <= 0) throw ArgumentError("n_records must be positive");
    if (config.image_size <= 0) throw ArgumentError("image_size must be positive");
    if (config.n_videos <= 0) throw ArgumentError("n_videos must be positive");
    vocabulary.validate();

    std::vector<std::pair<TripletLabel, double>> pool = config.triplet_pool;
    if (pool.empty())
        for (const auto& t : default_triplet_pool(vocabulary)) pool.emplace_back(t, 1.0);
    std::vector<double> tw;
    for (const auto& [t, w] : pool) {
        check_triplet(t, vocabulary);
        tw.push_back(w);
    }
    const auto triplet_cdf = cumulative_of(tw);
    std::vector<double> pw = config.phase_weights;
    if (pw.empty()) pw.assign(vocabulary.phases.size(), 1.0);
    if (pw.size() != vocabulary.phases.size()) throw ArgumentError("phase weight count does not match vocabulary");
    const auto phase_cdf = cumulative_of(pw);

    Rng rng(derive_seed(seed, "toy-dataset"));
    std::vector<ToyRecord> out;
    out.reserve(static_cast<std::size_t>(config.n_records));
    for (int i = 0; i < config.n_records; ++i) {
        std::vector<TripletLabel> triplets{pool[weighted_pick(triplet_cdf, rng)].first};
        if (uniform01(rng) < config.second_triplet_probability) {
            const auto second = pool[weighted_pick(triplet_cdf, rng)].first;
            if (second != triplets.front()) triplets.push_back(second);
        }
        const int phase = static_cast<int>(weighted_pick(phase_cdf, rng));
        auto rendered = render_toy_record(triplets, phase, config.image_size, vocabulary);
        add_noise(rendered.record.image, config.noise, rng);
        rendered.record.image.clamp();
        quantize_8bit(rendered.record.image);
        char id[32];
        std::snprintf(id, sizeof id, "v%02d_%05d", i % config.n_videos, i);
        rendered.record.prompt.image_id = id;
        out.push_back(std::move(rendered));
    }
    return out;
}

LabeledDataset make_toy_dataset(std::uint64_t seed, const ToyConfig& config, const Vocabulary& vocabulary) {
    LabeledDataset ds;
    ds.vocabulary = vocabulary;
    for (auto& r : make_toy_records(seed, config, vocabulary)) ds.records.push_back(std::move(r.record));
    return ds;
}

LabeledDataset make_toy_dataset(std::uint64_t seed, int n_records, int image_size, const Vocabulary& vocabulary) {
    ToyConfig cfg;
    cfg.n_records = n_records;
    cfg.image_size = image_size;
    return make_toy_dataset(seed, cfg, vocabulary);
}

// -- triplet map -----------------------------------------------------------

TripletMap parse_triplet_map(std::string_view text, const Vocabulary& vocabulary) {
    struct Raw {
        std::size_t line;
        std::array<std::string, 3> names;
    };
    std::map<int, Raw> raw;
    std::istringstream in{std::string(text)};
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const std::string body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto colon = body.find(':');
        if (colon == std::string::npos) throw ParseError(line_no, "expected 'id:instrument,verb,target'");
        const std::string id_text = trim(std::string_view(body).substr(0, colon));
        int id = 0;
        std::size_t used = 0;
        try {
            id = std::stoi(id_text, &used);
        } catch (const std::exception&) {
            throw ParseError(line_no, "invalid class id '" + id_text + "'");
        }
        if (used != id_text.size()) throw ParseError(line_no, "invalid class id '" + id_text + "'");

        std::array<std::string, 3> parts;
        std::string rest = body.substr(colon + 1);
        std::size_t start = 0;
        for (int k = 0; k < 3; ++k) {
            const auto comma = rest.find(',', start);
            if ((k < 2) != (comma != std::string::npos))
                throw ParseError(line_no, "expected exactly three comma-separated names");
            parts[static_cast<std::size_t>(k)] = trim(std::string_view(rest).substr(start, comma - start));
            if (parts[static_cast<std::size_t>(k)].empty()) throw ParseError(line_no, "empty name");
            start = comma == std::string::npos ? rest.size() : comma + 1;
        }
        if (!raw.emplace(id, Raw{line_no, parts}).second)
            throw ConflictError("duplicate triplet id " + std::to_string(id) + " at line " + std::to_string(line_no));
    }

    TripletMap map;
    auto resolve = [&](const std::string& name, auto index_of) {
        return name == vocabulary.null_token ? kNullIndex : index_of(name);
    };
    for (const auto& [id, r] : raw) {
        try {
            map[id] = {resolve(r.names[0], [&](auto& n) { return vocabulary.instrument_index(n); }),
                       resolve(r.names[1], [&](auto& n) { return vocabulary.verb_index(n); }),
                       resolve(r.names[2], [&](auto& n) { return vocabulary.target_index(n); })};
        } catch (const VocabularyError& e) {
            throw ParseError(r.line, e.what());
        }
    }
    return map;
}

std::string format_triplet_map(const TripletMap& map, const Vocabulary& v) {
    std::string out;
    auto name = [&](int i, const std::string& (Vocabulary::*get)(int) const) {
        return i == kNullIndex ? v.null_token : (v.*get)(i);
    };
    for (const auto& [id, t] : map)
        out += std::to_string(id) + ":" + name(t.instrument, &Vocabulary::instrument) + "," +
               name(t.verb, &Vocabulary::verb) + "," + name(t.target, &Vocabulary::target) + "\n";
    return out;
}

TripletMap default_triplet_map(const Vocabulary& vocabulary) {
    TripletMap map;
    int id = 0;
    for (const auto& t : default_triplet_pool(vocabulary)) map[id++] = t;
    return map;
}

// -- manifest --------------------------------------------------------------

std::string manifest_line(const PromptRecord& record, std::string_view image_path, const Vocabulary& v) {
    nlohmann::json j;
    j["image_id"] = record.image_id;
    j["image_path"] = image_path;
    auto name_or_null = [](int i, auto get) -> nlohmann::json { return i == kNullIndex ? nlohmann::json() : nlohmann::json(get(i)); };
    nlohmann::json inst = nlohmann::json::array(), verb = nlohmann::json::array(), targ = nlohmann::json::array();
    for (const auto& t : record.triplets) {
        inst.push_back(name_or_null(t.instrument, [&](int i) { return v.instrument(i); }));
        verb.push_back(name_or_null(t.verb, [&](int i) { return v.verb(i); }));
        targ.push_back(name_or_null(t.target, [&](int i) { return v.target(i); }));
    }
    j["instrument"] = inst;
    j["verb"] = verb;
    j["target"] = targ;
    j["phase"] = name_or_null(record.phase, [&](int i) { return v.phase(i); });
    j["is_segmented"] = record.is_segmented;
    if (record.is_segmented) {
        nlohmann::json classes = nlohmann::json::array();
        for (int c : record.classes) classes.push_back(v.segmentation_class(c));
        j["classes"] = classes;
    }
    return j.dump();
}

PromptRecord parse_manifest_line(std::string_view line, const Vocabulary& v, std::string* image_path,
                                 std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line_no, e.what());
    }
    static const std::set<std::string> known = {"image_id", "image_path", "instrument", "verb", "target",
                                                "phase",    "is_segmented", "classes",  "split"};
    try {
        for (const auto& [key, value] : j.items())
            if (!known.contains(key)) throw ParseError(line_no, "unknown manifest field '" + key + "'");
        PromptRecord r;
        r.image_id = j.at("image_id").get<std::string>();
        if (image_path) *image_path = j.at("image_path").get<std::string>();
        const auto& inst = j.at("instrument");
        const auto& verb = j.at("verb");
        const auto& targ = j.at("target");
        if (!inst.is_array() || inst.size() != verb.size() || inst.size() != targ.size())
            throw ParseError(line_no, "instrument/verb/target must be arrays of equal length");
        auto idx = [](const nlohmann::json& n, auto index_of) {
            return n.is_null() ? kNullIndex : index_of(n.get<std::string>());
        };
        for (std::size_t k = 0; k < inst.size(); ++k)
            r.triplets.push_back({idx(inst[k], [&](const std::string& s) { return v.instrument_index(s); }),
                                  idx(verb[k], [&](const std::string& s) { return v.verb_index(s); }),
                                  idx(targ[k], [&](const std::string& s) { return v.target_index(s); })});
        r.phase = idx(j.at("phase"), [&](const std::string& s) { return v.phase_index(s); });
        r.is_segmented = j.at("is_segmented").get<bool>();
        if (j.contains("classes"))
            for (const auto& c : j["classes"]) r.classes.push_back(v.segmentation_index(c.get<std::string>()));
        r.prompt_text = render_prompt(r, v);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line_no, e.what());
    } catch (const VocabularyError& e) {
        throw ParseError(line_no, e.what());
    }
}

void write_manifest(const LabeledDataset& dataset, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
    std::ofstream out(dir / "manifest.jsonl");
    if (!out) throw IoError("cannot open " + (dir / "manifest.jsonl").string());
    for (const auto& rec : dataset.records) {
        const std::string rel = "images/" + rec.prompt.image_id + ".png";
        write_png(dir / rel, rec.image);
        auto j = nlohmann::json::parse(manifest_line(rec.prompt, rel, dataset.vocabulary));
        j["split"] = to_string(dataset.split);
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + (dir / "manifest.jsonl").string());
}

LabeledDataset read_manifest(const std::filesystem::path& manifest_path, const Vocabulary& vocabulary) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open " + manifest_path.string());
    LabeledDataset ds;
    ds.vocabulary = vocabulary;
    std::size_t line_no = 0;
    bool split_seen = false;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::string rel;
        auto prompt = parse_manifest_line(line, vocabulary, &rel, line_no);
        const auto j = nlohmann::json::parse(line);
        if (j.contains("split")) {
            const Split s = split_from_string(j["split"].get<std::string>());
            if (split_seen && s != ds.split) throw ParseError(line_no, "mixed splits in one manifest");
            ds.split = s;
            split_seen = true;
        }
        auto image = read_png(manifest_path.parent_path() / rel);
        ds.records.push_back({std::move(prompt), std::move(image)});
    }
    return ds;
}

}  // namespace lapsynth
