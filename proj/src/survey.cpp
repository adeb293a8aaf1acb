#include "lapsynth/survey.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lapsynth/errors.hpp"

namespace lapsynth {

namespace {

template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng() % i)]);
}

nlohmann::json optional_rate(const std::optional<double>& r) { return r ? nlohmann::json(*r) : nlohmann::json(); }

}  // namespace

// -- pool ------------------------------------------------------------------

const SurveyQuestion* SurveyPool::find(const std::string& question_id) const {
    for (const auto& q : questions)
        if (q.question_id == question_id) return &q;
    return nullptr;
}

SurveyPool make_question_pool(const std::vector<SurveyImage>& real, const std::vector<SynthPool>& synthetic,
                              const PoolOptions& options, Rng& rng) {
    if (options.n_questions < 0) throw ArgumentError("question count must be non-negative");
    if (options.min_real < 0 || options.max_real > kGridSize || options.min_real > options.max_real)
        throw ArgumentError("real-image range must satisfy 0 <= min <= max <= 9");
    SurveyPool pool;
    if (options.n_questions == 0) return pool;
    if (synthetic.empty()) throw ArgumentError("no synthetic pools given");

    std::set<std::string> seen;
    auto register_image = [&](const SurveyImage& img) {
        if (img.id.empty()) throw ArgumentError("image id must not be empty");
        if (!seen.insert(img.id).second) throw ArgumentError("duplicate image id '" + img.id + "'");
        pool.images[img.id] = img.path;
    };

    std::vector<std::size_t> real_order(real.size());
    std::iota(real_order.begin(), real_order.end(), std::size_t{0});
    shuffle_in_place(real_order, rng);
    std::vector<std::vector<std::size_t>> synth_order;
    for (const auto& s : synthetic) {
        synth_order.emplace_back(s.images.size());
        std::iota(synth_order.back().begin(), synth_order.back().end(), std::size_t{0});
        shuffle_in_place(synth_order.back(), rng);
    }
    std::size_t next_real = 0;
    std::vector<std::size_t> next_synth(synthetic.size(), 0);
    auto take_real = [&]() -> const SurveyImage& {
        if (next_real >= real_order.size()) throw ArgumentError("insufficient real images for the question pool");
        return real[real_order[next_real++]];
    };

    std::uniform_int_distribution<int> n_real_dist(options.min_real, options.max_real);
    for (int k = 0; k < options.n_questions; ++k) {
        const auto tag_index = static_cast<std::size_t>(k) % synthetic.size();
        const auto& source = synthetic[tag_index];
        SurveyQuestion q;
        char id[16];
        std::snprintf(id, sizeof id, "q%02d", k + 1);
        q.question_id = id;
        q.model_tag = source.model_tag;
        const int n_real = n_real_dist(rng);
        std::vector<std::pair<const SurveyImage*, bool>> cells;
        for (int i = 0; i < n_real; ++i) cells.emplace_back(&take_real(), true);
        for (int i = n_real; i < kGridSize; ++i) {
            auto& cursor = next_synth[tag_index];
            if (cursor >= synth_order[tag_index].size())
                throw ArgumentError("insufficient synthetic images for model '" + source.model_tag + "'");
            cells.emplace_back(&source.images[synth_order[tag_index][cursor++]], false);
        }
        shuffle_in_place(cells, rng);
        for (int i = 0; i < kGridSize; ++i) {
            register_image(*cells[static_cast<std::size_t>(i)].first);
            q.image_ids[static_cast<std::size_t>(i)] = cells[static_cast<std::size_t>(i)].first->id;
            q.truth[static_cast<std::size_t>(i)] = cells[static_cast<std::size_t>(i)].second;
        }
        pool.questions.push_back(std::move(q));
    }

    if (options.attention_check) {
        SurveyQuestion q;
        q.question_id = "attention";
        q.is_attention_check = true;
        q.instruction = kAttentionInstruction;
        for (int i = 0; i < kGridSize; ++i) {
            const auto& img = take_real();
            register_image(img);
            q.image_ids[static_cast<std::size_t>(i)] = img.id;
            q.truth[static_cast<std::size_t>(i)] = true;
        }
        pool.questions.push_back(std::move(q));
    }
    return pool;
}

std::string pool_to_json(const SurveyPool& pool) {
    nlohmann::json j;
    j["questions"] = nlohmann::json::array();
    for (const auto& q : pool.questions) {
        nlohmann::json jq;
        jq["question_id"] = q.question_id;
        jq["image_ids"] = q.image_ids;
        jq["truth"] = q.truth;
        jq["model_tag"] = q.model_tag;
        jq["is_attention_check"] = q.is_attention_check;
        jq["instruction"] = q.instruction;
        j["questions"].push_back(std::move(jq));
    }
    j["images"] = nlohmann::json::object();
    for (const auto& [id, path] : pool.images) j["images"][id] = path.string();
    return j.dump(2) + "\n";
}

SurveyPool pool_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        SurveyPool pool;
        for (const auto& jq : j.at("questions")) {
            SurveyQuestion q;
            q.question_id = jq.at("question_id").get<std::string>();
            q.image_ids = jq.at("image_ids").get<std::array<std::string, kGridSize>>();
            q.truth = jq.at("truth").get<std::array<bool, kGridSize>>();
            q.model_tag = jq.at("model_tag").get<std::string>();
            q.is_attention_check = jq.at("is_attention_check").get<bool>();
            q.instruction = jq.value("instruction", "");
            if (pool.find(q.question_id)) throw ParseError(1, "duplicate question id '" + q.question_id + "'");
            pool.questions.push_back(std::move(q));
        }
        for (const auto& [id, path] : j.at("images").items()) pool.images[id] = path.get<std::string>();
        return pool;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(1, std::string("malformed pool: ") + e.what());
    }
}

void save_pool(const SurveyPool& pool, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << pool_to_json(pool);
    if (!out) throw IoError("write failed for " + path.string());
}

SurveyPool load_pool(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return pool_from_json(buf.str());
}

// -- responses -------------------------------------------------------------

void validate_response(const SurveyResponse& r) {
    if (r.participant_id.empty()) throw ArgumentError("participant id is missing");
    if (r.question_id.empty()) throw ArgumentError("question id is missing");
    std::set<int> seen;
    for (int p : r.selected) {
        if (p < 0 || p >= kGridSize) throw ArgumentError("selected position " + std::to_string(p) + " is outside 0..8");
        if (!seen.insert(p).second) throw ArgumentError("selected position " + std::to_string(p) + " repeats");
    }
}

std::string response_to_json_line(const SurveyResponse& r) {
    nlohmann::json j;
    j["participant_id"] = r.participant_id;
    j["question_id"] = r.question_id;
    j["selected"] = r.selected;
    j["timestamp"] = r.timestamp;
    return j.dump();
}

SurveyResponse response_from_json_line(const std::string& line, std::size_t line_no) {
    try {
        const auto j = nlohmann::json::parse(line);
        SurveyResponse r;
        r.participant_id = j.at("participant_id").get<std::string>();
        r.question_id = j.at("question_id").get<std::string>();
        r.selected = j.at("selected").get<std::vector<int>>();
        r.timestamp = j.value("timestamp", "");
        validate_response(r);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line_no, e.what());
    } catch (const ArgumentError& e) {
        throw ParseError(line_no, e.what());
    }
}

std::vector<SurveyResponse> read_response_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<SurveyResponse> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        out.push_back(response_from_json_line(line, line_no));
    }
    return out;
}

// -- scoring ---------------------------------------------------------------

std::optional<double> SurveyScore::tpr() const {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> SurveyScore::fpr() const {
    if (fp + tn == 0) return std::nullopt;
    return static_cast<double>(fp) / static_cast<double>(fp + tn);
}

std::string format_percent(double rate, int decimals) {
    if (decimals < 0 || decimals > 10) throw ArgumentError("decimals must be in 0..10");
    const double scale = std::pow(10.0, decimals);
    const double rounded = std::round(rate * 100.0 * scale) / scale;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f%%", decimals, rounded);
    return buf;
}

std::map<std::string, SurveyScore> score(const std::vector<SurveyResponse>& responses, const SurveyPool& pool) {
    std::set<std::string> orphans;
    for (const auto& r : responses)
        if (!pool.find(r.question_id)) orphans.insert(r.question_id);
    if (!orphans.empty()) {
        std::string ids;
        for (const auto& id : orphans) ids += (ids.empty() ? "" : ", ") + id;
        throw ScoringError("responses reference unknown questions: " + ids);
    }

    std::set<std::string> failed;
    for (const auto& r : responses) {
        const auto* q = pool.find(r.question_id);
        if (q->is_attention_check && static_cast<int>(std::set<int>(r.selected.begin(), r.selected.end()).size()) != kGridSize)
            failed.insert(r.participant_id);
    }

    std::map<std::string, SurveyScore> out;
    for (const auto& q : pool.questions)
        if (!q.is_attention_check) out[q.model_tag];
    for (const auto& r : responses) {
        validate_response(r);
        if (failed.count(r.participant_id)) continue;
        const auto* q = pool.find(r.question_id);
        if (q->is_attention_check) continue;
        std::array<bool, kGridSize> marked{};
        for (int p : r.selected) marked[static_cast<std::size_t>(p)] = true;
        auto& s = out[q->model_tag];
        for (std::size_t i = 0; i < kGridSize; ++i) {
            if (q->truth[i])
                ++(marked[i] ? s.tp : s.fn);
            else
                ++(marked[i] ? s.fp : s.tn);
        }
    }
    return out;
}

std::string scores_to_json(const std::map<std::string, SurveyScore>& scores) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [tag, s] : scores) {
        j[tag] = {{"tp", s.tp}, {"fp", s.fp}, {"tn", s.tn}, {"fn", s.fn}, {"tpr", optional_rate(s.tpr())},
                  {"fpr", optional_rate(s.fpr())}};
        if (s.tpr()) j[tag]["tpr_percent"] = format_percent(*s.tpr());
        if (s.fpr()) j[tag]["fpr_percent"] = format_percent(*s.fpr());
    }
    return j.dump(2) + "\n";
}

std::vector<std::size_t> participant_order(const SurveyPool& pool, const std::string& participant_id, std::uint64_t seed) {
    std::vector<std::size_t> order(pool.questions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "participant-order", fnv1a64(participant_id)));
    shuffle_in_place(order, rng);
    return order;
}

}  // namespace lapsynth
