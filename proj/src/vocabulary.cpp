#include "lapsynth/vocabulary.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <utility>

#include "lapsynth/errors.hpp"
#include "lapsynth/rng.hpp"

namespace lapsynth {
namespace {

void check_list(const std::vector<std::string>& names, const char* what, const std::string& null_token) {
    if (names.empty()) throw VocabularyError(std::string(what) + " list is empty");
    std::set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) throw VocabularyError(std::string(what) + " list contains an empty name");
        if (!seen.insert(n).second) throw VocabularyError(std::string(what) + " name repeats: " + n);
        if (n == null_token) throw VocabularyError(std::string(what) + " list contains the null token");
    }
}

const std::string& lookup(const std::vector<std::string>& names, int i, const char* what) {
    if (i < 0 || i >= static_cast<int>(names.size()))
        throw VocabularyError(std::string(what) + " index out of range: " + std::to_string(i));
    return names[static_cast<std::size_t>(i)];
}

int find(const std::vector<std::string>& names, std::string_view name, const char* what) {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw VocabularyError(std::string("unknown ") + what + ": " + std::string(name));
    return static_cast<int>(it - names.begin());
}

std::vector<std::string> split_ws(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

}  // namespace

void Vocabulary::validate() const {
    if (null_token.empty()) throw VocabularyError("null token is empty");
    check_list(instruments, "instrument", null_token);
    check_list(verbs, "verb", null_token);
    check_list(targets, "target", null_token);
    check_list(phases, "phase", null_token);
    check_list(segmentation_classes, "segmentation class", null_token);
}

const std::string& Vocabulary::instrument(int i) const { return lookup(instruments, i, "instrument"); }
const std::string& Vocabulary::verb(int i) const { return lookup(verbs, i, "verb"); }
const std::string& Vocabulary::target(int i) const { return lookup(targets, i, "target"); }
const std::string& Vocabulary::phase(int i) const { return lookup(phases, i, "phase"); }
const std::string& Vocabulary::segmentation_class(int i) const {
    return lookup(segmentation_classes, i, "segmentation class");
}

int Vocabulary::instrument_index(std::string_view name) const { return find(instruments, name, "instrument"); }
int Vocabulary::verb_index(std::string_view name) const { return find(verbs, name, "verb"); }
int Vocabulary::target_index(std::string_view name) const { return find(targets, name, "target"); }
int Vocabulary::phase_index(std::string_view name) const { return find(phases, name, "phase"); }
int Vocabulary::segmentation_index(std::string_view name) const {
    return find(segmentation_classes, name, "segmentation class");
}

std::vector<std::string> Vocabulary::words() const {
    std::set<std::string> all{std::string(kConnectiveAnd), std::string(kConnectiveIn)};
    for (const auto* list : {&instruments, &verbs, &targets, &phases, &segmentation_classes})
        for (const auto& name : *list)
            for (auto& w : split_ws(name)) all.insert(std::move(w));
    all.erase(null_token);
    return {all.begin(), all.end()};
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = fnv1a64(null_token);
    for (const auto* list : {&instruments, &verbs, &targets, &phases, &segmentation_classes}) {
        h = fnv1a64("|", h);
        for (const auto& name : *list) h = fnv1a64(name + ";", h);
    }
    return h;
}

Vocabulary default_vocabulary() {
    Vocabulary v;
    v.instruments = {"grasper", "bipolar", "hook", "scissors", "clipper", "irrigator", "specimen bag"};
    v.verbs = {"grasp", "retract", "dissect", "coagulate", "clip", "cut", "aspirate", "irrigate", "pack"};
    v.targets = {"gallbladder",   "cystic plate", "cystic duct", "cystic artery", "cystic pedicle",
                 "blood vessel",  "fluid",        "abdominal wall cavity",        "liver",
                 "adhesion",      "omentum",      "peritoneum",  "gut",           "specimen bag"};
    v.phases = {"preparation",           "calot triangle dissection", "clipping cutting",
                "gallbladder dissection", "gallbladder packaging",     "cleaning coagulation",
                "gallbladder extraction"};
    v.segmentation_classes = {"background",  "abdominal wall", "liver",       "gastrointestinal tract", "fat",
                              "grasper",     "connective tissue", "blood",    "cystic duct",            "hook",
                              "gallbladder", "hepatic vein",      "liver ligament"};
    v.null_token = "null";
    return v;
}

EmbeddingTable::EmbeddingTable(std::vector<std::string> words, Eigen::MatrixXd rows)
    : words_(std::move(words)), rows_(std::move(rows)) {
    if (rows_.rows() != static_cast<Eigen::Index>(words_.size()) + 1)
        throw ShapeError("embedding table needs one row per word plus a null row");
    if (!std::is_sorted(words_.begin(), words_.end())) throw ArgumentError("embedding words must be sorted");
}

EmbeddingTable EmbeddingTable::initialize(const Vocabulary& vocabulary, int dim, std::uint64_t seed) {
    if (dim <= 0) throw ArgumentError("embedding dimension must be positive");
    auto words = vocabulary.words();
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(words.size()) + 1, dim);
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        for (Eigen::Index j = 0; j < rows.cols(); ++j) rows(i, j) = dist(rng);
    return EmbeddingTable(std::move(words), std::move(rows));
}

std::vector<int> EmbeddingTable::token_ids(std::string_view prompt, std::string_view null_token) const {
    std::vector<int> ids;
    for (const auto& tok : split_ws(prompt)) {
        if (tok == null_token) {
            ids.push_back(null_id());
            continue;
        }
        auto it = std::lower_bound(words_.begin(), words_.end(), tok);
        if (it == words_.end() || *it != tok) throw VocabularyError("unknown token: " + tok);
        ids.push_back(static_cast<int>(it - words_.begin()));
    }
    if (ids.empty()) throw VocabularyError("empty prompt");
    return ids;
}

Eigen::VectorXd EmbeddingTable::encode_ids(const std::vector<int>& ids) const {
    if (ids.empty()) throw ArgumentError("no token ids");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim());
    for (int id : ids) {
        if (id < 0 || id > null_id()) throw ArgumentError("token id out of range");
        sum += rows_.row(id).transpose();
    }
    return sum / static_cast<double>(ids.size());
}

std::uint64_t EmbeddingTable::words_hash() const {
    std::uint64_t h = fnv1a64("words");
    for (const auto& w : words_) h = fnv1a64(w + ";", h);
    return h;
}

Eigen::VectorXd encode_condition(std::string_view prompt_text, const Vocabulary& vocabulary,
                                 const EmbeddingTable& table) {
    const auto allowed = vocabulary.words();
    for (const auto& tok : split_ws(prompt_text)) {
        if (tok == vocabulary.null_token) continue;
        if (!std::binary_search(allowed.begin(), allowed.end(), tok))
            throw VocabularyError("unknown token: " + tok);
    }
    return table.encode_ids(table.token_ids(prompt_text, vocabulary.null_token));
}

}  // namespace lapsynth
