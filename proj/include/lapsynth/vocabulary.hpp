#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace lapsynth {

/// Sentinel index for an absent category.
inline constexpr int kNullIndex = -1;

struct Vocabulary {
    std::vector<std::string> instruments;
    std::vector<std::string> verbs;
    std::vector<std::string> targets;
    std::vector<std::string> phases;
    std::vector<std::string> segmentation_classes;
    std::string null_token = "null";

    /// Throws VocabularyError when a list is empty, a name repeats within a
    /// list, or the null token collides with a name.
    void validate() const;

    const std::string& instrument(int i) const;
    const std::string& verb(int i) const;
    const std::string& target(int i) const;
    const std::string& phase(int i) const;
    const std::string& segmentation_class(int i) const;

    int instrument_index(std::string_view name) const;
    int verb_index(std::string_view name) const;
    int target_index(std::string_view name) const;
    int phase_index(std::string_view name) const;
    int segmentation_index(std::string_view name) const;

    /// Sorted, de-duplicated whitespace tokens of every name plus the
    /// connectives; excludes the null token.
    std::vector<std::string> words() const;

    std::uint64_t hash() const;
};

/// Surgical vocabulary: 7 instruments, 9 verbs, 14 targets, 7 phases and the
/// 13 segmentation classes (index 0 is the unlabeled background).
Vocabulary default_vocabulary();

inline constexpr std::string_view kConnectiveAnd = "and";
inline constexpr std::string_view kConnectiveIn = "in";

/// Learned per-word embedding rows plus a dedicated null row.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::vector<std::string> words, Eigen::MatrixXd rows);

    /// Seeded N(0, 1/dim) initialization over vocabulary.words().
    static EmbeddingTable initialize(const Vocabulary& vocabulary, int dim, std::uint64_t seed);

    int dim() const noexcept { return static_cast<int>(rows_.cols()); }
    int word_count() const noexcept { return static_cast<int>(words_.size()); }
    int null_id() const noexcept { return word_count(); }

    const std::vector<std::string>& words() const noexcept { return words_; }
    const Eigen::MatrixXd& rows() const noexcept { return rows_; }
    Eigen::MatrixXd& rows() noexcept { return rows_; }

    /// Row ids of the prompt's whitespace tokens; the null token maps to
    /// null_id(). Unknown tokens raise VocabularyError naming the token.
    std::vector<int> token_ids(std::string_view prompt, std::string_view null_token = "null") const;

    Eigen::VectorXd encode_ids(const std::vector<int>& ids) const;
    Eigen::VectorXd null_embedding() const { return rows_.row(null_id()).transpose(); }

    std::uint64_t words_hash() const;

private:
    std::vector<std::string> words_;
    Eigen::MatrixXd rows_;  // (word_count + 1) x dim, last row = null
};

/// Mean of the token rows of `prompt_text`; the bare null token yields the
/// null row.
Eigen::VectorXd encode_condition(std::string_view prompt_text, const Vocabulary& vocabulary,
                                 const EmbeddingTable& table);

}  // namespace lapsynth
