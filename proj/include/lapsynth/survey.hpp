#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lapsynth/rng.hpp"

namespace lapsynth {

inline constexpr int kGridSize = 9;

struct SurveyImage {
    std::string id;
    std::filesystem::path path;
};

/// Generated images from one model, tagged with the model name.
struct SynthPool {
    std::string model_tag;
    std::vector<SurveyImage> images;
};

struct SurveyQuestion {
    std::string question_id;
    std::array<std::string, kGridSize> image_ids;
    /// true = actual image.
    std::array<bool, kGridSize> truth{};
    std::string model_tag;
    bool is_attention_check = false;
    std::string instruction;
};

struct SurveyPool {
    std::vector<SurveyQuestion> questions;
    /// Image id to file, for every image referenced by a question.
    std::map<std::string, std::filesystem::path> images;

    const SurveyQuestion* find(const std::string& question_id) const;
};

struct PoolOptions {
    int n_questions = 20;
    int min_real = 0;
    int max_real = kGridSize;
    bool attention_check = true;
};

inline constexpr const char* kAttentionInstruction = "Attention check: select all nine images.";

/// Scored questions cycle over the synthetic pools; each draws its real count
/// uniformly from [min_real, max_real] and shuffles positions. When enabled
/// and n_questions > 0, one all-real attention check is added. No image is
/// used twice.
SurveyPool make_question_pool(const std::vector<SurveyImage>& real, const std::vector<SynthPool>& synthetic,
                              const PoolOptions& options, Rng& rng);

std::string pool_to_json(const SurveyPool& pool);
SurveyPool pool_from_json(const std::string& text);
void save_pool(const SurveyPool& pool, const std::filesystem::path& path);
SurveyPool load_pool(const std::filesystem::path& path);

struct SurveyResponse {
    std::string participant_id;
    std::string question_id;
    /// Positions marked as real, in [0, 9), duplicate-free.
    std::vector<int> selected;
    std::string timestamp;
};

/// Throws ArgumentError with the reason when a response is malformed.
void validate_response(const SurveyResponse& response);

std::string response_to_json_line(const SurveyResponse& response);
SurveyResponse response_from_json_line(const std::string& line, std::size_t line_no = 1);
std::vector<SurveyResponse> read_response_log(const std::filesystem::path& path);

struct SurveyScore {
    long tp = 0;
    long fp = 0;
    long tn = 0;
    long fn = 0;

    /// TP / (TP + FN); empty without actual-image exposures.
    std::optional<double> tpr() const;
    /// FP / (FP + TN); empty without synthetic exposures.
    std::optional<double> fpr() const;
};

/// Rate as a percentage rounded half away from zero to `decimals` places.
std::string format_percent(double rate, int decimals = 2);

/// Per-model confusion counts. Participants who answered an attention check
/// without selecting every image are dropped; attention checks are not
/// counted. Unknown question ids raise ScoringError.
std::map<std::string, SurveyScore> score(const std::vector<SurveyResponse>& responses, const SurveyPool& pool);

std::string scores_to_json(const std::map<std::string, SurveyScore>& scores);

/// Question order for a participant, seeded by the participant id.
std::vector<std::size_t> participant_order(const SurveyPool& pool, const std::string& participant_id,
                                           std::uint64_t seed);

struct SurveyServiceConfig {
    std::filesystem::path log_path;
    /// Empty disables the results endpoint.
    std::string admin_token;
    std::uint64_t order_seed = 0;
};

/// HTTP front end over a question pool with an append-only JSON-lines log.
class SurveyService {
public:
    SurveyService(SurveyPool pool, SurveyServiceConfig config);
    ~SurveyService();

    SurveyService(const SurveyService&) = delete;
    SurveyService& operator=(const SurveyService&) = delete;

    /// Binds and starts serving on a background thread. Port 0 picks a free
    /// port. Returns the bound port; throws IoError on bind failure.
    int start(const std::string& host, int port);
    /// Serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace lapsynth
