#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lapsynth/image.hpp"
#include "lapsynth/rng.hpp"
#include "lapsynth/vocabulary.hpp"

namespace lapsynth {

struct TripletLabel {
    int instrument = kNullIndex;
    int verb = kNullIndex;
    int target = kNullIndex;

    bool has_null() const noexcept {
        return instrument == kNullIndex || verb == kNullIndex || target == kNullIndex;
    }
    friend auto operator<=>(const TripletLabel&, const TripletLabel&) = default;
};

struct PromptRecord {
    std::string image_id;
    std::vector<TripletLabel> triplets;
    int phase = kNullIndex;
    /// Segmentation class ids shown in the image (segmented pairs only).
    std::vector<int> classes;
    std::string prompt_text;
    bool is_segmented = false;

    /// Group key used for leakage-free folds: the image id prefix before '_'.
    std::string group() const;

    friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

struct LabeledRecord {
    PromptRecord prompt;
    ImageTensor image;
};

enum class Split { Train, Val, Test };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct LabeledDataset {
    std::vector<LabeledRecord> records;
    Vocabulary vocabulary;
    Split split = Split::Train;

    std::size_t size() const noexcept { return records.size(); }

    /// Throws when empty or when any record index is invalid.
    void validate() const;
};

// -- prompts ---------------------------------------------------------------

/// Renders triplets and phase as "<instr> <verb> <target> ... in <phase>".
/// Adjacent triplets sharing verb and target are merged ("hook and grasper
/// grasp gallbladder"); other triplets are joined with " and ". Triplets with
/// any null component are dropped; a null phase drops " in <phase>".
std::string build_prompt(const std::vector<TripletLabel>& triplets, int phase, const Vocabulary& vocabulary);

std::string build_segmented_prompt(const std::vector<std::string>& class_names);

/// Rebuilds prompt_text from the record's labels.
std::string render_prompt(const PromptRecord& record, const Vocabulary& vocabulary);

// -- transforms ------------------------------------------------------------

ImageTensor hflip(const ImageTensor& image);
ImageTensor center_crop(const ImageTensor& image, int out_size);

/// Downscales the shorter side to out_size (anti-aliased), center-crops to a
/// square and, when `flip` is set, mirrors horizontally with probability 0.5.
/// Inputs whose shorter side is below out_size are rejected.
ImageTensor transform_image(const ImageTensor& image, int out_size, bool flip, Rng& rng);

// -- segmented pairs -------------------------------------------------------

struct SegmentedPairOptions {
    /// One record per visible class.
    bool singles = true;
    /// One extra record with every visible class when more than one is present.
    bool combined = true;
    /// Class id treated as unlabeled background.
    int background_class = 0;
};

std::vector<LabeledRecord> make_segmented_pairs(const ImageTensor& image, const ClassMask& mask,
                                                const Vocabulary& vocabulary, std::string_view base_id,
                                                const SegmentedPairOptions& options = {});

// -- toy corpus ------------------------------------------------------------

struct ToyConfig {
    int n_records = 2048;
    int image_size = 16;
    /// Triplet pool with sampling weights; empty means default_triplet_pool().
    std::vector<std::pair<TripletLabel, double>> triplet_pool;
    /// Per-phase weights; empty means uniform.
    std::vector<double> phase_weights;
    double second_triplet_probability = 0.15;
    int n_videos = 16;
    /// Uniform pixel noise amplitude, in [-1,1] units.
    double noise = 0.04;
};

struct ToyRecord {
    LabeledRecord record;
    ClassMask mask;
};

/// Triplet classes used by the toy corpus (ids are positions in the list).
std::vector<TripletLabel> default_triplet_pool(const Vocabulary& vocabulary);

/// Deterministic procedural rendering of one label combination (no noise).
ToyRecord render_toy_record(const std::vector<TripletLabel>& triplets, int phase, int image_size,
                            const Vocabulary& vocabulary);

LabeledDataset make_toy_dataset(std::uint64_t seed, const ToyConfig& config, const Vocabulary& vocabulary);
LabeledDataset make_toy_dataset(std::uint64_t seed, int n_records, int image_size, const Vocabulary& vocabulary);

/// Toy records with their segmentation masks, same draw as make_toy_dataset.
std::vector<ToyRecord> make_toy_records(std::uint64_t seed, const ToyConfig& config, const Vocabulary& vocabulary);

/// Renders a record for the given labels with seeded noise (used to draw
/// "true distribution" synthetic items).
LabeledRecord draw_toy_record(const std::vector<TripletLabel>& triplets, int phase, int image_size,
                              double noise, std::string image_id, const Vocabulary& vocabulary, Rng& rng);

// -- triplet map -----------------------------------------------------------

using TripletMap = std::map<int, TripletLabel>;

/// Parses "id:instrument,verb,target" lines. Blank lines and '#' comments are
/// skipped.
TripletMap parse_triplet_map(std::string_view text, const Vocabulary& vocabulary);
std::string format_triplet_map(const TripletMap& map, const Vocabulary& vocabulary);
TripletMap default_triplet_map(const Vocabulary& vocabulary);

// -- manifest --------------------------------------------------------------

/// Writes <dir>/manifest.jsonl plus one PNG per record under <dir>/images.
void write_manifest(const LabeledDataset& dataset, const std::filesystem::path& dir);
LabeledDataset read_manifest(const std::filesystem::path& manifest_path, const Vocabulary& vocabulary);

/// One JSON line per record, without touching image files.
std::string manifest_line(const PromptRecord& record, std::string_view image_path, const Vocabulary& vocabulary);
PromptRecord parse_manifest_line(std::string_view line, const Vocabulary& vocabulary, std::string* image_path,
                                 std::size_t line_no = 1);

}  // namespace lapsynth
