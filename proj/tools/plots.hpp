#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lapsynth::cli {

/// A report file with the model tag it belongs to. An empty tag is filled
/// from the report itself or, failing that, from the parent directory name.
struct TaggedPath {
    std::string tag;
    std::filesystem::path path;
};

/// Parses "tag=path" or a bare "path".
TaggedPath parse_tagged_path(const std::string& text);

struct PlotInputs {
    /// fidelity.json files written by eval-fidelity.
    std::vector<TaggedPath> fidelity;
    /// id,x,y,source files written by eval-tsne.
    std::vector<TaggedPath> tsne;
    /// mix_report.json files written by downstream.
    std::vector<TaggedPath> mix;

    bool empty() const noexcept { return fidelity.empty() && tsne.empty() && mix.empty(); }
};

/// Metric-vs-psi curves, t-SNE scatters and delta-RAP bands as SVG, each
/// next to the CSV it was drawn from. Returns the written files in order.
/// Throws ArgumentError when no report is given and IoError naming the path
/// when a report is missing.
std::vector<std::filesystem::path> emit_plots(const PlotInputs& inputs, const std::filesystem::path& out_dir);

}  // namespace lapsynth::cli
