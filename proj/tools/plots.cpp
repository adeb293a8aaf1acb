#include "plots.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lapsynth/errors.hpp"

namespace lapsynth::cli {

namespace {

namespace fs = std::filesystem;

constexpr double kWidth = 520, kHeight = 340;
constexpr double kLeft = 70, kRight = 130, kTop = 36, kBottom = 48;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string csv_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string file_stem_for(const std::string& tag) {
    std::string out;
    for (char c : tag) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out.empty() ? "untagged" : out;
}

std::string read_report(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("report not found: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read report " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

nlohmann::json read_json_report(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_report(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(1, path.string() + ": " + e.what());
    }
}

std::string default_tag(const TaggedPath& p) {
    if (!p.tag.empty()) return p.tag;
    const auto parent = p.path.parent_path().filename().string();
    return parent.empty() ? p.path.stem().string() : parent;
}

void write_text(const fs::path& path, const std::string& text, std::vector<fs::path>& written) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
    written.push_back(path);
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void settle() {
        if (!std::isfinite(lo)) lo = 0, hi = 1;
        if (hi - lo < 1e-12) {
            const double pad = std::max(std::abs(lo) * 0.1, 1e-3);
            lo -= pad;
            hi += pad;
        } else {
            const double pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
    }
};

class Svg {
public:
    Svg(std::string title, std::string x_label, std::string y_label, Range x, Range y)
        : x_(x), y_(y) {
        x_.settle();
        y_.settle();
        body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
              << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
              << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
              << "<text x=\"" << num(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
              << xml_escape(title) << "</text>\n";
        axes(x_label, y_label);
    }

    double px(double x) const { return kLeft + (x - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom); }

    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
        body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) body_ << (i ? " " : "") << num(px(pts[i].first)) << ',' << num(py(pts[i].second));
        body_ << "\"/>\n";
        for (const auto& [x, y] : pts)
            body_ << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    }

    void band(const std::vector<double>& xs, const std::vector<double>& lo, const std::vector<double>& hi,
              const std::string& color) {
        body_ << "<polygon fill=\"" << color << "\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i) body_ << (i ? " " : "") << num(px(xs[i])) << ',' << num(py(hi[i]));
        for (std::size_t i = xs.size(); i-- > 0;) body_ << ' ' << num(px(xs[i])) << ',' << num(py(lo[i]));
        body_ << "\"/>\n";
    }

    void dot(double x, double y, const std::string& color) {
        body_ << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"2\" fill=\"" << color
              << "\" fill-opacity=\"0.7\"/>\n";
    }

    void hline(double y, const std::string& color) {
        if (y < y_.lo || y > y_.hi) return;
        body_ << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(py(y)) << "\" x2=\"" << num(kWidth - kRight) << "\" y2=\""
              << num(py(y)) << "\" stroke=\"" << color << "\" stroke-dasharray=\"4 3\"/>\n";
    }

    void legend(const std::vector<std::pair<std::string, std::string>>& entries) {
        double y = kTop + 8;
        for (const auto& [name, color] : entries) {
            const double x = kWidth - kRight + 12;
            body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 8) << "\" width=\"10\" height=\"10\" fill=\"" << color
                  << "\"/>\n<text x=\"" << num(x + 14) << "\" y=\"" << num(y + 1) << "\">" << xml_escape(name) << "</text>\n";
            y += 16;
        }
    }

    std::string str() const { return body_.str() + "</svg>\n"; }

private:
    void axes(const std::string& x_label, const std::string& y_label) {
        const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
        body_ << "<path fill=\"none\" stroke=\"black\" d=\"M" << num(x0) << ',' << num(y1) << " V" << num(y0) << " H" << num(x1)
              << "\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double xv = x_.lo + (x_.hi - x_.lo) * i / 4.0, yv = y_.lo + (y_.hi - y_.lo) * i / 4.0;
            body_ << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(px(xv)) << "\" y2=\""
                  << num(y0 + 4) << "\" stroke=\"black\"/>\n"
                  << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(y0 + 16) << "\" text-anchor=\"middle\">" << label(xv)
                  << "</text>\n"
                  << "<line x1=\"" << num(x0 - 4) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(x0) << "\" y2=\""
                  << num(py(yv)) << "\" stroke=\"black\"/>\n"
                  << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << label(yv)
                  << "</text>\n";
        }
        body_ << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 10) << "\" text-anchor=\"middle\">"
              << xml_escape(x_label) << "</text>\n"
              << "<text x=\"14\" y=\"" << num((y0 + y1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
              << num((y0 + y1) / 2) << ")\">" << xml_escape(y_label) << "</text>\n";
    }

    Range x_, y_;
    std::ostringstream body_;
};

struct FidelityPoint {
    double psi;
    std::map<std::string, double> values;
};

const std::vector<std::pair<std::string, std::string>> kFidelityMetrics = {
    {"frechet", "Fréchet (projection, nearest resize)"},
    {"frechet_clean", "Fréchet (projection, clean resize)"},
    {"frechet_alt", "Fréchet (recognizer features)"},
    {"kid_mean", "KID (projection, nearest resize)"},
};

void fidelity_plots(const std::vector<TaggedPath>& inputs, const fs::path& out_dir, std::vector<fs::path>& written) {
    std::vector<std::pair<std::string, std::vector<FidelityPoint>>> curves;
    for (const auto& in : inputs) {
        const auto j = read_json_report(in.path);
        if (!j.contains("sweep") || !j["sweep"].is_array()) throw ParseError(1, in.path.string() + ": missing 'sweep' array");
        std::string tag = in.tag.empty() ? j.value("model_tag", std::string()) : in.tag;
        if (tag.empty()) tag = default_tag(in);
        std::vector<FidelityPoint> pts;
        for (const auto& e : j["sweep"]) {
            FidelityPoint p{e.at("psi").get<double>(), {}};
            for (const auto& key : {"frechet", "frechet_clean", "frechet_alt", "kid_mean", "kid_std"})
                p.values[key] = e.at("report").at(key).get<double>();
            pts.push_back(std::move(p));
        }
        std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.psi < b.psi; });
        curves.emplace_back(tag, std::move(pts));
    }

    std::string csv = "model_tag,psi,frechet,frechet_clean,frechet_alt,kid_mean,kid_std\n";
    for (const auto& [tag, pts] : curves)
        for (const auto& p : pts)
            csv += tag + "," + csv_double(p.psi) + "," + csv_double(p.values.at("frechet")) + "," +
                   csv_double(p.values.at("frechet_clean")) + "," + csv_double(p.values.at("frechet_alt")) + "," +
                   csv_double(p.values.at("kid_mean")) + "," + csv_double(p.values.at("kid_std")) + "\n";
    write_text(out_dir / "fidelity_curves.csv", csv, written);

    for (const auto& [metric, title] : kFidelityMetrics) {
        Range xr, yr;
        for (const auto& [tag, pts] : curves)
            for (const auto& p : pts) {
                xr.add(p.psi);
                yr.add(p.values.at(metric));
            }
        Svg svg(title + " vs conditioning scale", "psi", metric, xr, yr);
        std::vector<std::pair<std::string, std::string>> legend;
        for (std::size_t c = 0; c < curves.size(); ++c) {
            const std::string color = kPalette[c % std::size(kPalette)];
            std::vector<std::pair<double, double>> line;
            for (const auto& p : curves[c].second) line.emplace_back(p.psi, p.values.at(metric));
            svg.polyline(line, color);
            legend.emplace_back(curves[c].first, color);
        }
        svg.legend(legend);
        write_text(out_dir / ("fidelity_" + metric + ".svg"), svg.str(), written);
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

void tsne_plot(const TaggedPath& in, const fs::path& out_dir, std::vector<fs::path>& written) {
    const auto text = read_report(in.path);
    std::istringstream lines(text);
    std::string line;
    if (!std::getline(lines, line) || line != "id,x,y,source")
        throw ParseError(1, in.path.string() + ": expected header 'id,x,y,source'");
    struct Point {
        double x, y;
        std::string source;
    };
    std::vector<Point> pts;
    std::size_t line_no = 1;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 4) throw ParseError(line_no, in.path.string() + ": expected 4 columns");
        try {
            pts.push_back({std::stod(cells[1]), std::stod(cells[2]), cells[3]});
        } catch (const std::exception&) {
            throw ParseError(line_no, in.path.string() + ": bad coordinate");
        }
    }
    const auto tag = default_tag(in);
    Range xr, yr;
    std::vector<std::string> sources;
    for (const auto& p : pts) {
        xr.add(p.x);
        yr.add(p.y);
        if (std::find(sources.begin(), sources.end(), p.source) == sources.end()) sources.push_back(p.source);
    }
    std::sort(sources.begin(), sources.end());
    Svg svg("t-SNE embedding (" + tag + ")", "dim 1", "dim 2", xr, yr);
    std::vector<std::pair<std::string, std::string>> legend;
    for (std::size_t s = 0; s < sources.size(); ++s) legend.emplace_back(sources[s], kPalette[s % std::size(kPalette)]);
    for (const auto& p : pts) {
        const auto idx = static_cast<std::size_t>(std::find(sources.begin(), sources.end(), p.source) - sources.begin());
        svg.dot(p.x, p.y, kPalette[idx % std::size(kPalette)]);
    }
    svg.legend(legend);
    const auto stem = "tsne_" + file_stem_for(tag);
    write_text(out_dir / (stem + ".csv"), text, written);
    write_text(out_dir / (stem + ".svg"), svg.str(), written);
}

void mix_plot(const TaggedPath& in, const fs::path& out_dir, std::vector<fs::path>& written) {
    const auto j = read_json_report(in.path);
    if (!j.contains("cells") || !j["cells"].is_array()) throw ParseError(1, in.path.string() + ": missing 'cells' array");
    const auto tag = in.tag.empty() ? j.value("model_tag", default_tag(in)) : in.tag;
    struct Cell {
        double p, mean, lo, hi;
        int n;
    };
    std::vector<Cell> cells;
    for (const auto& c : j["cells"])
        cells.push_back({c.at("proportion").get<double>(), c.at("mean_delta_rap").get<double>(), c.at("min").get<double>(),
                         c.at("max").get<double>(), c.at("n_runs").get<int>()});
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.p < b.p; });

    std::string csv = "proportion,mean_delta_rap,min,max,n_runs\n";
    Range xr, yr;
    std::vector<double> xs, lo, hi;
    std::vector<std::pair<double, double>> mean;
    for (const auto& c : cells) {
        csv += csv_double(c.p) + "," + csv_double(c.mean) + "," + csv_double(c.lo) + "," + csv_double(c.hi) + "," +
               std::to_string(c.n) + "\n";
        xr.add(c.p);
        yr.add(c.lo);
        yr.add(c.hi);
        yr.add(0.0);
        xs.push_back(c.p);
        lo.push_back(c.lo);
        hi.push_back(c.hi);
        mean.emplace_back(c.p, c.mean);
    }
    Svg svg("Delta RAP vs synthetic proportion (" + tag + ")", "synthetic proportion", "delta RAP", xr, yr);
    svg.band(xs, lo, hi, kPalette[0]);
    svg.hline(0.0, "#777777");
    svg.polyline(mean, kPalette[0]);
    svg.legend({{"mean", kPalette[0]}});
    const auto stem = "delta_rap_" + file_stem_for(tag);
    write_text(out_dir / (stem + ".csv"), csv, written);
    write_text(out_dir / (stem + ".svg"), svg.str(), written);
}

}  // namespace

TaggedPath parse_tagged_path(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) return {"", text};
    if (eq == 0 || eq + 1 == text.size()) throw ArgumentError("expected tag=path, got '" + text + "'");
    return {text.substr(0, eq), text.substr(eq + 1)};
}

std::vector<fs::path> emit_plots(const PlotInputs& inputs, const fs::path& out_dir) {
    if (inputs.empty()) throw ArgumentError("no report files given");
    for (const auto* list : {&inputs.fidelity, &inputs.tsne, &inputs.mix})
        for (const auto& p : *list)
            if (!fs::exists(p.path)) throw IoError("report not found: " + p.path.string());
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<fs::path> written;
    if (!inputs.fidelity.empty()) fidelity_plots(inputs.fidelity, out_dir, written);
    for (const auto& p : inputs.tsne) tsne_plot(p, out_dir, written);
    for (const auto& p : inputs.mix) mix_plot(p, out_dir, written);
    return written;
}

}  // namespace lapsynth::cli
