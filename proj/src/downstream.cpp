#include "lapsynth/downstream.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lapsynth/errors.hpp"
#include "lapsynth/rng.hpp"

namespace lapsynth {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
    return z.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

// log(1 + exp(v)) without overflow.
double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

template <class T>
void hash_values(std::uint64_t& h, const T& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double v = m.data()[i];
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&v), sizeof v), h);
    }
}

template <class T>
void adam_update(T& p, T& m, T& v, const T& g, double lr, long step) {
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd json_matrix(const nlohmann::json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(j.at(r).size()) != cols) throw IoError("ragged matrix in recognizer file");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    }
    return m;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// -- data ------------------------------------------------------------------

RecognitionSet make_recognition_set(const std::vector<LabeledRecord>& records, const TripletMap& classes) {
    if (classes.empty()) throw ArgumentError("triplet map is empty");
    RecognitionSet set;
    for (const auto& [id, t] : classes) set.class_ids.push_back(id);
    if (records.empty()) {
        set.y.resize(0, static_cast<Eigen::Index>(classes.size()));
        return set;
    }
    const auto& first = records.front().image;
    set.image_height = first.height();
    set.image_width = first.width();
    set.channels = first.channels();
    const auto n = static_cast<Eigen::Index>(records.size());
    set.x.resize(n, first.size());
    set.y = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(classes.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = records[static_cast<std::size_t>(i)];
        if (!r.image.same_shape(first)) throw ShapeError("record " + r.prompt.image_id + " has a different image shape");
        set.x.row(i) = r.image.flat().transpose();
        Eigen::Index k = 0;
        for (const auto& [id, t] : classes) {
            if (std::find(r.prompt.triplets.begin(), r.prompt.triplets.end(), t) != r.prompt.triplets.end()) set.y(i, k) = 1.0;
            ++k;
        }
        set.groups.push_back(r.prompt.group());
    }
    return set;
}

RecognitionSet subset_rows(const RecognitionSet& set, const std::vector<Eigen::Index>& rows) {
    RecognitionSet out = set;
    out.x.resize(static_cast<Eigen::Index>(rows.size()), set.x.cols());
    out.y.resize(static_cast<Eigen::Index>(rows.size()), set.y.cols());
    out.groups.clear();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = rows[i];
        if (r < 0 || r >= set.size()) throw ArgumentError("row index out of range");
        out.x.row(static_cast<Eigen::Index>(i)) = set.x.row(r);
        out.y.row(static_cast<Eigen::Index>(i)) = set.y.row(r);
        out.groups.push_back(set.groups[static_cast<std::size_t>(r)]);
    }
    return out;
}

RecognitionSet concat_sets(const RecognitionSet& a, const RecognitionSet& b) {
    if (b.size() == 0) return a;
    if (a.size() == 0) return b;
    if (a.x.cols() != b.x.cols() || a.class_ids != b.class_ids) throw ShapeError("recognition sets do not match");
    RecognitionSet out = a;
    out.x.resize(a.size() + b.size(), a.x.cols());
    out.x << a.x, b.x;
    out.y.resize(a.size() + b.size(), a.y.cols());
    out.y << a.y, b.y;
    out.groups.insert(out.groups.end(), b.groups.begin(), b.groups.end());
    return out;
}

// -- recognizer ------------------------------------------------------------

void RecognizerConfig::validate() const {
    if (hidden <= 0) throw ArgumentError("hidden width must be positive");
    if (epochs < 0) throw ArgumentError("epochs must be non-negative");
    if (batch_size < 0) throw ArgumentError("batch size must be non-negative");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning rate must be finite and non-negative");
}

Eigen::MatrixXd RecognizerParams::hidden(const Eigen::MatrixXd& x) const {
    if (x.cols() != input_dim()) throw ShapeError("recognizer input has the wrong width");
    return ((x * w1.transpose()).rowwise() + b1.transpose()).array().tanh().matrix();
}

Eigen::MatrixXd RecognizerParams::logits(const Eigen::MatrixXd& x) const {
    return (hidden(x) * w2.transpose()).rowwise() + b2.transpose();
}

std::uint64_t RecognizerParams::checksum() const {
    std::uint64_t h = fnv1a64("recognizer");
    hash_values(h, w1);
    hash_values(h, b1);
    hash_values(h, w2);
    hash_values(h, b2);
    return h;
}

RecognizerParams init_recognizer(Eigen::Index input_dim, Eigen::Index n_classes, int hidden, std::uint64_t seed) {
    if (input_dim <= 0 || n_classes <= 0 || hidden <= 0) throw ArgumentError("recognizer dimensions must be positive");
    Rng rng(derive_seed(seed, "recognizer-init"));
    std::normal_distribution<double> n01(0.0, 1.0);
    RecognizerParams p;
    p.w1 = Eigen::MatrixXd::NullaryExpr(hidden, input_dim, [&] { return n01(rng); }) / std::sqrt(static_cast<double>(input_dim));
    p.b1 = Eigen::VectorXd::Zero(hidden);
    p.w2 = Eigen::MatrixXd::NullaryExpr(n_classes, hidden, [&] { return n01(rng); }) / std::sqrt(static_cast<double>(hidden));
    p.b2 = Eigen::VectorXd::Zero(n_classes);
    return p;
}

double recognizer_loss(const RecognizerParams& params, const RecognitionSet& set) {
    if (set.size() == 0) throw ArgumentError("empty recognition set");
    const Eigen::MatrixXd z = params.logits(set.x);
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index k = 0; k < z.cols(); ++k) total += softplus(z(i, k)) - set.y(i, k) * z(i, k);
    return total / static_cast<double>(z.size());
}

RecognizerParams train_recognizer(const RecognitionSet& set, const RecognizerConfig& cfg, std::uint64_t seed,
                                  std::vector<double>* epoch_loss) {
    cfg.validate();
    if (set.size() == 0) throw ArgumentError("cannot train a recognizer on an empty dataset");
    auto p = init_recognizer(set.x.cols(), set.n_classes(), cfg.hidden, seed);
    p.image_height = set.image_height;
    p.image_width = set.image_width;
    p.channels = set.channels;
    p.class_ids = set.class_ids;

    Eigen::MatrixXd mw1 = Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols()), vw1 = mw1;
    Eigen::MatrixXd mw2 = Eigen::MatrixXd::Zero(p.w2.rows(), p.w2.cols()), vw2 = mw2;
    Eigen::VectorXd mb1 = Eigen::VectorXd::Zero(p.b1.size()), vb1 = mb1;
    Eigen::VectorXd mb2 = Eigen::VectorXd::Zero(p.b2.size()), vb2 = mb2;

    const auto n = set.size();
    const Eigen::Index batch = cfg.batch_size == 0 ? n : std::min<Eigen::Index>(cfg.batch_size, n);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle(derive_seed(seed, "recognizer-shuffle"));
    long step = 0;
    Eigen::MatrixXd xb, yb;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (batch < n)
            for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(shuffle() % (i + 1))]);
        for (Eigen::Index start = 0, rows = 0; start < n; start += rows) {
            rows = std::min(batch, n - start);
            // A short tail is folded into the last batch instead of taking its own step.
            if (n - start - rows > 0 && 2 * (n - start - rows) < batch) rows = n - start;
            xb.resize(rows, set.x.cols());
            yb.resize(rows, set.y.cols());
            for (Eigen::Index r = 0; r < rows; ++r) {
                xb.row(r) = set.x.row(order[static_cast<std::size_t>(start + r)]);
                yb.row(r) = set.y.row(order[static_cast<std::size_t>(start + r)]);
            }
            const Eigen::MatrixXd h = p.hidden(xb);
            const Eigen::MatrixXd z = (h * p.w2.transpose()).rowwise() + p.b2.transpose();
            const Eigen::MatrixXd dz = (sigmoid(z) - yb) / static_cast<double>(yb.size());
            const Eigen::MatrixXd gw2 = dz.transpose() * h;
            const Eigen::VectorXd gb2 = dz.colwise().sum().transpose();
            const Eigen::MatrixXd da = ((dz * p.w2).array() * (1.0 - h.array().square())).matrix();
            const Eigen::MatrixXd gw1 = da.transpose() * xb;
            const Eigen::VectorXd gb1 = da.colwise().sum().transpose();
            if (!gw1.allFinite() || !gw2.allFinite()) throw NumericError("non-finite recognizer gradient");
            ++step;
            adam_update(p.w1, mw1, vw1, gw1, cfg.learning_rate, step);
            adam_update(p.b1, mb1, vb1, gb1, cfg.learning_rate, step);
            adam_update(p.w2, mw2, vw2, gw2, cfg.learning_rate, step);
            adam_update(p.b2, mb2, vb2, gb2, cfg.learning_rate, step);
        }
        if (epoch_loss) epoch_loss->push_back(recognizer_loss(p, set));
    }
    return p;
}

void save_recognizer(const RecognizerParams& params, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "lapsynth-recognizer";
    j["image_height"] = params.image_height;
    j["image_width"] = params.image_width;
    j["channels"] = params.channels;
    j["class_ids"] = params.class_ids;
    j["w1"] = matrix_json(params.w1);
    j["b1"] = std::vector<double>(params.b1.data(), params.b1.data() + params.b1.size());
    j["w2"] = matrix_json(params.w2);
    j["b2"] = std::vector<double>(params.b2.data(), params.b2.data() + params.b2.size());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump() << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

RecognizerParams load_recognizer(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("format") != "lapsynth-recognizer") throw IoError("not a recognizer file: " + path.string());
        RecognizerParams p;
        p.image_height = j.at("image_height").get<int>();
        p.image_width = j.at("image_width").get<int>();
        p.channels = j.at("channels").get<int>();
        p.class_ids = j.at("class_ids").get<std::vector<int>>();
        p.w1 = json_matrix(j.at("w1"));
        p.w2 = json_matrix(j.at("w2"));
        const auto b1 = j.at("b1").get<std::vector<double>>();
        const auto b2 = j.at("b2").get<std::vector<double>>();
        p.b1 = Eigen::Map<const Eigen::VectorXd>(b1.data(), static_cast<Eigen::Index>(b1.size()));
        p.b2 = Eigen::Map<const Eigen::VectorXd>(b2.data(), static_cast<Eigen::Index>(b2.size()));
        if (p.b1.size() != p.w1.rows() || p.w2.cols() != p.w1.rows() || p.b2.size() != p.w2.rows() ||
            static_cast<Eigen::Index>(p.class_ids.size()) != p.w2.rows() ||
            p.w1.cols() != static_cast<Eigen::Index>(p.image_height) * p.image_width * p.channels)
            throw IoError("inconsistent recognizer shapes in " + path.string());
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed recognizer file " + path.string() + ": " + e.what());
    }
}

// -- scoring ---------------------------------------------------------------

std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ArgumentError("scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t positives = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ArgumentError("labels must be 0 or 1");
        positives += static_cast<std::size_t>(l);
    }
    if (positives == 0) return std::nullopt;
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] == 0) continue;
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
    return ap / static_cast<double>(positives);
}

double rap(const std::vector<std::optional<double>>& per_class_ap) {
    double sum = 0.0;
    int n = 0;
    for (const auto& ap : per_class_ap)
        if (ap) {
            sum += *ap;
            ++n;
        }
    if (n == 0) throw ArgumentError("no class has a defined AP");
    return sum / n;
}

APReport evaluate_recognizer(const RecognizerParams& params, const RecognitionSet& set) {
    if (set.n_classes() != params.n_classes()) throw ShapeError("class count mismatch");
    const Eigen::MatrixXd z = params.logits(set.x);
    APReport report;
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
        std::vector<double> s(static_cast<std::size_t>(z.rows()));
        std::vector<int> l(s.size());
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            s[static_cast<std::size_t>(i)] = z(i, k);
            l[static_cast<std::size_t>(i)] = set.y(i, k) > 0.5 ? 1 : 0;
        }
        report.per_class_ap.push_back(average_precision(s, l));
    }
    report.rap = rap(report.per_class_ap);
    return report;
}

// -- mixing ----------------------------------------------------------------

std::vector<int> group_folds(const std::vector<std::string>& groups, int folds) {
    if (folds < 2) throw ArgumentError("fold count must be at least 2");
    const std::set<std::string> distinct(groups.begin(), groups.end());
    if (static_cast<int>(distinct.size()) < folds) throw ArgumentError("fewer groups than folds");
    std::map<std::string, int> fold_of;
    int i = 0;
    for (const auto& g : distinct) fold_of[g] = i++ % folds;
    std::vector<int> out;
    out.reserve(groups.size());
    for (const auto& g : groups) out.push_back(fold_of.at(g));
    return out;
}

void MixSpec::validate() const {
    if (folds < 2) throw ArgumentError("fold count must be at least 2");
    if (seeds < 1) throw ArgumentError("seeds per cell must be positive");
    if (proportions.empty()) throw ArgumentError("no proportions given");
    for (double p : proportions)
        if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("proportions must lie in [0, 1)");
    recognizer.validate();
}

MixReport mix_experiment(const std::vector<LabeledRecord>& real, const std::vector<LabeledRecord>& synthetic,
                         const TripletMap& classes, const MixSpec& spec) {
    spec.validate();
    if (real.empty()) throw ArgumentError("real dataset is empty");
    std::vector<Eigen::Index> target_cols;
    {
        std::vector<int> ids;
        for (const auto& [id, t] : classes) ids.push_back(id);
        for (int c : spec.target_classes) {
            const auto it = std::find(ids.begin(), ids.end(), c);
            if (it == ids.end()) throw ArgumentError("target class " + std::to_string(c) + " is not in the triplet map");
            target_cols.push_back(it - ids.begin());
        }
    }
    const auto real_set = make_recognition_set(real, classes);
    const auto synth_set = make_recognition_set(synthetic, classes);
    if (synth_set.size() > 0 && synth_set.x.cols() != real_set.x.cols()) throw ShapeError("synthetic images differ in shape from real ones");

    MixReport report;
    {
        std::set<std::uint64_t> real_hashes;
        for (const auto& r : real) real_hashes.insert(fnv1a64(std::string_view(
                                       reinterpret_cast<const char*>(r.image.flat().data()), sizeof(double) * r.image.size())));
        for (const auto& s : synthetic)
            if (real_hashes.count(fnv1a64(std::string_view(reinterpret_cast<const char*>(s.image.flat().data()),
                                                           sizeof(double) * s.image.size()))))
                ++report.duplicate_count;
    }

    const auto fold_of = group_folds(real_set.groups, spec.folds);
    std::map<double, std::vector<double>> deltas;
    for (int fold = 0; fold < spec.folds; ++fold) {
        std::vector<Eigen::Index> train_rows, test_rows;
        for (Eigen::Index i = 0; i < real_set.size(); ++i) (fold_of[static_cast<std::size_t>(i)] == fold ? test_rows : train_rows).push_back(i);
        const auto train = subset_rows(real_set, train_rows);
        const auto test = subset_rows(real_set, test_rows);
        for (int s = 0; s < spec.seeds; ++s) {
            const auto train_seed = derive_seed(spec.seed, "mix-train", static_cast<std::uint64_t>(fold) * 1000003u + static_cast<std::uint64_t>(s));
            const double baseline = evaluate_recognizer(train_recognizer(train, spec.recognizer, train_seed), test).rap;
            for (double p : spec.proportions) {
                Rng rng(derive_seed(derive_seed(spec.seed, "mix-synthetic", std::bit_cast<std::uint64_t>(p)), "cell",
                                    static_cast<std::uint64_t>(fold) * 1000003u + static_cast<std::uint64_t>(s)));
                std::vector<char> taken(static_cast<std::size_t>(synth_set.size()), 0);
                std::vector<Eigen::Index> picked;
                for (const auto col : target_cols) {
                    const double n_real = train.y.col(col).sum();
                    const auto need = static_cast<std::size_t>(std::llround(p / (1.0 - p) * n_real));
                    if (need == 0) continue;
                    std::vector<Eigen::Index> candidates;
                    for (Eigen::Index i = 0; i < synth_set.size(); ++i)
                        if (!taken[static_cast<std::size_t>(i)] && synth_set.y(i, col) > 0.5) candidates.push_back(i);
                    if (candidates.size() < need) {
                        char msg[160];
                        std::snprintf(msg, sizeof msg, "proportion %.4g needs %zu synthetic items for class %d, pool has %zu", p,
                                      need, real_set.class_ids[static_cast<std::size_t>(col)], candidates.size());
                        throw ArgumentError(msg);
                    }
                    for (std::size_t k = 0; k < need; ++k) {
                        const auto j = k + static_cast<std::size_t>(rng() % (candidates.size() - k));
                        std::swap(candidates[k], candidates[j]);
                        taken[static_cast<std::size_t>(candidates[k])] = 1;
                        picked.push_back(candidates[k]);
                    }
                }
                MixRun run{fold, s, p, baseline, baseline, 0.0, static_cast<int>(picked.size())};
                if (!picked.empty()) {
                    const auto mixed = concat_sets(train, subset_rows(synth_set, picked));
                    run.rap = evaluate_recognizer(train_recognizer(mixed, spec.recognizer, train_seed), test).rap;
                    run.delta_rap = run.rap - baseline;
                }
                deltas[p].push_back(run.delta_rap);
                report.runs.push_back(run);
            }
        }
    }
    for (double p : spec.proportions) {
        if (std::any_of(report.cells.begin(), report.cells.end(), [&](const MixCell& c) { return c.proportion == p; })) continue;
        const auto& d = deltas.at(p);
        MixCell cell;
        cell.proportion = p;
        cell.mean_delta_rap = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
        cell.median_delta_rap = median_of(d);
        std::vector<double> per_seed(static_cast<std::size_t>(spec.seeds), 0.0);
        for (const auto& run : report.runs)
            if (run.proportion == p) per_seed[static_cast<std::size_t>(run.seed_index)] += run.delta_rap / spec.folds;
        cell.seed_median_delta_rap = median_of(per_seed);
        cell.min_delta_rap = *std::min_element(d.begin(), d.end());
        cell.max_delta_rap = *std::max_element(d.begin(), d.end());
        cell.n_runs = static_cast<int>(d.size());
        report.cells.push_back(cell);
    }
    return report;
}

std::string mix_report_json(const MixReport& report, const MixSpec& spec) {
    nlohmann::json j;
    j["spec"] = {{"target_classes", spec.target_classes},
                 {"proportions", spec.proportions},
                 {"folds", spec.folds},
                 {"seeds", spec.seeds},
                 {"seed", spec.seed},
                 {"recognizer", {{"hidden", spec.recognizer.hidden},
                                 {"epochs", spec.recognizer.epochs},
                                 {"batch_size", spec.recognizer.batch_size},
                                 {"learning_rate", spec.recognizer.learning_rate}}}};
    j["duplicate_count"] = report.duplicate_count;
    j["duplicates_real"] = report.duplicate_count > 0;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : report.cells)
        j["cells"].push_back({{"proportion", c.proportion},
                              {"mean_delta_rap", c.mean_delta_rap},
                              {"median_delta_rap", c.median_delta_rap},
                              {"seed_median_delta_rap", c.seed_median_delta_rap},
                              {"min", c.min_delta_rap},
                              {"max", c.max_delta_rap},
                              {"n_runs", c.n_runs}});
    j["runs"] = nlohmann::json::array();
    for (const auto& r : report.runs)
        j["runs"].push_back({{"fold", r.fold},
                             {"seed_index", r.seed_index},
                             {"proportion", r.proportion},
                             {"baseline_rap", r.baseline_rap},
                             {"rap", r.rap},
                             {"delta_rap", r.delta_rap},
                             {"n_synthetic", r.n_synthetic}});
    return j.dump(2) + "\n";
}

std::string mix_report_csv(const MixReport& report) {
    std::ostringstream out;
    out << "proportion,mean_delta_rap,min,max,n_runs\n";
    char line[160];
    for (const auto& c : report.cells) {
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%d\n", c.proportion, c.mean_delta_rap, c.min_delta_rap,
                      c.max_delta_rap, c.n_runs);
        out << line;
    }
    return out.str();
}

}  // namespace lapsynth
