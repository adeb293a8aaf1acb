#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "lapsynth/survey.hpp"

namespace fs = std::filesystem;
using lapsynth::cli::dispatch;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "lapsynth");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

nlohmann::json outputs_of(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "run_manifest.json"))["outputs"]; }

struct Workdir {
    fs::path root;
    explicit Workdir(const std::string& name) : root(fs::temp_directory_path() / name) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workdir() { fs::remove_all(root); }
    std::string operator/(const std::string& rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    auto r = run({});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(r.err.find("gen-data") != std::string::npos);

    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"gen-data", "--out", "x", "--bogus"}).code == 2);
    CHECK(run({"gen-data"}).code == 2);
    CHECK(run({"train", "--out", "x", "--model", "gan"}).code == 2);
    CHECK(run({"sample", "--out", "x", "--steps", "0"}).code == 2);

    r = run({"gen-data", "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--seed") != std::string::npos);
}

TEST_CASE("gen-data is deterministic and self-describing") {
    Workdir w("lapsynth_cli_gen");
    write(w / "gen.cfg", "n_records = 24\nimage_size = 8\n");
    REQUIRE(run({"gen-data", "--config", w / "gen.cfg", "--seed", "7", "--out", w / "a"}).code == 0);
    REQUIRE(run({"gen-data", "--config", w / "gen.cfg", "--seed", "7", "--out", w / "b"}).code == 0);
    REQUIRE(run({"gen-data", "--config", w / "gen.cfg", "--seed", "8", "--out", w / "c"}).code == 0);
    CHECK(outputs_of(w.root / "a") == outputs_of(w.root / "b"));
    CHECK(outputs_of(w.root / "a") != outputs_of(w.root / "c"));

    const auto manifest = nlohmann::json::parse(slurp(w.root / "a" / "run_manifest.json"));
    CHECK(manifest["subcommand"] == "gen-data");
    CHECK(manifest["inputs"].size() == 1);
    bool has_dataset = false;
    for (const auto& o : manifest["outputs"]) has_dataset |= o["path"] == "manifest.jsonl";
    CHECK(has_dataset);

    // The echo alone reproduces the run.
    const auto echo = slurp(w.root / "a" / "config_echo.txt");
    CHECK(echo.find("seed = 7") != std::string::npos);
    REQUIRE(run({"gen-data", "--config", w / "a/config_echo.txt", "--out", w / "d"}).code == 0);
    CHECK(outputs_of(w.root / "d") == outputs_of(w.root / "a"));
}

TEST_CASE("config problems are reported with exit code 1") {
    Workdir w("lapsynth_cli_config");
    write(w / "bad.cfg", "n_records = 24\nwidth = 3\n");
    auto r = run({"gen-data", "--config", w / "bad.cfg", "--out", w / "o"});
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown config key 'width'") != std::string::npos);

    r = run({"gen-data", "--config", w / "missing.cfg", "--out", w / "o"});
    CHECK(r.code == 1);
    CHECK(r.err.find("missing.cfg") != std::string::npos);

    write(w / "train.cfg", "epochs = 1\n");
    r = run({"train", "--config", w / "train.cfg", "--out", w / "t"});
    CHECK(r.code == 1);
    CHECK(r.err.find("'data'") != std::string::npos);
}

TEST_CASE("toy pipeline runs end to end on 16x16 data") {
    Workdir w("lapsynth_cli_pipeline");
    write(w / "gen.cfg", "n_records = 160\nimage_size = 16\nn_videos = 8\n");
    REQUIRE(run({"gen-data", "--config", w / "gen.cfg", "--seed", "3", "--out", w / "data"}).code == 0);

    write(w / "train.cfg", "data = " + (w / "data") + "\nepochs = 2\nhidden = 32,32\nbatch_size = 32\n");
    auto r = run({"train", "--config", w / "train.cfg", "--model", "edm", "--seed", "3", "--out", w / "train"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(w.root / "train" / "model.lsck"));
    CHECK(slurp(w.root / "train" / "config_echo.txt").find("parameterization = edm") != std::string::npos);

    write(w / "sample.cfg", "checkpoint = " + (w / "train/model.lsck") + "\nprompts = " + (w / "data") + "\nn_samples = 30\n");
    r = run({"sample", "--config", w / "sample.cfg", "--psi", "1,3", "--steps", "6", "--out", w / "samples"});
    REQUIRE(r.code == 0);
    const auto sweep = nlohmann::json::parse(slurp(w.root / "samples" / "sweep.json"));
    REQUIRE(sweep["sweep"].size() == 2);
    CHECK(sweep["sweep"][1]["psi"] == 3.0);
    CHECK(fs::exists(w.root / "samples" / "psi_3" / "images" / "sample_00029.png"));
    CHECK(slurp(w.root / "samples" / "config_echo.txt").find("steps = 6") != std::string::npos);

    write(w / "fid.cfg", "real = " + (w / "data") + "\nsynthetic = " + (w / "samples") +
                             "\nkid_subsets = 3\nkid_subset_size = 20\nrecognizer_epochs = 2\nmodel_tag = toy\n");
    r = run({"eval-fidelity", "--config", w / "fid.cfg", "--out", w / "fid"});
    REQUIRE(r.code == 0);
    const auto fid = nlohmann::json::parse(slurp(w.root / "fid" / "fidelity.json"));
    CHECK(fid["model_tag"] == "toy");
    REQUIRE(fid["sweep"].size() == 2);
    CHECK(fid["sweep"][0]["report"]["frechet"].get<double>() > 0.0);
    CHECK(fs::exists(w.root / "fid" / "recognizer.json"));

    write(w / "tsne.cfg", "real = " + (w / "data") + "\nsynthetic = " + (w / "samples") +
                              "\nn_real = 40\nn_synthetic = 30\nperplexity = 10\niters = 100\n");
    r = run({"eval-tsne", "--config", w / "tsne.cfg", "--psi", "3", "--out", w / "tsne"});
    REQUIRE(r.code == 0);
    const auto tsne_csv = slurp(w.root / "tsne" / "tsne.csv");
    CHECK(std::count(tsne_csv.begin(), tsne_csv.end(), '\n') == 71);

    write(w / "mix.cfg", "real = " + (w / "data") + "\nsynthetic = " + (w / "samples/psi_3") +
                             "\nfolds = 2\nseeds = 1\nepochs = 2\nproportions = 0,0.05\n");
    r = run({"downstream", "--config", w / "mix.cfg", "--out", w / "mix"});
    REQUIRE(r.code == 0);
    const auto mix = nlohmann::json::parse(slurp(w.root / "mix" / "mix_report.json"));
    CHECK(mix["cells"][0]["mean_delta_rap"] == 0.0);

    write(w / "plots.cfg", "fidelity = " + (w / "fid/fidelity.json") + "\ntsne = " + (w / "tsne/tsne.csv") +
                               "\nmix = toy=" + (w / "mix/mix_report.json") + "\n");
    REQUIRE(run({"plots", "--config", w / "plots.cfg", "--out", w / "plots"}).code == 0);
    for (const auto* f : {"fidelity_frechet.svg", "fidelity_kid_mean.svg", "fidelity_curves.csv", "tsne_tsne.svg",
                          "delta_rap_toy.svg", "delta_rap_toy.csv"})
        CHECK(fs::exists(w.root / "plots" / f));
}

TEST_CASE("plots") {
    Workdir w("lapsynth_cli_plots");
    auto r = run({"plots", "--out", w / "none"});
    CHECK(r.code == 1);
    CHECK(r.err.find("no report files") != std::string::npos);
    CHECK((!fs::exists(w.root / "none") || fs::is_empty(w.root / "none")));

    write(w / "missing.cfg", "mix = " + (w / "nowhere/mix_report.json") + "\n");
    r = run({"plots", "--config", w / "missing.cfg", "--out", w / "m"});
    CHECK(r.code == 1);
    CHECK(r.err.find("nowhere/mix_report.json") != std::string::npos);

    // Shaped like the per-model delta-RAP figure: two models, three proportions.
    for (const std::string tag : {"imagen", "elucidated"}) {
        nlohmann::json j;
        j["cells"] = nlohmann::json::array();
        for (double p : {0.0, 0.05, 0.25})
            j["cells"].push_back({{"proportion", p}, {"mean_delta_rap", p * 0.1}, {"min", p * 0.05 - 0.01}, {"max", p * 0.2 + 0.01}, {"n_runs", 15}});
        fs::create_directories(w.root / tag);
        write(w / (tag + "/mix_report.json"), j.dump());
    }
    write(w / "mix.cfg", "mix = " + (w / "imagen/mix_report.json") + ", " + (w / "elucidated/mix_report.json") + "\n");
    REQUIRE(run({"plots", "--config", w / "mix.cfg", "--out", w / "p1"}).code == 0);
    REQUIRE(run({"plots", "--config", w / "mix.cfg", "--out", w / "p2"}).code == 0);
    std::vector<std::string> svgs;
    for (const auto& e : fs::directory_iterator(w.root / "p1"))
        if (e.path().extension() == ".svg") svgs.push_back(e.path().filename().string());
    std::sort(svgs.begin(), svgs.end());
    CHECK(svgs == std::vector<std::string>{"delta_rap_elucidated.svg", "delta_rap_imagen.svg"});
    for (const auto& name : {"delta_rap_imagen.svg", "delta_rap_imagen.csv", "delta_rap_elucidated.svg"})
        CHECK(slurp(w.root / "p1" / name) == slurp(w.root / "p2" / name));
    CHECK(slurp(w.root / "p1" / "delta_rap_imagen.csv").rfind("proportion,mean_delta_rap,min,max,n_runs\n", 0) == 0);
}

TEST_CASE("survey-score reads a pool and a log") {
    Workdir w("lapsynth_cli_survey");
    lapsynth::SurveyPool pool;
    lapsynth::SurveyQuestion q;
    q.question_id = "q01";
    q.model_tag = "imagen";
    q.truth = {true, true, true, false, false, false, false, false, false};
    for (int i = 0; i < 9; ++i) q.image_ids[static_cast<std::size_t>(i)] = "img" + std::to_string(i);
    pool.questions.push_back(q);
    lapsynth::save_pool(pool, w.root / "pool.json");
    write(w / "log.jsonl", lapsynth::response_to_json_line({"p1", "q01", {0, 1, 3}, "t"}) + "\n");
    write(w / "score.cfg", "pool = " + (w / "pool.json") + "\nlog = " + (w / "log.jsonl") + "\n");
    const auto r = run({"survey-score", "--config", w / "score.cfg", "--out", w / "s"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("TPR 66.67%") != std::string::npos);
    CHECK(r.out.find("FPR 16.67%") != std::string::npos);
    CHECK(slurp(w.root / "s" / "scores.csv") == "model_tag,tp,fp,tn,fn,tpr,fpr\nimagen,2,1,5,1,0.6666666666666666,0.16666666666666666\n");

    write(w / "log.jsonl", lapsynth::response_to_json_line({"p1", "q99", {}, "t"}) + "\n");
    CHECK(run({"survey-score", "--config", w / "score.cfg", "--out", w / "s2"}).code == 1);
}
