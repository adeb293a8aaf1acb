#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "lapsynth/dataio.hpp"
#include "lapsynth/errors.hpp"
#include "lapsynth/trainer.hpp"

using namespace lapsynth;

namespace {

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.hidden = {32, 32};
    cfg.cond_dim = 8;
    cfg.time_dim = 8;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-3;
    cfg.seed = 11;
    return cfg;
}

LabeledDataset tiny_dataset(int n = 64) {
    return make_toy_dataset(5, n, 4, default_vocabulary());
}

TrainBatch batch_from(const LabeledDataset& ds, const EmbeddingTable& table, std::size_t n) {
    TrainBatch b;
    for (std::size_t i = 0; i < n; ++i) {
        b.x0.push_back(ds.records[i].image.flat());
        b.tokens.push_back(table.token_ids(ds.records[i].prompt.prompt_text));
    }
    return b;
}

bool params_equal(const DiffusionModel& a, const DiffusionModel& b) {
    for (std::size_t l = 0; l < a.params.weights.size(); ++l)
        if (a.params.weights[l] != b.params.weights[l] || a.params.biases[l] != b.params.biases[l]) return false;
    return a.embeddings.rows() == b.embeddings.rows();
}

}  // namespace

TEST_CASE("train config text format") {
    const auto cfg = parse_train_config(
        "# comment\n"
        "parameterization = edm\n"
        "epochs = 3   # trailing\n"
        "hidden = 16, 8\n"
        "p2_gamma = 0.5\n"
        "include_segmented = true\n");
    CHECK(cfg.parameterization == Parameterization::EDM);
    CHECK(cfg.epochs == 3);
    CHECK(cfg.hidden == std::vector<int>{16, 8});
    CHECK(cfg.p2.gamma == 0.5);
    CHECK(cfg.include_segmented);

    const auto again = parse_train_config(format_train_config(cfg));
    CHECK(format_train_config(again) == format_train_config(cfg));

    try {
        parse_train_config("epochs = 2\nlearnig_rate = 0.1\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse_train_config("epochs = 2\nepochs = 3\n"), ParseError);
    CHECK_THROWS_AS(parse_train_config("epochs = two\n"), ParseError);
    CHECK_THROWS_AS(parse_train_config("p_uncond = 1\n"), ParseError);
    CHECK_THROWS_AS(parse_train_config("batch_size = 0\n"), ParseError);
}

TEST_CASE("condition_dropout") {
    const Eigen::VectorXd c = Eigen::VectorXd::Ones(4);
    const Eigen::VectorXd null = Eigen::VectorXd::Zero(4);

    SUBCASE("p = 0 never drops") {
        Rng rng(1);
        for (int i = 0; i < 1000; ++i) CHECK(condition_dropout(c, null, 0.0, rng) == c);
    }
    SUBCASE("p = 0.999 drops at least 99% of 10^4 draws") {
        Rng rng(2);
        int dropped = 0;
        for (int i = 0; i < 10000; ++i) dropped += condition_dropout(c, null, 0.999, rng) == null;
        CHECK(dropped >= 9900);
    }
    SUBCASE("fixed seed gives a reproducible pattern") {
        Rng a(3), b(3);
        for (int i = 0; i < 500; ++i) CHECK(draw_dropout(0.3, a) == draw_dropout(0.3, b));
    }
    SUBCASE("p = 0.1 shows both outcomes in every 1000-draw window") {
        // P(no null in 1000) = 0.9^1000 ~ 1e-46, far beyond a 6 sigma bound.
        Rng rng(4);
        for (int window = 0; window < 20; ++window) {
            int dropped = 0;
            for (int i = 0; i < 1000; ++i) dropped += draw_dropout(0.1, rng);
            CHECK(dropped > 0);
            CHECK(dropped < 1000);
        }
    }
    SUBCASE("range") {
        Rng rng(5);
        CHECK_THROWS_AS(condition_dropout(c, null, 1.0, rng), ArgumentError);
        CHECK_THROWS_AS(condition_dropout(c, null, -0.1, rng), ArgumentError);
    }
}

TEST_CASE("train_step") {
    const auto ds = tiny_dataset();
    for (auto param : {Parameterization::VP, Parameterization::EDM}) {
        CAPTURE(to_string(param));
        auto cfg = small_config();
        cfg.parameterization = param;

        SUBCASE("learning rate 0 leaves parameters unchanged") {
            cfg.learning_rate = 0.0;
            auto st = init_train_state(cfg, ds.vocabulary, 4, 4);
            const auto before = st.model;
            const auto batch = batch_from(ds, st.model.embeddings, 8);
            for (int i = 0; i < 5; ++i) CHECK(std::isfinite(train_step(st, batch, cfg)));
            CHECK(params_equal(before, st.model));
        }
        SUBCASE("single fixed sample: loss after 200 steps is below the first") {
            cfg.p_uncond = 0.0;
            auto st = init_train_state(cfg, ds.vocabulary, 4, 4);
            const auto batch = batch_from(ds, st.model.embeddings, 1);
            // Average over fresh noise draws so the comparison is not a single noisy sample.
            auto probe = [&](const DiffusionModel& m) {
                TrainState copy{m, AdamState::zeros_like(m), TrainRngs::from_seed(999)};
                double total = 0;
                for (int i = 0; i < 200; ++i) total += denoiser_loss(copy.model.params, make_denoiser_batch(copy, batch, cfg));
                return total / 200;
            };
            const double initial = probe(st.model);
            const double first = train_step(st, batch, cfg);
            for (int i = 1; i < 200; ++i) train_step(st, batch, cfg);
            CHECK(std::isfinite(first));
            CHECK(probe(st.model) < initial);
        }
        SUBCASE("gamma = 0 is bit-equal to unweighted training") {
            auto weighted = cfg;
            weighted.p2.gamma = 0.0;
            auto plain = cfg;
            plain.p2_weighting = false;
            auto a = init_train_state(weighted, ds.vocabulary, 4, 4);
            auto b = init_train_state(plain, ds.vocabulary, 4, 4);
            const auto batch = batch_from(ds, a.model.embeddings, 16);
            for (int i = 0; i < 10; ++i) CHECK(train_step(a, batch, weighted) == train_step(b, batch, plain));
            CHECK(params_equal(a.model, b.model));
        }
        SUBCASE("scaling every weight by c scales the gradient by c") {
            auto st = init_train_state(cfg, ds.vocabulary, 4, 4);
            const auto batch = batch_from(ds, st.model.embeddings, 8);
            auto db = make_denoiser_batch(st, batch, cfg);
            const auto g1 = denoiser_backward(st.model.params, db);
            db.weight *= 3.0;
            const auto g3 = denoiser_backward(st.model.params, db);
            for (std::size_t l = 0; l < g1.params.weights.size(); ++l)
                CHECK((g3.params.weights[l] - 3.0 * g1.params.weights[l]).norm() <=
                      1e-12 * g3.params.weights[l].norm());
        }
        SUBCASE("non-finite input aborts") {
            auto st = init_train_state(cfg, ds.vocabulary, 4, 4);
            auto batch = batch_from(ds, st.model.embeddings, 2);
            batch.x0[1][0] = std::nan("");
            CHECK_THROWS_AS(train_step(st, batch, cfg), NumericError);
        }
    }
}

TEST_CASE("edm batch weights are the p2 factor alone") {
    const auto ds = tiny_dataset(8);
    auto cfg = small_config();
    cfg.parameterization = Parameterization::EDM;
    auto st = init_train_state(cfg, ds.vocabulary, 4, 4);
    auto plain_cfg = cfg;
    plain_cfg.p2_weighting = false;
    const auto db = make_denoiser_batch(st, batch_from(ds, st.model.embeddings, 8), plain_cfg);
    // lambda(sigma) * c_out^2 = 1 for every sigma.
    for (Eigen::Index b = 0; b < db.weight.size(); ++b) CHECK(db.weight[b] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("fit") {
    const auto ds = tiny_dataset();
    auto cfg = small_config();

    SUBCASE("zero epochs returns the initialized model") {
        cfg.epochs = 0;
        const auto r = fit(ds, cfg);
        CHECK(r.report.epoch_loss.empty());
        CHECK(params_equal(r.model, init_train_state(cfg, ds.vocabulary, 4, 4).model));
    }
    SUBCASE("same seed gives the same checksum") {
        cfg.epochs = 2;
        const auto a = fit(ds, cfg);
        const auto b = fit(ds, cfg);
        CHECK(a.model.checksum() == b.model.checksum());
        CHECK(a.report.epoch_loss == b.report.epoch_loss);
        cfg.seed += 1;
        CHECK(fit(ds, cfg).model.checksum() != a.model.checksum());
    }
    SUBCASE("writes checkpoints, loss history and config echo") {
        const auto dir = std::filesystem::temp_directory_path() / "lapsynth_fit_test";
        std::filesystem::remove_all(dir);
        cfg.epochs = 4;
        cfg.checkpoint_every = 2;
        const auto r = fit(ds, cfg, dir);
        CHECK(std::filesystem::exists(dir / "checkpoint_epoch0002.lsck"));
        CHECK(std::filesystem::exists(dir / "checkpoint_epoch0004.lsck"));
        CHECK(r.report.final_checkpoint == dir / "model.lsck");
        CHECK(load_checkpoint(r.report.final_checkpoint).checksum() == r.model.checksum());
        std::ifstream csv(dir / "loss.csv");
        std::string line;
        int rows = 0;
        std::getline(csv, line);
        CHECK(line == "epoch,mean_loss");
        while (std::getline(csv, line)) ++rows;
        CHECK(rows == 4);
        CHECK(load_train_config(dir / "train_config.txt").epochs == 4);
        std::filesystem::remove_all(dir);
    }
    SUBCASE("segmented pairs are filtered unless requested") {
        auto mixed = ds;
        auto seg = ds.records.front();
        seg.prompt.is_segmented = true;
        seg.prompt.triplets.clear();
        seg.prompt.classes = {1};
        seg.prompt.prompt_text = build_segmented_prompt({"liver"});
        mixed.records = {seg};
        CHECK_THROWS_AS(fit(mixed, cfg), ArgumentError);
        cfg.include_segmented = true;
        cfg.epochs = 1;
        CHECK(fit(mixed, cfg).report.epoch_loss.size() == 1);
    }
    SUBCASE("empty dataset") {
        LabeledDataset empty;
        CHECK_THROWS_AS(fit(empty, cfg), ArgumentError);
    }
    SUBCASE("cascade stage takes an aux image") {
        const auto big = make_toy_dataset(2, 16, 8, default_vocabulary());
        cfg.cascade_base_size = 4;
        cfg.epochs = 1;
        const auto r = fit(big, cfg);
        CHECK(r.model.params.shape.aux_dim == 8 * 8 * 3);
        CHECK(r.model.aux_noise == cfg.aux_noise);
    }
}
