#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "doctest.h"
#include "dpdl/config.hpp"
#include "dpdl/errors.hpp"
#include "dpdl/init.hpp"
#include "dpdl/trainer.hpp"
#include "json.hpp"
#include "testkit.hpp"
#include "test_util.hpp"

using namespace dpdl;
using namespace dpdl::train;
using dpdl::testing::ScratchDir;

namespace {

TrainConfig tiny_train(int epochs = 1) {
    TrainConfig cfg;
    cfg.network = testkit::tiny_config();
    cfg.epochs = epochs;
    cfg.patch = 32;
    cfg.batch = 2;
    cfg.seed = 17;
    return cfg;
}

std::vector<synth::DPSample> samples(std::uint64_t seed, std::size_t n, std::size_t size = 48) {
    return synth::make_dataset(seed, n, size);
}

ParamStore<float> scalar_store(float w, float g) {
    ParamStore<float> s;
    auto& p = s.declare("w", {1});
    p.value[0] = w;
    p.grad[0] = g;
    return s;
}

bool same_values(const ParamStore<float>& a, const ParamStore<float>& b) {
    if (a.entries().size() != b.entries().size()) return false;
    for (std::size_t k = 0; k < a.entries().size(); ++k) {
        if (a.entries()[k].first != b.entries()[k].first) return false;
        if (a.entries()[k].second->value != b.entries()[k].second->value) return false;
    }
    return true;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("adam step matches a hand-rolled trace") {
    const AdamConfig cfg;
    SUBCASE("first step of a unit gradient moves by lr") {
        auto s = scalar_store(0.0f, 1.0f);
        AdamState st;
        adam_step(s, st, cfg, 1e-4);
        // m_hat = 1, v_hat = 1
        CHECK(s.get("w").value[0] == static_cast<float>(-1e-4 / (1.0 + 1e-8)));
        CHECK(st.step == 1);
    }
    SUBCASE("zero gradients leave parameters unchanged") {
        auto s = scalar_store(0.75f, 0.0f);
        AdamState st;
        for (int i = 0; i < 3; ++i) adam_step(s, st, cfg, 1e-2);
        CHECK(s.get("w").value[0] == 0.75f);
    }
    SUBCASE("two steps with different gradients") {
        auto s = scalar_store(0.5f, 2.0f);
        AdamState st;
        adam_step(s, st, cfg, 1e-3);
        s.get("w").grad[0] = -1.0f;
        adam_step(s, st, cfg, 1e-3);

        double w = 0.5f, m = 0, v = 0;
        const double grads[2] = {2.0, -1.0};
        for (int t = 1; t <= 2; ++t) {
            const double g = grads[t - 1];
            m = static_cast<float>(0.9 * m + 0.1 * g);
            v = static_cast<float>(0.999 * v + 0.001 * g * g);
            const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
            w = static_cast<float>(w - 1e-3 * mh / (std::sqrt(vh) + 1e-8));
        }
        CHECK(s.get("w").value[0] == doctest::Approx(w).epsilon(1e-6));
        // not a single step of the summed gradient
        CHECK(std::abs(s.get("w").value[0] - (0.5 - 1e-3)) > 1e-5);
    }
    SUBCASE("grad_scale divides the gradient") {
        auto a = scalar_store(0.0f, 4.0f), b = scalar_store(0.0f, 1.0f);
        AdamState sa, sb;
        for (int i = 0; i < 3; ++i) {
            adam_step(a, sa, cfg, 1e-3, 0.25);
            adam_step(b, sb, cfg, 1e-3);
        }
        CHECK(a.get("w").value[0] == b.get("w").value[0]);
        CHECK(sa.m[0][0] == sb.m[0][0]);
    }
    SUBCASE("foreign optimizer state is rejected") {
        auto s = scalar_store(0.0f, 1.0f);
        AdamState st;
        st.m.emplace_back(Shape{2});
        st.v.emplace_back(Shape{2});
        CHECK_THROWS_AS(adam_step(s, st, cfg, 1e-3), ContractError);
        AdamState two;
        two.m.resize(2);
        two.v.resize(2);
        two.step = 1;
        CHECK_THROWS_AS(adam_step(s, two, cfg, 1e-3), ContractError);
    }
    SUBCASE("missing gradient is a contract error") {
        auto s = scalar_store(0.0f, 1.0f);
        s.get("w").grad = Tensor<float>();
        AdamState st;
        CHECK_THROWS_AS(adam_step(s, st, cfg, 1e-3), ContractError);
    }
}

TEST_CASE("shared parameters get one moment pair and stay shared") {
    const auto cfg = testkit::tiny_config();
    auto params = mccnet::build(cfg, 4).params;
    REQUIRE_FALSE(params.aliases().empty());
    auto data = samples(2, 1, 32);
    AdamState st;
    for (int step = 0; step < 2; ++step) {
        params.zero_grad();
        Graph<float> g;
        auto out = mccnet::forward(g, params, cfg, g.input(data[0].left), g.input(data[0].right));
        g.backward(losses::mix_loss(out, g.input(data[0].gt), losses::fit_scales({}, 32, 32)));
        adam_step(params, st, {}, 1e-3);
    }
    CHECK(st.m.size() == params.entries().size());
    for (const auto& [from, to] : params.aliases()) {
        for (const auto& [name, p] : params.entries()) {
            if (name.compare(0, to.size(), to) != 0) continue;
            const std::string alias = from + name.substr(to.size());
            CHECK(&params.get(alias) == p.get());
        }
    }
}

TEST_CASE("learning rate halves on schedule") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == 1e-4);
    CHECK(lr_at(59, cfg) == 1e-4);
    CHECK(lr_at(60, cfg) == 5e-5);
    CHECK(lr_at(180, cfg) == 1.25e-5);
    for (int e = 0; e < 400; ++e) CHECK(lr_at(e, cfg) == cfg.lr0 * std::pow(0.5, e / cfg.lr_half_period));
    CHECK_THROWS_AS(lr_at(-1, cfg), PreconditionError);
}

TEST_CASE("He initialization statistics") {
    std::mt19937_64 rng(2024);
    const auto t = he_init({10000}, 9, 0.2, rng);
    double mean = 0, var = 0;
    for (float v : t.data()) mean += v;
    mean /= 10000.0;
    for (float v : t.data()) var += (v - mean) * (v - mean);
    var /= 9999.0;
    const double expected = 2.0 / ((1.0 + 0.04) * 9.0);
    CHECK(std::abs(var / expected - 1.0) < 0.05);
    CHECK(std::abs(mean) < 4.0 * std::sqrt(expected / 10000.0));

    std::mt19937_64 a(5), b(5);
    CHECK(he_init({3, 3, 3, 3}, 27, 0.2, a) == he_init({3, 3, 3, 3}, 27, 0.2, b));

    auto built = mccnet::build(testkit::tiny_config(), 3);
    for (const auto& [name, p] : built.params.entries())
        if (p->value.rank() == 1)
            for (float v : p->value.data()) CHECK(v == 0.0f);
}

TEST_CASE("crop_pair windows all views alike") {
    const auto s = samples(8, 1, 48)[0];
    std::mt19937_64 rng(1);
    SUBCASE("full-size patch is the identity") {
        const auto c = crop_pair(s, 48, rng);
        CHECK(c.left == s.left);
        CHECK(c.right == s.right);
        CHECK(c.gt == s.gt);
        CHECK(c.disparity == s.disparity);
    }
    SUBCASE("windows are even-aligned and shared") {
        for (int trial = 0; trial < 20; ++trial) {
            const auto c = crop_pair(s, 16, rng);
            REQUIRE(c.gt.shape() == Shape{3, 16, 16});
            REQUIRE(c.disparity.shape() == Shape{16, 16});
            // locate the window by brute force on gt and disparity together
            int hits = 0;
            for (std::size_t y0 = 0; y0 + 16 <= 48; ++y0)
                for (std::size_t x0 = 0; x0 + 16 <= 48; ++x0) {
                    bool ok = true;
                    for (std::size_t ch = 0; ch < 3 && ok; ++ch)
                        for (std::size_t y = 0; y < 16 && ok; ++y)
                            for (std::size_t x = 0; x < 16 && ok; ++x) {
                                const std::size_t src = (ch * 48 + y0 + y) * 48 + x0 + x, dst = (ch * 16 + y) * 16 + x;
                                ok = c.gt[dst] == s.gt[src] && c.left[dst] == s.left[src] &&
                                     c.right[dst] == s.right[src];
                            }
                    if (ok) {
                        ++hits;
                        CHECK(y0 % 2 == 0);
                        CHECK(x0 % 2 == 0);
                    }
                }
            CHECK(hits >= 1);
            for (std::size_t i = 0; i < 16 * 16; ++i)
                if (c.disparity[i] == 0.0f)
                    for (std::size_t ch = 0; ch < 3; ++ch) CHECK(c.left[ch * 256 + i] == c.right[ch * 256 + i]);
        }
    }
    SUBCASE("fixed seed gives the same window") {
        std::mt19937_64 a(9), b(9);
        CHECK(crop_pair(s, 24, a).gt == crop_pair(s, 24, b).gt);
    }
    SUBCASE("oversized patch") { CHECK_THROWS_AS(crop_pair(s, 50, rng), PreconditionError); }
}

TEST_CASE("training config validation") {
    auto cfg = tiny_train();
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.patch = 36;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.lr0 = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.beta2 = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    SUBCASE("JSON round trip") {
        const auto j = config::to_json(cfg);
        CHECK(config::to_json(config::train_from_json(j)) == j);
    }
    SUBCASE("unknown keys are named") {
        auto j = config::to_json(cfg);
        j["network"]["use_crosscorrelation"] = false;
        try {
            config::train_from_json(j);
            FAIL("accepted an unknown key");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("network.use_crosscorrelation") != std::string::npos);
        }
        auto top = config::to_json(cfg);
        top["learning_rate"] = 1e-3;
        CHECK_THROWS_WITH_AS(config::train_from_json(top), doctest::Contains("learning_rate"), ConfigError);
    }
    SUBCASE("type errors are named") {
        auto j = config::to_json(cfg);
        j["epochs"] = "ten";
        CHECK_THROWS_WITH_AS(config::train_from_json(j), doctest::Contains("epochs"), ConfigError);
        j = config::to_json(cfg);
        j["network"]["block_channels"] = {1, 2, 3};
        CHECK_THROWS_WITH_AS(config::train_from_json(j), doctest::Contains("block_channels"), ConfigError);
    }
    SUBCASE("partial configs keep defaults") {
        const auto c = config::train_from_json(nlohmann::json{{"epochs", 3}, {"network", {{"width_scale", 4}}}});
        CHECK(c.epochs == 3);
        CHECK(c.lr0 == 1e-4);
        CHECK(c.network.width_scale == 4);
        CHECK(c.network.use_cross_correlation);
    }
}

TEST_CASE("one epoch on two samples writes a checkpoint") {
    ScratchDir dir("train_smoke");
    const auto data = samples(21, 2);
    const auto cfg = tiny_train(1);
    std::vector<EpochRecord> seen;
    TrainOptions opts;
    opts.out_dir = dir.path();
    opts.on_epoch = [&](const EpochRecord& r) { seen.push_back(r); };
    const auto res = train::train(data, data, cfg, opts);

    CHECK(res.epochs_done == 1);
    REQUIRE(res.history.size() == 1);
    CHECK(seen.size() == 1);
    CHECK(res.adam.step == 1);
    CHECK(std::isfinite(res.history[0].train_loss));
    CHECK(res.history[0].lr == cfg.lr0);
    CHECK(std::isfinite(res.history[0].val_psnr));

    for (const char* sub : {"last", "best"}) {
        const auto manifest = dir.path() / sub / "manifest.json";
        REQUIRE(std::filesystem::exists(manifest));
        const auto m = nlohmann::json::parse(slurp(manifest));
        CHECK(m["format"] == "dpdl-checkpoint");
        CHECK(m["epochs_done"] == 1);
        CHECK(m["parameters"].size() == res.params.entries().size());
        CHECK(m["aliases"].size() == res.params.aliases().size());
        CHECK(m["optimizer"]["step"] == 1);
        CHECK(m["param_count"] == res.params.count());
    }
    const auto hist = read_history(dir.path() / "history.csv");
    REQUIRE(hist.size() == 1);
    CHECK(hist[0].train_loss == res.history[0].train_loss);
    CHECK(hist[0].val_psnr == res.history[0].val_psnr);

    const auto ck = load_checkpoint(dir.path() / "last");
    CHECK(same_values(ck.params, res.params));
    CHECK(ck.adam.step == 1);
    CHECK(ck.adam.m.size() == res.adam.m.size());
    CHECK(ck.adam.m[0] == res.adam.m[0]);
    CHECK(ck.best_val_psnr == res.best_val_psnr);
    CHECK(config::to_json(ck.config) == config::to_json(cfg));
}

TEST_CASE("training is reproducible and resumes bit-exactly") {
    const auto data = samples(31, 4);
    const auto val = samples(32, 1);
    auto cfg = tiny_train(3);
    cfg.batch = 1;  // four steps per epoch

    ScratchDir a("train_a"), b("train_b");
    TrainOptions full;
    full.out_dir = a.path();
    const auto ref = train::train(data, val, cfg, full);
    CHECK(ref.adam.step == 12);

    TrainOptions part;
    part.out_dir = b.path();
    part.stop_after = 1;
    const auto first = train::train(data, val, cfg, part);
    CHECK(first.epochs_done == 1);
    CHECK_FALSE(same_values(first.params, ref.params));

    TrainOptions rest;
    rest.out_dir = b.path();
    rest.resume = true;
    const auto resumed = train::train(data, val, cfg, rest);
    CHECK(resumed.epochs_done == 3);
    CHECK(resumed.adam.step == 12);
    CHECK(same_values(resumed.params, ref.params));
    REQUIRE(resumed.history.size() == ref.history.size());
    for (std::size_t i = 0; i < ref.history.size(); ++i) {
        CHECK(resumed.history[i].train_loss == ref.history[i].train_loss);
        CHECK(resumed.history[i].val_psnr == ref.history[i].val_psnr);
    }
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), a.path());
        INFO(rel.string());
        CHECK(slurp(entry.path()) == slurp(b.path() / rel));
    }

    SUBCASE("a changed config refuses to resume") {
        auto other = cfg;
        other.lr0 = 2e-4;
        CHECK_THROWS_AS(train::train(data, val, other, rest), ConfigError);
    }
}

TEST_CASE("divergence guard reports the step") {
    const auto data = samples(41, 2);
    auto cfg = tiny_train(1);
    cfg.lr0 = 1e30;
    cfg.batch = 1;
    try {
        train::train(data, data, cfg);
        FAIL("no divergence detected");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("optimizer step") != std::string::npos);
    }
}

TEST_CASE("training preconditions") {
    const auto data = samples(51, 1);
    const auto cfg = tiny_train(1);
    CHECK_THROWS_AS(train::train({}, data, cfg), PreconditionError);
    CHECK_THROWS_AS(train::train(data, {}, cfg), PreconditionError);
    auto big = cfg;
    big.patch = 64;
    CHECK_THROWS_AS(train::train(data, data, big), PreconditionError);
}

TEST_CASE("checkpoint loading rejects mismatches") {
    ScratchDir dir("ckpt_bad");
    const auto cfg = tiny_train(1);
    auto built = mccnet::build(cfg.network, 1);
    save_checkpoint(dir.path(), cfg, built.params, {}, 0, -std::numeric_limits<double>::infinity());
    const auto ck = load_checkpoint(dir.path());
    CHECK(same_values(ck.params, built.params));
    CHECK(ck.adam.step == 0);
    CHECK(std::isinf(ck.best_val_psnr));

    auto m = nlohmann::json::parse(slurp(dir.path() / "manifest.json"));
    m["config"]["network"]["width_scale"] = 2;
    std::ofstream(dir.path() / "manifest.json") << m.dump();
    CHECK_THROWS_AS(load_checkpoint(dir.path()), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing"), IoError);
}

TEST_CASE("single-sample overfit") {
    // Adam at 1e-3: at the 1e-4 schedule start the loss is still near 0.1 after 500 steps.
    mccnet::NetworkConfig net = testkit::tiny_config();
    const auto s = synth::render_dp(synth::make_scene(3, 0, 64));
    auto params = mccnet::build(net, 1).params;
    const auto lc = losses::fit_scales({}, 64, 64);
    AdamState st;
    double first = 0, last = 0;
    for (int step = 0; step < 500; ++step) {
        params.zero_grad();
        Graph<float> g;
        auto out = mccnet::forward(g, params, net, g.input(s.left), g.input(s.right));
        auto loss = losses::mix_loss(out, g.input(s.gt), lc);
        g.backward(loss);
        adam_step(params, st, {}, 1e-3);
        (step == 0 ? first : last) = loss.value().item();
    }
    MESSAGE("mix loss " << first << " -> " << last << " after 500 steps");
    CHECK(last < 0.02);
}
