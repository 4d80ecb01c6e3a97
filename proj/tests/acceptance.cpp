// Acceptance run: one PASS/FAIL line per top-level criterion, tolerances
// fixed below. Exit status is the number of failed lines.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "dp_oracles.hpp"
#include "dpdl/audit.hpp"
#include "dpdl/losses.hpp"
#include "dpdl/trainer.hpp"
#include "reference_metrics.hpp"
#include "testkit.hpp"

using namespace dpdl;
using dpdl::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

// gradients
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 300.0;

// attention
constexpr int kAttentionInputs = 100;
constexpr double kRowSumTolerance = 1e-6;

// metric oracles
constexpr int kMetricPairs = 50;
constexpr double kCharbonnierTolerance = 1e-7;
constexpr double kSsimTolerance = 1e-6;
constexpr double kMsSsimTolerance = 1e-5;
constexpr double kPsnrTolerance = 1e-9;  // dB
constexpr double kMaeTolerance = 1e-6;

// dual-pixel physics
constexpr double kFullDiscTolerance = 1e-6;

// architecture
constexpr double kParamBand = 0.20;
constexpr double kFlopFactor = 2.0;
constexpr double kAuditBudgetSeconds = 10.0;

// learning protocol
constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr std::size_t kTrainCount = 200;
constexpr std::size_t kHeldOutCount = 20;
constexpr std::size_t kSize = 64;
constexpr int kEpochs = 40;
constexpr double kMinGainDb = 1.0;
constexpr double kLearningBudgetSeconds = 30 * 60.0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void report(const char* name, bool pass, const std::string& detail) {
    std::printf("%s  %-20s %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    failures += !pass;
}

template <class... A>
std::string format(const char* fmt, A... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

// Runs one criterion; an exception fails it with the message.
void criterion(const char* name, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(name, false, std::string("threw: ") + e.what());
    }
}

void gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::pair<std::string, audit::GradResult>> all;
    for (const auto& r : audit::op_suite()) all.emplace_back("op", r);
    for (const auto& r : audit::loss_suite()) all.emplace_back("loss", r);
    for (const auto& r : audit::module_suite(testkit::tiny_config())) all.emplace_back("module", r);
    const double secs = seconds_since(t0);

    double worst = 0.0;
    std::string worst_name, failed;
    std::size_t coords = 0;
    for (const auto& [group, r] : all) {
        coords += r.checked;
        if (r.error > worst || worst_name.empty()) {
            worst = r.error;
            worst_name = group + "/" + r.name;
        }
        if (!(r.error <= kGradTolerance) || r.checked == 0) failed += " " + group + "/" + r.name;
    }
    const bool pass = failed.empty() && secs < kGradBudgetSeconds;
    report("gradients", pass,
           format("%zu cases, %zu coords, max rel err %.2e (%s) <= %.0e; %.1f s < %.0f s%s", all.size(), coords,
                  worst, worst_name.c_str(), kGradTolerance, secs, kGradBudgetSeconds,
                  failed.empty() ? "" : ("; failed:" + failed).c_str()));
}

void attention() {
    using namespace mccnet;
    auto cfg = testkit::tiny_config();
    auto f = [](auto& ops, const auto& x) { return cross_correlation(ops, "cc1", x[0], x[1]); };
    double worst_row = 0.0;
    std::size_t rows = 0, involution_bad = 0, swap_bad = 0;
    for (int i = 0; i < kAttentionInputs; ++i) {
        const std::uint64_t seed = 1000 + i;
        const std::size_t C = 2 + i % 3, H = 3 + i % 5, W = 4 + (i * 7) % 9;
        const Shape s{C, H, W};

        // row sums with independent projections
        {
            auto store = testkit::declared(cfg, {s, s}, f);
            testkit::randomize(store, seed);
            Graph<float> g;
            GraphOps<float> ops(g, store, cfg);
            f(ops, std::vector{g.input(random_tensor<float>(s, seed, -3, 3)),
                               g.input(random_tensor<float>(s, seed + 1, -3, 3))});
            for (const auto* a : testkit::softmax_nodes(g))
                for (std::size_t r = 0; r < H * W; ++r) {
                    double sum = 0.0;
                    for (std::size_t k = 0; k < W; ++k) sum += (*a)[r * W + k];
                    worst_row = std::max(worst_row, std::abs(sum - 1.0));
                    ++rows;
                }
        }
        // transpose involution
        {
            Graph<float> g;
            const auto x = random_tensor<float>({H, W + i % 4, W + i % 4}, seed + 2, -5, 5);
            involution_bad += !(batched_transpose(batched_transpose(g.input(x))).value() == x);
        }
        // swap symmetry with tied projections
        {
            auto tied = cfg;
            tied.tie_qk = true;
            auto store = testkit::declared(tied, {s, s}, f);
            testkit::randomize(store, seed + 3);
            const auto a = random_tensor<float>(s, seed + 4), b = random_tensor<float>(s, seed + 5);
            Graph<float> g;
            GraphOps<float> ops(g, store, tied);
            auto [abl, abr] = f(ops, std::vector{g.input(a), g.input(b)});
            auto [bal, bar] = f(ops, std::vector{g.input(b), g.input(a)});
            swap_bad += !(bal.value() == abr.value() && bar.value() == abl.value());
        }
    }
    const bool pass = worst_row <= kRowSumTolerance && rows > 0 && involution_bad == 0 && swap_bad == 0;
    report("attention", pass,
           format("%d inputs: %zu rows, max |sum-1| %.1e <= %.0e; transpose involution mismatches %zu; "
                  "tied swap mismatches %zu",
                  kAttentionInputs, rows, worst_row, kRowSumTolerance, involution_bad, swap_bad));
}

template <class F>
double on_graph(const Tensor<double>& a, const Tensor<double>& b, F f) {
    Graph<double> g;
    return f(g.input(a), g.input(b)).value().item();
}

Tensor<float> to_float(const Tensor<double>& t) {
    Tensor<float> out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(t[i]);
    return out;
}

Tensor<double> to_double(const Tensor<float>& t) {
    Tensor<double> out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
    return out;
}

void metric_oracles() {
    losses::LossConfig cfg;
    cfg = losses::fit_scales(cfg, 48, 48);
    double charb = 0, ssim = 0, msssim = 0, psnr = 0, mae = 0;
    for (int i = 0; i < kMetricPairs; ++i) {
        const auto [xd, yd] = testing::image_pair({3, 48, 48}, 500 + i, 0.05 + 0.01 * (i % 20));
        // metrics take float images; the oracle sees the same rounded values
        const auto x = to_float(xd), y = to_float(yd);
        const auto xr = to_double(x), yr = to_double(y);
        charb = std::max(charb, std::abs(on_graph(xr, yr, [&](auto a, auto b) {
                                             return losses::charbonnier(a, b, cfg.epsilon);
                                         }) - reference::charbonnier(xr, yr, cfg.epsilon)));
        ssim = std::max(ssim, std::abs(metrics::ssim(x, y) - reference::ssim(xr, yr)));
        msssim = std::max(msssim, std::abs(metrics::ms_ssim(x, y, cfg) - reference::ms_ssim(xr, yr, cfg.msssim_weights)));
        psnr = std::max(psnr, std::abs(metrics::psnr(x, y) - reference::psnr(xr, yr)));
        mae = std::max(mae, std::abs(metrics::mae(x, y) - reference::mae(xr, yr)));
    }
    const bool pass = charb <= kCharbonnierTolerance && ssim <= kSsimTolerance && msssim <= kMsSsimTolerance &&
                      psnr <= kPsnrTolerance && mae <= kMaeTolerance;
    report("metric oracles", pass,
           format("%d pairs 3x48x48, max |diff|: charbonnier %.1e<=%.0e ssim %.1e<=%.0e ms_ssim(%d scales) "
                  "%.1e<=%.0e psnr %.1e<=%.0e dB mae %.1e<=%.0e",
                  kMetricPairs, charb, kCharbonnierTolerance, ssim, kSsimTolerance, cfg.msssim_scales, msssim,
                  kMsSsimTolerance, psnr, kPsnrTolerance, mae, kMaeTolerance));
}

void dp_physics() {
    using namespace oracle;
    // zero disparity: every view equals the sharp image
    bool identity = true;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto sharp = random_tensor<float>({3, 20 + seed, 24}, 40 + seed, 0.0, 1.0);
        const auto s = synth::render_dp(uniform_scene(sharp, 0));
        identity = identity && s.left == sharp && s.right == sharp && s.gt == sharp;
    }
    // an isolated point: left-minus-right centroid sign follows the focal side
    int sign_ok = 0;
    const auto point = point_scene(31);
    for (int r = 1; r <= 5; ++r) {
        const auto behind = synth::render_dp(uniform_scene(point, r));
        const auto front = synth::render_dp(uniform_scene(point, -r));
        sign_ok += centroid_x(behind.left) - centroid_x(behind.right) < 0.0 &&
                   centroid_x(front.left) - centroid_x(front.right) > 0.0;
    }
    // mean of the views against a direct full-disc render
    double worst = 0.0;
    for (int r = -5; r <= 5; ++r) {
        const auto sharp = random_tensor<float>({3, 24, 28}, 60 + r + 5, 0.0, 1.0);
        const auto s = synth::render_dp(uniform_scene(sharp, r));
        const auto disc = full_disc_render(sharp, r);
        for (std::size_t i = 0; i < disc.size(); ++i)
            worst = std::max(worst, std::abs(0.5 * (double(s.left[i]) + double(s.right[i])) - disc[i]));
    }
    const bool pass = identity && sign_ok == 5 && worst <= kFullDiscTolerance;
    report("dp physics", pass,
           format("zero-disparity identity %s; centroid sign flips %d/5 radii; mean(L,R) vs full disc %.1e <= %.0e "
                  "over r=-5..5",
                  identity ? "bit-exact" : "BROKEN", sign_ok, worst, kFullDiscTolerance));
}

void architecture() {
    mccnet::NetworkConfig full;
    const auto a = audit::architecture(full);
    const bool params_ok = std::abs(a.param_ratio() - 1.0) <= kParamBand;
    auto within = [](double ratio) { return ratio >= 1.0 / kFlopFactor && ratio <= kFlopFactor; };
    const bool flops_ok = within(a.mac_ratio()) || within(a.flop_ratio());
    const bool pass = params_ok && flops_ok && a.seconds < kAuditBudgetSeconds;
    report("architecture", pass,
           format("params %zu vs %.2fM (ratio %.3f, band +-%.0f%%); at %zux%zu MACs %.2fG (ratio %.3f), FLOPs %.2fG "
                  "(ratio %.3f) vs %.2fG, need one within %.0fx; %.2f s < %.0f s",
                  a.params, audit::kReferenceParams / 1e6, a.param_ratio(), kParamBand * 100, a.width, a.height,
                  a.cost.macs / 1e9, a.mac_ratio(), a.cost.flops / 1e9, a.flop_ratio(), audit::kReferenceFlops / 1e9,
                  kFlopFactor, a.seconds, kAuditBudgetSeconds));
}

// ---------------------------------------------------------------------------
// Tiny training protocol, shared by the learning-signal and ablation lines.

train::TrainConfig protocol(std::uint64_t seed, bool cc) {
    train::TrainConfig c;
    c.lr0 = 1e-3;
    c.lr_half_period = 15;
    c.epochs = kEpochs;
    c.patch = 32;
    c.batch = 1;
    c.seed = seed;
    c.network.width_scale = 4;
    c.network.use_cross_correlation = cc;
    c.network.residual_output = true;
    return c;
}

struct SeedRun {
    double input_psnr = 0.0;
    double output_psnr = 0.0;
    double first_loss = 0.0;
    double final_loss_avg = 0.0;  // trailing 10-epoch mean
    double seconds = 0.0;
};

struct Data {
    std::vector<synth::DPSample> train, held_out;
};

Data protocol_data(std::uint64_t seed) {
    return {synth::make_dataset(1000 + seed, kTrainCount, kSize), synth::make_dataset(2000 + seed, kHeldOutCount, kSize)};
}

SeedRun run_seed(const Data& d, std::uint64_t seed, bool cc) {
    const auto cfg = protocol(seed, cc);
    const auto t0 = std::chrono::steady_clock::now();
    auto res = train::train(d.train, d.held_out, cfg);
    SeedRun r;
    r.seconds = seconds_since(t0);
    r.output_psnr = train::evaluate(res.params, cfg.network, d.held_out).psnr;
    r.input_psnr = train::evaluate(res.params, cfg.network, d.held_out, true).psnr;
    r.first_loss = res.history.front().train_loss;
    const std::size_t n = std::min<std::size_t>(10, res.history.size());
    for (std::size_t i = res.history.size() - n; i < res.history.size(); ++i) r.final_loss_avg += res.history[i].train_loss;
    r.final_loss_avg /= n;
    std::printf("      seed %llu %-6s held-out %.3f dB (input %.3f dB), loss %.4f -> %.4f (10-epoch mean), %.0f s\n",
                static_cast<unsigned long long>(seed), cc ? "full" : "no-cc", r.output_psnr, r.input_psnr,
                r.first_loss, r.final_loss_avg, r.seconds);
    std::fflush(stdout);
    return r;
}

void learning_and_ablation() {
    std::vector<SeedRun> full, nocc;
    for (auto seed : kSeeds) {
        const auto d = protocol_data(seed);
        full.push_back(run_seed(d, seed, true));
        nocc.push_back(run_seed(d, seed, false));
    }
    const double n = static_cast<double>(full.size());
    double gain = 0, full_psnr = 0, nocc_psnr = 0, secs = 0;
    bool loss_falls = true;
    std::string margins;
    for (std::size_t i = 0; i < full.size(); ++i) {
        gain += (full[i].output_psnr - full[i].input_psnr) / n;
        full_psnr += full[i].output_psnr / n;
        nocc_psnr += nocc[i].output_psnr / n;
        secs += full[i].seconds;
        loss_falls = loss_falls && full[i].final_loss_avg < full[i].first_loss;
        margins += format(" %+.3f", full[i].output_psnr - nocc[i].output_psnr);
    }
    report("learning signal", gain >= kMinGainDb && secs <= kLearningBudgetSeconds && loss_falls,
           format("%zu seeds, %d epochs, %zu train / %zu held-out at %zux%zu, residual head: mean gain %+.3f dB >= %+.1f dB; "
                  "trailing loss below epoch 1 %s; %.0f s <= %.0f s",
                  full.size(), kEpochs, kTrainCount, kHeldOutCount, kSize, kSize, gain, kMinGainDb,
                  loss_falls ? "yes" : "no", secs, kLearningBudgetSeconds));
    report("ablation direction", full_psnr >= nocc_psnr,
           format("mean held-out PSNR full %.3f dB vs no-cc %.3f dB (need full >= no-cc); per-seed margins%s dB", full_psnr, nocc_psnr,
                  margins.c_str()));
}

// ---------------------------------------------------------------------------

void determinism(const fs::path& scratch) {
    const std::string exe = DPDL_CLI;
    auto run = [&](const std::string& args) {
        const auto r = testing::run_cli(exe, args);
        if (r.code != 0) throw std::runtime_error("dpdl " + args + " exited " + std::to_string(r.code) + ": " + r.output);
    };
    const fs::path cfg = scratch / "det.json";
    std::ofstream(cfg) << R"({"epochs": 2, "patch": 16, "batch": 2, "seed": 11, "network": {"width_scale": 4}})";
    std::vector<std::string> same;
    for (int k = 0; k < 2; ++k) {
        const auto d = scratch / ("run" + std::to_string(k));
        run("synth --seed 21 --count 6 --size 32 --out " + (d / "train").string());
        run("synth --seed 22 --count 2 --size 32 --out " + (d / "val").string());
        run("train --data " + (d / "train").string() + " --val " + (d / "val").string() + " --config " + cfg.string() +
            " --out " + (d / "model").string());
        run("infer --ckpt " + (d / "model" / "best").string() + " --left " +
            (d / "val" / "sample_00000_left.ppm").string() + " --right " +
            (d / "val" / "sample_00000_right.ppm").string() + " --out " + (d / "out.ppm").string());
    }
    const auto a = testing::artifact_tree(scratch / "run0"), b = testing::artifact_tree(scratch / "run1");
    std::size_t differing = 0;
    for (const auto& [k, v] : a) {
        auto it = b.find(k);
        differing += it == b.end() || it->second != v;
    }
    const bool pass = a.size() == b.size() && differing == 0 && a.size() > 0;
    report("determinism", pass,
           format("synth, train, infer rerun: %zu artifacts, %zu differ (run manifests excluded)", a.size(), differing));
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    testing::ScratchDir scratch("acceptance");
    criterion("gradients", gradients);
    criterion("attention", attention);
    criterion("metric oracles", metric_oracles);
    criterion("dp physics", dp_physics);
    criterion("architecture", architecture);
    criterion("determinism", [&] { determinism(scratch.path()); });
    try {
        learning_and_ablation();
    } catch (const std::exception& e) {
        report("learning signal", false, std::string("threw: ") + e.what());
        report("ablation direction", false, "not run");
    }
    std::printf("%d failed, %.0f s total\n", failures, seconds_since(t0));
    return failures;
}
