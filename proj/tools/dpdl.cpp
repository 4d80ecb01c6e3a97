// dpdl: synthesize dual-pixel data, train, infer, evaluate and audit.
//
// Exit codes: 0 success, 1 verification or run failure, 2 usage/config/input error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpdl/audit.hpp"
#include "dpdl/config.hpp"
#include "dpdl/dp_synth.hpp"
#include "dpdl/errors.hpp"
#include "dpdl/run_manifest.hpp"
#include "dpdl/tensor_io.hpp"
#include "dpdl/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dpdl;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

// Input error raised by the CLI itself.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
    // probe writability up front rather than after a long run
    const fs::path probe = dir / ".dpdl_write_probe";
    std::ofstream(probe) << "";
    if (!fs::exists(probe)) throw IoError("output directory " + dir.string() + " is not writable");
    fs::remove(probe, ec);
}

bool has_ext(const fs::path& p, const char* ext) { return p.extension() == ext; }

Tensor<float> load_image(const fs::path& p) {
    if (has_ext(p, ".ppm")) return load_ppm(p);
    if (has_ext(p, ".tnsr")) return load_tnsr(p);
    throw UsageError("unsupported image format '" + p.string() + "' (expected .ppm or .tnsr)");
}

void save_image(const fs::path& p, const Tensor<float>& t) {
    if (has_ext(p, ".ppm"))
        save_ppm(p, t);
    else if (has_ext(p, ".tnsr"))
        save_tnsr(p, t);
    else
        throw UsageError("unsupported output format '" + p.string() + "' (expected .ppm or .tnsr)");
}

std::vector<synth::DPSample> load_nonempty(const fs::path& dir) {
    auto data = synth::load_dataset(dir);
    if (data.empty()) throw UsageError("dataset " + dir.string() + " is empty");
    return data;
}

json number_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream os(p);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("cannot write " + p.string());
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::size_t size = 64;
    std::string out;
};

int cmd_synth(const SynthArgs& a, run::RunManifest& m) {
    if (a.size < synth::kMinSize)
        throw UsageError("--size " + std::to_string(a.size) + " is below the minimum " +
                         std::to_string(synth::kMinSize));
    if (a.count == 0) throw UsageError("--count must be at least 1");
    ensure_dir(a.out);
    const synth::DatasetOptions opts;
    synth::write_dataset(a.out, synth::make_dataset(a.seed, a.count, a.size, opts), a.seed, opts);
    m.set_seed(a.seed);
    m.set_output(a.out);
    m.write(fs::path(a.out) / run::kManifestName);
    std::cerr << "wrote " << a.count << " samples of " << a.size << "x" << a.size << " to " << a.out << "\n";
    return kOk;
}

struct TrainArgs {
    std::string data, val, config, out;
    bool no_cc = false;
    bool resume = false;
    int epochs = 0;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, run::RunManifest& m) {
    train::TrainConfig cfg;
    if (!a.config.empty()) cfg = config::load_train_config(a.config);
    if (a.no_cc) cfg.network.use_cross_correlation = false;
    if (a.epochs > 0) cfg.epochs = a.epochs;
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    const auto train_set = load_nonempty(a.data);
    const auto val_set = load_nonempty(a.val);
    ensure_dir(a.out);
    write_json(fs::path(a.out) / "config.json", config::to_json(cfg));

    if (!a.config.empty()) m.add_config(a.config);
    m.add_input("data", a.data);
    m.add_input("val", a.val);
    m.set_seed(cfg.seed);
    m.set_output(a.out);

    train::TrainOptions opts;
    opts.out_dir = a.out;
    opts.resume = a.resume;
    opts.on_epoch = [&](const train::EpochRecord& r) {
        char line[160];
        std::snprintf(line, sizeof line, "epoch %3d/%d  lr %.3g  loss %.5f  val psnr %.3f dB  ssim %.4f\n",
                      r.epoch + 1, cfg.epochs, r.lr, r.train_loss, r.val_psnr, r.val_ssim);
        std::cerr << line;
    };
    const auto res = train::train(train_set, val_set, cfg, opts);
    m.write(fs::path(a.out) / run::kManifestName);
    std::cerr << "best val psnr " << res.best_val_psnr << " dB; checkpoints in " << a.out << "\n";
    return kOk;
}

struct InferArgs {
    std::string ckpt, left, right, out;
};

int cmd_infer(const InferArgs& a, run::RunManifest& m) {
    const auto left = load_image(a.left), right = load_image(a.right);
    mccnet::check_input_extents(left.shape(), right.shape());
    auto ck = train::load_checkpoint(a.ckpt);
    const fs::path out(a.out);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    save_image(out, mccnet::infer(ck.params, ck.config.network, left, right));

    m.add_input("ckpt", a.ckpt);
    m.add_input("left", a.left);
    m.add_input("right", a.right);
    m.set_output(a.out);
    m.write(out.string() + ".run.json");
    return kOk;
}

struct EvalArgs {
    std::string ckpt, data, baseline, out;
};

int cmd_eval(const EvalArgs& a, run::RunManifest& m) {
    if (a.ckpt.empty() == a.baseline.empty()) throw UsageError("eval needs exactly one of --ckpt or --baseline");
    const auto data = load_nonempty(a.data);
    json report;
    train::EvalReport r;
    if (!a.ckpt.empty()) {
        auto ck = train::load_checkpoint(a.ckpt);
        r = train::evaluate(ck.params, ck.config.network, data);
        const auto cost = mccnet::estimate_flops(mccnet::trace(ck.config.network, data[0].gt.dim(1), data[0].gt.dim(2)));
        report["model"] = "network";
        report["params"] = mccnet::count_params(ck.params);
        report["flops"] = {{"height", data[0].gt.dim(1)},
                           {"width", data[0].gt.dim(2)},
                           {"macs", cost.macs},
                           {"flops", cost.flops}};
        m.add_input("ckpt", a.ckpt);
    } else {
        std::vector<synth::DPSample> as_pred = data;
        if (a.baseline == "gt")
            for (auto& s : as_pred) s.left = s.gt;
        else if (a.baseline != "input")
            throw UsageError("--baseline must be 'input' or 'gt'");
        ParamStore<float> none;
        r = train::evaluate(none, {}, as_pred, true);
        report["model"] = a.baseline;
        report["params"] = nullptr;
        report["flops"] = nullptr;
    }
    report["psnr_db"] = number_or_inf(r.psnr);
    report["ssim"] = r.ssim;
    report["msssim"] = r.msssim;
    report["mae"] = r.mae;
    report["n_images"] = r.n_images;
    std::cout << report.dump(2) << std::endl;

    m.add_input("data", a.data);
    if (!a.out.empty()) {
        ensure_dir(a.out);
        write_json(fs::path(a.out) / "report.json", report);
        m.set_output(a.out);
        m.write(fs::path(a.out) / run::kManifestName);
    }
    return kOk;
}

struct CheckArgs {
    std::string config, out;
    bool no_cc = false;
    bool skip_grad = false;
    double tolerance = 1e-4;
};

int cmd_check(const CheckArgs& a, run::RunManifest& m) {
    mccnet::NetworkConfig net;
    if (!a.config.empty()) {
        net = config::load_train_config(a.config).network;
        m.add_config(a.config);
    }
    if (a.no_cc) net.use_cross_correlation = false;
    net.validate();

    json report;
    bool ok = true;
    const auto arch = audit::architecture(net);
    {
        char line[256];
        std::printf("architecture (width_scale %g, cross-correlation %s)\n", net.width_scale,
                    net.use_cross_correlation ? "on" : "off");
        std::snprintf(line, sizeof line, "  params   %zu  (%.3fM; reference 5.52M, ratio %.3f)\n", arch.params,
                      arch.params / 1e6, arch.param_ratio());
        std::fputs(line, stdout);
        std::snprintf(line, sizeof line, "  MACs     %.2fG at %zux%zu  (reference 978.79G, ratio %.3f)\n",
                      arch.cost.macs / 1e9, arch.width, arch.height, arch.mac_ratio());
        std::fputs(line, stdout);
        std::snprintf(line, sizeof line, "  FLOPs    %.2fG at %zux%zu  (2 per MAC + elementwise; ratio %.3f)\n",
                      arch.cost.flops / 1e9, arch.width, arch.height, arch.flop_ratio());
        std::fputs(line, stdout);
        std::printf("  traced in %.3f s\n", arch.seconds);
    }
    report["architecture"] = {{"params", arch.params},
                              {"reference_params", audit::kReferenceParams},
                              {"height", arch.height},
                              {"width", arch.width},
                              {"macs", arch.cost.macs},
                              {"flops", arch.cost.flops},
                              {"reference_flops", audit::kReferenceFlops}};

    if (!a.skip_grad) {
        json cases = json::array();
        std::vector<std::string> failed;
        auto emit = [&](const char* group, const std::vector<audit::GradResult>& rs) {
            for (const auto& r : rs) {
                const bool pass = r.error <= a.tolerance && r.checked > 0;
                if (!pass) failed.push_back(std::string(group) + "/" + r.name);
                std::printf("  %-5s %-8s %-30s err %.2e  coords %zu%s\n", pass ? "ok" : "FAIL", group, r.name.c_str(),
                            r.error, r.checked, r.extended ? "  (80-bit)" : "");
                cases.push_back({{"group", group},
                                 {"name", r.name},
                                 {"error", r.error},
                                 {"checked", r.checked},
                                 {"skipped", r.skipped},
                                 {"extended", r.extended},
                                 {"pass", pass}});
            }
        };
        std::printf("gradient checks (h = 1e-5, tolerance %.1e)\n", a.tolerance);
        emit("op", audit::op_suite());
        emit("loss", audit::loss_suite());
        emit("module", audit::module_suite(net));
        report["gradients"] = cases;
        report["failed"] = failed;
        if (!failed.empty()) {
            ok = false;
            std::printf("%zu gradient checks above tolerance:\n", failed.size());
            for (const auto& f : failed) std::printf("  %s\n", f.c_str());
        }
    }
    report["pass"] = ok;
    if (!a.out.empty()) {
        ensure_dir(a.out);
        write_json(fs::path(a.out) / "report.json", report);
        m.set_output(a.out);
        m.write(fs::path(a.out) / run::kManifestName);
    }
    return ok ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-pixel defocus deblurring: data synthesis, training, inference and audits"};
    app.require_subcommand(1);
    app.set_version_flag("--version", run::kVersion);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Render a synthetic dual-pixel dataset");
    synth->add_option("--seed", sa.seed, "Dataset seed")->required();
    synth->add_option("--count", sa.count, "Number of samples")->required();
    synth->add_option("--size", sa.size, "Image side in pixels")->capture_default_str();
    synth->add_option("--out", sa.out, "Output directory")->required();

    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "Train the network; writes last/, best/, history.csv");
    trn->add_option("--data", ta.data, "Training dataset directory")->required();
    trn->add_option("--val", ta.val, "Validation dataset directory")->required();
    trn->add_option("--config", ta.config, "Training config JSON (defaults when omitted)");
    trn->add_option("--out", ta.out, "Output directory")->required();
    trn->add_flag("--no-cc", ta.no_cc, "Ablation: replace cross-correlation by plain concatenation");
    trn->add_flag("--resume", ta.resume, "Continue from <out>/last when present");
    trn->add_option("--epochs", ta.epochs, "Override the config's epoch count");
    trn->add_option("--seed", ta.seed, "Override the config's seed");

    InferArgs ia;
    auto* inf = app.add_subcommand("infer", "Deblur one left/right pair");
    inf->add_option("--ckpt", ia.ckpt, "Checkpoint directory")->required();
    inf->add_option("--left", ia.left, "Left view (.ppm or .tnsr)")->required();
    inf->add_option("--right", ia.right, "Right view (.ppm or .tnsr)")->required();
    inf->add_option("--out", ia.out, "Output image (.ppm or .tnsr)")->required();

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Score a checkpoint (or a baseline) on a dataset; JSON on stdout");
    ev->add_option("--ckpt", ea.ckpt, "Checkpoint directory");
    ev->add_option("--data", ea.data, "Dataset directory")->required();
    ev->add_option("--baseline", ea.baseline, "Score 'input' (left view) or 'gt' instead of a network");
    ev->add_option("--out", ea.out, "Also write report.json and the run manifest here");

    CheckArgs ca;
    auto* chk = app.add_subcommand("check", "Gradient checks and the parameter/FLOP audit");
    chk->add_option("--config", ca.config, "Training config JSON whose network is audited");
    chk->add_flag("--no-cc", ca.no_cc, "Audit the no-cross-correlation variant");
    chk->add_flag("--skip-grad", ca.skip_grad, "Only run the architecture audit");
    chk->add_option("--tolerance", ca.tolerance, "Gradient check tolerance")->capture_default_str();
    chk->add_option("--out", ca.out, "Also write report.json and the run manifest here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    std::vector<std::string> args(argv, argv + argc);
    try {
        if (synth->parsed()) {
            run::RunManifest m("synth", args);
            return cmd_synth(sa, m);
        }
        if (trn->parsed()) {
            run::RunManifest m("train", args);
            return cmd_train(ta, m);
        }
        if (inf->parsed()) {
            run::RunManifest m("infer", args);
            return cmd_infer(ia, m);
        }
        if (ev->parsed()) {
            run::RunManifest m("eval", args);
            return cmd_eval(ea, m);
        }
        run::RunManifest m("check", args);
        return cmd_check(ca, m);
    } catch (const train::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailed;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const PreconditionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ResourceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailed;
    }
}
