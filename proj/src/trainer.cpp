#include "dpdl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dpdl/config.hpp"
#include "dpdl/errors.hpp"
#include "dpdl/parallel.hpp"
#include "dpdl/tensor_io.hpp"
#include "json.hpp"

namespace dpdl::train {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw ConfigError("Adam betas must lie in (0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (lr_half_period < 1) throw ConfigError("lr_half_period must be at least 1");
    if (patch < 16 || patch % 8) throw ConfigError("patch must be a multiple of 8 and at least 16, got " + std::to_string(patch));
    if (batch < 1) throw ConfigError("batch must be at least 1");
    network.validate();
    loss.validate();
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw PreconditionError("lr_at: epoch must be non-negative");
    return std::ldexp(cfg.lr0, -(epoch / cfg.lr_half_period));
}

void adam_step(ParamStore<float>& params, AdamState& state, const AdamConfig& cfg, double lr, double grad_scale) {
    const auto& entries = params.entries();
    if (state.m.empty() && state.step == 0) {
        for (const auto& [name, p] : entries) {
            state.m.emplace_back(p->value.shape());
            state.v.emplace_back(p->value.shape());
        }
    }
    if (state.m.size() != entries.size() || state.v.size() != entries.size())
        throw ContractError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                            " moment pairs for " + std::to_string(entries.size()) + " parameters");
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& [name, p] = entries[k];
        if (p->grad.shape() != p->value.shape())
            throw ContractError("adam_step: parameter '" + name + "' has no gradient");
        if (state.m[k].shape() != p->value.shape() || state.v[k].shape() != p->value.shape())
            throw ContractError("adam_step: moment shape mismatch for '" + name + "'");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t), bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto& p = *entries[k].second;
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = static_cast<double>(p.grad[i]) * grad_scale;
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
            p.value[i] = static_cast<float>(p.value[i] - step);
        }
    }
}

synth::DPSample crop_pair(const synth::DPSample& s, std::size_t patch, std::mt19937_64& rng) {
    const std::size_t H = s.gt.dim(1), W = s.gt.dim(2);
    if (patch == 0 || patch > H || patch > W)
        throw PreconditionError("crop_pair: patch " + std::to_string(patch) + " does not fit " + std::to_string(H) +
                                "x" + std::to_string(W));
    std::uniform_int_distribution<std::size_t> uy(0, (H - patch) / 2), ux(0, (W - patch) / 2);
    const std::size_t y0 = 2 * uy(rng), x0 = 2 * ux(rng);
    auto cut = [&](const Tensor<float>& t) {
        const bool planar = t.rank() == 2;
        const std::size_t C = planar ? 1 : t.dim(0), w = t.dim(t.rank() - 1);
        const std::size_t h = t.dim(t.rank() - 2);
        Tensor<float> out(planar ? Shape{patch, patch} : Shape{C, patch, patch});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < patch; ++y)
                std::copy_n(t.ptr() + (c * h + y0 + y) * w + x0, patch, out.ptr() + (c * patch + y) * patch);
        return out;
    };
    synth::DPSample out;
    out.left = cut(s.left);
    out.right = cut(s.right);
    out.gt = cut(s.gt);
    if (!s.disparity.empty()) out.disparity = cut(s.disparity);
    return out;
}

EvalReport evaluate(ParamStore<float>& params, const mccnet::NetworkConfig& net,
                    const std::vector<synth::DPSample>& data, bool input_only) {
    struct Row {
        double psnr, ssim, msssim, mae;
    };
    std::vector<Row> rows(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const auto& s = data[i];
        const Tensor<float> pred = input_only ? s.left : mccnet::infer(params, net, s.left, s.right);
        const auto ms = losses::fit_scales({}, s.gt.dim(1), s.gt.dim(2));
        rows[i] = {metrics::psnr(pred, s.gt), metrics::ssim(pred, s.gt), metrics::ms_ssim(pred, s.gt, ms),
                   metrics::mae(pred, s.gt)};
    });
    EvalReport r;
    r.n_images = data.size();
    for (const auto& row : rows) {
        r.psnr += row.psnr;
        r.ssim += row.ssim;
        r.msssim += row.msssim;
        r.mae += row.mae;
    }
    if (!rows.empty()) {
        const double n = static_cast<double>(rows.size());
        r.psnr /= n;
        r.ssim /= n;
        r.msssim /= n;
        r.mae /= n;
    }
    return r;
}

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(epoch)};
    return std::mt19937_64(seq);
}

std::string file_safe(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
    return out;
}

nlohmann::json finite_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

TrainResult train(const std::vector<synth::DPSample>& train_set, const std::vector<synth::DPSample>& val_set,
                  const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    if (train_set.empty()) throw PreconditionError("train: the training set is empty");
    if (val_set.empty()) throw PreconditionError("train: the validation set is empty");
    const auto patch = static_cast<std::size_t>(cfg.patch);
    for (const auto& s : train_set)
        if (s.gt.dim(1) < patch || s.gt.dim(2) < patch)
            throw PreconditionError("train: sample of " + to_string(s.gt.shape()) + " is smaller than patch " +
                                    std::to_string(patch));
    const auto loss_cfg = losses::fit_scales(cfg.loss, patch, patch);
    const AdamConfig adam_cfg{cfg.beta1, cfg.beta2, cfg.adam_eps};

    TrainResult res;
    res.best_val_psnr = -std::numeric_limits<double>::infinity();
    const auto last_dir = opts.out_dir / "last";
    if (opts.resume && !opts.out_dir.empty() && std::filesystem::exists(last_dir / "manifest.json")) {
        auto ck = load_checkpoint(last_dir);
        if (config::to_json(ck.config) != config::to_json(cfg))
            throw ConfigError("train: checkpoint in " + last_dir.string() + " was made with a different config");
        res.params = std::move(ck.params);
        res.adam = std::move(ck.adam);
        res.epochs_done = ck.epochs_done;
        res.best_val_psnr = ck.best_val_psnr;
        const auto hist = opts.out_dir / "history.csv";
        if (std::filesystem::exists(hist)) res.history = read_history(hist);
        if (res.history.size() > static_cast<std::size_t>(res.epochs_done)) res.history.resize(res.epochs_done);
    } else {
        res.params = mccnet::build(cfg.network, cfg.seed).params;
    }
    if (!opts.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(opts.out_dir, ec);
        if (ec) throw IoError("cannot create " + opts.out_dir.string() + ": " + ec.message());
    }

    const int first = res.epochs_done;
    for (int epoch = first; epoch < cfg.epochs; ++epoch) {
        if (opts.stop_after > 0 && epoch - first >= opts.stop_after) break;
        const double lr = lr_at(epoch, cfg);
        auto rng = epoch_rng(cfg.seed, epoch);
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
            const std::size_t end = std::min(order.size(), b + cfg.batch);
            res.params.zero_grad();
            for (std::size_t i = b; i < end; ++i) {
                const auto crop = crop_pair(train_set[order[i]], patch, rng);
                Graph<float> g;
                auto out = mccnet::forward(g, res.params, cfg.network, g.input(crop.left), g.input(crop.right));
                auto loss = losses::mix_loss(out, g.input(crop.gt), loss_cfg);
                const double value = loss.value().item();
                if (!std::isfinite(value))
                    throw DivergenceError("training loss became " + std::to_string(value) + " at epoch " +
                                          std::to_string(epoch) + ", optimizer step " +
                                          std::to_string(res.adam.step + 1));
                g.backward(loss);
                loss_sum += value;
            }
            adam_step(res.params, res.adam, adam_cfg, lr, 1.0 / static_cast<double>(end - b));
        }

        const auto val = evaluate(res.params, cfg.network, val_set);
        EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(order.size()), val.psnr, val.ssim, val.mae};
        res.history.push_back(rec);
        res.epochs_done = epoch + 1;
        const bool best = val.psnr > res.best_val_psnr;
        if (best) res.best_val_psnr = val.psnr;
        if (!opts.out_dir.empty()) {
            save_checkpoint(last_dir, cfg, res.params, res.adam, res.epochs_done, res.best_val_psnr);
            if (best) save_checkpoint(opts.out_dir / "best", cfg, res.params, res.adam, res.epochs_done, res.best_val_psnr);
            write_history(opts.out_dir / "history.csv", res.history);
        }
        if (opts.on_epoch) opts.on_epoch(rec);
    }
    return res;
}

void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg, const ParamStore<float>& params,
                     const AdamState& adam, int epochs_done, double best_val_psnr) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "params", ec);
    if (!ec && adam.step > 0) std::filesystem::create_directories(dir / "adam", ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    nlohmann::json plist = nlohmann::json::array(), moments = nlohmann::json::array();
    const auto& entries = params.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& [name, p] = entries[k];
        const std::string file = "params/" + file_safe(name) + ".tnsr";
        save_tnsr(dir / file, p->value);
        plist.push_back({{"name", name}, {"shape", p->value.shape()}, {"file", file}});
        if (adam.step > 0) {
            const std::string m = "adam/" + file_safe(name) + ".m.tnsr", v = "adam/" + file_safe(name) + ".v.tnsr";
            save_tnsr(dir / m, adam.m.at(k));
            save_tnsr(dir / v, adam.v.at(k));
            moments.push_back({{"name", name}, {"m", m}, {"v", v}});
        }
    }
    nlohmann::json aliases = nlohmann::json::array();
    for (const auto& [from, to] : params.aliases()) aliases.push_back({from, to});
    const nlohmann::json m = {{"format", "dpdl-checkpoint"},
                              {"version", 1},
                              {"config", config::to_json(cfg)},
                              {"epochs_done", epochs_done},
                              {"best_val_psnr", finite_or_null(best_val_psnr)},
                              {"param_count", params.count()},
                              {"parameters", plist},
                              {"aliases", aliases},
                              {"optimizer", {{"type", "adam"}, {"step", adam.step}, {"moments", moments}}}};
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << "\n";
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("no checkpoint manifest in " + dir.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
    }
    if (m.value("format", "") != "dpdl-checkpoint") throw IoError(dir.string() + " is not a checkpoint");

    Checkpoint ck;
    ck.config = config::train_from_json(m.at("config"));
    ck.params = mccnet::declare_params(ck.config.network);
    std::vector<std::pair<std::string, std::string>> aliases;
    for (const auto& a : m.at("aliases")) aliases.emplace_back(a.at(0).get<std::string>(), a.at(1).get<std::string>());
    if (aliases != ck.params.aliases()) throw IoError("checkpoint aliasing table does not match its config");

    const auto& plist = m.at("parameters");
    if (plist.size() != ck.params.entries().size())
        throw IoError("checkpoint lists " + std::to_string(plist.size()) + " parameters, the network has " +
                      std::to_string(ck.params.entries().size()));
    for (const auto& e : plist) {
        const std::string name = e.at("name").get<std::string>();
        if (!ck.params.contains(name)) throw IoError("checkpoint parameter '" + name + "' is not in the network");
        auto& p = ck.params.get(name);
        auto t = load_tnsr(dir / e.at("file").get<std::string>());
        if (t.shape() != p.value.shape())
            throw IoError("checkpoint parameter '" + name + "' has shape " + to_string(t.shape()) + ", expected " +
                          to_string(p.value.shape()));
        p.value = std::move(t);
    }
    const auto& opt = m.at("optimizer");
    ck.adam.step = opt.at("step").get<std::uint64_t>();
    if (ck.adam.step > 0) {
        const auto& moments = opt.at("moments");
        const auto& entries = ck.params.entries();
        if (moments.size() != entries.size()) throw IoError("checkpoint optimizer state is incomplete");
        for (std::size_t k = 0; k < entries.size(); ++k) {
            if (moments[k].at("name").get<std::string>() != entries[k].first)
                throw IoError("checkpoint optimizer state is out of order");
            ck.adam.m.push_back(load_tnsr(dir / moments[k].at("m").get<std::string>()));
            ck.adam.v.push_back(load_tnsr(dir / moments[k].at("v").get<std::string>()));
            if (ck.adam.m.back().shape() != entries[k].second->value.shape() ||
                ck.adam.v.back().shape() != entries[k].second->value.shape())
                throw IoError("checkpoint moment shape mismatch for '" + entries[k].first + "'");
        }
    }
    ck.epochs_done = m.at("epochs_done").get<int>();
    const auto& best = m.at("best_val_psnr");
    ck.best_val_psnr = best.is_null() ? -std::numeric_limits<double>::infinity() : best.get<double>();
    return ck;
}

void write_history(const std::filesystem::path& file, const std::vector<EpochRecord>& history) {
    std::ofstream os(file);
    os << "epoch,lr,train_loss,val_psnr,val_ssim,val_mae\n";
    char line[256];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.lr, r.train_loss, r.val_psnr,
                      r.val_ssim, r.val_mae);
        os << line;
    }
    if (!os) throw IoError("cannot write " + file.string());
}

std::vector<EpochRecord> read_history(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw IoError("cannot read " + file.string());
    std::string line;
    std::getline(is, line);
    std::vector<EpochRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EpochRecord r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.lr, &r.train_loss, &r.val_psnr,
                        &r.val_ssim, &r.val_mae) != 6)
            throw IoError("malformed history line: " + line);
        out.push_back(r);
    }
    return out;
}

}  // namespace dpdl::train
