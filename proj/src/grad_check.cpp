#include "dpdl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dpdl/errors.hpp"

namespace dpdl {

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, const GradCheckOptions& opts, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_coords && opts.max_coords < n) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(opts.max_coords);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

// Central difference of `eval_at(delta)` around delta = 0. Returns false when
// the coordinate is skipped as non-smooth.
template <typename T, class Eval>
bool numeric_derivative(const Eval& eval_at, const GradCheckOptions& opts, GradCheckReport& rep, T& out) {
    auto central = [&](T h) { return (eval_at(h) - eval_at(-h)) / (2 * h); };
    T h = opts.h;
    T d = central(h);
    if (!opts.refine_kinks) {
        out = d;
        return true;
    }
    for (int attempt = 0; attempt <= 3; ++attempt) {
        const T half = central(h / 2);
        if (std::abs(d - half) <= 1e-5 * (std::abs(d) + std::abs(half)) + 1e-9) {
            out = d;
            if (attempt) ++rep.refined;
            return true;
        }
        h /= 10;
        d = central(h);
    }
    ++rep.skipped;
    return false;
}

void note(GradCheckReport& rep, double& worst, std::size_t tensor, std::size_t index, double analytic,
          double numeric) {
    ++rep.checked;
    const double e = rel_error(analytic, numeric);
    if (e < worst || (e == worst && worst > 0.0)) return;
    worst = e;
    rep.tensor = tensor;
    rep.index = index;
    rep.analytic = analytic;
    rep.numeric = numeric;
    rep.error = e;
}

template <typename T>
double grad_check_impl(const std::function<Var<T>(Graph<T>&, Var<T>)>& f, const Tensor<T>& x,
                       const GradCheckOptions& opts) {
    Tensor<T> analytic;
    {
        Graph<T> g;
        auto in = g.input(x, true);
        auto out = f(g, in);
        g.backward(out);
        analytic = in.grad().empty() ? Tensor<T>(x.shape()) : in.grad();
    }
    auto eval = [&](const Tensor<T>& at) {
        Graph<T> g;
        return f(g, g.input(at)).value().item();
    };
    std::mt19937_64 rng(opts.seed);
    double worst = 0.0;
    GradCheckReport rep;
    Tensor<T> probe = x;
    for (auto i : pick_coords(x.size(), opts, rng)) {
        const T orig = probe[i];
        auto at = [&](T delta) {
            probe[i] = orig + delta;
            const T v = eval(probe);
            probe[i] = orig;
            return v;
        };
        T numeric = 0;
        if (numeric_derivative<T>(at, opts, rep, numeric))
            note(rep, worst, 0, i, static_cast<double>(analytic[i]), static_cast<double>(numeric));
    }
    if (opts.report) *opts.report = rep;
    return worst;
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor<double>& x, const GradCheckOptions& opts) {
    return grad_check_impl<double>(f, x, opts);
}

double grad_check(const ExtendedFn& f, const Tensor<long double>& x, const GradCheckOptions& opts) {
    return grad_check_impl<long double>(f, x, opts);
}

double grad_check_params(const std::function<Var<double>(Graph<double>&)>& f,
                         const std::vector<Parameter<double>*>& params, const GradCheckOptions& opts) {
    for (auto* p : params) p->zero_grad();
    {
        Graph<double> g;
        auto out = f(g);
        g.backward(out);
    }
    auto eval = [&] {
        Graph<double> g;
        return f(g).value().item();
    };
    std::mt19937_64 rng(opts.seed);
    double worst = 0.0;
    GradCheckReport rep;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto* p = params[t];
        for (auto i : pick_coords(p->value.size(), opts, rng)) {
            const double orig = p->value[i];
            auto at = [&](double delta) {
                p->value[i] = orig + delta;
                const double v = eval();
                p->value[i] = orig;
                return v;
            };
            double numeric = 0.0;
            if (numeric_derivative<double>(at, opts, rep, numeric)) note(rep, worst, t, i, p->grad[i], numeric);
        }
    }
    if (opts.report) *opts.report = rep;
    return worst;
}

}  // namespace dpdl
