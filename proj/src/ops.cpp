#include <algorithm>
#include <cmath>
#include <type_traits>

#include "dpdl/errors.hpp"
#include "dpdl/graph.hpp"

namespace dpdl {

namespace {

// Reduction accumulator: at least double, wider when T is.
template <typename T>
using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

template <typename T>
void require_same_graph(Var<T> a, Var<T> b, const char* op) {
    if (a.graph != b.graph) throw ContractError(std::string(op) + ": operands live on different graphs");
}

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
    require_same_graph(a, b, op);
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

// y = f(x) elementwise; dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Var<T> unary(const char* op, Var<T> x, F f, DF df) {
    const auto& xv = x.value();
    Tensor<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
    const std::size_t xi = x.id;
    return x.graph->record(op, std::move(y), {xi}, [xi, df](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(xi)) return;
        const auto& gy = g.grad(self);
        const auto& xv = g.value(xi);
        const auto& yv = g.value(self);
        auto& gx = g.grad_buffer(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
    });
}

}  // namespace

template <typename T>
Var<T> leaky_relu(Var<T> x, double slope) {
    const T s = static_cast<T>(slope);
    return unary(
        "leaky_relu", x, [s](T v) { return v >= T(0) ? v : s * v; },
        [s](T v, T) { return v >= T(0) ? T(1) : s; });
}

template <typename T>
Var<T> relu(Var<T> x) {
    return unary(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    return unary(
        "sigmoid", x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> add_scalar(Var<T> x, double c) {
    const T cc = static_cast<T>(c);
    return unary(
        "add_scalar", x, [cc](T v) { return v + cc; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(Var<T> x, double c) {
    const T cc = static_cast<T>(c);
    return unary(
        "mul_scalar", x, [cc](T v) { return v * cc; }, [cc](T, T) { return cc; });
}

template <typename T>
Var<T> square(Var<T> x) {
    return unary(
        "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> sqrt(Var<T> x) {
    return unary(
        "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> pow_scalar(Var<T> x, double p) {
    const T pp = static_cast<T>(p);
    return unary(
        "pow", x, [pp](T v) { return std::pow(v, pp); },
        [pp](T v, T) { return pp * std::pow(v, pp - T(1)); });
}

template <typename T>
Var<T> clamp_min(Var<T> x, double lo) {
    const T l = static_cast<T>(lo);
    return unary(
        "clamp_min", x, [l](T v) { return v < l ? l : v; }, [l](T v, T) { return v < l ? T(0) : T(1); });
}

// ---------------------------------------------------------------------------
// Binary elementwise, identical shapes only.

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape(a, b, "add");
    Tensor<T> y(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.graph->record("add", std::move(y), {ai, bi}, [ai, bi](Graph<T>& g, std::size_t self) {
        const auto& gy = g.grad(self);
        for (auto id : {ai, bi}) {
            if (!g.requires_grad(id)) continue;
            auto& gx = g.grad_buffer(id);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        }
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same_shape(a, b, "sub");
    Tensor<T> y(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.graph->record("sub", std::move(y), {ai, bi}, [ai, bi](Graph<T>& g, std::size_t self) {
        const auto& gy = g.grad(self);
        if (g.requires_grad(ai)) {
            auto& ga = g.grad_buffer(ai);
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        }
        if (g.requires_grad(bi)) {
            auto& gb = g.grad_buffer(bi);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape(a, b, "mul");
    Tensor<T> y(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.graph->record("mul", std::move(y), {ai, bi}, [ai, bi](Graph<T>& g, std::size_t self) {
        const auto& gy = g.grad(self);
        const auto& av = g.value(ai);
        const auto& bv = g.value(bi);
        if (g.requires_grad(ai)) {
            auto& ga = g.grad_buffer(ai);
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
        }
        if (g.requires_grad(bi)) {
            auto& gb = g.grad_buffer(bi);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
        }
    });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
    require_same_shape(a, b, "div");
    Tensor<T> y(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] / bv[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.graph->record("div", std::move(y), {ai, bi}, [ai, bi](Graph<T>& g, std::size_t self) {
        const auto& gy = g.grad(self);
        const auto& bv = g.value(bi);
        const auto& yv = g.value(self);
        if (g.requires_grad(ai)) {
            auto& ga = g.grad_buffer(ai);
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / bv[i];
        }
        if (g.requires_grad(bi)) {
            auto& gb = g.grad_buffer(bi);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i] * yv[i] / bv[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(Var<T> x) {
    Acc<T> acc = 0;
    for (T v : x.value().data()) acc += static_cast<Acc<T>>(v);
    const std::size_t xi = x.id;
    return x.graph->record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {xi}, [xi](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(xi)) return;
        const T gy = g.grad(self)[0];
        auto& gx = g.grad_buffer(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
    });
}

template <typename T>
Var<T> mean(Var<T> x) {
    Acc<T> acc = 0;
    for (T v : x.value().data()) acc += static_cast<Acc<T>>(v);
    const Acc<T> n = static_cast<Acc<T>>(x.value().size());
    const std::size_t xi = x.id;
    return x.graph->record("mean", Tensor<T>::scalar(static_cast<T>(acc / n)), {xi},
                           [xi, n](Graph<T>& g, std::size_t self) {
                               if (!g.requires_grad(xi)) return;
                               const T gy = static_cast<T>(g.grad(self)[0] / n);
                               auto& gx = g.grad_buffer(xi);
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
                           });
}

template <typename T>
Var<T> channel_mean(Var<T> x) {
    const auto& xv = x.value();
    require_chw(xv, "channel_mean");
    const std::size_t C = xv.dim(0), n = xv.dim(1) * xv.dim(2);
    Tensor<T> y({C});
    for (std::size_t c = 0; c < C; ++c) {
        Acc<T> acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += static_cast<Acc<T>>(xv[c * n + i]);
        y[c] = static_cast<T>(acc / static_cast<Acc<T>>(n));
    }
    const std::size_t xi = x.id;
    return x.graph->record("channel_mean", std::move(y), {xi}, [xi, C, n](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(xi)) return;
        const auto& gy = g.grad(self);
        auto& gx = g.grad_buffer(xi);
        for (std::size_t c = 0; c < C; ++c) {
            const T v = static_cast<T>(gy[c] / static_cast<Acc<T>>(n));
            for (std::size_t i = 0; i < n; ++i) gx[c * n + i] += v;
        }
    });
}

// ---------------------------------------------------------------------------
// Spatial resampling

template <typename T>
Var<T> maxpool2(Var<T> x) {
    const auto& xv = x.value();
    require_chw(xv, "maxpool2");
    const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    if (H % 2 || W % 2)
        throw PreconditionError("maxpool2: extents must be even, got " + to_string(xv.shape()) +
                                " (pad the input first)");
    const std::size_t oh = H / 2, ow = W / 2;
    Tensor<T> y({C, oh, ow});
    std::vector<std::uint32_t> arg(y.size());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = (c * H + 2 * i) * W + 2 * j;
                const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
                for (auto k : cand)
                    if (xv[k] > xv[best]) best = k;
                const std::size_t o = (c * oh + i) * ow + j;
                y[o] = xv[best];
                arg[o] = static_cast<std::uint32_t>(best);
            }
    const std::size_t xi = x.id;
    return x.graph->record("maxpool2", std::move(y), {xi}, [xi, arg = std::move(arg)](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(xi)) return;
        const auto& gy = g.grad(self);
        auto& gx = g.grad_buffer(xi);
        for (std::size_t o = 0; o < gy.size(); ++o) gx[arg[o]] += gy[o];
    });
}

template <typename T>
Var<T> avgpool2(Var<T> x) {
    const auto& xv = x.value();
    require_chw(xv, "avgpool2");
    const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const std::size_t oh = H / 2, ow = W / 2;
    if (oh == 0 || ow == 0) throw ShapeError("avgpool2: input too small " + to_string(xv.shape()));
    Tensor<T> y({C, oh, ow});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                const std::size_t b = (c * H + 2 * i) * W + 2 * j;
                y[(c * oh + i) * ow + j] = T(0.25) * (xv[b] + xv[b + 1] + xv[b + W] + xv[b + W + 1]);
            }
    const std::size_t xi = x.id;
    return x.graph->record("avgpool2", std::move(y), {xi}, [xi, C, H, W, oh, ow](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(xi)) return;
        const auto& gy = g.grad(self);
        auto& gx = g.grad_buffer(xi);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    const T v = T(0.25) * gy[(c * oh + i) * ow + j];
                    const std::size_t b = (c * H + 2 * i) * W + 2 * j;
                    gx[b] += v;
                    gx[b + 1] += v;
                    gx[b + W] += v;
                    gx[b + W + 1] += v;
                }
    });
}

namespace {

struct Tap2 {
    std::size_t lo, hi;
    double wlo, whi;
};

// Source taps for 2x bilinear upsampling with half-pixel centers.
std::vector<Tap2> upsample_taps(std::size_t n) {
    std::vector<Tap2> taps(2 * n);
    for (std::size_t i = 0; i < 2 * n; ++i) {
        double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
        if (src < 0.0) src = 0.0;
        const auto lo = static_cast<std::size_t>(src);
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double f = src - static_cast<double>(lo);
        taps[i] = {lo, hi, 1.0 - f, f};
    }
    return taps;
}

}  // namespace

template <typename T>
Var<T> upsample2(Var<T> x) {
    const auto& xv = x.value();
    require_chw(xv, "upsample2");
    const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const auto ty = upsample_taps(H);
    const auto tx = upsample_taps(W);
    Tensor<T> y({C, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c) {
        const T* src = xv.ptr() + c * H * W;
        T* dst = y.ptr() + c * 4 * H * W;
        for (std::size_t i = 0; i < 2 * H; ++i) {
            const T* r0 = src + ty[i].lo * W;
            const T* r1 = src + ty[i].hi * W;
            const T a = static_cast<T>(ty[i].wlo), b = static_cast<T>(ty[i].whi);
            for (std::size_t j = 0; j < 2 * W; ++j) {
                const T top = static_cast<T>(tx[j].wlo) * r0[tx[j].lo] + static_cast<T>(tx[j].whi) * r0[tx[j].hi];
                const T bot = static_cast<T>(tx[j].wlo) * r1[tx[j].lo] + static_cast<T>(tx[j].whi) * r1[tx[j].hi];
                dst[i * 2 * W + j] = a * top + b * bot;
            }
        }
    }
    const std::size_t xi = x.id;
    return x.graph->record("upsample2", std::move(y), {xi}, [xi, C, H, W, ty, tx](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(xi)) return;
        const auto& gy = g.grad(self);
        auto& gx = g.grad_buffer(xi);
        for (std::size_t c = 0; c < C; ++c) {
            const T* src = gy.ptr() + c * 4 * H * W;
            T* dst = gx.ptr() + c * H * W;
            for (std::size_t i = 0; i < 2 * H; ++i) {
                T* r0 = dst + ty[i].lo * W;
                T* r1 = dst + ty[i].hi * W;
                const T a = static_cast<T>(ty[i].wlo), b = static_cast<T>(ty[i].whi);
                for (std::size_t j = 0; j < 2 * W; ++j) {
                    const T v = src[i * 2 * W + j];
                    const T wl = static_cast<T>(tx[j].wlo), wh = static_cast<T>(tx[j].whi);
                    r0[tx[j].lo] += a * wl * v;
                    r0[tx[j].hi] += a * wh * v;
                    r1[tx[j].lo] += b * wl * v;
                    r1[tx[j].hi] += b * wh * v;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const auto& first = xs.front().value();
    require_chw(first, "concat_channels");
    const std::size_t H = first.dim(1), W = first.dim(2);
    std::size_t C = 0;
    std::vector<std::size_t> ids, offsets;
    for (const auto& x : xs) {
        require_same_graph(xs.front(), x, "concat_channels");
        const auto& v = x.value();
        require_chw(v, "concat_channels");
        if (v.dim(1) != H || v.dim(2) != W)
            throw ShapeError("concat_channels: spatial mismatch " + to_string(first.shape()) + " vs " +
                             to_string(v.shape()));
        ids.push_back(x.id);
        offsets.push_back(C * H * W);
        C += v.dim(0);
    }
    Tensor<T> y({C, H, W});
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto& v = xs[k].value();
        std::copy(v.ptr(), v.ptr() + v.size(), y.ptr() + offsets[k]);
    }
    return xs.front().graph->record("concat", std::move(y), ids, [ids, offsets](Graph<T>& g, std::size_t self) {
        const auto& gy = g.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!g.requires_grad(ids[k])) continue;
            auto& gx = g.grad_buffer(ids[k]);
            const T* src = gy.ptr() + offsets[k];
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += src[i];
        }
    });
}

template <typename T>
Var<T> permute3(Var<T> x, std::array<int, 3> perm) {
    const auto& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("permute3: rank-3 input required, got " + to_string(xv.shape()));
    {
        auto p = perm;
        std::sort(p.begin(), p.end());
        if (p != std::array<int, 3>{0, 1, 2}) throw ShapeError("permute3: not a permutation");
    }
    const Shape& in = xv.shape();
    const std::array<std::size_t, 3> istride{in[1] * in[2], in[2], 1};
    const Shape out{in[perm[0]], in[perm[1]], in[perm[2]]};
    const std::array<std::size_t, 3> s{istride[perm[0]], istride[perm[1]], istride[perm[2]]};
    Tensor<T> y(out);
    std::size_t o = 0;
    for (std::size_t a = 0; a < out[0]; ++a)
        for (std::size_t b = 0; b < out[1]; ++b)
            for (std::size_t c = 0; c < out[2]; ++c) y[o++] = xv[a * s[0] + b * s[1] + c * s[2]];
    const std::size_t xi = x.id;
    return x.graph->record("permute3", std::move(y), {xi}, [xi, out, s](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(xi)) return;
        const auto& gy = g.grad(self);
        auto& gx = g.grad_buffer(xi);
        std::size_t o = 0;
        for (std::size_t a = 0; a < out[0]; ++a)
            for (std::size_t b = 0; b < out[1]; ++b)
                for (std::size_t c = 0; c < out[2]; ++c) gx[a * s[0] + b * s[1] + c * s[2]] += gy[o++];
    });
}

// ---------------------------------------------------------------------------
// Attention primitives. Loops keep a fixed k-ascending reduction order for
// every output element, so results do not depend on the element's position.

namespace {

// c[b] += a[b] * bm[b], a: BxMxK, bm: BxKxN, c: BxMxN
template <typename T>
void bmm_acc(const T* a, const T* bm, T* c, std::size_t B, std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t b = 0; b < B; ++b) {
        const T* ab = a + b * M * K;
        const T* bb = bm + b * K * N;
        T* cb = c + b * M * N;
        for (std::size_t i = 0; i < M; ++i) {
            T* crow = cb + i * N;
            for (std::size_t k = 0; k < K; ++k) {
                const T av = ab[i * K + k];
                const T* brow = bb + k * N;
                for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

// c[b] += a[b] * bm[b]^T, a: BxMxN, bm: BxKxN, c: BxMxK
template <typename T>
void bmm_abt_acc(const T* a, const T* bm, T* c, std::size_t B, std::size_t M, std::size_t N, std::size_t K) {
    for (std::size_t b = 0; b < B; ++b) {
        const T* ab = a + b * M * N;
        const T* bb = bm + b * K * N;
        T* cb = c + b * M * K;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                T acc = T(0);
                for (std::size_t j = 0; j < N; ++j) acc += ab[i * N + j] * bb[k * N + j];
                cb[i * K + k] += acc;
            }
    }
}

// c[b] += a[b]^T * bm[b], a: BxMxK, bm: BxMxN, c: BxKxN
template <typename T>
void bmm_atb_acc(const T* a, const T* bm, T* c, std::size_t B, std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t b = 0; b < B; ++b) {
        const T* ab = a + b * M * K;
        const T* bb = bm + b * M * N;
        T* cb = c + b * K * N;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                const T av = ab[i * K + k];
                T* crow = cb + k * N;
                const T* brow = bb + i * N;
                for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
            }
    }
}

}  // namespace

template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b) {
    require_same_graph(a, b, "batched_matmul");
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3)
        throw ShapeError("batched_matmul: rank-3 operands required, got " + to_string(av.shape()) + " and " +
                         to_string(bv.shape()));
    const std::size_t B = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(2);
    if (bv.dim(0) != B || bv.dim(1) != K)
        throw ShapeError("batched_matmul: extent mismatch " + to_string(av.shape()) + " * " + to_string(bv.shape()));
    Tensor<T> y({B, M, N});
    bmm_acc(av.ptr(), bv.ptr(), y.ptr(), B, M, K, N);
    const std::size_t ai = a.id, bi = b.id;
    return a.graph->record("batched_matmul", std::move(y), {ai, bi},
                           [ai, bi, B, M, K, N](Graph<T>& g, std::size_t self) {
                               const auto& gy = g.grad(self);
                               if (g.requires_grad(ai))
                                   bmm_abt_acc(gy.ptr(), g.value(bi).ptr(), g.grad_buffer(ai).ptr(), B, M, N, K);
                               if (g.requires_grad(bi))
                                   bmm_atb_acc(g.value(ai).ptr(), gy.ptr(), g.grad_buffer(bi).ptr(), B, M, K, N);
                           });
}

template <typename T>
Var<T> batched_transpose(Var<T> s) {
    const auto& sv = s.value();
    if (sv.rank() != 3 || sv.dim(1) != sv.dim(2))
        throw ShapeError("batched_transpose: expected B x N x N, got " + to_string(sv.shape()));
    return permute3(s, {0, 2, 1});
}

template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
    const auto& xv = x.value();
    if (xv.rank() == 0) throw ShapeError("softmax_lastdim: scalar input");
    const std::size_t n = xv.shape().back();
    const std::size_t rows = xv.size() / n;
    Tensor<T> y(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.ptr() + r * n;
        T* out = y.ptr() + r * n;
        const T mx = *std::max_element(in, in + n);
        T z = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            z += out[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[j] /= z;
    }
    const std::size_t xi = x.id;
    return x.graph->record("softmax_lastdim", std::move(y), {xi}, [xi, n, rows](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(xi)) return;
        const auto& gy = g.grad(self);
        const auto& yv = g.value(self);
        auto& gx = g.grad_buffer(xi);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = yv.ptr() + r * n;
            const T* gr = gy.ptr() + r * n;
            T dot = T(0);
            for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
            T* out = gx.ptr() + r * n;
            for (std::size_t j = 0; j < n; ++j) out[j] += yr[j] * (gr[j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> separable_filter_valid(Var<T> x, const std::vector<double>& taps) {
    const auto& xv = x.value();
    require_chw(xv, "separable_filter_valid");
    const std::size_t n = taps.size();
    const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    if (n == 0 || H < n || W < n)
        throw PreconditionError("separable_filter_valid: " + std::to_string(n) + "-tap filter needs at least " +
                                std::to_string(n) + "x" + std::to_string(n) + " input, got " + to_string(xv.shape()));
    const std::size_t oh = H - n + 1, ow = W - n + 1;
    std::vector<T> w(taps.begin(), taps.end());
    Tensor<T> y({C, oh, ow});
    std::vector<T> tmp(oh * W);
    for (std::size_t c = 0; c < C; ++c) {
        const T* src = xv.ptr() + c * H * W;
        std::fill(tmp.begin(), tmp.end(), T(0));
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t k = 0; k < n; ++k) {
                const T* row = src + (i + k) * W;
                for (std::size_t j = 0; j < W; ++j) tmp[i * W + j] += w[k] * row[j];
            }
        T* dst = y.ptr() + c * oh * ow;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                T acc = T(0);
                for (std::size_t k = 0; k < n; ++k) acc += w[k] * tmp[i * W + j + k];
                dst[i * ow + j] = acc;
            }
    }
    const std::size_t xi = x.id;
    return x.graph->record("separable_filter", std::move(y), {xi},
                           [xi, w, C, H, W, oh, ow, n](Graph<T>& g, std::size_t self) {
                               if (!g.requires_grad(xi)) return;
                               const auto& gy = g.grad(self);
                               auto& gx = g.grad_buffer(xi);
                               std::vector<T> tmp(oh * W);
                               for (std::size_t c = 0; c < C; ++c) {
                                   std::fill(tmp.begin(), tmp.end(), T(0));
                                   const T* gsrc = gy.ptr() + c * oh * ow;
                                   for (std::size_t i = 0; i < oh; ++i)
                                       for (std::size_t j = 0; j < ow; ++j)
                                           for (std::size_t k = 0; k < n; ++k)
                                               tmp[i * W + j + k] += w[k] * gsrc[i * ow + j];
                                   T* dst = gx.ptr() + c * H * W;
                                   for (std::size_t i = 0; i < oh; ++i)
                                       for (std::size_t k = 0; k < n; ++k) {
                                           T* row = dst + (i + k) * W;
                                           for (std::size_t j = 0; j < W; ++j) row[j] += w[k] * tmp[i * W + j];
                                       }
                               }
                           });
}

#define DPDL_INSTANTIATE_OPS(T)                                                    \
    template Var<T> leaky_relu(Var<T>, double);                                    \
    template Var<T> relu(Var<T>);                                                  \
    template Var<T> sigmoid(Var<T>);                                               \
    template Var<T> add_scalar(Var<T>, double);                                    \
    template Var<T> mul_scalar(Var<T>, double);                                    \
    template Var<T> square(Var<T>);                                                \
    template Var<T> sqrt(Var<T>);                                                  \
    template Var<T> pow_scalar(Var<T>, double);                                    \
    template Var<T> add(Var<T>, Var<T>);                                           \
    template Var<T> sub(Var<T>, Var<T>);                                           \
    template Var<T> mul(Var<T>, Var<T>);                                           \
    template Var<T> div(Var<T>, Var<T>);                                           \
    template Var<T> clamp_min(Var<T>, double);                                     \
    template Var<T> channel_mean(Var<T>);                                          \
    template Var<T> sum(Var<T>);                                                   \
    template Var<T> mean(Var<T>);                                                  \
    template Var<T> maxpool2(Var<T>);                                              \
    template Var<T> avgpool2(Var<T>);                                              \
    template Var<T> upsample2(Var<T>);                                             \
    template Var<T> concat_channels(const std::vector<Var<T>>&);                   \
    template Var<T> permute3(Var<T>, std::array<int, 3>);                          \
    template Var<T> batched_matmul(Var<T>, Var<T>);                                \
    template Var<T> batched_transpose(Var<T>);                                     \
    template Var<T> softmax_lastdim(Var<T>);                                       \
    template Var<T> separable_filter_valid(Var<T>, const std::vector<double>&);

DPDL_INSTANTIATE_OPS(float)
DPDL_INSTANTIATE_OPS(double)
DPDL_INSTANTIATE_OPS(long double)

}  // namespace dpdl
