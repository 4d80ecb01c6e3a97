#include <algorithm>
#include <memory>

#include <Eigen/Core>

#include "dpdl/errors.hpp"
#include "dpdl/graph.hpp"

namespace dpdl {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
    std::size_t C, H, W, K, OC, OH, OW;
    int stride, pad;
    bool pointwise() const { return K == 1 && stride == 1 && pad == 0; }
    std::size_t rows() const { return C * K * K; }
    std::size_t cols() const { return OH * OW; }
};

// Stride-1 path: copy into a zero-padded buffer once, after which every
// column row is a contiguous slice.
template <typename T>
void pad_input(const T* x, const ConvGeom& g, std::vector<T>& padded) {
    const std::size_t PH = g.H + 2 * g.pad, PW = g.W + 2 * g.pad;
    padded.assign(g.C * PH * PW, T(0));
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t y = 0; y < g.H; ++y)
            std::copy_n(x + (c * g.H + y) * g.W, g.W, padded.data() + (c * PH + y + g.pad) * PW + g.pad);
}

// col[(c*K + ky)*K + kx][oy*OW + ox] = x[c][oy*s + ky - p][ox*s + kx - p], zero outside.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
    if (g.stride == 1) {
        std::vector<T> padded;
        pad_input(x, g, padded);
        const std::size_t PH = g.H + 2 * g.pad, PW = g.W + 2 * g.pad;
        for (std::size_t c = 0; c < g.C; ++c)
            for (std::size_t ky = 0; ky < g.K; ++ky)
                for (std::size_t kx = 0; kx < g.K; ++kx) {
                    T* dst = col + ((c * g.K + ky) * g.K + kx) * g.cols();
                    const T* src = padded.data() + (c * PH + ky) * PW + kx;
                    for (std::size_t oy = 0; oy < g.OH; ++oy) std::copy_n(src + oy * PW, g.OW, dst + oy * g.OW);
                }
        return;
    }
    const long H = static_cast<long>(g.H), W = static_cast<long>(g.W);
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t ky = 0; ky < g.K; ++ky)
            for (std::size_t kx = 0; kx < g.K; ++kx) {
                T* dst = col + ((c * g.K + ky) * g.K + kx) * g.cols();
                const T* src = x + c * g.H * g.W;
                for (std::size_t oy = 0; oy < g.OH; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride + static_cast<long>(ky) - g.pad;
                    T* d = dst + oy * g.OW;
                    for (std::size_t ox = 0; ox < g.OW; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride + static_cast<long>(kx) - g.pad;
                        d[ox] = (iy < 0 || iy >= H || ix < 0 || ix >= W) ? T(0) : src[iy * W + ix];
                    }
                }
            }
}

template <typename T>
void col2im_acc(const T* col, const ConvGeom& g, T* x) {
    if (g.stride == 1) {
        const std::size_t PH = g.H + 2 * g.pad, PW = g.W + 2 * g.pad;
        std::vector<T> padded(g.C * PH * PW, T(0));
        for (std::size_t c = 0; c < g.C; ++c)
            for (std::size_t ky = 0; ky < g.K; ++ky)
                for (std::size_t kx = 0; kx < g.K; ++kx) {
                    const T* src = col + ((c * g.K + ky) * g.K + kx) * g.cols();
                    T* dst = padded.data() + (c * PH + ky) * PW + kx;
                    for (std::size_t oy = 0; oy < g.OH; ++oy) {
                        T* d = dst + oy * PW;
                        const T* s = src + oy * g.OW;
                        for (std::size_t ox = 0; ox < g.OW; ++ox) d[ox] += s[ox];
                    }
                }
        for (std::size_t c = 0; c < g.C; ++c)
            for (std::size_t y = 0; y < g.H; ++y) {
                const T* s = padded.data() + (c * PH + y + g.pad) * PW + g.pad;
                T* d = x + (c * g.H + y) * g.W;
                for (std::size_t i = 0; i < g.W; ++i) d[i] += s[i];
            }
        return;
    }
    const long H = static_cast<long>(g.H), W = static_cast<long>(g.W);
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t ky = 0; ky < g.K; ++ky)
            for (std::size_t kx = 0; kx < g.K; ++kx) {
                const T* src = col + ((c * g.K + ky) * g.K + kx) * g.cols();
                T* dst = x + c * g.H * g.W;
                for (std::size_t oy = 0; oy < g.OH; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride + static_cast<long>(ky) - g.pad;
                    if (iy < 0 || iy >= H) continue;
                    T* drow = dst + iy * W;
                    const T* s = src + oy * g.OW;
                    for (std::size_t ox = 0; ox < g.OW; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride + static_cast<long>(kx) - g.pad;
                        if (ix >= 0 && ix < W) drow[ix] += s[ox];
                    }
                }
            }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, int stride, int padding) {
    if (input.graph != weight.graph || input.graph != bias.graph)
        throw ContractError("conv2d: operands live on different graphs");
    const auto& xv = input.value();
    const auto& wv = weight.value();
    const auto& bv = bias.value();
    require_chw(xv, "conv2d input");
    if (wv.rank() != 4 || wv.dim(2) != wv.dim(3) || wv.dim(0) == 0 || wv.dim(2) == 0)
        throw ShapeError("conv2d: weight must be outC x inC x k x k, got " + to_string(wv.shape()));
    if (wv.dim(1) != xv.dim(0))
        throw ShapeError("conv2d: input has " + std::to_string(xv.dim(0)) + " channels, weight expects " +
                         std::to_string(wv.dim(1)));
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
        throw ShapeError("conv2d: bias must have shape [" + std::to_string(wv.dim(0)) + "], got " +
                         to_string(bv.shape()));
    if (stride < 1) throw ShapeError("conv2d: stride must be positive");

    ConvGeom g{};
    g.C = xv.dim(0);
    g.H = xv.dim(1);
    g.W = xv.dim(2);
    g.K = wv.dim(2);
    g.OC = wv.dim(0);
    g.stride = stride;
    g.pad = padding < 0 ? static_cast<int>(g.K / 2) : padding;
    const long oh = (static_cast<long>(g.H) + 2 * g.pad - static_cast<long>(g.K)) / stride + 1;
    const long ow = (static_cast<long>(g.W) + 2 * g.pad - static_cast<long>(g.K)) / stride + 1;
    if (oh <= 0 || ow <= 0 || static_cast<long>(g.H) + 2 * g.pad < static_cast<long>(g.K))
        throw ShapeError("conv2d: kernel larger than padded input " + to_string(xv.shape()));
    g.OH = static_cast<std::size_t>(oh);
    g.OW = static_cast<std::size_t>(ow);

    Tensor<T> y({g.OC, g.OH, g.OW});
    // kept for the weight gradient
    auto col = std::make_shared<std::vector<T>>();
    {
        CMapMat<T> wm(wv.ptr(), g.OC, g.rows());
        MapMat<T> ym(y.ptr(), g.OC, g.cols());
        if (g.pointwise()) {
            ym.noalias() = wm * CMapMat<T>(xv.ptr(), g.rows(), g.cols());
        } else {
            col->resize(g.rows() * g.cols());
            im2col(xv.ptr(), g, col->data());
            ym.noalias() = wm * CMapMat<T>(col->data(), g.rows(), g.cols());
        }
        for (std::size_t o = 0; o < g.OC; ++o) ym.row(o).array() += bv[o];
    }
    if (!weight.graph->requires_grad(weight.id)) col.reset();

    const std::size_t xi = input.id, wi = weight.id, bi = bias.id;
    return input.graph->record("conv2d", std::move(y), {xi, wi, bi}, [xi, wi, bi, g, col](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        CMapMat<T> gym(gy.ptr(), g.OC, g.cols());
        if (gr.requires_grad(bi)) {
            auto& gb = gr.grad_buffer(bi);
            // plain loop: Eigen's vectorized sum peels by address, so its order would vary per allocation
            for (std::size_t o = 0; o < g.OC; ++o) {
                const T* row = gy.ptr() + o * g.cols();
                T acc = 0;
                for (std::size_t i = 0; i < g.cols(); ++i) acc += row[i];
                gb[o] += acc;
            }
        }
        const bool need_w = gr.requires_grad(wi);
        const bool need_x = gr.requires_grad(xi);
        if (!need_w && !need_x) return;
        const auto& xv = gr.value(xi);
        if (g.pointwise()) {
            CMapMat<T> xm(xv.ptr(), g.rows(), g.cols());
            if (need_w) {
                MapMat<T> gw(gr.grad_buffer(wi).ptr(), g.OC, g.rows());
                gw.noalias() += gym * xm.transpose();
            }
            if (need_x) {
                CMapMat<T> wm(gr.value(wi).ptr(), g.OC, g.rows());
                MapMat<T> gx(gr.grad_buffer(xi).ptr(), g.rows(), g.cols());
                gx.noalias() += wm.transpose() * gym;
            }
            return;
        }
        std::vector<T> buf(g.rows() * g.cols());
        if (need_w) {
            if (!col) im2col(xv.ptr(), g, buf.data());
            const T* c = col ? col->data() : buf.data();
            MapMat<T> gw(gr.grad_buffer(wi).ptr(), g.OC, g.rows());
            gw.noalias() += gym * CMapMat<T>(c, g.rows(), g.cols()).transpose();
        }
        if (need_x) {
            CMapMat<T> wm(gr.value(wi).ptr(), g.OC, g.rows());
            MapMat<T> cm(buf.data(), g.rows(), g.cols());
            cm.noalias() = wm.transpose() * gym;
            col2im_acc(buf.data(), g, gr.grad_buffer(xi).ptr());
        }
    });
}

template Var<float> conv2d(Var<float>, Var<float>, Var<float>, int, int);
template Var<double> conv2d(Var<double>, Var<double>, Var<double>, int, int);
template Var<long double> conv2d(Var<long double>, Var<long double>, Var<long double>, int, int);

}  // namespace dpdl
