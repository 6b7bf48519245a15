#include <algorithm>
#include <cmath>

#include "tsnet/ops.hpp"

namespace tsnet {

namespace {

template <typename T>
T* grad_dst(const Tensor<T>& t) {
    if (!t.requires_grad()) return nullptr;
    t.impl()->ensure_grad();
    return t.impl()->grad.data();
}

struct ConvGeom {
    int64_t N, Cin, H, W;
    int64_t Cout, Cig, KH, KW;  // Cig = Cin / groups
    int64_t stride, pad, dilation, groups;
    int64_t OH, OW;
    int64_t Cog;  // Cout / groups
};

/// Valid output range [lo, hi) for one kernel tap so that the sampled input
/// index stays inside [0, extent).
void tap_range(int64_t k, int64_t dilation, int64_t pad, int64_t stride, int64_t in_extent,
               int64_t out_extent, int64_t* lo, int64_t* hi) {
    const int64_t base = k * dilation - pad;  // in = out*stride + base
    int64_t l = 0;
    if (base < 0) l = (-base + stride - 1) / stride;
    int64_t h = out_extent;
    const int64_t max_in = in_extent - 1 - base;
    if (max_in < 0)
        h = 0;
    else
        h = std::min<int64_t>(out_extent, max_in / stride + 1);
    *lo = std::min(l, out_extent);
    *hi = std::max(h, *lo);
}

template <typename T>
void conv_forward(const ConvGeom& g, const T* in, const T* w, const T* bias, T* out) {
    const int64_t in_plane = g.H * g.W;
    const int64_t out_plane = g.OH * g.OW;
    for (int64_t n = 0; n < g.N; ++n)
        for (int64_t gr = 0; gr < g.groups; ++gr)
            for (int64_t cog = 0; cog < g.Cog; ++cog) {
                const int64_t co = gr * g.Cog + cog;
                T* op = out + (n * g.Cout + co) * out_plane;
                if (bias) {
                    const T b = bias[co];
                    for (int64_t i = 0; i < out_plane; ++i) op[i] = b;
                }
                for (int64_t cig = 0; cig < g.Cig; ++cig) {
                    const int64_t ci = gr * g.Cig + cig;
                    const T* ip = in + (n * g.Cin + ci) * in_plane;
                    const T* wp = w + (co * g.Cig + cig) * g.KH * g.KW;
                    for (int64_t kh = 0; kh < g.KH; ++kh) {
                        int64_t oh_lo, oh_hi;
                        tap_range(kh, g.dilation, g.pad, g.stride, g.H, g.OH, &oh_lo, &oh_hi);
                        const int64_t ih_base = kh * g.dilation - g.pad;
                        for (int64_t kw = 0; kw < g.KW; ++kw) {
                            const T wv = wp[kh * g.KW + kw];
                            if (wv == T(0)) continue;
                            int64_t ow_lo, ow_hi;
                            tap_range(kw, g.dilation, g.pad, g.stride, g.W, g.OW, &ow_lo, &ow_hi);
                            const int64_t iw_base = kw * g.dilation - g.pad;
                            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                const T* irow = ip + (oh * g.stride + ih_base) * g.W + iw_base;
                                T* orow = op + oh * g.OW;
                                if (g.stride == 1) {
                                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                        orow[ow] += wv * irow[ow];
                                } else {
                                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                        orow[ow] += wv * irow[ow * g.stride];
                                }
                            }
                        }
                    }
                }
            }
}

template <typename T>
void conv_backward(const ConvGeom& g, const T* in, const T* w, const T* gout, T* gin, T* gw,
                   T* gbias) {
    const int64_t in_plane = g.H * g.W;
    const int64_t out_plane = g.OH * g.OW;
    for (int64_t n = 0; n < g.N; ++n)
        for (int64_t gr = 0; gr < g.groups; ++gr)
            for (int64_t cog = 0; cog < g.Cog; ++cog) {
                const int64_t co = gr * g.Cog + cog;
                const T* gop = gout + (n * g.Cout + co) * out_plane;
                if (gbias) {
                    T acc = 0;
                    for (int64_t i = 0; i < out_plane; ++i) acc += gop[i];
                    gbias[co] += acc;
                }
                for (int64_t cig = 0; cig < g.Cig; ++cig) {
                    const int64_t ci = gr * g.Cig + cig;
                    const T* ip = in + (n * g.Cin + ci) * in_plane;
                    T* gip = gin ? gin + (n * g.Cin + ci) * in_plane : nullptr;
                    const T* wp = w + (co * g.Cig + cig) * g.KH * g.KW;
                    T* gwp = gw ? gw + (co * g.Cig + cig) * g.KH * g.KW : nullptr;
                    for (int64_t kh = 0; kh < g.KH; ++kh) {
                        int64_t oh_lo, oh_hi;
                        tap_range(kh, g.dilation, g.pad, g.stride, g.H, g.OH, &oh_lo, &oh_hi);
                        const int64_t ih_base = kh * g.dilation - g.pad;
                        for (int64_t kw = 0; kw < g.KW; ++kw) {
                            int64_t ow_lo, ow_hi;
                            tap_range(kw, g.dilation, g.pad, g.stride, g.W, g.OW, &ow_lo, &ow_hi);
                            const int64_t iw_base = kw * g.dilation - g.pad;
                            const T wv = wp[kh * g.KW + kw];
                            T wacc = 0;
                            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                const T* grow = gop + oh * g.OW;
                                const T* irow = ip + (oh * g.stride + ih_base) * g.W + iw_base;
                                T* girow =
                                    gip ? gip + (oh * g.stride + ih_base) * g.W + iw_base : nullptr;
                                if (g.stride == 1) {
                                    if (gwp)
                                        for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                            wacc += grow[ow] * irow[ow];
                                    if (girow)
                                        for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                            girow[ow] += wv * grow[ow];
                                } else {
                                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                        if (gwp) wacc += grow[ow] * irow[ow * g.stride];
                                        if (girow) girow[ow * g.stride] += wv * grow[ow];
                                    }
                                }
                            }
                            if (gwp) gwp[kh * g.KW + kw] += wacc;
                        }
                    }
                }
            }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride, Padding padding, int64_t dilation, int64_t groups) {
    // Reflect padding is realized as an explicit pad stage; the core kernel
    // handles implicit zeros.
    if (padding.mode == PadMode::kReflect && padding.amount > 0) {
        Tensor<T> padded = pad(input, padding.amount, padding.amount, PadMode::kReflect);
        return conv2d(padded, weight, bias, stride, Padding{0, PadMode::kZero}, dilation, groups);
    }

    const Shape4 is = input.shape();
    const Shape4 ws = weight.shape();
    if (stride < 1) throw ValueError(strcat("conv2d: stride ", stride, " < 1"));
    if (dilation < 1) throw ValueError(strcat("conv2d: dilation ", dilation, " < 1"));
    if (groups < 1) throw ValueError(strcat("conv2d: groups ", groups, " < 1"));
    if (is.c % groups != 0)
        throw ShapeError(strcat("conv2d: input channels ", is.c, " not divisible by groups ", groups));
    if (ws.c != is.c / groups)
        throw ShapeError(strcat("conv2d: weight expects ", ws.c, " channels per group, input has ",
                                is.c / groups));
    if (ws.n % groups != 0)
        throw ShapeError(strcat("conv2d: output channels ", ws.n, " not divisible by groups ", groups));
    if (bias.defined() && bias.size() != ws.n)
        throw ShapeError(strcat("conv2d: bias has ", bias.size(), " entries for ", ws.n,
                                " output channels"));

    ConvGeom g;
    g.N = is.n;
    g.Cin = is.c;
    g.H = is.h;
    g.W = is.w;
    g.Cout = ws.n;
    g.Cig = ws.c;
    g.KH = ws.h;
    g.KW = ws.w;
    g.stride = stride;
    g.pad = padding.amount;
    g.dilation = dilation;
    g.groups = groups;
    g.Cog = g.Cout / groups;
    g.OH = (g.H + 2 * g.pad - dilation * (g.KH - 1) - 1) / stride + 1;
    g.OW = (g.W + 2 * g.pad - dilation * (g.KW - 1) - 1) / stride + 1;
    if (g.OH < 1 || g.OW < 1)
        throw ShapeError(strcat("conv2d: output extent ", g.OH, "x", g.OW, " from input ", is.str(),
                                " kernel ", g.KH, "x", g.KW, " dilation ", dilation));

    Tensor<T> out = Tensor<T>::zeros({g.N, g.Cout, g.OH, g.OW});
    conv_forward(g, input.data(), weight.data(), bias.defined() ? bias.data() : nullptr,
                 out.data());

    std::vector<Tensor<T>> parents{input, weight};
    if (bias.defined()) parents.push_back(bias);
    record_op<T>(std::move(parents), out, [input, weight, bias, out, g]() {
        const T* gout = out.impl()->grad.data();
        T* gin = grad_dst(input);
        T* gw = grad_dst(weight);
        T* gb = bias.defined() ? grad_dst(bias) : nullptr;
        conv_backward(g, input.data(), weight.data(), gout, gin, gw, gb);
    });
    return out;
}

template Tensor<float> conv2d<float>(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, int64_t, Padding, int64_t, int64_t);
template Tensor<double> conv2d<double>(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, int64_t, Padding, int64_t, int64_t);

}  // namespace tsnet
