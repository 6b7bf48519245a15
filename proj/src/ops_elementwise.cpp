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

int64_t axis_max(int64_t a, int64_t b, const char* axis) {
    if (a == b || a == 1 || b == 1) return std::max(a, b);
    throw ShapeError(strcat("axis ", axis, " mismatch: ", a, " vs ", b,
                            " (must match or be broadcastable via 1)"));
}

Shape4 broadcast_shape(const Shape4& a, const Shape4& b) {
    return {axis_max(a.n, b.n, "N"), axis_max(a.c, b.c, "C"), axis_max(a.h, b.h, "H"),
            axis_max(a.w, b.w, "W")};
}

struct BStride {
    int64_t n, c, h, w;
};

BStride strides_for(const Shape4& s) {
    return {s.n == 1 ? 0 : s.c * s.h * s.w, s.c == 1 ? 0 : s.h * s.w, s.h == 1 ? 0 : s.w,
            s.w == 1 ? 0 : 1};
}

/// Visits every output coordinate with the flat output index and the mapped
/// (possibly broadcast) indices into both operands.
template <typename F>
void for_each_bcast(const Shape4& out, const Shape4& a, const Shape4& b, F&& f) {
    const BStride sa = strides_for(a);
    const BStride sb = strides_for(b);
    int64_t io = 0;
    for (int64_t n = 0; n < out.n; ++n)
        for (int64_t c = 0; c < out.c; ++c)
            for (int64_t h = 0; h < out.h; ++h) {
                const int64_t ra = n * sa.n + c * sa.c + h * sa.h;
                const int64_t rb = n * sb.n + c * sb.c + h * sb.h;
                for (int64_t w = 0; w < out.w; ++w, ++io) f(io, ra + w * sa.w, rb + w * sb.w);
            }
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, Fwd&& fwd, Bwd&& bwd) {
    const Shape4 os = broadcast_shape(a.shape(), b.shape());
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    if (a.shape() == b.shape()) {
        const int64_t count = out.size();
        for (int64_t i = 0; i < count; ++i) po[i] = fwd(pa[i], pb[i]);
    } else {
        for_each_bcast(os, a.shape(), b.shape(),
                       [&](int64_t io, int64_t ia, int64_t ib) { po[io] = fwd(pa[ia], pb[ib]); });
    }
    record_op<T>({a, b}, out, [a, b, out, os, bwd]() {
        const T* g = out.impl()->grad.data();
        T* ga = grad_dst(a);
        T* gb = grad_dst(b);
        const T* pa = a.data();
        const T* pb = b.data();
        for_each_bcast(os, a.shape(), b.shape(), [&](int64_t io, int64_t ia, int64_t ib) {
            bwd(g[io], pa[ia], pb[ib], ga ? ga + ia : nullptr, gb ? gb + ib : nullptr);
        });
    });
    return out;
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd&& fwd, Bwd&& bwd) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const int64_t count = x.size();
    for (int64_t i = 0; i < count; ++i) po[i] = fwd(px[i]);
    record_op<T>({x}, out, [x, out, bwd]() {
        T* gx = grad_dst(x);
        if (!gx) return;
        const T* g = out.impl()->grad.data();
        const T* px = x.data();
        const T* po = out.data();
        const int64_t count = x.size();
        for (int64_t i = 0; i < count; ++i) gx[i] += bwd(g[i], px[i], po[i]);
    });
    return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x + y; },
        [](T g, T, T, T* ga, T* gb) {
            if (ga) *ga += g;
            if (gb) *gb += g;
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x - y; },
        [](T g, T, T, T* ga, T* gb) {
            if (ga) *ga += g;
            if (gb) *gb -= g;
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x * y; },
        [](T g, T x, T y, T* ga, T* gb) {
            if (ga) *ga += g * y;
            if (gb) *gb += g * x;
        });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x / y; },
        [](T g, T x, T y, T* ga, T* gb) {
            if (ga) *ga += g / y;
            if (gb) *gb -= g * x / (y * y);
        });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T s) {
    return unary_op(
        x, [s](T v) { return v * s; }, [s](T g, T, T) { return g * s; });
}

template <typename T>
Tensor<T> scalar_add(const Tensor<T>& x, T s) {
    return unary_op(
        x, [s](T v) { return v + s; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T kInvSqrt2 = T(0.70710678118654752440084436210485L);
    constexpr T kInvSqrt2Pi = T(0.39894228040143267793994605993438L);
    return unary_op(
        x,
        [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
        [=](T g, T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
            const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
            return g * (cdf + v * pdf);
        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T g, T v, T) { return v > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    if (!(lo <= hi)) throw ValueError(strcat("clamp bounds inverted: [", lo, ", ", hi, "]"));
    return unary_op(
        x, [=](T v) { return std::min(std::max(v, lo), hi); },
        [=](T g, T v, T) { return (v >= lo && v <= hi) ? g : T(0); });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ValueError("concat of zero tensors");
    const Shape4 first = parts[0].shape();
    int64_t channels = 0;
    for (const Tensor<T>& p : parts) {
        const Shape4 s = p.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ShapeError(strcat("concat non-channel dims differ: ", s.str(), " vs ", first.str()));
        channels += s.c;
    }
    Tensor<T> out = Tensor<T>::zeros({first.n, channels, first.h, first.w});
    const int64_t plane = first.h * first.w;
    T* po = out.data();
    int64_t coff = 0;
    for (const Tensor<T>& p : parts) {
        const T* pp = p.data();
        const int64_t pc = p.shape().c;
        for (int64_t n = 0; n < first.n; ++n)
            std::copy(pp + n * pc * plane, pp + (n + 1) * pc * plane,
                      po + (n * channels + coff) * plane);
        coff += pc;
    }
    record_op<T>(parts, out, [parts, out, channels, plane, first]() {
        const T* g = out.impl()->grad.data();
        int64_t coff = 0;
        for (const Tensor<T>& p : parts) {
            const int64_t pc = p.shape().c;
            if (T* gp = grad_dst(p)) {
                for (int64_t n = 0; n < first.n; ++n) {
                    const T* src = g + (n * channels + coff) * plane;
                    T* dst = gp + n * pc * plane;
                    for (int64_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
                }
            }
            coff += pc;
        }
    });
    return out;
}

template <typename T>
Tensor<T> narrow_channels(const Tensor<T>& x, int64_t start, int64_t len) {
    const Shape4 s = x.shape();
    if (start < 0 || len <= 0 || start + len > s.c)
        throw ShapeError(strcat("channel slice [", start, ", ", start + len, ") out of C=", s.c));
    Tensor<T> out = Tensor<T>::zeros({s.n, len, s.h, s.w});
    const int64_t plane = s.h * s.w;
    const T* px = x.data();
    T* po = out.data();
    for (int64_t n = 0; n < s.n; ++n)
        std::copy(px + (n * s.c + start) * plane, px + (n * s.c + start + len) * plane,
                  po + n * len * plane);
    record_op<T>({x}, out, [x, out, start, len, plane, s]() {
        T* gx = grad_dst(x);
        if (!gx) return;
        const T* g = out.impl()->grad.data();
        for (int64_t n = 0; n < s.n; ++n) {
            const T* src = g + n * len * plane;
            T* dst = gx + (n * s.c + start) * plane;
            for (int64_t i = 0; i < len * plane; ++i) dst[i] += src[i];
        }
    });
    return out;
}

namespace {

/// Single-reflection index (edge sample not repeated).
int64_t reflect_index(int64_t i, int64_t extent) {
    if (i < 0) return -i;
    if (i >= extent) return 2 * extent - 2 - i;
    return i;
}

}  // namespace

template <typename T>
Tensor<T> pad(const Tensor<T>& x, int64_t pad_h, int64_t pad_w, PadMode mode) {
    const Shape4 s = x.shape();
    if (pad_h < 0 || pad_w < 0) throw ValueError("negative padding");
    if (mode == PadMode::kReflect && (pad_h >= s.h || pad_w >= s.w))
        throw ShapeError(strcat("reflect pad ", pad_h, "x", pad_w, " too large for ", s.str()));
    const Shape4 os{s.n, s.c, s.h + 2 * pad_h, s.w + 2 * pad_w};
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* px = x.data();
    T* po = out.data();
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c) {
            const T* xin = px + (n * s.c + c) * s.h * s.w;
            T* xout = po + (n * s.c + c) * os.h * os.w;
            for (int64_t oh = 0; oh < os.h; ++oh) {
                const int64_t ih = oh - pad_h;
                for (int64_t ow = 0; ow < os.w; ++ow) {
                    const int64_t iw = ow - pad_w;
                    if (mode == PadMode::kZero) {
                        if (ih >= 0 && ih < s.h && iw >= 0 && iw < s.w)
                            xout[oh * os.w + ow] = xin[ih * s.w + iw];
                    } else {
                        xout[oh * os.w + ow] =
                            xin[reflect_index(ih, s.h) * s.w + reflect_index(iw, s.w)];
                    }
                }
            }
        }
    record_op<T>({x}, out, [x, out, s, os, pad_h, pad_w, mode]() {
        T* gx = grad_dst(x);
        if (!gx) return;
        const T* g = out.impl()->grad.data();
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c) {
                const T* gout = g + (n * s.c + c) * os.h * os.w;
                T* gin = gx + (n * s.c + c) * s.h * s.w;
                for (int64_t oh = 0; oh < os.h; ++oh) {
                    const int64_t ih = oh - pad_h;
                    for (int64_t ow = 0; ow < os.w; ++ow) {
                        const int64_t iw = ow - pad_w;
                        if (mode == PadMode::kZero) {
                            if (ih >= 0 && ih < s.h && iw >= 0 && iw < s.w)
                                gin[ih * s.w + iw] += gout[oh * os.w + ow];
                        } else {
                            gin[reflect_index(ih, s.h) * s.w + reflect_index(iw, s.w)] +=
                                gout[oh * os.w + ow];
                        }
                    }
                }
            }
    });
    return out;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int64_t r) {
    const Shape4 s = x.shape();
    if (r <= 0 || s.c % (r * r) != 0)
        throw ShapeError(strcat("pixel_shuffle: C=", s.c, " not divisible by r^2=", r * r));
    const Shape4 os{s.n, s.c / (r * r), s.h * r, s.w * r};
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* px = x.data();
    T* po = out.data();
    for (int64_t n = 0; n < os.n; ++n)
        for (int64_t c = 0; c < os.c; ++c)
            for (int64_t oh = 0; oh < os.h; ++oh)
                for (int64_t ow = 0; ow < os.w; ++ow) {
                    const int64_t ic = c * r * r + (oh % r) * r + (ow % r);
                    po[((n * os.c + c) * os.h + oh) * os.w + ow] =
                        px[((n * s.c + ic) * s.h + oh / r) * s.w + ow / r];
                }
    record_op<T>({x}, out, [x, out, s, os, r]() {
        T* gx = grad_dst(x);
        if (!gx) return;
        const T* g = out.impl()->grad.data();
        for (int64_t n = 0; n < os.n; ++n)
            for (int64_t c = 0; c < os.c; ++c)
                for (int64_t oh = 0; oh < os.h; ++oh)
                    for (int64_t ow = 0; ow < os.w; ++ow) {
                        const int64_t ic = c * r * r + (oh % r) * r + (ow % r);
                        gx[((n * s.c + ic) * s.h + oh / r) * s.w + ow / r] +=
                            g[((n * os.c + c) * os.h + oh) * os.w + ow];
                    }
    });
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros({1, 1, 1, 1});
    const T* px = x.data();
    T acc = 0;
    const int64_t count = x.size();
    for (int64_t i = 0; i < count; ++i) acc += px[i];
    out.data()[0] = acc;
    record_op<T>({x}, out, [x, out]() {
        T* gx = grad_dst(x);
        if (!gx) return;
        const T g = out.impl()->grad[0];
        const int64_t count = x.size();
        for (int64_t i = 0; i < count; ++i) gx[i] += g;
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scalar_mul(sum(x), T(1) / static_cast<T>(x.size()));
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& x, const Tensor<T>& y, const char* what) {
    if (!(x.shape() == y.shape()))
        throw ShapeError(strcat(what, ": shapes differ, ", x.shape().str(), " vs ", y.shape().str()));
}

}  // namespace

template <typename T>
Tensor<T> smooth_l1_loss(const Tensor<T>& x, const Tensor<T>& y) {
    require_same_shape(x, y, "smooth_l1_loss");
    Tensor<T> out = Tensor<T>::zeros({1, 1, 1, 1});
    const T* px = x.data();
    const T* py = y.data();
    const int64_t count = x.size();
    T acc = 0;
    for (int64_t i = 0; i < count; ++i) {
        const T d = px[i] - py[i];
        const T a = std::abs(d);
        acc += a < T(1) ? T(0.5) * d * d : a - T(0.5);
    }
    out.data()[0] = acc / static_cast<T>(count);
    record_op<T>({x, y}, out, [x, y, out]() {
        const T g = out.impl()->grad[0];
        T* gx = grad_dst(x);
        T* gy = grad_dst(y);
        const T* px = x.data();
        const T* py = y.data();
        const int64_t count = x.size();
        const T scale = g / static_cast<T>(count);
        for (int64_t i = 0; i < count; ++i) {
            const T d = px[i] - py[i];
            const T dd = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
            if (gx) gx[i] += scale * dd;
            if (gy) gy[i] -= scale * dd;
        }
    });
    return out;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& x, const Tensor<T>& y) {
    require_same_shape(x, y, "l1_loss");
    Tensor<T> out = Tensor<T>::zeros({1, 1, 1, 1});
    const T* px = x.data();
    const T* py = y.data();
    const int64_t count = x.size();
    T acc = 0;
    for (int64_t i = 0; i < count; ++i) acc += std::abs(px[i] - py[i]);
    out.data()[0] = acc / static_cast<T>(count);
    record_op<T>({x, y}, out, [x, y, out]() {
        const T g = out.impl()->grad[0];
        T* gx = grad_dst(x);
        T* gy = grad_dst(y);
        const T* px = x.data();
        const T* py = y.data();
        const int64_t count = x.size();
        const T scale = g / static_cast<T>(count);
        for (int64_t i = 0; i < count; ++i) {
            const T d = px[i] - py[i];
            const T sg = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            if (gx) gx[i] += scale * sg;
            if (gy) gy[i] -= scale * sg;
        }
    });
    return out;
}

#define TSNET_INSTANTIATE_ELEMENTWISE(T)                                              \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> scalar_mul<T>(const Tensor<T>&, T);                            \
    template Tensor<T> scalar_add<T>(const Tensor<T>&, T);                            \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                  \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                     \
    template Tensor<T> relu<T>(const Tensor<T>&);                                     \
    template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                              \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&);                      \
    template Tensor<T> narrow_channels<T>(const Tensor<T>&, int64_t, int64_t);        \
    template Tensor<T> pad<T>(const Tensor<T>&, int64_t, int64_t, PadMode);           \
    template Tensor<T> pixel_shuffle<T>(const Tensor<T>&, int64_t);                   \
    template Tensor<T> sum<T>(const Tensor<T>&);                                      \
    template Tensor<T> mean<T>(const Tensor<T>&);                                     \
    template Tensor<T> smooth_l1_loss<T>(const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);

TSNET_INSTANTIATE_ELEMENTWISE(float)
TSNET_INSTANTIATE_ELEMENTWISE(double)

}  // namespace tsnet
