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

}  // namespace

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, bool training, T momentum, T eps) {
    const Shape4 s = input.shape();
    if (gamma.size() != s.c || beta.size() != s.c)
        throw ShapeError(strcat("batch_norm: gamma/beta length ", gamma.size(), "/", beta.size(),
                                " for C=", s.c));
    if (!training && !stats.initialized)
        throw ValueError("batch_norm: eval mode with uninitialized running stats");

    const int64_t plane = s.h * s.w;
    const int64_t per_channel = s.n * plane;
    Tensor<T> out = Tensor<T>::zeros(s);
    const T* px = input.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    T* po = out.data();

    if (!training) {
        // Stats are constants here; the map is affine per channel.
        std::vector<T> rmean(static_cast<size_t>(s.c)), inv(static_cast<size_t>(s.c));
        {
            const T* rm = stats.mean.data();
            const T* rv = stats.var.data();
            for (int64_t c = 0; c < s.c; ++c) {
                rmean[static_cast<size_t>(c)] = rm[c];
                inv[static_cast<size_t>(c)] = T(1) / std::sqrt(rv[c] + eps);
            }
        }
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c) {
                const T* xin = px + (n * s.c + c) * plane;
                T* xout = po + (n * s.c + c) * plane;
                const T a = pg[c] * inv[static_cast<size_t>(c)];
                const T b = pb[c] - a * rmean[static_cast<size_t>(c)];
                for (int64_t i = 0; i < plane; ++i) xout[i] = a * xin[i] + b;
            }
        record_op<T>({input, gamma, beta}, out, [input, gamma, beta, out, rmean, inv, s, plane]() {
            const T* g = out.impl()->grad.data();
            T* gx = grad_dst(input);
            T* gg = grad_dst(gamma);
            T* gb = grad_dst(beta);
            const T* px = input.data();
            const T* pg = gamma.data();
            for (int64_t c = 0; c < s.c; ++c) {
                const T m = rmean[static_cast<size_t>(c)];
                const T iv = inv[static_cast<size_t>(c)];
                T acc_g = 0, acc_b = 0;
                for (int64_t n = 0; n < s.n; ++n) {
                    const T* grow = g + (n * s.c + c) * plane;
                    const T* xin = px + (n * s.c + c) * plane;
                    if (gx) {
                        T* gxr = gx + (n * s.c + c) * plane;
                        const T a = pg[c] * iv;
                        for (int64_t i = 0; i < plane; ++i) gxr[i] += a * grow[i];
                    }
                    for (int64_t i = 0; i < plane; ++i) {
                        acc_b += grow[i];
                        acc_g += grow[i] * (xin[i] - m) * iv;
                    }
                }
                if (gb) gb[c] += acc_b;
                if (gg) gg[c] += acc_g;
            }
        });
        return out;
    }

    // Train mode: normalize by batch moments, biased variance.
    std::vector<T> bmean(static_cast<size_t>(s.c)), bvar(static_cast<size_t>(s.c)),
        inv(static_cast<size_t>(s.c));
    for (int64_t c = 0; c < s.c; ++c) {
        T acc = 0;
        for (int64_t n = 0; n < s.n; ++n) {
            const T* xin = px + (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += xin[i];
        }
        const T m = acc / static_cast<T>(per_channel);
        T vacc = 0;
        for (int64_t n = 0; n < s.n; ++n) {
            const T* xin = px + (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const T d = xin[i] - m;
                vacc += d * d;
            }
        }
        bmean[static_cast<size_t>(c)] = m;
        bvar[static_cast<size_t>(c)] = vacc / static_cast<T>(per_channel);
        inv[static_cast<size_t>(c)] = T(1) / std::sqrt(bvar[static_cast<size_t>(c)] + eps);
    }

    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c) {
            const T* xin = px + (n * s.c + c) * plane;
            T* xout = po + (n * s.c + c) * plane;
            const T m = bmean[static_cast<size_t>(c)];
            const T iv = inv[static_cast<size_t>(c)];
            for (int64_t i = 0; i < plane; ++i) xout[i] = (xin[i] - m) * iv * pg[c] + pb[c];
        }

    // Running stats update (unbiased variance when possible).
    {
        T* rm = stats.mean.data();
        T* rv = stats.var.data();
        const T unbias =
            per_channel > 1 ? static_cast<T>(per_channel) / static_cast<T>(per_channel - 1) : T(1);
        for (int64_t c = 0; c < s.c; ++c) {
            rm[c] = (T(1) - momentum) * rm[c] + momentum * bmean[static_cast<size_t>(c)];
            rv[c] = (T(1) - momentum) * rv[c] + momentum * bvar[static_cast<size_t>(c)] * unbias;
        }
        stats.initialized = true;
    }

    record_op<T>({input, gamma, beta}, out,
                 [input, gamma, beta, out, bmean, inv, s, plane, per_channel]() {
                     const T* g = out.impl()->grad.data();
                     T* gx = grad_dst(input);
                     T* gg = grad_dst(gamma);
                     T* gb = grad_dst(beta);
                     const T* px = input.data();
                     const T* pg = gamma.data();
                     const T M = static_cast<T>(per_channel);
                     for (int64_t c = 0; c < s.c; ++c) {
                         const T m = bmean[static_cast<size_t>(c)];
                         const T iv = inv[static_cast<size_t>(c)];
                         T sum_g = 0, sum_gx = 0;
                         for (int64_t n = 0; n < s.n; ++n) {
                             const T* grow = g + (n * s.c + c) * plane;
                             const T* xin = px + (n * s.c + c) * plane;
                             for (int64_t i = 0; i < plane; ++i) {
                                 sum_g += grow[i];
                                 sum_gx += grow[i] * (xin[i] - m) * iv;
                             }
                         }
                         if (gb) gb[c] += sum_g;
                         if (gg) gg[c] += sum_gx;
                         if (gx) {
                             const T mean_g = sum_g / M;
                             const T mean_gx = sum_gx / M;
                             const T a = pg[c] * iv;
                             for (int64_t n = 0; n < s.n; ++n) {
                                 const T* grow = g + (n * s.c + c) * plane;
                                 const T* xin = px + (n * s.c + c) * plane;
                                 T* gxr = gx + (n * s.c + c) * plane;
                                 for (int64_t i = 0; i < plane; ++i) {
                                     const T xhat = (xin[i] - m) * iv;
                                     gxr[i] += a * (grow[i] - mean_g - xhat * mean_gx);
                                 }
                             }
                         }
                     }
                 });
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    const Shape4 s = input.shape();
    if (s.h < 1 || s.w < 1) throw ShapeError(strcat("global_avg_pool on ", s.str()));
    const int64_t plane = s.h * s.w;
    Tensor<T> out = Tensor<T>::zeros({s.n, s.c, 1, 1});
    const T* px = input.data();
    T* po = out.data();
    for (int64_t i = 0; i < s.n * s.c; ++i) {
        T acc = 0;
        const T* xin = px + i * plane;
        for (int64_t j = 0; j < plane; ++j) acc += xin[j];
        po[i] = acc / static_cast<T>(plane);
    }
    record_op<T>({input}, out, [input, out, s, plane]() {
        T* gx = grad_dst(input);
        if (!gx) return;
        const T* g = out.impl()->grad.data();
        for (int64_t i = 0; i < s.n * s.c; ++i) {
            const T v = g[i] / static_cast<T>(plane);
            T* gxr = gx + i * plane;
            for (int64_t j = 0; j < plane; ++j) gxr[j] += v;
        }
    });
    return out;
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& input) {
    const Shape4 s = input.shape();
    if (s.h < 1 || s.w < 1) throw ShapeError(strcat("global_max_pool on ", s.str()));
    const int64_t plane = s.h * s.w;
    Tensor<T> out = Tensor<T>::zeros({s.n, s.c, 1, 1});
    std::vector<int64_t> argmax(static_cast<size_t>(s.n * s.c));
    const T* px = input.data();
    T* po = out.data();
    for (int64_t i = 0; i < s.n * s.c; ++i) {
        const T* xin = px + i * plane;
        int64_t best = 0;
        for (int64_t j = 1; j < plane; ++j)
            if (xin[j] > xin[best]) best = j;
        po[i] = xin[best];
        argmax[static_cast<size_t>(i)] = best;
    }
    record_op<T>({input}, out, [input, out, argmax, s, plane]() {
        T* gx = grad_dst(input);
        if (!gx) return;
        const T* g = out.impl()->grad.data();
        for (int64_t i = 0; i < s.n * s.c; ++i)
            gx[i * plane + argmax[static_cast<size_t>(i)]] += g[i];
    });
    return out;
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& input) {
    const Shape4 s = input.shape();
    const int64_t plane = s.h * s.w;
    Tensor<T> out = Tensor<T>::zeros({s.n, 1, s.h, s.w});
    const T* px = input.data();
    T* po = out.data();
    for (int64_t n = 0; n < s.n; ++n) {
        T* orow = po + n * plane;
        for (int64_t c = 0; c < s.c; ++c) {
            const T* xin = px + (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) orow[i] += xin[i];
        }
        const T scale = T(1) / static_cast<T>(s.c);
        for (int64_t i = 0; i < plane; ++i) orow[i] *= scale;
    }
    record_op<T>({input}, out, [input, out, s, plane]() {
        T* gx = grad_dst(input);
        if (!gx) return;
        const T* g = out.impl()->grad.data();
        const T scale = T(1) / static_cast<T>(s.c);
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c) {
                T* gxr = gx + (n * s.c + c) * plane;
                const T* grow = g + n * plane;
                for (int64_t i = 0; i < plane; ++i) gxr[i] += grow[i] * scale;
            }
    });
    return out;
}

template <typename T>
Tensor<T> channel_max(const Tensor<T>& input) {
    const Shape4 s = input.shape();
    const int64_t plane = s.h * s.w;
    Tensor<T> out = Tensor<T>::zeros({s.n, 1, s.h, s.w});
    std::vector<int64_t> argmax(static_cast<size_t>(s.n * plane));
    const T* px = input.data();
    T* po = out.data();
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t i = 0; i < plane; ++i) {
            int64_t best = 0;
            T bv = px[(n * s.c) * plane + i];
            for (int64_t c = 1; c < s.c; ++c) {
                const T v = px[(n * s.c + c) * plane + i];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            po[n * plane + i] = bv;
            argmax[static_cast<size_t>(n * plane + i)] = best;
        }
    record_op<T>({input}, out, [input, out, argmax, s, plane]() {
        T* gx = grad_dst(input);
        if (!gx) return;
        const T* g = out.impl()->grad.data();
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t i = 0; i < plane; ++i) {
                const int64_t c = argmax[static_cast<size_t>(n * plane + i)];
                gx[(n * s.c + c) * plane + i] += g[n * plane + i];
            }
    });
    return out;
}

#define TSNET_INSTANTIATE_NORM(T)                                                            \
    template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                     RunningStats<T>&, bool, T, T);                          \
    template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                 \
    template Tensor<T> global_max_pool<T>(const Tensor<T>&);                                 \
    template Tensor<T> channel_mean<T>(const Tensor<T>&);                                    \
    template Tensor<T> channel_max<T>(const Tensor<T>&);

TSNET_INSTANTIATE_NORM(float)
TSNET_INSTANTIATE_NORM(double)

}  // namespace tsnet
