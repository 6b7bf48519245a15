#pragma once

#include <optional>

#include "tsnet/tensor.hpp"

namespace tsnet {

enum class PadMode { kZero, kReflect };

/// Symmetric spatial padding request for conv2d.
struct Padding {
    int64_t amount = 0;
    PadMode mode = PadMode::kZero;
};

// ---------------------------------------------------------------------------
// Convolution and sampling

/// Cross-correlation with dilation and groups. weight is
/// (Cout, Cin/groups, kH, kW); bias, when defined, is (1, Cout, 1, 1).
/// Differentiable w.r.t. input, weight and bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride = 1, Padding padding = {}, int64_t dilation = 1,
                 int64_t groups = 1);

/// Bilinear sampling at absolute fractional (y, x) positions. coords is
/// (N, 2K, Hg, Wg) with channel 2k holding y and 2k+1 holding x for sampling
/// point k; the result is (N, K*C, Hg, Wg) with point k occupying channels
/// [k*C, (k+1)*C). Positions at or beyond one pixel outside the image
/// contribute zero. Differentiable w.r.t. input values and coordinates.
template <typename T>
Tensor<T> grid_sample_bilinear(const Tensor<T>& input, const Tensor<T>& coords);

/// Per-channel running moments for batch normalization.
template <typename T>
struct RunningStats {
    Tensor<T> mean;  // (1, C, 1, 1)
    Tensor<T> var;   // (1, C, 1, 1)
    bool initialized = false;

    static RunningStats make(int64_t channels) {
        return RunningStats{Tensor<T>::zeros({1, channels, 1, 1}),
                            Tensor<T>::full({1, channels, 1, 1}, T(1)), false};
    }
};

/// Batch normalization over (N, H, W) per channel. Train mode normalizes by
/// batch moments (biased variance) and updates the running stats in place;
/// eval mode applies the stored stats and requires them to be initialized.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, bool training, T momentum = T(0.1),
                     T eps = T(1e-5));

// ---------------------------------------------------------------------------
// Pooling / reductions over axes

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);  // (N, C, 1, 1)

/// Max over the spatial extent; subgradient routed to the first maximal
/// element in row-major order.
template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& input);  // (N, C, 1, 1)

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& input);  // (N, 1, H, W)

/// Per-pixel max over channels, first-index tie-breaking.
template <typename T>
Tensor<T> channel_max(const Tensor<T>& input);  // (N, 1, H, W)

// ---------------------------------------------------------------------------
// Elementwise

/// add/mul/div broadcast any axis of extent 1 against the other operand.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T s);
template <typename T>
Tensor<T> scalar_add(const Tensor<T>& x, T s);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);  // exact erf form
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Clamp with pass-through subgradient inside [lo, hi] (bounds included).
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

/// Concatenation along the channel axis.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);

/// Channel slice [start, start+len).
template <typename T>
Tensor<T> narrow_channels(const Tensor<T>& x, int64_t start, int64_t len);

/// Symmetric spatial padding. Reflection excludes the edge sample
/// (width-1 reflect of [a,b,c] gives [b,a,b,c,b]) and requires the padded
/// extent to exceed the pad width.
template <typename T>
Tensor<T> pad(const Tensor<T>& x, int64_t pad_h, int64_t pad_w, PadMode mode);

/// Depth-to-space: (N, C*r^2, H, W) -> (N, C, rH, rW).
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int64_t r);

// ---------------------------------------------------------------------------
// Scalar reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x);  // (1,1,1,1)
template <typename T>
Tensor<T> mean(const Tensor<T>& x);  // (1,1,1,1)

/// Mean elementwise smooth-L1: 0.5 d^2 for |d| < 1 else |d| - 0.5.
template <typename T>
Tensor<T> smooth_l1_loss(const Tensor<T>& x, const Tensor<T>& y);

/// Mean absolute difference.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& x, const Tensor<T>& y);

}  // namespace tsnet
