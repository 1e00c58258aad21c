#pragma once

// Two-stream attentive regression tracker: a five-level feature extractor,
// one channel-attention MLP per level, channel concatenation, and a
// 1x1-conv + three-FC regression head producing an encoded square box.

#include <aftn/geometry.hpp>
#include <aftn/ops.hpp>
#include <aftn/optim.hpp>
#include <aftn/rng.hpp>
#include <aftn/tensor.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aftn {

inline constexpr std::size_t kLevels = 5;
inline constexpr std::size_t kCommonSide = 6;
inline constexpr std::size_t kCommonArea = kCommonSide * kCommonSide;

enum class Variant { aftn, aftn_no_att, aftn_c, baseline_goturn };

inline std::string_view variant_name(Variant v) {
    switch (v) {
    case Variant::aftn: return "aftn";
    case Variant::aftn_no_att: return "aftn-no-att";
    case Variant::aftn_c: return "aftn-c";
    case Variant::baseline_goturn: return "baseline";
    }
    return "?";
}

inline Variant parse_variant(std::string_view name) {
    for (Variant v : {Variant::aftn, Variant::aftn_no_att, Variant::aftn_c, Variant::baseline_goturn})
        if (variant_name(v) == name) return v;
    throw ConfigError("unknown variant '" + std::string(name) + "' (expected aftn, aftn-no-att, aftn-c, baseline)");
}

inline bool uses_attention(Variant v) { return v == Variant::aftn || v == Variant::aftn_c; }
inline std::size_t stream_count(Variant v) { return v == Variant::aftn_c ? 1 : 2; }

struct FenConfig {
    std::array<std::size_t, kLevels> channels{4, 8, 16, 16, 16};
    int input_size = 224;
    bool frozen = true;
    /// Multiplier applied to the mean-subtracted patch before the first conv.
    double input_scale = 1.0 / 128.0;

    static FenConfig full_profile() {
        FenConfig c;
        c.channels = {96, 256, 512, 512, 512};
        return c;
    }

    void validate() const {
        for (auto c : channels)
            if (c == 0) throw ConfigError("fen.channels entries must be positive");
        if (input_size <= 0) throw ConfigError("fen.input_size must be positive");
        if (!(input_scale > 0.0) || !std::isfinite(input_scale)) throw ConfigError("fen.input_scale must be positive");
    }
};

struct HeadConfig {
    std::size_t fusion_kernels = 32;
    std::size_t fc_units = 128;
    double dropout = 0.5;

    static HeadConfig full_profile() { return HeadConfig{256, 4096, 0.5}; }

    void validate() const {
        if (fusion_kernels == 0 || fc_units == 0) throw ConfigError("head sizes must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("head.dropout must be in [0,1)");
    }
};

/// Conv geometry of one extractor level; `pool` appends a 3x3/s2 max-pool.
struct LevelSpec {
    std::size_t kernel, stride, pad;
    bool pool;
};

inline constexpr std::array<LevelSpec, kLevels> kLevelSpecs{{
    {7, 2, 0, true},
    {5, 2, 2, true},
    {3, 1, 1, false},
    {3, 1, 1, false},
    {3, 1, 1, true},
}};

namespace detail {

inline void fill_uniform(Param& p, double bound, Rng& rng) {
    for (auto& v : p.value.data()) v = rng.uniform(-bound, bound);
}

inline std::size_t fan_in(const Param& p) { return p.size() / p.shape()[0]; }

} // namespace detail

// ------------------------------------------------------------ extractor

struct FenTrace {
    Tensor input;
    std::array<Tensor, kLevels> conv;
    std::array<Tensor, kLevels> act;
    std::array<Tensor, kLevels> features;
    std::array<std::vector<std::size_t>, kLevels> pool_argmax;
};

class FeatureExtractor {
public:
    FeatureExtractor() = default;

    explicit FeatureExtractor(const FenConfig& config) : config_(config) {
        config_.validate();
        std::size_t in = 3;
        for (std::size_t l = 0; l < kLevels; ++l) {
            const auto k = kLevelSpecs[l].kernel;
            kernels_[l] = Param({config_.channels[l], in, k, k}, true);
            biases_[l] = Param({config_.channels[l]});
            in = config_.channels[l];
        }
    }

    const FenConfig& config() const noexcept { return config_; }

    /// Fan-in scaled uniform (He) initialization, zero biases.
    void initialize(Rng& rng) {
        for (std::size_t l = 0; l < kLevels; ++l) {
            detail::fill_uniform(kernels_[l], std::sqrt(6.0 / static_cast<double>(detail::fan_in(kernels_[l]))), rng);
            std::fill(biases_[l].value.data().begin(), biases_[l].value.data().end(), 0.0);
        }
    }

    /// Runs all five levels on one patch; `trace.features` holds the maps.
    void forward(const SearchPatch& patch, FenTrace& trace) const {
        if (patch.size != config_.input_size)
            throw DimensionError("fen_forward: patch size " + std::to_string(patch.size) + " != configured " +
                                 std::to_string(config_.input_size));
        const auto s = static_cast<std::size_t>(patch.size);
        trace.input = Tensor({3, s, s});
        auto in = trace.input.data();
        for (std::size_t i = 0; i < in.size(); ++i) in[i] = patch.planes[i] * config_.input_scale;
        const Tensor* prev = &trace.input;
        for (std::size_t l = 0; l < kLevels; ++l) {
            const auto& spec = kLevelSpecs[l];
            trace.conv[l] = conv2d(*prev, kernels_[l], biases_[l], spec.stride, spec.pad);
            trace.act[l] = relu(trace.conv[l]);
            if (spec.pool)
                trace.features[l] = maxpool2d(trace.act[l], 3, 2, &trace.pool_argmax[l]);
            else
                trace.features[l] = trace.act[l];
            trace.features[l].zero_grad();
            prev = &trace.features[l];
        }
    }

    /// Backpropagates feature-map gradients. Parameter gradients are only
    /// accumulated when the extractor is not frozen.
    void backward(FenTrace& trace) {
        if (config_.frozen) return;
        for (std::size_t l = kLevels; l-- > 0;) {
            const auto& spec = kLevelSpecs[l];
            if (spec.pool) {
                maxpool2d_backward(trace.act[l], trace.features[l], trace.pool_argmax[l]);
            } else {
                auto da = trace.act[l].grad();
                const auto df = trace.features[l].grad();
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += df[i];
            }
            relu_backward(trace.conv[l], trace.act[l]);
            Tensor& prev = l == 0 ? trace.input : trace.features[l - 1];
            conv2d_backward(prev, kernels_[l], biases_[l], trace.conv[l], spec.stride, spec.pad,
                            GradTargets{l > 0, true});
        }
    }

    Param& kernel(std::size_t level) { return kernels_.at(level); }
    Param& bias(std::size_t level) { return biases_.at(level); }
    const Param& kernel(std::size_t level) const { return kernels_.at(level); }
    const Param& bias(std::size_t level) const { return biases_.at(level); }

    void collect(std::vector<Param*>& out) {
        for (std::size_t l = 0; l < kLevels; ++l) {
            out.push_back(&kernels_[l]);
            out.push_back(&biases_[l]);
        }
    }

private:
    FenConfig config_;
    std::array<Param, kLevels> kernels_;
    std::array<Param, kLevels> biases_;
};

// ---------------------------------------------------------- pooling

struct PoolTrace {
    std::array<Tensor, kLevels> pooled;
    Tensor level1_mid;
    std::vector<std::size_t> level1_first, level1_second;
    std::array<std::vector<std::size_t>, kLevels> argmax;
};

inline void require_common_side(const Tensor& t, std::size_t level) {
    if (t.rank() != 3 || t.dim(1) != kCommonSide || t.dim(2) != kCommonSide)
        throw DimensionError("pool_to_common: level " + std::to_string(level + 1) + " pooled to " +
                             shape_str(t.shape()) + ", expected 6x6 maps");
}

/// Brings one level's map to 6x6: level 1 uses the 6/4 then 3/2 cascade,
/// levels 2-4 a single 3/2 pool, level 5 passes through.
inline Tensor pool_level_to_common(const Tensor& features, std::size_t level, PoolTrace& trace) {
    Tensor out;
    if (level == 0) {
        trace.level1_mid = maxpool2d(features, 6, 4, &trace.level1_first);
        out = maxpool2d(trace.level1_mid, 3, 2, &trace.level1_second);
    } else if (level < kLevels - 1) {
        out = maxpool2d(features, 3, 2, &trace.argmax[level]);
    } else {
        out = features;
        out.zero_grad();
    }
    require_common_side(out, level);
    return out;
}

inline void pool_level_backward(Tensor& features, std::size_t level, PoolTrace& trace) {
    const Tensor& pooled = trace.pooled[level];
    if (level == 0) {
        maxpool2d_backward(trace.level1_mid, pooled, trace.level1_second);
        maxpool2d_backward(features, trace.level1_mid, trace.level1_first);
    } else if (level < kLevels - 1) {
        maxpool2d_backward(features, pooled, trace.argmax[level]);
    } else {
        auto df = features.grad();
        const auto dp = pooled.grad();
        for (std::size_t i = 0; i < df.size(); ++i) df[i] += dp[i];
    }
}

inline std::array<Tensor, kLevels> pool_to_common(const std::array<Tensor, kLevels>& features) {
    PoolTrace trace;
    std::array<Tensor, kLevels> out;
    for (std::size_t l = 0; l < kLevels; ++l) out[l] = pool_level_to_common(features[l], l, trace);
    return out;
}

// --------------------------------------------------------- attention

/// Two-layer MLP mapping a flattened 6x6 channel to a weight in (0.5, 1.5).
struct Can {
    Param fc1_weight{{kCommonArea, kCommonArea}, true};
    Param fc1_bias{{kCommonArea}};
    Param fc2_weight{{1, kCommonArea}, true};
    Param fc2_bias{{1}};

    /// fc1 random, fc2 zero: every weight starts at exactly 1.0 while
    /// gradients still reach fc2.
    void initialize(Rng& rng) {
        detail::fill_uniform(fc1_weight, std::sqrt(6.0 / static_cast<double>(kCommonArea)), rng);
        for (Param* p : {&fc1_bias, &fc2_weight, &fc2_bias}) std::fill(p->value.data().begin(), p->value.data().end(), 0.0);
    }

    void zero() {
        for (Param* p : {&fc1_weight, &fc1_bias, &fc2_weight, &fc2_bias})
            std::fill(p->value.data().begin(), p->value.data().end(), 0.0);
    }

    void collect(std::vector<Param*>& out) {
        for (Param* p : {&fc1_weight, &fc1_bias, &fc2_weight, &fc2_bias}) out.push_back(p);
    }
};

struct CanTrace {
    Tensor channel; // [6,6], doubles as the flattened MLP input
    Tensor hidden_pre, hidden, logit, omega, weighted;
};

inline void can_forward(const Can& can, CanTrace& t) {
    if (t.channel.size() != kCommonArea)
        throw DimensionError("can_weight: channel must be 6x6, got " + shape_str(t.channel.shape()));
    t.hidden_pre = fully_connected(t.channel, can.fc1_weight, can.fc1_bias);
    t.hidden = relu(t.hidden_pre);
    t.logit = fully_connected(t.hidden, can.fc2_weight, can.fc2_bias);
    t.omega = sigmoid_biased(t.logit);
    t.weighted = scale_channel(t.channel, t.omega);
}

inline void can_backward(Can& can, CanTrace& t) {
    scale_channel_backward(t.channel, t.omega, t.weighted);
    sigmoid_biased_backward(t.logit, t.omega);
    fully_connected_backward(t.hidden, can.fc2_weight, can.fc2_bias, t.logit);
    relu_backward(t.hidden_pre, t.hidden);
    fully_connected_backward(t.channel, can.fc1_weight, can.fc1_bias, t.hidden_pre);
}

/// Weight for a single 6x6 channel.
inline double can_weight(const Tensor& channel, const Can& can) {
    CanTrace t;
    t.channel = channel;
    can_forward(can, t);
    return t.omega[0];
}

/// Recorded channel weights: [stream][level][channel].
struct AttentionWeights {
    std::vector<std::array<std::vector<double>, kLevels>> streams;

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& s : streams)
            for (const auto& l : s) n += l.size();
        return n;
    }
};

struct LevelAttentionTrace {
    std::vector<CanTrace> channels;
    Tensor weighted; // [C,6,6]
};

/// Multiplies every channel of a pooled [C,6,6] level by its own CAN weight.
inline void attention_level_forward(const Tensor& pooled, const Can& can, LevelAttentionTrace& trace,
                                    std::vector<double>& omegas) {
    const std::size_t c = pooled.dim(0);
    trace.channels.resize(c);
    trace.weighted = Tensor(pooled.shape());
    omegas.resize(c);
    auto w = trace.weighted.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        CanTrace& t = trace.channels[ch];
        const auto begin = pooled.data().begin() + static_cast<std::ptrdiff_t>(ch * kCommonArea);
        t.channel = Tensor({kCommonSide, kCommonSide}, std::vector<double>(begin, begin + kCommonArea));
        can_forward(can, t);
        omegas[ch] = t.omega[0];
        std::copy(t.weighted.data().begin(), t.weighted.data().end(),
                  w.begin() + static_cast<std::ptrdiff_t>(ch * kCommonArea));
    }
}

inline void attention_level_backward(Tensor& pooled, Can& can, LevelAttentionTrace& trace) {
    const auto dw = trace.weighted.grad();
    auto dp = pooled.grad();
    for (std::size_t ch = 0; ch < trace.channels.size(); ++ch) {
        CanTrace& t = trace.channels[ch];
        std::copy(dw.begin() + static_cast<std::ptrdiff_t>(ch * kCommonArea),
                  dw.begin() + static_cast<std::ptrdiff_t>((ch + 1) * kCommonArea), t.weighted.grad().begin());
        can_backward(can, t);
        const auto dc = t.channel.grad();
        for (std::size_t i = 0; i < kCommonArea; ++i) dp[ch * kCommonArea + i] += dc[i];
    }
}

/// Applies the five CANs to pooled features of one stream.
inline std::array<Tensor, kLevels> apply_attention(const std::array<Tensor, kLevels>& pooled,
                                                   const std::array<Can, kLevels>& cans,
                                                   std::array<std::vector<double>, kLevels>& omegas) {
    std::array<Tensor, kLevels> out;
    for (std::size_t l = 0; l < kLevels; ++l) {
        LevelAttentionTrace trace;
        attention_level_forward(pooled[l], cans[l], trace, omegas[l]);
        out[l] = trace.weighted;
    }
    return out;
}

// ------------------------------------------------------------ head

struct HeadSampleTrace {
    Tensor fused, fusion;
    Tensor flat, fc1, fc1_act, fc1_drop, fc2, fc2_act, fc2_drop, out;
    std::vector<double> mask1, mask2;
};

struct HeadTrace {
    std::vector<HeadSampleTrace> samples;
    Tensor stacked, normalized, normalized_act;
    BatchNormCache bn_cache;
};

/// 1x1 conv fusion + batch norm + ReLU, then FC(U)-ReLU-dropout twice and a
/// linear FC(3).
class RegressionHead {
public:
    RegressionHead() = default;

    RegressionHead(std::size_t in_channels, const HeadConfig& config) : config_(config), in_channels_(in_channels) {
        config_.validate();
        const auto f = config_.fusion_kernels, u = config_.fc_units;
        fuse_weight_ = Param({f, in_channels, 1, 1}, true);
        fuse_bias_ = Param({f});
        bn_gamma_ = Param({f});
        bn_beta_ = Param({f});
        bn_state_ = BatchNormState(f);
        fc1_weight_ = Param({u, f * kCommonArea}, true);
        fc1_bias_ = Param({u});
        fc2_weight_ = Param({u, u}, true);
        fc2_bias_ = Param({u});
        out_weight_ = Param({3, u}, true);
        out_bias_ = Param({3});
        std::fill(bn_gamma_.value.data().begin(), bn_gamma_.value.data().end(), 1.0);
    }

    const HeadConfig& config() const noexcept { return config_; }
    std::size_t in_channels() const noexcept { return in_channels_; }

    /// Fan-in uniform weights; the output bias starts at the encoded box of
    /// a target that has not moved (centered, half the window side).
    void initialize(Rng& rng) {
        for (Param* p : {&fuse_weight_, &fc1_weight_, &fc2_weight_, &out_weight_})
            detail::fill_uniform(*p, 1.0 / std::sqrt(static_cast<double>(detail::fan_in(*p))), rng);
        out_bias_.value[0] = 0.5;
        out_bias_.value[1] = 0.5;
        out_bias_.value[2] = 0.5;
    }

    /// Regresses one encoded box per fused [C,6,6] sample; returns [B,3].
    Tensor forward(std::vector<Tensor> fused, Mode mode, Rng& rng, HeadTrace& trace) {
        const std::size_t b = fused.size();
        if (b == 0) throw DimensionError("fuse_and_regress: empty batch");
        const std::size_t f = config_.fusion_kernels;
        trace.samples.assign(b, {});
        trace.stacked = Tensor({b, f, kCommonSide, kCommonSide});
        for (std::size_t n = 0; n < b; ++n) {
            auto& s = trace.samples[n];
            s.fused = std::move(fused[n]);
            require_shape(s.fused, {in_channels_, kCommonSide, kCommonSide}, "fuse_and_regress");
            s.fusion = conv2d(s.fused, fuse_weight_, fuse_bias_, 1, 0);
            std::copy(s.fusion.data().begin(), s.fusion.data().end(),
                      trace.stacked.data().begin() + static_cast<std::ptrdiff_t>(n * s.fusion.size()));
        }
        trace.normalized = batchnorm2d(trace.stacked, bn_gamma_, bn_beta_, bn_state_, mode, trace.bn_cache);
        trace.normalized_act = relu(trace.normalized);
        Tensor out({b, 3});
        const std::size_t per = f * kCommonArea;
        for (std::size_t n = 0; n < b; ++n) {
            auto& s = trace.samples[n];
            const auto begin = trace.normalized_act.data().begin() + static_cast<std::ptrdiff_t>(n * per);
            s.flat = Tensor({per}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(per)));
            s.fc1 = fully_connected(s.flat, fc1_weight_, fc1_bias_);
            s.fc1_act = relu(s.fc1);
            s.fc1_drop = dropout(s.fc1_act, config_.dropout, mode, rng, s.mask1);
            s.fc2 = fully_connected(s.fc1_drop, fc2_weight_, fc2_bias_);
            s.fc2_act = relu(s.fc2);
            s.fc2_drop = dropout(s.fc2_act, config_.dropout, mode, rng, s.mask2);
            s.out = fully_connected(s.fc2_drop, out_weight_, out_bias_);
            for (std::size_t k = 0; k < 3; ++k) out[n * 3 + k] = s.out[k];
        }
        return out;
    }

    /// Consumes output.grad; leaves gradients in each sample's `fused`.
    void backward(const Tensor& output, HeadTrace& trace) {
        const std::size_t b = trace.samples.size();
        const std::size_t per = config_.fusion_kernels * kCommonArea;
        for (std::size_t n = 0; n < b; ++n) {
            auto& s = trace.samples[n];
            for (std::size_t k = 0; k < 3; ++k) s.out.grad()[k] = output.grad()[n * 3 + k];
            fully_connected_backward(s.fc2_drop, out_weight_, out_bias_, s.out);
            dropout_backward(s.fc2_act, s.fc2_drop, s.mask2);
            relu_backward(s.fc2, s.fc2_act);
            fully_connected_backward(s.fc1_drop, fc2_weight_, fc2_bias_, s.fc2);
            dropout_backward(s.fc1_act, s.fc1_drop, s.mask1);
            relu_backward(s.fc1, s.fc1_act);
            fully_connected_backward(s.flat, fc1_weight_, fc1_bias_, s.fc1);
            std::copy(s.flat.grad().begin(), s.flat.grad().end(),
                      trace.normalized_act.grad().begin() + static_cast<std::ptrdiff_t>(n * per));
        }
        relu_backward(trace.normalized, trace.normalized_act);
        batchnorm2d_backward(trace.stacked, bn_gamma_, bn_beta_, trace.normalized, trace.bn_cache);
        for (std::size_t n = 0; n < b; ++n) {
            auto& s = trace.samples[n];
            std::copy(trace.stacked.grad().begin() + static_cast<std::ptrdiff_t>(n * per),
                      trace.stacked.grad().begin() + static_cast<std::ptrdiff_t>((n + 1) * per),
                      s.fusion.grad().begin());
            conv2d_backward(s.fused, fuse_weight_, fuse_bias_, s.fusion, 1, 0);
        }
    }

    void collect(std::vector<Param*>& out) {
        for (Param* p : {&fuse_weight_, &fuse_bias_, &bn_gamma_, &bn_beta_, &fc1_weight_, &fc1_bias_, &fc2_weight_,
                         &fc2_bias_, &out_weight_, &out_bias_})
            out.push_back(p);
    }

    BatchNormState& bn_state() { return bn_state_; }
    const BatchNormState& bn_state() const { return bn_state_; }

    Param& fuse_weight() { return fuse_weight_; }

private:
    HeadConfig config_;
    std::size_t in_channels_ = 0;
    Param fuse_weight_, fuse_bias_, bn_gamma_, bn_beta_;
    BatchNormState bn_state_;
    Param fc1_weight_, fc1_bias_, fc2_weight_, fc2_bias_, out_weight_, out_bias_;
};

// ------------------------------------------------------------ model

/// Previous/current search patches for one prediction. Single-stream
/// variants ignore `prev`.
struct PatchPair {
    const SearchPatch* prev = nullptr;
    const SearchPatch* curr = nullptr;
};

struct StreamTrace {
    FenTrace fen;
    PoolTrace pool;
    std::array<LevelAttentionTrace, kLevels> attention;
};

struct ForwardState {
    std::vector<std::vector<StreamTrace>> streams; // [sample][stream]
    HeadTrace head;
    Tensor output; // [B,3]
    std::vector<AttentionWeights> weights;
};

class TrackerModel {
public:
    TrackerModel() = default;

    TrackerModel(Variant variant, const FenConfig& fen, const HeadConfig& head, std::uint64_t seed)
        : variant_(variant), seed_(seed), fen_(fen), head_(fused_channels(variant, fen), head) {
        Rng rng(derive_seed(seed, SeedPurpose::init));
        fen_.initialize(rng);
        for (auto& can : cans_) can.initialize(rng);
        head_.initialize(rng);
    }

    static std::size_t fused_channels(Variant variant, const FenConfig& fen) {
        if (variant == Variant::baseline_goturn) return 2 * fen.channels[kLevels - 1];
        std::size_t per_stream = 0;
        for (auto c : fen.channels) per_stream += c;
        return per_stream * stream_count(variant);
    }

    Variant variant() const noexcept { return variant_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const FenConfig& fen_config() const noexcept { return fen_.config(); }
    const HeadConfig& head_config() const noexcept { return head_.config(); }
    int input_size() const noexcept { return fen_.config().input_size; }
    const MeanRgb& mean_rgb() const noexcept { return mean_rgb_; }
    void set_mean_rgb(const MeanRgb& mean) { mean_rgb_ = mean; }

    FeatureExtractor& fen() { return fen_; }
    const FeatureExtractor& fen() const { return fen_; }
    std::array<Can, kLevels>& cans() { return cans_; }
    RegressionHead& head() { return head_; }
    const RegressionHead& head() const { return head_; }

    /// Batched forward. Returns the [B,3] encoded boxes (also kept in state).
    const Tensor& forward(std::span<const PatchPair> batch, Mode mode, Rng& dropout_rng, ForwardState& state) {
        const std::size_t b = batch.size();
        const std::size_t n_streams = stream_count(variant_);
        state.streams.assign(b, std::vector<StreamTrace>(n_streams));
        state.weights.assign(b, {});
        std::vector<Tensor> fused(b);
        for (std::size_t n = 0; n < b; ++n) {
            const PatchPair& pair = batch[n];
            if (!pair.curr || (n_streams == 2 && !pair.prev))
                throw ConfigError(std::string("model_forward: variant ") + std::string(variant_name(variant_)) +
                                  " needs " + (n_streams == 2 ? "previous and current patches" : "a current patch"));
            const SearchPatch* inputs[2] = {n_streams == 2 ? pair.prev : pair.curr, pair.curr};
            std::vector<const Tensor*> parts;
            if (uses_attention(variant_)) state.weights[n].streams.resize(n_streams);
            for (std::size_t s = 0; s < n_streams; ++s) {
                StreamTrace& st = state.streams[n][s];
                fen_.forward(*inputs[s], st.fen);
                if (variant_ == Variant::baseline_goturn) {
                    const std::size_t l = kLevels - 1;
                    st.pool.pooled[l] = pool_level_to_common(st.fen.features[l], l, st.pool);
                    parts.push_back(&st.pool.pooled[l]);
                    continue;
                }
                for (std::size_t l = 0; l < kLevels; ++l) {
                    st.pool.pooled[l] = pool_level_to_common(st.fen.features[l], l, st.pool);
                    if (uses_attention(variant_)) {
                        attention_level_forward(st.pool.pooled[l], cans_[l], st.attention[l],
                                                state.weights[n].streams[s][l]);
                        parts.push_back(&st.attention[l].weighted);
                    } else {
                        parts.push_back(&st.pool.pooled[l]);
                    }
                }
            }
            fused[n] = concat_channels(parts);
        }
        state.output = head_.forward(std::move(fused), mode, dropout_rng, state.head);
        return state.output;
    }

    /// Backpropagates state.output.grad through the head, attention and
    /// (when not frozen) the extractor.
    void backward(ForwardState& state) {
        head_.backward(state.output, state.head);
        for (std::size_t n = 0; n < state.streams.size(); ++n) {
            Tensor& fused = state.head.samples[n].fused;
            std::vector<Tensor*> parts;
            for (auto& st : state.streams[n]) {
                if (variant_ == Variant::baseline_goturn) {
                    parts.push_back(&st.pool.pooled[kLevels - 1]);
                    continue;
                }
                for (std::size_t l = 0; l < kLevels; ++l)
                    parts.push_back(uses_attention(variant_) ? &st.attention[l].weighted : &st.pool.pooled[l]);
            }
            concat_channels_backward(parts, fused);
            for (auto& st : state.streams[n]) {
                for (std::size_t l = 0; l < kLevels; ++l) {
                    if (variant_ == Variant::baseline_goturn && l != kLevels - 1) continue;
                    if (uses_attention(variant_)) attention_level_backward(st.pool.pooled[l], cans_[l], st.attention[l]);
                    if (!fen_.config().frozen) pool_level_backward(st.fen.features[l], l, st.pool);
                }
                fen_.backward(st.fen);
            }
        }
    }

    /// Single eval-mode prediction of the encoded box.
    std::array<double, 3> predict(const PatchPair& pair, AttentionWeights* weights = nullptr) {
        Rng unused(0);
        ForwardState state;
        forward(std::span<const PatchPair>(&pair, 1), Mode::eval, unused, state);
        if (weights) *weights = std::move(state.weights.front());
        return {state.output[0], state.output[1], state.output[2]};
    }

    /// Every parameter, in a fixed order (used for serialization).
    std::vector<Param*> all_params() {
        std::vector<Param*> out;
        fen_.collect(out);
        for (auto& can : cans_) can.collect(out);
        head_.collect(out);
        return out;
    }

    /// Parameters the optimizer updates for this variant.
    std::vector<Param*> trainable_params() {
        std::vector<Param*> out;
        if (!fen_.config().frozen) fen_.collect(out);
        if (uses_attention(variant_))
            for (auto& can : cans_) can.collect(out);
        head_.collect(out);
        return out;
    }

    void zero_grad() {
        for (Param* p : all_params()) p->value.zero_grad();
    }

private:
    Variant variant_ = Variant::aftn;
    std::uint64_t seed_ = 0;
    MeanRgb mean_rgb_{0.0, 0.0, 0.0};
    FeatureExtractor fen_;
    std::array<Can, kLevels> cans_;
    RegressionHead head_;
};

} // namespace aftn
