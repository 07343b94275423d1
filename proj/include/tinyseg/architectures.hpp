#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tinyseg/batchnorm.hpp"
#include "tinyseg/conv.hpp"
#include "tinyseg/ops.hpp"
#include "tinyseg/params.hpp"
#include "tinyseg/pool.hpp"
#include "tinyseg/rng.hpp"
#include "tinyseg/tape.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

enum class Family { kFcn, kSegnet, kUnet, kResunet };

inline std::string family_name(Family f) {
    switch (f) {
        case Family::kFcn: return "fcn";
        case Family::kSegnet: return "segnet";
        case Family::kUnet: return "unet";
        case Family::kResunet: return "resunet";
    }
    return "unknown";
}

inline Family family_from_name(const std::string& name) {
    if (name == "fcn") return Family::kFcn;
    if (name == "segnet") return Family::kSegnet;
    if (name == "unet") return Family::kUnet;
    if (name == "resunet") return Family::kResunet;
    throw std::invalid_argument("unknown architecture family: " + name);
}

/// Declarative model description. `stride` is meaningful for the FCN
/// family only (the coarsest prediction level folded into the output) and
/// is stored as 0 otherwise. `depth` counts pooling stages; the FCN
/// default is 5 (down to /32), the encoder-decoder families default to 4.
struct ArchitectureSpec {
    Family family = Family::kUnet;
    int stride = 0;
    int depth = 4;
    int base_filters = 64;
    int in_channels = 3;
    int num_classes = 5;
    int input_size = 256;

    bool operator==(const ArchitectureSpec&) const = default;
};

inline ArchitectureSpec default_spec(Family family) {
    ArchitectureSpec spec;
    spec.family = family;
    if (family == Family::kFcn) {
        spec.depth = 5;
        spec.stride = 32;
    }
    return spec;
}

inline void validate_spec(const ArchitectureSpec& spec) {
    require(spec.depth >= 1, "spec: depth must be >= 1");
    require(spec.base_filters >= 1, "spec: base_filters must be >= 1");
    require(spec.in_channels >= 1, "spec: in_channels must be >= 1");
    require(spec.num_classes >= 2, "spec: num_classes must be >= 2");
    require(spec.input_size >= 1, "spec: input_size must be >= 1");
    require(spec.depth < 31, "spec: depth out of range");
    const int factor = 1 << spec.depth;
    require(spec.input_size % factor == 0,
            "spec: input_size " + std::to_string(spec.input_size) + " is not divisible by 2^depth = " +
                std::to_string(factor));
    if (spec.family == Family::kFcn) {
        const int s = spec.stride;
        require(s >= 2 && (s & (s - 1)) == 0 && s <= factor,
                "spec: fcn stride must be a power of two in [2, 2^depth], got " +
                    std::to_string(s));
    }
}

/// Tracks how close a forward pass came to the non-smooth points of relu
/// and max-pool; gradient checking rejects sample points whose margins are
/// too small.
struct KinkMonitor {
    double min_relu_gap = std::numeric_limits<double>::infinity();
    double min_pool_gap = std::numeric_limits<double>::infinity();

    void observe_relu(const Tensor& pre) {
        for (double v : pre.data()) {
            min_relu_gap = std::min(min_relu_gap, std::abs(v));
        }
    }

    void observe_pool(const Tensor& in) {
        const Shape s = in.shape();
        const auto xv = in.data();
        for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t c = 0; c < s.c; ++c) {
                const double* plane = xv.data() + (n * s.c + c) * s.h * s.w;
                for (std::int64_t oh = 0; oh + 1 < s.h; oh += 2) {
                    for (std::int64_t ow = 0; ow + 1 < s.w; ow += 2) {
                        const double vals[4] = {plane[oh * s.w + ow], plane[oh * s.w + ow + 1],
                                                plane[(oh + 1) * s.w + ow],
                                                plane[(oh + 1) * s.w + ow + 1]};
                        double best = vals[0];
                        double second = -std::numeric_limits<double>::infinity();
                        for (int t = 1; t < 4; ++t) {
                            if (vals[t] > best) {
                                second = best;
                                best = vals[t];
                            } else {
                                second = std::max(second, vals[t]);
                            }
                        }
                        // Pools sit behind relu, so ties among clipped
                        // zeros carry no gradient and stay stable as long
                        // as the relu margins hold; only a positive
                        // maximum can flip its argmax under perturbation.
                        if (best > 0.0) {
                            min_pool_gap = std::min(min_pool_gap, best - second);
                        }
                    }
                }
            }
        }
    }
};

/// Per-forward-pass context. Binds parameters to the tape on first use so
/// that gradients can be read back by name after `backward`.
struct ForwardCtx {
    ParamStore* params = nullptr;
    Tape* tape = nullptr;
    bool training = false;
    KinkMonitor* monitor = nullptr;
    std::vector<std::string>* trace = nullptr;
    std::unordered_map<std::string, Tensor> bound;

    Tensor param(const std::string& name) {
        const ParamEntry& e = params->entry(name);
        if (tape == nullptr || !e.trainable) {
            return e.value;
        }
        auto it = bound.find(name);
        if (it == bound.end()) {
            it = bound.emplace(name, tape->watch(e.value.with_grad())).first;
        }
        return it->second;
    }

    void event(std::string text) {
        if (trace != nullptr) {
            trace->push_back(std::move(text));
        }
    }
};

using LayerGraph = std::function<Tensor(const Tensor&, ForwardCtx&)>;

namespace detail {

inline Tensor he_normal_weight(std::int64_t out_c, std::int64_t in_c, std::int64_t k, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
    std::vector<double> values(static_cast<std::size_t>(out_c * in_c * k * k));
    for (double& v : values) {
        v = rng.normal(0.0, stddev);
    }
    return Tensor({out_c, in_c, k, k}, std::move(values));
}

/// Transposed-conv weight (from_c, to_c, 2, 2): a nearest-neighbour
/// upsampling map (identity across channels when possible, channel mean
/// otherwise) plus small symmetry-breaking noise.
inline Tensor deconv_weight(std::int64_t from_c, std::int64_t to_c, Rng& rng) {
    const std::int64_t k = 2;
    const double base = from_c == to_c ? 1.0 : 1.0 / static_cast<double>(from_c);
    const double noise = 0.1 * std::sqrt(2.0 / static_cast<double>(from_c * k * k));
    std::vector<double> values(static_cast<std::size_t>(from_c * to_c * k * k));
    std::size_t i = 0;
    for (std::int64_t a = 0; a < from_c; ++a) {
        for (std::int64_t b = 0; b < to_c; ++b) {
            const double v = (from_c == to_c ? (a == b ? base : 0.0) : base);
            for (std::int64_t t = 0; t < k * k; ++t, ++i) {
                values[i] = v + rng.normal(0.0, noise);
            }
        }
    }
    return Tensor({from_c, to_c, k, k}, std::move(values));
}

inline void add_conv(ParamStore& store, const std::string& prefix, std::int64_t in_c,
                     std::int64_t out_c, std::int64_t k, Rng& rng) {
    store.add(prefix + ".weight", he_normal_weight(out_c, in_c, k, rng));
    store.add(prefix + ".bias", Tensor::zeros({1, out_c, 1, 1}));
}

inline void add_deconv(ParamStore& store, const std::string& prefix, std::int64_t from_c,
                       std::int64_t to_c, Rng& rng) {
    store.add(prefix + ".weight", deconv_weight(from_c, to_c, rng));
    store.add(prefix + ".bias", Tensor::zeros({1, to_c, 1, 1}));
}

inline void add_batch_norm(ParamStore& store, const std::string& prefix, std::int64_t c) {
    store.add(prefix + ".gamma", Tensor::full({1, c, 1, 1}, 1.0));
    store.add(prefix + ".beta", Tensor::zeros({1, c, 1, 1}));
    store.add(prefix + ".running_mean", Tensor::zeros({1, c, 1, 1}), /*trainable=*/false);
    store.add(prefix + ".running_var", Tensor::full({1, c, 1, 1}, 1.0), /*trainable=*/false);
}

inline Tensor conv_layer(ForwardCtx& ctx, const Tensor& x, const std::string& prefix,
                         int stride = 1, Padding padding = Padding::kSame) {
    return conv2d(x, ctx.param(prefix + ".weight"), ctx.param(prefix + ".bias"), stride, padding,
                  ctx.tape);
}

inline Tensor deconv_layer(ForwardCtx& ctx, const Tensor& x, const std::string& prefix) {
    return conv2d_transpose(x, ctx.param(prefix + ".weight"), ctx.param(prefix + ".bias"), 2,
                            ctx.tape);
}

inline Tensor relu_layer(ForwardCtx& ctx, const Tensor& x) {
    if (ctx.monitor != nullptr) {
        ctx.monitor->observe_relu(x);
    }
    return relu(x, ctx.tape);
}

inline std::pair<Tensor, PoolIndices> pool_layer(ForwardCtx& ctx, const Tensor& x,
                                                 const std::string& tag) {
    if (ctx.monitor != nullptr) {
        ctx.monitor->observe_pool(x);
    }
    auto [pooled, indices] = max_pool2d(x, ctx.tape);
    indices.tag = tag;
    ctx.event(tag + ".pool");
    return {pooled, std::move(indices)};
}

inline Tensor batch_norm_layer(ForwardCtx& ctx, const Tensor& x, const std::string& prefix) {
    BatchNormState state;
    state.gamma = ctx.param(prefix + ".gamma");
    state.beta = ctx.param(prefix + ".beta");
    state.running_mean = ctx.params->get(prefix + ".running_mean");
    state.running_var = ctx.params->get(prefix + ".running_var");
    state.mode = ctx.training ? BatchNormState::Mode::kTrain : BatchNormState::Mode::kEval;
    BatchNormOutput out = batch_norm2d(x, state, ctx.tape);
    if (ctx.training) {
        ctx.params->set(prefix + ".running_mean", out.running_mean);
        ctx.params->set(prefix + ".running_var", out.running_var);
    }
    return out.value;
}

}  // namespace detail

/// Two same-padded 3x3 convolutions, each followed by ReLU.
inline LayerGraph build_conv_block(ParamStore& store, const std::string& prefix,
                                   std::int64_t in_c, std::int64_t out_c, Rng& rng) {
    require(in_c >= 1 && out_c >= 1, "conv block: channel counts must be >= 1");
    detail::add_conv(store, prefix + ".conv1", in_c, out_c, 3, rng);
    detail::add_conv(store, prefix + ".conv2", out_c, out_c, 3, rng);
    return [prefix](const Tensor& x, ForwardCtx& ctx) {
        Tensor y = detail::relu_layer(ctx, detail::conv_layer(ctx, x, prefix + ".conv1"));
        return detail::relu_layer(ctx, detail::conv_layer(ctx, y, prefix + ".conv2"));
    };
}

/// Identity-mapping residual block. A 1x1 pre-convolution normalizes the
/// channel count, a first 3x3 convolution produces y1, and the residual
/// path BN -> ReLU -> 3x3 conv -> BN -> ReLU -> 3x3 conv of y1 is added
/// back onto y1.
inline LayerGraph build_residual_block(ParamStore& store, const std::string& prefix,
                                       std::int64_t in_c, std::int64_t out_c, Rng& rng) {
    require(in_c >= 1 && out_c >= 1, "residual block: channel counts must be >= 1");
    detail::add_conv(store, prefix + ".pre", in_c, out_c, 1, rng);
    detail::add_conv(store, prefix + ".conv1", out_c, out_c, 3, rng);
    detail::add_batch_norm(store, prefix + ".bn1", out_c);
    detail::add_conv(store, prefix + ".conv2", out_c, out_c, 3, rng);
    detail::add_batch_norm(store, prefix + ".bn2", out_c);
    detail::add_conv(store, prefix + ".conv3", out_c, out_c, 3, rng);
    return [prefix](const Tensor& x, ForwardCtx& ctx) {
        const Tensor pre = detail::conv_layer(ctx, x, prefix + ".pre");
        const Tensor y1 = detail::conv_layer(ctx, pre, prefix + ".conv1");
        Tensor r = detail::batch_norm_layer(ctx, y1, prefix + ".bn1");
        r = detail::relu_layer(ctx, r);
        r = detail::conv_layer(ctx, r, prefix + ".conv2");
        r = detail::batch_norm_layer(ctx, r, prefix + ".bn2");
        r = detail::relu_layer(ctx, r);
        r = detail::conv_layer(ctx, r, prefix + ".conv3");
        return add(y1, r, ctx.tape);
    };
}

/// A built network: its spec, parameter store, and executable layer graph.
struct Model {
    ArchitectureSpec spec;
    ParamStore params;
    LayerGraph graph;

    /// Runs the graph and returns per-pixel probability maps
    /// (n, num_classes, h, w). Input spatial dims may be any multiple of
    /// 2^depth.
    Tensor forward(const Tensor& batch, ForwardCtx& ctx) {
        const Shape s = batch.shape();
        require(s.c == spec.in_channels,
                "forward: batch has " + std::to_string(s.c) + " channels, model expects " +
                    std::to_string(spec.in_channels));
        const std::int64_t factor = std::int64_t(1) << spec.depth;
        require(s.h % factor == 0 && s.w % factor == 0 && s.h > 0 && s.w > 0,
                "forward: spatial dims " + s.str() + " must be positive multiples of " +
                    std::to_string(factor));
        ctx.params = &params;
        return graph(batch, ctx);
    }

    Tensor forward(const Tensor& batch) {
        ForwardCtx ctx;
        return forward(batch, ctx);
    }
};

namespace detail {

/// Shared encoder-decoder assembly for U-Net and its residual variant.
inline Model build_unet_like(const ArchitectureSpec& spec, Rng& rng, bool residual) {
    Model model;
    model.spec = spec;
    const int depth = spec.depth;
    std::vector<std::int64_t> filters(static_cast<std::size_t>(depth));
    for (int i = 0; i < depth; ++i) {
        filters[static_cast<std::size_t>(i)] = std::int64_t(spec.base_filters) << i;
    }
    const std::int64_t bottleneck_filters = std::int64_t(spec.base_filters) << depth;

    auto make_block = [&](const std::string& prefix, std::int64_t in_c, std::int64_t out_c) {
        return residual ? build_residual_block(model.params, prefix, in_c, out_c, rng)
                        : build_conv_block(model.params, prefix, in_c, out_c, rng);
    };

    std::vector<LayerGraph> enc_blocks;
    for (int i = 1; i <= depth; ++i) {
        const std::int64_t in_c = i == 1 ? spec.in_channels : filters[static_cast<std::size_t>(i - 2)];
        enc_blocks.push_back(
            make_block("enc" + std::to_string(i), in_c, filters[static_cast<std::size_t>(i - 1)]));
    }
    LayerGraph bottleneck =
        make_block("bottleneck", filters[static_cast<std::size_t>(depth - 1)], bottleneck_filters);

    std::vector<LayerGraph> dec_blocks(static_cast<std::size_t>(depth));
    for (int i = depth; i >= 1; --i) {
        const std::int64_t f = filters[static_cast<std::size_t>(i - 1)];
        detail::add_deconv(model.params, "dec" + std::to_string(i) + ".up", f * 2, f, rng);
        dec_blocks[static_cast<std::size_t>(i - 1)] =
            make_block("dec" + std::to_string(i) + ".block", f * 2, f);
    }
    detail::add_conv(model.params, "head", filters[0], spec.num_classes, 1, rng);

    model.graph = [depth, enc_blocks, bottleneck, dec_blocks](const Tensor& x, ForwardCtx& ctx) {
        std::vector<Tensor> skips;
        skips.reserve(static_cast<std::size_t>(depth));
        Tensor cur = x;
        for (int i = 1; i <= depth; ++i) {
            cur = enc_blocks[static_cast<std::size_t>(i - 1)](cur, ctx);
            skips.push_back(cur);
            cur = pool_layer(ctx, cur, "enc" + std::to_string(i)).first;
        }
        cur = bottleneck(cur, ctx);
        for (int i = depth; i >= 1; --i) {
            cur = deconv_layer(ctx, cur, "dec" + std::to_string(i) + ".up");
            cur = concat_channels(skips[static_cast<std::size_t>(i - 1)], cur, ctx.tape);
            cur = dec_blocks[static_cast<std::size_t>(i - 1)](cur, ctx);
        }
        const Tensor logits = conv_layer(ctx, cur, "head");
        return softmax_channels(logits, ctx.tape);
    };
    return model;
}

}  // namespace detail

/// U-Net: `depth` conv blocks with pooling between (filters base,
/// base*2, ...), a bottleneck block, and a mirrored decoder of 2x
/// deconvolutions, skip concatenations and conv blocks, closed by a 1x1
/// classification head and channel softmax.
inline Model build_unet(const ArchitectureSpec& spec, Rng& rng) {
    require(spec.family == Family::kUnet, "build_unet: spec family must be unet");
    validate_spec(spec);
    return detail::build_unet_like(spec, rng, /*residual=*/false);
}

/// U-Net topology with every conv block replaced by the identity-mapping
/// residual block.
inline Model build_resunet(const ArchitectureSpec& spec, Rng& rng) {
    require(spec.family == Family::kResunet, "build_resunet: spec family must be resunet");
    validate_spec(spec);
    return detail::build_unet_like(spec, rng, /*residual=*/true);
}

/// SegNet: the decoder upsamples with the encoder's max-pool indices
/// (non-linear reconstruction) instead of learned deconvolutions, and has
/// no concat skips. Decoder block widths mirror the encoder.
inline Model build_segnet(const ArchitectureSpec& spec, Rng& rng) {
    require(spec.family == Family::kSegnet, "build_segnet: spec family must be segnet");
    validate_spec(spec);
    Model model;
    model.spec = spec;
    const int depth = spec.depth;
    std::vector<std::int64_t> filters(static_cast<std::size_t>(depth));
    for (int i = 0; i < depth; ++i) {
        filters[static_cast<std::size_t>(i)] = std::int64_t(spec.base_filters) << i;
    }
    std::vector<LayerGraph> enc_blocks;
    for (int i = 1; i <= depth; ++i) {
        const std::int64_t in_c = i == 1 ? spec.in_channels : filters[static_cast<std::size_t>(i - 2)];
        enc_blocks.push_back(build_conv_block(model.params, "enc" + std::to_string(i), in_c,
                                              filters[static_cast<std::size_t>(i - 1)], rng));
    }
    std::vector<LayerGraph> dec_blocks(static_cast<std::size_t>(depth));
    for (int i = depth; i >= 1; --i) {
        const std::int64_t in_c = filters[static_cast<std::size_t>(i - 1)];
        const std::int64_t out_c = i > 1 ? filters[static_cast<std::size_t>(i - 2)] : filters[0];
        dec_blocks[static_cast<std::size_t>(i - 1)] =
            build_conv_block(model.params, "dec" + std::to_string(i) + ".block", in_c, out_c, rng);
    }
    detail::add_conv(model.params, "head", filters[0], spec.num_classes, 1, rng);

    model.graph = [depth, enc_blocks, dec_blocks](const Tensor& x, ForwardCtx& ctx) {
        std::vector<PoolIndices> indices(static_cast<std::size_t>(depth));
        Tensor cur = x;
        for (int i = 1; i <= depth; ++i) {
            cur = enc_blocks[static_cast<std::size_t>(i - 1)](cur, ctx);
            auto pooled = detail::pool_layer(ctx, cur, "enc" + std::to_string(i));
            cur = pooled.first;
            indices[static_cast<std::size_t>(i - 1)] = std::move(pooled.second);
        }
        for (int i = depth; i >= 1; --i) {
            const PoolIndices& idx = indices[static_cast<std::size_t>(i - 1)];
            ctx.event("dec" + std::to_string(i) + ".unpool src=" + idx.tag);
            cur = max_unpool2d(cur, idx, idx.shape.h * 2, idx.shape.w * 2, ctx.tape);
            cur = dec_blocks[static_cast<std::size_t>(i - 1)](cur, ctx);
        }
        const Tensor logits = detail::conv_layer(ctx, cur, "head");
        return softmax_channels(logits, ctx.tape);
    };
    return model;
}

/// FCN: a VGG-style encoder of `depth` conv-block + pool stages (filters
/// capped at base*8), 1x1 score heads at the pooling levels from 2^depth
/// down to `stride`, 2x learned upsampling between fused scores, and a
/// final chain of 2x upsamplings back to input resolution.
inline Model build_fcn(const ArchitectureSpec& spec, Rng& rng) {
    require(spec.family == Family::kFcn, "build_fcn: spec family must be fcn");
    validate_spec(spec);
    Model model;
    model.spec = spec;
    const int depth = spec.depth;
    int fuse_level = 0;
    while ((1 << fuse_level) < spec.stride) {
        ++fuse_level;
    }

    std::vector<std::int64_t> filters(static_cast<std::size_t>(depth));
    for (int i = 0; i < depth; ++i) {
        filters[static_cast<std::size_t>(i)] = std::int64_t(spec.base_filters) << std::min(i, 3);
    }
    std::vector<LayerGraph> stages;
    for (int i = 1; i <= depth; ++i) {
        const std::int64_t in_c = i == 1 ? spec.in_channels : filters[static_cast<std::size_t>(i - 2)];
        stages.push_back(build_conv_block(model.params, "stage" + std::to_string(i), in_c,
                                          filters[static_cast<std::size_t>(i - 1)], rng));
    }
    for (int j = depth; j >= fuse_level; --j) {
        detail::add_conv(model.params, "score" + std::to_string(j),
                         filters[static_cast<std::size_t>(j - 1)], spec.num_classes, 1, rng);
        if (j < depth) {
            detail::add_deconv(model.params, "fuse" + std::to_string(j) + ".up", spec.num_classes,
                               spec.num_classes, rng);
        }
    }
    for (int t = 1; t <= fuse_level; ++t) {
        detail::add_deconv(model.params, "up" + std::to_string(t), spec.num_classes,
                           spec.num_classes, rng);
    }

    model.graph = [depth, fuse_level, stages](const Tensor& x, ForwardCtx& ctx) {
        std::vector<Tensor> level_out(static_cast<std::size_t>(depth));
        Tensor cur = x;
        for (int i = 1; i <= depth; ++i) {
            cur = stages[static_cast<std::size_t>(i - 1)](cur, ctx);
            cur = detail::pool_layer(ctx, cur, "stage" + std::to_string(i)).first;
            level_out[static_cast<std::size_t>(i - 1)] = cur;
        }
        Tensor score = detail::conv_layer(ctx, level_out[static_cast<std::size_t>(depth - 1)],
                                          "score" + std::to_string(depth));
        for (int j = depth - 1; j >= fuse_level; --j) {
            score = detail::deconv_layer(ctx, score, "fuse" + std::to_string(j) + ".up");
            const Tensor shallow = detail::conv_layer(
                ctx, level_out[static_cast<std::size_t>(j - 1)], "score" + std::to_string(j));
            ctx.event("fuse level=" + std::to_string(j));
            score = add(score, shallow, ctx.tape);
        }
        for (int t = 1; t <= fuse_level; ++t) {
            score = detail::deconv_layer(ctx, score, "up" + std::to_string(t));
        }
        return softmax_channels(score, ctx.tape);
    };
    return model;
}

inline Model build_model(const ArchitectureSpec& spec, Rng& rng) {
    switch (spec.family) {
        case Family::kFcn: return build_fcn(spec, rng);
        case Family::kSegnet: return build_segnet(spec, rng);
        case Family::kUnet: return build_unet(spec, rng);
        case Family::kResunet: return build_resunet(spec, rng);
    }
    throw std::invalid_argument("build_model: unknown family");
}

inline Model build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0));
    return build_model(spec, rng);
}

}  // namespace tinyseg
