#pragma once

// Four-stage classifier: stem embedding, three merging downsamplers, stacked
// blocks, pooled linear head, and the analytic parameter/MAC accounting that
// backs the `params` command.

#include <array>
#include <cassert>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mmic/blocks.hpp"

namespace mmic {

struct ModelConfig {
    std::string variant = "tiny";
    int in_channels = 3;
    std::array<int, 4> stage_channels{32, 64, 128, 256};
    std::array<int, 4> stage_depths{2, 2, 4, 2};
    int lambda = 2;
    double r = 0.25;
    int ssm_state = 8;
    int eca_kernel = 3;
    int num_classes = 2;
    int input_size = 32;
    // fusion gate activations; swappable for the activation ablation
    Act local_gate_act = Act::relu;
    Act global_gate_act = Act::gelu;
    // ablation switches, applied to every block
    bool use_laef = true;
    bool use_fmiam = true;
    bool parallel_vssm = true;
};

inline ModelConfig model_variant(const std::string& name) {
    ModelConfig cfg;
    cfg.variant = name;
    if (name == "tiny") {
        cfg.stage_channels = {32, 64, 128, 256};
        cfg.stage_depths = {2, 2, 4, 2};
    } else if (name == "small") {
        cfg.stage_channels = {40, 80, 160, 320};
        cfg.stage_depths = {2, 2, 4, 2};
    } else if (name == "base") {
        cfg.stage_channels = {48, 96, 192, 384};
        cfg.stage_depths = {2, 2, 8, 2};
    } else {
        throw ConfigError("model: unknown variant '" + name + "' (tiny, small, base)");
    }
    return cfg;
}

inline BlockCfg stage_block_cfg(const ModelConfig& cfg, int stage) {
    BlockCfg b;
    b.channels = cfg.stage_channels[static_cast<size_t>(stage)];
    b.lambda = cfg.lambda;
    b.ssm_state = cfg.ssm_state;
    b.r = cfg.r;
    b.eca_kernel = cfg.eca_kernel;
    b.local_gate_act = cfg.local_gate_act;
    b.global_gate_act = cfg.global_gate_act;
    b.use_laef = cfg.use_laef;
    b.use_fmiam = cfg.use_fmiam;
    b.parallel_vssm = cfg.parallel_vssm;
    return b;
}

inline void validate_model_cfg(const ModelConfig& cfg) {
    if (cfg.in_channels < 1)
        throw ConfigError("model: in_channels must be >= 1, got " +
                          std::to_string(cfg.in_channels));
    if (cfg.num_classes < 2)
        throw ConfigError("model: num_classes must be >= 2, got " +
                          std::to_string(cfg.num_classes));
    if (cfg.input_size < 32 || cfg.input_size % 32 != 0)
        throw ConfigError("model: input_size must be a positive multiple of 32, got " +
                          std::to_string(cfg.input_size));
    for (int s = 0; s < 4; ++s) {
        if (cfg.stage_depths[s] < 1)
            throw ConfigError("model: stage_depths[" + std::to_string(s) + "] must be >= 1");
        if (s > 0 && cfg.stage_channels[s] != 2 * cfg.stage_channels[s - 1])
            throw ConfigError("model: stage_channels must double between stages, got " +
                              std::to_string(cfg.stage_channels[s - 1]) + " -> " +
                              std::to_string(cfg.stage_channels[s]));
        validate_block_cfg(stage_block_cfg(cfg, s));  // width, split, kernel checks
    }
}

// 4x4 stride-4 patchify convolution plus layer norm.
template <typename T, typename Prov>
Tensor<T> stem_embed(Prov& P, const std::string& pfx, Tensor<T> x, int out_channels) {
    const Shape& xs = x.shape();
    if (xs.size() != 3)
        throw ShapeError("stem_embed: input must be HxWxC, got " + shape_str(xs));
    if (xs[0] % 4 != 0 || xs[1] % 4 != 0)
        throw ShapeError("stem_embed: spatial extents must be divisible by 4, got " +
                         shape_str(xs));
    const int cin = xs[2];
    auto w = P(pfx + ".conv.w", {out_channels, 4, 4, cin}, init::kaiming<T>(16 * cin));
    auto b = P(pfx + ".conv.b", {out_channels}, init::zeros<T>());
    auto y = dense_conv2d(x, w, b, 4, 0);
    auto gamma = P(pfx + ".ln.gamma", {out_channels}, init::ones<T>());
    auto beta = P(pfx + ".ln.beta", {out_channels}, init::zeros<T>());
    return layer_norm(y, gamma, beta);
}

// 2x2 stride-2 convolution doubling the width, plus layer norm.
template <typename T, typename Prov>
Tensor<T> patch_merge(Prov& P, const std::string& pfx, Tensor<T> x) {
    const Shape& xs = x.shape();
    if (xs.size() != 3)
        throw ShapeError("patch_merge: input must be HxWxC, got " + shape_str(xs));
    if (xs[0] % 2 != 0 || xs[1] % 2 != 0)
        throw ShapeError("patch_merge: spatial extents must be even, got " + shape_str(xs));
    const int cin = xs[2], cout = 2 * cin;
    auto w = P(pfx + ".conv.w", {cout, 2, 2, cin}, init::kaiming<T>(4 * cin));
    auto b = P(pfx + ".conv.b", {cout}, init::zeros<T>());
    auto y = dense_conv2d(x, w, b, 2, 0);
    auto gamma = P(pfx + ".ln.gamma", {cout}, init::ones<T>());
    auto beta = P(pfx + ".ln.beta", {cout}, init::zeros<T>());
    return layer_norm(y, gamma, beta);
}

// stem -> [stage 0] -> merge -> [stage 1] -> ... -> pool -> linear logits.
template <typename T, typename Prov>
Tensor<T> backbone_forward(Prov& P, const ModelConfig& cfg, Tensor<T> x) {
    validate_model_cfg(cfg);
    const Shape want{cfg.input_size, cfg.input_size, cfg.in_channels};
    if (x.shape() != want)
        throw ShapeError("backbone: input " + shape_str(x.shape()) + " does not match " +
                         shape_str(want));
    Tensor<T> h = stem_embed(P, "stem", x, cfg.stage_channels[0]);
    for (int s = 0; s < 4; ++s) {
        if (s > 0) h = patch_merge(P, "merge" + std::to_string(s), h);
        const BlockCfg bc = stage_block_cfg(cfg, s);
        for (int i = 0; i < cfg.stage_depths[s]; ++i) {
            const Shape before = h.shape();
            h = mambamic_block_forward(P, "s" + std::to_string(s) + ".b" + std::to_string(i),
                                       h, bc);
            assert(h.shape() == before && "blocks must preserve their footprint");
            (void)before;
        }
    }
    Tensor<T> pooled = global_avg_pool(h);
    auto w = P("head.w", {cfg.stage_channels[3], cfg.num_classes},
               init::kaiming<T>(cfg.stage_channels[3]));
    auto b = P("head.b", {cfg.num_classes}, init::zeros<T>());
    return linear(pooled, w, b);
}

// ---- analytic accounting ---------------------------------------------------
//
// Parameter counts include biases and norm affines. MAC counts cover the
// multiply-accumulate work of dense/depthwise/pointwise convolutions, linear
// maps, the scan recurrence, and the channel-attention conv; norms,
// activations, gates, pooling, and elementwise products are excluded.

struct ParamItem {
    std::string name;
    int64_t params = 0;
    int64_t macs = 0;
};

struct ParamReport {
    std::vector<ParamItem> items;
    int64_t total_params = 0;
    int64_t total_macs = 0;
};

inline int64_t params_linear(int cin, int cout, bool bias = true) {
    return static_cast<int64_t>(cin) * cout + (bias ? cout : 0);
}
inline int64_t params_depthwise(int k, int c, bool bias = true) {
    return static_cast<int64_t>(c) * k * k + (bias ? c : 0);
}
inline int64_t params_dense(int k, int cin, int cout, bool bias = true) {
    return static_cast<int64_t>(cout) * k * k * cin + (bias ? cout : 0);
}
inline int64_t params_layer_norm(int c) { return 2 * static_cast<int64_t>(c); }

inline int64_t macs_linear(int64_t positions, int cin, int cout) {
    return positions * cin * cout;
}
inline int64_t macs_pointwise(int h, int w, int cin, int cout) {
    return static_cast<int64_t>(h) * w * cin * cout;
}
inline int64_t macs_depthwise(int oh, int ow, int k, int c) {
    return static_cast<int64_t>(oh) * ow * k * k * c;
}
inline int64_t macs_dense(int oh, int ow, int k, int cin, int cout) {
    return static_cast<int64_t>(oh) * ow * k * k * cin * cout;
}

// Each recurrence step, per (t, d, n): decay = exp(delta*A) costs one multiply
// plus one transcendental charged as one more, the state blend two multiplies,
// the input injection one, and the readout one. The per-(t, d) skip multiply
// is sub-leading and excluded.
inline constexpr int kScanMacsPerStep = 6;
inline int64_t macs_scan(int64_t L, int n, int d_inner) {
    return L * n * d_inner * kScanMacsPerStep;
}

inline ParamItem block_accounting(const BlockCfg& cfg, int h, int w, std::string name) {
    validate_block_cfg(cfg);
    const int C = cfg.channels, half = C / 2;
    const int64_t L = static_cast<int64_t>(h) * w;
    ParamItem it{std::move(name), 0, 0};

    // local branch: depthwise 3x3 then pointwise, both on C/2
    it.params += params_depthwise(3, half) + params_linear(half, half);
    it.macs += macs_depthwise(h, w, 3, half) + macs_pointwise(h, w, half, half);

    const int groups = cfg.parallel_vssm ? 4 : 1;
    const int cg = cfg.parallel_vssm ? C / 8 : half;
    const int d = cfg.lambda * cg;
    const int n = cfg.ssm_state;
    int64_t rp = 0, rm = 0;
    rp += params_linear(cg, d);                       // widening input map
    rm += macs_linear(L, cg, d);
    rp += params_depthwise(3, d);                     // pre-scan depthwise
    rm += macs_depthwise(h, w, 3, d);
    rp += params_linear(d, d);                        // delta projection, bias included
    rm += macs_linear(L, d, d);
    rp += 2 * params_linear(d, n, false);             // B and C projections
    rm += 2 * macs_linear(L, d, n);
    rp += static_cast<int64_t>(d) * n + d;            // state matrix log + skip
    rm += 4 * macs_scan(L, n, d);                     // four traversal orders
    rp += params_layer_norm(d) + params_layer_norm(cg);
    rp += params_depthwise(3, d);                     // gating branch depthwise
    rm += macs_depthwise(h, w, 3, d);
    if (cfg.use_laef) {
        const int nl = laef_local_channels(cg, cfg.r);
        rp += params_linear(d, cg) + params_linear(nl, nl);
        rm += macs_pointwise(h, w, d, cg) + macs_pointwise(h, w, nl, nl);
    } else {
        rp += params_linear(d, cg);
        rm += macs_pointwise(h, w, d, cg);
    }
    it.params += groups * rp;
    it.macs += groups * rm;

    if (cfg.use_fmiam) {
        it.params += 2 * params_linear(half, half) + cfg.eca_kernel;
        it.macs += 2 * macs_pointwise(h, w, half, half) +
                   static_cast<int64_t>(C) * cfg.eca_kernel;  // attention conv
    }
    return it;
}

inline ParamReport model_accounting(const ModelConfig& cfg, int input_size) {
    validate_model_cfg(cfg);
    if (input_size < 32 || input_size % 32 != 0)
        throw ConfigError("accounting: input_size must be a positive multiple of 32, got " +
                          std::to_string(input_size));
    ParamReport rep;
    int res = input_size / 4;
    rep.items.push_back({"stem",
                         params_dense(4, cfg.in_channels, cfg.stage_channels[0]) +
                             params_layer_norm(cfg.stage_channels[0]),
                         macs_dense(res, res, 4, cfg.in_channels, cfg.stage_channels[0])});
    for (int s = 0; s < 4; ++s) {
        if (s > 0) {
            const int cin = cfg.stage_channels[s - 1], cout = cfg.stage_channels[s];
            res /= 2;
            rep.items.push_back({"merge" + std::to_string(s),
                                 params_dense(2, cin, cout) + params_layer_norm(cout),
                                 macs_dense(res, res, 2, cin, cout)});
        }
        const BlockCfg bc = stage_block_cfg(cfg, s);
        for (int i = 0; i < cfg.stage_depths[s]; ++i)
            rep.items.push_back(block_accounting(
                bc, res, res, "s" + std::to_string(s) + ".b" + std::to_string(i)));
    }
    rep.items.push_back({"head",
                         params_linear(cfg.stage_channels[3], cfg.num_classes),
                         macs_linear(1, cfg.stage_channels[3], cfg.num_classes)});
    for (const auto& it : rep.items) {
        rep.total_params += it.params;
        rep.total_macs += it.macs;
    }
    return rep;
}

inline ParamReport count_params(const ModelConfig& cfg) {
    return model_accounting(cfg, cfg.input_size);
}

inline ParamReport count_macs(const ModelConfig& cfg, int input_size) {
    return model_accounting(cfg, input_size);
}

inline std::string param_report_text(const ParamReport& rep) {
    size_t wname = 6;
    for (const auto& it : rep.items) wname = std::max(wname, it.name.size());
    std::ostringstream os;
    os << std::left;
    auto row = [&](const std::string& name, int64_t p, int64_t m) {
        os.width(static_cast<std::streamsize>(wname + 2));
        os << name;
        std::string ps = std::to_string(p), ms = std::to_string(m);
        os.width(14);
        os << std::right << ps;
        os.width(16);
        os << ms << std::left << "\n";
    };
    os.width(static_cast<std::streamsize>(wname + 2));
    os << "module";
    os.width(14);
    os << std::right << "params";
    os.width(16);
    os << "macs" << std::left << "\n";
    for (const auto& it : rep.items) row(it.name, it.params, it.macs);
    row("total", rep.total_params, rep.total_macs);
    return os.str();
}

inline std::string param_report_kv(const ParamReport& rep) {
    std::ostringstream os;
    for (const auto& it : rep.items)
        os << it.name << ".params " << it.params << "\n"
           << it.name << ".macs " << it.macs << "\n";
    os << "total.params " << rep.total_params << "\n"
       << "total.macs " << rep.total_macs << "\n";
    return os.str();
}

}  // namespace mmic
