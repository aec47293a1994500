#pragma once

// Model blocks: the grouped state-space block and its sub-modules.
//
// Composition per block, for input F with C channels (C divisible by 8):
//   F', F''   = channel halves of F
//   F_local   = PW(DW(F'))                                  C/2 channels
//   F_global  = shuffle(concat(rev(F''_1) .. rev(F''_4)))   C/2 channels
//   out       = fmiam(F_local, F_global)                    C channels
// where rev() is a residual two-branch state-space unit and fmiam() is the
// cross-gated fusion with channel attention. Ablation flags swap sub-modules
// for plain width-matched stand-ins without changing any shape.
//
// Builders both register parameters (first build) and emit graph nodes, so a
// forward pass and its parameter set can never drift apart.

#include <string>
#include <vector>

#include "mmic/nn.hpp"
#include "mmic/ops.hpp"
#include "mmic/params.hpp"
#include "mmic/sscan.hpp"

namespace mmic {

struct BlockCfg {
    int channels = 0;          // C, divisible by 8
    int lambda = 2;            // channel expansion inside rev units
    int ssm_state = 8;         // N
    double r = 0.25;           // partial channel ratio of the local branch
    int eca_kernel = 3;        // channel-attention conv width, odd
    Act local_gate_act = Act::relu;
    Act global_gate_act = Act::gelu;
    bool use_laef = true;      // false: replace with one pointwise map
    bool use_fmiam = true;     // false: replace with plain concat
    bool parallel_vssm = true; // false: one rev unit across C/2
};

// Local-branch width for a partial ratio r over out_channels. r = 1 routes
// everything through the local transform; otherwise the rounded width must
// leave both partitions non-empty.
inline int laef_local_channels(int out_channels, double r) {
    check(out_channels >= 1, "laef: out_channels must be >= 1");
    if (!(r > 0.0 && r <= 1.0))
        throw ConfigError("laef: partial ratio must be in (0, 1], got " + std::to_string(r));
    if (r == 1.0) return out_channels;
    const int n = static_cast<int>(std::floor(r * out_channels + 0.5));
    if (n < 1 || n >= out_channels)
        throw ConfigError("laef: partial ratio " + std::to_string(r) + " over " +
                          std::to_string(out_channels) +
                          " channels rounds to a degenerate split");
    return n;
}

inline void validate_block_cfg(const BlockCfg& cfg) {
    if (cfg.channels < 8 || cfg.channels % 8 != 0)
        throw ConfigError("block: channels must be a positive multiple of 8, got " +
                          std::to_string(cfg.channels));
    if (cfg.lambda < 1)
        throw ConfigError("block: lambda must be >= 1, got " + std::to_string(cfg.lambda));
    if (cfg.ssm_state < 1)
        throw ConfigError("block: ssm_state must be >= 1, got " + std::to_string(cfg.ssm_state));
    if (cfg.eca_kernel < 1 || cfg.eca_kernel % 2 == 0)
        throw ConfigError("block: eca_kernel must be odd and >= 1, got " +
                          std::to_string(cfg.eca_kernel));
    if (cfg.use_laef) {
        // group width the rev units will hand to the local/retained split
        const int group = cfg.parallel_vssm ? cfg.channels / 8 : cfg.channels / 2;
        laef_local_channels(group, cfg.r);
    }
}

// Builders take any provider with ParamCtx's call signature; tests substitute
// a provider that hands out pre-made graph leaves in registration order.
template <typename T, typename Prov>
SsmParams<T> make_ssm_params(Prov& P, const std::string& pfx, int d_inner, int n) {
    return {P(pfx + ".w_delta", {d_inner, d_inner}, init::kaiming<T>(d_inner)),
            P(pfx + ".delta_bias", {d_inner}, init::delta_bias<T>()),
            P(pfx + ".w_B", {d_inner, n}, init::kaiming<T>(d_inner)),
            P(pfx + ".w_C", {d_inner, n}, init::kaiming<T>(d_inner)),
            P(pfx + ".a_log", {d_inner, n}, init::a_log_spectrum<T>()),
            P(pfx + ".d_skip", {d_inner}, init::ones<T>())};
}

// Partial-channel embed-and-refine unit: embed to out_channels, push the
// first laef_local_channels through an extra pointwise+SiLU, keep the rest,
// shuffle the two partitions together. Odd widths skip the shuffle (group
// size 2 would not divide), r = 1 has a single partition so nothing to mix.
template <typename T, typename Prov>
Tensor<T> laef_forward(Prov& P, const std::string& pfx, Tensor<T> x,
                       int out_channels, double r) {
    const int in_channels = x.shape().back();
    auto w_embed = P(pfx + ".embed.w", {in_channels, out_channels}, init::kaiming<T>(in_channels));
    auto b_embed = P(pfx + ".embed.b", {out_channels}, init::zeros<T>());
    auto embedded = silu(pointwise_conv2d(x, w_embed, b_embed));

    const int n_local = laef_local_channels(out_channels, r);
    auto w_local = P(pfx + ".local.w", {n_local, n_local}, init::kaiming<T>(n_local));
    auto b_local = P(pfx + ".local.b", {n_local}, init::zeros<T>());
    if (n_local == out_channels) return silu(pointwise_conv2d(embedded, w_local, b_local));

    auto local = silu(pointwise_conv2d(channel_slice(embedded, 0, n_local), w_local, b_local));
    auto retained = channel_slice(embedded, n_local, out_channels - n_local);
    auto cat = channel_concat<T>({local, retained});
    return out_channels % 2 == 0 ? channel_shuffle(cat, 2) : cat;
}

// Residual state-space unit on C_g channels.
//   branch 1: Linear -> DW 3x3 -> SiLU -> four-direction scan -> LayerNorm
//   branch 2: LayerNorm -> DW 3x3 with channel multiplier lambda -> SiLU
// both at lambda*C_g wide; their product is reduced back to C_g and added to
// the input.
template <typename T, typename Prov>
Tensor<T> revssm_forward(Prov& P, const std::string& pfx, Tensor<T> x,
                         const BlockCfg& cfg) {
    const int cg = x.shape().back();
    const int d_inner = cfg.lambda * cg;

    auto w_in = P(pfx + ".in.w", {cg, d_inner}, init::kaiming<T>(cg));
    auto b_in = P(pfx + ".in.b", {d_inner}, init::zeros<T>());
    auto k1 = P(pfx + ".dw1.w", {d_inner, 3, 3}, init::kaiming<T>(9));
    auto c1 = P(pfx + ".dw1.b", {d_inner}, init::zeros<T>());
    auto b1 = silu(depthwise_conv2d(linear(x, w_in, b_in), k1, c1));
    b1 = ssm2d(b1, make_ssm_params<T>(P, pfx + ".ssm", d_inner, cfg.ssm_state));
    b1 = layer_norm(b1, P(pfx + ".ln1.gamma", {d_inner}, init::ones<T>()),
                    P(pfx + ".ln1.beta", {d_inner}, init::zeros<T>()));

    auto normed = layer_norm(x, P(pfx + ".ln2.gamma", {cg}, init::ones<T>()),
                             P(pfx + ".ln2.beta", {cg}, init::zeros<T>()));
    auto k2 = P(pfx + ".dw2.w", {d_inner, 3, 3}, init::kaiming<T>(9));
    auto c2 = P(pfx + ".dw2.b", {d_inner}, init::zeros<T>());
    auto b2 = silu(depthwise_conv2d(normed, k2, c2, 1, 1, cfg.lambda));

    auto gated = mul(b1, b2);
    Tensor<T> reduced;
    if (cfg.use_laef) {
        reduced = laef_forward(P, pfx + ".laef", gated, cg, cfg.r);
    } else {
        auto w = P(pfx + ".reduce.w", {d_inner, cg}, init::kaiming<T>(d_inner));
        auto b = P(pfx + ".reduce.b", {cg}, init::zeros<T>());
        reduced = pointwise_conv2d(gated, w, b);
    }
    return add(x, reduced);
}

// Channel attention: pooled stats -> 1d conv across channels -> sigmoid gate.
template <typename T, typename Prov>
Tensor<T> eca_forward(Prov& P, const std::string& pfx, Tensor<T> x, int kernel) {
    auto w = P(pfx + ".w", {kernel}, init::kaiming<T>(kernel));
    auto gate = sigmoid(conv1d_channels(global_avg_pool(x), w));
    return channel_scale(x, gate);
}

// Cross-gated fusion of two equal-width maps. Each branch produces a sigmoid
// gate that modulates the other branch's features; the gated pair is
// concatenated and passed through channel attention.
template <typename T, typename Prov>
Tensor<T> fmiam_forward(Prov& P, const std::string& pfx, Tensor<T> f_local,
                        Tensor<T> f_global, const BlockCfg& cfg) {
    if (f_local.shape() != f_global.shape())
        throw ShapeError("fmiam: branch shapes differ, " + shape_str(f_local.shape()) +
                         " vs " + shape_str(f_global.shape()));
    const int cb = f_local.shape().back();
    auto wl = P(pfx + ".local_gate.w", {cb, cb}, init::kaiming<T>(cb));
    auto bl = P(pfx + ".local_gate.b", {cb}, init::zeros<T>());
    auto wg = P(pfx + ".global_gate.w", {cb, cb}, init::kaiming<T>(cb));
    auto bg = P(pfx + ".global_gate.b", {cb}, init::zeros<T>());
    auto gate_l = sigmoid(activation(pointwise_conv2d(f_local, wl, bl), cfg.local_gate_act));
    auto gate_g = sigmoid(activation(pointwise_conv2d(f_global, wg, bg), cfg.global_gate_act));
    auto fused = channel_concat<T>({mul(gate_g, f_local), mul(gate_l, f_global)});
    return eca_forward(P, pfx + ".eca", fused, cfg.eca_kernel);
}

// Intermediate maps exposed for tests.
template <typename T>
struct BlockTrace {
    Tensor<T> f_local;
    Tensor<T> pre_shuffle;  // concat of rev-unit outputs, before mixing
    Tensor<T> f_global;
    Tensor<T> out;
};

template <typename T, typename Prov>
Tensor<T> mambamic_block_forward(Prov& P, const std::string& pfx, Tensor<T> x,
                                 const BlockCfg& cfg, BlockTrace<T>* trace = nullptr) {
    validate_block_cfg(cfg);
    const Shape& s = x.shape();
    if (s.size() != 3 || s[2] != cfg.channels)
        throw ShapeError("block: input " + shape_str(s) + " does not match channels=" +
                         std::to_string(cfg.channels));
    const int half = cfg.channels / 2;

    auto f_prime = channel_slice(x, 0, half);
    auto f_second = channel_slice(x, half, half);

    auto kd = P(pfx + ".local.dw.w", {half, 3, 3}, init::kaiming<T>(9));
    auto bd = P(pfx + ".local.dw.b", {half}, init::zeros<T>());
    auto wp = P(pfx + ".local.pw.w", {half, half}, init::kaiming<T>(half));
    auto bp = P(pfx + ".local.pw.b", {half}, init::zeros<T>());
    auto f_local = pointwise_conv2d(depthwise_conv2d(f_prime, kd, bd), wp, bp);

    Tensor<T> f_global, pre_shuffle;
    if (cfg.parallel_vssm) {
        const int group = cfg.channels / 8;
        auto parts = channel_partition(f_second, {group, group, group, group});
        std::vector<Tensor<T>> outs;
        outs.reserve(4);
        for (int i = 0; i < 4; ++i)
            outs.push_back(revssm_forward(P, pfx + ".rev" + std::to_string(i), parts[i], cfg));
        pre_shuffle = channel_concat(outs);
        f_global = channel_shuffle(pre_shuffle, 4);
    } else {
        pre_shuffle = revssm_forward(P, pfx + ".rev", f_second, cfg);
        f_global = pre_shuffle;
    }

    Tensor<T> out = cfg.use_fmiam
                        ? fmiam_forward(P, pfx + ".fmiam", f_local, f_global, cfg)
                        : channel_concat<T>({f_local, f_global});
    if (trace != nullptr) *trace = {f_local, pre_shuffle, f_global, out};
    return out;
}

}  // namespace mmic
