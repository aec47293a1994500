#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmic/backbone.hpp"
#include "mmic/blocks.hpp"
#include "mmic/grad_check.hpp"
#include "mmic/nn.hpp"
#include "mmic/sscan.hpp"
#include "testutil.hpp"

// One named gradient check, runnable at any seed. The unit suites spot-check
// each entry; the acceptance run sweeps every entry over many seeds.
struct GcCase {
    std::string name;
    std::function<mmic::GradCheckReport(uint64_t)> run;
};

namespace gradcheck_cases {

using mmic::Graph;
using mmic::GradCheckOptions;
using mmic::GradCheckReport;
using mmic::Rng;
using mmic::Shape;
using mmic::Tensor;
using mmic::TensorData;

// keeps sampled values away from the relu kink at zero
template <typename T>
inline TensorData<T> random_signed_offzero(Shape shape, Rng& rng) {
    TensorData<T> t(std::move(shape));
    for (auto& v : t.values) {
        double mag = rng.uniform(0.2, 1.2);
        v = static_cast<T>(rng.next_double() < 0.5 ? -mag : mag);
    }
    return t;
}

using Leaves = std::vector<TensorData<double>>;
using Build = std::function<Tensor<double>(Graph<double>&, const std::vector<Tensor<double>>&)>;

inline GradCheckReport run_case(const Build& build, Leaves leaves, GradCheckOptions opt = {}) {
    return mmic::grad_check<double>(build, std::move(leaves), opt);
}

inline std::vector<GcCase> op_cases() {
    using namespace mmic;
    std::vector<GcCase> cases;
    auto addc = [&](std::string name, std::function<GradCheckReport(uint64_t)> fn) {
        cases.push_back({std::move(name), std::move(fn)});
    };

    addc("identity", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(identity(l[0]));
            },
            {testutil::random_tensor<double>({3, 2}, rng)});
    });
    addc("add", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(mul(add(l[0], l[1]), l[1]));
            },
            {testutil::random_tensor<double>({4}, rng), testutil::random_tensor<double>({4}, rng)});
    });
    addc("mul", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(mul(l[0], l[1]));
            },
            {testutil::random_tensor<double>({5}, rng), testutil::random_tensor<double>({5}, rng)});
    });
    addc("scale", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(scale(l[0], 0.37));
            },
            {testutil::random_tensor<double>({6}, rng)});
    });
    addc("exp", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(mmic::exp(l[0]));
            },
            {testutil::random_tensor<double>({4}, rng)});
    });
    addc("sum", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) { return sum(l[0]); },
            {testutil::random_tensor<double>({2, 3}, rng)});
    });
    for (auto [kind, name] : {std::pair{Act::relu, "relu"}, {Act::sigmoid, "sigmoid"},
                              {Act::silu, "silu"}, {Act::gelu, "gelu"},
                              {Act::softplus, "softplus"}}) {
        addc(name, [kind](uint64_t seed) {
            Rng rng(seed);
            return run_case(
                [kind](Graph<double>&, const std::vector<Tensor<double>>& l) {
                    return sum(activation(l[0], kind));
                },
                {random_signed_offzero<double>({3, 3}, rng)});
        });
    }

    addc("linear", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(silu(linear(l[0], l[1], l[2])));
            },
            {testutil::random_tensor<double>({5, 3}, rng),
             testutil::random_tensor<double>({3, 4}, rng),
             testutil::random_tensor<double>({4}, rng)});
    });
    addc("linear_no_bias", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(linear(l[0], l[1]));
            },
            {testutil::random_tensor<double>({2, 2, 3}, rng),
             testutil::random_tensor<double>({3, 2}, rng)});
    });
    addc("pointwise_conv2d", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(silu(pointwise_conv2d(l[0], l[1], l[2])));
            },
            {testutil::random_tensor<double>({3, 4, 2}, rng),
             testutil::random_tensor<double>({2, 3}, rng),
             testutil::random_tensor<double>({3}, rng)});
    });
    addc("depthwise_conv2d", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(silu(depthwise_conv2d(l[0], l[1], l[2])));
            },
            {testutil::random_tensor<double>({4, 4, 3}, rng),
             testutil::random_tensor<double>({3, 3, 3}, rng),
             testutil::random_tensor<double>({3}, rng)});
    });
    addc("depthwise_conv2d_multiplier", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(depthwise_conv2d(l[0], l[1], l[2], 1, 1, 2));
            },
            {testutil::random_tensor<double>({3, 3, 2}, rng),
             testutil::random_tensor<double>({4, 3, 3}, rng),
             testutil::random_tensor<double>({4}, rng)});
    });
    addc("depthwise_conv2d_strided", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(depthwise_conv2d(l[0], l[1], {}, 2, 0, 1));
            },
            {testutil::random_tensor<double>({4, 4, 2}, rng),
             testutil::random_tensor<double>({2, 2, 2}, rng)});
    });
    addc("dense_conv2d", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(silu(dense_conv2d(l[0], l[1], l[2], 2, 0)));
            },
            {testutil::random_tensor<double>({4, 4, 3}, rng),
             testutil::random_tensor<double>({5, 2, 2, 3}, rng),
             testutil::random_tensor<double>({5}, rng)});
    });
    addc("layer_norm", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(silu(layer_norm(l[0], l[1], l[2])));
            },
            {testutil::random_tensor<double>({3, 2, 4}, rng),
             testutil::random_tensor<double>({4}, rng, 0.5, 1.5),
             testutil::random_tensor<double>({4}, rng, -0.5, 0.5)});
    });
    addc("channel_slice", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(mul(channel_slice(l[0], 1, 2), channel_slice(l[0], 3, 2)));
            },
            {testutil::random_tensor<double>({2, 3, 6}, rng)});
    });
    addc("channel_concat", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                auto c = channel_concat<double>({l[0], l[1]});
                return sum(mul(c, c));
            },
            {testutil::random_tensor<double>({2, 2, 3}, rng),
             testutil::random_tensor<double>({2, 2, 2}, rng)});
    });
    addc("channel_shuffle", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                auto s = channel_shuffle(l[0], 4);
                return sum(mul(s, s));
            },
            {testutil::random_tensor<double>({2, 2, 8}, rng)});
    });
    addc("global_avg_pool", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                auto p = global_avg_pool(l[0]);
                return sum(mul(p, p));
            },
            {testutil::random_tensor<double>({3, 3, 4}, rng)});
    });
    addc("channel_scale", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(channel_scale(l[0], l[1]));
            },
            {testutil::random_tensor<double>({2, 3, 4}, rng),
             testutil::random_tensor<double>({4}, rng)});
    });
    addc("conv1d_channels", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(sigmoid(conv1d_channels(l[0], l[1])));
            },
            {testutil::random_tensor<double>({6}, rng),
             testutil::random_tensor<double>({3}, rng)});
    });
    addc("cross_entropy", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return cross_entropy(l[0], {1, 0, 2});
            },
            {testutil::random_tensor<double>({3, 4}, rng)});
    });
    return cases;
}

inline mmic::SsmParams<double> ssm_leaves(const std::vector<Tensor<double>>& l, size_t at) {
    return {l[at], l[at + 1], l[at + 2], l[at + 3], l[at + 4], l[at + 5]};
}

// leaf tensors for SsmParams with channel width d and state size n
inline void push_ssm_leaves(Leaves& leaves, int d, int n, Rng& rng) {
    leaves.push_back(testutil::random_tensor<double>({d, d}, rng));
    leaves.push_back(testutil::random_tensor<double>({d}, rng));
    leaves.push_back(testutil::random_tensor<double>({d, n}, rng));
    leaves.push_back(testutil::random_tensor<double>({d, n}, rng));
    leaves.push_back(testutil::random_tensor<double>({d, n}, rng, -1.5, 0.5));
    leaves.push_back(testutil::random_tensor<double>({d}, rng));
}

// Provider that hands out pre-made graph leaves in the order the builders
// register parameters; lets grad_check drive builder-composed modules.
struct LeafProvider {
    const std::vector<Tensor<double>>* leaves;
    size_t next;
    Tensor<double> operator()(const std::string& name, mmic::Shape shape,
                              const mmic::init::Fn<double>&) {
        mmic::check(next < leaves->size(),
                    "gradcheck provider: ran out of leaves at '" + name + "'");
        Tensor<double> t = (*leaves)[next++];
        mmic::check(t.shape() == shape,
                    "gradcheck provider: shape mismatch for '" + name + "'");
        return t;
    }
};

// Runs grad_check over [inputs..., all builder parameters]. fwd must be a
// callable (Prov&, const std::vector<Tensor<double>>& inputs) -> Tensor. A
// dry build against a real ParamStore discovers the parameter list; the
// output is contracted with a fixed random probe so permutation bugs cannot
// cancel in the scalar.
template <typename F>
GradCheckReport run_store_case(F fwd, std::vector<TensorData<double>> inputs,
                               uint64_t seed, GradCheckOptions opt = {}) {
    using namespace mmic;
    ParamStore<double> store(seed);
    Shape out_shape;
    {
        Graph<double> g;
        ParamCtx<double> ctx(store, g);
        std::vector<Tensor<double>> xs;
        for (const auto& in : inputs) xs.push_back(g.leaf(in));
        out_shape = fwd(ctx, xs).shape();
    }
    TensorData<double> probe(out_shape);
    uint64_t pstream = seed ^ 0x70B5u;
    Rng prng(splitmix64(pstream));
    for (auto& v : probe.values) v = prng.uniform(-1.0, 1.0);

    const size_t n_inputs = inputs.size();
    std::vector<TensorData<double>> leaves = std::move(inputs);
    for (const auto& name : store.names()) leaves.push_back(store.entry(name));
    return mmic::grad_check<double>(
        [fwd, probe, n_inputs](Graph<double>& g, const std::vector<Tensor<double>>& l) {
            LeafProvider prov{&l, n_inputs};
            std::vector<Tensor<double>> xs(l.begin(), l.begin() + n_inputs);
            auto out = fwd(prov, xs);
            return sum(mul(out, g.leaf(probe)));
        },
        std::move(leaves), opt);
}

inline std::vector<GcCase> scan_cases() {
    using namespace mmic;
    std::vector<GcCase> cases;
    auto addc = [&](std::string name, std::function<GradCheckReport(uint64_t)> fn) {
        cases.push_back({std::move(name), std::move(fn)});
    };

    addc("selective_scan_op", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                auto A = scale(exp(l[4]), -1.0);
                return sum(selective_scan(l[0], l[1], l[2], l[3], A, l[5]));
            },
            {testutil::random_tensor<double>({4, 2}, rng),
             random_signed_offzero<double>({4, 2}, rng),
             testutil::random_tensor<double>({4, 3}, rng),
             testutil::random_tensor<double>({4, 3}, rng),
             testutil::random_tensor<double>({2, 3}, rng, -1.5, 0.5),
             testutil::random_tensor<double>({2}, rng)});
    });
    addc("grid_to_seq_row_backward", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(mul(grid_to_seq(l[0], ScanDirection::row_backward), l[1]));
            },
            {testutil::random_tensor<double>({3, 2, 2}, rng),
             testutil::random_tensor<double>({6, 2}, rng)});
    });
    addc("seq_to_grid_col_forward", [](uint64_t seed) {
        Rng rng(seed);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(mul(seq_to_grid(l[0], 3, 2, ScanDirection::col_forward), l[1]));
            },
            {testutil::random_tensor<double>({6, 2}, rng),
             testutil::random_tensor<double>({3, 2, 2}, rng)});
    });
    addc("selective_scan_1d", [](uint64_t seed) {
        Rng rng(seed);
        Leaves leaves{testutil::random_tensor<double>({4, 2}, rng)};
        push_ssm_leaves(leaves, 2, 3, rng);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(selective_scan_1d(l[0], ssm_leaves(l, 1)));
            },
            std::move(leaves));
    });
    addc("ssm2d", [](uint64_t seed) {
        Rng rng(seed);
        Leaves leaves{testutil::random_tensor<double>({3, 2, 2}, rng)};
        push_ssm_leaves(leaves, 2, 2, rng);
        return run_case(
            [](Graph<double>&, const std::vector<Tensor<double>>& l) {
                return sum(ssm2d(l[0], ssm_leaves(l, 1)));
            },
            std::move(leaves));
    });
    return cases;
}

inline std::vector<GcCase> block_cases() {
    using namespace mmic;
    std::vector<GcCase> cases;
    auto addc = [&](std::string name, std::function<GradCheckReport(uint64_t)> fn) {
        cases.push_back({std::move(name), std::move(fn)});
    };
    // Finite differences need smoothness at the probe point, so the checks
    // run the gate activations as gelu; relu's kink at zero otherwise throws
    // O(1) artifacts whenever a pre-activation lands within one step of it.
    // The relu derivative itself is covered in the op-level cases, which
    // sample away from the kink.
    auto small_cfg = [](int channels) {
        BlockCfg cfg;
        cfg.channels = channels;
        cfg.lambda = 2;
        cfg.ssm_state = 4;
        cfg.local_gate_act = Act::gelu;
        return cfg;
    };
    // Deep compositions produce micro-gradients near the relative-error floor
    // where central differences are roundoff-bound, not truncation-bound; a
    // slightly larger step keeps the probe in the truncation regime.
    GradCheckOptions deep;
    deep.step = 3e-5;

    addc("laef", [](uint64_t seed) {
        Rng rng(seed);
        return run_store_case(
            [](auto& P, const std::vector<Tensor<double>>& xs) {
                return laef_forward(P, "laef", xs[0], 4, 0.25);
            },
            {testutil::random_tensor<double>({3, 3, 6}, rng)}, seed);
    });
    addc("laef_all_local", [](uint64_t seed) {
        Rng rng(seed);
        return run_store_case(
            [](auto& P, const std::vector<Tensor<double>>& xs) {
                return laef_forward(P, "laef", xs[0], 3, 1.0);
            },
            {testutil::random_tensor<double>({3, 3, 4}, rng)}, seed);
    });
    addc("revssm", [small_cfg, deep](uint64_t seed) {
        Rng rng(seed);
        return run_store_case(
            [small_cfg](auto& P, const std::vector<Tensor<double>>& xs) {
                return revssm_forward(P, "rev", xs[0], small_cfg(32));
            },
            {testutil::random_tensor<double>({4, 4, 4}, rng)}, seed, deep);
    });
    addc("eca", [](uint64_t seed) {
        Rng rng(seed);
        return run_store_case(
            [](auto& P, const std::vector<Tensor<double>>& xs) {
                return eca_forward(P, "eca", xs[0], 3);
            },
            {testutil::random_tensor<double>({3, 3, 5}, rng)}, seed);
    });
    addc("fmiam", [small_cfg](uint64_t seed) {
        Rng rng(seed);
        return run_store_case(
            [small_cfg](auto& P, const std::vector<Tensor<double>>& xs) {
                return fmiam_forward(P, "fm", xs[0], xs[1], small_cfg(8));
            },
            {testutil::random_tensor<double>({3, 3, 4}, rng),
             testutil::random_tensor<double>({3, 3, 4}, rng)},
            seed);
    });
    addc("mambamic_block", [small_cfg, deep](uint64_t seed) {
        Rng rng(seed);
        auto cfg = small_cfg(8);
        cfg.r = 1.0;  // groups are 1 channel wide; only the all-local split fits
        return run_store_case(
            [cfg](auto& P, const std::vector<Tensor<double>>& xs) {
                return mambamic_block_forward(P, "blk", xs[0], cfg);
            },
            {testutil::random_tensor<double>({4, 4, 8}, rng)}, seed, deep);
    });
    addc("mambamic_block_single_vssm", [small_cfg, deep](uint64_t seed) {
        Rng rng(seed);
        auto cfg = small_cfg(8);
        cfg.parallel_vssm = false;
        return run_store_case(
            [cfg](auto& P, const std::vector<Tensor<double>>& xs) {
                return mambamic_block_forward(P, "blk", xs[0], cfg);
            },
            {testutil::random_tensor<double>({4, 4, 8}, rng)}, seed, deep);
    });
    addc("mambamic_block_plain_substitutes", [small_cfg, deep](uint64_t seed) {
        Rng rng(seed);
        auto cfg = small_cfg(8);
        cfg.use_laef = false;
        cfg.use_fmiam = false;
        return run_store_case(
            [cfg](auto& P, const std::vector<Tensor<double>>& xs) {
                return mambamic_block_forward(P, "blk", xs[0], cfg);
            },
            {testutil::random_tensor<double>({4, 4, 8}, rng)}, seed, deep);
    });
    return cases;
}

// A model small enough to finite-difference end to end. Stage-0 groups are a
// single channel wide, so the split ratio must be 1.
inline mmic::ModelConfig micro_model_cfg() {
    mmic::ModelConfig cfg;
    cfg.variant = "micro";
    cfg.in_channels = 1;
    cfg.stage_channels = {8, 16, 32, 64};
    cfg.stage_depths = {1, 1, 1, 1};
    cfg.lambda = 2;
    cfg.r = 1.0;
    cfg.ssm_state = 2;
    cfg.num_classes = 2;
    cfg.input_size = 32;
    cfg.local_gate_act = mmic::Act::gelu;  // finite differences need smoothness
    return cfg;
}

inline std::vector<GcCase> backbone_cases() {
    using namespace mmic;
    std::vector<GcCase> cases;
    auto addc = [&](std::string name, std::function<GradCheckReport(uint64_t)> fn) {
        cases.push_back({std::move(name), std::move(fn)});
    };
    GradCheckOptions deep;
    deep.step = 3e-5;

    addc("stem_embed", [](uint64_t seed) {
        Rng rng(seed);
        return run_store_case(
            [](auto& P, const std::vector<Tensor<double>>& xs) {
                return stem_embed(P, "stem", xs[0], 8);
            },
            {testutil::random_tensor<double>({8, 8, 3}, rng)}, seed);
    });
    addc("patch_merge", [](uint64_t seed) {
        Rng rng(seed);
        return run_store_case(
            [](auto& P, const std::vector<Tensor<double>>& xs) {
                return patch_merge(P, "merge", xs[0]);
            },
            {testutil::random_tensor<double>({4, 4, 3}, rng)}, seed);
    });
    addc("backbone_micro", [deep](uint64_t seed) {
        Rng rng(seed);
        auto cfg = micro_model_cfg();
        GradCheckOptions opt = deep;
        opt.max_elements_per_leaf = 3;  // random subset per parameter tensor
        opt.subset_seed = seed;
        // ten-layer compositions carry third derivatives big enough that a
        // plain central difference cannot resolve 1e-4 relative error
        opt.richardson = true;
        return run_store_case(
            [cfg](auto& P, const std::vector<Tensor<double>>& xs) {
                return backbone_forward(P, cfg, xs[0]);
            },
            {testutil::random_tensor<double>({32, 32, 1}, rng)}, seed, opt);
    });
    return cases;
}

}  // namespace gradcheck_cases
