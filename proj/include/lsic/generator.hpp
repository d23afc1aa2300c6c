#pragma once

#include <utility>
#include <vector>

#include "lsic/autodiff.hpp"
#include "lsic/nn.hpp"
#include "lsic/textgraph.hpp"

namespace lsic {

struct GeneratorConfig {
    int resolution = 256;
    int in_channels = 4; // RGB plus mask channel
    int base_channels = 32;
    int reasoning_channels = 64;
    int reasoning_blocks = 3; // T: one coarse block, T-1 fine blocks
    int embed_dim = 128;
    int gcn_dim = 64;
    int latent_dim = 64;
    int att_dim = 64;
    std::vector<int> output_scales; // ascending, doubling, last == resolution
    bool composite_output = true;
    bool spectral_norm = true;

    int grid() const { return resolution / 4; } // two stride-2 encoder blocks
    static GeneratorConfig defaults(int resolution);
    void validate() const;
};

// Per-sample graph inputs to a generator pass: differentiable node features
// plus the constant normalized adjacency.
struct GraphInput {
    ad::Var v0;
    Tensor norm_adj;
};

struct GeneratorResult {
    std::vector<ad::Var> scales; // tanh outputs, one per configured scale
    ad::Var composited;          // final scale with context pixels restored
};

// Output of one reasoning block, with the gate and attention activations
// exposed so invariants on them are directly observable.
struct ReasoningOut {
    ad::Var features;                // fused (N,C,H,W)
    std::vector<ad::Var> nodes;      // per-sample GCN output
    std::vector<ad::Var> gates;      // per-sample alpha (HW,1) or beta (N_v,1)
    std::vector<ad::Var> attention;  // per-sample eps rows (HW,N_v); fine blocks only
};

// Coarse-to-fine completion generator: residual encoder, one coarse-grained
// reasoning block, T-1 fine-grained reasoning blocks, latent injection and
// hierarchical multi-scale decoding.
class Generator {
public:
    Generator() = default;
    Generator(const GeneratorConfig& cfg, Rng& rng);

    const GeneratorConfig& config() const { return cfg_; }

    // masked_rgbm: (N, in_channels, resolution, resolution)
    ad::Var encode_image(ad::Tape& t, const ad::Var& masked_rgbm, bool training);

    // Gated fusion of pooled graph semantics into every region. c_map is the
    // output of this block's residual step.
    ReasoningOut cgr_forward(ad::Tape& t, const ad::Var& c_map, const std::vector<ad::Var>& nodes,
                             const std::vector<Tensor>& norm_adjs, bool training);

    // Per-word gated fusion plus region-to-word attention with a residual
    // update. block: 1..T-1 selects the fine block's weights.
    ReasoningOut fgr_forward(ad::Tape& t, const ad::Var& c_map, const std::vector<ad::Var>& nodes,
                             const std::vector<Tensor>& norm_adjs, bool training, int block);

    // Runs block `index`'s residual step on the previous feature map.
    ad::Var residual_step(ad::Tape& t, const ad::Var& features, int index, bool training);

    ad::Var inject_latent(ad::Tape& t, const ad::Var& features, const Tensor& z, bool training);

    std::vector<ad::Var> decode_multiscale(ad::Tape& t, const ad::Var& features, bool training);

    // Full pass. z: (N, latent_dim). Graphs are per-sample.
    GeneratorResult generate(ad::Tape& t, const Tensor& masked_rgbm,
                             const std::vector<GraphInput>& graphs, const Tensor& z,
                             bool training);

    void collect(std::vector<ad::Parameter*>& out);
    void collect_sn(std::vector<nn::SnEntry>& out);
    std::vector<ad::Parameter*> parameters();

private:
    struct ReasoningBlock {
        nn::ResBlock vis;
        GcnLayer gcn;
        nn::Dense gate_a, to_r, to_g;
        // fine-grained attention (unused in the coarse block)
        nn::Dense att_l, att_n, agg_m;
    };

    GeneratorConfig cfg_;
    nn::ResBlock enc1_, enc2_;
    std::vector<ReasoningBlock> blocks_;
    nn::Dense z_proj_;
    nn::ResBlock dec_;
    std::vector<nn::Conv2d> heads_;
    std::vector<nn::Conv2d> ups_;
};

// Splits a 4-channel masked input into its RGB part and hole mask.
Tensor masked_rgb(const Tensor& masked_rgbm);
Tensor hole_mask(const Tensor& masked_rgbm);

} // namespace lsic
