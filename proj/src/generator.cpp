#include "lsic/generator.hpp"

#include <cmath>

namespace lsic {

using ad::Tape;
using ad::Var;

GeneratorConfig GeneratorConfig::defaults(int resolution) {
    GeneratorConfig c;
    c.resolution = resolution;
    c.output_scales = {resolution / 4, resolution / 2, resolution};
    return c;
}

void GeneratorConfig::validate() const {
    if (resolution < 8 || resolution % 4 != 0)
        throw std::invalid_argument("generator: resolution must be a multiple of 4, >= 8");
    if (reasoning_blocks < 1) throw std::invalid_argument("generator: need at least one reasoning block");
    if (output_scales.empty()) throw std::invalid_argument("generator: no output scales");
    if (output_scales.front() != grid())
        throw std::invalid_argument("generator: first output scale must equal the encoder grid");
    for (std::size_t i = 1; i < output_scales.size(); ++i)
        if (output_scales[i] != 2 * output_scales[i - 1])
            throw std::invalid_argument("generator: output scales must double");
    if (output_scales.back() != resolution)
        throw std::invalid_argument("generator: final scale must be the model resolution");
    if (base_channels < 1 || reasoning_channels < 1 || embed_dim < 1 || gcn_dim < 1 ||
        latent_dim < 1 || att_dim < 1)
        throw std::invalid_argument("generator: channel dims must be positive");
}

Generator::Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    nn::LayerOptions opt;
    opt.spectral_norm = cfg_.spectral_norm;

    enc1_ = nn::ResBlock("g.enc1", cfg_.in_channels, cfg_.base_channels, 2, rng, opt);
    enc2_ = nn::ResBlock("g.enc2", cfg_.base_channels, cfg_.reasoning_channels, 2, rng, opt);

    int c = cfg_.reasoning_channels;
    for (int b = 0; b < cfg_.reasoning_blocks; ++b) {
        std::string p = "g.block" + std::to_string(b + 1);
        ReasoningBlock blk;
        blk.vis = nn::ResBlock(p + ".vis", c, c, 1, rng, opt);
        int gcn_in = b == 0 ? cfg_.embed_dim : cfg_.gcn_dim;
        blk.gcn = GcnLayer(p + ".gcn", gcn_in, cfg_.gcn_dim, rng);
        blk.gate_a = nn::Dense(p + ".gate_a", c + cfg_.gcn_dim, 1, rng, opt);
        blk.to_r = nn::Dense(p + ".to_r", c, c, rng, opt);
        blk.to_g = nn::Dense(p + ".to_g", cfg_.gcn_dim, c, rng, opt);
        if (b > 0) {
            blk.att_l = nn::Dense(p + ".att_l", c, cfg_.att_dim, rng, opt);
            blk.att_n = nn::Dense(p + ".att_n", c, cfg_.att_dim, rng, opt);
            blk.agg_m = nn::Dense(p + ".agg_m", c, c, rng, opt);
        }
        blocks_.push_back(std::move(blk));
    }

    z_proj_ = nn::Dense("g.z_proj", cfg_.latent_dim, c, rng, opt);
    dec_ = nn::ResBlock("g.dec", c, c, 1, rng, opt);

    int ch = c;
    for (std::size_t s = 0; s < cfg_.output_scales.size(); ++s) {
        heads_.push_back(nn::Conv2d("g.head" + std::to_string(s), ch, 3, 3, 1, 1, rng, opt));
        if (s + 1 < cfg_.output_scales.size()) {
            int next = std::max(8, ch / 2);
            ups_.push_back(nn::Conv2d("g.up" + std::to_string(s), ch, next, 3, 1, 1, rng, opt));
            ch = next;
        }
    }
}

Var Generator::encode_image(Tape& t, const Var& masked_rgbm, bool training) {
    const Tensor& x = masked_rgbm.val();
    check_shape(x.rank() == 4 && x.dim(1) == cfg_.in_channels && x.dim(2) == cfg_.resolution &&
                    x.dim(3) == cfg_.resolution,
                "encode_image expects (N," + std::to_string(cfg_.in_channels) + "," +
                    std::to_string(cfg_.resolution) + "," + std::to_string(cfg_.resolution) + ")");
    Var h = enc1_.forward(t, masked_rgbm, training);
    return enc2_.forward(t, h, training);
}

Var Generator::residual_step(Tape& t, const Var& features, int index, bool training) {
    return blocks_.at(static_cast<std::size_t>(index)).vis.forward(t, features, training);
}

ReasoningOut Generator::cgr_forward(Tape& t, const Var& c_map, const std::vector<Var>& nodes,
                                    const std::vector<Tensor>& norm_adjs, bool training) {
    ReasoningBlock& blk = blocks_.front();
    const Tensor& cm = c_map.val();
    check_shape(cm.rank() == 4, "cgr_forward expects NCHW features");
    int n = cm.dim(0), c = cm.dim(1), h = cm.dim(2), w = cm.dim(3);
    check_shape(static_cast<int>(nodes.size()) == n && static_cast<int>(norm_adjs.size()) == n,
                "cgr_forward: one graph per sample");
    int hw = h * w;

    ReasoningOut out;
    std::vector<Var> fused_rows;
    for (int i = 0; i < n; ++i) {
        Var v1 = gcn_forward(t, nodes[static_cast<std::size_t>(i)],
                             norm_adjs[static_cast<std::size_t>(i)], blk.gcn);
        Var v_star = ad::reshape(ad::mean_rows(v1), {1, cfg_.gcn_dim});

        Var c_rows = ad::spatial_to_rows(c_map, i); // (hw, c)
        Var v_rows = ad::row_broadcast(v_star, hw);
        Var alpha = ad::sigmoid(blk.gate_a.forward(t, ad::concat_cols(c_rows, v_rows), training));
        Var wr = blk.to_r.forward(t, c_rows, training);
        Var wg = ad::row_broadcast(blk.to_g.forward(t, v_star, training), hw);
        Var one_minus = ad::add_scalar(ad::neg(alpha), 1.0);
        Var r = ad::add(ad::mul_colvec(wr, alpha), ad::mul_colvec(wg, one_minus));
        fused_rows.push_back(r);
        out.nodes.push_back(v1);
        out.gates.push_back(alpha);
    }
    out.features = ad::rows_to_spatial(fused_rows, c, h, w);
    return out;
}

ReasoningOut Generator::fgr_forward(Tape& t, const Var& c_map, const std::vector<Var>& nodes,
                                    const std::vector<Tensor>& norm_adjs, bool training,
                                    int block) {
    if (block < 1 || block >= static_cast<int>(blocks_.size()))
        throw std::invalid_argument("fgr_forward: block index must be in [1, T)");
    ReasoningBlock& blk = blocks_[static_cast<std::size_t>(block)];
    const Tensor& cm = c_map.val();
    check_shape(cm.rank() == 4, "fgr_forward expects NCHW features");
    int n = cm.dim(0), c = cm.dim(1), h = cm.dim(2), w = cm.dim(3);
    check_shape(static_cast<int>(nodes.size()) == n && static_cast<int>(norm_adjs.size()) == n,
                "fgr_forward: one graph per sample");
    int hw = h * w;

    ReasoningOut out;
    std::vector<Var> fused_rows;
    for (int i = 0; i < n; ++i) {
        Var v = gcn_forward(t, nodes[static_cast<std::size_t>(i)],
                            norm_adjs[static_cast<std::size_t>(i)], blk.gcn);
        int nv = v.val().dim(0);

        Var c_rows = ad::spatial_to_rows(c_map, i);
        Var c_star = ad::reshape(ad::mean_rows(c_rows), {1, c});

        // per-node gate between the pooled visual context and the node itself
        Var c_rep = ad::row_broadcast(c_star, nv);
        Var beta = ad::sigmoid(blk.gate_a.forward(t, ad::concat_cols(c_rep, v), training));
        Var wr = ad::row_broadcast(blk.to_r.forward(t, c_star, training), nv);
        Var wg = blk.to_g.forward(t, v, training);
        Var one_minus = ad::add_scalar(ad::neg(beta), 1.0);
        Var o = ad::add(ad::mul_colvec(wr, beta), ad::mul_colvec(wg, one_minus)); // (nv, c)

        // region-to-word attention in the joint space
        Var scores = ad::matmul_nt(blk.att_l.forward(t, c_rows, training),
                                   blk.att_n.forward(t, o, training)); // (hw, nv)
        Var eps = ad::softmax_rows(scores);
        Var agg = ad::matmul(eps, blk.agg_m.forward(t, o, training)); // (hw, c)
        fused_rows.push_back(ad::add(c_rows, agg));
        out.nodes.push_back(v);
        out.gates.push_back(beta);
        out.attention.push_back(eps);
    }
    out.features = ad::rows_to_spatial(fused_rows, c, h, w);
    return out;
}

Var Generator::inject_latent(Tape& t, const Var& features, const Tensor& z, bool training) {
    check_shape(z.rank() == 2 && z.dim(1) == cfg_.latent_dim && z.dim(0) == features.val().dim(0),
                "inject_latent z (N,latent_dim)");
    Var zv = t.constant(z);
    Var proj = z_proj_.forward(t, zv, training);
    return ad::broadcast_add_channels(features, proj);
}

std::vector<Var> Generator::decode_multiscale(Tape& t, const Var& features, bool training) {
    std::vector<Var> outs;
    Var h = dec_.forward(t, features, training);
    for (std::size_t s = 0; s < heads_.size(); ++s) {
        Var pre = ad::leaky_relu(h, nn::ResBlock::kLeakySlope);
        outs.push_back(ad::tanh_op(heads_[s].forward(t, pre, training)));
        if (s + 1 < heads_.size()) {
            h = ups_[s].forward(t, ad::upsample_nearest2x(pre), training);
        }
    }
    return outs;
}

GeneratorResult Generator::generate(Tape& t, const Tensor& masked_rgbm,
                                    const std::vector<GraphInput>& graphs, const Tensor& z,
                                    bool training) {
    check_shape(masked_rgbm.rank() == 4, "generate expects batched input");
    int n = masked_rgbm.dim(0);
    check_shape(static_cast<int>(graphs.size()) == n, "generate: one graph per sample");

    Var input = t.constant(masked_rgbm);
    Var feat = encode_image(t, input, training);

    std::vector<Var> nodes;
    std::vector<Tensor> adjs;
    for (const GraphInput& g : graphs) {
        nodes.push_back(g.v0);
        adjs.push_back(g.norm_adj);
    }

    for (int b = 0; b < cfg_.reasoning_blocks; ++b) {
        Var c_map = residual_step(t, feat, b, training);
        ReasoningOut blk_out = b == 0 ? cgr_forward(t, c_map, nodes, adjs, training)
                                      : fgr_forward(t, c_map, nodes, adjs, training, b);
        feat = blk_out.features;
        nodes = std::move(blk_out.nodes);
    }

    feat = inject_latent(t, feat, z, training);

    GeneratorResult res;
    res.scales = decode_multiscale(t, feat, training);
    Var final_out = res.scales.back();
    if (cfg_.composite_output) {
        Tensor mask = hole_mask(masked_rgbm);
        Tensor context = masked_rgb(masked_rgbm);
        // context pixels pass through untouched; holes come from the model
        std::size_t plane = static_cast<std::size_t>(cfg_.resolution) * cfg_.resolution;
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < plane; ++i) {
                    std::size_t px = (static_cast<std::size_t>(b) * 3 + c) * plane + i;
                    context.data[px] *= 1.0 - mask.data[static_cast<std::size_t>(b) * plane + i];
                }
        res.composited = ad::add(ad::mul_mask(final_out, mask), t.constant(context));
    } else {
        res.composited = final_out;
    }
    return res;
}

void Generator::collect(std::vector<ad::Parameter*>& out) {
    enc1_.collect(out);
    enc2_.collect(out);
    for (auto& blk : blocks_) {
        blk.vis.collect(out);
        blk.gcn.collect(out);
        blk.gate_a.collect(out);
        blk.to_r.collect(out);
        blk.to_g.collect(out);
        if (&blk != &blocks_.front()) {
            blk.att_l.collect(out);
            blk.att_n.collect(out);
            blk.agg_m.collect(out);
        }
    }
    z_proj_.collect(out);
    dec_.collect(out);
    for (auto& hcv : heads_) hcv.collect(out);
    for (auto& u : ups_) u.collect(out);
}

std::vector<ad::Parameter*> Generator::parameters() {
    std::vector<ad::Parameter*> out;
    collect(out);
    return out;
}

void Generator::collect_sn(std::vector<nn::SnEntry>& out) {
    enc1_.collect_sn(out);
    enc2_.collect_sn(out);
    for (auto& blk : blocks_) {
        blk.vis.collect_sn(out);
        blk.gate_a.collect_sn(out);
        blk.to_r.collect_sn(out);
        blk.to_g.collect_sn(out);
        if (&blk != &blocks_.front()) {
            blk.att_l.collect_sn(out);
            blk.att_n.collect_sn(out);
            blk.agg_m.collect_sn(out);
        }
    }
    z_proj_.collect_sn(out);
    dec_.collect_sn(out);
    for (auto& hcv : heads_) hcv.collect_sn(out);
    for (auto& u : ups_) u.collect_sn(out);
}

Tensor masked_rgb(const Tensor& masked_rgbm) {
    check_shape(masked_rgbm.rank() == 4 && masked_rgbm.dim(1) >= 4, "masked_rgb expects RGB+mask");
    int n = masked_rgbm.dim(0), c = masked_rgbm.dim(1), h = masked_rgbm.dim(2), w = masked_rgbm.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out({n, 3, h, w});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < 3; ++ch)
            std::copy_n(masked_rgbm.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane,
                        plane, out.data.data() + (static_cast<std::size_t>(b) * 3 + ch) * plane);
    return out;
}

Tensor hole_mask(const Tensor& masked_rgbm) {
    check_shape(masked_rgbm.rank() == 4 && masked_rgbm.dim(1) >= 4, "hole_mask expects RGB+mask");
    int n = masked_rgbm.dim(0), c = masked_rgbm.dim(1), h = masked_rgbm.dim(2), w = masked_rgbm.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out({n, 1, h, w});
    for (int b = 0; b < n; ++b)
        std::copy_n(masked_rgbm.data.data() + (static_cast<std::size_t>(b) * c + 3) * plane, plane,
                    out.data.data() + static_cast<std::size_t>(b) * plane);
    return out;
}

} // namespace lsic
