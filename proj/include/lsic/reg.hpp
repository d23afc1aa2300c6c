#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lsic/autodiff.hpp"
#include "lsic/nn.hpp"
#include "lsic/textgraph.hpp"

namespace lsic {

// Token table with reserved ids 0..3 = PAD, BOS, EOS, UNK.
struct Vocabulary {
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int UNK = 3;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;

    static Vocabulary from_corpus_tokens(const std::vector<std::string>& corpus_tokens);
    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;

    int id(const std::string& token) const;
    std::vector<int> ids(const std::vector<std::string>& toks) const;
    int size() const { return static_cast<int>(tokens.size()); }
};

// Axis-aligned pixel box; top/left inclusive.
struct BoxSpec {
    int top = 0, left = 0, height = 0, width = 0;

    void validate(int image_h, int image_w) const;
    ad::CropBox crop() const { return {top, left, height, width}; }
};

struct RegConfig {
    int enc_channels = 12; // first encoder width; doubles per downsampling
    int enc_out = 32;      // per-branch output channels
    int embed_dim = 48;
    int hidden_dim = 96;
    int att_dim = 48;
    int max_len = 16;
    bool spectral_norm = false; // trained by cross entropy alone

    void validate() const;
};

// Captioning model over a boxed region: the box content is upsampled to the
// full image size and encoded with the same CNN as the context image, then a
// GRU with additive attention over the joint code decodes the expression.
class RegModel {
public:
    RegModel() = default;
    RegModel(const RegConfig& cfg, const Vocabulary& vocab, Rng& rng);

    const RegConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }

    // joint code (N, 2*enc_out, H/8, W/8)
    ad::Var encode(ad::Tape& t, const ad::Var& image, const std::vector<BoxSpec>& boxes,
                   bool training);

    // Mean over timesteps (and batch) of -log P(target token | prefix).
    // Captions are raw token ids without BOS/EOS.
    ad::Var teacher_forcing_loss(ad::Tape& t, const ad::Var& image,
                                 const std::vector<BoxSpec>& boxes,
                                 const std::vector<std::vector<int>>& captions, bool training);

    // Greedy argmax decoding; returns tokens without BOS/EOS.
    std::vector<std::string> generate(const Tensor& image, const BoxSpec& box, int max_len);
    std::vector<int> generate_ids(const Tensor& image, const BoxSpec& box, int max_len);

    void collect(std::vector<ad::Parameter*>& out);
    void collect_sn(std::vector<nn::SnEntry>& out);
    std::vector<ad::Parameter*> parameters();

private:
    ad::Var encode_branch(ad::Tape& t, const ad::Var& x, bool training);
    // one decoder step; returns (logits (1,V), new hidden (1,H))
    std::pair<ad::Var, ad::Var> decode_step(ad::Tape& t, int prev_token, const ad::Var& hidden,
                                            const ad::Var& annotations, const ad::Var& att_keys,
                                            bool training);

    RegConfig cfg_;
    Vocabulary vocab_;
    nn::Conv2d e1_, e2_, e3_;
    ad::Parameter tok_embed_;
    nn::Dense init_h_;
    nn::Dense att_h_, att_s_, att_v_;
    nn::Dense gru_r_, gru_z_, gru_n_;
    nn::Dense out_;
};

} // namespace lsic
