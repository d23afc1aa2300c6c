#include "lsic/reg.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace lsic {

using ad::Tape;
using ad::Var;

Vocabulary Vocabulary::from_corpus_tokens(const std::vector<std::string>& corpus_tokens) {
    Vocabulary v;
    v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
    std::set<std::string> uniq(corpus_tokens.begin(), corpus_tokens.end());
    for (const auto& t : uniq) v.tokens.push_back(t);
    for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.index[v.tokens[static_cast<std::size_t>(i)]] = i;
    return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("vocabulary: cannot open " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) v.tokens.push_back(line);
    if (v.tokens.size() < 4) throw std::runtime_error("vocabulary: missing reserved tokens in " + path);
    for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.index[v.tokens[static_cast<std::size_t>(i)]] = i;
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("vocabulary: cannot write " + path);
    for (const auto& t : tokens) out << t << "\n";
}

int Vocabulary::id(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? UNK : it->second;
}

std::vector<int> Vocabulary::ids(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
}

void BoxSpec::validate(int image_h, int image_w) const {
    if (height <= 0 || width <= 0) throw std::invalid_argument("box: empty area");
    if (top < 0 || left < 0 || top + height > image_h || left + width > image_w)
        throw std::invalid_argument("box: outside image bounds");
}

void RegConfig::validate() const {
    if (enc_channels < 1 || enc_out < 1 || embed_dim < 1 || hidden_dim < 1 || att_dim < 1)
        throw std::invalid_argument("reg: dims must be positive");
    if (max_len < 0) throw std::invalid_argument("reg: max_len");
}

RegModel::RegModel(const RegConfig& cfg, const Vocabulary& vocab, Rng& rng)
    : cfg_(cfg), vocab_(vocab) {
    cfg_.validate();
    nn::LayerOptions opt;
    opt.spectral_norm = cfg_.spectral_norm;

    int c1 = cfg_.enc_channels;
    int c2 = 2 * c1;
    e1_ = nn::Conv2d("reg.e1", 3, c1, 3, 2, 1, rng, opt);
    e2_ = nn::Conv2d("reg.e2", c1, c2, 3, 2, 1, rng, opt);
    e3_ = nn::Conv2d("reg.e3", c2, cfg_.enc_out, 3, 2, 1, rng, opt);

    Tensor emb({vocab_.size(), cfg_.embed_dim});
    for (double& x : emb.data) x = rng.normal(0.0, 0.1);
    tok_embed_ = ad::Parameter("reg.tok_embed", std::move(emb));

    int ds = 2 * cfg_.enc_out;
    init_h_ = nn::Dense("reg.init_h", ds, cfg_.hidden_dim, rng, opt);
    att_h_ = nn::Dense("reg.att_h", cfg_.hidden_dim, cfg_.att_dim, rng, opt);
    att_s_ = nn::Dense("reg.att_s", ds, cfg_.att_dim, rng, opt);
    att_v_ = nn::Dense("reg.att_v", cfg_.att_dim, 1, rng, opt);

    int xin = cfg_.embed_dim + ds;
    gru_r_ = nn::Dense("reg.gru_r", xin + cfg_.hidden_dim, cfg_.hidden_dim, rng, opt);
    gru_z_ = nn::Dense("reg.gru_z", xin + cfg_.hidden_dim, cfg_.hidden_dim, rng, opt);
    gru_n_ = nn::Dense("reg.gru_n", xin + cfg_.hidden_dim, cfg_.hidden_dim, rng, opt);
    out_ = nn::Dense("reg.out", cfg_.hidden_dim + ds, vocab_.size(), rng, opt);
}

Var RegModel::encode_branch(Tape& t, const Var& x, bool training) {
    Var h = ad::leaky_relu(e1_.forward(t, x, training), nn::ResBlock::kLeakySlope);
    h = ad::leaky_relu(e2_.forward(t, h, training), nn::ResBlock::kLeakySlope);
    return ad::leaky_relu(e3_.forward(t, h, training), nn::ResBlock::kLeakySlope);
}

Var RegModel::encode(Tape& t, const Var& image, const std::vector<BoxSpec>& boxes, bool training) {
    const Tensor& img = image.val();
    check_shape(img.rank() == 4 && img.dim(1) == 3, "reg encode expects (N,3,H,W)");
    check_shape(static_cast<int>(boxes.size()) == img.dim(0), "reg encode: one box per sample");
    std::vector<ad::CropBox> crops;
    for (const BoxSpec& b : boxes) {
        b.validate(img.dim(2), img.dim(3));
        crops.push_back(b.crop());
    }
    // target region upsampled to the image size, both branches share weights
    Var target = ad::crop_resize_nearest(image, crops, img.dim(2), img.dim(3));
    Var ctx_code = encode_branch(t, image, training);
    Var tgt_code = encode_branch(t, target, training);
    return ad::concat_channels(ctx_code, tgt_code);
}

std::pair<Var, Var> RegModel::decode_step(Tape& t, int prev_token, const Var& hidden,
                                          const Var& annotations, const Var& att_keys,
                                          bool training) {
    int regions = annotations.val().dim(0);
    Var emb = ad::gather_rows(t.param(tok_embed_), {prev_token}); // (1,De)

    // additive attention over annotation rows
    Var q = att_h_.forward(t, hidden, training); // (1,A)
    Var scores_in = ad::tanh_op(ad::add(att_keys, ad::row_broadcast(q, regions)));
    Var scores = att_v_.forward(t, scores_in, training); // (R,1)
    Var att = ad::softmax_rows(ad::reshape(scores, {1, regions}));
    Var ctx = ad::matmul(att, annotations); // (1,Ds)

    Var x = ad::concat_cols(emb, ctx);
    Var xh = ad::concat_cols(x, hidden);
    Var r = ad::sigmoid(gru_r_.forward(t, xh, training));
    Var z = ad::sigmoid(gru_z_.forward(t, xh, training));
    Var n = ad::tanh_op(gru_n_.forward(t, ad::concat_cols(x, ad::mul(r, hidden)), training));
    Var one_minus_z = ad::add_scalar(ad::neg(z), 1.0);
    Var h_new = ad::add(ad::mul(one_minus_z, n), ad::mul(z, hidden));

    Var logits = out_.forward(t, ad::concat_cols(h_new, ctx), training);
    return {logits, h_new};
}

Var RegModel::teacher_forcing_loss(Tape& t, const Var& image, const std::vector<BoxSpec>& boxes,
                                   const std::vector<std::vector<int>>& captions, bool training) {
    const Tensor& img = image.val();
    int n = img.dim(0);
    check_shape(static_cast<int>(captions.size()) == n, "teacher_forcing_loss: captions per sample");
    for (const auto& c : captions)
        if (static_cast<int>(c.size()) > cfg_.max_len)
            throw std::invalid_argument("teacher_forcing_loss: caption exceeds max_len");

    Var joint = encode(t, image, boxes, training);
    Var total = t.constant(Tensor::scalar(0.0));
    for (int i = 0; i < n; ++i) {
        Var ann = ad::spatial_to_rows(joint, i); // (R, Ds)
        Var keys = att_s_.forward(t, ann, training);
        Var h = ad::tanh_op(
            init_h_.forward(t, ad::reshape(ad::mean_rows(ann), {1, 2 * cfg_.enc_out}), training));

        const std::vector<int>& cap = captions[static_cast<std::size_t>(i)];
        std::vector<int> inputs{Vocabulary::BOS};
        inputs.insert(inputs.end(), cap.begin(), cap.end());
        std::vector<int> targets = cap;
        targets.push_back(Vocabulary::EOS);

        Var sample_loss = t.constant(Tensor::scalar(0.0));
        for (std::size_t step = 0; step < inputs.size(); ++step) {
            auto [logits, h_new] = decode_step(t, inputs[step], h, ann, keys, training);
            sample_loss = ad::add(sample_loss, ad::cross_entropy_rows(logits, {targets[step]}));
            h = h_new;
        }
        total = ad::add(total, ad::mul_scalar(sample_loss, 1.0 / static_cast<double>(inputs.size())));
    }
    return ad::mul_scalar(total, 1.0 / static_cast<double>(n));
}

std::vector<int> RegModel::generate_ids(const Tensor& image, const BoxSpec& box, int max_len) {
    check_shape(image.rank() == 4 ? image.dim(0) == 1 : image.rank() == 3,
                "generate expects a single image");
    Tensor batched = image;
    if (image.rank() == 3) batched = Tensor({1, image.dim(0), image.dim(1), image.dim(2)}, image.data);

    Tape t;
    Var img = t.constant(batched);
    Var joint = encode(t, img, {box}, /*training=*/false);
    Var ann = ad::spatial_to_rows(joint, 0);
    Var keys = att_s_.forward(t, ann, false);
    Var h = ad::tanh_op(
        init_h_.forward(t, ad::reshape(ad::mean_rows(ann), {1, 2 * cfg_.enc_out}), false));

    std::vector<int> out;
    int prev = Vocabulary::BOS;
    for (int step = 0; step < max_len; ++step) {
        auto [logits, h_new] = decode_step(t, prev, h, ann, keys, false);
        const Tensor& lv = logits.val();
        int best = 0;
        for (int j = 1; j < lv.dim(1); ++j)
            if (lv.at2(0, j) > lv.at2(0, best)) best = j;
        if (best == Vocabulary::EOS) break;
        out.push_back(best);
        prev = best;
        h = h_new;
    }
    return out;
}

std::vector<std::string> RegModel::generate(const Tensor& image, const BoxSpec& box, int max_len) {
    std::vector<std::string> words;
    for (int id : generate_ids(image, box, max_len))
        words.push_back(vocab_.tokens[static_cast<std::size_t>(id)]);
    return words;
}

void RegModel::collect(std::vector<ad::Parameter*>& out) {
    e1_.collect(out);
    e2_.collect(out);
    e3_.collect(out);
    out.push_back(&tok_embed_);
    init_h_.collect(out);
    att_h_.collect(out);
    att_s_.collect(out);
    att_v_.collect(out);
    gru_r_.collect(out);
    gru_z_.collect(out);
    gru_n_.collect(out);
    out_.collect(out);
}

std::vector<ad::Parameter*> RegModel::parameters() {
    std::vector<ad::Parameter*> out;
    collect(out);
    return out;
}

void RegModel::collect_sn(std::vector<nn::SnEntry>& out) {
    e1_.collect_sn(out);
    e2_.collect_sn(out);
    e3_.collect_sn(out);
    init_h_.collect_sn(out);
    att_h_.collect_sn(out);
    att_s_.collect_sn(out);
    att_v_.collect_sn(out);
    gru_r_.collect_sn(out);
    gru_z_.collect_sn(out);
    gru_n_.collect_sn(out);
    out_.collect_sn(out);
}

} // namespace lsic
