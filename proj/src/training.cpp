#include "lsic/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "lsic/image.hpp"

namespace lsic {

namespace fs = std::filesystem;
using nlohmann::json;

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::Supervision: return "supervision";
        case Stage::WarmStart: return "warm_start";
        case Stage::Harmony: return "harmony";
        case Stage::Done: return "done";
    }
    return "?";
}

TrainSetup TrainSetup::from_config(const Config& cfg) {
    TrainSetup s;
    int res = cfg.get_int("model.resolution", 64);
    s.gen = GeneratorConfig::defaults(res);
    s.gen.base_channels = cfg.get_int("model.base_channels", 32);
    s.gen.reasoning_channels = cfg.get_int("model.reasoning_channels", 64);
    s.gen.reasoning_blocks = cfg.get_int("model.reasoning_blocks", 3);
    s.gen.embed_dim = cfg.get_int("model.embed_dim", 128);
    s.gen.gcn_dim = cfg.get_int("model.gcn_dim", 64);
    s.gen.latent_dim = cfg.get_int("model.latent_dim", 64);
    s.gen.att_dim = cfg.get_int("model.att_dim", 64);
    s.gen.spectral_norm = cfg.get_bool("model.spectral_norm", true);
    s.gen.composite_output = cfg.get_bool("model.composite_output", true);
    s.gen.validate();

    s.disc_r.resolution = res;
    s.disc_r.base_channels = cfg.get_int("disc.base_channels", 32);
    s.disc_r.cond_dim = s.gen.embed_dim;
    s.disc_r.cond_channels = cfg.get_int("disc.cond_channels", 16);
    s.disc_r.spectral_norm = s.gen.spectral_norm;
    s.disc_c = s.disc_r;
    s.disc_c.cond_dim = 0;

    s.reg.enc_channels = cfg.get_int("reg.enc_channels", 12);
    s.reg.enc_out = cfg.get_int("reg.enc_out", 32);
    s.reg.embed_dim = cfg.get_int("reg.embed_dim", 48);
    s.reg.hidden_dim = cfg.get_int("reg.hidden_dim", 96);
    s.reg.att_dim = cfg.get_int("reg.att_dim", 48);
    s.reg.max_len = cfg.get_int("reg.max_len", 16);

    auto lambdas = cfg.get_double_list("loss.lambdas", {1.0, 20.0, 1.0});
    if (lambdas.size() != 3) throw std::runtime_error("loss.lambdas must have 3 entries");
    s.weights = LossWeights{lambdas[0], lambdas[1], lambdas[2]};
    s.weights.validate();

    s.adam.lr = cfg.get_double("train.lr", 1e-4);
    auto betas = cfg.get_double_list("train.betas", {0.0, 0.999});
    if (betas.size() != 2) throw std::runtime_error("train.betas must have 2 entries");
    s.adam.beta1 = betas[0];
    s.adam.beta2 = betas[1];

    s.batch_size = cfg.get_int("train.batch_size", 8);
    s.stage_epochs = cfg.get_int_list("train.stage_epochs", {20, 20, 30});
    if (s.stage_epochs.size() != 3) throw std::runtime_error("train.stage_epochs must have 3 entries");
    s.reg_epochs = cfg.get_int("train.reg_epochs", 10);
    s.reg_min_delta = cfg.get_double("train.reg_min_delta", 1e-3);
    s.reg_patience = cfg.get_int("train.reg_patience", 3);
    s.embed_hash_buckets = cfg.get_int("model.hash_buckets", 64);
    s.mask_kind = cfg.get_string("train.mask", "center");
    if (s.mask_kind != "center" && s.mask_kind != "freeform")
        throw std::runtime_error("train.mask must be center or freeform");
    s.mask_fraction = cfg.get_double("train.mask_fraction", 0.5);
    s.split_ratio = cfg.get_double("train.split_ratio", 0.75);
    s.checkpoint_interval = cfg.get_int("train.checkpoint_interval", 0);
    s.sample_interval = cfg.get_int("train.sample_interval", 0);
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    return s;
}

std::pair<const DatasetRecord*, const Caption*>
sample_unpaired(const std::vector<DatasetRecord>& records, std::size_t masked_index, Rng& rng) {
    if (records.size() < 2)
        throw std::runtime_error("sample_unpaired: need at least two caption groups");
    std::size_t donor = masked_index;
    while (donor == masked_index)
        donor = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(records.size()) - 1));
    const DatasetRecord& r = records[donor];
    const Caption& c =
        r.captions[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(r.captions.size()) - 1))];
    return {&r, &c};
}

Tensor complete_batch(Generator& gen, Embedder& embed, const std::vector<CompletionRequest>& reqs,
                      const Tensor& z, bool ablate_text) {
    if (reqs.empty()) throw std::invalid_argument("complete_batch: empty request list");
    const GeneratorConfig& gc = gen.config();
    int res = gc.resolution;
    int n = static_cast<int>(reqs.size());
    check_shape(z.rank() == 2 && z.dim(0) == n && z.dim(1) == gc.latent_dim, "complete_batch z");

    Tensor masked({n, 4, res, res});
    std::size_t sz = 4ul * res * res;
    std::vector<Tensor> hold; // keeps per-sample masked tensors alive
    for (int i = 0; i < n; ++i) {
        const auto& rq = reqs[static_cast<std::size_t>(i)];
        Tensor m = apply_mask(rq.image, *rq.mask);
        std::copy_n(m.data.data(), sz, masked.data.data() + static_cast<std::size_t>(i) * sz);
    }

    ad::Tape t;
    std::vector<GraphInput> graphs;
    for (const auto& rq : reqs) {
        SemanticGraph g;
        g.adjacency = build_adjacency(*rq.caption);
        Tensor feats = ablate_text
                           ? Tensor({static_cast<int>(rq.caption->tokens.size()), embed.dim()})
                           : embed.embed_tokens(rq.caption->tokens);
        g.node_features = feats;
        graphs.push_back(GraphInput{t.constant(std::move(feats)), g.normalized_adjacency()});
    }
    GeneratorResult out = gen.generate(t, masked, graphs, z, /*training=*/false);
    return out.composited.val();
}

// ---------------------------------------------------------------------------

namespace {

void zero_params(const std::vector<ad::Parameter*>& params) {
    for (ad::Parameter* p : params) p->zero_grad();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    return idx;
}

Tensor draw_z(int n, int dim, Rng& rng) {
    Tensor z({n, dim});
    for (double& v : z.data) v = rng.normal();
    return z;
}

} // namespace

Trainer::Trainer(const Config& cfg, const std::string& data_dir, const std::string& out_dir)
    : cfg_(cfg), setup_(TrainSetup::from_config(cfg)), out_dir_(out_dir) {
    fs::create_directories(out_dir_);
    fs::create_directories(fs::path(out_dir_) / "checkpoints");

    auto records = load_dataset(data_dir);
    auto [train, test] = split_dataset(records, setup_.split_ratio, setup_.seed);
    train_ = std::move(train);
    test_ = std::move(test);
    if (train_.size() < 2) throw std::runtime_error("trainer: training split too small");

    vocab_ = Vocabulary::from_corpus_tokens(collect_tokens(records));

    // deterministic construction order fixes every init draw
    Rng init = seeded_rng(setup_.seed ^ 0x1badb002ULL);
    std::vector<std::string> vocab_tokens(vocab_.tokens.begin() + 4, vocab_.tokens.end());
    embed_ = std::make_unique<Embedder>(vocab_tokens, setup_.gen.embed_dim,
                                        setup_.embed_hash_buckets, init);
    gen_ = std::make_unique<Generator>(setup_.gen, init);
    d_r_ = std::make_unique<PatchDiscriminator>(setup_.disc_r, init, "d_r");
    d_c_ = std::make_unique<PatchDiscriminator>(setup_.disc_c, init, "d_c");
    reg_ = std::make_unique<RegModel>(setup_.reg, vocab_, init);

    embed_->collect(g_params_);
    gen_->collect(g_params_);
    d_r_->collect(dr_params_);
    d_c_->collect(dc_params_);
    reg_->collect(reg_params_);

    opt_g_ = nn::Adam(setup_.adam);
    opt_dr_ = nn::Adam(setup_.adam);
    opt_dc_ = nn::Adam(setup_.adam);
    opt_reg_ = nn::Adam(setup_.adam);

    if (setup_.mask_kind == "center")
        fixed_mask_ = center_mask(setup_.gen.resolution, setup_.mask_fraction);

    log_.open(fs::path(out_dir_) / "log.jsonl", std::ios::app);
    if (!log_) throw std::runtime_error("trainer: cannot open log file");
}

const Tensor& Trainer::cached_image(const DatasetRecord& r) {
    auto it = image_cache_.find(r.image_id);
    if (it != image_cache_.end()) return it->second;
    Tensor img = load_png(r.image_path);
    if (img.dim(1) != setup_.gen.resolution || img.dim(2) != setup_.gen.resolution)
        throw std::runtime_error("trainer: image " + r.image_id + " is not at model resolution");
    return image_cache_.emplace(r.image_id, std::move(img)).first->second;
}

MaskSpec Trainer::training_mask(Rng& rng) const {
    if (fixed_mask_) return *fixed_mask_;
    return free_form_mask(setup_.gen.resolution, rng);
}

std::uint64_t Trainer::generator_hash() {
    std::vector<ad::Parameter*> g_only;
    gen_->collect(g_only);
    return nn::param_hash(g_only);
}

Tensor Trainer::condition_vector(const std::vector<const Caption*>& captions) const {
    int n = static_cast<int>(captions.size());
    Tensor v({n, setup_.gen.embed_dim});
    for (int i = 0; i < n; ++i) {
        Tensor e = embed_->embed_tokens(captions[static_cast<std::size_t>(i)]->tokens);
        Tensor pooled = mean_pool(e);
        for (int j = 0; j < setup_.gen.embed_dim; ++j) v.at2(i, j) = pooled.data[static_cast<std::size_t>(j)];
    }
    return v;
}

Trainer::Batch Trainer::make_batch(const std::vector<std::size_t>& idx, Rng& rng, bool unpaired) {
    int res = setup_.gen.resolution;
    int b = static_cast<int>(idx.size());
    Batch batch;
    batch.masked = Tensor({b, 4, res, res});
    batch.real = Tensor({b, 3, res, res});
    for (int s : setup_.gen.output_scales) batch.real_scales.push_back(Tensor({b, 3, s, s}));

    std::size_t m_sz = 4ul * res * res, r_sz = 3ul * res * res;
    for (int i = 0; i < b; ++i) {
        const DatasetRecord& rec = train_[idx[static_cast<std::size_t>(i)]];
        const Tensor& img = cached_image(rec);

        const Caption* cap = nullptr;
        if (unpaired) {
            cap = sample_unpaired(train_, idx[static_cast<std::size_t>(i)], rng).second;
        } else {
            cap = &rec.captions[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(rec.captions.size()) - 1))];
        }
        batch.captions.push_back(cap);

        MaskSpec mask = training_mask(rng);
        Tensor masked = apply_mask(img, mask);
        std::copy_n(masked.data.data(), m_sz, batch.masked.data.data() + static_cast<std::size_t>(i) * m_sz);
        std::copy_n(img.data.data(), r_sz, batch.real.data.data() + static_cast<std::size_t>(i) * r_sz);
        batch.boxes.push_back(mask.bbox);

        for (std::size_t s = 0; s < batch.real_scales.size(); ++s) {
            int sc = setup_.gen.output_scales[s];
            Tensor small = resize_area(img, sc, sc);
            std::copy_n(small.data.data(), 3ul * sc * sc,
                        batch.real_scales[s].data.data() + static_cast<std::size_t>(i) * 3ul * sc * sc);
        }

        std::vector<int> ids = vocab_.ids(cap->tokens);
        if (static_cast<int>(ids.size()) > setup_.reg.max_len)
            ids.resize(static_cast<std::size_t>(setup_.reg.max_len));
        batch.caption_ids.push_back(std::move(ids));
    }
    return batch;
}

std::vector<GraphInput> Trainer::graphs_on_tape(ad::Tape& t, const std::vector<const Caption*>& caps,
                                                bool trainable) {
    std::vector<GraphInput> out;
    for (const Caption* c : caps) {
        SemanticGraph g;
        g.adjacency = build_adjacency(*c);
        ad::Var v0 = trainable ? embed_->embed_tokens(t, c->tokens)
                               : t.constant(embed_->embed_tokens(c->tokens));
        out.push_back(GraphInput{v0, g.normalized_adjacency()});
    }
    return out;
}

Rng Trainer::epoch_rng(Stage stage, int epoch) const {
    std::uint64_t salt = static_cast<std::uint64_t>(stage) * 1000003ULL +
                         static_cast<std::uint64_t>(epoch) * 97ULL;
    return seeded_rng(Rng::mix(setup_.seed ^ 0xe90c4f11ULL) ^ Rng::mix(salt));
}

void Trainer::check_finite(double v, const std::string& what) {
    if (!std::isfinite(v))
        throw std::runtime_error("training aborted: non-finite " + what + " at iter " +
                                 std::to_string(total_iters_));
}

void Trainer::log_line(const std::string& line) {
    log_ << line << "\n";
    log_.flush();
}

void Trainer::log_iteration(Stage stage, int epoch, int iter,
                            const std::vector<std::pair<std::string, double>>& losses,
                            const std::vector<std::string>& steps) {
    json j;
    j["stage"] = stage_name(stage);
    j["epoch"] = epoch;
    j["iter"] = iter;
    json l;
    for (const auto& [k, v] : losses) l[k] = v;
    j["losses"] = l;
    j["steps"] = steps;
    log_line(j.dump());
}

void Trainer::log_event(const std::string& event, Stage stage, int epoch) {
    json j;
    j["event"] = event;
    j["stage"] = stage_name(stage);
    j["epoch"] = epoch;
    if (event == "epoch_end" || event == "stage_start" || event == "stage_end") {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(generator_hash()));
        j["g_hash"] = buf;
    }
    log_line(j.dump());
}

void Trainer::supervision_epoch(int epoch) {
    Rng rng = epoch_rng(Stage::Supervision, epoch);
    auto order = shuffled_indices(train_.size(), rng);
    int nb = std::max<std::size_t>(1, train_.size() / static_cast<std::size_t>(setup_.batch_size));

    for (int b = 0; b < nb; ++b) {
        std::vector<std::size_t> idx;
        for (int k = 0; k < setup_.batch_size; ++k)
            idx.push_back(order[(static_cast<std::size_t>(b) * setup_.batch_size + k) % order.size()]);
        Batch batch = make_batch(idx, rng, /*unpaired=*/false);
        Tensor v0 = condition_vector(batch.captions);
        Tensor z = draw_z(static_cast<int>(idx.size()), setup_.gen.latent_dim, rng);

        ad::Tape t;
        auto graphs = graphs_on_tape(t, batch.captions, /*trainable=*/true);
        GeneratorResult fake = gen_->generate(t, batch.masked, graphs, z, /*training=*/true);

        // discriminator update on the detached fake
        zero_params(dr_params_);
        ad::Var d_loss =
            recon_discriminator_loss(t, *d_r_, batch.real, fake.composited.val(), v0, true);
        check_finite(d_loss.val().item(), "recon discriminator loss");
        t.backward(d_loss);
        opt_dr_.step(dr_params_);

        // generator update against the refreshed discriminator
        zero_params(g_params_);
        zero_params(dr_params_);
        ad::Var g_loss = recon_generator_loss(t, *d_r_, fake.composited, fake.scales,
                                              batch.real_scales, v0, setup_.weights, true);
        check_finite(g_loss.val().item(), "recon generator loss");
        t.backward(g_loss);
        opt_g_.step(g_params_);

        ++total_iters_;
        log_iteration(Stage::Supervision, epoch, b,
                      {{"d_r", d_loss.val().item()}, {"g_recon", g_loss.val().item()}},
                      {"d_r", "g"});
    }
    log_event("epoch_end", Stage::Supervision, epoch);
}

double Trainer::reg_validation_ce() {
    // validation slice: last 10% of a seed-fixed shuffle of the train split
    Rng rng = seeded_rng(setup_.seed ^ 0x7e95ULL);
    auto order = shuffled_indices(train_.size(), rng);
    std::size_t n_val = std::max<std::size_t>(1, order.size() / 10);
    std::vector<std::size_t> val(order.end() - static_cast<long>(n_val), order.end());

    double total = 0.0;
    int count = 0;
    int bs = setup_.batch_size;
    Rng mask_rng = seeded_rng(setup_.seed ^ 0x7e96ULL);
    for (std::size_t at = 0; at < val.size(); at += static_cast<std::size_t>(bs)) {
        std::vector<std::size_t> idx(val.begin() + static_cast<long>(at),
                                     val.begin() + static_cast<long>(std::min(val.size(), at + bs)));
        Batch batch = make_batch(idx, mask_rng, false);
        ad::Tape t;
        ad::Var loss = reg_->teacher_forcing_loss(t, t.constant(batch.real), batch.boxes,
                                                  batch.caption_ids, /*training=*/false);
        total += loss.val().item();
        ++count;
    }
    return total / std::max(1, count);
}

void Trainer::reg_pretrain() {
    Rng split_rng = seeded_rng(setup_.seed ^ 0x7e95ULL);
    auto order = shuffled_indices(train_.size(), split_rng);
    std::size_t n_val = std::max<std::size_t>(1, order.size() / 10);
    std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<long>(n_val));

    while (reg_epochs_done_ < setup_.reg_epochs) {
        int epoch = ++reg_epochs_done_;
        Rng rng = epoch_rng(Stage::Supervision, 100000 + epoch);
        auto ep_order = train_idx;
        for (std::size_t i = ep_order.size(); i > 1; --i)
            std::swap(ep_order[i - 1],
                      ep_order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

        int nb = std::max<std::size_t>(1, ep_order.size() / static_cast<std::size_t>(setup_.batch_size));
        for (int b = 0; b < nb; ++b) {
            std::vector<std::size_t> idx;
            for (int k = 0; k < setup_.batch_size; ++k)
                idx.push_back(ep_order[(static_cast<std::size_t>(b) * setup_.batch_size + k) % ep_order.size()]);
            Batch batch = make_batch(idx, rng, false);
            ad::Tape t;
            zero_params(reg_params_);
            ad::Var loss = reg_->teacher_forcing_loss(t, t.constant(batch.real), batch.boxes,
                                                      batch.caption_ids, /*training=*/true);
            check_finite(loss.val().item(), "reg pretrain loss");
            t.backward(loss);
            opt_reg_.step(reg_params_);
            ++total_iters_;
            log_iteration(Stage::Supervision, epoch, b, {{"reg_ce", loss.val().item()}}, {"reg"});
        }

        double val_ce = reg_validation_ce();
        json j;
        j["event"] = "reg_epoch_end";
        j["epoch"] = epoch;
        j["val_ce"] = val_ce;
        log_line(j.dump());

        if (epoch == 1 || reg_best_val_ - val_ce >= setup_.reg_min_delta) {
            reg_best_val_ = epoch == 1 ? val_ce : std::min(reg_best_val_, val_ce);
            reg_stall_ = 0;
        } else if (++reg_stall_ >= setup_.reg_patience) {
            json stop;
            stop["event"] = "reg_early_stop";
            stop["epoch"] = epoch;
            log_line(stop.dump());
            break;
        }
    }
    reg_pretrained_ = true;
}

void Trainer::warm_epoch(int epoch) {
    Rng rng = epoch_rng(Stage::WarmStart, epoch);
    auto order = shuffled_indices(train_.size(), rng);
    int nb = std::max<std::size_t>(1, train_.size() / static_cast<std::size_t>(setup_.batch_size));

    for (int b = 0; b < nb; ++b) {
        std::vector<std::size_t> idx;
        for (int k = 0; k < setup_.batch_size; ++k)
            idx.push_back(order[(static_cast<std::size_t>(b) * setup_.batch_size + k) % order.size()]);
        Batch batch = make_batch(idx, rng, /*unpaired=*/true);
        Tensor z = draw_z(static_cast<int>(idx.size()), setup_.gen.latent_dim, rng);

        // frozen generator produces the fakes
        Tensor fake_img;
        {
            ad::Tape t;
            auto graphs = graphs_on_tape(t, batch.captions, /*trainable=*/false);
            GeneratorResult fake = gen_->generate(t, batch.masked, graphs, z, /*training=*/false);
            fake_img = fake.composited.val();
        }

        ad::Tape t;
        zero_params(dc_params_);
        ad::Var d_loss = creation_discriminator_loss(t, *d_c_, batch.real, fake_img, true);
        check_finite(d_loss.val().item(), "creation discriminator loss");
        t.backward(d_loss);
        opt_dc_.step(dc_params_);

        // REG adapts to the generated distribution
        zero_params(reg_params_);
        ad::Var reg_loss = reg_->teacher_forcing_loss(t, t.constant(fake_img), batch.boxes,
                                                      batch.caption_ids, /*training=*/true);
        check_finite(reg_loss.val().item(), "warm-start reg loss");
        t.backward(reg_loss);
        opt_reg_.step(reg_params_);

        ++total_iters_;
        log_iteration(Stage::WarmStart, epoch, b,
                      {{"d_c", d_loss.val().item()}, {"reg_ce", reg_loss.val().item()}},
                      {"d_c", "reg"});
    }
    log_event("epoch_end", Stage::WarmStart, epoch);
}

void Trainer::harmony_epoch(int epoch) {
    Rng rng = epoch_rng(Stage::Harmony, epoch);
    auto order_p = shuffled_indices(train_.size(), rng);
    auto order_u = shuffled_indices(train_.size(), rng);
    int nb = std::max<std::size_t>(1, train_.size() / static_cast<std::size_t>(setup_.batch_size));

    for (int b = 0; b < nb; ++b) {
        std::vector<std::size_t> idx_p, idx_u;
        for (int k = 0; k < setup_.batch_size; ++k) {
            idx_p.push_back(order_p[(static_cast<std::size_t>(b) * setup_.batch_size + k) % order_p.size()]);
            idx_u.push_back(order_u[(static_cast<std::size_t>(b) * setup_.batch_size + k) % order_u.size()]);
        }

        // paired reconstruction half
        Batch paired = make_batch(idx_p, rng, false);
        Tensor v0 = condition_vector(paired.captions);
        Tensor z_p = draw_z(static_cast<int>(idx_p.size()), setup_.gen.latent_dim, rng);
        double d_r_v, g_r_v;
        {
            ad::Tape t;
            auto graphs = graphs_on_tape(t, paired.captions, true);
            GeneratorResult fake = gen_->generate(t, paired.masked, graphs, z_p, true);

            zero_params(dr_params_);
            ad::Var d_loss =
                recon_discriminator_loss(t, *d_r_, paired.real, fake.composited.val(), v0, true);
            check_finite(d_loss.val().item(), "harmony d_r loss");
            t.backward(d_loss);
            opt_dr_.step(dr_params_);

            zero_params(g_params_);
            zero_params(dr_params_);
            ad::Var g_loss = recon_generator_loss(t, *d_r_, fake.composited, fake.scales,
                                                  paired.real_scales, v0, setup_.weights, true);
            check_finite(g_loss.val().item(), "harmony g recon loss");
            t.backward(g_loss);
            opt_g_.step(g_params_);
            d_r_v = d_loss.val().item();
            g_r_v = g_loss.val().item();
        }

        // unpaired creation half
        Batch unpaired = make_batch(idx_u, rng, true);
        Tensor z_u = draw_z(static_cast<int>(idx_u.size()), setup_.gen.latent_dim, rng);
        double d_c_v, g_c_v, ctx_v;
        {
            ad::Tape t;
            auto graphs = graphs_on_tape(t, unpaired.captions, true);
            GeneratorResult fake = gen_->generate(t, unpaired.masked, graphs, z_u, true);

            zero_params(dc_params_);
            ad::Var d_loss = creation_discriminator_loss(t, *d_c_, unpaired.real,
                                                         fake.composited.val(), true);
            check_finite(d_loss.val().item(), "harmony d_c loss");
            t.backward(d_loss);
            opt_dc_.step(dc_params_);

            zero_params(g_params_);
            zero_params(dc_params_);
            zero_params(reg_params_); // REG stays frozen; gradient only flows through it
            ad::Var context = reg_->teacher_forcing_loss(t, fake.composited, unpaired.boxes,
                                                         unpaired.caption_ids, /*training=*/false);
            ad::Var g_loss =
                creation_generator_loss(t, *d_c_, fake.composited, context, setup_.weights, true);
            check_finite(g_loss.val().item(), "harmony g creation loss");
            t.backward(g_loss);
            opt_g_.step(g_params_);
            d_c_v = d_loss.val().item();
            g_c_v = g_loss.val().item();
            ctx_v = context.val().item();
        }

        ++total_iters_;
        log_iteration(Stage::Harmony, epoch, b,
                      {{"d_r", d_r_v}, {"g_recon", g_r_v}, {"d_c", d_c_v}, {"g_creation", g_c_v},
                       {"context_ce", ctx_v}},
                      {"d_r", "g", "d_c", "g"});
    }
    log_event("epoch_end", Stage::Harmony, epoch);
}

void Trainer::write_samples(const std::string& tag) {
    if (test_.empty()) return;
    int res = setup_.gen.resolution;
    int count = std::min<std::size_t>(8, test_.size());
    Rng rng = seeded_rng(setup_.seed ^ 0x5a31e5ULL);

    std::vector<CompletionRequest> reqs;
    std::vector<Tensor> tiles;
    Rng mask_rng = seeded_rng(setup_.seed ^ 0xa55e7ULL);
    std::vector<MaskSpec> masks;
    for (int i = 0; i < count; ++i) {
        masks.push_back(training_mask(mask_rng));
        reqs.push_back(CompletionRequest{cached_image(test_[static_cast<std::size_t>(i)]),
                                         &test_[static_cast<std::size_t>(i)].captions.front(),
                                         &masks.back()});
    }
    Tensor z = draw_z(count, setup_.gen.latent_dim, rng);
    Tensor completed = complete_batch(*gen_, *embed_, reqs, z);

    std::size_t plane = static_cast<std::size_t>(res) * res;
    for (int i = 0; i < count; ++i) {
        tiles.push_back(reqs[static_cast<std::size_t>(i)].image);
        Tensor masked({3, res, res});
        Tensor m4 = apply_mask(reqs[static_cast<std::size_t>(i)].image, masks[static_cast<std::size_t>(i)]);
        std::copy_n(m4.data.data(), 3 * plane, masked.data.data());
        tiles.push_back(masked);
        Tensor comp({3, res, res});
        std::copy_n(completed.data.data() + static_cast<std::size_t>(i) * 3 * plane, 3 * plane,
                    comp.data.data());
        tiles.push_back(comp);
    }
    fs::create_directories(fs::path(out_dir_) / "samples");
    save_png((fs::path(out_dir_) / "samples" / (tag + ".png")).string(), image_grid(tiles, 3));
}

void Trainer::save_checkpoint(const std::string& path) {
    Checkpoint ck;
    ck.config_text = cfg_.serialize();
    ck.put_params(g_params_);
    ck.put_params(dr_params_);
    ck.put_params(dc_params_);
    ck.put_params(reg_params_);

    std::vector<nn::SnEntry> sn;
    gen_->collect_sn(sn);
    d_r_->collect_sn(sn);
    d_c_->collect_sn(sn);
    reg_->collect_sn(sn);
    for (auto& [name, st] : sn) {
        if (!st->initialized) continue;
        ck.put_tensor(name + ".sn_u", st->u);
        ck.put_tensor(name + ".sn_v", st->v);
    }

    {
        std::string vocab_text;
        for (const auto& tok : vocab_.tokens) vocab_text += tok + "\n";
        ck.put_string("vocab", vocab_text);
    }
    ck.put_string("stage", stage_name(stage_));
    ck.put_string("epochs_done", std::to_string(epochs_done_));
    ck.put_string("reg_pretrained", reg_pretrained_ ? "1" : "0");
    ck.put_string("reg_epochs_done", std::to_string(reg_epochs_done_));
    ck.put_string("reg_best_val", std::to_string(reg_best_val_));
    ck.put_string("reg_stall", std::to_string(reg_stall_));
    ck.put_string("total_iters", std::to_string(total_iters_));
    ck.put_string("opt_g_t", std::to_string(opt_g_.steps_taken()));
    ck.put_string("opt_dr_t", std::to_string(opt_dr_.steps_taken()));
    ck.put_string("opt_dc_t", std::to_string(opt_dc_.steps_taken()));
    ck.put_string("opt_reg_t", std::to_string(opt_reg_.steps_taken()));
    ck.save(path);

    fs::copy_file(path, fs::path(out_dir_) / "checkpoints" / "latest.ckpt",
                  fs::copy_options::overwrite_existing);
}

void Trainer::resume_from(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    Config saved = Config::parse(ck.config_text);
    if (!saved.model_compatible(cfg_))
        throw std::runtime_error("resume: checkpoint model config is incompatible");

    ck.restore_params(g_params_);
    ck.restore_params(dr_params_);
    ck.restore_params(dc_params_);
    ck.restore_params(reg_params_);

    std::vector<nn::SnEntry> sn;
    gen_->collect_sn(sn);
    d_r_->collect_sn(sn);
    d_c_->collect_sn(sn);
    reg_->collect_sn(sn);
    for (auto& [name, st] : sn) {
        if (!ck.has_tensor(name + ".sn_u")) continue;
        st->u = ck.tensor(name + ".sn_u");
        st->v = ck.tensor(name + ".sn_v");
        st->initialized = true;
    }

    std::string st = ck.string_or("stage", "supervision");
    if (st == "supervision") stage_ = Stage::Supervision;
    else if (st == "warm_start") stage_ = Stage::WarmStart;
    else if (st == "harmony") stage_ = Stage::Harmony;
    else stage_ = Stage::Done;
    epochs_done_ = std::stoi(ck.string_or("epochs_done", "0"));
    reg_pretrained_ = ck.string_or("reg_pretrained", "0") == "1";
    reg_epochs_done_ = std::stoi(ck.string_or("reg_epochs_done", "0"));
    reg_best_val_ = std::stod(ck.string_or("reg_best_val", "0"));
    reg_stall_ = std::stoi(ck.string_or("reg_stall", "0"));
    total_iters_ = std::stol(ck.string_or("total_iters", "0"));
    opt_g_.set_steps_taken(std::stol(ck.string_or("opt_g_t", "0")));
    opt_dr_.set_steps_taken(std::stol(ck.string_or("opt_dr_t", "0")));
    opt_dc_.set_steps_taken(std::stol(ck.string_or("opt_dc_t", "0")));
    opt_reg_.set_steps_taken(std::stol(ck.string_or("opt_reg_t", "0")));
}

InferenceBundle InferenceBundle::load(const std::string& checkpoint_path) {
    Checkpoint ck = Checkpoint::load(checkpoint_path);
    InferenceBundle b;
    b.config = Config::parse(ck.config_text);
    b.setup = TrainSetup::from_config(b.config);

    std::string vocab_text = ck.string_or("vocab", "");
    if (vocab_text.empty()) throw std::runtime_error("checkpoint: missing vocabulary");
    std::istringstream vs(vocab_text);
    std::string tok;
    while (std::getline(vs, tok))
        if (!tok.empty()) b.vocab.tokens.push_back(tok);
    for (int i = 0; i < static_cast<int>(b.vocab.tokens.size()); ++i)
        b.vocab.index[b.vocab.tokens[static_cast<std::size_t>(i)]] = i;

    Rng init = seeded_rng(b.setup.seed ^ 0x1badb002ULL);
    std::vector<std::string> vocab_tokens(b.vocab.tokens.begin() + 4, b.vocab.tokens.end());
    b.embed = std::make_unique<Embedder>(vocab_tokens, b.setup.gen.embed_dim,
                                         b.setup.embed_hash_buckets, init);
    b.gen = std::make_unique<Generator>(b.setup.gen, init);
    // keep the construction RNG stream aligned with the trainer's
    PatchDiscriminator dr(b.setup.disc_r, init, "d_r");
    PatchDiscriminator dc(b.setup.disc_c, init, "d_c");
    b.reg = std::make_unique<RegModel>(b.setup.reg, b.vocab, init);

    std::vector<ad::Parameter*> params;
    b.embed->collect(params);
    b.gen->collect(params);
    b.reg->collect(params);
    ck.restore_params(params);

    std::vector<nn::SnEntry> sn;
    b.gen->collect_sn(sn);
    b.reg->collect_sn(sn);
    for (auto& [name, st] : sn) {
        if (!ck.has_tensor(name + ".sn_u")) continue;
        st->u = ck.tensor(name + ".sn_u");
        st->v = ck.tensor(name + ".sn_v");
        st->initialized = true;
    }
    return b;
}

void Trainer::run() {
    fs::path ckdir = fs::path(out_dir_) / "checkpoints";

    while (stage_ != Stage::Done) {
        if (stage_ == Stage::Supervision) {
            if (epochs_done_ == 0 && !reg_pretrained_) log_event("stage_start", stage_, 0);
            while (epochs_done_ < setup_.stage_epochs[0]) {
                supervision_epoch(++epochs_done_);
                if (setup_.checkpoint_interval > 0 && epochs_done_ % setup_.checkpoint_interval == 0)
                    save_checkpoint((ckdir / ("supervision_epoch_" + std::to_string(epochs_done_) +
                                              ".ckpt")).string());
                if (setup_.sample_interval > 0 && epochs_done_ % setup_.sample_interval == 0)
                    write_samples("supervision_" + std::to_string(epochs_done_));
            }
            if (!reg_pretrained_) reg_pretrain();
            log_event("stage_end", stage_, epochs_done_);
            stage_ = Stage::WarmStart;
            epochs_done_ = 0;
            save_checkpoint((ckdir / "after_supervision.ckpt").string());
        } else if (stage_ == Stage::WarmStart) {
            if (epochs_done_ == 0) log_event("stage_start", stage_, 0);
            std::uint64_t frozen_hash = generator_hash();
            while (epochs_done_ < setup_.stage_epochs[1]) {
                warm_epoch(++epochs_done_);
                if (generator_hash() != frozen_hash)
                    throw std::logic_error("warm-start stage modified generator parameters");
                if (setup_.checkpoint_interval > 0 && epochs_done_ % setup_.checkpoint_interval == 0)
                    save_checkpoint((ckdir / ("warm_epoch_" + std::to_string(epochs_done_) +
                                              ".ckpt")).string());
            }
            log_event("stage_end", stage_, epochs_done_);
            stage_ = Stage::Harmony;
            epochs_done_ = 0;
            save_checkpoint((ckdir / "after_warmstart.ckpt").string());
        } else if (stage_ == Stage::Harmony) {
            if (epochs_done_ == 0) log_event("stage_start", stage_, 0);
            while (epochs_done_ < setup_.stage_epochs[2]) {
                harmony_epoch(++epochs_done_);
                if (setup_.checkpoint_interval > 0 && epochs_done_ % setup_.checkpoint_interval == 0)
                    save_checkpoint((ckdir / ("harmony_epoch_" + std::to_string(epochs_done_) +
                                              ".ckpt")).string());
                if (setup_.sample_interval > 0 && epochs_done_ % setup_.sample_interval == 0)
                    write_samples("harmony_" + std::to_string(epochs_done_));
            }
            log_event("stage_end", stage_, epochs_done_);
            stage_ = Stage::Done;
            epochs_done_ = 0;
            save_checkpoint((ckdir / "final.ckpt").string());
        }
    }
}

} // namespace lsic
