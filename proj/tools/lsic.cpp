#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lsic/data.hpp"
#include "lsic/image.hpp"
#include "lsic/metrics.hpp"
#include "lsic/training.hpp"

namespace fs = std::filesystem;
using namespace lsic;

namespace {

Caption caption_from_text(const std::string& text) {
    Caption c;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        for (char& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        c.tokens.push_back(tok);
    }
    if (c.tokens.empty()) throw std::runtime_error("caption text is empty");
    c.dependency_edges = Caption::chain_edges(static_cast<int>(c.tokens.size()));
    return c;
}

MaskSpec mask_from_flag(const std::string& spec, int resolution, std::uint64_t seed) {
    std::size_t colon = spec.find(':');
    std::string kind = spec.substr(0, colon);
    if (kind == "center") {
        double fraction = 0.5;
        if (colon != std::string::npos) fraction = std::stod(spec.substr(colon + 1));
        return center_mask(resolution, fraction);
    }
    if (kind == "freeform") {
        Rng rng = seeded_rng(seed);
        return free_form_mask(resolution, rng);
    }
    throw std::runtime_error("unknown mask spec: " + spec + " (use center:FRACTION or freeform)");
}

Config load_run_config(const std::string& config_path, const std::vector<std::string>& sets) {
    Config cfg = config_path.empty() ? Config::parse("") : Config::from_file(config_path);
    for (const auto& kv : sets) cfg.apply_override(kv);
    return cfg;
}

int cmd_make_dataset(int n, int resolution, std::uint64_t seed, const std::string& out) {
    SyntheticOptions opt;
    opt.n_images = n;
    opt.resolution = resolution;
    opt.seed = seed;
    generate_synthetic_corpus(out, opt);
    auto records = load_dataset(out);
    std::size_t captions = 0;
    for (const auto& r : records) captions += r.captions.size();
    std::cout << "wrote " << records.size() << " images (" << resolution << "x" << resolution
              << "), " << captions << " captions to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& data, const std::string& out, const std::string& config_path,
              const std::vector<std::string>& sets, const std::string& stage_epochs,
              const std::string& resume, long seed) {
    Config cfg = load_run_config(config_path, sets);
    if (!stage_epochs.empty()) cfg.set("train.stage_epochs", stage_epochs);
    if (seed >= 0) cfg.set("seed", std::to_string(seed));

    Trainer trainer(cfg, data, out);
    if (!resume.empty()) trainer.resume_from(resume);
    trainer.run();
    std::cout << "training complete; checkpoints in " << out << "/checkpoints\n";
    return 0;
}

int cmd_eval(const std::string& data, const std::string& ckpt, const std::string& out,
             const std::string& mask_kind, double fraction, std::uint64_t seed, int limit,
             bool with_reg, bool with_is, int is_epochs) {
    InferenceBundle bundle = InferenceBundle::load(ckpt);
    int res = bundle.setup.gen.resolution;

    auto records = load_dataset(data);
    auto [train_recs, test_recs] =
        split_dataset(records, bundle.setup.split_ratio, bundle.setup.seed);
    if (limit > 0 && static_cast<int>(test_recs.size()) > limit)
        test_recs.resize(static_cast<std::size_t>(limit));
    if (test_recs.empty()) throw std::runtime_error("eval: empty test split");

    fs::create_directories(out);
    metrics::MetricReport report;
    report.metadata["checkpoint"] = ckpt;
    report.metadata["dataset"] = data;
    report.metadata["mask"] = mask_kind + (mask_kind == "center" ? ":" + std::to_string(fraction) : "");
    report.metadata["images"] = std::to_string(test_recs.size());

    Rng z_rng = seeded_rng(seed ^ 0x2f1ULL);
    Rng mask_rng = seeded_rng(seed ^ 0x9d3ULL);

    std::vector<Tensor> completions;
    std::vector<MaskSpec> masks;
    std::vector<metrics::Sentence> reg_captions;
    std::vector<std::vector<metrics::Sentence>> gt_captions;

    const int batch = 8;
    for (std::size_t at = 0; at < test_recs.size(); at += batch) {
        std::size_t hi = std::min(test_recs.size(), at + batch);
        std::vector<CompletionRequest> reqs;
        std::vector<MaskSpec> batch_masks;
        for (std::size_t i = at; i < hi; ++i) {
            batch_masks.push_back(mask_kind == "center" ? center_mask(res, fraction)
                                                        : free_form_mask(res, mask_rng));
        }
        for (std::size_t i = at; i < hi; ++i) {
            Tensor img = load_png(test_recs[i].image_path);
            reqs.push_back(CompletionRequest{std::move(img), &test_recs[i].captions.front(),
                                             &batch_masks[i - at]});
        }
        Tensor z({static_cast<int>(hi - at), bundle.setup.gen.latent_dim});
        for (double& v : z.data) v = z_rng.normal();
        Tensor comp = complete_batch(*bundle.gen, *bundle.embed, reqs, z);

        std::size_t plane = static_cast<std::size_t>(res) * res;
        for (std::size_t i = at; i < hi; ++i) {
            Tensor one({3, res, res});
            std::copy_n(comp.data.data() + (i - at) * 3 * plane, 3 * plane, one.data.data());
            const Tensor& gt = reqs[i - at].image;

            report.add("psnr", metrics::psnr(one, gt, 2.0));
            report.add("psnr_hole", metrics::psnr_masked(one, gt, batch_masks[i - at].mask, 2.0));
            report.add("tv_loss", metrics::tv_loss(one));
            report.add("ssim", metrics::ssim(one, gt));
            report.add("l1_hole", metrics::l1_masked(one, gt, batch_masks[i - at].mask));

            if (with_reg) {
                auto words = bundle.reg->generate(one, batch_masks[i - at].bbox,
                                                  bundle.setup.reg.max_len);
                reg_captions.push_back(words);
                std::vector<metrics::Sentence> refs;
                for (const auto& c : test_recs[i].captions) refs.push_back(c.tokens);
                gt_captions.push_back(refs);
            }
            completions.push_back(std::move(one));
            masks.push_back(batch_masks[i - at]);
        }
    }

    if (with_is) {
        bool labelled = !train_recs.empty() && !train_recs.front().class_label.empty();
        if (!labelled) {
            std::cerr << "eval: dataset has no class labels; skipping the IS proxy\n";
        } else {
            std::vector<std::string> classes;
            std::map<std::string, int> class_id;
            for (const auto& r : records)
                if (class_id.emplace(r.class_label, static_cast<int>(classes.size())).second)
                    classes.push_back(r.class_label);
            Rng crng = seeded_rng(seed ^ 0xc1f5ULL);
            metrics::ProxyClassifier clf(res, classes, crng);
            std::vector<Tensor> train_imgs;
            std::vector<int> train_labels;
            for (const auto& r : train_recs) {
                train_imgs.push_back(load_png(r.image_path));
                train_labels.push_back(class_id.at(r.class_label));
            }
            clf.train(train_imgs, train_labels, is_epochs, 16, 3e-3, crng);
            std::vector<std::vector<double>> probs;
            for (const auto& c : completions) probs.push_back(clf.predict(c));
            auto [is_mean, is_std] = metrics::inception_score(probs, 10);
            report.scalars["is_mean"] = is_mean;
            report.scalars["is_std"] = is_std;
        }
    }

    if (with_reg) {
        report.scalars["bleu4"] = metrics::corpus_bleu(reg_captions, gt_captions);
        report.scalars["cider"] = metrics::cider(reg_captions, gt_captions);
        for (std::size_t i = 0; i < reg_captions.size(); ++i) {
            report.add("rouge_l", metrics::rouge_l(reg_captions[i], gt_captions[i]));
            report.add("meteor_lite", metrics::meteor_lite(reg_captions[i], gt_captions[i]));
        }
    }

    report.save((fs::path(out) / "report.json").string(), (fs::path(out) / "report.txt").string());
    std::cout << report.to_table();
    std::cout << "report written to " << out << "\n";
    return 0;
}

int cmd_complete(const std::string& ckpt, const std::string& image_path,
                 const std::string& caption_text, const std::string& mask_spec, int n_samples,
                 std::uint64_t seed, const std::string& out) {
    InferenceBundle bundle = InferenceBundle::load(ckpt);
    int res = bundle.setup.gen.resolution;

    Tensor img = load_png(image_path);
    if (img.dim(1) != res || img.dim(2) != res) {
        std::cerr << "resizing input " << img.dim(2) << "x" << img.dim(1) << " -> " << res << "x"
                  << res << "\n";
        img = resize_nearest(img, res, res);
    }
    Caption caption = caption_from_text(caption_text);
    MaskSpec mask = mask_from_flag(mask_spec, res, seed);

    fs::create_directories(out);
    Tensor masked4 = apply_mask(img, mask);
    Tensor masked_rgb3({3, res, res});
    std::copy_n(masked4.data.data(), masked_rgb3.data.size(), masked_rgb3.data.data());
    save_png((fs::path(out) / "input_masked.png").string(), masked_rgb3);

    Rng rng = seeded_rng(seed);
    std::vector<CompletionRequest> reqs(static_cast<std::size_t>(n_samples),
                                        CompletionRequest{img, &caption, &mask});
    Tensor z({n_samples, bundle.setup.gen.latent_dim});
    for (double& v : z.data) v = rng.normal();
    Tensor comp = complete_batch(*bundle.gen, *bundle.embed, reqs, z);

    std::size_t plane = static_cast<std::size_t>(res) * res;
    for (int i = 0; i < n_samples; ++i) {
        Tensor one({3, res, res});
        std::copy_n(comp.data.data() + static_cast<std::size_t>(i) * 3 * plane, 3 * plane,
                    one.data.data());
        char name[64];
        std::snprintf(name, sizeof(name), "completion_%02d.png", i);
        save_png((fs::path(out) / name).string(), one);
    }
    std::cout << "wrote " << n_samples << " completions to " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lexical semantic image completion: text-conditioned inpainting with a "
                 "graph-reasoning generator, dual-path adversarial training and a referring "
                 "expression evaluator"};
    app.require_subcommand(1);

    // make-dataset
    auto* mk = app.add_subcommand("make-dataset", "Generate the procedural shape corpus");
    int mk_n = 1600, mk_res = 64;
    std::uint64_t mk_seed = 0;
    std::string mk_out;
    mk->add_option("--n", mk_n, "number of images (>= 2)");
    mk->add_option("--resolution", mk_res, "image side in pixels");
    mk->add_option("--seed", mk_seed, "corpus seed");
    mk->add_option("--out", mk_out, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "Run the multi-stage training procedure");
    std::string tr_data, tr_out, tr_config, tr_stage_epochs, tr_resume;
    std::vector<std::string> tr_sets;
    long tr_seed = -1;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "run directory (checkpoints, logs, samples)")->required();
    tr->add_option("--config", tr_config, "key = value config file");
    tr->add_option("--set", tr_sets, "config override key=value (repeatable)");
    tr->add_option("--stage-epochs", tr_stage_epochs, "comma list: supervision,warm,harmony");
    tr->add_option("--seed", tr_seed, "seed override");
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");

    // eval
    auto* ev = app.add_subcommand("eval", "Complete a test split and score it");
    std::string ev_data, ev_ckpt, ev_out, ev_mask = "center";
    double ev_fraction = 0.5;
    std::uint64_t ev_seed = 0;
    int ev_limit = 0, ev_is_epochs = 2;
    bool ev_reg = false, ev_is = false;
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
    ev->add_option("--out", ev_out, "report directory")->required();
    ev->add_option("--mask", ev_mask, "center or freeform")
        ->check(CLI::IsMember({"center", "freeform"}));
    ev->add_option("--fraction", ev_fraction, "center hole fraction");
    ev->add_option("--seed", ev_seed, "evaluation seed (z, freeform masks)");
    ev->add_option("--limit", ev_limit, "cap the number of evaluated images");
    ev->add_flag("--with-reg", ev_reg, "also score referring-expression metrics");
    ev->add_flag("--with-is", ev_is, "train the proxy classifier and report IS");
    ev->add_option("--is-epochs", ev_is_epochs, "proxy classifier epochs");

    // complete
    auto* co = app.add_subcommand("complete", "Fill a masked image from a text description");
    std::string co_ckpt, co_image, co_caption, co_mask = "center:0.5", co_out;
    int co_n = 1;
    std::uint64_t co_seed = 0;
    co->add_option("--checkpoint", co_ckpt, "trained checkpoint")->required();
    co->add_option("--image", co_image, "input PNG")->required();
    co->add_option("--caption", co_caption, "description of the masked content")->required();
    co->add_option("--mask", co_mask, "center:FRACTION or freeform");
    co->add_option("--n", co_n, "number of samples");
    co->add_option("--seed", co_seed, "sampling seed");
    co->add_option("--out", co_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1; // usage error
    }

    try {
        if (mk->parsed()) return cmd_make_dataset(mk_n, mk_res, mk_seed, mk_out);
        if (tr->parsed())
            return cmd_train(tr_data, tr_out, tr_config, tr_sets, tr_stage_epochs, tr_resume,
                             tr_seed);
        if (ev->parsed())
            return cmd_eval(ev_data, ev_ckpt, ev_out, ev_mask, ev_fraction, ev_seed, ev_limit,
                            ev_reg, ev_is, ev_is_epochs);
        if (co->parsed())
            return cmd_complete(co_ckpt, co_image, co_caption, co_mask, co_n, co_seed, co_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
