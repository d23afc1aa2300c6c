#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lsic/adversary.hpp"
#include "lsic/checkpoint.hpp"
#include "lsic/config.hpp"
#include "lsic/data.hpp"
#include "lsic/generator.hpp"
#include "lsic/losses.hpp"
#include "lsic/reg.hpp"

namespace lsic {

enum class Stage { Supervision, WarmStart, Harmony, Done };
const char* stage_name(Stage s);

// Resolved training options; every key has a documented config-file name.
struct TrainSetup {
    GeneratorConfig gen;
    DiscriminatorConfig disc_r, disc_c;
    RegConfig reg;
    LossWeights weights;
    nn::AdamConfig adam;

    int batch_size = 8;
    std::vector<int> stage_epochs{20, 20, 30};
    int reg_epochs = 10;         // "until convergence" budget
    double reg_min_delta = 1e-3; // early-stop threshold on validation CE
    int reg_patience = 3;
    int embed_hash_buckets = 64;
    std::string mask_kind = "center"; // center | freeform
    double mask_fraction = 0.5;
    double split_ratio = 0.75;
    int checkpoint_interval = 0; // extra checkpoints every k epochs; 0 = off
    int sample_interval = 0;     // sample grids every k epochs; 0 = off
    std::uint64_t seed = 0;

    static TrainSetup from_config(const Config& cfg);
};

// Draws a caption for a masked image from a different record (rejection
// sampling on the image id). Needs at least two records.
std::pair<const DatasetRecord*, const Caption*>
sample_unpaired(const std::vector<DatasetRecord>& records, std::size_t masked_index, Rng& rng);

struct CompletionRequest {
    Tensor image;            // (3,H,W) ground truth / context source
    const Caption* caption = nullptr;
    const MaskSpec* mask = nullptr;
};

// Runs the generator on prepared requests with a fixed z batch; text can be
// ablated (zeroed node features) for baseline comparisons.
Tensor complete_batch(Generator& gen, Embedder& embed, const std::vector<CompletionRequest>& reqs,
                      const Tensor& z, bool ablate_text = false);

// Models rebuilt from a checkpoint's archived config for inference-only use
// (completion, evaluation). Discriminators are omitted.
struct InferenceBundle {
    Config config;
    TrainSetup setup;
    Vocabulary vocab;
    std::unique_ptr<Embedder> embed;
    std::unique_ptr<Generator> gen;
    std::unique_ptr<RegModel> reg;

    static InferenceBundle load(const std::string& checkpoint_path);
};

// Multi-stage procedure: Supervision (paired G/D_R plus REG pretraining),
// Warm-start (G and D_R frozen; D_C and REG adapt to generated images),
// Harmony (paired and unpaired steps interleaved, four optimizer steps per
// iteration).
class Trainer {
public:
    Trainer(const Config& cfg, const std::string& data_dir, const std::string& out_dir);

    void run();
    void resume_from(const std::string& checkpoint_path);

    void save_checkpoint(const std::string& path);

    Generator& generator() { return *gen_; }
    Embedder& embedder() { return *embed_; }
    RegModel& reg() { return *reg_; }
    PatchDiscriminator& disc_r() { return *d_r_; }
    PatchDiscriminator& disc_c() { return *d_c_; }
    const TrainSetup& setup() const { return setup_; }
    const std::vector<DatasetRecord>& train_records() const { return train_; }
    const std::vector<DatasetRecord>& test_records() const { return test_; }

    const Tensor& cached_image(const DatasetRecord& r);
    MaskSpec training_mask(Rng& rng) const;

    std::uint64_t generator_hash();

    // detached pooled initial node embeddings, one row per caption
    Tensor condition_vector(const std::vector<const Caption*>& captions) const;

private:
    struct Batch {
        Tensor masked;                    // (B,4,H,W)
        Tensor real;                      // (B,3,H,W)
        std::vector<Tensor> real_scales;  // ground truth per output scale
        std::vector<const Caption*> captions;
        std::vector<BoxSpec> boxes;
        std::vector<std::vector<int>> caption_ids;
    };

    Batch make_batch(const std::vector<std::size_t>& idx, Rng& rng, bool unpaired);
    std::vector<GraphInput> graphs_on_tape(ad::Tape& t, const std::vector<const Caption*>& caps,
                                           bool trainable);

    void supervision_epoch(int epoch);
    void reg_pretrain();
    double reg_validation_ce();
    void warm_epoch(int epoch);
    void harmony_epoch(int epoch);

    void log_line(const std::string& json);
    void log_iteration(Stage stage, int epoch, int iter,
                       const std::vector<std::pair<std::string, double>>& losses,
                       const std::vector<std::string>& steps);
    void log_event(const std::string& event, Stage stage, int epoch);
    void write_samples(const std::string& tag);
    void check_finite(double v, const std::string& what);

    Rng epoch_rng(Stage stage, int epoch) const;

    Config cfg_;
    TrainSetup setup_;
    std::string out_dir_;

    std::vector<DatasetRecord> train_, test_;
    std::map<std::string, Tensor> image_cache_;
    std::optional<MaskSpec> fixed_mask_; // center masks are shared

    std::unique_ptr<Embedder> embed_;
    std::unique_ptr<Generator> gen_;
    std::unique_ptr<PatchDiscriminator> d_r_, d_c_;
    std::unique_ptr<RegModel> reg_;
    Vocabulary vocab_;

    std::vector<ad::Parameter*> g_params_, dr_params_, dc_params_, reg_params_;
    nn::Adam opt_g_, opt_dr_, opt_dc_, opt_reg_;

    // progress counters (checkpointed)
    Stage stage_ = Stage::Supervision;
    int epochs_done_ = 0; // within the current stage
    bool reg_pretrained_ = false;
    int reg_epochs_done_ = 0;
    double reg_best_val_ = 0.0;
    int reg_stall_ = 0;
    long total_iters_ = 0;

    std::ofstream log_;
};

} // namespace lsic
