#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lsic/reg.hpp"
#include "lsic/rng.hpp"
#include "lsic/tensor.hpp"
#include "lsic/textgraph.hpp"

namespace lsic {

// Binary hole mask (1 = hole) plus its tight bounding box.
struct MaskSpec {
    enum class Kind { Center, FreeForm };

    Tensor mask; // (H,W) of {0,1}
    BoxSpec bbox;
    Kind kind = Kind::Center;

    double hole_fraction() const;
    long hole_pixels() const;
};

// Centered square hole covering round(fraction * resolution) per side.
MaskSpec center_mask(int resolution, double fraction);

struct FreeFormParams {
    int min_strokes = 1, max_strokes = 6;
    int min_segments = 4, max_segments = 12;
    double max_turn_deg = 40.0;
    double min_len_frac = 0.05, max_len_frac = 0.20;
    double min_thick_frac = 0.05, max_thick_frac = 0.12;
    double min_area = 0.10, max_area = 0.50;
    int max_attempts = 100;
};

// Random brush strokes with circular caps; resamples until the hole area
// fraction lands inside [min_area, max_area].
MaskSpec free_form_mask(int resolution, Rng& rng, const FreeFormParams& params = {});

// Zeroes hole pixels of a (3,H,W) image and appends the mask channel.
Tensor apply_mask(const Tensor& image, const MaskSpec& mask);

struct DatasetRecord {
    std::string image_id;
    std::string image_path;
    std::vector<Caption> captions;
    std::string class_label; // empty when absent
};

struct SyntheticOptions {
    int n_images = 1600;
    int resolution = 64;
    std::uint64_t seed = 0;
};

struct SyntheticPalette {
    static const std::vector<std::pair<std::string, std::array<double, 3>>>& shape_colors();
    static const std::vector<std::pair<std::string, std::array<double, 3>>>& background_colors();
    static const std::vector<std::string>& shapes();
    static const std::vector<std::string>& sizes();
    // reference hue (degrees) of a named shape color
    static double color_hue(const std::string& name);
};

// Procedural corpus: 1-2 colored shapes on textured neutral backgrounds,
// three template captions per image with template-derived dependency edges.
// Writes images/<id>.png, captions.jsonl and vocab.txt under out_dir.
void generate_synthetic_corpus(const std::string& out_dir, const SyntheticOptions& opt);

// In-memory variant (used by tests to skip disk round trips).
struct SyntheticImage {
    std::string id;
    Tensor image; // (3,res,res)
    std::vector<Caption> captions;
    std::string class_label;
    std::string primary_color;
    std::string primary_shape;
};
SyntheticImage make_synthetic_image(int index, int resolution, Rng& rng);

// Reads captions.jsonl (+ images/, vocab.txt) back into records; malformed
// lines raise with their line number; records without edges fall back to a
// token chain with a warning.
std::vector<DatasetRecord> load_dataset(const std::string& dir);

// Category-disjoint split when class labels are present; plain index split
// otherwise. Returns (train, test).
std::pair<std::vector<DatasetRecord>, std::vector<DatasetRecord>>
split_dataset(const std::vector<DatasetRecord>& records, double train_ratio, std::uint64_t seed);

// All caption tokens of a record set (for vocabulary building).
std::vector<std::string> collect_tokens(const std::vector<DatasetRecord>& records);

} // namespace lsic
