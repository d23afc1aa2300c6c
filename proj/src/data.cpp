#include "lsic/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "lsic/image.hpp"

namespace lsic {

namespace fs = std::filesystem;
using nlohmann::json;

double MaskSpec::hole_fraction() const {
    return static_cast<double>(hole_pixels()) / static_cast<double>(mask.size());
}

long MaskSpec::hole_pixels() const {
    long n = 0;
    for (double v : mask.data) n += v > 0.5 ? 1 : 0;
    return n;
}

namespace {

BoxSpec tight_bbox(const Tensor& mask) {
    int h = mask.dim(0), w = mask.dim(1);
    int top = h, left = w, bottom = -1, right = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.data[static_cast<std::size_t>(y) * w + x] > 0.5) {
                top = std::min(top, y);
                left = std::min(left, x);
                bottom = std::max(bottom, y);
                right = std::max(right, x);
            }
    if (bottom < 0) throw std::invalid_argument("mask: no hole pixels");
    return BoxSpec{top, left, bottom - top + 1, right - left + 1};
}

} // namespace

MaskSpec center_mask(int resolution, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("center_mask: fraction must be in (0,1]");
    if (resolution < 1) throw std::invalid_argument("center_mask: resolution");
    int side = static_cast<int>(std::lround(fraction * resolution));
    side = std::clamp(side, 1, resolution);
    int off = (resolution - side) / 2;

    MaskSpec spec;
    spec.kind = MaskSpec::Kind::Center;
    spec.mask = Tensor({resolution, resolution});
    for (int y = off; y < off + side; ++y)
        for (int x = off; x < off + side; ++x)
            spec.mask.data[static_cast<std::size_t>(y) * resolution + x] = 1.0;
    spec.bbox = BoxSpec{off, off, side, side};
    return spec;
}

MaskSpec free_form_mask(int resolution, Rng& rng, const FreeFormParams& p) {
    const double pi = 3.14159265358979323846;
    for (int attempt = 0; attempt < p.max_attempts; ++attempt) {
        Tensor mask({resolution, resolution});
        int strokes = rng.uniform_int(p.min_strokes, p.max_strokes);
        auto stamp_disc = [&](double cx, double cy, double r) {
            int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
            int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(cx + r)));
            int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
            int y1 = std::min(resolution - 1, static_cast<int>(std::ceil(cy + r)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                        mask.data[static_cast<std::size_t>(y) * resolution + x] = 1.0;
        };
        for (int s = 0; s < strokes; ++s) {
            double x = rng.uniform(0.0, resolution);
            double y = rng.uniform(0.0, resolution);
            double dir = rng.uniform(0.0, 2.0 * pi);
            double thick = rng.uniform(p.min_thick_frac, p.max_thick_frac) * resolution;
            int segments = rng.uniform_int(p.min_segments, p.max_segments);
            stamp_disc(x, y, thick / 2.0);
            for (int seg = 0; seg < segments; ++seg) {
                dir += rng.uniform(-p.max_turn_deg, p.max_turn_deg) * pi / 180.0;
                double len = rng.uniform(p.min_len_frac, p.max_len_frac) * resolution;
                double nx = std::clamp(x + len * std::cos(dir), 0.0, resolution - 1.0);
                double ny = std::clamp(y + len * std::sin(dir), 0.0, resolution - 1.0);
                // capsule: discs stamped densely along the segment
                double dist = std::hypot(nx - x, ny - y);
                int steps = std::max(1, static_cast<int>(std::ceil(dist)));
                for (int i = 0; i <= steps; ++i) {
                    double t = static_cast<double>(i) / steps;
                    stamp_disc(x + t * (nx - x), y + t * (ny - y), thick / 2.0);
                }
                x = nx;
                y = ny;
            }
        }
        double frac = 0.0;
        for (double v : mask.data) frac += v;
        frac /= static_cast<double>(mask.size());
        if (frac >= p.min_area && frac <= p.max_area) {
            MaskSpec spec;
            spec.kind = MaskSpec::Kind::FreeForm;
            spec.bbox = tight_bbox(mask);
            spec.mask = std::move(mask);
            return spec;
        }
    }
    throw std::runtime_error("free_form_mask: could not satisfy area constraint");
}

Tensor apply_mask(const Tensor& image, const MaskSpec& mask) {
    check_shape(image.rank() == 3 && image.dim(0) == 3, "apply_mask expects (3,H,W)");
    int h = image.dim(1), w = image.dim(2);
    check_shape(mask.mask.rank() == 2 && mask.mask.dim(0) == h && mask.mask.dim(1) == w,
                "apply_mask: mask shape");
    Tensor out({4, h, w});
    std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            out.data[static_cast<std::size_t>(c) * plane + i] =
                mask.mask.data[i] > 0.5 ? 0.0 : image.data[static_cast<std::size_t>(c) * plane + i];
    std::copy_n(mask.mask.data.data(), plane, out.data.data() + 3 * plane);
    return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

const std::vector<std::pair<std::string, std::array<double, 3>>>& SyntheticPalette::shape_colors() {
    static const std::vector<std::pair<std::string, std::array<double, 3>>> colors{
        {"red", {0.85, 0.10, 0.10}},    {"orange", {0.92, 0.55, 0.10}},
        {"yellow", {0.92, 0.86, 0.15}}, {"green", {0.12, 0.72, 0.20}},
        {"cyan", {0.10, 0.75, 0.80}},   {"blue", {0.15, 0.25, 0.85}},
        {"purple", {0.55, 0.15, 0.80}}, {"pink", {0.95, 0.45, 0.70}},
    };
    return colors;
}

const std::vector<std::pair<std::string, std::array<double, 3>>>& SyntheticPalette::background_colors() {
    static const std::vector<std::pair<std::string, std::array<double, 3>>> colors{
        {"white", {0.92, 0.92, 0.90}},
        {"gray", {0.58, 0.58, 0.60}},
        {"beige", {0.85, 0.78, 0.65}},
        {"slate", {0.45, 0.50, 0.58}},
    };
    return colors;
}

const std::vector<std::string>& SyntheticPalette::shapes() {
    static const std::vector<std::string> s{"circle", "square", "triangle"};
    return s;
}

const std::vector<std::string>& SyntheticPalette::sizes() {
    static const std::vector<std::string> s{"big", "small"};
    return s;
}

double SyntheticPalette::color_hue(const std::string& name) {
    for (const auto& [n, rgb] : shape_colors())
        if (n == name) {
            Hsv h = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
            return h.h;
        }
    throw std::invalid_argument("unknown shape color: " + name);
}

namespace {

void draw_shape(Tensor& img, const std::string& shape, double cx, double cy, double radius,
                const std::array<double, 3>& rgb) {
    int res = img.dim(1);
    std::size_t plane = static_cast<std::size_t>(res) * res;
    int x0 = std::max(0, static_cast<int>(cx - radius - 1));
    int x1 = std::min(res - 1, static_cast<int>(cx + radius + 1));
    int y0 = std::max(0, static_cast<int>(cy - radius - 1));
    int y1 = std::min(res - 1, static_cast<int>(cy + radius + 1));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double dx = x - cx, dy = y - cy;
            bool inside = false;
            if (shape == "circle") {
                inside = dx * dx + dy * dy <= radius * radius;
            } else if (shape == "square") {
                inside = std::fabs(dx) <= radius * 0.9 && std::fabs(dy) <= radius * 0.9;
            } else { // triangle pointing up, inscribed in the radius
                double top = cy - radius, bottom = cy + radius * 0.8;
                if (y >= top && y <= bottom) {
                    double tfrac = (y - top) / (bottom - top);
                    inside = std::fabs(dx) <= tfrac * radius;
                }
            }
            if (inside)
                for (int c = 0; c < 3; ++c)
                    img.data[static_cast<std::size_t>(c) * plane +
                             static_cast<std::size_t>(y) * res + x] = rgb[static_cast<std::size_t>(c)] * 2.0 - 1.0;
        }
}

// three caption templates with hand-built dependency trees
std::vector<Caption> template_captions(const std::string& size, const std::string& color,
                                       const std::string& shape, const std::string& bg) {
    std::vector<Caption> caps;
    {
        Caption c;
        c.tokens = {"a", size, color, shape, "on", "a", bg, "background"};
        c.dependency_edges = {{3, 0}, {3, 1}, {3, 2}, {3, 7}, {7, 4}, {7, 5}, {7, 6}};
        caps.push_back(std::move(c));
    }
    {
        Caption c;
        c.tokens = {"the", color, shape, "is", size};
        c.dependency_edges = {{2, 0}, {2, 1}, {4, 2}, {4, 3}};
        caps.push_back(std::move(c));
    }
    {
        Caption c;
        c.tokens = {"one", size, color, shape, "sits", "on", "a", bg, "background"};
        c.dependency_edges = {{3, 0}, {3, 1}, {3, 2}, {4, 3}, {4, 8}, {8, 5}, {8, 6}, {8, 7}};
        caps.push_back(std::move(c));
    }
    return caps;
}

std::string image_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d", index);
    return buf;
}

} // namespace

SyntheticImage make_synthetic_image(int index, int resolution, Rng& rng) {
    const auto& colors = SyntheticPalette::shape_colors();
    const auto& bgs = SyntheticPalette::background_colors();
    const auto& shapes = SyntheticPalette::shapes();
    const auto& sizes = SyntheticPalette::sizes();

    // cycle the (shape,color) class for exact balance; everything else random
    int n_classes = static_cast<int>(shapes.size() * colors.size());
    int cls = index % n_classes;
    const std::string& shape = shapes[static_cast<std::size_t>(cls) / colors.size()];
    const auto& [color_name, color_rgb] = colors[static_cast<std::size_t>(cls) % colors.size()];
    const std::string& size = sizes[static_cast<std::size_t>(rng.uniform_int(0, 1))];
    const auto& [bg_name, bg_rgb] = bgs[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(bgs.size()) - 1))];

    int res = resolution;
    Tensor img({3, res, res});
    std::size_t plane = static_cast<std::size_t>(res) * res;

    // textured background: base colour + soft sinusoid + light noise
    double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
    double phase = rng.uniform(0.0, 6.283185307179586);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            double tex = 0.05 * std::sin(6.283185307179586 * (fx * x + fy * y) / res + phase) +
                         0.02 * (rng.uniform() - 0.5);
            for (int c = 0; c < 3; ++c)
                img.data[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * res + x] =
                    std::clamp((bg_rgb[static_cast<std::size_t>(c)] + tex) * 2.0 - 1.0, -1.0, 1.0);
        }

    double radius = (size == "big" ? 0.17 : 0.11) * res;
    double cx = res * (0.5 + rng.uniform(-0.05, 0.05));
    double cy = res * (0.5 + rng.uniform(-0.05, 0.05));
    draw_shape(img, shape, cx, cy, radius, color_rgb);

    // occasional distractor outside the central half so center masks never
    // cover it
    if (rng.uniform() < 0.5) {
        int corner = rng.uniform_int(0, 3);
        double inset = 0.14 * res;
        double sx = corner % 2 == 0 ? inset : res - inset;
        double sy = corner / 2 == 0 ? inset : res - inset;
        const auto& [c2_name, c2_rgb] = colors[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(colors.size()) - 1))];
        const std::string& s2 = shapes[static_cast<std::size_t>(rng.uniform_int(0, 2))];
        draw_shape(img, s2, sx, sy, 0.07 * res, c2_rgb);
    }

    SyntheticImage out;
    out.id = image_name(index);
    out.image = std::move(img);
    out.captions = template_captions(size, color_name, shape, bg_name);
    out.class_label = shape + "_" + color_name;
    out.primary_color = color_name;
    out.primary_shape = shape;
    return out;
}

void generate_synthetic_corpus(const std::string& out_dir, const SyntheticOptions& opt) {
    if (opt.n_images < 2) throw std::invalid_argument("synthetic corpus: need at least 2 images");
    if (opt.resolution < 16) throw std::invalid_argument("synthetic corpus: resolution too small");

    fs::create_directories(fs::path(out_dir) / "images");
    Rng rng = seeded_rng(opt.seed);

    std::ofstream cap(fs::path(out_dir) / "captions.jsonl");
    if (!cap) throw std::runtime_error("synthetic corpus: cannot write captions.jsonl");
    std::vector<std::string> all_tokens;
    for (int i = 0; i < opt.n_images; ++i) {
        SyntheticImage s = make_synthetic_image(i, opt.resolution, rng);
        save_png((fs::path(out_dir) / "images" / (s.id + ".png")).string(), s.image);
        for (const Caption& c : s.captions) {
            json j;
            j["image_id"] = s.id;
            j["tokens"] = c.tokens;
            json edges = json::array();
            for (const auto& [h, d] : c.dependency_edges) edges.push_back({h, d});
            j["edges"] = edges;
            j["class"] = s.class_label;
            cap << j.dump() << "\n";
            for (const auto& t : c.tokens) all_tokens.push_back(t);
        }
    }
    Vocabulary::from_corpus_tokens(all_tokens).save((fs::path(out_dir) / "vocab.txt").string());
}

std::vector<DatasetRecord> load_dataset(const std::string& dir) {
    fs::path captions = fs::path(dir) / "captions.jsonl";
    std::ifstream in(captions);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + captions.string());

    std::vector<DatasetRecord> records;
    std::map<std::string, std::size_t> by_id;
    std::string line;
    int line_no = 0;
    bool warned_edges = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("load_dataset: line " + std::to_string(line_no) +
                                     ": bad JSON: " + e.what());
        }
        try {
            if (!j.contains("image_id") || !j.contains("tokens"))
                throw std::runtime_error("missing image_id or tokens");
            std::string id = j["image_id"].get<std::string>();
            Caption c;
            c.tokens = j["tokens"].get<std::vector<std::string>>();
            if (j.contains("edges")) {
                for (const auto& e : j["edges"])
                    c.dependency_edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
            } else {
                c.dependency_edges = Caption::chain_edges(static_cast<int>(c.tokens.size()));
                if (!warned_edges) {
                    std::cerr << "load_dataset: no edges on line " << line_no
                              << "; falling back to token chains\n";
                    warned_edges = true;
                }
            }
            c.validate();

            auto it = by_id.find(id);
            if (it == by_id.end()) {
                DatasetRecord r;
                r.image_id = id;
                r.image_path = (fs::path(dir) / "images" / (id + ".png")).string();
                if (j.contains("class")) r.class_label = j["class"].get<std::string>();
                r.captions.push_back(std::move(c));
                by_id[id] = records.size();
                records.push_back(std::move(r));
            } else {
                DatasetRecord& r = records[it->second];
                if (j.contains("class") && r.class_label != j["class"].get<std::string>())
                    throw std::runtime_error("conflicting class labels for " + id);
                r.captions.push_back(std::move(c));
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("load_dataset: line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
    }
    if (records.empty()) throw std::runtime_error("load_dataset: no records in " + captions.string());
    return records;
}

std::pair<std::vector<DatasetRecord>, std::vector<DatasetRecord>>
split_dataset(const std::vector<DatasetRecord>& records, double train_ratio, std::uint64_t seed) {
    if (!(train_ratio > 0.0 && train_ratio < 1.0))
        throw std::invalid_argument("split_dataset: ratio must be in (0,1)");

    std::vector<DatasetRecord> train, test;
    bool labelled = std::all_of(records.begin(), records.end(),
                                [](const DatasetRecord& r) { return !r.class_label.empty(); });
    if (labelled) {
        std::set<std::string> class_set;
        for (const auto& r : records) class_set.insert(r.class_label);
        std::vector<std::string> classes(class_set.begin(), class_set.end());
        Rng rng = seeded_rng(seed ^ 0xc1a55e5ULL);
        for (std::size_t i = classes.size(); i > 1; --i)
            std::swap(classes[i - 1], classes[static_cast<std::size_t>(
                                          rng.uniform_int(0, static_cast<int>(i) - 1))]);
        std::size_t n_train = static_cast<std::size_t>(
            std::ceil(train_ratio * static_cast<double>(classes.size())));
        n_train = std::min(n_train, classes.size() - 1);
        std::set<std::string> train_classes(classes.begin(), classes.begin() + static_cast<long>(n_train));
        for (const auto& r : records)
            (train_classes.count(r.class_label) ? train : test).push_back(r);
    } else {
        Rng rng = seeded_rng(seed ^ 0x5b117ULL);
        std::vector<std::size_t> idx(records.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[static_cast<std::size_t>(
                                      rng.uniform_int(0, static_cast<int>(i) - 1))]);
        std::size_t n_train =
            static_cast<std::size_t>(std::ceil(train_ratio * static_cast<double>(records.size())));
        n_train = std::min(n_train, records.size() - 1);
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_train ? train : test).push_back(records[idx[i]]);
    }
    return {std::move(train), std::move(test)};
}

std::vector<std::string> collect_tokens(const std::vector<DatasetRecord>& records) {
    std::vector<std::string> out;
    for (const auto& r : records)
        for (const auto& c : r.captions)
            for (const auto& t : c.tokens) out.push_back(t);
    return out;
}

} // namespace lsic
