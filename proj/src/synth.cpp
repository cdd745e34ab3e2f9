#include "tmr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "tmr/errors.hpp"

namespace tmr {

namespace {

constexpr int kBackgroundId = -1;
constexpr int kDistractorId = -2;
// Motifs may fill at most this fraction of the lattice pitch (at maximum instance scale).
constexpr double kPitchFill = 0.9;
constexpr double kBigramAspect = 0.45;
constexpr int kMaxLayoutAttempts = 200;

using Rgb = std::array<int, 3>;

enum class Shape { square, disc, triangle, ring };

struct PatternStyle {
    Motif motif = Motif::disc;
    double width = 0.0;   // at unit instance scale
    double height = 0.0;
    Rgb color{};
    Rgb color2{};
    Shape left = Shape::square;  // bigram sub-elements
    Shape right = Shape::disc;
    double period = 4.0;  // texture stripes
    double angle = 0.0;
};

struct Slot {
    double cx = 0.0;
    double cy = 0.0;
    int row = 0;
    int col = 0;
};

struct Canvas {
    RgbImage image;
    std::vector<int> ids;

    Canvas(int w, int h) : image(w, h), ids(static_cast<std::size_t>(w) * h, kBackgroundId) {}

    void paint(int x, int y, int id, const Rgb& c) {
        if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
        std::uint8_t* p = image.at(x, y);
        for (int k = 0; k < 3; ++k) p[k] = static_cast<std::uint8_t>(std::clamp(c[k], 0, 255));
        ids[static_cast<std::size_t>(y) * image.width + x] = id;
    }
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

bool inside_shape(Shape s, double u, double v) {
    // (u, v) in [0, 1]^2 relative to the shape's box.
    switch (s) {
        case Shape::square:
            return true;
        case Shape::disc: {
            const double du = 2.0 * u - 1.0;
            const double dv = 2.0 * v - 1.0;
            return du * du + dv * dv <= 1.0;
        }
        case Shape::ring: {
            const double du = 2.0 * u - 1.0;
            const double dv = 2.0 * v - 1.0;
            const double r2 = du * du + dv * dv;
            return r2 <= 1.0 && r2 >= 0.3;
        }
        case Shape::triangle:
            return std::abs(u - 0.5) <= 0.5 * v;
    }
    return false;
}

/// Paints `shape` into the pixel-aligned region [x0, x1) x [y0, y1) (pixel centers tested).
void paint_shape(Canvas& c, Shape shape, double x0, double y0, double x1, double y1, int id, const Rgb& color) {
    const int px0 = static_cast<int>(std::floor(x0));
    const int px1 = static_cast<int>(std::ceil(x1));
    const int py0 = static_cast<int>(std::floor(y0));
    const int py1 = static_cast<int>(std::ceil(y1));
    for (int y = py0; y < py1; ++y) {
        for (int x = px0; x < px1; ++x) {
            const double u = (x + 0.5 - x0) / (x1 - x0);
            const double v = (y + 0.5 - y0) / (y1 - y0);
            if (u < 0 || u > 1 || v < 0 || v > 1) continue;
            if (inside_shape(shape, u, v)) c.paint(x, y, id, color);
        }
    }
}

void paint_instance(Canvas& c, const PatternStyle& st, double cx, double cy, double w, double h, int id,
                    const Rgb& color, const Rgb& color2) {
    const double x0 = cx - 0.5 * w;
    const double y0 = cy - 0.5 * h;
    switch (st.motif) {
        case Motif::disc:
            paint_shape(c, Shape::disc, x0, y0, x0 + w, y0 + h, id, color);
            break;
        case Motif::ring:
            paint_shape(c, Shape::ring, x0, y0, x0 + w, y0 + h, id, color);
            break;
        case Motif::bigram: {
            const double side = std::min(h, 0.5 * w);
            paint_shape(c, st.left, x0, y0, x0 + side, y0 + h, id, color);
            paint_shape(c, st.right, x0 + w - side, y0, x0 + w, y0 + h, id, color);
            break;
        }
        case Motif::texture: {
            const double cs = std::cos(st.angle);
            const double sn = std::sin(st.angle);
            for (int y = static_cast<int>(std::floor(y0)); y < static_cast<int>(std::ceil(y0 + h)); ++y) {
                for (int x = static_cast<int>(std::floor(x0)); x < static_cast<int>(std::ceil(x0 + w)); ++x) {
                    const double px = x + 0.5;
                    const double py = y + 0.5;
                    if (px < x0 || px > x0 + w || py < y0 || py > y0 + h) continue;
                    const double t = ((px - x0) * cs + (py - y0) * sn) / st.period;
                    const bool even = (static_cast<long>(std::floor(t)) % 2) == 0;
                    c.paint(x, y, id, even ? color : color2);
                }
            }
            break;
        }
    }
}

Rgb random_dark_color(std::mt19937_64& rng) {
    // Saturated colors well below the light background.
    Rgb c{};
    const int strong = uniform_int(rng, 0, 2);
    for (int k = 0; k < 3; ++k) c[k] = uniform_int(rng, 20, 110);
    c[strong] = uniform_int(rng, 120, 190);
    return c;
}

Rgb perturb(const Rgb& c, double amount, std::mt19937_64& rng) {
    Rgb out = c;
    if (amount <= 0) return out;
    for (int k = 0; k < 3; ++k) out[k] = std::clamp(c[k] + static_cast<int>(std::lround(uniform(rng, -amount, amount) * 255.0)), 0, 255);
    return out;
}

PatternStyle make_style(Motif motif, double size, std::mt19937_64& rng) {
    PatternStyle st;
    st.motif = motif;
    st.width = size;
    switch (motif) {
        case Motif::disc:
        case Motif::ring:
            st.height = size * uniform(rng, 0.8, 1.0);
            break;
        case Motif::bigram:
            st.height = size * kBigramAspect;
            break;
        case Motif::texture:
            st.height = size * uniform(rng, 0.6, 1.0);
            break;
    }
    st.color = random_dark_color(rng);
    st.color2 = random_dark_color(rng);
    st.period = uniform(rng, 3.0, 6.0);
    st.angle = uniform(rng, 0.0, std::numbers::pi);
    return st;
}

std::vector<Slot> make_slots(const GenSpec& spec, int rows, int cols, double max_w, double max_h,
                             std::mt19937_64& rng) {
    std::vector<Slot> slots;
    const double W = spec.width;
    const double H = spec.height;
    if (spec.lattice == Lattice::scattered) {
        const int count = rows * cols;
        const double min_dx = max_w / kPitchFill;
        const double min_dy = max_h / kPitchFill;
        for (int attempt = 0; attempt < count * kMaxLayoutAttempts && static_cast<int>(slots.size()) < count;
             ++attempt) {
            const double cx = uniform(rng, 0.5 * max_w, W - 0.5 * max_w);
            const double cy = uniform(rng, 0.5 * max_h, H - 0.5 * max_h);
            const bool clear = std::all_of(slots.begin(), slots.end(), [&](const Slot& s) {
                return std::abs(s.cx - cx) >= min_dx || std::abs(s.cy - cy) >= min_dy;
            });
            if (clear) {
                const int idx = static_cast<int>(slots.size());
                slots.push_back({cx, cy, idx / cols, idx % cols});
            }
        }
        if (static_cast<int>(slots.size()) < count) {
            throw GenerationError("scattered layout: could not place " + std::to_string(count) + " instances of " +
                                  std::to_string(max_w) + "x" + std::to_string(max_h) + " px in " +
                                  std::to_string(spec.width) + "x" + std::to_string(spec.height));
        }
        return slots;
    }
    const bool hex = spec.lattice == Lattice::hex;
    const double pitch_x = hex ? W / (cols + 0.5) : W / cols;
    const double pitch_y = H / rows;
    for (int r = 0; r < rows; ++r) {
        const double shift = (hex && r % 2 == 1) ? 0.5 * pitch_x : 0.0;
        for (int c = 0; c < cols; ++c) {
            slots.push_back({(c + 0.5) * pitch_x + shift, (r + 0.5) * pitch_y, r, c});
        }
    }
    return slots;
}

/// Largest motif footprint that fits the lattice pitch, or 0 when `size_min` cannot fit.
double fit_factor(const GenSpec& spec, int rows, int cols, double w, double h) {
    const double pitch_x = spec.lattice == Lattice::hex ? spec.width / (cols + 0.5) : double(spec.width) / cols;
    const double pitch_y = double(spec.height) / rows;
    const double grow = 1.0 + spec.scale_variation;
    const double jitter_room = 1.0 - spec.jitter;
    return std::min({1.0, kPitchFill * jitter_room * pitch_x / (w * grow),
                     kPitchFill * jitter_room * pitch_y / (h * grow)});
}

}  // namespace

std::string to_string(Lattice l) {
    switch (l) {
        case Lattice::square: return "square";
        case Lattice::hex: return "hex";
        case Lattice::frieze_row: return "frieze_row";
        case Lattice::scattered: return "scattered";
    }
    return "?";
}

std::string to_string(Motif m) {
    switch (m) {
        case Motif::disc: return "disc";
        case Motif::ring: return "ring";
        case Motif::bigram: return "bigram";
        case Motif::texture: return "texture";
    }
    return "?";
}

Lattice parse_lattice(const std::string& s) {
    for (Lattice l : {Lattice::square, Lattice::hex, Lattice::frieze_row, Lattice::scattered}) {
        if (to_string(l) == s) return l;
    }
    throw ArgumentError("unknown lattice \"" + s + "\"");
}

Motif parse_motif(const std::string& s) {
    for (Motif m : {Motif::disc, Motif::ring, Motif::bigram, Motif::texture}) {
        if (to_string(m) == s) return m;
    }
    throw ArgumentError("unknown motif \"" + s + "\"");
}

double minimum_box_side(int width, int height) { return 0.03 * std::min(width, height); }

void GenSpec::validate() const {
    if (width < 16 || height < 16) throw ConfigError("image must be at least 16x16");
    if (!(jitter >= 0.0 && jitter < 0.5)) throw ConfigError("jitter must lie in [0, 0.5)");
    if (patterns < 1 || patterns > 3) throw ConfigError("patterns per image must be 1, 2 or 3");
    if (motifs.empty()) throw ConfigError("at least one motif family is required");
    if (!(size_min > 0 && size_min <= size_max)) throw ConfigError("size range must satisfy 0 < min <= max");
    if (rows < 0 || cols < 0 || max_instances < 1) throw ConfigError("slot counts must be non-negative");
    if (scale_variation < 0 || scale_variation >= 1) throw ConfigError("scale_variation must lie in [0, 1)");
    if (color_variation < 0 || distractor_density < 0) throw ConfigError("variations must be non-negative");
    if (exemplars < 1) throw ConfigError("exemplars per pattern must be positive");
}

GeneratedSample generate(const GenSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);

    // Pattern styles share one base size so that bands and interleavings pack alike.
    const double size = uniform(rng, spec.size_min, spec.size_max);
    std::vector<PatternStyle> styles;
    for (int p = 0; p < spec.patterns; ++p) {
        const Motif motif = spec.motifs[static_cast<std::size_t>(p) % spec.motifs.size()];
        PatternStyle st = make_style(motif, size, rng);
        if (motif == Motif::bigram) {
            const std::array<Shape, 3> shapes{Shape::square, Shape::disc, Shape::triangle};
            st.left = shapes[static_cast<std::size_t>(uniform_int(rng, 0, 2))];
            do {
                st.right = shapes[static_cast<std::size_t>(uniform_int(rng, 0, 2))];
            } while (st.right == st.left);
        }
        if (p == 1 && spec.mirrored_pair) {
            st = styles[0];
            if (st.motif == Motif::bigram) {
                std::swap(st.left, st.right);
            } else {
                st.angle = std::numbers::pi - st.angle;
            }
        }
        styles.push_back(st);
    }
    double max_w = 0.0;
    double max_h = 0.0;
    for (const auto& st : styles) {
        max_w = std::max(max_w, st.width);
        max_h = std::max(max_h, st.height);
    }

    // Lattice dimensions.
    int rows = spec.rows;
    int cols = spec.cols;
    const bool frieze = spec.lattice == Lattice::frieze_row;
    double factor = 0.0;
    if (rows > 0 && cols > 0) {
        factor = fit_factor(spec, rows, cols, max_w, max_h);
        if (factor * size < spec.size_min || rows * cols > spec.max_instances) {
            throw GenerationError("cannot pack " + std::to_string(rows) + "x" + std::to_string(cols) + " motifs of " +
                                  std::to_string(spec.size_min) + " px into " + std::to_string(spec.width) + "x" +
                                  std::to_string(spec.height));
        }
    } else {
        bool found = false;
        for (int attempt = 0; attempt < kMaxLayoutAttempts && !found; ++attempt) {
            rows = spec.rows > 0 ? spec.rows : (frieze ? spec.patterns : uniform_int(rng, 2, 6));
            cols = spec.cols > 0 ? spec.cols : uniform_int(rng, 2, 6);
            if (rows * cols > spec.max_instances || rows * cols < spec.patterns) continue;
            factor = fit_factor(spec, rows, cols, max_w, max_h);
            found = factor * size >= spec.size_min;
        }
        if (!found) {
            throw GenerationError("no lattice of at most " + std::to_string(spec.max_instances) +
                                  " slots fits motifs of " + std::to_string(spec.size_min) + " px");
        }
    }
    for (auto& st : styles) {
        st.width *= factor;
        st.height *= factor;
    }
    const std::vector<Slot> slots = make_slots(spec, rows, cols, max_w * factor, max_h * factor, rng);
    const double pitch_x = double(spec.width) / cols;
    const double pitch_y = double(spec.height) / rows;

    // Slot -> pattern.
    std::vector<int> owner(slots.size(), 0);
    if (spec.layout == PatternLayout::bands || frieze) {
        for (std::size_t i = 0; i < slots.size(); ++i) {
            owner[i] = rows >= spec.patterns ? slots[i].row * spec.patterns / rows
                                             : slots[i].col * spec.patterns / cols;
        }
    } else {
        std::vector<std::size_t> order(slots.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t k = 0; k < order.size(); ++k) {
            owner[order[k]] = k < static_cast<std::size_t>(spec.patterns) ? static_cast<int>(k)
                                                                           : uniform_int(rng, 0, spec.patterns - 1);
        }
    }

    // Background and clutter.
    Canvas canvas(spec.width, spec.height);
    const Rgb bg{uniform_int(rng, 190, 235), uniform_int(rng, 190, 235), uniform_int(rng, 190, 235)};
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            canvas.paint(x, y, kBackgroundId, perturb(bg, 0.02, rng));
        }
    }
    const int distractors =
        static_cast<int>(std::lround(spec.distractor_density * spec.width * spec.height / 10000.0));
    for (int d = 0; d < distractors; ++d) {
        const Rgb color = random_dark_color(rng);
        const double x0 = uniform(rng, 0, spec.width);
        const double y0 = uniform(rng, 0, spec.height);
        const double len = uniform(rng, 6.0, 18.0);
        const double ang = uniform(rng, 0.0, std::numbers::pi);
        for (double t = 0; t <= len; t += 0.5) {
            canvas.paint(static_cast<int>(x0 + t * std::cos(ang)), static_cast<int>(y0 + t * std::sin(ang)),
                         kDistractorId, color);
        }
    }
    const RgbImage base = canvas.image;

    // Instances, in slot order; later ones occlude earlier ones.
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const PatternStyle& st = styles[static_cast<std::size_t>(owner[i])];
        const double s = 1.0 + uniform(rng, -spec.scale_variation, spec.scale_variation);
        const double cx = slots[i].cx + spec.jitter * pitch_x * uniform(rng, -1.0, 1.0);
        const double cy = slots[i].cy + spec.jitter * pitch_y * uniform(rng, -1.0, 1.0);
        paint_instance(canvas, st, cx, cy, st.width * s, st.height * s, static_cast<int>(i),
                       perturb(st.color, spec.color_variation, rng), perturb(st.color2, spec.color_variation, rng));
    }

    // Visible extents; undersized remnants are erased.
    const int n = static_cast<int>(slots.size());
    std::vector<std::array<int, 4>> extent(slots.size(), {spec.width, spec.height, -1, -1});
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const int id = canvas.ids[static_cast<std::size_t>(y) * spec.width + x];
            if (id < 0 || id >= n) continue;
            auto& e = extent[static_cast<std::size_t>(id)];
            e = {std::min(e[0], x), std::min(e[1], y), std::max(e[2], x), std::max(e[3], y)};
        }
    }
    const double min_side = minimum_box_side(spec.width, spec.height);
    std::vector<bool> keep(slots.size(), false);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& e = extent[i];
        keep[i] = e[2] >= e[0] && (e[2] + 1 - e[0]) >= min_side && (e[3] + 1 - e[1]) >= min_side;
    }
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const int id = canvas.ids[static_cast<std::size_t>(y) * spec.width + x];
            if (id >= 0 && !keep[static_cast<std::size_t>(id)]) {
                std::copy(base.at(x, y), base.at(x, y) + 3, canvas.image.at(x, y));
            }
        }
    }

    GeneratedSample out;
    out.image = std::move(canvas.image);
    out.annotation.width = spec.width;
    out.annotation.height = spec.height;
    for (int p = 0; p < spec.patterns; ++p) {
        PatternAnnotation pa;
        pa.id = p;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (owner[i] != p || !keep[i]) continue;
            const auto& e = extent[i];
            pa.boxes.push_back(BoxXYWH::from_corners(e[0], e[1], e[2] + 1, e[3] + 1));
        }
        if (pa.boxes.empty()) continue;
        std::vector<std::size_t> pick(pa.boxes.size());
        for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
        std::shuffle(pick.begin(), pick.end(), rng);
        const std::size_t k = std::min(pick.size(), static_cast<std::size_t>(spec.exemplars));
        for (std::size_t i = 0; i < k; ++i) pa.exemplars.push_back(pa.boxes[pick[i]]);
        out.annotation.patterns.push_back(std::move(pa));
    }
    if (out.annotation.patterns.empty()) throw GenerationError("every instance was occluded below the minimum size");
    return out;
}

GenSpec preset(const std::string& name, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
    GenSpec spec;
    spec.seed = seed;
    if (name == "lattice-easy") {
        spec.lattice = uniform_int(rng, 0, 1) == 0 ? Lattice::square : Lattice::hex;
        spec.motifs = {uniform_int(rng, 0, 1) == 0 ? Motif::disc : Motif::ring};
        spec.max_instances = 20;
        spec.size_min = 24.0;
        spec.size_max = 44.0;
        return spec;
    }
    if (name == "bigram") {
        // Three structure-only patterns: A, A reflected, and B in another color, interleaved
        // on one lattice. Element size varies widely between images.
        spec.lattice = Lattice::square;
        spec.motifs = {Motif::bigram};
        spec.patterns = 3;
        spec.mirrored_pair = true;
        spec.layout = PatternLayout::interleaved;
        spec.max_instances = 30;
        spec.size_min = 30.0;
        spec.size_max = 60.0;
        spec.scale_variation = 0.05;
        spec.color_variation = 0.03;
        spec.distractor_density = 0.3;
        return spec;
    }
    throw ArgumentError("unknown preset \"" + name + "\" (expected lattice-easy or bigram)");
}

void generate_dataset(const std::filesystem::path& dir, const std::string& preset_name, std::uint64_t base_seed,
                      int count) {
    std::filesystem::create_directories(dir);
    for (int i = 0; i < count; ++i) {
        char stem[16];
        std::snprintf(stem, sizeof(stem), "%05d", i);
        GeneratedSample s = generate(preset(preset_name, base_seed + static_cast<std::uint64_t>(i)));
        s.annotation.image = std::string(stem) + ".png";
        write_png(dir / (std::string(stem) + ".png"), s.image);
        save_json(dir / (std::string(stem) + ".json"), to_json(s.annotation));
    }
}

BoxXYWH edgeless_crop(const BoxXYWH& b, EdgelessMode mode) {
    const double qw = 0.25 * b.w;
    const double qh = 0.25 * b.h;
    switch (mode) {
        case EdgelessMode::L: return {b.cx - qw, b.cy, 0.5 * b.w, b.h};
        case EdgelessMode::R: return {b.cx + qw, b.cy, 0.5 * b.w, b.h};
        case EdgelessMode::T: return {b.cx, b.cy - qh, b.w, 0.5 * b.h};
        case EdgelessMode::B: return {b.cx, b.cy + qh, b.w, 0.5 * b.h};
        case EdgelessMode::TL: return {b.cx - qw, b.cy - qh, 0.5 * b.w, 0.5 * b.h};
        case EdgelessMode::TR: return {b.cx + qw, b.cy - qh, 0.5 * b.w, 0.5 * b.h};
        case EdgelessMode::BL: return {b.cx - qw, b.cy + qh, 0.5 * b.w, 0.5 * b.h};
        case EdgelessMode::BR: return {b.cx + qw, b.cy + qh, 0.5 * b.w, 0.5 * b.h};
    }
    return b;
}

SampleAnnotation edgeless_transform(const SampleAnnotation& sample, EdgelessMode mode) {
    if (sample.edgeless) {
        throw ArgumentError("sample " + sample.image + " already carries the " + to_string(*sample.edgeless) +
                            " crop; transforms do not compose");
    }
    SampleAnnotation out = sample;
    for (auto& p : out.patterns) {
        for (auto& b : p.exemplars) b = edgeless_crop(b, mode);
        for (auto& b : p.boxes) b = edgeless_crop(b, mode);
    }
    out.edgeless = mode;
    return out;
}

}  // namespace tmr
