#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tmr/annotation.hpp"
#include "tmr/image.hpp"

namespace tmr {

enum class Lattice { square, hex, frieze_row, scattered };
enum class Motif { disc, ring, bigram, texture };

std::string to_string(Lattice l);
std::string to_string(Motif m);
Lattice parse_lattice(const std::string& s);
Motif parse_motif(const std::string& s);

/// How lattice slots are shared between patterns.
enum class PatternLayout { bands, interleaved };

struct GenSpec {
    std::uint64_t seed = 0;
    int width = 256;
    int height = 256;
    Lattice lattice = Lattice::square;
    /// Slot counts; 0 draws them at random so that rows * cols <= max_instances.
    int rows = 0;
    int cols = 0;
    int max_instances = 20;
    /// Center offset as a fraction of the lattice pitch, in [0, 0.5).
    double jitter = 0.05;
    /// Longer side of a motif in pixels, drawn per pattern (and clipped to the lattice pitch).
    double size_min = 24.0;
    double size_max = 44.0;
    /// Per-instance relative size and per-channel color perturbation.
    double scale_variation = 0.08;
    double color_variation = 0.05;
    /// Motif family per pattern (cycled when shorter than `patterns`).
    std::vector<Motif> motifs{Motif::disc};
    /// Unannotated clutter strokes per 10k pixels.
    double distractor_density = 0.5;
    int patterns = 1;
    PatternLayout layout = PatternLayout::bands;
    /// Pattern 1 is pattern 0 reflected left-right (a distinct pattern by the reflection rule).
    bool mirrored_pair = false;
    /// Exemplars per pattern, picked among its GT boxes.
    int exemplars = 3;

    void validate() const;
};

struct GeneratedSample {
    RgbImage image;
    SampleAnnotation annotation;
};

/// Deterministic under `spec.seed`. GT boxes are the tight bounds of each instance's visible
/// pixels; instances whose visible extent breaks the 3% minimum-size rule are erased.
/// Throws GenerationError when the requested instances cannot be packed.
GeneratedSample generate(const GenSpec& spec);

/// Named generator settings: "lattice-easy" and "bigram". `seed` selects the sample.
GenSpec preset(const std::string& name, std::uint64_t seed);

/// Writes NNNNN.png / NNNNN.json for `count` samples of a preset, seeds base_seed + i.
void generate_dataset(const std::filesystem::path& dir, const std::string& preset_name, std::uint64_t base_seed,
                      int count);

/// Half or quarter crop of a box anchored at the given side or corner.
BoxXYWH edgeless_crop(const BoxXYWH& b, EdgelessMode mode);

/// Replaces every exemplar and GT box with its crop. A sample may be transformed once.
SampleAnnotation edgeless_transform(const SampleAnnotation& sample, EdgelessMode mode);

/// Shorter image side times 0.03.
double minimum_box_side(int width, int height);

}  // namespace tmr
