#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tmr/backbone.hpp"
#include "tmr/grid.hpp"

namespace tmr {

/// 8-bit RGB image, row-major, interleaved.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    bool operator==(const RgbImage&) const = default;
};

std::vector<std::uint8_t> encode_png(const RgbImage& img);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_png(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Model input at stride 1: channels scaled to [-0.5, 0.5].
FeatureMap image_to_input(const RgbImage& img);

/// Pads right/bottom with the edge color so both sides are multiples of `multiple`.
RgbImage pad_to_multiple(const RgbImage& img, int multiple);

}  // namespace tmr
