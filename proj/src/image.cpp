#include "tmr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <memory>

#include "tmr/errors.hpp"

namespace tmr {

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    if (img.width <= 0 || img.height <= 0) throw ArgumentError("encode_png: empty image");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
        throw IoError(std::string("encode_png: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
        throw IoError(std::string("encode_png: ") + image.message);
    }
    out.resize(size);
    return out;
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw FormatError(std::string("decode_png: ") + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    RgbImage img(static_cast<int>(image.width), static_cast<int>(image.height));
    if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError(std::string("decode_png: ") + image.message);
    }
    return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

void write_png(const std::filesystem::path& path, const RgbImage& img) { write_file(path, encode_png(img)); }

RgbImage read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

FeatureMap image_to_input(const RgbImage& img) {
    FeatureMap fm;
    fm.grid = Grid3f(img.height, img.width, 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        fm.grid.values[i] = static_cast<float>(img.pixels[i]) / 255.0F - 0.5F;
    }
    fm.stride = 1.0;
    fm.source = FeatureSource::tiny_backbone;
    return fm;
}

RgbImage pad_to_multiple(const RgbImage& img, int multiple) {
    const int w = (img.width + multiple - 1) / multiple * multiple;
    const int h = (img.height + multiple - 1) / multiple * multiple;
    if (w == img.width && h == img.height) return img;
    RgbImage out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint8_t* src = img.at(std::min(x, img.width - 1), std::min(y, img.height - 1));
            std::copy(src, src + 3, out.at(x, y));
        }
    }
    return out;
}

}  // namespace tmr
