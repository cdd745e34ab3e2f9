#include "tmr/backbone.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace tmr {
namespace {

constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename U>
U to_little(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<U>(bytes);
    }
    return v;
}

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
    }
    template <typename U>
    void put(U v) {
        v = to_little(v);
        out_.write(reinterpret_cast<const char*>(&v), sizeof(U));
    }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void floats(const std::vector<float>& v) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(v.data(), v.size() * sizeof(float));
        } else {
            for (float f : v) put(f);
        }
    }
    void finish(const std::filesystem::path& path) {
        out_.flush();
        if (!out_) throw IoError("write failed for '" + path.string() + "'");
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open '" + path.string() + "'");
    }
    template <typename U>
    U get() {
        U v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(U));
        if (in_.gcount() != static_cast<std::streamsize>(sizeof(U))) {
            throw IoError("truncated file '" + path_.string() + "'");
        }
        return to_little(v);
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) {
            throw IoError("truncated payload in '" + path_.string() + "'");
        }
    }
    std::vector<float> floats(std::size_t n) {
        std::vector<float> v(n);
        bytes(v.data(), n * sizeof(float));
        if constexpr (std::endian::native == std::endian::big) {
            for (auto& f : v) f = to_little(f);
        }
        return v;
    }
    void expect_magic(const char (&magic)[5]) {
        char m[4];
        in_.read(m, 4);
        if (in_.gcount() != 4 || std::memcmp(m, magic, 4) != 0) {
            throw FormatError("'" + path_.string() + "' is not a " + std::string(magic) + " file");
        }
    }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

}  // namespace

double stride_for(int image_extent, int cells) {
    if (image_extent <= 0 || cells <= 0) throw ArgumentError("stride_for: extents must be positive");
    return static_cast<double>(image_extent) / cells;
}

void save_features(const std::filesystem::path& path, const FeatureMap& fm) {
    if (fm.grid.height < 1 || fm.grid.width < 1 || fm.grid.depth < 1) {
        throw ArgumentError("save_features: empty feature map");
    }
    Writer w(path);
    w.bytes("TMRF", 4);
    w.put<std::uint32_t>(kFeatureVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(fm.grid.height));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(fm.grid.width));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(fm.grid.depth));
    w.put<float>(static_cast<float>(fm.stride));
    w.floats(fm.grid.values);
    w.finish(path);
}

FeatureMap load_features(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_magic("TMRF");
    const auto version = r.get<std::uint32_t>();
    if (version != kFeatureVersion) {
        throw FormatError("unsupported TMRF version " + std::to_string(version));
    }
    const auto h = r.get<std::uint32_t>();
    const auto w = r.get<std::uint32_t>();
    const auto d = r.get<std::uint32_t>();
    const float stride = r.get<float>();
    if (h == 0 || w == 0 || d == 0) throw FormatError("TMRF header declares an empty map");
    if (!(stride > 0.0f) || !std::isfinite(stride)) throw FormatError("TMRF header declares a non-positive stride");
    const std::uint64_t n = static_cast<std::uint64_t>(h) * w * d;
    if (n > (std::uint64_t{1} << 32)) throw FormatError("TMRF header declares an implausibly large map");
    FeatureMap fm;
    fm.grid.height = static_cast<int>(h);
    fm.grid.width = static_cast<int>(w);
    fm.grid.depth = static_cast<int>(d);
    fm.grid.values = r.floats(static_cast<std::size_t>(n));
    fm.stride = stride;
    fm.source = FeatureSource::precomputed;
    return fm;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    Writer w(path);
    w.bytes("TMRC", 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw ArgumentError("checkpoint tensor name too long: " + t.name.substr(0, 32) + "...");
        }
        std::size_t n = 1;
        for (auto d : t.dims) n *= d;
        if (n != t.data.size()) throw ArgumentError("checkpoint tensor '" + t.name + "' dims do not match payload");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) w.put<std::uint32_t>(d);
        w.floats(t.data);
    }
    w.finish(path);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_magic("TMRC");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw FormatError("unsupported TMRC version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedTensor> tensors;
    tensors.reserve(std::min<std::uint32_t>(count, 4096));
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto len = r.get<std::uint16_t>();
        t.name.resize(len);
        r.bytes(t.name.data(), len);
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw FormatError("checkpoint tensor '" + t.name + "' has rank " + std::to_string(rank));
        std::uint64_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.dims.push_back(r.get<std::uint32_t>());
            n *= t.dims.back();
        }
        if (n > (std::uint64_t{1} << 32)) throw FormatError("checkpoint tensor '" + t.name + "' is implausibly large");
        t.data = r.floats(static_cast<std::size_t>(n));
        tensors.push_back(std::move(t));
    }
    return tensors;
}

template <typename T>
TinyBackboneParams<T> make_tiny_backbone(const BackboneConfig& cfg) {
    return {LayerParams<T>::conv3x3("backbone.stage1", cfg.input_channels, cfg.widths[0]),
            LayerParams<T>::conv3x3("backbone.stage2", cfg.widths[0], cfg.widths[1]),
            LayerParams<T>::conv3x3("backbone.stage3", cfg.widths[1], cfg.widths[2])};
}

template <typename T>
FeatureMapT<T> tiny_backbone_forward(const Grid3<T>& image, const TinyBackboneParams<T>& params, double leaky_slope,
                                     TinyBackboneCache<T>* cache) {
    if (image.height % kTinyBackboneDownsample != 0 || image.width % kTinyBackboneDownsample != 0 ||
        image.height == 0 || image.width == 0) {
        throw ArgumentError("tiny_backbone_forward: image " + shape_string(image) + " is not divisible by " +
                            std::to_string(kTinyBackboneDownsample));
    }
    const T slope = static_cast<T>(leaky_slope);
    Grid3<T> x = image;
    for (std::size_t s = 0; s < params.size(); ++s) {
        Grid3<T> pre = conv3x3_forward(x, params[s], 2);
        Grid3<T> post = leaky_relu(pre, slope);
        if (cache) {
            cache->inputs[s] = std::move(x);
            cache->pre_activations[s] = std::move(pre);
        }
        x = std::move(post);
    }
    FeatureMapT<T> fm;
    fm.grid = std::move(x);
    fm.stride = kTinyBackboneDownsample;
    fm.source = FeatureSource::tiny_backbone;
    return fm;
}

template <typename T>
void tiny_backbone_backward(const TinyBackboneCache<T>& cache, TinyBackboneParams<T>& params,
                            const Grid3<T>& grad_features, double leaky_slope) {
    const T slope = static_cast<T>(leaky_slope);
    Grid3<T> g = grad_features;
    for (int s = static_cast<int>(params.size()) - 1; s >= 0; --s) {
        g = leaky_relu_backward(cache.pre_activations[s], g, slope);
        g = conv3x3_backward(cache.inputs[s], params[s], g, 2, s > 0);
    }
}

std::array<int, 2> upsample_shape(int height, int width, int upsample_to) {
    if (upsample_to <= 0) return {height, width};
    const int longer = std::max(height, width);
    if (upsample_to < longer) {
        throw ConfigError("upsample_to (" + std::to_string(upsample_to) + ") is below the native resolution " +
                          std::to_string(longer));
    }
    const double ratio = static_cast<double>(upsample_to) / longer;
    return {std::max(1, static_cast<int>(std::lround(height * ratio))),
            std::max(1, static_cast<int>(std::lround(width * ratio)))};
}

template <typename T>
FeatureMapT<T> project_and_upsample(const FeatureMapT<T>& fm, const BackboneConfig& cfg, const LayerParams<T>& proj) {
    if (proj.in != fm.grid.depth || proj.out != cfg.projection_out) {
        throw ConfigError("project_and_upsample: projection " + std::to_string(proj.in) + "->" +
                          std::to_string(proj.out) + " does not fit feature depth " + std::to_string(fm.grid.depth) +
                          " and projection_out " + std::to_string(cfg.projection_out));
    }
    const auto [h, w] = upsample_shape(fm.grid.height, fm.grid.width, cfg.upsample_to);
    FeatureMapT<T> out;
    out.grid = bilinear_resize(linear_forward(fm.grid, proj), h, w);
    out.stride = fm.stride * static_cast<double>(fm.grid.width) / w;
    out.source = fm.source;
    out.scale_id = fm.scale_id;
    return out;
}

template <typename T>
Grid3<T> project_and_upsample_backward(const FeatureMapT<T>& fm, const BackboneConfig& cfg, LayerParams<T>& proj,
                                       const Grid3<T>& grad_out, bool need_input_grad) {
    (void)cfg;
    const Grid3<T> g = bilinear_resize_backward(grad_out, fm.grid.height, fm.grid.width);
    return linear_backward(fm.grid, proj, g, need_input_grad);
}

#define TMR_INSTANTIATE_BACKBONE(T)                                                                              \
    template TinyBackboneParams<T> make_tiny_backbone<T>(const BackboneConfig&);                                 \
    template FeatureMapT<T> tiny_backbone_forward(const Grid3<T>&, const TinyBackboneParams<T>&, double,         \
                                                  TinyBackboneCache<T>*);                                        \
    template void tiny_backbone_backward(const TinyBackboneCache<T>&, TinyBackboneParams<T>&, const Grid3<T>&,   \
                                         double);                                                                \
    template FeatureMapT<T> project_and_upsample(const FeatureMapT<T>&, const BackboneConfig&,                   \
                                                 const LayerParams<T>&);                                         \
    template Grid3<T> project_and_upsample_backward(const FeatureMapT<T>&, const BackboneConfig&, LayerParams<T>&, \
                                                    const Grid3<T>&, bool);

TMR_INSTANTIATE_BACKBONE(float)
TMR_INSTANTIATE_BACKBONE(double)

}  // namespace tmr
