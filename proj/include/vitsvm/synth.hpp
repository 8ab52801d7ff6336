#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>

#include "vitsvm/data.hpp"
#include "vitsvm/image_io.hpp"
#include "vitsvm/rng.hpp"

namespace vitsvm {

struct SynthOptions {
    std::size_t per_class = 8;
    std::uint64_t seed = 1;
    std::size_t size = 32;
    double background = 40.0;
    double foreground = 200.0;
    double noise = 30.0;  // half-width of the uniform pixel noise
};

/// Synthetic four-class image: class k lights up quadrant k
/// (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right) over a dark
/// background, with independent uniform noise on every pixel and channel.
inline Image8 synth_image(std::size_t label, const SynthOptions& opts, Rng& rng)
{
    Image8 img{opts.size, opts.size, 3, std::vector<std::uint8_t>(opts.size * opts.size * 3)};
    const std::size_t half = opts.size / 2;
    for (std::size_t y = 0; y < opts.size; ++y)
        for (std::size_t x = 0; x < opts.size; ++x) {
            const std::size_t quadrant = (y >= half ? 2 : 0) + (x >= half ? 1 : 0);
            const double base = quadrant == label ? opts.foreground : opts.background;
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(base + rng.uniform(-opts.noise, opts.noise), 0.0, 255.0);
                img.pixels[(y * opts.size + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v));
            }
        }
    return img;
}

/// Writes per_class images of each class plus `manifest.csv` into `out_dir`.
inline Manifest generate_synthetic(const std::filesystem::path& out_dir, const SynthOptions& opts)
{
    if (opts.size < 2 || opts.per_class < 1) throw ParameterError("synthetic set needs size >= 2 and per_class >= 1");
    std::filesystem::create_directories(out_dir);
    Rng rng(opts.seed);
    Manifest m;
    m.base_dir = out_dir;
    for (std::size_t i = 0; i < opts.per_class; ++i) {
        for (std::size_t label = 0; label < kNumClasses; ++label) {
            const std::string name = "class" + std::to_string(label) + "_" + std::to_string(i) + ".png";
            write_png(out_dir / name, synth_image(label, opts, rng));
            m.records.push_back({name, label});
        }
    }
    write_manifest(out_dir / "manifest.csv", m);
    return m;
}

}  // namespace vitsvm
