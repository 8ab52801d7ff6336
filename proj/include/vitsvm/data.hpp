#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vitsvm/errors.hpp"
#include "vitsvm/heads.hpp"
#include "vitsvm/image_io.hpp"
#include "vitsvm/rng.hpp"
#include "vitsvm/tensor.hpp"

namespace vitsvm {

inline constexpr std::size_t kNumClasses = 4;

// Label encoding of the OCT dataset.
inline const std::array<std::string, kNumClasses>& class_names()
{
    static const std::array<std::string, kNumClasses> names{
        "central serous retinopathy", "diabetic retinopathy", "macular hole", "normal"};
    return names;
}

struct ManifestRecord {
    std::string path;  // relative to the manifest directory unless absolute
    std::size_t label = 0;

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRecord> records;
    std::vector<std::string> warnings;

    std::filesystem::path resolve(std::size_t i) const
    {
        std::filesystem::path p(records.at(i).path);
        return p.is_absolute() ? p : base_dir / p;
    }

    std::map<std::size_t, std::size_t> class_counts() const
    {
        std::map<std::size_t, std::size_t> counts;
        for (const auto& r : records) ++counts[r.label];
        return counts;
    }
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace detail

/// Parses a `path,label` CSV. Line numbers in errors count the header as line 1.
/// Blank lines are skipped; the label is taken after the last comma so paths
/// may themselves contain commas.
inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir, const std::string& source)
{
    Manifest m;
    m.base_dir = base_dir;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view = detail::trim(line);
        if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
        if (!header_seen) {
            if (view != "path,label") {
                throw ParseError(source + ":" + std::to_string(line_no) + ": expected header 'path,label'");
            }
            header_seen = true;
            continue;
        }
        if (view.empty()) continue;
        const auto comma = view.rfind(',');
        if (comma == std::string_view::npos) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": missing label column");
        }
        const auto path = detail::trim(view.substr(0, comma));
        const auto label_text = detail::trim(view.substr(comma + 1));
        if (path.empty()) throw ParseError(source + ":" + std::to_string(line_no) + ": empty path");
        std::size_t label = 0;
        const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
        if (label_text.empty() || ec != std::errc{} || ptr != label_text.data() + label_text.size() ||
            label >= kNumClasses) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": bad label '" + std::string(label_text) +
                             "' (expected 0..3)");
        }
        m.records.push_back({std::string(path), label});
    }
    if (!header_seen) throw ParseError(source + ":1: missing header 'path,label'");
    if (m.records.empty()) m.warnings.push_back(source + ": manifest has no records");
    return m;
}

inline Manifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest '" + path.string() + "'");
    return parse_manifest(in, path.parent_path(), path.string());
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    out << "path,label\n";
    for (const auto& r : m.records) out << r.path << ',' << r.label << '\n';
}

enum class Normalization { Symmetric, Unit };  // [-1, 1] or [0, 1]

inline Normalization parse_normalization(const std::string& s)
{
    if (s == "symmetric") return Normalization::Symmetric;
    if (s == "unit") return Normalization::Unit;
    throw ConfigError("unknown normalization '" + s + "' (expected symmetric or unit)");
}

inline std::string to_string(Normalization n) { return n == Normalization::Symmetric ? "symmetric" : "unit"; }

/// Bilinear resize with half-pixel centers; samples outside the source are
/// clamped to the border. Values stay in the 0..255 range of the input.
template <class T>
Tensor<T> resize_bilinear(const Image8& image, std::size_t out_h, std::size_t out_w)
{
    if (image.width == 0 || image.height == 0) throw IoError("cannot resize an empty image");
    const std::size_t c = image.channels;
    Tensor<T> out(Shape{out_h, out_w, c});
    const double sy = static_cast<double>(image.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(image.width) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                     static_cast<double>(image.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                         static_cast<double>(image.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double top = (1.0 - wx) * image.at(y0, x0, ch) + wx * image.at(y0, x1, ch);
                const double bottom = (1.0 - wx) * image.at(y1, x0, ch) + wx * image.at(y1, x1, ch);
                out[(y * out_w + x) * c + ch] = static_cast<T>((1.0 - wy) * top + wy * bottom);
            }
        }
    }
    return out;
}

/// Resize to size x size, replicate grayscale to three channels, and map
/// 0..255 to [-1, 1] (x/127.5 - 1) or [0, 1] (x/255).
template <class T>
Tensor<T> preprocess(const Image8& image, std::size_t size = 256, Normalization norm = Normalization::Symmetric)
{
    if (image.channels != 1 && image.channels != 3) {
        throw IoError("unsupported channel count " + std::to_string(image.channels));
    }
    const Tensor<T> resized = resize_bilinear<T>(image, size, size);
    Tensor<T> out(Shape{size, size, 3});
    const std::size_t pixels = size * size;
    for (std::size_t i = 0; i < pixels; ++i) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const double raw = resized[i * image.channels + (image.channels == 1 ? 0 : ch)];
            out[i * 3 + ch] = static_cast<T>(norm == Normalization::Symmetric ? raw / 127.5 - 1.0 : raw / 255.0);
        }
    }
    return out;
}

template <class T>
Tensor<T> load_image(const std::filesystem::path& path, std::size_t size, Normalization norm)
{
    return preprocess<T>(decode_image(path), size, norm);
}

struct FlipDecision {
    bool horizontal = false;  // mirror left-right
    bool vertical = false;    // mirror top-bottom
};

inline FlipDecision draw_flips(Rng& rng)
{
    FlipDecision d;
    d.horizontal = rng.bernoulli(0.5);
    d.vertical = rng.bernoulli(0.5);
    return d;
}

template <class T>
Tensor<T> apply_flips(const Tensor<T>& image, FlipDecision flips)
{
    if (image.rank() != 3) throw DimensionError("flip expects H x W x C, got " + shape_to_string(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    Tensor<T> out(image.shape());
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = flips.vertical ? h - 1 - y : y;
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = flips.horizontal ? w - 1 - x : x;
            for (std::size_t ch = 0; ch < c; ++ch) out[(y * w + x) * c + ch] = image[(sy * w + sx) * c + ch];
        }
    }
    return out;
}

// Independent fair-coin horizontal and vertical flips.
template <class T>
Tensor<T> augment(const Tensor<T>& image, Rng& rng)
{
    return apply_flips(image, draw_flips(rng));
}

/// Per-class seeded partition. Each class contributes round-half-up(n * f)
/// records to the train side, clamped so both sides keep at least one.
/// Records keep their manifest order within each side.
inline std::pair<Manifest, Manifest> stratified_split(const Manifest& m, double train_fraction, std::uint64_t seed)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ParameterError("train fraction must lie in (0, 1)");
    }
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < m.records.size(); ++i) by_class[m.records[i].label].push_back(i);
    std::vector<bool> to_train(m.records.size(), false);
    for (auto& [label, idx] : by_class) {
        if (idx.size() < 2) {
            throw ParameterError("cannot split class " + std::to_string(label) + " (" + class_names()[label] +
                                 "): only " + std::to_string(idx.size()) + " record(s)");
        }
        Rng rng(mix_seed(seed, label));
        shuffle(idx, rng);
        const double exact = static_cast<double>(idx.size()) * train_fraction;
        auto n_train = static_cast<std::size_t>(std::floor(exact + 0.5));
        n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
        for (std::size_t j = 0; j < n_train; ++j) to_train[idx[j]] = true;
    }
    Manifest train, test;
    train.base_dir = test.base_dir = m.base_dir;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        (to_train[i] ? train : test).records.push_back(m.records[i]);
    }
    return {std::move(train), std::move(test)};
}

template <std::floating_point T>
struct Batch {
    Tensor<T> images;                  // B x S x S x 3
    Tensor<T> labels;                  // B x K one-hot
    std::vector<std::size_t> indices;  // manifest positions
    std::vector<std::size_t> classes;

    std::size_t size() const { return indices.size(); }
};

/// Decodes and preprocesses manifest images on first use and keeps them.
template <std::floating_point T>
class ImageSource {
public:
    ImageSource(Manifest manifest, std::size_t image_size, Normalization norm)
        : manifest_(std::move(manifest)), image_size_(image_size), norm_(norm)
    {
    }

    const Manifest& manifest() const { return manifest_; }
    std::size_t size() const { return manifest_.records.size(); }
    std::size_t image_size() const { return image_size_; }

    const Tensor<T>& image(std::size_t i)
    {
        auto it = cache_.find(i);
        if (it == cache_.end()) it = cache_.emplace(i, load_image<T>(manifest_.resolve(i), image_size_, norm_)).first;
        return it->second;
    }

private:
    Manifest manifest_;
    std::size_t image_size_;
    Normalization norm_;
    std::unordered_map<std::size_t, Tensor<T>> cache_;
};

struct BatchOptions {
    std::size_t batch_size = 8;
    bool shuffle = false;
    bool training = false;
    bool augment = true;  // only consulted in training mode
    std::uint64_t seed = 42;
    std::uint64_t epoch = 0;
    std::size_t num_classes = kNumClasses;
};

/// Epoch-wise batch stream over an ImageSource.
///
/// The visit order is the manifest order, or a permutation seeded by
/// (seed, epoch) when shuffling. Training mode draws flip decisions from
/// `aug_rng` in emission order.
template <std::floating_point T>
class BatchIterator {
public:
    BatchIterator(ImageSource<T>& source, BatchOptions opts, Rng* aug_rng = nullptr)
        : source_(source), opts_(opts), aug_rng_(aug_rng)
    {
        if (opts_.batch_size < 1) throw ParameterError("batch size must be at least 1");
        if (opts_.training && opts_.augment && !aug_rng_) throw ContractError("augmentation requires an RNG");
        order_.resize(source_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        if (opts_.shuffle) {
            Rng rng(mix_seed(opts_.seed, opts_.epoch + 0x5EED));
            shuffle(order_, rng);
        }
    }

    std::size_t num_batches() const { return (order_.size() + opts_.batch_size - 1) / opts_.batch_size; }

    std::optional<Batch<T>> next()
    {
        if (pos_ >= order_.size()) return std::nullopt;
        const std::size_t n = std::min(opts_.batch_size, order_.size() - pos_);
        const std::size_t s = source_.image_size();
        Batch<T> batch;
        std::vector<T> pixels;
        pixels.reserve(n * s * s * 3);
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = order_[pos_ + j];
            const Tensor<T>& img = source_.image(idx);
            if (opts_.training && opts_.augment) {
                const Tensor<T> flipped = augment(img, *aug_rng_);
                pixels.insert(pixels.end(), flipped.data().begin(), flipped.data().end());
            } else {
                pixels.insert(pixels.end(), img.data().begin(), img.data().end());
            }
            batch.indices.push_back(idx);
            batch.classes.push_back(source_.manifest().records[idx].label);
        }
        pos_ += n;
        batch.images = Tensor<T>(Shape{n, s, s, 3}, std::move(pixels));
        batch.labels = one_hot<T>(batch.classes, opts_.num_classes);
        return batch;
    }

private:
    ImageSource<T>& source_;
    BatchOptions opts_;
    Rng* aug_rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

template <class T>
std::vector<Batch<T>> batch_iter(ImageSource<T>& source, BatchOptions opts, Rng* aug_rng = nullptr)
{
    BatchIterator<T> it(source, opts, aug_rng);
    std::vector<Batch<T>> out;
    while (auto b = it.next()) out.push_back(std::move(*b));
    return out;
}

}  // namespace vitsvm
