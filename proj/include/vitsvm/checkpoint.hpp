#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vitsvm/config.hpp"
#include "vitsvm/model.hpp"
#include "vitsvm/optimizer.hpp"
#include "vitsvm/rng.hpp"

namespace vitsvm {

inline constexpr char kCheckpointMagic[8] = {'V', 'I', 'T', 'S', 'V', 'M', '1', '\n'};
inline constexpr int kCheckpointVersion = 1;

/// Everything needed to resume a run bit-exactly.
template <std::floating_point T>
struct TrainingState {
    RunConfig config;
    Model<T> model;
    AdamState<T> adam;
    LrSchedule schedule;
    std::uint64_t epoch = 0;
    Rng rng;
};

template <class T>
constexpr const char* dtype_name()
{
    return sizeof(T) == 4 ? "f32" : "f64";
}

namespace detail {

template <class T>
void append_le(std::string& out, std::span<const T> values)
{
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    const std::size_t start = out.size();
    out.resize(start + values.size() * sizeof(T));
    std::memcpy(out.data() + start, values.data(), values.size() * sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            auto* p = out.data() + start + i * sizeof(T);
            std::reverse(p, p + sizeof(T));
        }
    }
}

template <class T>
std::vector<T> read_le(const char* src, std::size_t count)
{
    std::vector<T> out(count);
    std::memcpy(out.data(), src, count * sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : out) {
            auto* p = reinterpret_cast<char*>(&v);
            std::reverse(p, p + sizeof(T));
        }
    }
    return out;
}

inline nlohmann::ordered_json finite_or_null(double v)
{
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

/// Serializes a training state.
///
/// Layout: 8-byte magic `VITSVM1\n`, u64 little-endian header length, UTF-8
/// JSON header, then raw little-endian tensors in header order (all
/// parameters, then Adam first moments, then second moments).
template <class T>
std::string encode_checkpoint(const TrainingState<T>& s)
{
    nlohmann::ordered_json h;
    h["format_version"] = kCheckpointVersion;
    h["dtype"] = dtype_name<T>();
    h["config"] = run_config_to_json(s.config);
    h["epoch"] = s.epoch;
    h["rng_state"] = s.rng.state();
    h["adam"] = {{"step", s.adam.step},
                 {"lr", s.adam.hyper.lr},
                 {"beta1", s.adam.hyper.beta1},
                 {"beta2", s.adam.hyper.beta2},
                 {"eps", s.adam.hyper.eps}};
    h["schedule"] = {{"factor", s.schedule.factor},
                     {"patience", s.schedule.patience},
                     {"min_delta", s.schedule.min_delta},
                     {"min_lr", s.schedule.min_lr},
                     {"best", detail::finite_or_null(s.schedule.best)},
                     {"wait", s.schedule.wait}};
    std::string payload;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    auto emit = [&](const std::string& role, const std::string& name, const Tensor<T>& t) {
        tensors.push_back({{"role", role}, {"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
        detail::append_le<T>(payload, t.data());
    };
    const auto& p = s.model.params;
    for (std::size_t i = 0; i < p.size(); ++i) emit("param", p.names()[i], p.at(i));
    for (std::size_t i = 0; i < p.size(); ++i) emit("adam_m", p.names()[i], s.adam.m.at(i));
    for (std::size_t i = 0; i < p.size(); ++i) emit("adam_v", p.names()[i], s.adam.v.at(i));
    h["tensors"] = std::move(tensors);
    h["payload_bytes"] = payload.size();

    const std::string header = h.dump();
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint64_t len = header.size();
    detail::append_le<std::uint64_t>(out, std::span<const std::uint64_t>(&len, 1));
    out += header;
    out += payload;
    return out;
}

// Parses the fixed prefix and JSON header; returns the header and payload offset.
inline std::pair<nlohmann::json, std::size_t> decode_checkpoint_header(const std::string& bytes,
                                                                       const std::string& source)
{
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw ParseError("'" + source + "' is not a checkpoint (bad magic or truncated)");
    }
    const auto len = detail::read_le<std::uint64_t>(bytes.data() + 8, 1)[0];
    if (len > bytes.size() - 16) throw ParseError("checkpoint '" + source + "' is truncated inside its header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("checkpoint '" + source + "' header is not valid JSON: " + e.what());
    }
    if (!h.is_object() || !h.contains("format_version")) {
        throw ParseError("checkpoint '" + source + "' header lacks a format version");
    }
    if (h.at("format_version") != kCheckpointVersion) {
        throw ParseError("checkpoint '" + source + "' has format version " + h.at("format_version").dump() +
                         ", expected " + std::to_string(kCheckpointVersion));
    }
    return {std::move(h), 16 + static_cast<std::size_t>(len)};
}

template <class T>
TrainingState<T> decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>")
{
    auto [h, offset] = decode_checkpoint_header(bytes, source);
    try {
        if (h.at("dtype").get<std::string>() != dtype_name<T>()) {
            throw ParseError("checkpoint '" + source + "' stores " + h.at("dtype").get<std::string>() +
                             " tensors, expected " + dtype_name<T>());
        }
        const auto payload_bytes = h.at("payload_bytes").get<std::size_t>();
        if (bytes.size() - offset != payload_bytes) {
            throw ParseError("checkpoint '" + source + "' payload has " + std::to_string(bytes.size() - offset) +
                             " bytes, header declares " + std::to_string(payload_bytes));
        }
        TrainingState<T> s;
        s.config = run_config_from_json(h.at("config"));
        s.epoch = h.at("epoch").get<std::uint64_t>();
        s.rng.set_state(h.at("rng_state").get<std::string>());
        const auto& a = h.at("adam");
        s.adam.step = a.at("step").get<std::uint64_t>();
        s.adam.hyper = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                        a.at("eps").get<double>()};
        const auto& sc = h.at("schedule");
        s.schedule.factor = sc.at("factor").get<double>();
        s.schedule.patience = sc.at("patience").get<std::size_t>();
        s.schedule.min_delta = sc.at("min_delta").get<double>();
        s.schedule.min_lr = sc.at("min_lr").get<double>();
        s.schedule.best =
            sc.at("best").is_null() ? std::numeric_limits<double>::infinity() : sc.at("best").get<double>();
        s.schedule.wait = sc.at("wait").get<std::size_t>();

        // The config determines every expected name and shape.
        s.model.config = s.config.model;
        Rng scratch(0);
        const Model<T> layout = init_model<T>(s.config.model, scratch);
        const auto& tensors = h.at("tensors");
        const std::size_t n = layout.params.size();
        if (tensors.size() != 3 * n) {
            throw ParseError("checkpoint '" + source + "' lists " + std::to_string(tensors.size()) +
                             " tensors, model needs " + std::to_string(3 * n));
        }
        const char* roles[] = {"param", "adam_m", "adam_v"};
        std::size_t cursor = 0;
        for (std::size_t r = 0; r < 3; ++r) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto& e = tensors.at(r * n + i);
                const auto& name = layout.params.names()[i];
                const auto shape = e.at("shape").get<Shape>();
                if (e.at("role") != roles[r] || e.at("name") != name || shape != layout.params.at(i).shape()) {
                    throw ParseError("checkpoint '" + source + "' tensor " + std::to_string(r * n + i) + " is " +
                                     e.at("role").get<std::string>() + " '" + e.at("name").get<std::string>() +
                                     "' " + shape_to_string(shape) + ", expected " + roles[r] + " '" + name +
                                     "' " + shape_to_string(layout.params.at(i).shape()));
                }
                if (e.at("offset").get<std::size_t>() != cursor) {
                    throw ParseError("checkpoint '" + source + "' has a non-contiguous payload at '" + name + "'");
                }
                const std::size_t count = shape_numel(shape);
                Tensor<T> t(shape, detail::read_le<T>(bytes.data() + offset + cursor, count));
                cursor += count * sizeof(T);
                if (r == 0) s.model.params.add(name, std::move(t));
                else if (r == 1) s.adam.m.push_back(std::move(t));
                else s.adam.v.push_back(std::move(t));
            }
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint '" + source + "' header is malformed: " + e.what());
    } catch (const ConfigError& e) {
        throw ParseError("checkpoint '" + source + "' carries an invalid config: " + e.what());
    }
}

inline std::string read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes)
{
    // Write to a sibling temp file first so a crash never leaves a torn checkpoint.
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

template <class T>
void save_checkpoint(const TrainingState<T>& s, const std::filesystem::path& path)
{
    write_file_bytes(path, encode_checkpoint(s));
}

template <class T>
TrainingState<T> load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint<T>(read_file_bytes(path), path.string());
}

inline Precision checkpoint_precision(const std::filesystem::path& path)
{
    const auto bytes = read_file_bytes(path);
    auto [h, _] = decode_checkpoint_header(bytes, path.string());
    if (!h.contains("dtype") || !h.at("dtype").is_string()) throw ParseError("checkpoint header lacks dtype");
    return parse_precision(h.at("dtype").get<std::string>());
}

}  // namespace vitsvm
