#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vitsvm/errors.hpp"

namespace vitsvm {

/// K x K counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;  // row-major
    std::vector<std::string> class_names;

    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }

    std::uint64_t total() const
    {
        std::uint64_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }

    std::uint64_t trace() const
    {
        std::uint64_t n = 0;
        for (std::size_t k = 0; k < num_classes; ++k) n += at(k, k);
        return n;
    }

    std::uint64_t row_sum(std::size_t k) const
    {
        std::uint64_t n = 0;
        for (std::size_t j = 0; j < num_classes; ++j) n += at(k, j);
        return n;
    }

    std::uint64_t column_sum(std::size_t k) const
    {
        std::uint64_t n = 0;
        for (std::size_t i = 0; i < num_classes; ++i) n += at(i, k);
        return n;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                        std::size_t num_classes, std::vector<std::string> names = {})
{
    if (truth.size() != predicted.size()) {
        throw ContractError("confusion_matrix: " + std::to_string(truth.size()) + " labels but " +
                            std::to_string(predicted.size()) + " predictions");
    }
    if (num_classes == 0) throw ContractError("confusion_matrix: need at least one class");
    if (names.empty()) {
        for (std::size_t k = 0; k < num_classes; ++k) names.push_back("class " + std::to_string(k));
    }
    if (names.size() != num_classes) throw ContractError("confusion_matrix: class name count mismatch");
    ConfusionMatrix cm{num_classes, std::vector<std::uint64_t>(num_classes * num_classes, 0), std::move(names)};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= num_classes || predicted[i] >= num_classes) {
            throw ContractError("confusion_matrix: label out of range at index " + std::to_string(i));
        }
        ++cm.counts[truth[i] * num_classes + predicted[i]];
    }
    return cm;
}

// A missing value means the ratio's denominator was zero.
struct ClassScore {
    std::optional<double> precision;
    std::optional<double> recall;

    friend bool operator==(const ClassScore&, const ClassScore&) = default;
};

inline std::vector<ClassScore> precision_recall(const ConfusionMatrix& cm)
{
    std::vector<ClassScore> out(cm.num_classes);
    for (std::size_t k = 0; k < cm.num_classes; ++k) {
        const auto tp = static_cast<double>(cm.at(k, k));
        if (auto col = cm.column_sum(k)) out[k].precision = tp / static_cast<double>(col);
        if (auto row = cm.row_sum(k)) out[k].recall = tp / static_cast<double>(row);
    }
    return out;
}

inline double accuracy(const ConfusionMatrix& cm)
{
    const auto total = cm.total();
    if (total == 0) throw ContractError("accuracy of an empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

struct ClassReport {
    std::string name;
    std::optional<double> precision;
    std::optional<double> recall;

    friend bool operator==(const ClassReport&, const ClassReport&) = default;
};

struct EvalReport {
    std::string model;
    std::string head;
    std::uint64_t samples = 0;
    double accuracy = 0.0;
    std::vector<ClassReport> classes;
    std::vector<std::vector<std::uint64_t>> confusion;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline EvalReport make_report(const ConfusionMatrix& cm, std::string model, std::string head)
{
    EvalReport r;
    r.model = std::move(model);
    r.head = std::move(head);
    r.samples = cm.total();
    r.accuracy = accuracy(cm);
    const auto scores = precision_recall(cm);
    for (std::size_t k = 0; k < cm.num_classes; ++k) {
        r.classes.push_back({cm.class_names[k], scores[k].precision, scores[k].recall});
        r.confusion.emplace_back(cm.counts.begin() + static_cast<std::ptrdiff_t>(k * cm.num_classes),
                                 cm.counts.begin() + static_cast<std::ptrdiff_t>((k + 1) * cm.num_classes));
    }
    return r;
}

enum class ReportFormat { Json, Csv, Text };

inline ReportFormat parse_report_format(const std::string& s)
{
    if (s == "json") return ReportFormat::Json;
    if (s == "csv") return ReportFormat::Csv;
    if (s == "text") return ReportFormat::Text;
    throw ParameterError("unknown report format '" + s + "' (expected json, csv or text)");
}

inline constexpr const char* kUndefinedMarker = "n/a";

// Round half-up to two decimals. The 1e-9 nudge keeps decimal halves such
// as 0.125 from rounding down through binary representation error.
inline std::string format_ratio(std::optional<double> v)
{
    if (!v) return kUndefinedMarker;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", std::floor(*v * 100.0 + 0.5 + 1e-9) / 100.0);
    return buf;
}

inline std::string format_percent(double v)
{
    return std::to_string(static_cast<long long>(std::floor(v * 100.0 + 0.5 + 1e-9))) + "%";
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r)
{
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["head"] = r.head;
    j["samples"] = r.samples;
    j["accuracy"] = r.accuracy;
    j["classes"] = nlohmann::ordered_json::array();
    for (const auto& c : r.classes) {
        nlohmann::ordered_json cj;
        cj["name"] = c.name;
        cj["precision"] = c.precision ? nlohmann::ordered_json(*c.precision) : nlohmann::ordered_json(nullptr);
        cj["recall"] = c.recall ? nlohmann::ordered_json(*c.recall) : nlohmann::ordered_json(nullptr);
        j["classes"].push_back(std::move(cj));
    }
    j["confusion"] = r.confusion;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j)
{
    try {
        EvalReport r;
        r.model = j.at("model").get<std::string>();
        r.head = j.at("head").get<std::string>();
        r.samples = j.at("samples").get<std::uint64_t>();
        r.accuracy = j.at("accuracy").get<double>();
        for (const auto& c : j.at("classes")) {
            ClassReport cr;
            cr.name = c.at("name").get<std::string>();
            if (!c.at("precision").is_null()) cr.precision = c.at("precision").get<double>();
            if (!c.at("recall").is_null()) cr.recall = c.at("recall").get<double>();
            r.classes.push_back(std::move(cr));
        }
        r.confusion = j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed report JSON: ") + e.what());
    }
}

/// Serializes a report.
///
/// JSON keeps full precision (lossless round trip). CSV has a header, one
/// row per class and a final accuracy row. Text is the human-readable
/// summary with two-decimal ratios and integer-percent accuracy; `order`
/// chooses the class order of its slash-joined lines (identity if empty).
inline std::string render_report(const EvalReport& r, ReportFormat format, std::span<const std::size_t> order = {})
{
    std::ostringstream os;
    switch (format) {
    case ReportFormat::Json:
        return report_to_json(r).dump(2) + "\n";
    case ReportFormat::Csv: {
        os.precision(17);
        os << "class,precision,recall\n";
        for (const auto& c : r.classes) {
            os << '"' << c.name << "\",";
            if (c.precision) os << *c.precision;
            else os << kUndefinedMarker;
            os << ',';
            if (c.recall) os << *c.recall;
            else os << kUndefinedMarker;
            os << '\n';
        }
        os << "accuracy,," << r.accuracy << '\n';
        return os.str();
    }
    case ReportFormat::Text: {
        std::vector<std::size_t> idx(order.begin(), order.end());
        if (idx.empty()) {
            for (std::size_t k = 0; k < r.classes.size(); ++k) idx.push_back(k);
        }
        for (auto k : idx) {
            if (k >= r.classes.size()) throw ParameterError("class order index out of range");
        }
        auto joined = [&](auto field) {
            std::string s;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                if (i) s += '/';
                s += format_ratio(r.classes[idx[i]].*field);
            }
            return s;
        };
        os << "model: " << r.model << "\nhead: " << r.head << "\nsamples: " << r.samples << '\n';
        os << "classes: ";
        for (std::size_t i = 0; i < idx.size(); ++i) os << (i ? "/" : "") << r.classes[idx[i]].name;
        os << "\nprecision: " << joined(&ClassReport::precision) << '\n';
        os << "recall: " << joined(&ClassReport::recall) << '\n';
        os << "accuracy: " << format_percent(r.accuracy) << '\n';
        return os.str();
    }
    }
    throw ParameterError("unknown report format");
}

}  // namespace vitsvm
