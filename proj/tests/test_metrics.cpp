#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"

using namespace vitsvm;

namespace {

EvalReport table_row_report()
{
    // Index order: CSR, DR, macular hole, normal.
    EvalReport r;
    r.model = "vit-b32";
    r.head = "svm-hinge";
    r.samples = 200;
    r.accuracy = 0.94;
    r.classes = {{"central serous retinopathy", 0.89, 0.80},
                 {"diabetic retinopathy", 1.00, 1.00},
                 {"macular hole", 0.82, 0.90},
                 {"normal", 1.00, 1.00}};
    return r;
}

}  // namespace

TEST(Confusion, SmallExample)
{
    const std::vector<std::size_t> truth{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    const std::vector<std::size_t> pred{0, 0, 0, 0, 0, 0, 1, 1, 1, 1};
    const auto cm = confusion_matrix(truth, pred, 2);
    EXPECT_EQ(cm.counts, (std::vector<std::uint64_t>{5, 0, 1, 4}));
    const auto s = precision_recall(cm);
    EXPECT_DOUBLE_EQ(*s[0].precision, 5.0 / 6.0);
    EXPECT_DOUBLE_EQ(*s[1].precision, 1.0);
    EXPECT_DOUBLE_EQ(*s[0].recall, 1.0);
    EXPECT_DOUBLE_EQ(*s[1].recall, 0.8);
    EXPECT_DOUBLE_EQ(accuracy(cm), 0.9);
}

TEST(Confusion, UndefinedRatiosAreMissing)
{
    const std::vector<std::size_t> truth{0, 0}, pred{0, 0};
    const auto s = precision_recall(confusion_matrix(truth, pred, 3));
    EXPECT_FALSE(s[1].precision.has_value());
    EXPECT_FALSE(s[1].recall.has_value());
    EXPECT_EQ(format_ratio(s[1].precision), "n/a");
}

TEST(Confusion, Errors)
{
    const std::vector<std::size_t> a{0, 1}, b{0}, bad{0, 5};
    EXPECT_THROW(confusion_matrix(a, b, 2), ContractError);
    EXPECT_THROW(confusion_matrix(a, bad, 2), ContractError);
    EXPECT_THROW(accuracy(confusion_matrix(std::vector<std::size_t>{}, std::vector<std::size_t>{}, 2)), ContractError);
}

TEST(Confusion, MatchesDirectCountingOnRandomPairs)
{
    Rng rng(1);
    for (std::size_t k : {2u, 3u, 4u}) {
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 1 + rng.below(300);
            std::vector<std::size_t> truth(n), pred(n);
            for (std::size_t i = 0; i < n; ++i) {
                truth[i] = rng.below(k);
                pred[i] = rng.below(k);
            }
            const auto cm = confusion_matrix(truth, pred, k);
            const auto s = precision_recall(cm);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < n; ++i) hits += truth[i] == pred[i];
            EXPECT_EQ(accuracy(cm), static_cast<double>(hits) / static_cast<double>(n));
            for (std::size_t c = 0; c < k; ++c) {
                std::size_t tp = 0, predicted = 0, actual = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    tp += truth[i] == c && pred[i] == c;
                    predicted += pred[i] == c;
                    actual += truth[i] == c;
                }
                if (predicted) EXPECT_EQ(*s[c].precision, static_cast<double>(tp) / static_cast<double>(predicted));
                else EXPECT_FALSE(s[c].precision);
                if (actual) EXPECT_EQ(*s[c].recall, static_cast<double>(tp) / static_cast<double>(actual));
                else EXPECT_FALSE(s[c].recall);
            }
        }
    }
}

TEST(Confusion, SamplePermutationInvariance)
{
    Rng rng(2);
    std::vector<std::size_t> truth(100), pred(100), idx(100);
    for (std::size_t i = 0; i < 100; ++i) {
        truth[i] = rng.below(4);
        pred[i] = rng.below(4);
    }
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx, rng);
    std::vector<std::size_t> t2, p2;
    for (auto i : idx) {
        t2.push_back(truth[i]);
        p2.push_back(pred[i]);
    }
    EXPECT_EQ(confusion_matrix(truth, pred, 4), confusion_matrix(t2, p2, 4));
}

TEST(Format, RatioRoundsHalfUp)
{
    EXPECT_EQ(format_ratio(0.125), "0.13");
    EXPECT_EQ(format_ratio(0.8), "0.80");
    EXPECT_EQ(format_ratio(1.0), "1.00");
    EXPECT_EQ(format_ratio(2.0 / 3.0), "0.67");
    EXPECT_EQ(format_percent(0.94), "94%");
    EXPECT_EQ(format_percent(0.835), "84%");
}

TEST(Report, TextReproducesTableRow)
{
    const std::vector<std::size_t> order{3, 1, 0, 2};
    const auto text = render_report(table_row_report(), ReportFormat::Text, order);
    EXPECT_NE(text.find("precision: 1.00/1.00/0.89/0.82\n"), std::string::npos) << text;
    EXPECT_NE(text.find("recall: 1.00/1.00/0.80/0.90\n"), std::string::npos) << text;
    EXPECT_NE(text.find("accuracy: 94%\n"), std::string::npos) << text;
    EXPECT_NE(text.find("classes: normal/diabetic retinopathy/"), std::string::npos) << text;
    const std::vector<std::size_t> bad{7};
    EXPECT_THROW(render_report(table_row_report(), ReportFormat::Text, bad), ParameterError);
}

TEST(Report, JsonRoundTripIsLossless)
{
    auto r = table_row_report();
    r.classes[2].precision.reset();
    r.accuracy = 1.0 / 3.0;
    r.confusion = {{1, 2}, {3, 4}};
    const auto text = render_report(r, ReportFormat::Json);
    EXPECT_EQ(report_from_json(nlohmann::json::parse(text)), r);
    EXPECT_THROW(report_from_json(nlohmann::json::parse("{}")), ParseError);
}

TEST(Report, CsvLayout)
{
    const auto csv = render_report(table_row_report(), ReportFormat::Csv);
    std::istringstream in(csv);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 6u);
    EXPECT_EQ(lines[0], "class,precision,recall");
    EXPECT_EQ(lines[2], "\"diabetic retinopathy\",1,1");
    EXPECT_EQ(lines[5], "accuracy,,0.93999999999999995");
}

TEST(Report, FormatParsing)
{
    EXPECT_EQ(parse_report_format("csv"), ReportFormat::Csv);
    EXPECT_THROW(parse_report_format("xml"), ParameterError);
}

TEST(Report, MakeReportFromMatrix)
{
    const std::vector<std::size_t> truth{0, 1, 2, 3, 3}, pred{0, 1, 2, 3, 0};
    const auto r = make_report(confusion_matrix(truth, pred, 4), "tiny", "svm-hinge");
    EXPECT_EQ(r.samples, 5u);
    EXPECT_DOUBLE_EQ(r.accuracy, 0.8);
    EXPECT_DOUBLE_EQ(*r.classes[0].precision, 0.5);
    EXPECT_EQ(r.confusion[3], (std::vector<std::uint64_t>{1, 0, 0, 1}));
}
