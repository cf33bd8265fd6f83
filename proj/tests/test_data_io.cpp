#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "eqloss/data_io.hpp"

using namespace eqloss;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& body) {
    const fs::path dir = fs::temp_directory_path() / "eqloss_test_data_io";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream(p, std::ios::binary) << body;
    return p;
}

std::string numbered_csv(int n, const char* labels[2]) {
    std::string s = "a,b,label\n";
    for (int i = 0; i < n; ++i)
        s += std::to_string(i) + "," + std::to_string(i * i % 7) + "," + labels[i % 2] + "\n";
    return s;
}

}  // namespace

TEST(Numbers, RoundTrip) {
    for (double v : {0.1, -3.5e-300, 1.0 / 3.0, 6.02214076e23, 0.0}) EXPECT_EQ(parse_double(format_double(v)), v);
    EXPECT_EQ(format_double(NAN), "nan");
    EXPECT_EQ(format_double(-INFINITY), "-inf");
    EXPECT_EQ(parse_double(" +2.5 "), 2.5);
    EXPECT_FALSE(parse_double("2.5x"));
    EXPECT_FALSE(parse_double(""));
}

TEST(Mixture, SampleIsSeeded) {
    const auto a = sample_mixture(four_gaussian_mixture(), 500, 7);
    const auto b = sample_mixture(four_gaussian_mixture(), 500, 7);
    const auto c = sample_mixture(four_gaussian_mixture(), 500, 8);
    EXPECT_EQ(a.X.data, b.X.data);
    EXPECT_NE(a.X.data, c.X.data);
    std::set<double> labels(a.y.begin(), a.y.end());
    EXPECT_EQ(labels, (std::set<double>{-1.0, 1.0}));
    EXPECT_THROW(sample_mixture(four_gaussian_mixture(), 0, 1), std::invalid_argument);
}

TEST(Csv, QuotedFieldsBomAndCrlf) {
    const auto p = temp_file("quoted.csv", "\xEF\xBB\xBF" "x,\"name, with comma\",label\r\n1,2,yes\r\n\r\n3,4,no\r\n");
    const auto t = read_csv_table(p);
    EXPECT_EQ(t.header, (std::vector<std::string>{"x", "name, with comma", "label"}));
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[1][2], "no");
    EXPECT_EQ(t.lines[1], 4u);
}

TEST(Csv, ErrorsCarryLineNumbers) {
    const auto p = temp_file("ragged.csv", "a,b,label\n1,2,1\n3,1\n");
    try {
        read_csv_table(p);
        FAIL() << "no throw";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
    }
    const auto q = temp_file("nonnum.csv", "a,label\n1,1\nfoo,-1\n");
    EXPECT_THROW(load_csv(q, {}, 1), DataError);
    EXPECT_THROW(load_csv(temp_file("nolabel.csv", "a,b\n1,2\n"), {}, 1), DataError);
    EXPECT_THROW(read_csv_table("/nonexistent/x.csv"), DataError);
}

TEST(Labels, BinaryMappings) {
    const char* zero_one[2] = {"0", "1"};
    auto r = load_csv(temp_file("b01.csv", numbered_csv(20, zero_one)), {}, 3);
    for (const auto& [raw, v] : r.label_map) EXPECT_EQ(v, raw == "1" ? 1.0 : -1.0);
    const char* words[2] = {"spam", "ham"};
    r = load_csv(temp_file("bw.csv", numbered_csv(20, words)), {}, 3);
    for (const auto& [raw, v] : r.label_map) EXPECT_EQ(v, raw == "spam" ? 1.0 : -1.0);
    CsvSchema s;
    s.positive_label = "ham";
    r = load_csv(temp_file("bw.csv", numbered_csv(20, words)), s, 3);
    for (const auto& [raw, v] : r.label_map) EXPECT_EQ(v, raw == "ham" ? 1.0 : -1.0);
    const auto three = temp_file("b3.csv", "a,label\n1,x\n2,y\n3,z\n4,x\n5,y\n");
    EXPECT_THROW(load_csv(three, {}, 1), DataError);
}

TEST(Labels, Multiclass) {
    CsvSchema s;
    s.task = Task::multiclass;
    s.classes = {"c", "b", "a"};
    const auto p = temp_file("mc.csv", "f,label\n1,a\n2,b\n3,c\n4,a\n5,b\n6,c\n7,a\n8,b\n9,c\n10,a\n");
    const auto r = load_csv(p, s, 4);
    for (const auto& [raw, v] : r.label_map) EXPECT_EQ(v, raw == "c" ? 1.0 : raw == "b" ? 2.0 : 3.0);
    s.classes = {"a", "b"};
    EXPECT_THROW(load_csv(p, s, 4), DataError);
}

TEST(Split, DeterministicDisjointAndStandardized) {
    const char* lab[2] = {"1", "-1"};
    const auto p = temp_file("split.csv", numbered_csv(50, lab));
    const auto a = load_csv(p, {}, 11);
    const auto b = load_csv(p, {}, 11);
    const auto c = load_csv(p, {}, 12);
    EXPECT_EQ(a.train.source_rows, b.train.source_rows);
    EXPECT_EQ(a.split_hash, b.split_hash);
    EXPECT_NE(a.split_hash, c.split_hash);
    EXPECT_EQ(a.train.size(), 40u);
    EXPECT_EQ(a.test.size(), 10u);
    std::set<std::size_t> rows(a.train.source_rows.begin(), a.train.source_rows.end());
    for (std::size_t r : a.test.source_rows) EXPECT_FALSE(rows.count(r));
    // train columns have mean 0 and unit population std
    for (std::size_t j = 0; j < a.train.X.cols; ++j) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < a.train.X.rows; ++i) m += a.train.X(i, j);
        m /= a.train.X.rows;
        for (std::size_t i = 0; i < a.train.X.rows; ++i) v += (a.train.X(i, j) - m) * (a.train.X(i, j) - m);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v / a.train.X.rows, 1.0, 1e-12);
    }
    EXPECT_NO_THROW(check_no_leakage(a));
    auto tampered = a;
    tampered.train.standardization->mean[0] += 1e-9;
    EXPECT_THROW(check_no_leakage(tampered), DataError);
}

TEST(Split, SubsampleAndConstantColumn) {
    const auto p = temp_file("const.csv", "a,k,label\n1,5,1\n2,5,-1\n3,5,1\n4,5,-1\n5,5,1\n6,5,-1\n7,5,1\n8,5,-1\n");
    CsvSchema s;
    s.subsample = 5;
    const auto r = load_csv(p, s, 2);
    EXPECT_EQ(r.train.size() + r.test.size(), 5u);
    EXPECT_EQ(r.train.standardization->std[1], std_floor);
    for (double v : r.train.X.data) EXPECT_TRUE(std::isfinite(v));
    s.split = 1.0;
    EXPECT_THROW(load_csv(p, s, 2), std::invalid_argument);
}

TEST(Split, RegressionTargetsScaled) {
    CsvSchema s;
    s.task = Task::regression;
    s.label_column = "t";
    const auto p = temp_file("reg.csv", "t,x\n10,1\n-20,2\n5,3\n8,4\n-3,5\n");
    const auto r = load_csv(p, s, 1);
    double mx = 0.0;
    for (double v : r.train.y) mx = std::max(mx, std::abs(v));
    EXPECT_DOUBLE_EQ(mx, 1.0);
    EXPECT_GT(r.train.target_scale, 1.0);
}

TEST(RoundTrip, WriteAndReadBack) {
    auto d = sample_mixture(four_gaussian_mixture(), 37, 5);
    const fs::path p = fs::temp_directory_path() / "eqloss_test_data_io" / "rt.csv";
    write_csv(p, d);
    const auto back = read_dataset_csv(p, Task::binary);
    EXPECT_EQ(back.X.data, d.X.data);
    EXPECT_EQ(back.y, d.y);
    EXPECT_EQ(back.feature_names, d.feature_names);
}

TEST(Json, RunRecordSerialization) {
    AlgorithmSpec s;
    s.kind = AlgorithmKind::pool;
    s.T = 3;
    s.seed = 9;
    RunRecord r;
    r.spec = s;
    r.theta = {1.0, 2.0};
    r.theta_bar = {0.5, 1.0};
    r.steps.push_back({1, true, 0, 0.2, 0.7, 1});
    r.wall_seconds = 1.5;
    const auto j = to_json(r);
    EXPECT_EQ(j["spec"]["kind"], "pool");
    EXPECT_EQ(j["rng"], "philox4x64-10");
    EXPECT_FALSE(j.contains("wall_seconds"));
    EXPECT_TRUE(to_json(r, true).contains("wall_seconds"));
    const fs::path p = fs::temp_directory_path() / "eqloss_test_data_io" / "r.json";
    write_json(p, j);
    EXPECT_EQ(read_json(p), j);
}
