#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "histofuse/metrics.hpp"
#include "test_support.hpp"

using namespace histofuse;
using testing_support::Rng;
using testing_support::TempDir;

namespace {

double oracle_auc(const std::vector<double>& s, const std::vector<int>& pos) {
  const auto [num, den] = oracle::auc_pairs(s, pos);
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Accuracy, Examples) {
  const std::vector<int> t = {0, 1, 2, 3};
  EXPECT_EQ(accuracy(t, t), 1.0);
  EXPECT_EQ(accuracy(std::vector<int>{0, 1, 2, 0}, t), 0.75);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), InputError);
  EXPECT_THROW(accuracy(std::vector<int>{1}, t), InputError);
}

TEST(Accuracy, PercentFormat) {
  EXPECT_EQ(format_percent(0.9601), "96.01");
  EXPECT_EQ(format_percent(0.96012), "96.01");
  EXPECT_EQ(format_percent(0.968), "96.80");
  EXPECT_EQ(format_percent(1.0), "100.00");
  EXPECT_EQ(format_percent(0.0), "0.00");
}

TEST(Roc, Examples) {
  const std::vector<int> lab = {1, 1, 0, 0};
  EXPECT_EQ(roc_points(std::vector<double>{0.9, 0.8, 0.2, 0.1}, lab),
            (std::vector<RocPoint>{{0, 0}, {0, 1}, {1, 1}}));
  EXPECT_EQ(roc_points(std::vector<double>{0.5, 0.5, 0.5, 0.5}, lab),
            (std::vector<RocPoint>{{0, 0}, {1, 1}}));
  const std::vector<double> s = {0.9, 0.8, 0.4, 0.7, 0.3, 0.2};
  const std::vector<int> p = {1, 1, 1, 0, 0, 0};
  const auto roc = roc_points(s, p);
  EXPECT_NEAR(trapezoid_area(roc), 8.0 / 9.0, 1e-15);
  EXPECT_NEAR(auc(s, p), 8.0 / 9.0, 1e-15);
  EXPECT_EQ(oracle_auc(s, p), auc(s, p));
  EXPECT_THROW(roc_points(s, std::vector<int>(6, 1)), InputError);
  EXPECT_THROW(auc(s, std::vector<int>(6, 0)), InputError);
}

TEST(Roc, PerfectAndTied) {
  EXPECT_EQ(auc(std::vector<double>{3, 2, 1}, std::vector<int>{1, 0, 0}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{1, 1, 1, 1}, std::vector<int>{1, 0, 1, 0}), 0.5);
}

TEST(Roc, RandomSetsMatchPairwiseOracle) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(150);
    std::vector<double> s(n);
    std::vector<int> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(12)) / 4.0;  // plenty of ties
      p[i] = static_cast<int>(rng.below(2));
    }
    p[0] = 1;
    p[1] = 0;
    const double a = auc(s, p);
    EXPECT_EQ(a, oracle_auc(s, p));
    const auto roc = roc_points(s, p);
    EXPECT_NEAR(trapezoid_area(roc), a, 1e-12);
    EXPECT_EQ(roc.front(), (RocPoint{0, 0}));
    EXPECT_EQ(roc.back(), (RocPoint{1, 1}));
    for (std::size_t i = 1; i < roc.size(); ++i) {
      EXPECT_GE(roc[i].fpr, roc[i - 1].fpr);
      EXPECT_GE(roc[i].tpr, roc[i - 1].tpr);
    }
  }
}

TEST(Roc, RankInvarianceAndComplement) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(60), mapped(60), neg(60);
    std::vector<int> p(60), q(60);
    for (std::size_t i = 0; i < 60; ++i) {
      s[i] = rng.normal();
      mapped[i] = std::exp(3 * s[i]) + 1;  // strictly increasing map
      neg[i] = -s[i];
      p[i] = static_cast<int>(rng.below(2));
      q[i] = 1 - p[i];
    }
    p[0] = 1;
    p[1] = 0;
    q[0] = 0;
    q[1] = 1;
    EXPECT_EQ(auc(s, p), auc(mapped, p));
    EXPECT_NEAR(auc(s, p) + auc(neg, p), 1.0, 1e-12);
    EXPECT_NEAR(auc(s, p), auc(neg, q), 1e-12);
  }
}

TEST(Confusion, RowSumsAreClassCounts) {
  Rng rng(3);
  std::vector<int> pred(500), truth(500);
  for (std::size_t i = 0; i < 500; ++i) {
    pred[i] = static_cast<int>(rng.below(5));
    truth[i] = static_cast<int>(rng.below(5));
  }
  const auto cm = confusion_matrix(pred, truth, 5);
  EXPECT_EQ(cm.total(), 500U);
  for (int c = 0; c < 5; ++c) {
    std::size_t row = 0;
    for (auto v : cm.counts[c]) row += v;
    EXPECT_EQ(row, static_cast<std::size_t>(std::count(truth.begin(), truth.end(), c)));
  }
  EXPECT_DOUBLE_EQ(accuracy(pred, truth), static_cast<double>(cm.trace()) / 500.0);
  EXPECT_THROW(confusion_matrix(std::vector<int>{5}, std::vector<int>{0}, 5), InputError);
}

TEST(Evaluate, PerfectClassifier) {
  ScoreMatrix s;
  s.rows = 10;
  s.cols = 5;
  std::vector<int> truth(10);
  for (std::size_t i = 0; i < 10; ++i) {
    truth[i] = static_cast<int>(i % 5);
    for (std::size_t c = 0; c < 5; ++c) s.values.push_back(c == i % 5 ? 0.9 : 0.025);
  }
  const auto r = evaluate_scores(s, truth);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.auc_macro, 1.0);
  for (const auto& a : r.auc_per_class) EXPECT_EQ(a, 1.0);
  EXPECT_EQ(r.roc.size(), 5U);
}

TEST(Evaluate, AbsentClassIsExcluded) {
  ScoreMatrix s;
  s.rows = 4;
  s.cols = 3;
  s.values = {0.8, 0.1, 0.1, 0.3, 0.6, 0.1, 0.6, 0.3, 0.1, 0.2, 0.7, 0.1};
  const std::vector<int> truth = {0, 1, 1, 0};
  const auto r = evaluate_scores(s, truth);
  EXPECT_FALSE(r.auc_per_class[2].has_value());
  EXPECT_TRUE(r.roc[2].empty());
  EXPECT_NEAR(r.auc_macro, (*r.auc_per_class[0] + *r.auc_per_class[1]) / 2, 1e-15);
  EXPECT_EQ(*r.auc_per_class[1], 0.5);
}

TEST(Evaluate, NullScoresGiveChanceAuc) {
  Rng rng(4);
  ScoreMatrix s;
  s.rows = 10000;
  s.cols = 5;
  std::vector<int> truth(10000);
  for (std::size_t i = 0; i < 10000; ++i) {
    truth[i] = static_cast<int>(i % 5);
    for (int c = 0; c < 5; ++c) s.values.push_back(rng.uniform());
  }
  const auto r = evaluate_scores(s, truth);
  EXPECT_NEAR(r.auc_macro, 0.5, 0.02);
  EXPECT_NEAR(r.accuracy, 0.2, 0.03);
}

TEST(Evaluate, ModelOnMatrix) {
  const auto train = testing_support::blobs(5, 20, 3, 8.0);
  const auto m = histofuse::train(train, KnnParams{3, KnnMetric::euclidean, KnnWeighting::uniform}, 1);
  const auto r = evaluate(m, testing_support::to_matrix(testing_support::blobs(6, 10, 3, 8.0)));
  EXPECT_EQ(r.confusion.total(), 30U);
  EXPECT_GE(r.accuracy, 0.95);
  EXPECT_GE(r.auc_macro, 0.95);
}

TEST(Report, CsvLayout) {
  const std::vector<ReportRow> rows = {{"svm", "fused", std::nullopt, 0.968, 0.9601},
                                       {"knn", "deep", 30.0, 0.5, 0.25}};
  EXPECT_EQ(report_csv(rows),
            "model,feature_kind,snr_db,auc_pct,accuracy_pct\n"
            "svm,fused,,96.80,96.01\n"
            "knn,deep,30,50.00,25.00\n");
  TempDir dir;
  write_report_csv(dir / "r.csv", rows);
  EXPECT_EQ(slurp(dir / "r.csv"), report_csv(rows));
}

TEST(Report, RocFiles) {
  const std::vector<RocPoint> roc = {{0, 0}, {0.5, 0.75}, {1, 1}};
  TempDir dir;
  write_roc_csv(dir / "roc.csv", roc);
  EXPECT_EQ(slurp(dir / "roc.csv"), "fpr,tpr\n0,0\n0.5,0.75\n1,1\n");
  const auto svg = roc_svg(roc, "class 0");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
