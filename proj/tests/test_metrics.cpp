#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "cranioclip/metrics.hpp"

using namespace cranioclip;
using namespace cranioclip::metrics;

namespace {

Mask random_mask(Dims3 d, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  Mask m(d);
  for (auto& v : m.data()) v = coin(rng);
  return m;
}

std::set<std::size_t> ones(const Mask& m) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.data()[i]) s.insert(i);
  return s;
}

}  // namespace

TEST(Dice, MatchesSetOracle) {
  const Dims3 d{9, 8, 7};
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto a = random_mask(d, 0.1 + 0.02 * double(s), s), b = random_mask(d, 0.4, 1000 + s);
    const auto A = ones(a), B = ones(b);
    std::size_t inter = 0;
    for (auto i : A) inter += B.count(i);
    const double want = 2.0 * double(inter) / double(A.size() + B.size());
    EXPECT_DOUBLE_EQ(dice(a, b), want);
    EXPECT_DOUBLE_EQ(dice(a, b), dice(b, a));
    EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
  }
}

TEST(Dice, HandValuesAndEdgeCases) {
  Mask a({4, 1, 1}, std::vector<std::uint8_t>{1, 1, 0, 0});
  Mask b({4, 1, 1}, std::vector<std::uint8_t>{0, 1, 1, 1});
  EXPECT_DOUBLE_EQ(dice(a, b), 2.0 * 1 / 5);
  EXPECT_DOUBLE_EQ(dice(Mask({3, 3, 3}), Mask({3, 3, 3})), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, Mask({4, 1, 1})), 0.0);
  EXPECT_THROW(dice(a, Mask({2, 2, 1})), Error);
}

TEST(ErrorRates, MatchOracle) {
  const Dims3 d{10, 6, 5};
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto p = random_mask(d, 0.5, s), t = random_mask(d, 0.3, 500 + s);
    double fn = 0, fp = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (t.data()[i]) {
        ++pos;
        fn += !p.data()[i];
      } else {
        ++neg;
        fp += p.data()[i];
      }
    }
    const auto r = fnr_fpr(p, t);
    EXPECT_DOUBLE_EQ(r.fnr, fn / pos);
    EXPECT_DOUBLE_EQ(r.fpr, fp / neg);
  }
}

TEST(ErrorRates, DegenerateTruthRejected) {
  const Mask p({3, 3, 3}, 1);
  for (std::uint8_t fill : {0, 1}) {
    try {
      fnr_fpr(p, Mask({3, 3, 3}, fill));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
    }
  }
}

TEST(Aggregate, PercentagesAndPopulationStd) {
  std::vector<VolumeMetrics> rows{{"a", 0.90, 0.10, 0.01, 2.0}, {"b", 0.96, 0.02, 0.03, 4.0}};
  const auto r = aggregate(rows);
  EXPECT_NEAR(r.dice.mean, 93.0, 1e-12);
  EXPECT_NEAR(r.dice.std, 3.0, 1e-12);
  EXPECT_NEAR(r.fnr.mean, 6.0, 1e-12);
  EXPECT_NEAR(r.fnr.std, 4.0, 1e-12);
  EXPECT_NEAR(r.fpr.mean, 2.0, 1e-12);
  EXPECT_NEAR(r.seconds.mean, 3.0, 1e-12);
  EXPECT_NEAR(r.seconds.std, 1.0, 1e-12);
  EXPECT_THROW(aggregate({}), Error);
}

TEST(Aggregate, IdenticalMasksScorePerfect) {
  const auto t = random_mask({8, 8, 8}, 0.4, 3);
  const auto r = aggregate({evaluate("v", t, t, 1.5)});
  EXPECT_DOUBLE_EQ(r.dice.mean, 100.0);
  EXPECT_DOUBLE_EQ(r.fnr.mean, 0.0);
  EXPECT_DOUBLE_EQ(r.fpr.mean, 0.0);
  EXPECT_DOUBLE_EQ(r.dice.std, 0.0);
}

TEST(Report, CsvRoundTripsAtFullPrecision) {
  const double third = 1.0 / 3.0;
  const auto r = aggregate({{"vol_01", third, 0.125, 1e-7, 12.5}});
  std::ostringstream out;
  write_csv(out, r);
  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "volume_id,dice,fnr,fpr,seconds");
  EXPECT_EQ(row.substr(0, 7), "vol_01,");
  EXPECT_EQ(std::stod(row.substr(7, row.find(',', 7) - 7)), third);
}

TEST(Report, TableHasColumnsAndMeanStdCells) {
  const auto r = aggregate({{"a", 0.90, 0.10, 0.01, 2.0}, {"b", 0.96, 0.02, 0.03, 4.0}});
  std::ostringstream out;
  write_table(out, r, "fused");
  const auto s = out.str();
  for (const char* col : {"Method", "Processing time (s)", "Dice (%)", "FNR (%)", "FPR (%)"})
    EXPECT_NE(s.find(col), std::string::npos) << col;
  EXPECT_NE(s.find("fused"), std::string::npos);
  EXPECT_NE(s.find("93.0 \xc2\xb1 3.0"), std::string::npos) << s;
  EXPECT_NE(s.find("3.0 \xc2\xb1 1.0"), std::string::npos) << s;
}
