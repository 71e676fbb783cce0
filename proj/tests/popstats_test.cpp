#include <gtest/gtest.h>

#include <random>

#include "tvol/popstats.hpp"

using namespace tvol;
using namespace tvol::popstats;

namespace {

std::vector<metrics::VolumeReport> reports(const std::vector<double>& v) {
  std::vector<metrics::VolumeReport> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    metrics::VolumeReport r;
    r.subject_id = "s" + std::to_string(i);
    r.volume_ml = v[i];
    out.push_back(r);
  }
  return out;
}

std::vector<double> normal_sample(std::size_t n, double mu, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mu, sigma);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(Summary, WorkedExample) {
  // mean 5, population sd 2, bounds 1 and 9
  const auto s = summarize(reports({2, 4, 4, 4, 5, 5, 7, 9}));
  EXPECT_EQ(s.n, 8u);
  EXPECT_DOUBLE_EQ(s.mean_ml, 5.0);
  EXPECT_DOUBLE_EQ(s.sd_ml, 2.0);
  EXPECT_EQ(s.frac_above_2sd, 0.0);  // 9 is on the bound, strict
  const auto inc = summarize(reports({2, 4, 4, 4, 5, 5, 7, 9}), {false, true});
  EXPECT_DOUBLE_EQ(inc.frac_above_2sd, 1.0 / 8.0);
}

TEST(Summary, NormalSampleOutsideFraction) {
  const auto s = summarize(reports(normal_sample(100000, 20.0, 4.0, 11)));
  EXPECT_NEAR(s.frac_outside_2sd, 0.0455, 0.003);
  EXPECT_DOUBLE_EQ(s.frac_outside_2sd, s.frac_above_2sd + s.frac_below_2sd);
}

TEST(Summary, TranslationAndScaleCovariance) {
  const auto base = normal_sample(5000, 15.0, 3.0, 4);
  const auto s = summarize(reports(base));
  for (double c : {-7.5, 0.25, 100.0}) {
    std::vector<double> shifted = base;
    for (auto& x : shifted) x += c;
    const auto t = summarize(reports(shifted));
    EXPECT_NEAR(t.mean_ml, s.mean_ml + c, 1e-9);
    EXPECT_NEAR(t.sd_ml, s.sd_ml, 1e-9);
    EXPECT_NEAR(t.frac_outside_2sd, s.frac_outside_2sd, 1e-9);
  }
  for (double k : {0.5, 3.0, 1000.0}) {
    std::vector<double> scaled = base;
    for (auto& x : scaled) x *= k;
    const auto t = summarize(reports(scaled));
    EXPECT_NEAR(t.mean_ml, k * s.mean_ml, 1e-9 * k * s.mean_ml);
    EXPECT_NEAR(t.sd_ml, k * s.sd_ml, 1e-9 * k * s.sd_ml);
    EXPECT_NEAR(t.frac_outside_2sd, s.frac_outside_2sd, 1e-9);
  }
}

TEST(Summary, FlaggedAndFailedHandling) {
  auto r = reports({10, 12, 14, 0});
  r[3].margin_flagged = true;
  metrics::VolumeReport failed;
  failed.subject_id = "f";
  failed.failed = true;
  r.push_back(failed);
  const auto s = summarize(r);
  EXPECT_EQ(s.n, 3u);
  EXPECT_EQ(s.n_zero_flagged, 1u);
  EXPECT_DOUBLE_EQ(s.mean_ml, 12.0);
  const auto with = summarize(r, {true, false});
  EXPECT_EQ(with.n, 4u);
  EXPECT_DOUBLE_EQ(with.mean_ml, 9.0);
}

TEST(Summary, TooFewAndConstant) {
  try {
    summarize(reports({5.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooFewSubjects);
  }
  const auto s = summarize(reports({3, 3, 3}), {false, true});
  EXPECT_EQ(s.sd_ml, 0.0);
  EXPECT_EQ(s.frac_outside_2sd, 0.0);
}

TEST(Summary, OrderIndependent) {
  auto v = normal_sample(999, 10, 2, 8);
  const auto a = summarize(reports(v));
  std::reverse(v.begin(), v.end());
  const auto b = summarize(reports(v));
  EXPECT_EQ(a.mean_ml, b.mean_ml);
  EXPECT_EQ(a.sd_ml, b.sd_ml);
}

TEST(Histogram, BinsAreContiguousAndCountEverything) {
  const auto v = normal_sample(1000, 20, 5, 2);
  std::vector<double> pos;
  for (double x : v) pos.push_back(std::max(0.0, x));
  const auto bins = histogram(pos, 2.5);
  std::size_t total = 0;
  for (std::size_t k = 0; k < bins.size(); ++k) {
    total += bins[k].count;
    EXPECT_DOUBLE_EQ(bins[k].left, 2.5 * static_cast<double>(k));
    if (k) EXPECT_EQ(bins[k].left, bins[k - 1].right);
  }
  EXPECT_EQ(total, pos.size());
}

TEST(Histogram, EdgesBelongToTheRightBin) {
  const auto bins = histogram(std::vector<double>{0.0, 1.0, 2.0, 2.9999}, 1.0);
  ASSERT_EQ(bins.size(), 3u);
  EXPECT_EQ(bins[0].count, 1u);
  EXPECT_EQ(bins[1].count, 1u);
  EXPECT_EQ(bins[2].count, 2u);
  const auto tenth = histogram(std::vector<double>{0.3}, 0.1);
  EXPECT_EQ(tenth.back().count, 1u);
  EXPECT_LE(tenth.back().left, 0.3);
  EXPECT_GT(tenth.back().right, 0.3);
}

TEST(Histogram, FlaggedVariants) {
  auto r = reports({1.0, 0.0, 5.0});
  r[1].margin_flagged = true;
  EXPECT_EQ(histogram(r, 1.0, false)[0].count, 0u);
  EXPECT_EQ(histogram(r, 1.0, true)[0].count, 1u);
  try {
    histogram(std::vector<double>{1.0}, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::PreconditionViolation);
  }
}
