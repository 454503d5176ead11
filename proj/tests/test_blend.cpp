#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "wwh/blend.hpp"
#include "wwh/rng.hpp"

using namespace wwh;

namespace {

BlendSpec spec_of(const std::vector<double>& w, const std::vector<std::size_t>& avail) {
  BlendSpec s;
  for (std::size_t i = 0; i < w.size(); ++i) s.entries.push_back({"d" + std::to_string(i), w[i], avail[i]});
  return s;
}

std::vector<std::size_t> sizes(const BlendPlan& p) {
  std::vector<std::size_t> out;
  for (const auto& d : p.datasets) out.push_back(d.target);
  return out;
}

std::vector<InstanceRef> pool(const std::string& id, std::size_t n) {
  std::vector<InstanceRef> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({id, "e" + std::to_string(i / 5), i % 5, 2 * i + 1});
  return v;
}

}  // namespace

TEST(Blend, EqualWeightsSplitEvenly) {
  EXPECT_EQ(sizes(resolve_plan(spec_of({0.5, 0.5}, {40, 60}))), (std::vector<std::size_t>{50, 50}));
}

TEST(Blend, TableRowArithmetic) {
  // 0.94 : 0.5 : 0.1 over 15400 is 9400 : 5000 : 1000 exactly.
  auto p = resolve_plan(spec_of({0.94, 0.5, 0.1}, {8000, 6000, 1400}));
  EXPECT_EQ(sizes(p), (std::vector<std::size_t>{9400, 5000, 1000}));
  EXPECT_EQ(p.datasets[0].mode, SamplingMode::Oversample);
  EXPECT_EQ(p.datasets[1].mode, SamplingMode::Undersample);
  EXPECT_EQ(p.datasets[2].mode, SamplingMode::Undersample);
}

TEST(Blend, LoneWeightTakesWholePool) {
  auto p = resolve_plan(spec_of({0.87}, {321}));
  EXPECT_EQ(p.datasets[0].target, 321u);
  EXPECT_EQ(p.datasets[0].mode, SamplingMode::Exact);
}

TEST(Blend, RejectsBadWeights) {
  EXPECT_THROW(resolve_plan(BlendSpec{}), ConfigError);
  EXPECT_THROW(resolve_plan(spec_of({0.5, 0.0}, {1, 1})), ConfigError);
  EXPECT_THROW(resolve_plan(spec_of({-1.0}, {1})), ConfigError);
  EXPECT_THROW(resolve_plan(spec_of({std::nan("")}, {1})), ConfigError);
}

TEST(Blend, HalfEvenThenLargestRemainder) {
  // Three equal weights over 10: quotas 3.33 each, one unit to the lowest index.
  EXPECT_EQ(sizes(resolve_plan(spec_of({1, 1, 1}, {4, 3, 3}))), (std::vector<std::size_t>{4, 3, 3}));
  // Quotas 2.5 and 2.5 round half-even to 2 and 2; the spare unit goes to index 0.
  EXPECT_EQ(sizes(resolve_plan(spec_of({1, 1}, {2, 3}))), (std::vector<std::size_t>{3, 2}));
}

TEST(Blend, MatchesRationalOracleOnRandomSpecs) {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    std::vector<double> w;
    std::vector<std::size_t> avail;
    for (std::size_t i = 0; i < n; ++i) {
      w.push_back(rng.bernoulli(0.3) ? static_cast<double>(1 + rng.below(10)) / 10.0 : 1e-3 + rng.uniform());
      avail.push_back(rng.below(5000));
    }
    if (std::accumulate(avail.begin(), avail.end(), std::size_t{0}) == 0) avail[0] = 1;
    auto plan = resolve_plan(spec_of(w, avail));
    const auto total = std::accumulate(avail.begin(), avail.end(), std::size_t{0});
    EXPECT_EQ(plan.total, total);
    EXPECT_EQ(sizes(plan), oracle::blend_sizes(w, total)) << "trial " << trial;
  }
}

TEST(Blend, ScaleInvariantAndMonotone) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> w = {0.1 + rng.uniform(), 0.1 + rng.uniform(), 0.1 + rng.uniform()};
    std::vector<std::size_t> avail = {rng.below(900) + 1, rng.below(900) + 1, rng.below(900) + 1};
    const auto base = sizes(resolve_plan(spec_of(w, avail)));
    std::vector<double> w2 = {w[0] * 4, w[1] * 4, w[2] * 4};  // a power of two keeps the ratios exact
    EXPECT_EQ(sizes(resolve_plan(spec_of(w2, avail))), base);
    std::vector<double> w3 = w;
    w3[1] *= 1.5;
    EXPECT_GE(sizes(resolve_plan(spec_of(w3, avail)))[1], base[1]);
  }
}

TEST(Blend, MaterializeExactPermutation) {
  auto plan = resolve_plan(spec_of({1.0}, {20}));
  std::map<std::string, std::vector<InstanceRef>> pools{{"d0", pool("d0", 20)}};
  auto out = materialize(plan, pools, 3);
  ASSERT_EQ(out.size(), 20u);
  std::multiset<InstanceRef> a(out.begin(), out.end()), b(pools["d0"].begin(), pools["d0"].end());
  EXPECT_EQ(a, b);
}

TEST(Blend, MaterializeMultiplicities) {
  // d0: 9400 from 8000 -> each 1 or 2 times; d1: 5000 from 6000 -> each at most once.
  auto plan = resolve_plan(spec_of({0.94, 0.5, 0.1}, {8000, 6000, 1400}));
  std::map<std::string, std::vector<InstanceRef>> pools{
      {"d0", pool("d0", 8000)}, {"d1", pool("d1", 6000)}, {"d2", pool("d2", 1400)}};
  auto out = materialize(plan, pools, 77);
  ASSERT_EQ(out.size(), 15400u);
  std::map<InstanceRef, int> count;
  std::map<std::string, std::size_t> per;
  for (const auto& r : out) {
    ++count[r];
    ++per[r.dataset_id];
  }
  EXPECT_EQ(per["d0"], 9400u);
  EXPECT_EQ(per["d1"], 5000u);
  EXPECT_EQ(per["d2"], 1000u);
  for (const auto& r : pools["d0"]) {
    EXPECT_GE(count[r], 1);
    EXPECT_LE(count[r], 2);
  }
  for (const auto& [r, c] : count) {
    if (r.dataset_id != "d0") {
      EXPECT_EQ(c, 1);
    }
  }
}

TEST(Blend, MaterializeDoubleCopies) {
  auto plan = resolve_plan(spec_of({1.0, 1.0}, {10, 30}));  // d0 target 20 from 10
  std::map<std::string, std::vector<InstanceRef>> pools{{"d0", pool("d0", 10)}, {"d1", pool("d1", 30)}};
  auto out = materialize(plan, pools, 1);
  std::map<InstanceRef, int> count;
  for (const auto& r : out) ++count[r];
  for (const auto& r : pools["d0"]) EXPECT_EQ(count[r], 2);
}

TEST(Blend, MaterializeIsSeeded) {
  auto plan = resolve_plan(spec_of({0.3, 0.7}, {50, 50}));
  std::map<std::string, std::vector<InstanceRef>> pools{{"d0", pool("d0", 50)}, {"d1", pool("d1", 50)}};
  EXPECT_EQ(materialize(plan, pools, 9), materialize(plan, pools, 9));
  EXPECT_NE(materialize(plan, pools, 9), materialize(plan, pools, 10));
}

TEST(Blend, EmptyPoolWithPositiveTarget) {
  auto plan = resolve_plan(spec_of({1.0, 1.0}, {0, 10}));
  std::map<std::string, std::vector<InstanceRef>> pools{{"d0", {}}, {"d1", pool("d1", 10)}};
  EXPECT_THROW(materialize(plan, pools, 1), ConfigError);
}

TEST(Blend, SpecFileAndManifestRoundTrip) {
  wwh::testing::TempDir dir;
  save_corpus(dir / "mspd.jsonl", wwh::testing::mspd_corpus(6, 1));
  save_corpus(dir / "daily.jsonl", wwh::testing::casual_corpus(3, 2));
  {
    std::ofstream f(dir / "blend.txt");
    f << "# id path weight part\n"
         "casual daily.jsonl 0.85\n"
         "mspd_pr mspd.jsonl 0.7 pr\n"
         "mspd_npr mspd.jsonl 0.8 npr\n";
  }
  auto sources = load_blend_spec(dir / "blend.txt");
  ASSERT_EQ(sources.size(), 3u);
  EXPECT_EQ(sources[1].part, "pr");
  Manifest m = build_manifest(sources, 4);
  std::size_t pool_total = 0;
  for (const auto& s : m.sources) pool_total += s.planned.available;
  EXPECT_EQ(m.instances.size(), pool_total);
  save_manifest(dir / "manifest.jsonl", m);
  Manifest back = load_manifest(dir / "manifest.jsonl");
  EXPECT_EQ(back.instances, m.instances);
  EXPECT_EQ(back.seed, 4u);
  EXPECT_EQ(back.shuffle, "global");
  ASSERT_EQ(back.sources.size(), 3u);
  EXPECT_EQ(back.sources[2].planned.target, m.sources[2].planned.target);
  EXPECT_EQ(build_manifest(sources, 4).instances, m.instances);
}

TEST(Blend, SpecParseErrors) {
  std::istringstream bad_weight("a x.jsonl heavy\n");
  EXPECT_THROW(parse_blend_spec(bad_weight), Error);
  std::istringstream bad_part("a x.jsonl 0.5 some\n");
  EXPECT_THROW(parse_blend_spec(bad_part), Error);
}
