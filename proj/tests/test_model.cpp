#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "wwh/model.hpp"
#include "wwh/train.hpp"

using namespace wwh;

namespace {

ModelConfig tiny(std::size_t vocab = 23) {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  c.vocab_size = vocab;
  c.max_seq_len = 12;
  c.dropout = 0;
  c.seed = 7;
  return c;
}

std::vector<bool> bits(std::initializer_list<int> v) {
  std::vector<bool> out;
  for (int x : v) out.push_back(x != 0);
  return out;
}

}  // namespace

TEST(Model, LayoutCountsEveryTensor) {
  ModelConfig c = tiny();
  auto l = make_layout(c);
  const std::size_t d = c.d_model, f = c.d_ff(), V = c.vocab_size;
  const std::size_t per_layer = 2 * d + d * 3 * d + 3 * d + d * d + d + 2 * d + d * f + f + f * d + d;
  EXPECT_EQ(l.total, V * d + c.max_seq_len * d + c.n_layers * per_layer + 2 * d);
  EXPECT_EQ(init_parameters(c).size(), l.total);
  EXPECT_EQ(init_parameters(c), init_parameters(c));
}

TEST(Model, ConfigValidation) {
  ModelConfig c = tiny();
  c.n_heads = 3;
  EXPECT_THROW(Transformer<double>{c}, ConfigError);
  c = tiny();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Transformer<double>(tiny(), std::vector<double>(3)), ConfigError);
}

TEST(Model, GradientMatchesCentralDifferences) {
  Transformer<double> m(tiny());
  std::vector<int> a = {0, 5, 3, 7, 9, 1, 22, 4, 11, 2};
  std::vector<int> b = {0, 6, 6, 12, 3};
  auto ma = bits({0, 0, 0, 1, 0, 1, 1, 0, 1, 1});
  auto mb = bits({0, 1, 0, 1, 1});
  std::vector<Transformer<double>::SeqRef> batch = {{a, &ma}, {b, &mb}};
  const double scale = 1.0 / 8;
  std::vector<double> g(m.num_parameters(), 0.0);
  m.forward_backward(batch, scale, &g, nullptr);
  auto loss = [&] { return m.forward_backward(batch, 0.0, nullptr, nullptr).nll_sum * scale; };

  Rng rng(3);
  double worst = 0;
  std::size_t checked = 0;
  for (int k = 0; k < 160; ++k) {
    const std::size_t i = rng.below(g.size());
    auto& w = m.parameters();
    const double orig = w[i], h = 1e-5;
    w[i] = orig + h;
    const double lp = loss();
    w[i] = orig - h;
    const double lm = loss();
    w[i] = orig;
    const double num = (lp - lm) / (2 * h);
    const double mag = std::abs(num) + std::abs(g[i]);
    if (mag < 1e-9) continue;  // both vanish (e.g. an unused embedding row)
    ++checked;
    worst = std::max(worst, std::abs(num - g[i]) / mag);
  }
  EXPECT_GE(checked, 100u);
  EXPECT_LT(worst, 1e-4);
}

TEST(Model, BatchEqualsSumOfSequences) {
  Transformer<double> m(tiny());
  std::vector<int> a = {0, 5, 3, 7, 9, 1};
  std::vector<int> b = {0, 6, 6, 12, 3, 8, 8, 1};
  auto ma = bits({0, 0, 1, 1, 1, 1});
  auto mb = bits({0, 0, 0, 0, 1, 1, 1, 1});
  std::vector<double> g1(m.num_parameters(), 0.0), g2(m.num_parameters(), 0.0);
  auto ra = m.forward_backward(a, ma, 0.5, &g1, nullptr);
  auto rb = m.forward_backward(b, mb, 0.5, &g1, nullptr);
  std::vector<Transformer<double>::SeqRef> batch = {{a, &ma}, {b, &mb}};
  auto rab = m.forward_backward(batch, 0.5, &g2, nullptr);
  EXPECT_EQ(rab.count, ra.count + rb.count);
  EXPECT_NEAR(rab.nll_sum, ra.nll_sum + rb.nll_sum, 1e-12);
  for (std::size_t i = 0; i < g1.size(); ++i) ASSERT_NEAR(g1[i], g2[i], 1e-12) << i;
}

TEST(Model, CausalityExhaustiveAtLengthEight) {
  ModelConfig c = tiny(9);
  c.n_layers = 2;
  Transformer<double> m(c);
  const std::vector<int> base = {0, 3, 5, 2, 8, 1, 4, 6};
  const auto ref = m.log_probs(base);
  for (std::size_t pos = 0; pos < base.size(); ++pos) {
    for (int v = 0; v < static_cast<int>(c.vocab_size); ++v) {
      if (v == base[pos]) continue;
      auto ids = base;
      ids[pos] = v;
      const auto lp = m.log_probs(ids);
      for (std::size_t t = 0; t < pos; ++t) {
        ASSERT_EQ((lp.row(static_cast<Eigen::Index>(t)) - ref.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff(), 0.0)
            << "row " << t << " moved when position " << pos << " changed";
      }
      // The changed position itself must matter for later rows.
      EXPECT_GT((lp.row(static_cast<Eigen::Index>(pos)) - ref.row(static_cast<Eigen::Index>(pos))).cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(Model, SequencesInABatchDoNotInteract) {
  Transformer<double> m(tiny());
  std::vector<int> a = {0, 5, 3, 7};
  std::vector<int> b1 = {0, 6, 6, 12, 3};
  std::vector<int> b2 = {0, 9, 2, 2, 3};
  auto ma = bits({0, 1, 1, 1});
  auto mb = bits({0, 0, 0, 0, 0});
  std::vector<Transformer<double>::SeqRef> x = {{a, &ma}, {b1, &mb}}, y = {{a, &ma}, {b2, &mb}};
  EXPECT_EQ(m.forward_backward(x, 0, nullptr, nullptr).nll_sum, m.forward_backward(y, 0, nullptr, nullptr).nll_sum);
}

TEST(Model, SoftmaxRowsNormalize) {
  Transformer<double> m(tiny());
  const std::vector<int> ids = {0, 5, 3, 7, 9, 1, 22, 4, 11, 2, 2, 3};
  const auto lp = m.log_probs(ids);
  for (Eigen::Index r = 0; r < lp.rows(); ++r) EXPECT_NEAR(lp.row(r).array().exp().sum(), 1.0, 1e-6);
  Transformer<float> f(tiny());
  const auto lf = f.log_probs(ids);
  for (Eigen::Index r = 0; r < lf.rows(); ++r) EXPECT_NEAR(lf.row(r).array().exp().sum(), 1.0f, 1e-6f);
}

TEST(Model, KvCacheMatchesFullForward) {
  ModelConfig c = tiny();
  c.n_layers = 2;
  Transformer<double> m(c);
  const std::vector<int> ids = {0, 5, 3, 7, 9, 1, 22, 4, 11, 2};
  const auto full = m.log_probs(ids);
  auto kv = m.make_cache();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto row = m.step(ids[t], kv);
    EXPECT_LT((row - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff(), 1e-9) << t;
  }
  auto kv2 = m.make_cache();
  auto last = m.prefill(ids, kv2);
  EXPECT_LT((last - full.row(full.rows() - 1)).cwiseAbs().maxCoeff(), 1e-9);
  m.step(0, kv2);
  m.step(0, kv2);
  EXPECT_THROW(m.step(0, kv2), Error);  // max_seq_len reached
}

TEST(Model, InitialLossIsNearLogV) {
  ModelConfig c;
  c.vocab_size = 641;
  c.d_model = 64;
  c.dropout = 0;
  Transformer<float> m(c);
  Rng rng(1);
  double sum = 0;
  std::size_t n = 0;
  for (int s = 0; s < 8; ++s) {
    std::vector<int> ids(60);
    for (auto& t : ids) t = static_cast<int>(rng.below(c.vocab_size));
    std::vector<bool> mask(ids.size(), true);
    auto r = m.forward_backward(ids, mask, 0, nullptr, nullptr);
    sum += r.nll_sum;
    n += r.count;
  }
  EXPECT_NEAR(sum / static_cast<double>(n), std::log(641.0), 0.05 * std::log(641.0));
}

TEST(Model, SingleWordVocabularyHasZeroLoss) {
  Transformer<double> m(tiny(1));
  std::vector<int> ids(6, 0);
  std::vector<bool> mask = bits({0, 1, 1, 1, 1, 1});
  auto r = m.forward_backward(ids, mask, 1, nullptr, nullptr);
  EXPECT_EQ(r.count, 5u);
  EXPECT_EQ(r.nll_sum, 0.0);
}

TEST(Model, RejectsBadInput) {
  Transformer<double> m(tiny());
  std::vector<bool> mask(3, true);
  EXPECT_THROW(m.forward_backward(std::vector<int>{0, 99, 1}, mask, 1, nullptr, nullptr), Error);
  EXPECT_THROW(m.forward_backward(std::vector<int>{0, 1}, mask, 1, nullptr, nullptr), Error);
  std::vector<int> long_seq(13, 0);
  EXPECT_THROW(m.log_probs(long_seq), Error);
}

TEST(Model, DropoutOnlyWithRng) {
  ModelConfig c = tiny();
  c.dropout = 0.3;
  Transformer<double> m(c);
  const std::vector<int> ids = {0, 5, 3, 7, 9, 1};
  const auto mask = bits({0, 1, 1, 1, 1, 1});
  const double plain = m.forward_backward(ids, mask, 0, nullptr, nullptr).nll_sum;
  EXPECT_EQ(m.forward_backward(ids, mask, 0, nullptr, nullptr).nll_sum, plain);
  Rng r1(5), r2(5);
  const double d1 = m.forward_backward(ids, mask, 0, nullptr, &r1).nll_sum;
  EXPECT_NE(d1, plain);
  EXPECT_EQ(m.forward_backward(ids, mask, 0, nullptr, &r2).nll_sum, d1);
}

TEST(Model, GeluMatchesTanhApproximation) {
  for (double u : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    const double want = 0.5 * u * (1 + std::tanh(std::sqrt(2 / M_PI) * (u + 0.044715 * u * u * u)));
    EXPECT_NEAR(Transformer<double>::gelu(u), want, 1e-15);
    const double h = 1e-6;
    EXPECT_NEAR(Transformer<double>::gelu_grad(u),
                (Transformer<double>::gelu(u + h) - Transformer<double>::gelu(u - h)) / (2 * h), 1e-8);
  }
}

TEST(Model, OverfitsOneBatch) {
  ModelConfig c = tiny(40);
  c.max_seq_len = 32;
  c.d_model = 32;
  std::vector<TrainingInstance> batch;
  Rng rng(11);
  for (int i = 0; i < 4; ++i) {
    TrainingInstance x;
    x.input_ids.push_back(0);
    for (int t = 0; t < 20; ++t) x.input_ids.push_back(static_cast<int>(rng.below(40)));
    x.loss_mask.assign(x.input_ids.size(), false);
    for (std::size_t t = 10; t < x.loss_mask.size(); ++t) x.loss_mask[t] = true;
    batch.push_back(x);
  }
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 4;
  tc.epochs = 500;
  tc.weight_decay = 0;
  double last = 1e9;
  std::size_t steps = 0;
  auto r = train(batch, c, tc, [&](const StepLog& s) {
    last = s.loss;
    steps = s.step + 1;
  });
  EXPECT_EQ(steps, 500u);
  Transformer<float> m(c, r.params);
  EXPECT_LT(mean_nll(m, batch).first, 0.05);
  EXPECT_LT(last, 0.1);
}
