#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "semcache/adapter.hpp"

using namespace semcache;

namespace {

EmbeddingVector unit(std::vector<float> v) { return normalize(EmbeddingVector(std::move(v))); }

EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<float> n;
  std::vector<float> v(d);
  for (auto& x : v) x = n(rng);
  return unit(v);
}

AdapterModel random_adapter(std::mt19937_64& rng, std::size_t in, std::size_t out) {
  std::normal_distribution<double> n;
  std::vector<double> w(in * out);
  for (auto& x : w) x = n(rng);
  return AdapterModel(in, out, w);
}

// Oracles written straight from the loss definitions, on dense doubles.
std::vector<double> matvec(const AdapterModel& m, const EmbeddingVector& e) {
  std::vector<double> y(m.out_dim(), 0.0);
  for (std::size_t r = 0; r < m.out_dim(); ++r)
    for (std::size_t c = 0; c < m.in_dim(); ++c) y[r] += m.at(r, c) * e[c];
  return y;
}

double cos_dense(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

double contrastive_oracle(const AdapterModel& m, const std::vector<EmbeddedPair>& batch, double margin) {
  double sum = 0;
  for (const auto& p : batch) {
    const double d = 1.0 - cos_dense(matvec(m, p.u), matvec(m, p.v));
    sum += p.duplicate ? d * d : std::pow(std::max(0.0, margin - d), 2);
  }
  return sum / static_cast<double>(batch.size());
}

double mnr_oracle(const AdapterModel& m, const std::vector<std::pair<EmbeddingVector, EmbeddingVector>>& batch,
                  double scale) {
  double sum = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double z = 0;
    for (std::size_t j = 0; j < batch.size(); ++j)
      z += std::exp(scale * cos_dense(matvec(m, batch[i].first), matvec(m, batch[j].second)));
    sum += -scale * cos_dense(matvec(m, batch[i].first), matvec(m, batch[i].second)) + std::log(z);
  }
  return sum / static_cast<double>(batch.size());
}

template <class LossFn>
double max_fd_relative_error(AdapterModel m, const std::vector<double>& analytic, LossFn loss, double floor) {
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double w0 = m.weights()[i];
    m.mutable_weights()[i] = w0 + h;
    const double up = loss(m);
    m.mutable_weights()[i] = w0 - h;
    const double down = loss(m);
    m.mutable_weights()[i] = w0;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), floor});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace

TEST(Adapter, IdentityAndShape) {
  const auto id = AdapterModel::identity(3);
  EXPECT_EQ(id.at(0, 0), 1.0);
  EXPECT_EQ(id.at(0, 1), 0.0);
  EXPECT_THROW(AdapterModel(2, 2, {1, 2, 3}), Error);
  EXPECT_THROW(AdapterModel(1, 1, {NAN}), Error);
}

TEST(Adapter, ApplyExamples) {
  const auto e = unit({0.6f, 0.8f});
  const auto out = apply_adapter(AdapterModel::identity(2), e);
  EXPECT_NEAR(out[0], 0.6, 1e-6);
  EXPECT_NEAR(out[1], 0.8, 1e-6);

  const auto twice = apply_adapter(AdapterModel(2, 2, {2, 0, 0, 2}), e);
  EXPECT_NEAR(twice[0], 0.6, 1e-6);
  EXPECT_NEAR(twice[1], 0.8, 1e-6);

  const auto swapped = apply_adapter(AdapterModel(2, 2, {0, 1, 1, 0}), unit({1, 0}));
  EXPECT_NEAR(swapped[0], 0.0, 1e-7);
  EXPECT_NEAR(swapped[1], 1.0, 1e-7);

  EXPECT_THROW(apply_adapter(AdapterModel::identity(3), e), Error);
}

TEST(Contrastive, Examples) {
  const auto id = AdapterModel::identity(2);
  const auto u = unit({1, 0});
  const auto v = unit({1, 1});
  std::vector<EmbeddedPair> same{{u, u, true}};
  EXPECT_NEAR(contrastive_loss(id, same, 0.5).loss, 0.0, 1e-12);

  std::vector<EmbeddedPair> far{{u, unit({0, 1}), false}};  // d = 1 >= margin
  EXPECT_EQ(contrastive_loss(id, far, 0.5).loss, 0.0);

  std::vector<EmbeddedPair> dup{{u, v, true}};
  const double d = 1.0 - 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(d, 0.29289, 1e-5);
  EXPECT_NEAR(contrastive_loss(id, dup, 0.5).loss, 0.08579, 1e-4);
  EXPECT_NEAR(contrastive_loss(id, dup, 0.5).loss, d * d, 1e-6);

  EXPECT_THROW(contrastive_loss(id, std::vector<EmbeddedPair>{}, 0.5), Error);
}

TEST(Mnr, Examples) {
  const auto id = AdapterModel::identity(2);
  const auto u = unit({1, 0});
  std::vector<std::pair<EmbeddingVector, EmbeddingVector>> uniform{{u, u}, {u, u}};
  EXPECT_NEAR(mnr_loss(id, uniform, 20.0).loss, std::log(2.0), 1e-6);

  std::vector<std::pair<EmbeddingVector, EmbeddingVector>> ortho{{unit({1, 0}), unit({1, 0})},
                                                                 {unit({0, 1}), unit({0, 1})}};
  EXPECT_NEAR(mnr_loss(id, ortho, 20.0).loss, std::log1p(std::exp(-20.0)), 1e-12);
  EXPECT_NEAR(mnr_loss(id, ortho, 20.0).loss, 2.06e-9, 0.01e-9);

  std::vector<std::pair<EmbeddingVector, EmbeddingVector>> one{{u, u}};
  try {
    mnr_loss(id, one, 20.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BatchTooSmall);
  }
}

TEST(Losses, MatchDirectEvaluationAndAreNonNegative) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto m = random_adapter(rng, 6, 5);
    std::vector<EmbeddedPair> batch;
    std::vector<std::pair<EmbeddingVector, EmbeddingVector>> pos;
    for (int i = 0; i < 5; ++i) {
      batch.push_back({random_unit(rng, 6), random_unit(rng, 6), (rng() & 1) != 0});
      pos.emplace_back(random_unit(rng, 6), random_unit(rng, 6));
    }
    const double c = contrastive_loss(m, batch, 0.5).loss;
    const double n = mnr_loss(m, pos, 20.0).loss;
    EXPECT_GE(c, 0.0);
    EXPECT_GE(n, 0.0);
    EXPECT_NEAR(c, contrastive_oracle(m, batch, 0.5), 1e-9);
    EXPECT_NEAR(n, mnr_oracle(m, pos, 20.0), 1e-9);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 20; ++t) {
    const auto m = random_adapter(rng, 8, 8);
    std::vector<EmbeddedPair> batch;
    std::vector<std::pair<EmbeddingVector, EmbeddingVector>> pos;
    for (int i = 0; i < 4; ++i) {
      batch.push_back({random_unit(rng, 8), random_unit(rng, 8), i % 2 == 0});
      pos.emplace_back(random_unit(rng, 8), random_unit(rng, 8));
    }
    const auto cg = contrastive_loss(m, batch, 1.5).grad;
    EXPECT_LT(max_fd_relative_error(m, cg, [&](const AdapterModel& x) { return contrastive_loss(x, batch, 1.5).loss; },
                                    1e-6),
              1e-4);
    const auto mg = mnr_loss(m, pos, 20.0).grad;
    EXPECT_LT(max_fd_relative_error(m, mg, [&](const AdapterModel& x) { return mnr_loss(x, pos, 20.0).loss; }, 1e-6),
              1e-4);
  }
}

TEST(Losses, SmallStepDoesNotIncreaseLoss) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    auto m = random_adapter(rng, 8, 8);
    std::vector<EmbeddedPair> batch;
    std::vector<std::pair<EmbeddingVector, EmbeddingVector>> pos;
    for (int i = 0; i < 6; ++i) {
      batch.push_back({random_unit(rng, 8), random_unit(rng, 8), i % 3 == 0});
      pos.emplace_back(random_unit(rng, 8), random_unit(rng, 8));
    }
    auto c = contrastive_loss(m, batch, 0.5);
    auto stepped = m;
    sgd_step(stepped, c.grad, 1e-5);
    EXPECT_LE(contrastive_loss(stepped, batch, 0.5).loss, c.loss + 1e-15);

    auto n = mnr_loss(m, pos, 20.0);
    stepped = m;
    sgd_step(stepped, n.grad, 1e-5);
    EXPECT_LE(mnr_loss(stepped, pos, 20.0).loss, n.loss + 1e-15);
  }
}

TEST(TrainLocal, ZeroEpochsIsNoOp) {
  StubProvider p(16);
  std::vector<LabeledPair> pairs{{"draw a line", "sketch a line", true}};
  TrainingHyperparams hp;
  hp.epochs = 0;
  const auto start = AdapterModel::identity(16);
  EXPECT_EQ(train_local(start, pairs, p, hp).model, start);
}

TEST(TrainLocal, NoDuplicatesUsesContrastiveOnly) {
  StubProvider p(16);
  std::vector<LabeledPair> pairs{{"draw a line", "buy a car", false}, {"sort a list", "fix the bug", false}};
  TrainingHyperparams hp;
  hp.epochs = 2;
  hp.learning_rate = 0.1;
  const auto r = train_local(AdapterModel::identity(16), pairs, p, hp);
  EXPECT_EQ(r.metrics.mnr_batches, 0u);
  EXPECT_EQ(r.metrics.contrastive_batches, 1u);
  EXPECT_EQ(r.model.in_dim(), 16u);
}

TEST(TrainLocal, DeterministicAndFinite) {
  StubProvider p(32);
  std::vector<LabeledPair> pairs;
  const char* words[] = {"draw", "line", "python", "red", "circle", "sort", "list", "java", "buy", "car"};
  std::mt19937_64 rng(1);
  for (int i = 0; i < 40; ++i) {
    std::string a = std::string(words[rng() % 10]) + " " + words[rng() % 10];
    std::string b = (i % 2 == 0) ? a + " please" : std::string(words[rng() % 10]) + " " + words[rng() % 10];
    pairs.push_back({a, b, i % 2 == 0});
  }
  TrainingHyperparams hp;
  hp.batch_size = 8;
  hp.learning_rate = 0.05;
  hp.seed = 99;
  const auto a = train_local(AdapterModel::identity(32, 24), pairs, p, hp);
  const auto b = train_local(AdapterModel::identity(32, 24), pairs, p, hp);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.model.out_dim(), 24u);
  for (double w : a.model.weights()) EXPECT_TRUE(std::isfinite(w));
  EXPECT_GT(a.metrics.mnr_batches, 0u);
}

TEST(TrainLocal, EmptyInput) {
  StubProvider p(8);
  try {
    train_local(AdapterModel::identity(8), std::vector<LabeledPair>{}, p, TrainingHyperparams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
  }
}
