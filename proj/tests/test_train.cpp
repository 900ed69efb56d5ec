#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "effnas/train/trainer.hpp"
#include "test_util.hpp"

using namespace effnas;
using namespace effnas::train;

namespace {

DatasetSpec small_spec(std::int64_t train, std::int64_t val, std::int64_t test, std::uint64_t seed = 1) {
  DatasetSpec s;
  s.train = train;
  s.val = val;
  s.test = test;
  s.seed = seed;
  return s;
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Nearest class-mean classifier fitted on `fit` and scored on `score`.
double nearest_mean_accuracy(const Dataset& fit, const Dataset& score) {
  const auto per = static_cast<std::size_t>(fit.images.numel() / fit.size());
  std::vector<std::vector<double>> mean(static_cast<std::size_t>(fit.classes), std::vector<double>(per, 0.0));
  std::vector<int> count(static_cast<std::size_t>(fit.classes), 0);
  const auto fx = fit.images.data();
  for (std::int64_t n = 0; n < fit.size(); ++n) {
    const auto c = static_cast<std::size_t>(fit.labels[static_cast<std::size_t>(n)]);
    ++count[c];
    for (std::size_t i = 0; i < per; ++i) mean[c][i] += fx[static_cast<std::size_t>(n) * per + i];
  }
  for (std::size_t c = 0; c < mean.size(); ++c)
    for (auto& v : mean[c]) v /= std::max(1, count[c]);
  const auto sx = score.images.data();
  int correct = 0;
  for (std::int64_t n = 0; n < score.size(); ++n) {
    int best = -1;
    double best_d = 0;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      double d = 0;
      for (std::size_t i = 0; i < per; ++i) {
        const double e = sx[static_cast<std::size_t>(n) * per + i] - mean[c][i];
        d += e * e;
      }
      if (best < 0 || d < best_d) {
        best = static_cast<int>(c);
        best_d = d;
      }
    }
    correct += best == score.labels[static_cast<std::size_t>(n)];
  }
  return static_cast<double>(correct) / static_cast<double>(score.size());
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("effnas_train_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

supernet::SearchSpace toy_space() { return supernet::SearchSpace::from_arch(arch::preset("toy")); }

}  // namespace

TEST(Data, SameSeedIsBitIdentical) {
  auto a = gen_synthetic(small_spec(16, 8, 8, 5));
  auto b = gen_synthetic(small_spec(16, 8, 8, 5));
  EXPECT_EQ(values(a.train.images), values(b.train.images));
  EXPECT_EQ(a.test.labels, b.test.labels);
  auto c = gen_synthetic(small_spec(16, 8, 8, 6));
  EXPECT_NE(values(a.train.images), values(c.train.images));
}

TEST(Data, LabelsBalancedOverTenThousandSamples) {
  auto s = small_spec(0, 0, 0, 3);
  s.resolution = 32;
  std::array<int, 4> hist{};
  for (std::int64_t first = 0; first < 10000; first += 1000)
    for (int l : generate_range(s, first, 1000).labels) ++hist[static_cast<std::size_t>(l)];
  for (int h : hist) EXPECT_NEAR(h / 10000.0, 0.25, 0.02);
}

TEST(Data, SplitsAreDisjoint) {
  auto d = gen_synthetic(small_spec(32, 16, 16, 2));
  const auto per = static_cast<std::size_t>(3 * 64 * 64);
  auto rows = [&](const Dataset& x) {
    std::vector<std::vector<float>> out;
    const auto v = x.images.data();
    for (std::int64_t n = 0; n < x.size(); ++n) out.emplace_back(v.begin() + n * per, v.begin() + (n + 1) * per);
    return out;
  };
  const auto tr = rows(d.train);
  for (const auto& split : {rows(d.val), rows(d.test)})
    for (const auto& r : split)
      for (const auto& t : tr) EXPECT_NE(r, t);
}

TEST(Data, NoiseFreeSamplesAreSeparableByNearestTemplate) {
  for (auto kind : {DatasetKind::quadrant_pattern, DatasetKind::gaussian_blob}) {
    auto s = small_spec(16, 0, 64, 4);
    s.noise = 0;
    s.kind = kind;
    auto d = gen_synthetic(s);
    EXPECT_DOUBLE_EQ(nearest_mean_accuracy(d.train, d.test), 1.0) << to_string(kind);
  }
}

TEST(Data, NoisySamplesStayLearnable) {
  auto d = gen_synthetic(small_spec(256, 0, 128, 9));
  const double acc = nearest_mean_accuracy(d.train, d.test);
  EXPECT_GT(acc, 0.5);
}

TEST(Data, Errors) {
  auto s = small_spec(4, 4, 4);
  s.resolution = 48;
  EXPECT_THROW(gen_synthetic(s), DomainError);
  s.resolution = 64;
  s.classes = 1;
  EXPECT_THROW(gen_synthetic(s), DomainError);
  EXPECT_THROW(parse_dataset_kind("stripes"), DomainError);
  EXPECT_THROW(batches(gen_synthetic(small_spec(4, 0, 0)).train, 0), DomainError);
}

TEST(Data, BatchesCoverEverySampleOnce) {
  auto d = gen_synthetic(small_spec(10, 0, 0));
  std::mt19937_64 rng(3);
  auto bs = batches(d.train, 4, &rng);
  ASSERT_EQ(bs.size(), 3u);
  EXPECT_EQ(bs[2].x.dim(0), 2);
  std::array<int, 4> hist{}, expect{};
  for (const auto& b : bs)
    for (int l : b.labels) ++hist[static_cast<std::size_t>(l)];
  for (int l : d.train.labels) ++expect[static_cast<std::size_t>(l)];
  EXPECT_EQ(hist, expect);
}

TEST(Data, CacheRoundTrip) {
  auto dir = temp_dir("cache");
  auto d = gen_synthetic(small_spec(6, 0, 3, 8));
  save_dataset((dir / "d.bin").string(), d);
  auto back = load_dataset((dir / "d.bin").string());
  EXPECT_EQ(back.spec, d.spec);
  EXPECT_EQ(values(back.train.images), values(d.train.images));
  EXPECT_EQ(back.test.labels, d.test.labels);
  EXPECT_EQ(back.val.size(), 0);
}

TEST(Schedule, Examples) {
  Schedule s;
  s.base_lr = scaled_lr(64);
  s.min_lr = 1e-5;
  s.warmup_epochs = 5;
  s.total_epochs = 30;
  s.steps_per_epoch = 7;
  EXPECT_EQ(lr_at(0, s), 0.0);
  EXPECT_EQ(lr_at(35, s), s.base_lr);
  EXPECT_NEAR(lr_at(s.total_steps(), s), 1e-5, 1e-18);
  EXPECT_NEAR(lr_at(s.total_steps() - 1, s), 1e-5, 1e-7);
  EXPECT_EQ(lr_at(10 * s.total_steps(), s), 1e-5);
  EXPECT_DOUBLE_EQ(scaled_lr(1024), 1e-3);
  EXPECT_THROW(lr_at(-1, s), DomainError);
  s.warmup_epochs = 30;
  EXPECT_THROW(lr_at(0, s), DomainError);
  s.warmup_epochs = 1;
  s.min_lr = 1.0;
  EXPECT_THROW(lr_at(0, s), DomainError);
}

TEST(Schedule, ContinuousAtWarmupEndAndMonotoneAfter) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Schedule s;
    s.total_epochs = std::uniform_int_distribution<int>(2, 40)(rng);
    s.warmup_epochs = std::uniform_int_distribution<int>(0, s.total_epochs - 1)(rng);
    s.steps_per_epoch = std::uniform_int_distribution<int>(1, 50)(rng);
    s.base_lr = std::uniform_real_distribution<double>(1e-4, 1e-2)(rng);
    s.min_lr = s.base_lr * std::uniform_real_distribution<double>(0, 1)(rng);
    const auto w = s.warmup_steps();
    if (w > 0) {
      EXPECT_NEAR(lr_at(w - 1, s), lr_at(w, s), s.base_lr / static_cast<double>(w) + 1e-15);
    }
    for (auto k = w; k < s.total_steps() + 3; ++k) EXPECT_LE(lr_at(k + 1, s), lr_at(k, s) + 1e-18);
    for (std::int64_t k = 0; k < w; ++k) EXPECT_LT(lr_at(k, s), lr_at(k + 1, s));
  }
}

namespace {

/// Straight-line AdamW on one scalar parameter.
double adamw_reference(double w, const std::vector<double>& g, double lr, double wd) {
  double m = 0, v = 0;
  for (std::size_t t = 1; t <= g.size(); ++t) {
    m = 0.9 * m + 0.1 * g[t - 1];
    v = 0.999 * v + 0.001 * g[t - 1] * g[t - 1];
    const double mh = m / (1 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(0.999, static_cast<double>(t)));
    w = w - lr * wd * w - lr * mh / (std::sqrt(vh) + 1e-8);
  }
  return w;
}

}  // namespace

TEST(AdamW, MatchesScalarReference) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<BasicTensor<double>> p{BasicTensor<double>::full({3}, 0.0)};
    std::vector<double> w0(3), expect(3);
    std::vector<std::vector<double>> gs(3);
    for (int i = 0; i < 3; ++i) {
      w0[static_cast<std::size_t>(i)] = n(rng);
      p[0].mutable_data()[static_cast<std::size_t>(i)] = w0[static_cast<std::size_t>(i)];
    }
    auto st = make_state<double>(p);
    for (int t = 0; t < 15; ++t) {
      std::vector<std::vector<double>> g{std::vector<double>(3)};
      for (int i = 0; i < 3; ++i) {
        g[0][static_cast<std::size_t>(i)] = n(rng);
        gs[static_cast<std::size_t>(i)].push_back(g[0][static_cast<std::size_t>(i)]);
      }
      adamw_step<double>(p, g, st, 0.01);
    }
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(p[0].data()[i], adamw_reference(w0[i], gs[i], 0.01, 0.05), 1e-12);
    }
    EXPECT_EQ(st.step, 15);
  }
}

TEST(AdamW, ClosedForms) {
  std::vector<BasicTensor<double>> p{BasicTensor<double>::full({2}, 1.5)};
  AdamWConfig nowd;
  nowd.weight_decay = 0;
  auto st = make_state<double>(p, nowd);
  std::vector<std::vector<double>> zero{{0.0, 0.0}};
  adamw_step<double>(p, zero, st, 0.1);
  EXPECT_EQ(p[0].data()[0], 1.5);
  // A constant gradient gives bias-corrected moments g and g^2 from the first
  // step, so every update is lr * g / (|g| + eps).
  std::vector<std::vector<double>> g{{0.3, -2.0}};
  st = make_state<double>(p, nowd);
  for (int t = 0; t < 200; ++t) {
    const double before0 = p[0].data()[0], before1 = p[0].data()[1];
    adamw_step<double>(p, g, st, 1e-3);
    EXPECT_NEAR(before0 - p[0].data()[0], 1e-3 * 0.3 / (0.3 + 1e-8), 1e-12);
    EXPECT_NEAR(before1 - p[0].data()[1], -1e-3 * 2.0 / (2.0 + 1e-8), 1e-12);
  }
  // Decay only: multiplicative shrink per step.
  std::vector<BasicTensor<double>> q{BasicTensor<double>::full({1}, 2.0)};
  auto sd = make_state<double>(q);
  std::vector<std::vector<double>> z1{{0.0}};
  for (int t = 0; t < 10; ++t) adamw_step<double>(q, z1, sd, 0.01);
  EXPECT_NEAR(q[0].data()[0], 2.0 * std::pow(1 - 0.01 * 0.05, 10), 1e-14);
}

TEST(AdamW, ZeroLearningRateIsIdentity) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto shape = testutil::random_shape(rng, 2);
    std::vector<BasicTensor<double>> p{testutil::randn<double>(shape, rng)};
    const auto before = std::vector<double>(p[0].data().begin(), p[0].data().end());
    auto st = make_state<double>(p);
    auto g = testutil::randn<double>(shape, rng);
    std::vector<std::vector<double>> gv{{g.data().begin(), g.data().end()}};
    for (int t = 0; t < 3; ++t) adamw_step<double>(p, gv, st, 0.0);
    EXPECT_EQ(std::vector<double>(p[0].data().begin(), p[0].data().end()), before);
  }
}

TEST(AdamW, ShapeMismatch) {
  std::vector<BasicTensor<double>> p{BasicTensor<double>::full({2}, 0.0)};
  auto st = make_state<double>(p);
  std::vector<std::vector<double>> bad{{1.0, 2.0, 3.0}};
  EXPECT_THROW(adamw_step<double>(p, bad, st, 0.1), ShapeError);
  std::vector<std::vector<double>> none;
  EXPECT_THROW(adamw_step<double>(p, none, st, 0.1), ShapeError);
  EXPECT_THROW(make_state<double>(p, {}, {0.1, 0.2}), ShapeError);
}

TEST(TrainSupernet, LearnsAndMovesAlphasDeterministically) {
  auto d = gen_synthetic(small_spec(128, 0, 0, 21));
  auto dir = temp_dir("supernet");
  auto run = [&](const std::string& tag) {
    auto sn = supernet::SuperNet<float>::create(toy_space(), 5);
    SupernetTrainConfig c;
    c.base.epochs = 2;
    c.base.batch_size = 32;
    c.base.base_lr = 2e-3;
    c.base.seed = 13;
    c.base.checkpoint_path = (dir / (tag + ".ckpt")).string();
    c.base.metrics_path = (dir / (tag + ".csv")).string();
    const auto a0 = sn.alphas();
    // Loss before any update, mixing at the starting temperature without noise.
    const double init_loss = [&] {
      NoGradGuard ng;
      supernet::MixOptions o;
      o.gumbel = {c.tau_start, supernet::NoiseKind::none, 0};
      std::mt19937_64 r(0);
      auto all = batches(d.train, d.train.size())[0];
      return static_cast<double>(cross_entropy(sn.forward(all.x, o, r, true), all.labels).data()[0]);
    }();
    auto log = train_supernet(sn, d.train, c);
    EXPECT_NE(sn.alphas(), a0);
    EXPECT_LT(log.rows[0].loss, init_loss);
    return log;
  };
  auto a = run("a");
  auto b = run("b");
  ASSERT_EQ(a.rows.size(), 2u);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].loss, b.rows[i].loss);
    EXPECT_EQ(a.rows[i].epoch, static_cast<int>(i + 1));
  }
  EXPECT_EQ(a.rows[1].step, 8);
  auto back = supernet::SuperNet<float>::from_checkpoint(load_checkpoint((dir / "a.ckpt").string()));
  EXPECT_EQ(back.space(), toy_space());
  std::ifstream f(dir / "a.csv");
  std::stringstream text;
  text << f.rdbuf();
  EXPECT_EQ(text.str(), metrics_csv(a));
  EXPECT_EQ(text.str().substr(0, text.str().find('\n')), kMetricsHeader);
}

TEST(TrainSupernet, RejectsMismatchedData) {
  auto sn = supernet::SuperNet<float>::create(toy_space(), 5);
  auto s = small_spec(4, 0, 0);
  s.resolution = 32;
  EXPECT_THROW(train_supernet(sn, gen_synthetic(s).train, {}), DomainError);
  s.resolution = 64;
  s.classes = 3;
  EXPECT_THROW(train_supernet(sn, gen_synthetic(s).train, {}), DomainError);
}

TEST(TrainFinal, NonFiniteLossRestoresLastGoodState) {
  auto d = gen_synthetic(small_spec(16, 0, 0, 2));
  auto dir = temp_dir("nan");
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.checkpoint_path = (dir / "m.ckpt").string();
  auto m = arch::Model<float>::instantiate(arch::preset("toy"), 1);
  train_model(m, d.train, c);
  const auto good = m.to_checkpoint();
  const auto file = encode_checkpoint(load_checkpoint(c.checkpoint_path));
  d.train.images.mutable_data()[100] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train_model(m, d.train, c), NonFiniteError);
  EXPECT_EQ(encode_checkpoint(m.to_checkpoint()), encode_checkpoint(good));
  EXPECT_EQ(encode_checkpoint(load_checkpoint(c.checkpoint_path)), file);
}

TEST(TrainFinal, UntrainedModelIsAtChance) {
  auto spec = arch::preset("toy");
  spec.classes = 10;
  auto m = arch::Model<float>::instantiate(spec, 3);
  auto s = small_spec(0, 0, 600, 6);
  s.classes = 10;
  const double acc = evaluate(m, gen_synthetic(s).test);
  EXPECT_NEAR(acc, 0.10, 0.03);
}

TEST(TrainFinal, EvaluateErrors) {
  auto m = arch::Model<float>::instantiate(arch::preset("toy"), 3);
  EXPECT_THROW(evaluate(m, gen_synthetic(small_spec(0, 0, 0)).test), DomainError);
  auto s = small_spec(0, 0, 4);
  s.classes = 3;
  EXPECT_THROW(evaluate(m, gen_synthetic(s).test), DomainError);
  EXPECT_THROW(train_final(arch::preset("toy"), gen_synthetic(s).test, {}), DomainError);
}

TEST(TrainFinal, OverfitsThirtyTwoSamples) {
  auto d = gen_synthetic(small_spec(32, 0, 0, 17));
  auto m = arch::Model<float>::instantiate(arch::preset("toy"), 2);
  auto params = m.parameters();
  std::vector<Tensor> ps;
  for (auto& [n, t] : params) ps.push_back(t);
  AdamWConfig cfg;
  cfg.weight_decay = 0;
  auto st = make_state<float>(ps, cfg);
  auto batch = batches(d.train, 32)[0];
  double loss = 1e9;
  int step = 0;
  for (; step < 200 && loss >= 0.05; ++step) {
    auto l = cross_entropy(m.forward(batch.x, true), batch.labels);
    loss = l.data()[0];
    backward(l);
    std::vector<std::vector<float>> g;
    for (auto& p : ps) {
      g.emplace_back(p.grad().begin(), p.grad().end());
      p.zero_grad();
    }
    adamw_step<float>(ps, g, st, 1e-3);
  }
  EXPECT_LT(loss, 0.05) << "after " << step << " steps";
}

TEST(TrainFinal, LearnsToyTask) {
  auto d = gen_synthetic(small_spec(256, 0, 128, 12));
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 32;
  c.base_lr = 2e-3;
  auto r = train_final(arch::preset("toy"), d.train, c);
  EXPECT_LT(r.log.rows.back().loss, r.log.rows.front().loss);
  EXPECT_GT(evaluate(r.model, d.test), 0.8);
  EXPECT_LT(mean_loss(r.model, d.test), std::log(4.0));
}
