#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "tensor_eq.hpp"
#include "rtsmono/checkpoint.hpp"
#include "rtsmono/scene.hpp"
#include "rtsmono/train.hpp"

using namespace rtsmono;
using rtsmono::testing::same_values;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rtsmono_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig small_config(std::uint64_t seed = 0, std::int64_t steps = 20) {
  TrainConfig cfg;
  cfg.variant = Variant::Test;
  cfg.width = 64;
  cfg.height = 32;
  cfg.total_steps = steps;
  cfg.batch_size = 1;
  cfg.seed = seed;
  cfg.log_every = 0;
  cfg.checkpoint_every = 0;
  return cfg;
}

std::vector<Tensor<float>> snapshot(const Trainer& t) {
  std::vector<Tensor<float>> out;
  for (const auto& p : t.named_parameters()) out.push_back(p.var.value());
  return out;
}

class TrainData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch("data");
    generate_scene(make_random_scene(0, 6, 64, 32), root_);
    generate_scene(make_random_scene(1, 6, 64, 32), root_);
  }
  static Dataset dataset() { return Dataset(root_, list_frames(root_), {64, 32, false}); }
  static fs::path root_;
};
fs::path TrainData::root_;

}  // namespace

TEST(CosineLr, EndpointsMidpointAndRange) {
  TrainConfig cfg;
  cfg.lr0 = 1e-4;
  cfg.total_steps = 2000;
  EXPECT_DOUBLE_EQ(cosine_lr(0, cfg), 1e-4);
  EXPECT_NEAR(cosine_lr(2000, cfg), 1e-6, 1e-18);
  EXPECT_NEAR(cosine_lr(1000, cfg), 0.5 * (1e-4 + 1e-6), 1e-18);
  double prev = 1;
  for (std::int64_t s = 0; s <= 2000; s += 50) {
    EXPECT_LT(cosine_lr(s, cfg), prev);
    prev = cosine_lr(s, cfg);
  }
  EXPECT_THROW(cosine_lr(-1, cfg), std::out_of_range);
  EXPECT_THROW(cosine_lr(2001, cfg), std::out_of_range);
}

TEST(Adam, MatchesScalarReference) {
  Var<float> p(Tensor<float>({2}, std::vector<float>{0.5f, -1.0f}), true);
  Adam adam({p});
  double w[2] = {0.5, -1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 5; ++t) {
    p.zero_grad();
    sum(square(p) * 3.0f).backward();  // g = 6 p
    double g[2];
    for (int i = 0; i < 2; ++i) g[i] = 6.0 * static_cast<double>(p.value()[i]);
    adam.step(0.01);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.value()[i], w[i], 1e-6);
    }
  }
  EXPECT_EQ(adam.steps(), 5);
}

TEST(Adam, FirstStepMovesEachWeightByLr) {
  Var<float> p(Tensor<float>({3}, std::vector<float>{1.0f, -2.0f, 3.0f}), true);
  Adam adam({p});
  sum(p * Var<float>(Tensor<float>({3}, std::vector<float>{0.5f, -7.0f, 1e-3f}))).backward();
  adam.step(0.1);
  EXPECT_NEAR(p.value()[0], 0.9, 1e-6);
  EXPECT_NEAR(p.value()[1], -1.9, 1e-6);
  EXPECT_NEAR(p.value()[2], 2.9, 1e-5);
}

TEST(TrainConfig, SetTextRoundTripAndErrors) {
  TrainConfig cfg;
  cfg.set("lr0", "3e-4");
  cfg.set("lambda", "0.25");
  cfg.set("variant", "xs");
  cfg.set("flip", "true");
  EXPECT_EQ(cfg.lr0, 3e-4);
  EXPECT_EQ(cfg.weights.lambda, 0.25);
  EXPECT_EQ(cfg.variant, Variant::XS);
  EXPECT_TRUE(cfg.augment.flip);
  const TrainConfig back = TrainConfig::from_text(cfg.to_text());
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_THROW(cfg.set("no_such_key", "1"), std::invalid_argument);
  EXPECT_THROW(cfg.set("lr0", "fast"), std::invalid_argument);
  EXPECT_THROW(cfg.set("total_steps", "1.5"), std::invalid_argument);
  EXPECT_THROW(cfg.set("flip", "maybe"), std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_text("lr0 0.1\n"), std::invalid_argument);

  const auto dir = scratch("cfg");
  {
    std::ofstream out(dir / "c.txt");
    out << "# desk run\nlr0 = 2e-4\n\nseed = 9  \n";
  }
  const TrainConfig r = TrainConfig::read(dir / "c.txt");
  EXPECT_EQ(r.lr0, 2e-4);
  EXPECT_EQ(r.seed, 9u);
  TrainConfig bad;
  bad.width = 100;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.lr0 = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Archive, RoundTripAndCorruption) {
  const auto dir = scratch("archive");
  Tensor<float> t({2, 3});
  for (std::int64_t i = 0; i < 6; ++i) t[i] = 0.5f * static_cast<float>(i) - 1;
  write_archive(dir / "a.bin", {ArchiveEntry::from_tensor("w", t), ArchiveEntry::from_bytes("meta", "hello")});
  const auto back = read_archive(dir / "a.bin");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "w");
  EXPECT_TRUE(same_values(back[0].tensor(), t));
  EXPECT_EQ(back[0].tensor().shape(), t.shape());
  EXPECT_EQ(back[1].bytes(), "hello");
  EXPECT_THROW(back[1].tensor(), std::runtime_error);

  const auto size = fs::file_size(dir / "a.bin");
  fs::copy_file(dir / "a.bin", dir / "short.bin");
  fs::resize_file(dir / "short.bin", size - 3);
  EXPECT_THROW(read_archive(dir / "short.bin"), std::runtime_error);

  fs::copy_file(dir / "a.bin", dir / "long.bin");
  {
    std::ofstream out(dir / "long.bin", std::ios::app | std::ios::binary);
    out << 'x';
  }
  EXPECT_THROW(read_archive(dir / "long.bin"), std::runtime_error);

  // magic(8) + count(4) + name length(4) + "w" puts the dtype byte at offset 17.
  fs::copy_file(dir / "a.bin", dir / "dtype.bin");
  {
    std::fstream f(dir / "dtype.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(17);
    f.put(static_cast<char>(7));
  }
  try {
    read_archive(dir / "dtype.bin");
    FAIL() << "bad dtype accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("dtype"), std::string::npos);
  }
  {
    std::ofstream out(dir / "magic.bin", std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(read_archive(dir / "magic.bin"), std::runtime_error);
}

TEST_F(TrainData, CheckpointRoundTripRestoresEverything) {
  const Dataset data = dataset();
  const TrainConfig cfg = small_config(3);
  Trainer t(cfg);
  t.train_step(batch_for_step(data, cfg, 0));
  t.train_step(batch_for_step(data, cfg, 1));
  const auto dir = scratch("ckpt");
  t.save(dir / "c.bin");
  const auto r = Trainer::load(dir / "c.bin");
  EXPECT_EQ(r->step(), 2);
  EXPECT_EQ(r->config().to_text(), cfg.to_text());
  const auto a = snapshot(t), b = snapshot(*r);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(same_values(a[k], b[k]));
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_TRUE(same_values(t.optimizer().first_moments()[k], r->optimizer().first_moments()[k]));
    EXPECT_TRUE(same_values(t.optimizer().second_moments()[k], r->optimizer().second_moments()[k]));
  }
  fs::resize_file(dir / "c.bin", fs::file_size(dir / "c.bin") / 2);
  EXPECT_THROW(Trainer::load(dir / "c.bin"), std::runtime_error);
}

TEST_F(TrainData, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset data = dataset();
  const TrainConfig cfg = small_config(4);
  Trainer t(cfg);
  const auto before = snapshot(t);
  const StepStats s = t.train_step(batch_for_step(data, cfg, 0), 0.0);
  EXPECT_EQ(s.lr, 0.0);
  EXPECT_GT(s.grad_norm, 0.0);
  const auto after = snapshot(t);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_TRUE(same_values(before[k], after[k]));
  EXPECT_EQ(t.step(), 1);
}

TEST_F(TrainData, TotalIsWeightedSumOfTerms) {
  const Dataset data = dataset();
  TrainConfig cfg = small_config(5);
  cfg.weights.beta = 0.01;
  cfg.weights.lambda = 0.3;
  Trainer t(cfg);
  NoGradGuard ng;
  const auto l = t.compute_losses(batch_for_step(data, cfg, 0));
  const double expect = l.lp.item() + 0.01 * l.ls.item() + 0.3 * l.ld.item();
  EXPECT_NEAR(l.total.item(), expect, 1e-6 * std::abs(expect));
  EXPECT_GT(l.lp.item(), 0);
  EXPECT_GE(l.ls.item(), 0);
}

TEST_F(TrainData, TwoStepsReduceLossOnFixedBatch) {
  const Dataset data = dataset();
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TrainConfig cfg = small_config(seed);
    Trainer t(cfg);
    const Batch b = batch_for_step(data, cfg, 0);
    double before, after;
    {
      NoGradGuard ng;
      before = t.compute_losses(b).total.item();
    }
    t.train_step(b, 1e-4);
    t.train_step(b, 1e-4);
    {
      NoGradGuard ng;
      after = t.compute_losses(b).total.item();
    }
    decreased += after < before;
  }
  EXPECT_GE(decreased, 18);
}

TEST_F(TrainData, NonFiniteInputAbortsWithoutUpdate) {
  const Dataset data = dataset();
  const TrainConfig cfg = small_config(6);
  Trainer t(cfg);
  Batch b = batch_for_step(data, cfg, 0);
  b.target[5] = std::numeric_limits<float>::quiet_NaN();
  const auto before = snapshot(t);
  EXPECT_THROW(t.train_step(b), NonFiniteError);
  EXPECT_EQ(t.step(), 0);
  EXPECT_EQ(t.optimizer().steps(), 0);
  const auto after = snapshot(t);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_TRUE(same_values(before[k], after[k]));
  EXPECT_NO_THROW(t.train_step(batch_for_step(data, cfg, 0)));
}

TEST_F(TrainData, ShapeMismatchAndFinalStepRejected) {
  const Dataset data = dataset();
  TrainConfig cfg = small_config(7, 1);
  Trainer t(cfg);
  Batch b = batch_for_step(data, cfg, 0);
  Batch wrong = b;
  wrong.target = Tensor<float>({1, 3, 16, 64});
  EXPECT_THROW(t.train_step(wrong), ShapeError);
  t.train_step(b);
  EXPECT_THROW(t.train_step(b), std::out_of_range);
}

TEST_F(TrainData, ResumeIsBitExact) {
  TrainConfig cfg = small_config(8, 8);
  cfg.checkpoint_every = 4;
  const auto full = scratch("full"), part = scratch("part");
  const auto hist_full = run_training(cfg, {root_, full, {}, {}, {}});
  ASSERT_EQ(hist_full.size(), 8u);
  ASSERT_TRUE(fs::exists(full / "ckpt_000004.bin"));
  const auto hist_resumed = run_training(cfg, {root_, part, full / "ckpt_000004.bin", {}, {}});
  ASSERT_EQ(hist_resumed.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(hist_resumed[i].step, hist_full[i + 4].step);
    EXPECT_EQ(hist_resumed[i].total, hist_full[i + 4].total);
  }
  const auto a = Trainer::load(full / "last.bin"), b = Trainer::load(part / "last.bin");
  const auto pa = snapshot(*a), pb = snapshot(*b);
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_TRUE(same_values(pa[k], pb[k]));
  std::ifstream log(full / "train_log.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "step,lr,L_p,L_s,L_d,total");
}

TEST_F(TrainData, FiftyStepRunsAreDeterministic) {
  const TrainConfig cfg = small_config(9, 50);
  const auto d1 = scratch("det1"), d2 = scratch("det2");
  const auto h1 = run_training(cfg, {root_, d1, {}, {}, {}});
  const auto h2 = run_training(cfg, {root_, d2, {}, {}, {}});
  ASSERT_EQ(h1.size(), 50u);
  for (std::size_t i = 0; i < h1.size(); ++i) EXPECT_EQ(h1[i].total, h2[i].total);
  const auto a = snapshot(*Trainer::load(d1 / "last.bin")), b = snapshot(*Trainer::load(d2 / "last.bin"));
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(same_values(a[k], b[k]));
}
