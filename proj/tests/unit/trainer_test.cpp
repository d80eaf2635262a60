#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "langxpand/error.hpp"
#include "langxpand/random.hpp"
#include "langxpand/trainer.hpp"
#include "support.hpp"

using namespace langxpand;
namespace lt = langxpand::testing;

namespace {

TrainConfig schedule(std::size_t warmup, std::size_t total, double min_ratio) {
  TrainConfig cfg;
  cfg.peak_lr = 0.01;
  cfg.warmup_steps = warmup;
  cfg.total_steps = total;
  cfg.min_lr_ratio = min_ratio;
  return cfg;
}

TinyLMConfig tiny_model() {
  TinyLMConfig cfg;
  cfg.vocab_size = 20;
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.kv_heads = 1;
  cfg.window = 8;
  cfg.mlp_hidden = 12;
  return cfg;
}

std::vector<std::int32_t> token_stream(std::size_t n) {
  Rng rng(3);
  std::vector<std::int32_t> ids(n);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(20));
  return ids;
}

TrainConfig short_run() {
  TrainConfig cfg;
  cfg.total_steps = 10;
  cfg.warmup_steps = 2;
  cfg.batch_size = 2;
  cfg.seq_len = 8;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(Trainer, ScheduleEndpoints) {
  const auto cfg = schedule(10, 110, 0.0);
  EXPECT_EQ(lr_at(cfg, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 5), 0.005);
  EXPECT_EQ(lr_at(cfg, 10), 0.01);
  // Halfway through the decay: (1 + cos(pi/2)) / 2 * peak.
  EXPECT_NEAR(lr_at(cfg, 60), 0.5 * (1.0 + std::cos(std::numbers::pi / 2)) * 0.01, 1e-15);
  EXPECT_NEAR(lr_at(cfg, 110), 0.0, 1e-15);
  EXPECT_THROW(lr_at(cfg, 111), UsageError);

  const auto floor = schedule(10, 110, 0.1);
  EXPECT_NEAR(lr_at(floor, 110), 0.001, 1e-12);
  EXPECT_NEAR(lr_at(floor, 11), lr_at(floor, 10), 1e-5);
}

TEST(Trainer, ZeroGradientsLeaveParamsAlone) {
  TensorStore params;
  params["w"] = Tensor({2, 2}, std::vector<double>{1, 2, 3, 4});
  TensorStore grads;
  grads["w"] = Tensor(DType::F64, {2, 2});
  auto cfg = schedule(0, 10, 0.1);
  cfg.weight_decay = 0.0;
  auto state = OptimizerState::zeros_like(params);
  const auto before = params;
  adamw_step(params, grads, state, cfg, 1);
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.t, 1u);
  EXPECT_THROW(adamw_step(params, grads, state, cfg, 3), UsageError);
}

TEST(Trainer, ScalarAdamWByHand) {
  TensorStore params;
  params["w"] = Tensor({1}, std::vector<double>{1.0});
  TensorStore grads;
  grads["w"] = Tensor({1}, std::vector<double>{0.5});
  auto cfg = schedule(0, 10, 0.1);
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  auto state = OptimizerState::zeros_like(params);
  adamw_step(params, grads, state, cfg, 1);
  // m = 0.05, v = 0.00025; bias-corrected m_hat = 0.5, v_hat = 0.25.
  const double lr = lr_at(cfg, 1);
  EXPECT_NEAR(state.m.at("w").get(0), 0.05, 1e-15);
  EXPECT_NEAR(state.v.at("w").get(0), 0.00025, 1e-16);
  EXPECT_NEAR(params.at("w").get(0), 1.0 - lr * 0.5 / (0.5 + 1e-8), 1e-15);
}

TEST(Trainer, DecoupledWeightDecayOnMatrices) {
  TensorStore params;
  params["m"] = Tensor({1, 1}, std::vector<double>{2.0});
  TensorStore grads;
  grads["m"] = Tensor(DType::F64, {1, 1});
  auto cfg = schedule(0, 10, 0.1);
  cfg.weight_decay = 0.1;
  auto state = OptimizerState::zeros_like(params);
  adamw_update(params, grads, state, cfg, 0.5);
  EXPECT_DOUBLE_EQ(params.at("m").get(0), 2.0 - 0.5 * 0.1 * 2.0);
}

TEST(Trainer, ResidentMemoryIsFourTimesParameters) {
  TensorStore params;
  params["w"] = Tensor(DType::F32, {3, 5});
  EXPECT_EQ(optimizer_resident_values(params), 4u * 3u * 5u);
}

TEST(Trainer, NonFiniteGradientNamesTensor) {
  TensorStore params;
  params["layer.w"] = Tensor(DType::F64, {2});
  TensorStore grads;
  grads["layer.w"] = Tensor({2}, std::vector<double>{0.0, std::numeric_limits<double>::infinity()});
  auto state = OptimizerState::zeros_like(params);
  try {
    adamw_step(params, grads, state, schedule(0, 10, 0.1), 1);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.w"), std::string::npos);
  }
}

TEST(Trainer, GlobalNormClip) {
  TensorStore grads;
  grads["a"] = Tensor({1}, std::vector<double>{3.0});
  grads["b"] = Tensor({1}, std::vector<double>{4.0});
  EXPECT_DOUBLE_EQ(clip_grad_norm(grads, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(grads.at("a").get(0), 0.6);
  EXPECT_DOUBLE_EQ(grads.at("b").get(0), 0.8);
}

TEST(Trainer, CorpusTooSmallNamesCounts) {
  const auto ckpt = init_checkpoint(tiny_model(), 1);
  try {
    Trainer(ckpt, token_stream(10), short_run());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("16"), std::string::npos) << msg;
    EXPECT_NE(msg.find("10"), std::string::npos) << msg;
  }
}

TEST(Trainer, EveryTensorMovesEachStep) {
  const auto ckpt = lt::random_checkpoint(tiny_model(), 2);
  Trainer tr(ckpt, token_stream(400), short_run());
  tr.step();
  tr.step();
  for (const auto& [name, t] : ckpt.tensors) EXPECT_FALSE(tr.checkpoint().tensors.at(name).bit_equal(t)) << name;
}

TEST(Trainer, SameSeedIsBitIdentical) {
  const auto ckpt = init_checkpoint(tiny_model(), 3);
  const auto a = train_clm(ckpt, token_stream(400), short_run());
  const auto b = train_clm(ckpt, token_stream(400), short_run());
  EXPECT_EQ(a.ckpt.tensors, b.ckpt.tensors);
  EXPECT_EQ(a.report.steps, b.report.steps);
  ASSERT_EQ(a.report.steps.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a.report.steps[i].step, i + 1);
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  const auto ckpt = init_checkpoint(tiny_model(), 4);
  const auto full = train_clm(ckpt, token_stream(400), short_run());

  lt::TempDir dir;
  {
    Trainer first(ckpt, token_stream(400), short_run());
    first.run(4, dir.path());
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "params.xckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "opt.xckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "trainer_state.json"));
  auto resumed = Trainer::resume(dir.path(), token_stream(400));
  EXPECT_EQ(resumed.current_step(), 4u);
  resumed.run();
  EXPECT_EQ(resumed.checkpoint().tensors, full.ckpt.tensors);
  EXPECT_EQ(resumed.report().steps, full.report.steps);

  auto other = token_stream(400);
  other[0] = (other[0] + 1) % 20;
  EXPECT_THROW(Trainer::resume(dir.path(), other), DataError);
}

TEST(Trainer, ReportCsvRoundtrip) {
  TrainReport rep;
  rep.steps = {{1, 0.001, 3.25}, {2, 0.002, 3.0000000000000004}};
  const auto back = TrainReport::parse_csv(rep.csv());
  EXPECT_EQ(back.steps, rep.steps);
  EXPECT_EQ(rep.csv().substr(0, 13), "step,lr,loss\n");
}
