#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "isplit/bottleneck.hpp"
#include "testutil.hpp"

using namespace isplit;
using namespace isplit::test;

TEST_CASE("build_bottleneck rate arithmetic") {
  const BottleneckSpec a = build_bottleneck({32, 16, 16}, 0.9);
  CHECK(a.latent_shape == std::vector<int>{51, 4, 4});
  CHECK(a.encoded_elements() == 816);
  CHECK(a.encoded_elements() <= a.budget_elements());
  CHECK(a.budget_elements() == 820);
  CHECK_FALSE(a.clamp_warning);

  const BottleneckSpec b = build_bottleneck({1, 4, 4}, 0.5);
  CHECK(b.latent_shape == std::vector<int>{8, 1, 1});
  CHECK(b.encoded_elements() == 8);
  CHECK(b.budget_elements() == 8);
  CHECK_FALSE(b.clamp_warning);
}

TEST_CASE("build_bottleneck clamps to one channel with a warning") {
  const BottleneckSpec s = build_bottleneck({1, 8, 8}, 0.99);
  CHECK(s.latent_channels == 1);
  CHECK(s.clamp_warning);
  CHECK(s.encoded_elements() > s.budget_elements());  // reported violation
}

TEST_CASE("build_bottleneck validates input") {
  CHECK_THROWS_AS(build_bottleneck({8, 3, 8}, 0.9), ShapeError);
  CHECK_THROWS_AS(build_bottleneck({8, 8}, 0.9), ShapeError);
  CHECK_THROWS_AS(build_bottleneck({8, 8, 8}, 0.0), ConfigError);
  CHECK_THROWS_AS(build_bottleneck({8, 8, 8}, 1.0), ConfigError);
}

TEST_CASE("compression bound holds over random geometries unless clamped") {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const int z = 1 + static_cast<int>(rng.below(64));
    const int n = 4 + static_cast<int>(rng.below(29));
    const int m = 4 + static_cast<int>(rng.below(29));
    const double rate = rng.uniform(0.05, 0.98);
    const BottleneckSpec s = build_bottleneck({z, n, m}, rate);
    if (!s.clamp_warning) CHECK(s.encoded_elements() <= s.budget_elements());
    CHECK(s.latent_channels >= 1);
  }
}

TEST_CASE("decoder restores exact spatial extents for odd and even sizes") {
  for (int n = 4; n <= 13; ++n) {
    for (int m = 4; m <= 13; m += 3) {
      const BottleneckSpec spec = build_bottleneck({3, n, m}, 0.5);
      const Bottleneck bn = make_bottleneck(spec, 5);
      CHECK(bn.ae.layers.back().output_shape == std::vector<int>{3, n, m});
      CHECK(bn.ae.layers[2].output_shape == spec.latent_shape);
      CHECK(bn.encoder().layers.size() == 3);
      CHECK(bn.decoder().layers.size() == 3);
    }
  }
}

namespace {

Model trained_toy_model() {
  // deterministic small classifier; training quality is irrelevant here
  return build_model("vgg-nano", {1, 16, 16}, 3, 101);
}

std::vector<TensorF> toy_images(int n, Rng& rng) {
  std::vector<TensorF> out;
  for (int i = 0; i < n; ++i) out.push_back(random_tensor_f({1, 16, 16}, rng, 0.0, 1.0));
  return out;
}

}  // namespace

TEST_CASE("train_ae: zero epochs leaves everything untouched") {
  const Model m = trained_toy_model();
  Rng rng(3);
  const auto images = toy_images(6, rng);
  std::vector<int> idx = {0, 1, 2, 3, 4, 5};
  Bottleneck bn = make_bottleneck(build_bottleneck(m, 2, 0.5), 7);
  const Model ae_before = bn.ae;
  TrainConfig cfg;
  cfg.phase = TrainConfig::Phase::ae;
  cfg.loss = TrainConfig::Loss::mse_recon;
  cfg.epochs = 0;
  const auto history = train_ae(m, bn, images, idx, cfg);
  CHECK(history.empty());
  CHECK(params_bitwise_equal(bn.ae, ae_before));
  CHECK_FALSE(bn.ae_trained);
}

TEST_CASE("train_ae freezes the classifier and reduces reconstruction loss") {
  const Model m = trained_toy_model();
  const Model m_before = m;
  Rng rng(5);
  const auto images = toy_images(16, rng);
  std::vector<int> idx(16);
  for (int i = 0; i < 16; ++i) idx[i] = i;

  Bottleneck bn = make_bottleneck(build_bottleneck(m, 2, 0.5), 11);
  TrainConfig cfg;
  cfg.phase = TrainConfig::Phase::ae;
  cfg.loss = TrainConfig::Loss::mse_recon;
  cfg.epochs = 30;
  cfg.lr = 5e-3;
  cfg.batch_size = 8;
  cfg.seed = 13;
  const auto history = train_ae(m, bn, images, idx, cfg);
  REQUIRE(history.size() == 30);
  CHECK(history.back() < history.front());
  CHECK(params_bitwise_equal(m, m_before));  // frozen
  CHECK(bn.ae_trained);
}

TEST_CASE("train_ae rejects a spec built for a different layer shape") {
  const Model m = trained_toy_model();
  Rng rng(7);
  const auto images = toy_images(4, rng);
  std::vector<int> idx = {0, 1, 2, 3};
  BottleneckSpec spec = build_bottleneck(m, 0, 0.5);  // built for layer 0's (8,16,16)
  spec.target_layer = 2;                              // but aimed at layer 2's (8,8,8)
  Bottleneck bn = make_bottleneck(spec, 3);
  TrainConfig cfg;
  cfg.loss = TrainConfig::Loss::mse_recon;
  CHECK_THROWS_AS(train_ae(m, bn, images, idx, cfg), ShapeError);
}

TEST_CASE("over-complete bottleneck drives reconstruction loss near zero") {
  // rate 0.02: the latent holds ~98% of the elements; 100 images, default
  // batch size and the 200-epoch / 5e-3 Adam budget
  const Model m = build_model("c@conv:2k3s1p1,r@relu,p@maxpool:2s2", {1, 16, 16}, 0, 23);
  Rng rng(9);
  const auto images = toy_images(100, rng);
  std::vector<int> idx(100);
  for (int i = 0; i < 100; ++i) idx[i] = i;

  Bottleneck bn = make_bottleneck(build_bottleneck(m, 1, 0.02), 29);
  TrainConfig cfg;
  cfg.phase = TrainConfig::Phase::ae;
  cfg.loss = TrainConfig::Loss::mse_recon;
  cfg.epochs = 200;
  cfg.lr = 5e-3;
  cfg.batch_size = 32;
  cfg.seed = 31;
  const auto history = train_ae(m, bn, images, idx, cfg);
  CHECK(history.back() < 1e-3 * history.front());
}

TEST_CASE("finetune requires the ae phase unless overridden") {
  Model m = trained_toy_model();
  Rng rng(11);
  const auto images = toy_images(8, rng);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1};
  std::vector<int> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  Bottleneck bn = make_bottleneck(build_bottleneck(m, 2, 0.5), 37);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 1e-4;
  CHECK_THROWS_AS(finetune(m, bn, images, labels, idx, cfg), ConfigError);
  CHECK_NOTHROW(finetune(m, bn, images, labels, idx, cfg, {}, /*allow_phase_skip=*/true));
}

TEST_CASE("finetune with lr=0 changes nothing and reports a constant history") {
  Model m = trained_toy_model();
  const Model before = m;
  Rng rng(13);
  const auto images = toy_images(8, rng);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1};
  std::vector<int> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  Bottleneck bn = make_bottleneck(build_bottleneck(m, 2, 0.5), 41);
  bn.ae_trained = true;
  const Model ae_before = bn.ae;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.0;
  const auto history = finetune(m, bn, images, labels, idx, cfg);
  REQUIRE(history.size() == 3);
  CHECK(history[0] == history[1]);
  CHECK(history[1] == history[2]);
  CHECK(params_bitwise_equal(m, before));
  CHECK(params_bitwise_equal(bn.ae, ae_before));
}

TEST_CASE("assemble: head carries the encoder, tail the decoder") {
  const Model m = trained_toy_model();
  Bottleneck bn = make_bottleneck(build_bottleneck(m, 2, 0.5), 43);
  const SplitPlan plan = assemble(m, bn);
  CHECK(plan.target_layer == 2);
  CHECK(plan.head.layers.size() + plan.tail.layers.size() == m.layers.size() + 6);
  int parameterized = 0;
  for (const auto& l : plan.head.layers)
    if (l.has_params()) parameterized++;
  for (const auto& l : plan.tail.layers)
    if (l.has_params()) parameterized++;
  int base_parameterized = 0;
  for (const auto& l : m.layers)
    if (l.has_params()) base_parameterized++;
  CHECK(parameterized == base_parameterized + 4);  // 2 encoder convs + 2 decoder tconvs

  // head output element count == encoded element count
  CHECK(TensorF::shape_numel(plan.head.layers.back().output_shape) == bn.spec.encoded_elements());

  // composition runs end to end and matches the assembled full model
  Rng rng(17);
  const TensorF img = random_tensor_f({1, 16, 16}, rng, 0.0, 1.0);
  const Model full = assemble_full(m, bn);
  CHECK(bitwise_equal(composed_forward(plan.head, plan.tail, img), forward(full, img)));
}

TEST_CASE("identity split is bitwise-exact end to end") {
  const Model m = trained_toy_model();
  Rng rng(19);
  const SplitPlan plan = assemble_identity(m, 3);
  for (int i = 0; i < 10; ++i) {
    const TensorF img = random_tensor_f({1, 16, 16}, rng, 0.0, 1.0);
    CHECK(bitwise_equal(composed_forward(plan.head, plan.tail, img), forward(m, img)));
  }
}

TEST_CASE("assembled split round-trips through checkpoints") {
  TempDir dir("bn_ckpt");
  const Model m = trained_toy_model();
  Bottleneck bn = make_bottleneck(build_bottleneck(m, 2, 0.7), 47);
  const SplitPlan plan = assemble(m, bn);
  checkpoint_save(plan.head, dir.file("head.ispl"));
  checkpoint_save(plan.tail, dir.file("tail.ispl"));
  const Model head = checkpoint_load(dir.file("head.ispl"));
  const Model tail = checkpoint_load(dir.file("tail.ispl"));
  Rng rng(23);
  const TensorF img = random_tensor_f({1, 16, 16}, rng, 0.0, 1.0);
  CHECK(bitwise_equal(composed_forward(head, tail, img),
                      composed_forward(plan.head, plan.tail, img)));
}
