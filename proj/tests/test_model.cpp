#include <doctest.h>

#include <cmath>

#include "cerberus/grad_check.hpp"
#include "cerberus/model.hpp"
#include "cerberus/ops.hpp"
#include "cerberus/rng.hpp"

using namespace cerberus;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.patch = 4;
  cfg.token_dim = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.tap_a = 1;
  cfg.tap_b = 2;
  cfg.fusion_dim = 8;
  cfg.tap_strides = {2, 4, 8, 16};
  cfg.semantic_classes = 3;
  cfg.affordance_classes = 2;
  cfg.attribute_classes = 2;
  return cfg;
}

Tensor random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::ArrayXd data(static_cast<long>(3) * h * w);
  for (long i = 0; i < data.size(); ++i) data[i] = rng.uniform();
  return Tensor::from_array({3, h, w}, std::move(data));
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("token count arithmetic") {
  ModelConfig a;
  a.height = a.width = 64;
  a.patch = 8;
  CHECK(a.patch_tokens() == 64);

  ModelConfig b;
  b.height = b.width = 32;
  b.patch = 8;
  b.tap_strides = {2, 4, 8, 16};
  CHECK(b.patch_tokens() == 16);

  ModelConfig bad;
  bad.height = 33;
  bad.width = 64;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config validation catches bad tap layouts") {
  ModelConfig cfg = tiny_config();
  cfg.tap_a = 2;
  cfg.tap_b = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.tap_strides = {2, 4, 8, 12};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.token_dim = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("embed_patches produces the token sequence and stem taps") {
  ModelConfig cfg = tiny_config();
  CerberusModel model(cfg, 7);
  Tensor image = random_image(16, 16, 1);
  EmbedResult er = model.embed_patches(image);
  CHECK(er.seq.tokens.shape() == Shape{17, 8});  // N_p + 1 rows
  CHECK(er.stage1.shape() == Shape{4, 4, 4});    // stride 4
  CHECK(er.stage2.shape() == Shape{8, 2, 2});    // stride 8

  Tensor wrong = random_image(16, 12, 2);
  CHECK_THROWS_AS(model.embed_patches(wrong), ConfigError);
}

TEST_CASE("encoder preserves shapes and records row-stochastic attention") {
  ModelConfig cfg = tiny_config();
  CerberusModel model(cfg, 3);
  Tensor image = random_image(16, 16, 4);
  EmbedResult er = model.embed_patches(image);
  EncoderResult enc = model.encoder_forward(er.seq, true);
  REQUIRE(enc.states.size() == 3);  // input + two layers
  for (const Tensor& s : enc.states) CHECK(s.shape() == Shape{17, 8});

  REQUIRE(enc.attention.has_value());
  const AttentionRecord& rec = *enc.attention;
  CHECK(rec.layers == 2);
  CHECK(rec.heads == 2);
  for (int l = 0; l < rec.layers; ++l) {
    for (int h = 0; h < rec.heads; ++h) {
      const Tensor& a = rec.at(l, h);
      REQUIRE(a.shape() == Shape{17, 17});
      for (int r = 0; r < 17; ++r) {
        double total = 0.0;
        for (int c = 0; c < 17; ++c) total += a.array()[r * 17 + c];
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
      CHECK(a.array().minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("reassemble stride handling") {
  // patch=8 so the token grid sits at stride 8; target strides around it.
  ModelConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.patch = 8;
  cfg.token_dim = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.tap_a = 1;
  cfg.tap_b = 2;
  cfg.fusion_dim = 6;
  cfg.tap_strides = {4, 8, 16, 32};
  cfg.semantic_classes = 3;
  cfg.affordance_classes = 2;
  cfg.attribute_classes = 2;
  CerberusModel model(cfg, 5);
  Tensor image = random_image(32, 32, 6);
  EmbedResult er = model.embed_patches(image);
  EncoderResult enc = model.encoder_forward(er.seq, false);

  // Tap 2 at stride 16: token grid 4x4 -> 2x2, fusion_dim channels.
  Tensor t2 = model.reassemble(enc.states[1], 2);
  CHECK(t2.shape() == Shape{6, 2, 2});
  // Tap 3 at stride 32 -> 1x1.
  Tensor t3 = model.reassemble(enc.states[2], 3);
  CHECK(t3.shape() == Shape{6, 1, 1});
  CHECK_THROWS_AS(model.reassemble(enc.states[1], 0), ConfigError);
}

TEST_CASE("reassemble upsampling doubles the grid when stride halves") {
  ModelConfig cfg = tiny_config();  // patch=4, tap stride 2 for the finest tap
  CerberusModel model(cfg, 5);
  Tensor image = random_image(16, 16, 8);
  EmbedResult er = model.embed_patches(image);
  EncoderResult enc = model.encoder_forward(er.seq, false);
  // Token grid 4x4 at stride 4; tap 2 targets stride 8 (downsample by 2).
  Tensor t2 = model.reassemble(enc.states[1], 2);
  CHECK(t2.shape() == Shape{8, 2, 2});
}

TEST_CASE("fusion block halves the stride and zero stays zero") {
  ModelConfig cfg = tiny_config();
  CerberusModel model(cfg, 9);
  // Stride-16 input map (1x1 spatial for 16px input) flows to stride 8.
  Tensor deep = Tensor::zeros({8, 1, 1});
  Tensor out = model.fusion_block(deep, nullptr, 3);
  CHECK(out.shape() == Shape{8, 2, 2});
  // Zero input with zero-initialized biases stays exactly zero.
  CHECK(out.array().abs().maxCoeff() == 0.0);

  Tensor mismatched = Tensor::zeros({8, 4, 4});
  Tensor r = Tensor::zeros({8, 2, 2});
  CHECK_THROWS_AS(model.fusion_block(r, &mismatched, 2), DimensionError);
}

TEST_CASE("four chained fusions reach stride 2 from the stride-32 tap") {
  ModelConfig cfg;
  cfg.height = cfg.width = 64;
  cfg.patch = 8;
  cfg.token_dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.tap_a = 1;
  cfg.tap_b = 2;
  cfg.fusion_dim = 8;
  cfg.tap_strides = {4, 8, 16, 32};
  cfg.semantic_classes = 3;
  cfg.affordance_classes = 2;
  cfg.attribute_classes = 2;
  CerberusModel model(cfg, 11);
  ForwardResult fr = model.forward_full(random_image(64, 64, 12), false);
  // Final fused feature sits at stride 2.
  CHECK(fr.final_feature.shape() == Shape{8, 32, 32});
  CHECK(fr.maps.semantic.shape() == Shape{3, 64, 64});
}

TEST_CASE("forward_full yields the documented head extents") {
  ModelConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.patch = 8;
  cfg.token_dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.tap_a = 1;
  cfg.tap_b = 2;
  cfg.fusion_dim = 8;
  cfg.tap_strides = {4, 8, 16, 32};
  cfg.semantic_classes = 40;
  cfg.affordance_classes = 5;
  cfg.attribute_classes = 11;
  CerberusModel model(cfg, 13);
  ForwardResult fr = model.forward_full(random_image(32, 32, 14), false);
  CHECK(fr.maps.semantic.shape() == Shape{40, 32, 32});
  CHECK(fr.maps.affordance.shape() == Shape{5, 32, 32});
  CHECK(fr.maps.attribute.shape() == Shape{11, 32, 32});
}

TEST_CASE("forward is deterministic and unaffected by attention recording") {
  ModelConfig cfg = tiny_config();
  CerberusModel model(cfg, 15);
  Tensor image = random_image(16, 16, 16);
  ForwardResult a = model.forward_full(image, false);
  ForwardResult b = model.forward_full(image, false);
  ForwardResult c = model.forward_full(image, true);
  for (long i = 0; i < a.maps.semantic.size(); ++i) {
    CHECK(a.maps.semantic.array()[i] == b.maps.semantic.array()[i]);
    CHECK(a.maps.semantic.array()[i] == c.maps.semantic.array()[i]);
  }
  for (long i = 0; i < a.maps.attribute.size(); ++i) {
    CHECK(a.maps.attribute.array()[i] == c.maps.attribute.array()[i]);
  }
  CHECK(c.attention.has_value());
}

TEST_CASE("heads are independent readouts of the shared feature") {
  ModelConfig cfg = tiny_config();
  CerberusModel model(cfg, 17);
  Tensor image = random_image(16, 16, 18);
  ForwardResult fr = model.forward_full(image, false);
  // Recomputing heads in the opposite order from the same feature matches.
  Tensor attr = model.head_logits(Task::Attribute, fr.final_feature);
  Tensor sem = model.head_logits(Task::Semantic, fr.final_feature);
  for (long i = 0; i < sem.size(); ++i) CHECK(sem.array()[i] == fr.maps.semantic.array()[i]);
  for (long i = 0; i < attr.size(); ++i) CHECK(attr.array()[i] == fr.maps.attribute.array()[i]);
}

TEST_CASE("readout_attention extracts the patch-key row") {
  ModelConfig cfg = tiny_config();
  CerberusModel model(cfg, 19);
  Tensor image = random_image(16, 16, 20);
  ForwardResult fr = model.forward_full(image, true);
  Tensor grid = CerberusModel::readout_attention(*fr.attention, 1, 0);
  CHECK(grid.shape() == Shape{4, 4});
  CHECK(grid.array().minCoeff() >= 0.0);
  CHECK(grid.array().sum() <= 1.0 + 1e-9);
  CHECK_THROWS_AS(CerberusModel::readout_attention(*fr.attention, 5, 0), DimensionError);

  // Uniform attention maps to the constant 1/(N_p+1).
  AttentionRecord uniform;
  uniform.layers = 1;
  uniform.heads = 1;
  uniform.tokens = 17;
  uniform.grid_rows = 4;
  uniform.grid_cols = 4;
  uniform.maps.push_back(Tensor::full({17, 17}, 1.0 / 17.0));
  Tensor flat = CerberusModel::readout_attention(uniform, 0, 0);
  for (long i = 0; i < flat.size(); ++i) {
    CHECK(flat.array()[i] == doctest::Approx(1.0 / 17.0).epsilon(1e-12));
  }
}

TEST_CASE("identical seeds give identical parameters") {
  ModelConfig cfg = tiny_config();
  CerberusModel a(cfg, 42);
  CerberusModel b(cfg, 42);
  CerberusModel c(cfg, 43);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool all_equal = true;
  bool any_diff_c = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& pa = a.parameters()[i].value;
    const auto& pb = b.parameters()[i].value;
    const auto& pc = c.parameters()[i].value;
    for (long j = 0; j < pa.size(); ++j) {
      if (pa.array()[j] != pb.array()[j]) all_equal = false;
      if (pa.array()[j] != pc.array()[j]) any_diff_c = true;
    }
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("checkpoint round-trip preserves parameters bit-exactly") {
  ModelConfig cfg = tiny_config();
  CerberusModel model(cfg, 77);
  const std::string path = "test_model_checkpoint.ckpt";
  model.save_checkpoint(path);
  CerberusModel back = CerberusModel::load_checkpoint(path);
  REQUIRE(back.parameters().size() == model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& pa = model.parameters()[i].value;
    const auto& pb = back.parameters()[i].value;
    REQUIRE(pa.size() == pb.size());
    for (long j = 0; j < pa.size(); ++j) CHECK(pa.array()[j] == pb.array()[j]);
  }
  std::remove(path.c_str());
}

TEST_CASE("full model gradient flow passes finite differences") {
  ModelConfig cfg = tiny_config();
  CerberusModel model(cfg, 21);
  Tensor image = random_image(16, 16, 22);

  ByteRaster labels(16, 16, 0);
  ByteRaster mask(16, 16, 1);
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) labels.at(i, j) = static_cast<std::uint8_t>((i / 6) % 3);
  }
  BinaryStack aff_targets(2, 16, 16);
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) aff_targets.at(0, i, j) = static_cast<std::uint8_t>(i < 8);
  }

  auto loss_fn = [&]() {
    ForwardResult fr = model.forward_full(image, false);
    Tensor l_sem = cross_entropy_masked(fr.maps.semantic, labels, mask);
    Tensor l_aff = bce_masked(fr.maps.affordance, aff_targets, mask);
    return add(l_sem, l_aff);
  };

  // Sample a handful of coordinates from several parameter tensors.
  Rng rng(2024);
  const auto& params = model.parameters();
  int checked = 0;
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); pi += 7) {
    std::vector<Tensor> all;
    for (const auto& p : params) all.push_back(p.value);
    std::vector<long> coords;
    const long n = params[pi].value.size();
    for (int c = 0; c < 2; ++c) coords.push_back(rng.uniform_int(static_cast<int>(n)));
    const double err = finite_diff_check_multi(loss_fn, all, pi, 1e-5, coords);
    worst = std::max(worst, err);
    checked += 2;
  }
  CHECK(checked >= 10);
  CHECK(worst < 1e-4);
}

TEST_SUITE_END();
