#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "vitlab/rng.hpp"
#include "vitlab/train.hpp"
#include "vitlab/vit.hpp"

using namespace vitlab;

namespace {

ViTConfig micro_config(int64_t registers = 0, bool use_cls = true) {
  ViTConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.embed_dim = 32;
  c.depth = 2;
  c.heads = 4;
  c.num_registers = registers;
  c.use_cls = use_cls;
  c.num_classes = 8;
  return c;
}

Image random_image(Rng& rng, int64_t side) {
  Image img(side, side);
  for (double& v : img.pixels) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("embed_patches identity embedding when P=1 and W=I") {
  ViTConfig c;
  c.image_size = 2;
  c.patch_size = 1;
  c.embed_dim = 3;
  c.depth = 1;
  c.heads = 1;
  c.num_classes = 2;
  ViTModel m = init_vit(c, 1);
  // W = I, b = 0: tokens equal pixels.
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t j = 0; j < 3; ++j) m.patch_weight.at(i, j) = i == j ? 1.0 : 0.0;
  }
  for (double& v : m.patch_bias.data()) v = 0.0;
  Rng rng(2);
  Image img = random_image(rng, 2);
  Tensor tokens = embed_patches(img, m);
  REQUIRE(tokens.dims() == Shape{4, 3});
  for (int64_t t = 0; t < 4; ++t) {
    for (int64_t ch = 0; ch < 3; ++ch) {
      CHECK(tokens.at(t, ch) == img.at(t / 2, t % 2, ch));
    }
  }
}

TEST_CASE("embed_patches row-major token order") {
  ViTConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.embed_dim = 1;
  c.depth = 1;
  c.heads = 1;
  c.num_classes = 2;
  ViTModel m = init_vit(c, 1);
  // Weight sums the patch, so each token value identifies its patch.
  for (double& v : m.patch_weight.data()) v = 1.0;
  for (double& v : m.patch_bias.data()) v = 0.0;
  Image img(4, 4);
  // Patch (r, c) filled with value r*2 + c.
  for (int64_t y = 0; y < 4; ++y) {
    for (int64_t x = 0; x < 4; ++x) {
      for (int64_t ch = 0; ch < 3; ++ch) {
        img.at(y, x, ch) = static_cast<double>((y / 2) * 2 + (x / 2));
      }
    }
  }
  Tensor tokens = embed_patches(img, m);
  REQUIRE(tokens.dims() == Shape{4, 1});
  for (int64_t t = 0; t < 4; ++t) {
    CHECK(tokens.at(t, 0) == doctest::Approx(12.0 * static_cast<double>(t)));
  }
}

TEST_CASE("embed_patches zero weight maps every token to the bias") {
  ViTConfig c = micro_config();
  ViTModel m = init_vit(c, 3);
  for (double& v : m.patch_weight.data()) v = 0.0;
  for (int64_t j = 0; j < c.embed_dim; ++j) m.patch_bias.at(j) = static_cast<double>(j);
  Rng rng(5);
  Tensor tokens = embed_patches(random_image(rng, 32), m);
  for (int64_t t = 0; t < tokens.dim(0); ++t) {
    for (int64_t j = 0; j < c.embed_dim; ++j) CHECK(tokens.at(t, j) == static_cast<double>(j));
  }
}

TEST_CASE("embed_patches rejects non-divisible sides") {
  ViTModel m = init_vit(micro_config(), 1);
  Image img(30, 30);
  CHECK_THROWS_AS(embed_patches(img, m), ShapeError);
}

TEST_CASE("sequence length invariant across configs") {
  Rng rng(3);
  for (int64_t registers : {0, 1, 4}) {
    for (bool use_cls : {true, false}) {
      ViTConfig c = micro_config(registers, use_cls);
      ViTModel m = init_vit(c, 11);
      Activations acts = forward(m, random_image(rng, 32));
      CHECK(acts.seq_len == (use_cls ? 1 : 0) + registers + 16);
      CHECK(acts.tokens_pre_ln.dim(0) == acts.seq_len);
      CHECK(acts.num_patches() == 16);
    }
  }
}

TEST_CASE("sequence ordering: cls, then registers, then patches") {
  ViTConfig c = micro_config(4);
  ViTModel m = init_vit(c, 11);
  Rng rng(13);
  Image img = random_image(rng, 32);
  Tensor patches = add(embed_patches(img, m), m.pos_grid);
  Tensor seq = assemble_sequence(m, patches);
  REQUIRE(seq.dim(0) == 21);
  // Rows 1..4 are the raw register parameters: no positional embedding.
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t j = 0; j < c.embed_dim; ++j) {
      CHECK(seq.at(1 + r, j) == m.registers.at(r, j));
    }
  }
  for (int64_t j = 0; j < c.embed_dim; ++j) {
    CHECK(seq.at(0, j) == m.cls_token.at(0, j) + m.pos_cls.at(0, j));
    CHECK(seq.at(5, j) == patches.at(0, j));
  }

  ViTConfig pooled = micro_config(2, false);
  ViTModel mp = init_vit(pooled, 11);
  Tensor seq2 = assemble_sequence(mp, add(embed_patches(img, mp), mp.pos_grid));
  CHECK(seq2.dim(0) == 18);
}

TEST_CASE("interpolate_pos_embed identity, constant field, and ramp oracle") {
  Rng rng(17);
  Tensor pos({9, 4});
  for (double& v : pos.data()) v = rng.uniform(-1.0, 1.0);
  Tensor same = interpolate_pos_embed(pos, 3, 3);
  for (int64_t i = 0; i < pos.numel(); ++i) {
    CHECK(same.at(i) == doctest::Approx(pos.at(i)).epsilon(1e-6));
  }

  Tensor constant({4, 2}, std::vector<double>(8, 0.3));
  Tensor bigger = interpolate_pos_embed(constant, 2, 5);
  for (double v : bigger.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));

  // Linear ramp along grid rows: value(r, c) = r. Align-corners G=2 -> 4
  // samples rows at i/3.
  Tensor ramp({4, 1}, {0.0, 0.0, 1.0, 1.0});
  Tensor out = interpolate_pos_embed(ramp, 2, 4);
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t c = 0; c < 4; ++c) {
      CHECK(std::abs(out.at(r * 4 + c, 0) - static_cast<double>(r) / 3.0) < 1e-9);
    }
  }
}

TEST_CASE("forward: registers are extra tokens, not replacements") {
  Rng rng(19);
  Image img = random_image(rng, 32);
  Activations plain = forward(init_vit(micro_config(0), 23), img);
  Activations reg = forward(init_vit(micro_config(4), 23), img);
  CHECK(plain.seq_len + 4 == reg.seq_len);
  CHECK(plain.num_patches() == reg.num_patches());
}

TEST_CASE("forward: attention rows are stochastic") {
  Rng rng(29);
  ViTModel m = init_vit(micro_config(4), 31);
  ForwardOptions opts;
  opts.attention = ForwardOptions::AttentionCapture::all;
  Activations acts = forward(m, random_image(rng, 32), opts);
  for (int64_t b = 0; b < 2; ++b) {
    const Tensor& attn = acts.attention[static_cast<size_t>(b)];
    REQUIRE(attn.defined());
    REQUIRE(attn.dims() == Shape{4, 21, 21});
    for (int64_t h = 0; h < 4; ++h) {
      for (int64_t q = 0; q < 21; ++q) {
        double acc = 0.0;
        for (int64_t k = 0; k < 21; ++k) acc += attn.at((h * 21 + q) * 21 + k);
        CHECK(std::abs(acc - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("forward: qkv capture shapes") {
  Rng rng(37);
  ViTModel m = init_vit(micro_config(), 41);
  ForwardOptions opts;
  opts.capture_qkv = true;
  opts.capture_block_outputs = true;
  Activations acts = forward(m, random_image(rng, 32), opts);
  for (int64_t b = 0; b < 2; ++b) {
    CHECK(acts.q_merged[static_cast<size_t>(b)].dims() == Shape{17, 32});
    CHECK(acts.k_merged[static_cast<size_t>(b)].dims() == Shape{17, 32});
    CHECK(acts.v_merged[static_cast<size_t>(b)].dims() == Shape{17, 32});
    CHECK(acts.block_tokens[static_cast<size_t>(b)].dims() == Shape{17, 32});
  }
}

TEST_CASE("forward rejects malformed images") {
  ViTModel m = init_vit(micro_config(), 1);
  Image rect(32, 16);
  CHECK_THROWS_AS(forward(m, rect), ShapeError);
  Image odd(30, 30);
  CHECK_THROWS_AS(forward(m, odd), ShapeError);
}

TEST_CASE("pooled_representation averages patch rows only") {
  SUBCASE("single patch is that token") {
    ViTConfig c;
    c.image_size = 8;
    c.patch_size = 8;
    c.embed_dim = 8;
    c.depth = 1;
    c.heads = 2;
    c.use_cls = true;
    c.num_classes = 2;
    ViTModel m = init_vit(c, 5);
    Rng rng(43);
    Activations acts = forward(m, random_image(rng, 8));
    Tensor pooled = pooled_representation(acts);
    for (int64_t j = 0; j < 8; ++j) {
      CHECK(pooled.at(0, j) == acts.tokens_final.at(1, j));
    }
  }
  SUBCASE("two tokens average, registers excluded") {
    Rng rng(47);
    ViTModel m = init_vit(micro_config(4), 53);
    Activations acts = forward(m, random_image(rng, 32));
    Tensor pooled = pooled_representation(acts);
    const int64_t patch0 = acts.patch_row_begin();
    for (int64_t j = 0; j < 32; ++j) {
      double mean = 0.0;
      for (int64_t t = 0; t < 16; ++t) mean += acts.tokens_final.at(patch0 + t, j);
      mean /= 16.0;
      CHECK(pooled.at(0, j) == doctest::Approx(mean).epsilon(1e-12));
    }
    // Register rows do not participate.
    for (int64_t r = 1; r <= 4; ++r) {
      acts.tokens_final.at(r, 0) = 1e9;
    }
    Tensor again = pooled_representation(acts);
    CHECK(again.at(0, 0) == pooled.at(0, 0));
  }
}

TEST_CASE("resolution consistency: interpolated pos embed reproduces native forward") {
  Rng rng(59);
  ViTModel m = init_vit(micro_config(2), 61);
  Image img = random_image(rng, 32);
  Activations native = forward(m, img);

  ViTModel copy = init_vit(micro_config(2), 61);
  copy.pos_grid = interpolate_pos_embed(m.pos_grid, 4, 4).set_requires_grad(true);
  Activations via_interp = forward(copy, img);
  for (int64_t i = 0; i < native.tokens_pre_ln.numel(); ++i) {
    CHECK(std::abs(native.tokens_pre_ln.at(i) - via_interp.tokens_pre_ln.at(i)) < 1e-9);
  }
}

TEST_CASE("forward at higher resolution interpolates the positional grid") {
  Rng rng(67);
  ViTModel m = init_vit(micro_config(1), 71);
  Image img = random_image(rng, 64);  // grid 8 instead of native 4
  Activations acts = forward(m, img);
  CHECK(acts.grid == 8);
  CHECK(acts.seq_len == 1 + 1 + 64);
  CHECK(acts.tokens_pre_ln.dim(0) == 66);
}

TEST_CASE("an immutable model is shareable across inference threads") {
  Rng rng(83);
  ViTModel model = init_vit(micro_config(2), 89);
  Image img = random_image(rng, 32);
  Activations serial = forward(model, img);
  std::vector<std::vector<double>> logits(4);
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t) {
    workers.emplace_back([&, t] {
      Activations acts = forward(model, img);
      logits[static_cast<size_t>(t)].assign(acts.logits.data().begin(),
                                            acts.logits.data().end());
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& row : logits) {
    REQUIRE(row.size() == static_cast<size_t>(serial.logits.numel()));
    for (int64_t i = 0; i < serial.logits.numel(); ++i) {
      CHECK(row[static_cast<size_t>(i)] == serial.logits.at(i));
    }
  }
}

TEST_CASE("forward is deterministic bitwise") {
  Rng rng(73);
  ViTModel m = init_vit(micro_config(4), 79);
  Image img = random_image(rng, 32);
  Activations a = forward(m, img);
  Activations b = forward(m, img);
  CHECK(a.logits.data()[0] == b.logits.data()[0]);
  for (int64_t i = 0; i < a.tokens_pre_ln.numel(); ++i) {
    CHECK(a.tokens_pre_ln.at(i) == b.tokens_pre_ln.at(i));
  }
}

TEST_CASE("micro-ViT gradients match finite differences end to end") {
  // Small config so the element sweep stays fast; the acceptance suite runs
  // the full-size version.
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.num_registers = 1;
  c.num_classes = 3;
  ViTModel model = init_vit(c, 21);
  Rng rng(22);
  Image img = random_image(rng, 8);
  const int64_t label = 2;
  std::vector<Tensor> params = model.parameters();
  const double err = grad_check(
      [&] {
        Activations acts = forward(model, img);
        return cross_entropy_logits(acts.logits, std::span<const int64_t>(&label, 1));
      },
      params, 1e-3);
  CHECK(err < 1e-4);
}

TEST_CASE("toy training learns above chance and loss trends down") {
  DataConfig dc;
  dc.per_class = 8;
  dc.val_per_class = 4;
  Dataset train_set = make_synthetic_train(dc);
  Dataset val_set = make_synthetic_val(dc);
  ViTModel model = init_vit(micro_config(0), 42);
  ToyTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  ToyResult result = train_vit(model, train_set, val_set, cfg);
  CHECK(result.final_val_accuracy > 0.25);  // 2x chance over 8 classes
  // Per-epoch mean loss non-increasing over any 3-epoch window.
  for (size_t t = 0; t + 2 < result.history.size(); ++t) {
    CHECK(result.history[t + 2].mean_loss <= result.history[t].mean_loss);
  }
}
