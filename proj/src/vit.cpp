#include "vitlab/vit.hpp"

#include <cmath>

#include "vitlab/rng.hpp"

namespace vitlab {

void ViTConfig::validate() const {
  if (image_size < 1 || patch_size < 1) throw ContractError("vit: image/patch size must be >= 1");
  if (image_size % patch_size != 0) {
    throw ContractError("vit: image_size " + std::to_string(image_size) +
                        " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
    throw ContractError("vit: embed_dim " + std::to_string(embed_dim) +
                        " not divisible by heads " + std::to_string(heads));
  }
  if (depth < 1) throw ContractError("vit: depth must be >= 1");
  if (mlp_ratio < 1) throw ContractError("vit: mlp_ratio must be >= 1");
  if (num_registers < 0) throw ContractError("vit: num_registers must be >= 0");
  if (num_classes < 1) throw ContractError("vit: num_classes must be >= 1");
  if (layernorm_eps <= 0.0) throw ContractError("vit: layernorm_eps must be positive");
}

namespace {

Tensor trunc_normal_tensor(Rng& rng, Shape dims, double stddev = 0.02) {
  Tensor t(std::move(dims), 0.0, true);
  for (double& v : t.data()) v = rng.trunc_normal(stddev);
  return t;
}

Tensor const_tensor(Shape dims, double fill) { return Tensor(std::move(dims), fill, true); }

}  // namespace

ViTModel init_vit(const ViTConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ViTModel m;
  m.config = config;
  const int64_t d = config.embed_dim;
  const int64_t mlp = config.mlp_ratio * d;

  m.patch_weight = trunc_normal_tensor(rng, {config.patch_dim(), d});
  m.patch_bias = const_tensor({d}, 0.0);
  if (config.use_cls) {
    m.cls_token = trunc_normal_tensor(rng, {1, d});
    m.pos_cls = trunc_normal_tensor(rng, {1, d});
  }
  if (config.num_registers > 0) {
    m.registers = trunc_normal_tensor(rng, {config.num_registers, d});
  }
  m.pos_grid = trunc_normal_tensor(rng, {config.num_patches(), d});
  for (int64_t i = 0; i < config.depth; ++i) {
    ViTBlock b;
    b.ln1_gamma = const_tensor({d}, 1.0);
    b.ln1_beta = const_tensor({d}, 0.0);
    b.qkv_weight = trunc_normal_tensor(rng, {d, 3 * d});
    b.qkv_bias = const_tensor({3 * d}, 0.0);
    b.proj_weight = trunc_normal_tensor(rng, {d, d});
    b.proj_bias = const_tensor({d}, 0.0);
    b.ln2_gamma = const_tensor({d}, 1.0);
    b.ln2_beta = const_tensor({d}, 0.0);
    b.fc1_weight = trunc_normal_tensor(rng, {d, mlp});
    b.fc1_bias = const_tensor({mlp}, 0.0);
    b.fc2_weight = trunc_normal_tensor(rng, {mlp, d});
    b.fc2_bias = const_tensor({d}, 0.0);
    m.blocks.push_back(std::move(b));
  }
  m.final_gamma = const_tensor({d}, 1.0);
  m.final_beta = const_tensor({d}, 0.0);
  m.head_weight = trunc_normal_tensor(rng, {d, config.num_classes});
  m.head_bias = const_tensor({config.num_classes}, 0.0);
  return m;
}

std::vector<std::pair<std::string, Tensor>> ViTModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch_embed.weight", patch_weight);
  out.emplace_back("patch_embed.bias", patch_bias);
  if (config.use_cls) {
    out.emplace_back("cls_token", cls_token);
    out.emplace_back("pos_embed.cls", pos_cls);
  }
  if (config.num_registers > 0) out.emplace_back("registers", registers);
  out.emplace_back("pos_embed.grid", pos_grid);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    const ViTBlock& b = blocks[i];
    out.emplace_back(p + "ln1.gamma", b.ln1_gamma);
    out.emplace_back(p + "ln1.beta", b.ln1_beta);
    out.emplace_back(p + "attn.qkv.weight", b.qkv_weight);
    out.emplace_back(p + "attn.qkv.bias", b.qkv_bias);
    out.emplace_back(p + "attn.proj.weight", b.proj_weight);
    out.emplace_back(p + "attn.proj.bias", b.proj_bias);
    out.emplace_back(p + "ln2.gamma", b.ln2_gamma);
    out.emplace_back(p + "ln2.beta", b.ln2_beta);
    out.emplace_back(p + "mlp.fc1.weight", b.fc1_weight);
    out.emplace_back(p + "mlp.fc1.bias", b.fc1_bias);
    out.emplace_back(p + "mlp.fc2.weight", b.fc2_weight);
    out.emplace_back(p + "mlp.fc2.bias", b.fc2_bias);
  }
  out.emplace_back("final_norm.gamma", final_gamma);
  out.emplace_back("final_norm.beta", final_beta);
  out.emplace_back("head.weight", head_weight);
  out.emplace_back("head.bias", head_bias);
  return out;
}

std::vector<Tensor> ViTModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

Tensor embed_patches(const Image& image, const ViTModel& model) {
  const int64_t p = model.config.patch_size;
  if (image.height != image.width) {
    throw ShapeError("embed_patches: image must be square, got " + std::to_string(image.height) +
                     "x" + std::to_string(image.width));
  }
  if (image.height % p != 0) {
    throw ShapeError("embed_patches: side " + std::to_string(image.height) +
                     " not divisible by patch size " + std::to_string(p));
  }
  const int64_t g = image.height / p;
  const int64_t n = g * g;
  const int64_t w = p * p * 3;
  Tensor patches({n, w});
  auto out = patches.data();
  for (int64_t pr = 0; pr < g; ++pr) {
    for (int64_t pc = 0; pc < g; ++pc) {
      const int64_t token = pr * g + pc;
      for (int64_t y = 0; y < p; ++y) {
        for (int64_t x = 0; x < p; ++x) {
          for (int64_t c = 0; c < 3; ++c) {
            out[token * w + (y * p + x) * 3 + c] = image.at(pr * p + y, pc * p + x, c);
          }
        }
      }
    }
  }
  return add_bias(matmul(patches, model.patch_weight), model.patch_bias);
}

Tensor assemble_sequence(const ViTModel& model, const Tensor& patch_tokens_with_pos) {
  std::vector<Tensor> parts;
  if (model.config.use_cls) parts.push_back(add(model.cls_token, model.pos_cls));
  if (model.config.num_registers > 0) parts.push_back(model.registers);
  parts.push_back(patch_tokens_with_pos);
  return concat_rows(parts);
}

Tensor interpolate_pos_embed(const Tensor& pos_grid, int64_t src_grid, int64_t dst_grid) {
  if (src_grid < 1 || dst_grid < 1) throw ShapeError("interpolate_pos_embed: grids must be >= 1");
  if (pos_grid.rank() != 2 || pos_grid.dim(0) != src_grid * src_grid) {
    throw ShapeError("interpolate_pos_embed: pos grid " + format_dims(pos_grid.dims()) +
                     " does not match grid " + std::to_string(src_grid));
  }
  const int64_t d = pos_grid.dim(1);
  Tensor out({dst_grid * dst_grid, d});
  auto o = out.data();
  auto v = pos_grid.data();
  const double s = dst_grid > 1
                       ? static_cast<double>(src_grid - 1) / static_cast<double>(dst_grid - 1)
                       : 0.0;
  for (int64_t r = 0; r < dst_grid; ++r) {
    const double fy = static_cast<double>(r) * s;
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, src_grid - 1);
    const double ty = fy - static_cast<double>(y0);
    for (int64_t c = 0; c < dst_grid; ++c) {
      const double fx = static_cast<double>(c) * s;
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, src_grid - 1);
      const double tx = fx - static_cast<double>(x0);
      for (int64_t ch = 0; ch < d; ++ch) {
        const double a00 = v[(y0 * src_grid + x0) * d + ch];
        const double a01 = v[(y0 * src_grid + x1) * d + ch];
        const double a10 = v[(y1 * src_grid + x0) * d + ch];
        const double a11 = v[(y1 * src_grid + x1) * d + ch];
        const double top = a00 + (a01 - a00) * tx;
        const double bot = a10 + (a11 - a10) * tx;
        o[(r * dst_grid + c) * d + ch] = top + (bot - top) * ty;
      }
    }
  }
  return out;
}

namespace {

// Copies per-head attention matrices into one detached [H x S x S] tensor.
Tensor merge_heads_3d(const std::vector<Tensor>& per_head, int64_t s) {
  const int64_t h = static_cast<int64_t>(per_head.size());
  Tensor out({h, s, s});
  auto o = out.data();
  for (int64_t i = 0; i < h; ++i) {
    auto src = per_head[static_cast<size_t>(i)].data();
    std::copy(src.begin(), src.end(), o.begin() + i * s * s);
  }
  return out;
}

}  // namespace

Activations forward(const ViTModel& model, const Image& image, const ForwardOptions& options) {
  const ViTConfig& c = model.config;
  c.validate();
  if (image.height != image.width) {
    throw ShapeError("forward: image must be square, got " + std::to_string(image.height) + "x" +
                     std::to_string(image.width));
  }
  if (image.height % c.patch_size != 0) {
    throw ShapeError("forward: side " + std::to_string(image.height) +
                     " not divisible by patch size " + std::to_string(c.patch_size));
  }
  const int64_t g = image.height / c.patch_size;
  const int64_t n = g * g;
  const int64_t d = c.embed_dim;
  const int64_t s = (c.use_cls ? 1 : 0) + c.num_registers + n;
  const int64_t dh = d / c.heads;
  const double scale_qk = 1.0 / std::sqrt(static_cast<double>(dh));

  Activations acts;
  acts.config = c;
  acts.grid = g;
  acts.seq_len = s;
  acts.attention.resize(static_cast<size_t>(c.depth));
  acts.q_merged.resize(static_cast<size_t>(c.depth));
  acts.k_merged.resize(static_cast<size_t>(c.depth));
  acts.v_merged.resize(static_cast<size_t>(c.depth));
  acts.block_tokens.resize(static_cast<size_t>(c.depth));

  Tensor patch_tokens = embed_patches(image, model);
  Tensor pos = (g == c.grid()) ? model.pos_grid : interpolate_pos_embed(model.pos_grid, c.grid(), g);
  Tensor x = assemble_sequence(model, add(patch_tokens, pos));

  // Optional analysis mask: -1e30 on register key columns zeroes their
  // attention weight exactly after softmax.
  Tensor mask_bias;
  if (options.mask_register_attention && c.num_registers > 0) {
    mask_bias = Tensor({s, s});
    const int64_t r0 = c.use_cls ? 1 : 0;
    for (int64_t q = 0; q < s; ++q) {
      for (int64_t kcol = r0; kcol < r0 + c.num_registers; ++kcol) {
        mask_bias.at(q, kcol) = -1e30;
      }
    }
  }

  for (int64_t bi = 0; bi < c.depth; ++bi) {
    const ViTBlock& blk = model.blocks[static_cast<size_t>(bi)];
    Tensor normed = layer_norm(x, blk.ln1_gamma, blk.ln1_beta, c.layernorm_eps);
    Tensor qkv = add_bias(matmul(normed, blk.qkv_weight), blk.qkv_bias);
    Tensor q = slice_cols(qkv, 0, d);
    Tensor k = slice_cols(qkv, d, 2 * d);
    Tensor v = slice_cols(qkv, 2 * d, 3 * d);
    if (options.capture_qkv) {
      acts.q_merged[static_cast<size_t>(bi)] = q.clone().set_requires_grad(false);
      acts.k_merged[static_cast<size_t>(bi)] = k.clone().set_requires_grad(false);
      acts.v_merged[static_cast<size_t>(bi)] = v.clone().set_requires_grad(false);
    }

    const bool capture_attn =
        options.attention == ForwardOptions::AttentionCapture::all ||
        (options.attention == ForwardOptions::AttentionCapture::final_block && bi == c.depth - 1);
    std::vector<Tensor> head_outputs;
    std::vector<Tensor> head_attn;
    for (int64_t h = 0; h < c.heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), scale_qk);
      if (mask_bias.defined()) scores = add(scores, mask_bias);
      Tensor attn = softmax(scores, 1);  // captured after softmax, pre-aggregation
      if (capture_attn) head_attn.push_back(attn);
      head_outputs.push_back(matmul(attn, vh));
    }
    if (capture_attn) acts.attention[static_cast<size_t>(bi)] = merge_heads_3d(head_attn, s);
    Tensor attn_out = add_bias(matmul(concat_cols(head_outputs), blk.proj_weight), blk.proj_bias);
    x = add(x, attn_out);

    Tensor normed2 = layer_norm(x, blk.ln2_gamma, blk.ln2_beta, c.layernorm_eps);
    Tensor hidden = gelu(add_bias(matmul(normed2, blk.fc1_weight), blk.fc1_bias));
    Tensor mlp_out = add_bias(matmul(hidden, blk.fc2_weight), blk.fc2_bias);
    x = add(x, mlp_out);
    if (options.capture_block_outputs) {
      acts.block_tokens[static_cast<size_t>(bi)] = x.clone().set_requires_grad(false);
    }
  }

  acts.tokens_pre_ln = x;
  Tensor y = layer_norm(x, model.final_gamma, model.final_beta, c.layernorm_eps);
  acts.tokens_final = y;
  const int64_t patch0 = (c.use_cls ? 1 : 0) + c.num_registers;
  acts.representation = c.use_cls ? slice_rows(y, 0, 1) : mean_rows(slice_rows(y, patch0, s));
  acts.logits = add_bias(matmul(acts.representation, model.head_weight), model.head_bias);
  if (c.num_registers > 0) {
    const int64_t r0 = c.use_cls ? 1 : 0;
    acts.register_out =
        slice_rows(y, r0, r0 + c.num_registers).clone().set_requires_grad(false);
  }
  return acts;
}

Tensor pooled_representation(const Activations& acts) {
  const int64_t patch0 = acts.patch_row_begin();
  return mean_rows(slice_rows(acts.tokens_final, patch0, acts.seq_len));
}

}  // namespace vitlab
