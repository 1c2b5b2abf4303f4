#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vitlab/data.hpp"
#include "vitlab/tensor.hpp"

namespace vitlab {

struct ViTConfig {
  int64_t image_size = 32;   // square input side, pixels
  int64_t patch_size = 8;    // must divide image_size
  int64_t embed_dim = 32;    // must be divisible by heads
  int64_t depth = 2;
  int64_t heads = 4;
  int64_t mlp_ratio = 4;
  int64_t num_registers = 0;
  bool use_cls = true;       // false = pooled mode (patch-mean representation)
  int64_t num_classes = 8;
  double layernorm_eps = 1e-6;

  int64_t grid() const { return image_size / patch_size; }
  int64_t num_patches() const { return grid() * grid(); }
  int64_t seq_len() const { return (use_cls ? 1 : 0) + num_registers + num_patches(); }
  int64_t patch_dim() const { return patch_size * patch_size * 3; }

  void validate() const;  // throws ContractError
};

struct ViTBlock {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_weight, qkv_bias;    // [D x 3D], [3D]
  Tensor proj_weight, proj_bias;  // [D x D], [D]
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_weight, fc1_bias;    // [D x mlp], [mlp]
  Tensor fc2_weight, fc2_bias;    // [mlp x D], [D]
};

// Pre-norm ViT: x + attn(ln1(x)), then x + mlp(ln2(x)). Sequence order is
// [CLS] (when used), then registers, then patch tokens in row-major grid
// order. Registers carry no positional embedding.
struct ViTModel {
  ViTConfig config;
  Tensor patch_weight, patch_bias;  // [P*P*3 x D], [D]
  Tensor cls_token;                 // [1 x D] when use_cls
  Tensor pos_cls;                   // [1 x D] when use_cls
  Tensor registers;                 // [R x D] when R > 0
  Tensor pos_grid;                  // [N x D]
  std::vector<ViTBlock> blocks;
  Tensor final_gamma, final_beta;
  Tensor head_weight, head_bias;    // [D x C], [C]

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
};

// Truncated-normal(0.02) weights, zero biases, unit LayerNorm gains.
ViTModel init_vit(const ViTConfig& config, uint64_t seed);

struct ForwardOptions {
  enum class AttentionCapture { none, final_block, all };
  AttentionCapture attention = AttentionCapture::none;
  bool capture_qkv = false;            // per-block Q/K/V, head-merged [S x D]
  bool capture_block_outputs = false;  // per-block residual-stream tokens
  // Analysis harness: removes register key columns from every attention row
  // (scores forced to -1e30 before softmax), so registers receive no
  // attention and cannot influence other tokens.
  bool mask_register_attention = false;
};

struct Activations {
  ViTConfig config;   // config in effect, with `grid` reflecting the input
  int64_t grid = 0;   // effective grid side for this forward
  int64_t seq_len = 0;

  std::vector<Tensor> attention;   // per block [H x S x S]; undefined when not captured
  std::vector<Tensor> q_merged;    // per block [S x D]
  std::vector<Tensor> k_merged;
  std::vector<Tensor> v_merged;
  std::vector<Tensor> block_tokens;  // per block [S x D], post-residual

  Tensor tokens_pre_ln;   // [S x D], before the final LayerNorm (norms live here)
  Tensor tokens_final;    // [S x D], after the final LayerNorm (probe features)
  Tensor representation;  // [1 x D]: [CLS] row, or patch mean in pooled mode
  Tensor logits;          // [1 x C]
  Tensor register_out;    // [R x D] detached copy of final register rows

  int64_t patch_row_begin() const { return (config.use_cls ? 1 : 0) + config.num_registers; }
  int64_t num_patches() const { return grid * grid; }
};

// Patch projection only (no positional embedding): non-overlapping P x P
// patches flattened (row, col, channel) then mapped to D. Accepts any square
// side divisible by P.
Tensor embed_patches(const Image& image, const ViTModel& model);

// Input-sequence assembly: [CLS]+pos, registers, patches+pos.
Tensor assemble_sequence(const ViTModel& model, const Tensor& patch_tokens_with_pos);

// Bilinear align-corners resampling of the positional grid [G*G x D] to
// [G'*G' x D]; detached (analysis-time only).
Tensor interpolate_pos_embed(const Tensor& pos_grid, int64_t src_grid, int64_t dst_grid);

Activations forward(const ViTModel& model, const Image& image, const ForwardOptions& options = {});

// Mean of the N patch output tokens (post final LayerNorm); registers and
// [CLS] excluded.
Tensor pooled_representation(const Activations& acts);

}  // namespace vitlab
