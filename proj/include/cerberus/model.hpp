#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cerberus/tasks.hpp"
#include "cerberus/tensor.hpp"

namespace cerberus {

struct ModelConfig {
  int height = 64;
  int width = 64;
  int patch = 8;       // token grid is at stride `patch`
  int token_dim = 64;  // encoder width
  int heads = 4;
  int layers = 4;
  int tap_a = 3;  // 1-based encoder layers feeding the two token taps
  int tap_b = 4;
  int fusion_dim = 64;
  std::array<int, 4> tap_strides = {4, 8, 16, 32};
  int semantic_classes = 8;
  int affordance_classes = 5;
  int attribute_classes = 11;

  int patch_tokens() const { return (height / patch) * (width / patch); }
  int grid_rows() const { return height / patch; }
  int grid_cols() const { return width / patch; }
  int final_stride() const { return tap_strides[0] / 2; }
  int class_count(Task t) const;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Patch tokens with the readout token at row 0.
struct TokenSequence {
  Tensor tokens;  // (N_p+1) x D
  int grid_rows = 0;
  int grid_cols = 0;
};

struct EmbedResult {
  TokenSequence seq;
  Tensor stage1;  // stem feature at stride 4
  Tensor stage2;  // stem feature at stride 8
};

// Row-stochastic attention matrices for every (layer, head).
struct AttentionRecord {
  int layers = 0;
  int heads = 0;
  int tokens = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<Tensor> maps;  // layer-major, each (N_p+1) x (N_p+1)

  const Tensor& at(int layer, int head) const;
};

struct EncoderResult {
  // states[0] is the input sequence, states[l] the output of layer l.
  std::vector<Tensor> states;
  std::optional<AttentionRecord> attention;
};

struct PredictionMaps {
  Tensor semantic;    // x  × H × W logits
  Tensor affordance;  // y  × H × W logits
  Tensor attribute;   // z  × H × W logits

  const Tensor& of(Task t) const;
};

struct ForwardResult {
  PredictionMaps maps;
  Tensor final_feature;  // fused trunk feature shared by all heads
  std::optional<AttentionRecord> attention;
};

struct NamedParam {
  std::string name;
  Tensor value;
  bool trunk = true;           // false for prediction-head parameters
  Task head = Task::Semantic;  // meaningful only when !trunk
};

// The joint dense-prediction network: convolutional stem, token encoder,
// per-tap reassembly, fusion pyramid and three prediction heads.
class CerberusModel {
 public:
  CerberusModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  EmbedResult embed_patches(const Tensor& image) const;
  EncoderResult encoder_forward(const TokenSequence& seq, bool record_attention) const;
  Tensor reassemble(const Tensor& tokens, int tap_index) const;
  Tensor fusion_block(const Tensor& reassembled, const Tensor* previous, int stage) const;
  Tensor head_logits(Task t, const Tensor& final_feature) const;

  ForwardResult forward_full(const Tensor& image, bool record_attention) const;

  // Row 0 of the chosen attention matrix restricted to the patch keys,
  // arranged on the patch grid.
  static Tensor readout_attention(const AttentionRecord& rec, int layer, int head);

  const std::vector<NamedParam>& parameters() const { return params_; }
  std::vector<Tensor> trunk_parameters() const;
  std::vector<Tensor> head_parameters(Task t) const;
  long trunk_parameter_count() const;
  void zero_grad();

  void save_checkpoint(const std::string& path) const;
  static CerberusModel load_checkpoint(const std::string& path);

 private:
  struct ConvParam {
    Tensor w, b;
  };
  struct LinearParam {
    Tensor w, b;
  };
  struct NormParam {
    Tensor gamma, beta;
  };
  struct EncoderLayer {
    NormParam ln1;
    LinearParam qkv, proj;
    NormParam ln2;
    LinearParam ffn1, ffn2;
  };
  struct TapParams {
    LinearParam readout;          // token taps only
    std::vector<ConvParam> down;  // stride-2 convs when the target is coarser
    ConvParam project;            // 1x1 to the fusion width
  };
  struct RcuParams {
    ConvParam c1, c2;
  };
  struct FusionStage {
    RcuParams r1, r2;
  };

  Tensor register_param(const std::string& name, Shape shape, bool trunk, Task head,
                        double init_bound, class Rng& rng);
  ConvParam make_conv(const std::string& name, int cout, int cin, int k, bool trunk, Task head,
                      class Rng& rng);
  LinearParam make_linear(const std::string& name, int in, int out, bool trunk, Task head,
                          class Rng& rng);
  NormParam make_norm(const std::string& name, int dim, class Rng& rng);

  Tensor resample_to_stride(const Tensor& map, int source_stride, int target_stride,
                            const TapParams& tap) const;
  Tensor rcu(const RcuParams& p, const Tensor& x) const;
  Tensor attention_block(const EncoderLayer& layer, const Tensor& x,
                         std::vector<Tensor>* recorded) const;

  ModelConfig cfg_;
  int stem1_channels_ = 0;
  int stem2_channels_ = 0;

  ConvParam stem_conv1_, stem_conv2_, stem_conv3_, stem_conv4_, patch_embed_;
  Tensor pos_embedding_;   // (N_p+1) x D
  Tensor readout_token_;   // 1 x D
  std::vector<EncoderLayer> layers_;
  std::array<TapParams, 4> taps_;
  std::array<FusionStage, 4> fusion_;
  ConvParam head_semantic_, head_affordance_, head_attribute_;

  std::vector<NamedParam> params_;
};

}  // namespace cerberus
