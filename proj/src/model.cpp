#include "cerberus/model.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "cerberus/ops.hpp"
#include "cerberus/rng.hpp"
#include "cerberus/tensor_io.hpp"

namespace cerberus {

using nlohmann::json;

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int int_log2(int v) {
  int n = 0;
  while (v > 1) {
    v >>= 1;
    ++n;
  }
  return n;
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
  }
}

}  // namespace

int ModelConfig::class_count(Task t) const {
  switch (t) {
    case Task::Attribute:
      return attribute_classes;
    case Task::Affordance:
      return affordance_classes;
    case Task::Semantic:
      return semantic_classes;
  }
  return 0;
}

void ModelConfig::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("model: height/width must be positive");
  if (patch < 4 || patch % 4 != 0) throw ConfigError("model: patch size must be a multiple of 4");
  if (height % patch != 0 || width % patch != 0) {
    throw ConfigError("model: input extent " + std::to_string(height) + "x" +
                      std::to_string(width) + " is not divisible by patch size " +
                      std::to_string(patch));
  }
  if (token_dim <= 0 || heads <= 0 || token_dim % heads != 0) {
    throw ConfigError("model: token_dim must be a positive multiple of heads");
  }
  if (layers < 1) throw ConfigError("model: encoder depth must be at least 1");
  if (!(tap_a >= 1 && tap_a < tap_b && tap_b <= layers)) {
    throw ConfigError("model: tap layers must satisfy 1 <= tap_a < tap_b <= layers");
  }
  if (fusion_dim <= 0) throw ConfigError("model: fusion_dim must be positive");
  if (semantic_classes < 1 || affordance_classes < 1 || attribute_classes < 1) {
    throw ConfigError("model: class counts must be positive");
  }
  for (int i = 0; i < 4; ++i) {
    const int s = tap_strides[static_cast<std::size_t>(i)];
    if (s <= 0 || height % s != 0 || width % s != 0) {
      throw ConfigError("model: tap stride " + std::to_string(s) +
                        " does not divide the input extent");
    }
    if (i > 0 && s != 2 * tap_strides[static_cast<std::size_t>(i - 1)]) {
      throw ConfigError("model: tap strides must double at each tap");
    }
  }
  if (tap_strides[0] % 2 != 0) throw ConfigError("model: the finest tap stride must be even");
  const int sources[4] = {4, 8, patch, patch};
  for (int i = 0; i < 4; ++i) {
    const int r = sources[i];
    const int s = tap_strides[static_cast<std::size_t>(i)];
    if (s >= r) {
      if (s % r != 0 || !is_power_of_two(s / r)) {
        throw ConfigError("model: tap " + std::to_string(i) + " cannot downsample from stride " +
                          std::to_string(r) + " to " + std::to_string(s));
      }
    } else if (r % s != 0) {
      throw ConfigError("model: tap " + std::to_string(i) + " cannot upsample from stride " +
                        std::to_string(r) + " to " + std::to_string(s));
    }
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["height"] = height;
  j["width"] = width;
  j["patch"] = patch;
  j["token_dim"] = token_dim;
  j["heads"] = heads;
  j["layers"] = layers;
  j["tap_a"] = tap_a;
  j["tap_b"] = tap_b;
  j["fusion_dim"] = fusion_dim;
  j["tap_strides"] = tap_strides;
  j["semantic_classes"] = semantic_classes;
  j["affordance_classes"] = affordance_classes;
  j["attribute_classes"] = attribute_classes;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  reject_unknown_keys(j,
                      {"height", "width", "patch", "token_dim", "heads", "layers", "tap_a",
                       "tap_b", "fusion_dim", "tap_strides", "semantic_classes",
                       "affordance_classes", "attribute_classes"},
                      "model config");
  ModelConfig cfg;
  try {
    cfg.height = j.value("height", cfg.height);
    cfg.width = j.value("width", cfg.width);
    cfg.patch = j.value("patch", cfg.patch);
    cfg.token_dim = j.value("token_dim", cfg.token_dim);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.tap_a = j.value("tap_a", (3 * cfg.layers + 3) / 4);
    cfg.tap_b = j.value("tap_b", cfg.layers);
    cfg.fusion_dim = j.value("fusion_dim", cfg.fusion_dim);
    if (j.contains("tap_strides")) {
      auto v = j.at("tap_strides").get<std::vector<int>>();
      if (v.size() != 4) throw ConfigError("model: tap_strides needs exactly four entries");
      for (int i = 0; i < 4; ++i) cfg.tap_strides[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    }
    cfg.semantic_classes = j.value("semantic_classes", cfg.semantic_classes);
    cfg.affordance_classes = j.value("affordance_classes", cfg.affordance_classes);
    cfg.attribute_classes = j.value("attribute_classes", cfg.attribute_classes);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return cfg;
}

const Tensor& AttentionRecord::at(int layer, int head) const {
  if (layer < 0 || layer >= layers || head < 0 || head >= heads) {
    throw DimensionError("attention record: layer " + std::to_string(layer) + ", head " +
                         std::to_string(head) + " out of range");
  }
  return maps[static_cast<std::size_t>(layer) * heads + head];
}

const Tensor& PredictionMaps::of(Task t) const {
  switch (t) {
    case Task::Attribute:
      return attribute;
    case Task::Affordance:
      return affordance;
    case Task::Semantic:
      return semantic;
  }
  return semantic;
}

Tensor CerberusModel::register_param(const std::string& name, Shape shape, bool trunk, Task head,
                                     double init_bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  if (init_bound > 0.0) {
    for (long i = 0; i < t.size(); ++i) t.array()[i] = rng.uniform(-init_bound, init_bound);
  }
  params_.push_back(NamedParam{name, t, trunk, head});
  return t;
}

CerberusModel::ConvParam CerberusModel::make_conv(const std::string& name, int cout, int cin,
                                                  int k, bool trunk, Task head, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
  ConvParam p;
  p.w = register_param(name + ".weight", {cout, cin, k, k}, trunk, head, bound, rng);
  p.b = register_param(name + ".bias", {cout}, trunk, head, 0.0, rng);
  return p;
}

CerberusModel::LinearParam CerberusModel::make_linear(const std::string& name, int in, int out,
                                                      bool trunk, Task head, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearParam p;
  p.w = register_param(name + ".weight", {in, out}, trunk, head, bound, rng);
  p.b = register_param(name + ".bias", {out}, trunk, head, 0.0, rng);
  return p;
}

CerberusModel::NormParam CerberusModel::make_norm(const std::string& name, int dim, Rng& rng) {
  NormParam p;
  p.gamma = register_param(name + ".gamma", {dim}, true, Task::Semantic, 0.0, rng);
  p.gamma.array().setConstant(1.0);
  p.beta = register_param(name + ".beta", {dim}, true, Task::Semantic, 0.0, rng);
  return p;
}

CerberusModel::CerberusModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_keys(seed, 0x6d6f64656cULL));

  const int d = cfg_.token_dim;
  stem1_channels_ = std::max(4, d / 4);
  stem2_channels_ = std::max(8, d / 2);

  stem_conv1_ = make_conv("stem.conv1", stem1_channels_, 3, 2, true, Task::Semantic, rng);
  stem_conv2_ = make_conv("stem.conv2", stem1_channels_, stem1_channels_, 3, true, Task::Semantic, rng);
  stem_conv3_ = make_conv("stem.conv3", stem1_channels_, stem1_channels_, 2, true, Task::Semantic, rng);
  stem_conv4_ = make_conv("stem.stage2", stem2_channels_, stem1_channels_, 2, true, Task::Semantic, rng);
  patch_embed_ = make_conv("stem.patch", d, stem1_channels_, cfg_.patch / 4, true, Task::Semantic, rng);

  pos_embedding_ = register_param("pos_embedding", {cfg_.patch_tokens() + 1, d}, true,
                                  Task::Semantic, 0.0, rng);
  readout_token_ = register_param("readout_token", {1, d}, true, Task::Semantic, 0.0, rng);

  layers_.resize(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string base = "encoder." + std::to_string(l);
    EncoderLayer& layer = layers_[static_cast<std::size_t>(l)];
    layer.ln1 = make_norm(base + ".ln1", d, rng);
    layer.qkv = make_linear(base + ".qkv", d, 3 * d, true, Task::Semantic, rng);
    layer.proj = make_linear(base + ".proj", d, d, true, Task::Semantic, rng);
    layer.ln2 = make_norm(base + ".ln2", d, rng);
    layer.ffn1 = make_linear(base + ".ffn1", d, 4 * d, true, Task::Semantic, rng);
    layer.ffn2 = make_linear(base + ".ffn2", 4 * d, d, true, Task::Semantic, rng);
  }

  const int sources[4] = {4, 8, cfg_.patch, cfg_.patch};
  const int channels[4] = {stem1_channels_, stem2_channels_, d, d};
  for (int tnum = 0; tnum < 4; ++tnum) {
    const std::string base = "reassemble." + std::to_string(tnum);
    TapParams& tap = taps_[static_cast<std::size_t>(tnum)];
    if (tnum >= 2) {
      tap.readout = make_linear(base + ".readout", 2 * d, d, true, Task::Semantic, rng);
    }
    const int s = cfg_.tap_strides[static_cast<std::size_t>(tnum)];
    if (s > sources[tnum]) {
      const int steps = int_log2(s / sources[tnum]);
      for (int k = 0; k < steps; ++k) {
        tap.down.push_back(make_conv(base + ".down" + std::to_string(k), channels[tnum],
                                     channels[tnum], 2, true, Task::Semantic, rng));
      }
    }
    tap.project = make_conv(base + ".project", cfg_.fusion_dim, channels[tnum], 1, true,
                            Task::Semantic, rng);
  }

  for (int stage = 0; stage < 4; ++stage) {
    const std::string base = "fusion." + std::to_string(stage);
    FusionStage& f = fusion_[static_cast<std::size_t>(stage)];
    f.r1.c1 = make_conv(base + ".rcu1.conv1", cfg_.fusion_dim, cfg_.fusion_dim, 3, true, Task::Semantic, rng);
    f.r1.c2 = make_conv(base + ".rcu1.conv2", cfg_.fusion_dim, cfg_.fusion_dim, 3, true, Task::Semantic, rng);
    f.r2.c1 = make_conv(base + ".rcu2.conv1", cfg_.fusion_dim, cfg_.fusion_dim, 3, true, Task::Semantic, rng);
    f.r2.c2 = make_conv(base + ".rcu2.conv2", cfg_.fusion_dim, cfg_.fusion_dim, 3, true, Task::Semantic, rng);
  }

  head_semantic_ = make_conv("head.semantic", cfg_.semantic_classes, cfg_.fusion_dim, 1, false,
                             Task::Semantic, rng);
  head_affordance_ = make_conv("head.affordance", cfg_.affordance_classes, cfg_.fusion_dim, 1,
                               false, Task::Affordance, rng);
  head_attribute_ = make_conv("head.attribute", cfg_.attribute_classes, cfg_.fusion_dim, 1,
                              false, Task::Attribute, rng);
}

EmbedResult CerberusModel::embed_patches(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.height ||
      image.dim(2) != cfg_.width) {
    throw ConfigError("embed_patches: image shape " + shape_to_string(image.shape()) +
                      " does not match the configured extent 3x" + std::to_string(cfg_.height) +
                      "x" + std::to_string(cfg_.width));
  }
  // Stage 1 (stride 4): patchify + context conv + downsample.
  Tensor s1 = gelu(add_channel_bias(conv2d(image, stem_conv1_.w, 2, 0), stem_conv1_.b));
  s1 = gelu(add_channel_bias(conv2d(s1, stem_conv2_.w, 1, 1), stem_conv2_.b));
  s1 = gelu(add_channel_bias(conv2d(s1, stem_conv3_.w, 2, 0), stem_conv3_.b));
  // Stage 2 (stride 8).
  Tensor s2 = gelu(add_channel_bias(conv2d(s1, stem_conv4_.w, 2, 0), stem_conv4_.b));

  const int k = cfg_.patch / 4;
  Tensor grid = add_channel_bias(conv2d(s1, patch_embed_.w, k, 0), patch_embed_.b);
  Tensor patch_tokens = map_to_tokens(grid);  // N_p x D

  // Prepend the readout token, then add the learned position embeddings.
  Tensor tokens =
      transpose(hconcat(transpose(readout_token_), transpose(patch_tokens)));
  tokens = add(tokens, pos_embedding_);

  EmbedResult result;
  result.seq.tokens = tokens;
  result.seq.grid_rows = cfg_.grid_rows();
  result.seq.grid_cols = cfg_.grid_cols();
  result.stage1 = s1;
  result.stage2 = s2;
  return result;
}

Tensor CerberusModel::attention_block(const EncoderLayer& layer, const Tensor& x,
                                      std::vector<Tensor>* recorded) const {
  const int d = cfg_.token_dim;
  const int dh = d / cfg_.heads;
  Tensor normed = layer_norm(x, layer.ln1.gamma, layer.ln1.beta, 1e-6);
  Tensor qkv = add_row_bias(matmul(normed, layer.qkv.w), layer.qkv.b);
  Tensor q = slice_cols(qkv, 0, d);
  Tensor k = slice_cols(qkv, d, 2 * d);
  Tensor v = slice_cols(qkv, 2 * d, 3 * d);

  std::vector<Tensor> contexts;
  contexts.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax(scores, 1);
    if (recorded != nullptr) {
      recorded->push_back(Tensor::from_array(attn.shape(), attn.array()));
    }
    contexts.push_back(matmul(attn, vh));
  }
  Tensor ctx = hconcat(contexts);
  return add_row_bias(matmul(ctx, layer.proj.w), layer.proj.b);
}

EncoderResult CerberusModel::encoder_forward(const TokenSequence& seq,
                                             bool record_attention) const {
  EncoderResult result;
  result.states.reserve(layers_.size() + 1);
  result.states.push_back(seq.tokens);
  std::vector<Tensor> recorded;

  Tensor x = seq.tokens;
  for (const EncoderLayer& layer : layers_) {
    Tensor attn_out = attention_block(layer, x, record_attention ? &recorded : nullptr);
    x = add(x, attn_out);
    Tensor normed = layer_norm(x, layer.ln2.gamma, layer.ln2.beta, 1e-6);
    Tensor hidden = gelu(add_row_bias(matmul(normed, layer.ffn1.w), layer.ffn1.b));
    Tensor ffn_out = add_row_bias(matmul(hidden, layer.ffn2.w), layer.ffn2.b);
    x = add(x, ffn_out);
    result.states.push_back(x);
  }

  if (record_attention) {
    AttentionRecord rec;
    rec.layers = static_cast<int>(layers_.size());
    rec.heads = cfg_.heads;
    rec.tokens = seq.tokens.dim(0);
    rec.grid_rows = seq.grid_rows;
    rec.grid_cols = seq.grid_cols;
    rec.maps = std::move(recorded);
    result.attention = std::move(rec);
  }
  return result;
}

Tensor CerberusModel::resample_to_stride(const Tensor& map, int source_stride, int target_stride,
                                         const TapParams& tap) const {
  Tensor out = map;
  if (target_stride > source_stride) {
    for (const ConvParam& conv : tap.down) {
      out = add_channel_bias(conv2d(out, conv.w, 2, 0), conv.b);
    }
  } else if (target_stride < source_stride) {
    out = upsample_bilinear(out, source_stride / target_stride);
  }
  return out;
}

Tensor CerberusModel::reassemble(const Tensor& tokens, int tap_index) const {
  if (tap_index < 2 || tap_index > 3) {
    throw ConfigError("reassemble: token taps are indices 2 and 3");
  }
  const TapParams& tap = taps_[static_cast<std::size_t>(tap_index)];
  const int n = cfg_.patch_tokens();
  if (tokens.rank() != 2 || tokens.dim(0) != n + 1 || tokens.dim(1) != cfg_.token_dim) {
    throw DimensionError("reassemble: expected token matrix [" + std::to_string(n + 1) + "x" +
                         std::to_string(cfg_.token_dim) + "], got " +
                         shape_to_string(tokens.shape()));
  }
  Tensor patches = slice_rows(tokens, 1, n + 1);
  Tensor readout = slice_rows(tokens, 0, 1);
  Tensor fused = hconcat(patches, tile_rows(readout, n));
  fused = add_row_bias(matmul(fused, tap.readout.w), tap.readout.b);
  Tensor grid = tokens_to_map(fused, cfg_.grid_rows(), cfg_.grid_cols());
  Tensor resampled = resample_to_stride(grid, cfg_.patch,
                                        cfg_.tap_strides[static_cast<std::size_t>(tap_index)], tap);
  return add_channel_bias(conv2d(resampled, tap.project.w, 1, 0), tap.project.b);
}

Tensor CerberusModel::rcu(const RcuParams& p, const Tensor& x) const {
  Tensor t = gelu(x);
  t = add_channel_bias(conv2d(t, p.c1.w, 1, 1), p.c1.b);
  t = gelu(t);
  t = add_channel_bias(conv2d(t, p.c2.w, 1, 1), p.c2.b);
  return add(x, t);
}

Tensor CerberusModel::fusion_block(const Tensor& reassembled, const Tensor* previous,
                                   int stage) const {
  const FusionStage& f = fusion_[static_cast<std::size_t>(stage)];
  Tensor t = rcu(f.r1, reassembled);
  if (previous != nullptr) {
    if (previous->shape() != t.shape()) {
      throw DimensionError("fusion_block: previous feature " + shape_to_string(previous->shape()) +
                           " does not match " + shape_to_string(t.shape()));
    }
    t = add(t, *previous);
  }
  t = rcu(f.r2, t);
  return upsample_bilinear(t, 2);
}

Tensor CerberusModel::head_logits(Task t, const Tensor& final_feature) const {
  const ConvParam* head = nullptr;
  switch (t) {
    case Task::Attribute:
      head = &head_attribute_;
      break;
    case Task::Affordance:
      head = &head_affordance_;
      break;
    case Task::Semantic:
      head = &head_semantic_;
      break;
  }
  Tensor logits = add_channel_bias(conv2d(final_feature, head->w, 1, 0), head->b);
  return upsample_bilinear(logits, cfg_.final_stride());
}

ForwardResult CerberusModel::forward_full(const Tensor& image, bool record_attention) const {
  EmbedResult embedded = embed_patches(image);
  EncoderResult enc = encoder_forward(embedded.seq, record_attention);

  std::array<Tensor, 4> taps;
  taps[0] = add_channel_bias(
      conv2d(resample_to_stride(embedded.stage1, 4, cfg_.tap_strides[0], taps_[0]),
             taps_[0].project.w, 1, 0),
      taps_[0].project.b);
  taps[1] = add_channel_bias(
      conv2d(resample_to_stride(embedded.stage2, 8, cfg_.tap_strides[1], taps_[1]),
             taps_[1].project.w, 1, 0),
      taps_[1].project.b);
  taps[2] = reassemble(enc.states[static_cast<std::size_t>(cfg_.tap_a)], 2);
  taps[3] = reassemble(enc.states[static_cast<std::size_t>(cfg_.tap_b)], 3);

  Tensor fused = fusion_block(taps[3], nullptr, 3);
  fused = fusion_block(taps[2], &fused, 2);
  fused = fusion_block(taps[1], &fused, 1);
  fused = fusion_block(taps[0], &fused, 0);

  ForwardResult result;
  result.final_feature = fused;
  result.maps.attribute = head_logits(Task::Attribute, fused);
  result.maps.affordance = head_logits(Task::Affordance, fused);
  result.maps.semantic = head_logits(Task::Semantic, fused);
  result.attention = std::move(enc.attention);
  return result;
}

Tensor CerberusModel::readout_attention(const AttentionRecord& rec, int layer, int head) {
  const Tensor& attn = rec.at(layer, head);
  const int n = rec.tokens - 1;
  Eigen::ArrayXd grid(n);
  for (int p = 0; p < n; ++p) grid[p] = attn.array()[p + 1];  // row 0, patch keys
  return Tensor::from_array({rec.grid_rows, rec.grid_cols}, std::move(grid));
}

std::vector<Tensor> CerberusModel::trunk_parameters() const {
  std::vector<Tensor> out;
  for (const NamedParam& p : params_) {
    if (p.trunk) out.push_back(p.value);
  }
  return out;
}

std::vector<Tensor> CerberusModel::head_parameters(Task t) const {
  std::vector<Tensor> out;
  for (const NamedParam& p : params_) {
    if (!p.trunk && p.head == t) out.push_back(p.value);
  }
  return out;
}

long CerberusModel::trunk_parameter_count() const {
  long n = 0;
  for (const NamedParam& p : params_) {
    if (p.trunk) n += p.value.size();
  }
  return n;
}

void CerberusModel::zero_grad() {
  for (NamedParam& p : params_) p.value.zero_grad();
}

void CerberusModel::save_checkpoint(const std::string& path) const {
  json header;
  header["format"] = "cerberus-checkpoint";
  header["version"] = 1;
  header["config"] = json::parse(cfg_.to_json());
  std::vector<std::string> names;
  for (const NamedParam& p : params_) names.push_back(p.name);
  header["parameters"] = names;
  const std::string head_text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  const std::uint32_t len = static_cast<std::uint32_t>(head_text.size());
  unsigned char lenb[4];
  for (int i = 0; i < 4; ++i) lenb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(lenb), 4);
  os.write(head_text.data(), static_cast<std::streamsize>(head_text.size()));
  for (const NamedParam& p : params_) write_tensor(os, p.value);
  if (!os) throw IoError("failed writing " + path);
}

CerberusModel CerberusModel::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  unsigned char lenb[4];
  if (!is.read(reinterpret_cast<char*>(lenb), 4)) throw ParseError("truncated checkpoint " + path);
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(lenb[i]) << (8 * i);
  if (len > (1u << 20)) throw ParseError("implausible checkpoint header in " + path);
  std::string head_text(len, '\0');
  if (!is.read(head_text.data(), len)) throw ParseError("truncated checkpoint header " + path);

  json header;
  try {
    header = json::parse(head_text);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint header in " + path + ": " + e.what());
  }
  if (header.value("format", "") != "cerberus-checkpoint") {
    throw ParseError("not a checkpoint file: " + path);
  }
  ModelConfig cfg = ModelConfig::from_json(header.at("config").dump());
  CerberusModel model(cfg, 0);
  const auto names = header.at("parameters").get<std::vector<std::string>>();
  if (names.size() != model.params_.size()) {
    throw ParseError("checkpoint " + path + " carries " + std::to_string(names.size()) +
                     " parameters, model expects " + std::to_string(model.params_.size()));
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] != model.params_[i].name) {
      throw ParseError("checkpoint " + path + ": parameter order mismatch at " + names[i]);
    }
    Tensor stored = read_tensor(is, path);
    if (stored.shape() != model.params_[i].value.shape()) {
      throw ParseError("checkpoint " + path + ": shape mismatch for " + names[i]);
    }
    model.params_[i].value.array() = stored.array();
  }
  return model;
}

}  // namespace cerberus
