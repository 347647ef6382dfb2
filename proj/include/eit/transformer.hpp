#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "eit/acp.hpp"
#include "eit/cat.hpp"
#include "eit/nn.hpp"

// Vision transformer with an optional enhanced interaction front end per
// block: the token map is refined by a convolutional pyramid (ACP) and a
// conceptual attention transformation (CAT) before multi-head self-attention.
// Plain pre-norm blocks serve as the width-matched baseline and blocks can
// run either half alone for isolation studies.

namespace eit {

enum class BlockKind { kBaseline, kEnhanced, kAcpOnly, kCatOnly };

inline const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::kBaseline: return "baseline";
    case BlockKind::kEnhanced: return "enhanced";
    case BlockKind::kAcpOnly: return "acp_only";
    case BlockKind::kCatOnly: return "cat_only";
  }
  return "?";
}

inline BlockKind block_kind_from(const std::string& s) {
  if (s == "baseline") return BlockKind::kBaseline;
  if (s == "enhanced") return BlockKind::kEnhanced;
  if (s == "acp_only") return BlockKind::kAcpOnly;
  if (s == "cat_only") return BlockKind::kCatOnly;
  throw ConfigError("unknown block kind: " + s);
}

template <typename T>
struct Mhsa {
  LinearLayer<T> wq, wk, wv, wo;
  int heads = 1;
  int dim = 0;

  Mhsa() = default;
  Mhsa(int c, int heads_, bool qkv_bias, Rng& rng) : heads(heads_), dim(c) {
    if (c % heads_ != 0) throw ConfigError("mhsa: dim not divisible by heads");
    wq = LinearLayer<T>(c, c, rng, qkv_bias);
    wk = LinearLayer<T>(c, c, rng, qkv_bias);
    wv = LinearLayer<T>(c, c, rng, qkv_bias);
    wo = LinearLayer<T>(c, c, rng, true);
  }

  // x (B,N,C); attn_out, when given, receives (B*heads, N, N)
  Tensor<T> forward(const Tensor<T>& x, Tensor<T>* attn_out = nullptr) const {
    const int dk = dim / heads;
    auto q = split_heads(wq.forward(x), heads);
    auto k = split_heads(wk.forward(x), heads);
    auto v = split_heads(wv.forward(x), heads);
    auto scores = scale(bmm(q, transpose_last2(k)), static_cast<T>(1.0 / std::sqrt(dk)));
    auto attn = softmax_lastdim(scores);
    if (attn_out) *attn_out = attn;
    return wo.forward(merge_heads(bmm(attn, v), heads));
  }

  void params(NamedParams<T>& out, const std::string& p) const {
    wq.params(out, p + ".q");
    wk.params(out, p + ".k");
    wv.params(out, p + ".v");
    wo.params(out, p + ".o");
  }
};

template <typename T>
struct MlpFfn {
  LinearLayer<T> fc1, fc2;

  MlpFfn() = default;
  MlpFfn(int c, double ratio, Rng& rng) {
    const int hidden = std::max(1, static_cast<int>(c * ratio));
    fc1 = LinearLayer<T>(hidden, c, rng);
    fc2 = LinearLayer<T>(c, hidden, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return fc2.forward(gelu(fc1.forward(x))); }

  void params(NamedParams<T>& out, const std::string& p) const {
    fc1.params(out, p + ".fc1");
    fc2.params(out, p + ".fc2");
  }
};

template <typename T>
struct BlockTrace {
  Tensor<T> tokens;     // block output (B,N,C)
  Tensor<T> cat_attn;   // (B,L,HW) when the block has a CAT stage
  Tensor<T> mhsa_attn;  // (B*heads,N,N)
};

struct BlockSpec {
  BlockKind kind = BlockKind::kBaseline;
  int dim = 0, h = 0, w = 0, heads = 1;
  double mlp_ratio = 4.0;
  bool qkv_bias = true;
  int n_lpu = 2;
  int n_concepts = 16;
  ConceptMode concept_mode = ConceptMode::kIndependent;
  AlphaMode alpha_mode = AlphaMode::kPositional;
};

template <typename T>
struct Block {
  BlockSpec spec;
  Acp<T> acp;
  LayerNormLayer<T> ln_in;  // normalizes whatever feeds CAT
  Cat<T> cat;
  LayerNormLayer<T> ln1, ln2;
  Mhsa<T> attn;
  MlpFfn<T> mlp;

  Block() = default;
  Block(BlockSpec s, Rng& rng) : spec(s) {
    const bool has_acp = s.kind == BlockKind::kEnhanced || s.kind == BlockKind::kAcpOnly;
    const bool has_cat = s.kind == BlockKind::kEnhanced || s.kind == BlockKind::kCatOnly;
    if (has_acp) {
      const int max_lv = acp_max_levels(s.h, s.w);
      if (s.n_lpu > max_lv)
        throw ConfigError("block: n_lpu=" + std::to_string(s.n_lpu) + " exceeds plane " +
                          std::to_string(s.h) + "x" + std::to_string(s.w));
      acp = Acp<T>(AcpConfig{s.dim, s.n_lpu}, rng);
    }
    if (has_cat) {
      ln_in = LayerNormLayer<T>(s.dim);
      CatConfig cc;
      cc.channels = s.dim;
      cc.n_concepts = s.n_concepts;
      cc.h = s.h;
      cc.w = s.w;
      cc.concept_mode = s.concept_mode;
      cc.alpha_mode = s.alpha_mode;
      cat = Cat<T>(cc, rng);
    }
    ln1 = LayerNormLayer<T>(s.dim);
    attn = Mhsa<T>(s.dim, s.heads, s.qkv_bias, rng);
    ln2 = LayerNormLayer<T>(s.dim);
    mlp = MlpFfn<T>(s.dim, s.mlp_ratio, rng);
  }

  // x (B,N,C) with N == h*w
  Tensor<T> forward(const Tensor<T>& x, BlockTrace<T>* trace = nullptr) const {
    Tensor<T> u = x;
    CatTrace<T> ct;
    switch (spec.kind) {
      case BlockKind::kBaseline:
        break;
      case BlockKind::kAcpOnly:
        u = to_tokens(acp.forward(from_tokens(x, spec.h, spec.w)));
        break;
      case BlockKind::kCatOnly:
        u = cat.forward(from_tokens(ln_in.forward(x), spec.h, spec.w), trace ? &ct : nullptr);
        break;
      case BlockKind::kEnhanced: {
        auto a = to_tokens(acp.forward(from_tokens(x, spec.h, spec.w)));
        u = cat.forward(from_tokens(ln_in.forward(a), spec.h, spec.w), trace ? &ct : nullptr);
        break;
      }
    }
    Tensor<T> mattn;
    auto v = add(u, attn.forward(ln1.forward(u), trace ? &mattn : nullptr));
    auto out = add(v, mlp.forward(ln2.forward(v)));
    if (trace) {
      trace->tokens = out;
      trace->cat_attn = ct.attn;
      trace->mhsa_attn = mattn;
    }
    return out;
  }

  void params(NamedParams<T>& out, const std::string& p) const {
    const bool has_acp = spec.kind == BlockKind::kEnhanced || spec.kind == BlockKind::kAcpOnly;
    const bool has_cat = spec.kind == BlockKind::kEnhanced || spec.kind == BlockKind::kCatOnly;
    if (has_acp) acp.params(out, p + ".acp");
    if (has_cat) {
      ln_in.params(out, p + ".ln_in");
      cat.params(out, p + ".cat");
    }
    ln1.params(out, p + ".ln1");
    attn.params(out, p + ".attn");
    ln2.params(out, p + ".ln2");
    mlp.params(out, p + ".mlp");
  }
};

struct StageConfig {
  int dim = 0;
  int blocks = 0;
};

struct ModelConfig {
  int image_size = 32;
  int in_channels = 3;
  int patch_size = 4;
  int num_classes = 3;
  int heads = 4;
  double mlp_ratio = 4.0;
  bool qkv_bias = true;
  BlockKind kind = BlockKind::kEnhanced;
  std::vector<StageConfig> stages{{16, 2}, {32, 2}};
  int n_lpu = 2;
  int n_concepts = 16;
  ConceptMode concept_mode = ConceptMode::kIndependent;
  AlphaMode alpha_mode = AlphaMode::kPositional;

  void validate() const {
    if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
      throw ConfigError("model: patch size must divide image size");
    if (stages.empty()) throw ConfigError("model: at least one stage");
    int plane = image_size / patch_size;
    for (const auto& s : stages) {
      if (s.dim < 1 || s.blocks < 1) throw ConfigError("model: bad stage");
      if (s.dim % heads != 0) throw ConfigError("model: stage dim not divisible by heads");
      if (plane < 1) throw ConfigError("model: too many stages for the image");
      plane /= 2;
    }
    if (num_classes < 2) throw ConfigError("model: need at least two classes");
  }
};

template <typename T>
struct ModelOutput {
  Tensor<T> logits;  // (B,K)
  Tensor<T> boxes;   // (B,4) as cx,cy,w,h in [0,1] image fractions
};

template <typename T>
struct ModelTrace {
  std::vector<BlockTrace<T>> blocks;
};

template <typename T>
struct Model {
  ModelConfig cfg;
  Conv2dLayer<T> patch;
  Tensor<T> pos_emb;  // (N0,C0)
  std::vector<Block<T>> blocks;
  std::vector<int> block_stage;        // stage index per block
  std::vector<Conv2dLayer<T>> merges;  // stage s -> s+1 downsampling
  LayerNormLayer<T> ln_f;
  LinearLayer<T> cls_head, box_head;

  Model() = default;
  Model(ModelConfig c, Rng& rng) : cfg(c) {
    cfg.validate();
    const int g0 = cfg.image_size / cfg.patch_size;
    patch = Conv2dLayer<T>(cfg.stages[0].dim, cfg.in_channels, cfg.patch_size, cfg.patch_size, 0,
                           rng);
    pos_emb = Tensor<T>({g0 * g0, cfg.stages[0].dim});
    fill_normal(pos_emb, rng, 0.0, 0.02);
    pos_emb.set_requires_grad(true);
    int plane = g0;
    for (size_t s = 0; s < cfg.stages.size(); ++s) {
      for (int b = 0; b < cfg.stages[s].blocks; ++b) {
        BlockSpec bs;
        bs.kind = cfg.kind;
        bs.dim = cfg.stages[s].dim;
        bs.h = bs.w = plane;
        bs.heads = cfg.heads;
        bs.mlp_ratio = cfg.mlp_ratio;
        bs.qkv_bias = cfg.qkv_bias;
        bs.n_lpu = cfg.n_lpu;
        bs.n_concepts = cfg.n_concepts;
        bs.concept_mode = cfg.concept_mode;
        bs.alpha_mode = cfg.alpha_mode;
        blocks.emplace_back(bs, rng);
        block_stage.push_back(static_cast<int>(s));
      }
      if (s + 1 < cfg.stages.size()) {
        merges.emplace_back(cfg.stages[s + 1].dim, cfg.stages[s].dim, 2, 2, 0, rng);
        plane /= 2;
      }
    }
    const int cf = cfg.stages.back().dim;
    ln_f = LayerNormLayer<T>(cf);
    cls_head = LinearLayer<T>(cfg.num_classes, cf, rng);
    box_head = LinearLayer<T>(4, cf, rng);
  }

  ModelOutput<T> forward(const Tensor<T>& images, ModelTrace<T>* trace = nullptr) const {
    if (images.rank() != 4 || images.dim(1) != cfg.in_channels ||
        images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size)
      throw ShapeError("model: input must be (B," + std::to_string(cfg.in_channels) + "," +
                       std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                       ")");
    auto x = to_tokens(patch.forward(images));
    x = add_param(x, pos_emb);
    int plane = cfg.image_size / cfg.patch_size;
    int stage = 0;
    for (size_t i = 0; i < blocks.size(); ++i) {
      if (block_stage[i] != stage) {
        auto img = from_tokens(x, plane, plane);
        x = to_tokens(merges[static_cast<size_t>(stage)].forward(img));
        plane /= 2;
        stage = block_stage[i];
      }
      if (trace) {
        trace->blocks.emplace_back();
        x = blocks[i].forward(x, &trace->blocks.back());
      } else {
        x = blocks[i].forward(x);
      }
    }
    auto pooled = avgpool_spatial(from_tokens(ln_f.forward(x), plane, plane));
    ModelOutput<T> out;
    out.logits = cls_head.forward(pooled);
    out.boxes = sigmoid(box_head.forward(pooled));
    return out;
  }

  void params(NamedParams<T>& out) const {
    out.emplace_back("patch.w", patch.w);
    out.emplace_back("patch.b", patch.b);
    out.emplace_back("pos_emb", pos_emb);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].params(out, "block" + std::to_string(i));
    for (size_t m = 0; m < merges.size(); ++m)
      merges[m].params(out, "merge" + std::to_string(m));
    ln_f.params(out, "ln_f");
    cls_head.params(out, "cls");
    box_head.params(out, "box");
  }

  int64_t count_params() const {
    NamedParams<T> ps;
    params(ps);
    int64_t n = 0;
    for (const auto& [name, t] : ps) n += t.numel();
    return n;
  }
};

}  // namespace eit
