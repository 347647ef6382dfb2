#pragma once

#include <string>
#include <vector>

#include "eit/acp.hpp"
#include "eit/nn.hpp"

// Conceptual attention transformation. A small set of learned concepts
// attends over the spatial positions of a positionally mixed feature map;
// pooled concept vectors are redistributed back to positions through a
// flow matrix, and the result gates a linear update of the input tokens.

namespace eit {

enum class ConceptMode { kIndependent, kDependent };
enum class AlphaMode { kPositional, kFeature };

struct CatConfig {
  int channels = 0;
  int n_concepts = 0;
  int h = 0, w = 0;  // the spatial plane this block is built for
  ConceptMode concept_mode = ConceptMode::kIndependent;
  AlphaMode alpha_mode = AlphaMode::kPositional;
  int alpha_acp_n_lpu = 1;  // depth of the feature-mode offset pyramid

  void validate() const {
    if (channels < 1) throw ConfigError("cat: channels must be >= 1");
    if (n_concepts < 1) throw ConfigError("cat: n_concepts must be >= 1");
    if (h < 1 || w < 1) throw ConfigError("cat: plane must be positive");
    if (alpha_mode == AlphaMode::kFeature && alpha_acp_n_lpu > acp_max_levels(h, w))
      throw ConfigError("cat: alpha pyramid deeper than the plane allows");
  }
};

template <typename T>
struct CatTrace {
  Tensor<T> x_p;   // (B,C,HW) positional-mixed features
  Tensor<T> attn;  // (B,L,HW) concept-over-space attention, rows stochastic
  Tensor<T> t_c;   // (B,L,C) pooled concept vectors
};

template <typename T>
struct Cat {
  CatConfig cfg;
  Tensor<T> pe;             // (C,H,W), zero-init
  Conv2dLayer<T> pos_conv;  // 3x3 same
  Tensor<T> w_con;          // (C,L), orthonormal columns (independent mode)
  Conv2dLayer<T> dyn_c1, dyn_c2;  // dependent mode extractor
  LinearLayer<T> dyn_fc;          // C -> C*L
  Tensor<T> alpha_pos;            // (L,HW), zero-init (positional mode)
  Acp<T> alpha_acp;               // feature mode offset pyramid
  Conv2dLayer<T> alpha_proj;      // 1x1 C -> L
  Tensor<T> w_flow;               // (L,L), identity-init
  LinearLayer<T> w_m, w_o;        // channel mixers, no bias

  Cat() = default;
  Cat(CatConfig cfg_, Rng& rng) : cfg(cfg_) {
    cfg.validate();
    const int C = cfg.channels, L = cfg.n_concepts;
    pe = Tensor<T>({C, cfg.h, cfg.w}, T(0), true);
    pos_conv = Conv2dLayer<T>(C, C, 3, 1, 1, rng);
    if (cfg.concept_mode == ConceptMode::kIndependent) {
      w_con = Tensor<T>({C, L});
      fill_orthogonal(w_con, rng);
      w_con.set_requires_grad(true);
    } else {
      dyn_c1 = Conv2dLayer<T>(C, C, 3, 1, 1, rng);
      dyn_c2 = Conv2dLayer<T>(C, C, 3, 1, 1, rng);
      dyn_fc = LinearLayer<T>(C * L, C, rng);
    }
    if (cfg.alpha_mode == AlphaMode::kPositional) {
      alpha_pos = Tensor<T>({L, cfg.h * cfg.w}, T(0), true);
    } else {
      alpha_acp = Acp<T>(AcpConfig{C, cfg.alpha_acp_n_lpu}, rng);
      alpha_proj = Conv2dLayer<T>(L, C, 1, 1, 0, rng);
    }
    w_flow = Tensor<T>({L, L});
    fill_identity(w_flow);
    w_flow.set_requires_grad(true);
    w_m = LinearLayer<T>(C, C, rng, false);
    w_o = LinearLayer<T>(C, C, rng, false);
  }

  // X_p = Conv3x3(X + PE), flattened to (B,C,HW)
  Tensor<T> positional_mix(const Tensor<T>& x) const {
    auto mixed = pos_conv.forward(add_param(x, pe));
    return reshape(mixed, {mixed.dim(0), mixed.dim(1), mixed.dim(2) * mixed.dim(3)});
  }

  // concept directions, transposed: (L,C) shared or (B,L,C) per sample
  Tensor<T> compute_concepts(const Tensor<T>& x_p_img) const {
    if (cfg.concept_mode == ConceptMode::kIndependent) return transpose_last2(w_con);
    auto h = maxpool2d(relu(dyn_c1.forward(x_p_img)));
    h = maxpool2d(relu(dyn_c2.forward(h)));
    auto pooled = avgpool_spatial(h);                  // (B,C)
    auto flat = dyn_fc.forward(pooled);                // (B,C*L)
    return reshape(flat, {flat.dim(0), cfg.n_concepts, cfg.channels});
  }

  // concepts x positions scores, softmax over positions
  Tensor<T> conceptual_attention(const Tensor<T>& w_con_t, const Tensor<T>& x_p) const {
    return softmax_lastdim(bmm(w_con_t, x_p));
  }

  // T_c = attn * X_p^T: each concept vector is a convex mix of positions
  Tensor<T> concept_pool(const Tensor<T>& attn, const Tensor<T>& x_p) const {
    return bmm(attn, transpose_last2(x_p));
  }

  // attn_mu = (W_flow (attn + alpha))^T : (B,HW,L)
  Tensor<T> backward_flow(const Tensor<T>& attn, const Tensor<T>& alpha) const {
    return transpose_last2(bmm(w_flow, add(attn, alpha)));
  }

  // X^g = W_o X + gelu(W_m (attn_mu T_c))
  Tensor<T> mix_and_update(const Tensor<T>& attn_mu, const Tensor<T>& t_c,
                           const Tensor<T>& x_tokens) const {
    auto phi = gelu(w_m.forward(bmm(attn_mu, t_c)));
    return add(w_o.forward(x_tokens), phi);
  }

  Tensor<T> alpha_offsets(const Tensor<T>& x_p_img, int batch) const {
    if (cfg.alpha_mode == AlphaMode::kPositional) {
      // broadcast the positional table over the batch via a zero carrier
      Tensor<T> zero({batch, cfg.n_concepts, cfg.h * cfg.w});
      return add_param(zero, alpha_pos);
    }
    auto field = alpha_proj.forward(alpha_acp.forward(x_p_img));  // (B,L,H,W)
    return reshape(field, {field.dim(0), cfg.n_concepts, cfg.h * cfg.w});
  }

  // input (B,C,H,W), output tokens (B,HW,C)
  Tensor<T> forward(const Tensor<T>& x, CatTrace<T>* trace = nullptr) const {
    if (x.rank() != 4 || x.dim(1) != cfg.channels || x.dim(2) != cfg.h || x.dim(3) != cfg.w)
      throw ShapeError("cat: input plane does not match the block configuration");
    auto x_p = positional_mix(x);  // (B,C,HW)
    auto x_p_img = reshape(x_p, {x.dim(0), cfg.channels, cfg.h, cfg.w});
    auto w_con_t = compute_concepts(x_p_img);
    auto attn = conceptual_attention(w_con_t, x_p);
    auto t_c = concept_pool(attn, x_p);
    auto alpha = alpha_offsets(x_p_img, x.dim(0));
    auto attn_mu = backward_flow(attn, alpha);
    auto x_tokens = to_tokens(x);
    if (trace) {
      trace->x_p = x_p;
      trace->attn = attn;
      trace->t_c = t_c;
    }
    return mix_and_update(attn_mu, t_c, x_tokens);
  }

  void params(NamedParams<T>& out, const std::string& p) const {
    out.emplace_back(p + ".pe", pe);
    pos_conv.params(out, p + ".pos");
    if (cfg.concept_mode == ConceptMode::kIndependent) {
      out.emplace_back(p + ".w_con", w_con);
    } else {
      dyn_c1.params(out, p + ".dyn1");
      dyn_c2.params(out, p + ".dyn2");
      dyn_fc.params(out, p + ".dynfc");
    }
    if (cfg.alpha_mode == AlphaMode::kPositional) {
      out.emplace_back(p + ".alpha", alpha_pos);
    } else {
      alpha_acp.params(out, p + ".alpha_acp");
      alpha_proj.params(out, p + ".alpha_proj");
    }
    out.emplace_back(p + ".w_flow", w_flow);
    w_m.params(out, p + ".w_m");
    w_o.params(out, p + ".w_o");
  }
};

}  // namespace eit
