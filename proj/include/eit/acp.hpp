#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "eit/nn.hpp"

// Aggressive convolutional pooling. A pyramid over the input feature map:
// each level refines with a local perception unit (depthwise 3x3 + residual),
// downscales with conv3x3 (doubling channels), relu and ceil-mode maxpool,
// then climbs back to input resolution through upsample+conv blocks that
// halve channels. The output is a sum of 1x1 projections: one of the input
// itself and one per level, so the whole aggregation stays a single linear
// map over the stack of per-level features.

namespace eit {

struct AcpConfig {
  int channels = 0;
  int n_lpu = 0;  // pyramid depth; bounded by log2(min(H,W)) at forward time

  void validate() const {
    if (channels < 1) throw ConfigError("acp: channels must be >= 1");
    if (n_lpu < 0) throw ConfigError("acp: n_lpu must be >= 0");
  }
};

inline int acp_max_levels(int h, int w) {
  const int m = std::min(h, w);
  int lv = 0;
  while ((1 << (lv + 1)) <= m) ++lv;
  return lv;
}

template <typename T>
struct Acp {
  AcpConfig cfg;
  Conv2dLayer<T> f0;                        // 1x1 projection of the raw input
  std::vector<DepthwiseLayer<T>> lpu;       // level i: C*2^i channels
  std::vector<Conv2dLayer<T>> down;         // 3x3 C*2^i -> C*2^(i+1), pad 1
  std::vector<std::vector<Conv2dLayer<T>>> up;  // level i: i+1 halving blocks
  std::vector<Conv2dLayer<T>> proj;         // 1x1 C -> C per level

  Acp() = default;
  Acp(AcpConfig cfg_, Rng& rng) : cfg(cfg_) {
    cfg.validate();
    const int C = cfg.channels;
    f0 = Conv2dLayer<T>(C, C, 1, 1, 0, rng);
    for (int i = 0; i < cfg.n_lpu; ++i) {
      const int ci = C << i;
      lpu.emplace_back(ci, 3, rng);
      down.emplace_back(2 * ci, ci, 3, 1, 1, rng);
      std::vector<Conv2dLayer<T>> blocks;
      for (int j = 0; j <= i; ++j) {
        const int cj = (2 * ci) >> j;  // 2C*2^i shrinking to 2C at the top
        blocks.emplace_back(cj / 2, cj, 3, 1, 1, rng);
      }
      up.push_back(std::move(blocks));
      proj.emplace_back(C, C, 1, 1, 0, rng);
    }
  }

  // pre, when given, collects the per-level features right before their 1x1
  // projection (already resized to the input plane)
  Tensor<T> forward(const Tensor<T>& x0, std::vector<Tensor<T>>* pre = nullptr) const {
    if (x0.rank() != 4 || x0.dim(1) != cfg.channels)
      throw ShapeError("acp: input must be (B," + std::to_string(cfg.channels) + ",H,W)");
    const int H = x0.dim(2), W = x0.dim(3);
    if (cfg.n_lpu > acp_max_levels(H, W))
      throw ConfigError("acp: n_lpu=" + std::to_string(cfg.n_lpu) + " exceeds log2(min(" +
                        std::to_string(H) + "," + std::to_string(W) + "))");
    auto out = f0.forward(x0);
    auto x = x0;
    for (int i = 0; i < cfg.n_lpu; ++i) {
      x = add(lpu[static_cast<size_t>(i)].forward(x), x);
      x = maxpool2d(relu(down[static_cast<size_t>(i)].forward(x)));
      auto y = x;
      for (const auto& blk : up[static_cast<size_t>(i)])
        y = relu(blk.forward(upsample_nearest2x(y)));
      y = resize_nearest(y, H, W);
      if (pre) pre->push_back(y);
      out = add(out, proj[static_cast<size_t>(i)].forward(y));
    }
    return out;
  }

  void params(NamedParams<T>& out, const std::string& p) const {
    f0.params(out, p + ".f0");
    for (size_t i = 0; i < lpu.size(); ++i) {
      const auto si = std::to_string(i);
      lpu[i].params(out, p + ".lpu" + si);
      down[i].params(out, p + ".down" + si);
      for (size_t j = 0; j < up[i].size(); ++j)
        up[i][j].params(out, p + ".up" + si + "_" + std::to_string(j));
      proj[i].params(out, p + ".proj" + si);
    }
  }
};

struct ProbeResult {
  int64_t active_pixels = 0;
  int64_t total_pixels = 0;
  double fraction = 0.0;
};

// Receptive-field probe: strictly positive weights, zero biases and a
// positive input keep every relu active and every path contribution
// positive, so the nonzero-gradient mask of the input under a single center
// output pixel equals exact reachability.
template <typename T>
ProbeResult receptive_field_probe(int n_lpu, int h, int w, int channels = 4,
                                  uint64_t seed = 0) {
  Rng rng(seed);
  Acp<T> acp(AcpConfig{channels, n_lpu}, rng);
  NamedParams<T> ps;
  acp.params(ps, "acp");
  for (auto& [name, t] : ps) {
    const bool is_weight = name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
    for (int64_t i = 0; i < t.numel(); ++i)
      t.data()[i] = is_weight ? std::abs(t.data()[i]) + T(0.01) : T(0);
  }
  Tensor<T> x({1, channels, h, w});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<T>(rng.uniform(0.5, 1.5));
  x.set_requires_grad(true);

  Tensor<T> mask({1, channels, h, w});
  for (int c = 0; c < channels; ++c)
    mask.data()[(static_cast<int64_t>(c) * h + h / 2) * w + w / 2] = T(1);

  Tape<T> tape;
  auto loss = sum(mul(acp.forward(x), mask));
  tape.backward(loss);

  ProbeResult r;
  r.total_pixels = static_cast<int64_t>(h) * w;
  const T* g = x.grad();
  for (int64_t p = 0; p < r.total_pixels; ++p) {
    bool any = false;
    for (int c = 0; c < channels && !any; ++c)
      any = g[static_cast<int64_t>(c) * r.total_pixels + p] != T(0);
    if (any) ++r.active_pixels;
  }
  r.fraction = static_cast<double>(r.active_pixels) / static_cast<double>(r.total_pixels);
  return r;
}

}  // namespace eit
