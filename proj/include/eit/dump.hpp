#pragma once

#include <string>
#include <vector>

#include "eit/checkpoint.hpp"
#include "eit/train.hpp"

// Feature and attention dumps: one forward pass per requested sample with
// tracing on, every requested block's tokens stored as a (C,h,w) map plus
// per-head MHSA attention and, where the block has a CAT stage, the concept
// attention. Everything lands in the shared tensor-file container at 64-bit.

namespace eit {

inline std::string dump_feat_name(int stage, int block, int sample) {
  return "feat.stage" + std::to_string(stage) + ".block" + std::to_string(block) + ".sample" +
         std::to_string(sample);
}

template <typename T>
TensorFile<double> dump_traces(Model<T>& model, const std::vector<Sample>& data,
                               const std::vector<int>& sample_ids, std::vector<int> block_ids,
                               const PreprocessConfig& pre) {
  if (block_ids.empty())
    for (size_t j = 0; j < model.blocks.size(); ++j) block_ids.push_back(static_cast<int>(j));
  for (int j : block_ids)
    if (j < 0 || j >= static_cast<int>(model.blocks.size()))
      throw ConfigError("dump: block id " + std::to_string(j) + " out of range (model has " +
                        std::to_string(model.blocks.size()) + " blocks)");
  TensorFile<double> out;
  std::string cfg = "model blocks " + std::to_string(model.blocks.size()) + "\nblocks";
  for (int j : block_ids) cfg += " " + std::to_string(j);
  out.config = cfg + "\n";

  const int g0 = model.cfg.image_size / model.cfg.patch_size;
  for (int sid : sample_ids) {
    if (sid < 0 || sid >= static_cast<int>(data.size()))
      throw ConfigError("dump: sample id " + std::to_string(sid) + " out of range");
    auto batch = make_batch<T>(data, {sid}, pre, false, 0);
    ModelTrace<T> trace;
    model.forward(batch.images, &trace);
    for (int j : block_ids) {
      const auto& bt = trace.blocks[static_cast<size_t>(j)];
      const int stage = model.block_stage[static_cast<size_t>(j)];
      const int plane = g0 >> stage;
      const int N = plane * plane, C = bt.tokens.dim(2);

      Tensor<double> fmap({C, plane, plane});
      for (int c = 0; c < C; ++c)
        for (int p = 0; p < N; ++p)
          fmap.data()[static_cast<int64_t>(c) * N + p] =
              static_cast<double>(bt.tokens.data()[static_cast<int64_t>(p) * C + c]);
      out.entries.emplace_back(dump_feat_name(stage, j, sid), fmap);

      const int heads = model.cfg.heads;
      for (int h = 0; h < heads; ++h) {
        Tensor<double> attn({N, N});
        const T* src = bt.mhsa_attn.data() + static_cast<int64_t>(h) * N * N;
        for (int64_t p = 0; p < attn.numel(); ++p) attn.data()[p] = static_cast<double>(src[p]);
        out.entries.emplace_back("mhsa.stage" + std::to_string(stage) + ".block" +
                                     std::to_string(j) + ".head" + std::to_string(h) +
                                     ".sample" + std::to_string(sid),
                                 attn);
      }
      if (bt.cat_attn.defined()) {
        const int L = bt.cat_attn.dim(1), HW = bt.cat_attn.dim(2);
        Tensor<double> cattn({L, HW});
        for (int64_t p = 0; p < cattn.numel(); ++p)
          cattn.data()[p] = static_cast<double>(bt.cat_attn.data()[p]);
        out.entries.emplace_back("catattn.stage" + std::to_string(stage) + ".block" +
                                     std::to_string(j) + ".sample" + std::to_string(sid),
                                 cattn);
      }
    }
  }
  return out;
}

}  // namespace eit
