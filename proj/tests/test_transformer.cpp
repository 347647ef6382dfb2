#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "eit/gradcheck.hpp"
#include "eit/optim.hpp"
#include "eit/transformer.hpp"

using eit::Block;
using eit::BlockKind;
using eit::BlockSpec;
using eit::Model;
using eit::ModelConfig;
using eit::Rng;
using eit::Tensor;
using D = Tensor<double>;

namespace {

ModelConfig tiny_cfg(BlockKind kind) {
  ModelConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 2;  // 4x4 grid, then 2x2 after the merge
  cfg.num_classes = 3;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.kind = kind;
  cfg.stages = {{4, 1}, {8, 1}};
  cfg.n_lpu = 1;
  cfg.n_concepts = 2;
  return cfg;
}

D rand_images(int b, int s, Rng& rng) {
  D x({b, 3, s, s});
  eit::fill_smooth(x, rng);
  return x;
}

}  // namespace

TEST_CASE("model forward shapes for every block kind") {
  for (auto kind : {BlockKind::kBaseline, BlockKind::kEnhanced, BlockKind::kAcpOnly,
                    BlockKind::kCatOnly}) {
    Rng rng(7);
    Model<double> m(tiny_cfg(kind), rng);
    auto x = rand_images(2, 8, rng);
    eit::ModelTrace<double> tr;
    auto out = m.forward(x, &tr);
    REQUIRE(out.logits.shape() == eit::Shape{2, 3});
    REQUIRE(out.boxes.shape() == eit::Shape{2, 4});
    REQUIRE(tr.blocks.size() == 2);
    REQUIRE(tr.blocks[0].mhsa_attn.shape() == eit::Shape{4, 16, 16});
    const bool has_cat = kind == BlockKind::kEnhanced || kind == BlockKind::kCatOnly;
    REQUIRE(tr.blocks[0].cat_attn.defined() == has_cat);
    if (has_cat) REQUIRE(tr.blocks[0].cat_attn.shape() == eit::Shape{2, 2, 16});
  }
}

TEST_CASE("count_params is positive and grows with the enhanced front end") {
  Rng r1(1), r2(1);
  Model<double> base(tiny_cfg(BlockKind::kBaseline), r1);
  Model<double> enh(tiny_cfg(BlockKind::kEnhanced), r2);
  REQUIRE(base.count_params() > 0);
  REQUIRE(enh.count_params() > base.count_params());
  eit::NamedParams<double> ps;
  enh.params(ps);
  int64_t total = 0;
  for (auto& [n, t] : ps) total += t.numel();
  REQUIRE(total == enh.count_params());
}

TEST_CASE("baseline block is permutation equivariant, enhanced is not") {
  Rng rng(19);
  eit::BlockSpec bs;
  bs.kind = BlockKind::kBaseline;
  bs.dim = 4;
  bs.h = bs.w = 2;
  bs.heads = 2;
  bs.n_lpu = 1;
  bs.n_concepts = 2;
  eit::Block<double> base(bs, rng);
  bs.kind = BlockKind::kEnhanced;
  eit::Block<double> enh(bs, rng);

  D x({1, 4, 4});
  eit::fill_smooth(x, rng);
  const std::vector<int> perm{2, 0, 3, 1};
  D xp({1, 4, 4});
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 4; ++c) xp.data()[n * 4 + c] = x.data()[perm[n] * 4 + c];

  auto yb = base.forward(x);
  auto ybp = base.forward(xp);
  double base_gap = 0;
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 4; ++c)
      base_gap = std::max(base_gap,
                          std::abs(ybp.data()[n * 4 + c] - yb.data()[perm[n] * 4 + c]));
  REQUIRE(base_gap < 1e-12);

  auto ye = enh.forward(x);
  auto yep = enh.forward(xp);
  double enh_gap = 0;
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 4; ++c)
      enh_gap = std::max(enh_gap,
                         std::abs(yep.data()[n * 4 + c] - ye.data()[perm[n] * 4 + c]));
  REQUIRE(enh_gap > 1e-6);
}

TEST_CASE("two-block enhanced model gradients check end to end") {
  Rng rng(23);
  Model<double> m(tiny_cfg(BlockKind::kEnhanced), rng);
  auto x = rand_images(1, 8, rng);
  x.set_requires_grad(true);
  std::vector<int> labels{1};
  D target = D::from_data({1, 4}, {0.4, 0.5, 0.3, 0.2});

  std::vector<D> inputs{x};
  eit::NamedParams<double> ps;
  m.params(ps);
  for (auto& [n, t] : ps) inputs.push_back(t);

  // deep-graph conditioning: gentle loss scale, small step to stay clear of
  // relu/maxpool breakpoints inside the pyramid, fourth-order stencil against
  // truncation, wider floor so ~1e-10 gradients compare on absolute terms;
  // per-op checks above keep the tight defaults
  auto rep = eit::grad_check<double>(
      [&m, &labels, &target](std::vector<D>& in) {
        auto out = m.forward(in[0]);
        return eit::scale(eit::add(eit::cross_entropy(out.logits, labels),
                                   eit::l1_loss(out.boxes, target)),
                          0.1);
      },
      inputs, 1e-5, 4, 1e-6);
  INFO(rep.worst);
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("block kinds diverge on generic input with shared mhsa and mlp") {
  Rng rng(31);
  BlockSpec spec;
  spec.kind = BlockKind::kBaseline;
  spec.dim = 8;
  spec.h = spec.w = 4;
  spec.heads = 2;
  spec.mlp_ratio = 2.0;
  spec.n_lpu = 1;
  spec.n_concepts = 4;
  Block<double> base(spec, rng);
  spec.kind = BlockKind::kEnhanced;
  Block<double> enh(spec, rng);
  enh.attn = base.attn;
  enh.mlp = base.mlp;
  enh.ln1 = base.ln1;
  enh.ln2 = base.ln2;

  D x({2, 16, 8});
  eit::fill_normal(x, rng, 0.0, 1.0);
  auto yb = base.forward(x);
  auto ye = enh.forward(x);
  double gap = 0;
  for (int64_t i = 0; i < yb.numel(); ++i)
    gap = std::max(gap, std::abs(yb.data()[i] - ye.data()[i]));
  CHECK(gap > 1e-6);
}

TEST_CASE("tiny models overfit one batch") {
  const auto kind = GENERATE(BlockKind::kBaseline, BlockKind::kEnhanced);
  Rng rng(42);
  auto cfg = tiny_cfg(kind);
  Model<double> m(cfg, rng);
  auto x = rand_images(4, 8, rng);
  std::vector<int> labels{0, 1, 2, 0};
  D boxes = D::from_data({4, 4}, {0.5, 0.5, 0.4, 0.4,  //
                                  0.3, 0.3, 0.2, 0.2,  //
                                  0.7, 0.7, 0.3, 0.3,  //
                                  0.4, 0.6, 0.5, 0.3});
  eit::NamedParams<double> ps;
  m.params(ps);
  eit::Adam<double> opt(ps, 3e-3);
  double first = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    eit::Tape<double> tape;
    auto out = m.forward(x);
    auto loss = eit::add(eit::cross_entropy(out.logits, labels), eit::l1_loss(out.boxes, boxes));
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
    if (step == 0) first = loss.item();
    last = loss.item();
  }
  REQUIRE(last < 0.5 * first);
}
