#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "eit/checkpoint.hpp"
#include "eit/config.hpp"
#include "eit/data.hpp"
#include "eit/optim.hpp"
#include "eit/transformer.hpp"

// Training loop, toy detection metrics, and model/optimizer snapshots.
// Everything is seeded explicitly: batch order and augmentation draws derive
// from (seed, step), so a resumed run sees exactly the batches the original
// would have.

namespace eit {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double lr = 3e-4;
  int eval_every = 200;
  double box_weight = 1.0;
  uint64_t seed = 0;
};

struct DataConfig {
  int train_n = 500;
  int test_n = 100;
  double difficulty = 0.3;
  uint64_t data_seed = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  PreprocessConfig pre;
};

inline RunConfig parse_run_config(const Config& c, uint64_t seed) {
  RunConfig rc;
  rc.model.kind = block_kind_from(c.get_str("kind", "enhanced"));
  rc.model.image_size = c.get_int("image_size", 32);
  rc.model.patch_size = c.get_int("patch_size", 4);
  rc.model.num_classes = c.get_int("num_classes", 3);
  rc.model.heads = c.get_int("heads", 4);
  rc.model.mlp_ratio = c.get_double("mlp_ratio", 4.0);
  rc.model.qkv_bias = c.get_bool("qkv_bias", true);
  const auto dims = c.get_int_list("stage_dims", {16, 32});
  const auto blocks = c.get_int_list("stage_blocks", {2, 2});
  if (dims.size() != blocks.size())
    throw ConfigError("config: stage_dims and stage_blocks lengths differ");
  rc.model.stages.clear();
  for (size_t i = 0; i < dims.size(); ++i)
    rc.model.stages.push_back({dims[i], blocks[i]});
  rc.model.n_lpu = c.get_int("n_lpu", 2);
  rc.model.n_concepts = c.get_int("n_concepts", 16);
  const std::string cm = c.get_str("concept_mode", "independent");
  if (cm != "independent" && cm != "dependent")
    throw ConfigError("config: concept_mode must be independent|dependent");
  rc.model.concept_mode = cm == "independent" ? ConceptMode::kIndependent : ConceptMode::kDependent;
  const std::string am = c.get_str("alpha_mode", "positional");
  if (am != "positional" && am != "feature")
    throw ConfigError("config: alpha_mode must be positional|feature");
  rc.model.alpha_mode = am == "positional" ? AlphaMode::kPositional : AlphaMode::kFeature;

  rc.train.steps = c.get_int("steps", 2000);
  rc.train.batch_size = c.get_int("batch_size", 16);
  rc.train.lr = c.get_double("lr", 3e-4);
  rc.train.eval_every = c.get_int("eval_every", 200);
  rc.train.box_weight = c.get_double("box_weight", 1.0);
  rc.train.seed = seed;
  if (rc.train.steps < 1 || rc.train.batch_size < 1 || rc.train.eval_every < 1)
    throw ConfigError("config: steps, batch_size, eval_every must be positive");
  if (rc.train.lr <= 0.0) throw ConfigError("config: lr must be positive");

  rc.data.train_n = c.get_int("train_n", 500);
  rc.data.test_n = c.get_int("test_n", 100);
  rc.data.difficulty = c.get_double("difficulty", 0.3);
  const std::string ds = c.get_str("data_seed", "");
  if (ds.empty()) {
    rc.data.data_seed = seed;
  } else {
    try {
      rc.data.data_seed = std::stoull(ds);
    } catch (const std::exception&) {
      throw ConfigError("config: data_seed expects an unsigned integer, got '" + ds + "'");
    }
  }
  if (rc.data.train_n < 1 || rc.data.test_n < 1)
    throw ConfigError("config: train_n and test_n must be positive");

  rc.pre.crop = rc.model.image_size;
  rc.pre.flip_prob = c.get_double("flip_prob", rc.pre.flip_prob);
  rc.pre.ratio_lo = c.get_double("ratio_lo", rc.pre.ratio_lo);
  rc.pre.ratio_hi = c.get_double("ratio_hi", rc.pre.ratio_hi);
  rc.pre.validate();
  rc.model.validate();
  return rc;
}

// resolved key=value form; parse_run_config(from_text(...)) round-trips it,
// which is how checkpoints rebuild their model
inline std::string serialize_run_config(const RunConfig& rc) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  ss << "kind = " << block_kind_name(rc.model.kind) << "\n";
  ss << "image_size = " << rc.model.image_size << "\n";
  ss << "patch_size = " << rc.model.patch_size << "\n";
  ss << "num_classes = " << rc.model.num_classes << "\n";
  ss << "heads = " << rc.model.heads << "\n";
  ss << "mlp_ratio = " << rc.model.mlp_ratio << "\n";
  ss << "qkv_bias = " << (rc.model.qkv_bias ? "true" : "false") << "\n";
  ss << "stage_dims = ";
  for (size_t i = 0; i < rc.model.stages.size(); ++i)
    ss << (i ? "," : "") << rc.model.stages[i].dim;
  ss << "\nstage_blocks = ";
  for (size_t i = 0; i < rc.model.stages.size(); ++i)
    ss << (i ? "," : "") << rc.model.stages[i].blocks;
  ss << "\nn_lpu = " << rc.model.n_lpu << "\n";
  ss << "n_concepts = " << rc.model.n_concepts << "\n";
  ss << "concept_mode = "
     << (rc.model.concept_mode == ConceptMode::kIndependent ? "independent" : "dependent")
     << "\n";
  ss << "alpha_mode = "
     << (rc.model.alpha_mode == AlphaMode::kPositional ? "positional" : "feature") << "\n";
  ss << "steps = " << rc.train.steps << "\n";
  ss << "batch_size = " << rc.train.batch_size << "\n";
  ss << "lr = " << rc.train.lr << "\n";
  ss << "eval_every = " << rc.train.eval_every << "\n";
  ss << "box_weight = " << rc.train.box_weight << "\n";
  ss << "train_n = " << rc.data.train_n << "\n";
  ss << "test_n = " << rc.data.test_n << "\n";
  ss << "difficulty = " << rc.data.difficulty << "\n";
  ss << "data_seed = " << rc.data.data_seed << "\n";
  ss << "flip_prob = " << rc.pre.flip_prob << "\n";
  ss << "ratio_lo = " << rc.pre.ratio_lo << "\n";
  ss << "ratio_hi = " << rc.pre.ratio_hi << "\n";
  return ss.str();
}

// train split from data_seed, test split from a fixed derivation of it
inline std::pair<std::vector<Sample>, std::vector<Sample>> make_splits(const RunConfig& rc) {
  auto train = gen_concealed_shapes(rc.data.train_n, rc.model.image_size, rc.model.image_size,
                                    rc.data.difficulty, rc.data.data_seed);
  auto test = gen_concealed_shapes(rc.data.test_n, rc.model.image_size, rc.model.image_size,
                                   rc.data.difficulty, Rng::derive(rc.data.data_seed, 0xEE));
  return {std::move(train), std::move(test)};
}

inline double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double ax0 = a[0] - a[2] / 2, ax1 = a[0] + a[2] / 2;
  const double ay0 = a[1] - a[3] / 2, ay1 = a[1] + a[3] / 2;
  const double bx0 = b[0] - b[2] / 2, bx1 = b[0] + b[2] / 2;
  const double by0 = b[1] - b[3] / 2, by1 = b[1] + b[3] / 2;
  const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct MetricsRecord {
  int64_t step = 0;
  double loss = 0, accuracy = 0, mean_iou = 0, ap50 = 0, ap75 = 0, ar = 0;
};

// single-box scoring: AP@t needs the class right AND IoU >= t; recall over
// the 0.50:0.95:0.05 ladder depends on the box alone
struct EvalTally {
  int n = 0, correct = 0, hit50 = 0, hit75 = 0;
  double iou_sum = 0, ar_sum = 0, loss_sum = 0;

  void add(bool cls_ok, double iou) {
    ++n;
    correct += cls_ok ? 1 : 0;
    iou_sum += iou;
    hit50 += (cls_ok && iou >= 0.5) ? 1 : 0;
    hit75 += (cls_ok && iou >= 0.75) ? 1 : 0;
    int hits = 0;
    for (int t = 0; t < 10; ++t) hits += iou >= 0.5 + 0.05 * t ? 1 : 0;
    ar_sum += hits / 10.0;
  }

  MetricsRecord finish() const {
    if (n == 0) throw ConfigError("metrics: nothing tallied");
    MetricsRecord m;
    m.loss = loss_sum / n;
    m.accuracy = static_cast<double>(correct) / n;
    m.mean_iou = iou_sum / n;
    m.ap50 = static_cast<double>(hit50) / n;
    m.ap75 = static_cast<double>(hit75) / n;
    m.ar = ar_sum / n;
    return m;
  }
};

inline std::string metrics_csv_header() { return "step,loss,accuracy,mean_iou,ap50,ap75,ar"; }

inline std::string metrics_csv_row(const MetricsRecord& m) {
  std::ostringstream ss;
  ss << m.step << std::setprecision(17) << "," << m.loss << "," << m.accuracy << ","
     << m.mean_iou << "," << m.ap50 << "," << m.ap75 << "," << m.ar;
  return ss.str();
}

template <typename T>
struct Batch {
  Tensor<T> images;    // (B,3,h,w)
  std::vector<int> labels;
  Tensor<T> boxes;     // (B,4), zero rows where the box was dropped
  Tensor<T> box_mask;  // (B,4) of 0/1
  int n_valid = 0;
};

template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<int>& idx,
                    const PreprocessConfig& pre, bool train, uint64_t seed) {
  if (idx.empty()) throw ConfigError("make_batch: empty index list");
  const int B = static_cast<int>(idx.size());
  Batch<T> b;
  b.labels.resize(static_cast<size_t>(B));
  b.boxes = Tensor<T>::zeros({B, 4});
  b.box_mask = Tensor<T>::zeros({B, 4});
  for (int i = 0; i < B; ++i) {
    const Sample& s = samples[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    auto p = preprocess(s, pre, train, Rng::derive(seed, static_cast<uint64_t>(i)));
    if (i == 0) b.images = Tensor<T>({B, 3, p.image.dim(1), p.image.dim(2)});
    for (int64_t q = 0; q < p.image.numel(); ++q)
      b.images.data()[p.image.numel() * i + q] = static_cast<T>(p.image.data()[q]);
    b.labels[static_cast<size_t>(i)] = p.label;
    if (p.has_box) {
      ++b.n_valid;
      for (int k = 0; k < 4; ++k) {
        b.boxes.data()[i * 4 + k] = static_cast<T>(p.box[static_cast<size_t>(k)]);
        b.box_mask.data()[i * 4 + k] = static_cast<T>(1);
      }
    }
  }
  return b;
}

// cross-entropy plus masked L1 over the samples that kept a box
template <typename T>
Tensor<T> detection_loss(const ModelOutput<T>& out, const Batch<T>& batch, double box_weight) {
  auto loss = cross_entropy(out.logits, batch.labels);
  if (batch.n_valid > 0 && box_weight != 0.0) {
    const int B = batch.boxes.dim(0);
    auto masked_pred = mul(out.boxes, batch.box_mask);
    // l1_loss averages over B*4 entries; rescale to a per-valid-box mean
    auto l1 = l1_loss(masked_pred, batch.boxes);
    loss = add(loss, scale(l1, static_cast<T>(box_weight * B / batch.n_valid)));
  }
  return loss;
}

template <typename T>
MetricsRecord evaluate(Model<T>& model, const std::vector<Sample>& test_set,
                       const PreprocessConfig& pre, int batch_size = 25) {
  if (test_set.empty()) throw ConfigError("evaluate: empty test set");
  EvalTally tally;
  const int n = static_cast<int>(test_set.size());
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    auto batch = make_batch<T>(test_set, idx, pre, false, 0);
    auto out = model.forward(batch.images);
    tally.loss_sum += static_cast<double>(detection_loss(out, batch, 1.0).item()) *
                      static_cast<double>(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      const T* lg = out.logits.data() + static_cast<int64_t>(i) * model.cfg.num_classes;
      int arg = 0;
      for (int k = 1; k < model.cfg.num_classes; ++k)
        if (lg[k] > lg[arg]) arg = k;
      std::array<double, 4> pred{}, gt{};
      for (int k = 0; k < 4; ++k) {
        pred[static_cast<size_t>(k)] = static_cast<double>(out.boxes.data()[i * 4 + k]);
        gt[static_cast<size_t>(k)] = static_cast<double>(batch.boxes.data()[i * 4 + k]);
      }
      tally.add(arg == batch.labels[i], box_iou(pred, gt));
    }
  }
  return tally.finish();
}

// model parameters, optimizer moments, and the step counter in one file
template <typename T>
TensorFile<T> snapshot(const Model<T>& model, Adam<T>& opt, uint64_t step,
                       const std::string& config_echo) {
  TensorFile<T> file;
  file.step = step;
  file.config = config_echo;
  NamedParams<T> ps;
  model.params(ps);
  for (auto& p : ps) file.entries.emplace_back(p.first, p.second);
  for (size_t i = 0; i < opt.size(); ++i) {
    const int n1 = static_cast<int>(opt.moment1(i).size());
    file.entries.emplace_back("adam.m." + opt.name(i),
                              Tensor<T>::from_data({n1}, opt.moment1(i)));
    file.entries.emplace_back("adam.v." + opt.name(i),
                              Tensor<T>::from_data({n1}, opt.moment2(i)));
  }
  auto steps = Tensor<T>::zeros({1});
  steps.data()[0] = static_cast<T>(opt.steps());
  file.entries.emplace_back("adam.steps", steps);
  return file;
}

template <typename T>
void restore(Model<T>& model, Adam<T>& opt, const TensorFile<T>& file) {
  NamedParams<T> ps;
  model.params(ps);
  auto copy_into = [](const Tensor<T>& src, Tensor<T> dst, const std::string& name) {
    if (src.shape() != dst.shape())
      throw ShapeError("restore: shape mismatch for " + name + ": stored " +
                       shape_str(src.shape()) + " vs model " + shape_str(dst.shape()));
    for (int64_t i = 0; i < src.numel(); ++i) dst.data()[i] = src.data()[i];
  };
  for (auto& p : ps) {
    const Tensor<T>* src = file.find(p.first);
    if (!src) throw ConfigError("restore: checkpoint lacks tensor " + p.first);
    copy_into(*src, p.second, p.first);
  }
  for (size_t i = 0; i < opt.size(); ++i) {
    const Tensor<T>* m1 = file.find("adam.m." + opt.name(i));
    const Tensor<T>* m2 = file.find("adam.v." + opt.name(i));
    if (!m1 || !m2) throw ConfigError("restore: checkpoint lacks moments for " + opt.name(i));
    if (m1->numel() != static_cast<int64_t>(opt.moment1(i).size()))
      throw ShapeError("restore: moment size mismatch for " + opt.name(i));
    for (int64_t p = 0; p < m1->numel(); ++p) {
      opt.moment1(i)[static_cast<size_t>(p)] = m1->data()[p];
      opt.moment2(i)[static_cast<size_t>(p)] = m2->data()[p];
    }
  }
  const Tensor<T>* st = file.find("adam.steps");
  if (!st) throw ConfigError("restore: checkpoint lacks adam.steps");
  opt.set_steps(static_cast<int64_t>(st->data()[0]));
}

struct TrainResult {
  MetricsRecord final_metrics;
  std::vector<std::string> csv_lines;  // header + one row per eval
  int64_t steps_done = 0;
};

// trains from start_step to cfg.steps; deterministic given (seed, start_step)
template <typename T>
TrainResult train_model(Model<T>& model, Adam<T>& opt, const RunConfig& rc,
                        const std::vector<Sample>& train_set,
                        const std::vector<Sample>& test_set, int64_t start_step = 0,
                        std::ostream* progress = nullptr) {
  if (train_set.empty()) throw ConfigError("train: empty training set");
  TrainResult res;
  res.csv_lines.push_back(metrics_csv_header());
  const int B = rc.train.batch_size;
  for (int64_t step = start_step; step < rc.train.steps; ++step) {
    Rng pick(Rng::derive(rc.train.seed, 0x5A5A0000ull + static_cast<uint64_t>(step)));
    std::vector<int> idx(static_cast<size_t>(B));
    for (auto& i : idx) i = static_cast<int>(pick.uniform_int(static_cast<int64_t>(train_set.size())));
    const uint64_t aug_seed = Rng::derive(rc.train.seed, 0xA060000ull + static_cast<uint64_t>(step));
    auto batch = make_batch<T>(train_set, idx, rc.pre, true, aug_seed);
    double loss_val = 0;
    try {
      Tape<T> tape;
      auto out = model.forward(batch.images);
      auto loss = detection_loss(out, batch, rc.train.box_weight);
      loss_val = static_cast<double>(loss.item());
      if (!std::isfinite(loss_val)) throw NumericError("non-finite loss");
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    } catch (const NumericError& e) {
      throw NumericError(std::string("training diverged at step ") + std::to_string(step) +
                         ": " + e.what());
    }
    const bool last = step + 1 == rc.train.steps;
    if ((step + 1) % rc.train.eval_every == 0 || last) {
      auto m = evaluate(model, test_set, rc.pre);
      m.step = step + 1;
      res.csv_lines.push_back(metrics_csv_row(m));
      if (last) res.final_metrics = m;
      if (progress)
        (*progress) << "step " << m.step << " loss " << m.loss << " acc " << m.accuracy
                    << " iou " << m.mean_iou << "\n";
    }
    res.steps_done = step + 1;
  }
  if (res.final_metrics.step == 0 && !test_set.empty()) {
    auto m = evaluate(model, test_set, rc.pre);
    m.step = res.steps_done;
    res.final_metrics = m;
  }
  return res;
}

}  // namespace eit
