#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "eit/train.hpp"

// Ablation sweeps: pyramid depth, concept count, and module isolation. Every
// requested value gets a table row; a configuration the geometry rejects is
// kept as a failed row with the reason, never silently dropped.

namespace eit {

struct AblationRow {
  std::string label;
  double value = 0;
  bool ok = false;
  int64_t params = 0;
  MetricsRecord metrics;
  std::string note;
};

inline std::string ablation_csv_header() {
  return "label,value,status,params,accuracy,mean_iou,ap50,ap75,ar,note";
}

inline std::string ablation_csv_row(const AblationRow& r) {
  std::string note = r.note;
  for (auto& ch : note)
    if (ch == ',' || ch == '\n') ch = ';';
  std::ostringstream ss;
  ss << r.label << "," << std::setprecision(17) << r.value << "," << (r.ok ? "ok" : "failed")
     << "," << r.params << "," << r.metrics.accuracy << "," << r.metrics.mean_iou << ","
     << r.metrics.ap50 << "," << r.metrics.ap75 << "," << r.metrics.ar << "," << note;
  return ss.str();
}

template <typename T>
AblationRow run_ablation_row(const RunConfig& rc, const std::string& label, double value,
                             const std::vector<Sample>& train_set,
                             const std::vector<Sample>& test_set, std::ostream* progress) {
  AblationRow row;
  row.label = label;
  row.value = value;
  try {
    Rng rng(rc.train.seed);
    Model<T> model(rc.model, rng);
    row.params = model.count_params();
    NamedParams<T> ps;
    model.params(ps);
    Adam<T> opt(ps, static_cast<T>(rc.train.lr));
    auto res = train_model(model, opt, rc, train_set, test_set, 0, progress);
    row.metrics = res.final_metrics;
    row.ok = true;
  } catch (const std::runtime_error& e) {
    row.note = e.what();
  }
  return row;
}

template <typename T>
std::vector<AblationRow> ablate_acp(const RunConfig& base, const std::vector<int>& n_lpu_values,
                                    const std::vector<Sample>& train_set,
                                    const std::vector<Sample>& test_set,
                                    std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  for (int v : n_lpu_values) {
    RunConfig rc = base;
    rc.model.n_lpu = v;
    rows.push_back(run_ablation_row<T>(rc, "n_lpu", v, train_set, test_set, progress));
  }
  return rows;
}

template <typename T>
std::vector<AblationRow> ablate_cat(const RunConfig& base, const std::vector<int>& l_values,
                                    const std::vector<Sample>& train_set,
                                    const std::vector<Sample>& test_set,
                                    std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  for (int v : l_values) {
    RunConfig rc = base;
    rc.model.n_concepts = v;
    rows.push_back(run_ablation_row<T>(rc, "n_concepts", v, train_set, test_set, progress));
  }
  return rows;
}

template <typename T>
std::vector<AblationRow> ablate_isolation(const RunConfig& base,
                                          const std::vector<Sample>& train_set,
                                          const std::vector<Sample>& test_set,
                                          std::ostream* progress = nullptr) {
  const BlockKind kinds[4] = {BlockKind::kBaseline, BlockKind::kAcpOnly, BlockKind::kCatOnly,
                              BlockKind::kEnhanced};
  std::vector<AblationRow> rows;
  for (int i = 0; i < 4; ++i) {
    RunConfig rc = base;
    rc.model.kind = kinds[i];
    rows.push_back(
        run_ablation_row<T>(rc, block_kind_name(kinds[i]), i, train_set, test_set, progress));
  }
  return rows;
}

// widen a baseline until its parameter count best matches the enhanced model;
// keeps the stage-dim ratios and the head count's divisibility
inline ModelConfig match_baseline_width(const ModelConfig& enhanced) {
  Rng rng(0);
  ModelConfig probe = enhanced;
  const int64_t target = Model<float>(probe, rng).count_params();
  ModelConfig best;
  int64_t best_gap = -1;
  for (int mult = 0; mult <= 12; ++mult) {
    ModelConfig cand = enhanced;
    cand.kind = BlockKind::kBaseline;
    for (auto& st : cand.stages) {
      const int scaled = st.dim * (4 + mult) / 4;  // quarter-width increments
      st.dim = (scaled / cand.heads) * cand.heads;
    }
    Rng r2(0);
    const int64_t params = Model<float>(cand, r2).count_params();
    const int64_t gap = params > target ? params - target : target - params;
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best = cand;
    }
  }
  return best;
}

}  // namespace eit
