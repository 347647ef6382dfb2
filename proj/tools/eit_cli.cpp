// Command-line workbench: dataset generation, training, evaluation, the
// ablation sweeps, feature/attention dumps, and the analyses that read them.
// Exit codes: 0 success, 2 configuration problem, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eit/ablation.hpp"
#include "eit/analysis.hpp"
#include "eit/dump.hpp"
#include "eit/gradcheck_suite.hpp"
#include "eit/train.hpp"

namespace fs = std::filesystem;
using namespace eit;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << text;
}

Config load_config(const std::string& path) {
  return path.empty() ? Config() : Config::from_file(path);
}

struct Splits {
  std::vector<Sample> train, test;
};

Splits resolve_data(const RunConfig& rc, const std::string& data_dir) {
  Splits s;
  if (data_dir.empty()) {
    auto pair = make_splits(rc);
    s.train = std::move(pair.first);
    s.test = std::move(pair.second);
  } else {
    s.train = load_dataset(data_dir, "train");
    s.test = load_dataset(data_dir, "test");
  }
  return s;
}

// checkpoints carry their resolved config, so commands that read one rebuild
// the exact model
template <typename T>
struct LoadedModel {
  RunConfig rc;
  Model<T> model;
  Adam<T> opt;
  int64_t step;
};

template <typename T>
LoadedModel<T> load_model(const std::string& ckpt_path) {
  auto file = load_tensor_file<T>(ckpt_path);
  RunConfig rc = parse_run_config(Config::from_text(file.config), 0);
  Rng rng(0);
  Model<T> model(rc.model, rng);
  NamedParams<T> ps;
  model.params(ps);
  Adam<T> opt(ps, static_cast<T>(rc.train.lr));
  restore(model, opt, file);
  return {rc, std::move(model), std::move(opt), static_cast<int64_t>(file.step)};
}

std::string csv_join(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<std::string> lines{ablation_csv_header()};
  for (const auto& r : rows) lines.push_back(ablation_csv_row(r));
  return csv_join(lines);
}

// (H,W) map scaled to [0,1] for viewing; constant maps come out mid-gray
Tensor<double> view_scale(const Tensor<double>& m) {
  double lo = m.data()[0], hi = m.data()[0];
  for (int64_t i = 0; i < m.numel(); ++i) {
    lo = std::min(lo, m.data()[i]);
    hi = std::max(hi, m.data()[i]);
  }
  Tensor<double> out(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i)
    out.data()[i] = hi > lo ? (m.data()[i] - lo) / (hi - lo) : 0.5;
  return out;
}

int run_generate(const std::string& out_dir, int train_n, int test_n, int size,
                 double difficulty, uint64_t seed) {
  fs::create_directories(out_dir);
  RunConfig rc;
  rc.model.image_size = size;
  rc.data.train_n = train_n;
  rc.data.test_n = test_n;
  rc.data.difficulty = difficulty;
  rc.data.data_seed = seed;
  auto splits = make_splits(rc);
  save_dataset(out_dir, "train", splits.first);
  save_dataset(out_dir, "test", splits.second);
  std::cout << "wrote " << splits.first.size() << " train / " << splits.second.size()
            << " test samples (" << size << "x" << size << ", difficulty " << difficulty
            << ") to " << out_dir << "\n";
  return 0;
}

template <typename T>
int run_train(const Config& cfg, uint64_t seed, const std::string& out_dir,
              const std::string& data_dir, const std::string& resume) {
  RunConfig rc = parse_run_config(cfg, seed);
  cfg.reject_unknown();
  fs::create_directories(out_dir);
  auto splits = resolve_data(rc, data_dir);

  Rng rng(seed);
  Model<T> model(rc.model, rng);
  NamedParams<T> ps;
  model.params(ps);
  Adam<T> opt(ps, static_cast<T>(rc.train.lr));
  int64_t start_step = 0;
  if (!resume.empty()) {
    auto file = load_tensor_file<T>(resume);
    restore(model, opt, file);
    start_step = static_cast<int64_t>(file.step);
    std::cout << "resumed from " << resume << " at step " << start_step << "\n";
  }

  const std::string echo = serialize_run_config(rc);
  write_text(out_dir + "/config.resolved", echo);
  auto res = train_model(model, opt, rc, splits.train, splits.test, start_step, &std::cout);
  write_text(out_dir + "/metrics.csv", csv_join(res.csv_lines));
  save_tensor_file(out_dir + "/final.ckpt",
                   snapshot(model, opt, static_cast<uint64_t>(res.steps_done), echo));
  std::cout << "final: " << metrics_csv_header() << "\n       "
            << metrics_csv_row(res.final_metrics) << "\n";
  std::cout << "params " << model.count_params() << ", checkpoint " << out_dir
            << "/final.ckpt\n";
  return 0;
}

template <typename T>
int run_evaluate(const std::string& ckpt, const std::string& data_dir,
                 const std::string& out_file) {
  auto lm = load_model<T>(ckpt);
  auto splits = resolve_data(lm.rc, data_dir);
  auto m = evaluate(lm.model, splits.test, lm.rc.pre);
  m.step = lm.step;
  const std::string table = metrics_csv_header() + "\n" + metrics_csv_row(m) + "\n";
  std::cout << table;
  if (!out_file.empty()) write_text(out_file, table);
  return 0;
}

template <typename T>
int run_ablate(const std::string& which, const Config& cfg, uint64_t seed,
               const std::string& out_dir, const std::string& data_dir,
               std::vector<int> values) {
  RunConfig rc = parse_run_config(cfg, seed);
  cfg.reject_unknown();
  fs::create_directories(out_dir);
  auto splits = resolve_data(rc, data_dir);
  std::vector<AblationRow> rows;
  if (which == "acp") {
    if (values.empty()) values = {1, 2, 3, 4, 5, 6, 7};
    rows = ablate_acp<T>(rc, values, splits.train, splits.test, &std::cout);
  } else if (which == "cat") {
    if (values.empty()) values = {8, 16, 32, 64, 128};
    rows = ablate_cat<T>(rc, values, splits.train, splits.test, &std::cout);
  } else {
    rows = ablate_isolation<T>(rc, splits.train, splits.test, &std::cout);
  }
  const std::string table = ablation_table(rows);
  write_text(out_dir + "/ablate_" + which + ".csv", table);
  std::cout << table;
  return 0;
}

template <typename T>
int run_dump(const std::string& ckpt, const std::string& out_file,
             const std::vector<int>& samples, const std::vector<int>& blocks,
             const std::string& data_dir) {
  auto lm = load_model<T>(ckpt);
  auto splits = resolve_data(lm.rc, data_dir);
  std::vector<int> sample_ids = samples;
  if (sample_ids.empty()) sample_ids = {0, 1, 2, 3};
  auto dump = dump_traces(lm.model, splits.test, sample_ids, blocks, lm.rc.pre);
  dump.step = static_cast<uint64_t>(lm.step);
  save_tensor_file(out_file, dump);
  std::cout << "wrote " << dump.entries.size() << " tensors to " << out_file << "\n";
  return 0;
}

int run_analyze_pca(const std::string& dump_file, const std::string& out_dir, int k) {
  auto dump = load_tensor_file<double>(dump_file);
  fs::create_directories(out_dir);
  std::vector<std::string> csv{"entry,component,eigenvalue,explained"};
  int images = 0;
  for (const auto& [name, tensor] : dump.entries) {
    if (name.rfind("feat.", 0) != 0) continue;
    const int kk = std::min(k, tensor.dim(0));
    auto pca = pca_project(tensor, kk);
    for (int j = 0; j < kk; ++j) {
      std::ostringstream row;
      row << name << "," << j << "," << std::setprecision(17) << pca.eigenvalues[j] << ","
          << pca.explained[j];
      csv.push_back(row.str());
      Tensor<double> comp({tensor.dim(1), tensor.dim(2)});
      for (int64_t p = 0; p < comp.numel(); ++p)
        comp.data()[p] = pca.images.data()[j * comp.numel() + p];
      write_pgm(out_dir + "/" + name + ".pc" + std::to_string(j) + ".pgm", comp);
    }
    if (kk >= 3) {
      Tensor<double> rgb({3, tensor.dim(1), tensor.dim(2)});
      for (int64_t p = 0; p < rgb.numel(); ++p) rgb.data()[p] = pca.images.data()[p];
      write_ppm(out_dir + "/" + name + ".ppm", rgb);
    }
    ++images;
  }
  if (images == 0) throw ConfigError("analyze-pca: no feature entries in " + dump_file);
  write_text(out_dir + "/pca_explained.csv", csv_join(csv));
  std::cout << "projected " << images << " feature maps into " << out_dir << "\n";
  return 0;
}

int run_analyze_cka(const std::string& file_a, const std::string& file_b,
                    const std::string& out_dir) {
  auto a = load_tensor_file<double>(file_a);
  auto b = load_tensor_file<double>(file_b);
  fs::create_directories(out_dir);
  // per-sample CKA between matching entries, grouped by stage tag
  std::map<std::string, std::vector<double>> lin, ker;
  int matched = 0;
  for (const auto& [name, ta] : a.entries) {
    if (name.rfind("feat.", 0) != 0) continue;
    const Tensor<double>* tb = b.find(name);
    if (!tb) continue;
    if (ta.shape() != tb->shape())
      throw ShapeError("analyze-cka: shape mismatch for " + name);
    const int C = ta.dim(0);
    const int64_t N = ta.numel() / C;
    Tensor<double> xa({static_cast<int>(N), C}), xb({static_cast<int>(N), C});
    for (int c = 0; c < C; ++c)
      for (int64_t p = 0; p < N; ++p) {
        xa.data()[p * C + c] = ta.data()[c * N + p];
        xb.data()[p * C + c] = tb->data()[c * N + p];
      }
    const auto stage = name.substr(5, name.find('.', 5) - 5);
    lin[stage].push_back(linear_cka(xa, xb));
    ker[stage].push_back(kernel_cka(xa, xb));
    ++matched;
  }
  if (matched == 0) throw ConfigError("analyze-cka: no matching feature entries");
  std::vector<std::string> csv{"stage,metric,mean,median,std,count"};
  for (const auto& [stage, vals] : lin) {
    auto s = summarize(vals);
    std::ostringstream row;
    row << stage << ",linear," << std::setprecision(17) << s.mean << "," << s.median << ","
        << s.stddev << "," << s.count;
    csv.push_back(row.str());
  }
  for (const auto& [stage, vals] : ker) {
    auto s = summarize(vals);
    std::ostringstream row;
    row << stage << ",kernel," << std::setprecision(17) << s.mean << "," << s.median << ","
        << s.stddev << "," << s.count;
    csv.push_back(row.str());
  }
  const std::string table = csv_join(csv);
  write_text(out_dir + "/cka.csv", table);
  std::cout << table;
  return 0;
}

int run_analyze_attention(const std::string& dump_file, const std::string& out_dir) {
  auto dump = load_tensor_file<double>(dump_file);
  fs::create_directories(out_dir);
  std::vector<std::string> csv{"entry,status,otsu_threshold,kept_fraction"};
  int maps = 0;
  for (const auto& [name, tensor] : dump.entries) {
    const bool is_mhsa = name.rfind("mhsa.", 0) == 0;
    const bool is_cat = name.rfind("catattn.", 0) == 0;
    if (!is_mhsa && !is_cat) continue;
    // attention received per position: mean over rows, then onto the grid
    const int rows = tensor.dim(0), cols = tensor.dim(1);
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cols))));
    if (side * side != cols) continue;
    Tensor<double> grid({side, side});
    for (int ccol = 0; ccol < cols; ++ccol) {
      double acc = 0;
      for (int r = 0; r < rows; ++r) acc += tensor.data()[r * cols + ccol];
      grid.data()[ccol] = acc / rows;
    }
    write_pgm(out_dir + "/" + name + ".pgm", view_scale(grid));
    std::ostringstream row;
    row << name;
    try {
      auto enhanced = attention_map_enhance(grid);
      const double thr =
          otsu_threshold(std::vector<double>(grid.data(), grid.data() + grid.numel()));
      int kept = 0;
      for (int64_t i = 0; i < enhanced.numel(); ++i) kept += enhanced.data()[i] != 0.0 ? 1 : 0;
      write_pgm(out_dir + "/" + name + ".enhanced.pgm", view_scale(enhanced));
      row << ",ok," << std::setprecision(17) << thr << ","
          << static_cast<double>(kept) / enhanced.numel();
    } catch (const NumericError& e) {
      row << ",degenerate,,";
    }
    csv.push_back(row.str());
    ++maps;
  }
  if (maps == 0) throw ConfigError("analyze-attention: no attention entries in " + dump_file);
  write_text(out_dir + "/attention_stats.csv", csv_join(csv));
  std::cout << "enhanced " << maps << " attention maps into " << out_dir << "\n";
  return 0;
}

int run_gradcheck(int precision, int seeds) {
  if (precision != 64)
    throw ConfigError("gradcheck runs at 64-bit only; pass --precision 64");
  auto suite = build_gradcheck_suite();
  bool all_ok = true;
  std::cout << "check                        worst_rel_err   tolerance  status\n";
  for (const auto& check : suite) {
    double worst = 0;
    std::string detail;
    for (uint64_t s = 0; s < static_cast<uint64_t>(seeds); ++s) {
      auto rep = check.run(s);
      if (rep.max_rel_err > worst) {
        worst = rep.max_rel_err;
        detail = rep.worst;
      }
    }
    const bool ok = worst < check.tolerance;
    all_ok = all_ok && ok;
    std::ostringstream line;
    line << std::left << std::setw(28) << check.name << std::scientific
         << std::setprecision(3) << worst << "      " << check.tolerance << "  "
         << (ok ? "pass" : "FAIL");
    std::cout << line.str() << "\n";
    if (!ok) std::cout << "    worst element: " << detail << "\n";
  }
  if (!all_ok) throw NumericError("gradcheck: at least one check exceeded tolerance");
  std::cout << "all " << suite.size() << " checks passed over " << seeds << " seeds\n";
  return 0;
}

int run_count_params(const Config& cfg, uint64_t seed) {
  RunConfig rc = parse_run_config(cfg, seed);
  cfg.reject_unknown();
  std::cout << "kind,params\n";
  for (BlockKind kind : {BlockKind::kBaseline, BlockKind::kAcpOnly, BlockKind::kCatOnly,
                         BlockKind::kEnhanced}) {
    ModelConfig mc = rc.model;
    mc.kind = kind;
    Rng rng(0);
    std::cout << block_kind_name(kind) << "," << Model<float>(mc, rng).count_params() << "\n";
  }
  ModelConfig matched = match_baseline_width(rc.model);
  Rng rng(0);
  std::cout << "baseline_width_matched," << Model<float>(matched, rng).count_params()
            << "  # stage dims:";
  for (const auto& st : matched.stages) std::cout << " " << st.dim;
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"concealed-shapes vision transformer workbench"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, ckpt_path, resume_path;
  std::string dump_a, dump_b;
  uint64_t seed = 0;
  int precision = 32;
  int train_n = 500, test_n = 100, size = 32, k = 3, gc_seeds = 5;
  double difficulty = 0.3;
  std::vector<int> values, samples, blocks;

  auto* gen = app.add_subcommand("generate-data", "write a concealed-shapes dataset");
  gen->add_option("--out", out_path)->required();
  gen->add_option("--seed", seed)->required();
  gen->add_option("--train-n", train_n);
  gen->add_option("--test-n", test_n);
  gen->add_option("--size", size);
  gen->add_option("--difficulty", difficulty);

  auto add_common = [&](CLI::App* sub, bool need_seed) {
    sub->add_option("--config", config_path);
    sub->add_option("--precision", precision)->check(CLI::IsMember({32, 64}));
    if (need_seed)
      sub->add_option("--seed", seed)->required();
    else
      sub->add_option("--seed", seed);
  };

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, true);
  train->add_option("--out", out_path)->required();
  train->add_option("--data", data_dir);
  train->add_option("--resume", resume_path);

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt_path)->required();
  eval->add_option("--precision", precision)->check(CLI::IsMember({32, 64}));
  eval->add_option("--data", data_dir);
  eval->add_option("--out", out_path);

  auto* ab_acp = app.add_subcommand("ablate-acp", "sweep pyramid depth");
  add_common(ab_acp, true);
  ab_acp->add_option("--out", out_path)->required();
  ab_acp->add_option("--data", data_dir);
  ab_acp->add_option("--values", values)->delimiter(',');

  auto* ab_cat = app.add_subcommand("ablate-cat", "sweep concept count");
  add_common(ab_cat, true);
  ab_cat->add_option("--out", out_path)->required();
  ab_cat->add_option("--data", data_dir);
  ab_cat->add_option("--values", values)->delimiter(',');

  auto* ab_iso = app.add_subcommand("ablate-isolation", "baseline vs single modules vs both");
  add_common(ab_iso, true);
  ab_iso->add_option("--out", out_path)->required();
  ab_iso->add_option("--data", data_dir);

  auto* dump = app.add_subcommand("dump", "write feature and attention traces");
  dump->add_option("--checkpoint", ckpt_path)->required();
  dump->add_option("--out", out_path)->required();
  dump->add_option("--precision", precision)->check(CLI::IsMember({32, 64}));
  dump->add_option("--samples", samples)->delimiter(',');
  dump->add_option("--blocks", blocks)->delimiter(',');
  dump->add_option("--data", data_dir);

  auto* pca = app.add_subcommand("analyze-pca", "project dumped features");
  pca->add_option("--dump", dump_a)->required();
  pca->add_option("--out", out_path)->required();
  pca->add_option("--k", k);

  auto* cka = app.add_subcommand("analyze-cka", "compare two dumps");
  cka->add_option("--a", dump_a)->required();
  cka->add_option("--b", dump_b)->required();
  cka->add_option("--out", out_path)->required();

  auto* attn = app.add_subcommand("analyze-attention", "threshold dumped attention maps");
  attn->add_option("--dump", dump_a)->required();
  attn->add_option("--out", out_path)->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gate over all registered ops");
  gc->add_option("--precision", precision)->check(CLI::IsMember({32, 64}));
  gc->add_option("--seeds", gc_seeds);

  auto* cp = app.add_subcommand("count-params", "parameter counts per block kind");
  add_common(cp, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_generate(out_path, train_n, test_n, size, difficulty, seed);
    const Config cfg = load_config(config_path);
    if (train->parsed())
      return precision == 32 ? run_train<float>(cfg, seed, out_path, data_dir, resume_path)
                             : run_train<double>(cfg, seed, out_path, data_dir, resume_path);
    if (eval->parsed())
      return precision == 32 ? run_evaluate<float>(ckpt_path, data_dir, out_path)
                             : run_evaluate<double>(ckpt_path, data_dir, out_path);
    if (ab_acp->parsed())
      return precision == 32 ? run_ablate<float>("acp", cfg, seed, out_path, data_dir, values)
                             : run_ablate<double>("acp", cfg, seed, out_path, data_dir, values);
    if (ab_cat->parsed())
      return precision == 32 ? run_ablate<float>("cat", cfg, seed, out_path, data_dir, values)
                             : run_ablate<double>("cat", cfg, seed, out_path, data_dir, values);
    if (ab_iso->parsed())
      return precision == 32
                 ? run_ablate<float>("isolation", cfg, seed, out_path, data_dir, values)
                 : run_ablate<double>("isolation", cfg, seed, out_path, data_dir, values);
    if (dump->parsed())
      return precision == 32 ? run_dump<float>(ckpt_path, out_path, samples, blocks, data_dir)
                             : run_dump<double>(ckpt_path, out_path, samples, blocks, data_dir);
    if (pca->parsed()) return run_analyze_pca(dump_a, out_path, k);
    if (cka->parsed()) return run_analyze_cka(dump_a, dump_b, out_path);
    if (attn->parsed()) return run_analyze_attention(dump_a, out_path);
    if (gc->parsed())
      return run_gradcheck(gc->count("--precision") ? precision : 64, gc_seeds);
    if (cp->parsed()) return run_count_params(cfg, seed);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
