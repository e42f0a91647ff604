// Acceptance run: one PASS/FAIL line per criterion. Drives the CLI for the
// end-to-end pipeline in a scratch directory, then checks properties
// in-process. Exit status is nonzero when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "gduap/analysis.hpp"
#include "gduap/crafting.hpp"
#include "gduap/defenses.hpp"
#include "gduap/hash.hpp"
#include "gduap/metrics.hpp"
#include "gduap/run.hpp"
#include "gduap/runtime.hpp"
#include "support.hpp"

using namespace gduap;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;
std::map<int, std::string> lines;

void report(int id, const std::string& name, const std::function<Verdict()>& check) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  failures += !v.pass;
  char head[64];
  std::snprintf(head, sizeof head, "%s C%02d %s", v.pass ? "PASS" : "FAIL", id, name.c_str());
  std::ostringstream os;
  os << head << ": " << v.detail << " [" << std::fixed << std::setprecision(1) << secs << "s]";
  lines[id] = os.str();
  std::cerr << os.str() << std::endl;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

fs::path g_work;

void cli(const std::string& args) {
  const std::string cmd = "cd '" + g_work.string() + "' && '" + std::string(GDUAP_CLI_PATH) + "' " + args +
                          " >> cli.log 2>&1";
  const int st = std::system(cmd.c_str());
  const int rc = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  if (rc != 0) throw std::runtime_error("gduap " + args + " exited with " + std::to_string(rc));
}

std::string config_path(const std::string& name) { return (fs::path(GDUAP_SOURCE_DIR) / "configs" / name).string(); }

// ---------------------------------------------------------------------------

// Small spatial extent keeps ||l|| moderate so per-pixel gradients clear the
// 1e-4 threshold; probes are spread over several random inputs.
Verdict gradient_check() {
  const InputShape in{6, 6, 3};
  const auto m = fixture::adapter_from<double>(fixture::two_conv_nodes(), in, 21);
  const auto obj = activation_objective<double>({"conv1", "conv2"}, Aggregation::log_product);
  std::mt19937_64 rng(22);
  int probes = 0, bad = 0, skipped = 0;
  double worst = 0;
  for (int input = 0; input < 4; ++input) {
    const auto x = fixture::random_tensor<double>(in, rng, 0, 255);
    const auto g = m.input_gradient(obj, {x})[0];
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      if (probes == 200) break;
      if (std::abs(g[i]) <= 1e-4) {
        ++skipped;
        continue;
      }
      auto xp = x, xm = x;
      xp[i] += 1e-2;
      xm[i] -= 1e-2;
      const double fd = (activation_loss(m, {xp}, obj.layer_ids, Aggregation::log_product) -
                         activation_loss(m, {xm}, obj.layer_ids, Aggregation::log_product)) / 2e-2;
      const double rel = std::abs(fd - g[i]) / std::abs(g[i]);
      worst = std::max(worst, rel);
      bad += rel >= 1e-3;
      ++probes;
    }
  }
  return {probes >= 100 && bad == 0,
          std::to_string(probes) + " probes (" + std::to_string(skipped) + " below 1e-4 skipped), max relative error " +
              fmt(worst * 1e6, 3) + "e-6, " + std::to_string(bad) + " above 1e-3"};
}

Verdict gfr_oracle() {
  std::mt19937_64 rng(31);
  double worst = 0;
  for (int e = 0; e < 1000; ++e) {
    const int n = std::uniform_int_distribution<int>(1, 500)(rng);
    const int k = std::uniform_int_distribution<int>(2, 12)(rng);
    std::uniform_int_distribution<int> lab(0, k - 1);
    std::vector<int> adv(n), clean(n);
    for (int i = 0; i < n; ++i) {
      clean[i] = lab(rng);
      adv[i] = rng() % 3 == 0 ? lab(rng) : clean[i];
    }
    long same = 0;
    for (int i = 0; i < n; ++i)
      if (adv[i] == clean[i]) ++same;
    const double oracle = 1.0 - static_cast<double>(same) / n;
    worst = std::max(worst, std::abs(metrics::fooling_rate(adv, clean) - oracle));
  }
  return {worst <= 1e-12, "1000 evaluations, max |diff| " + fmt(worst * 1e15, 3) + "e-15"};
}

Verdict metric_oracles() {
  std::mt19937_64 rng(41);
  double worst_miou = 0, worst_depth = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int k = std::uniform_int_distribution<int>(2, 8)(rng);
    const int maps = std::uniform_int_distribution<int>(1, 4)(rng);
    const int px = std::uniform_int_distribution<int>(16, 400)(rng);
    std::uniform_int_distribution<int> lab(0, k - 1);
    std::vector<LabelMap> pred(maps, LabelMap(px)), ref(maps, LabelMap(px));
    for (int m = 0; m < maps; ++m)
      for (int i = 0; i < px; ++i) {
        ref[m][i] = lab(rng);
        pred[m][i] = rng() % 2 ? ref[m][i] : lab(rng);
      }
    // per-class scalar loop: intersection and union counted pixel by pixel
    double sum = 0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
      long inter = 0, uni = 0;
      for (int m = 0; m < maps; ++m)
        for (int i = 0; i < px; ++i) {
          const bool p = pred[m][i] == c, r = ref[m][i] == c;
          inter += p && r;
          uni += p || r;
        }
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / uni;
      ++present;
    }
    worst_miou = std::max(worst_miou, std::abs(metrics::miou(pred, ref, k) - sum / present));

    const int n = std::uniform_int_distribution<int>(1, 300)(rng);
    std::lognormal_distribution<double> depth(1.0, 0.6), noise(0.0, 0.3);
    std::vector<double> r(n), p(n);
    for (int i = 0; i < n; ++i) {
      r[i] = depth(rng);
      p[i] = r[i] * noise(rng);
    }
    long double ar = 0, sr = 0, se = 0, sl = 0;
    long d1 = 0, d2 = 0, d3 = 0;
    for (int i = 0; i < n; ++i) {
      const long double diff = static_cast<long double>(p[i]) - r[i];
      ar += std::fabs(diff) / r[i];
      sr += diff * diff / r[i];
      se += diff * diff;
      const long double l = std::log(static_cast<long double>(p[i])) - std::log(static_cast<long double>(r[i]));
      sl += l * l;
      const double q = p[i] > r[i] ? p[i] / r[i] : r[i] / p[i];
      d1 += q < 1.25;
      d2 += q < 1.5625;
      d3 += q < 1.953125;
    }
    const auto dm = metrics::depth_metrics(p, r);
    const double oracle[] = {static_cast<double>(ar / n), static_cast<double>(sr / n),
                             static_cast<double>(std::sqrt(se / n)), static_cast<double>(std::sqrt(sl / n)),
                             static_cast<double>(d1) / n, static_cast<double>(d2) / n, static_cast<double>(d3) / n};
    const double got[] = {dm.abs_rel, dm.sq_rel, dm.rmse, dm.rmse_log, dm.delta1, dm.delta2, dm.delta3};
    for (int j = 0; j < 7; ++j) worst_depth = std::max(worst_depth, std::abs(got[j] - oracle[j]));
  }
  return {worst_miou <= 1e-9 && worst_depth <= 1e-9,
          "50 instances, max |diff| miou " + fmt(worst_miou * 1e15, 3) + "e-15, depth " +
              fmt(worst_depth * 1e15, 3) + "e-15"};
}

// ---------------------------------------------------------------------------

struct Pipeline {
  fs::path data;
  std::string range_hash_first, range_hash_second;
  double pipeline_seconds = 0;
};

Pipeline run_pipeline() {
  Pipeline p;
  const auto t0 = Clock::now();
  cli("synth-data --out data --seed 0");
  cli("train-victim --config " + config_path("train_a.json"));
  cli("train-victim --config " + config_path("train_b.json"));
  for (const char* mode : {"none", "range", "data"}) cli("craft --config " + config_path(std::string("craft_") + mode + ".json"));
  const fs::path range = g_work / "runs/craft_range/perturbations/range.uapf";
  p.range_hash_first = git_blob_hash_file(range);
  cli("craft --config " + config_path("craft_range.json") + " --overwrite");
  p.range_hash_second = git_blob_hash_file(range);
  cli("defend --config " + config_path("defend.json"));
  p.data = g_work / "data";
  p.pipeline_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return p;
}

}  // namespace

int main() {
  tune_allocator();
  g_work = fs::current_path() / "acceptance_work";
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  std::cout << "acceptance scratch directory: " << g_work.string() << std::endl;

  report(2, "gradient-correctness", gradient_check);
  report(7, "gfr-oracle", gfr_oracle);
  report(8, "metric-oracles", metric_oracles);

  std::optional<Pipeline> pipe;
  std::string pipe_error;
  try {
    pipe = run_pipeline();
    std::cout << "pipeline (synth-data, 2x train-victim, 4x craft, defend) took " << fmt(pipe->pipeline_seconds, 1)
              << "s" << std::endl;
  } catch (const std::exception& e) {
    pipe_error = e.what();
  }
  auto need_pipeline = [&] {
    if (!pipe) throw std::runtime_error("pipeline failed: " + pipe_error);
  };

  const fs::path runs = g_work / "runs";
  std::optional<ModelAdapter> a, b;
  Corpus test, train;
  std::map<std::string, Perturbation> perts;
  std::vector<LabelMap> clean_a, clean_b;
  if (pipe) {
    try {
      a.emplace(load_weights(runs / "victim_a/weights/small_conv_a-s7.uapw"));
      b.emplace(load_weights(runs / "victim_b/weights/small_conv_b-s8.uapw"));
      test = load_split(pipe->data / "desk10", "test");
      train = load_split(pipe->data / "desk10", "train");
      for (const char* m : {"none", "range", "data"})
        perts[m] = load_perturbation(runs / (std::string("craft_") + m) / "perturbations" / (std::string(m) + ".uapf"));
      perts["baseline"] = load_perturbation(runs / "craft_range/perturbations/baseline.uapf");
      clean_a = a->forward(test.images());
      clean_b = b->forward(test.images());
    } catch (const std::exception& e) {
      pipe.reset();
      pipe_error = e.what();
    }
  }
  auto fr = [&](const ModelAdapter& m, const std::vector<LabelMap>& clean, const std::string& name) {
    return evaluate_fooling(m, test.images(), clean, perts.at(name).delta);
  };

  // Full-length in-process run: patience disabled so all 10k iterations execute.
  long iterations = 0, norm_violations = 0, rescales = 0, inexact = 0, unsaturated = 0, bad_max = 0;
  float worst_norm = 0;
  double craft_seconds = 0;
  std::optional<analysis::CorrelationTrace> trace;
  std::string long_run_error;
  if (pipe) {
    try {
      auto cfg = run::build_config(nlohmann::json::parse(io::read_file(config_path("craft_range.json"))), {});
      cfg.craft.config.patience_H = 1 << 30;
      run::Inputs in;
      in.dataset = pipe->data / "desk10" / "manifest.json";
      auto prior = run::make_prior(cfg, *a, in);
      const auto sub = load_split(pipe->data / "substitute", "val");
      const float xi = static_cast<float>(cfg.craft.config.xi);
      analysis::DeltaRecorder rec;
      auto obs = rec.observer();
      const auto record = obs.on_iteration;
      obs.on_iteration = [&](const IterationInfo& it) {
        ++iterations;
        const float m = max_abs(it.delta);
        worst_norm = std::max(worst_norm, m);
        norm_violations += m > xi;
        record(it);
      };
      obs.on_rescale = [&](long, const Image& before, const Image& after) {
        ++rescales;
        for (std::size_t i = 0; i < before.size(); ++i)
          if (after[i] != before[i] * 0.5f) {
            ++inexact;
            break;
          }
        if (max_abs(before) != xi)
          ++unsaturated;
        else if (max_abs(after) != xi / 2)
          ++bad_max;
      };
      const auto t0 = Clock::now();
      craft(*a, cfg.craft.config, prior, sub, obs);
      craft_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
      const auto held = test.head(64).images();
      trace = analysis::correlation_trace(rec, *a, analysis::final_conv_layer(*a), held);
    } catch (const std::exception& e) {
      long_run_error = e.what();
    }
  }
  auto need_long_run = [&] {
    need_pipeline();
    if (!long_run_error.empty()) throw std::runtime_error(long_run_error);
  };

  report(1, "norm-safety", [&]() -> Verdict {
    need_long_run();
    return {iterations == 10000 && norm_violations == 0 && craft_seconds < 1800,
            std::to_string(iterations) + " iterations, max|delta| " + fmt(worst_norm, 6) + " (xi 10), " +
                std::to_string(norm_violations) + " violations, " + fmt(craft_seconds, 1) + "s"};
  });
  report(3, "rescale-semantics", [&]() -> Verdict {
    need_long_run();
    return {rescales > 0 && inexact == 0 && bad_max == 0,
            std::to_string(rescales) + " rescales, " + std::to_string(inexact) + " inexact, " +
                std::to_string(bad_max) + " saturated with post max != xi/2, " + std::to_string(unsaturated) +
                " triggered without saturation"};
  });
  report(4, "fooling-efficacy", [&]() -> Verdict {
    need_pipeline();
    std::vector<int> pred;
    for (const auto& c : clean_a) pred.push_back(c[0]);
    const double top1 = metrics::top1(pred, test.labels());
    const double r = fr(*a, clean_a, "range"), base = fr(*a, clean_a, "baseline");
    return {top1 >= 0.60 && r >= base + 0.20,
            "small_conv_a top-1 " + fmt(top1) + ", FR range " + fmt(r) + " vs baseline " + fmt(base)};
  });
  report(5, "prior-ordering", [&]() -> Verdict {
    need_pipeline();
    const double n = fr(*a, clean_a, "none"), r = fr(*a, clean_a, "range"), d = fr(*a, clean_a, "data");
    return {d >= r - 0.02 && r - 0.02 >= n - 0.04,
            "FR data " + fmt(d) + ", range " + fmt(r) + ", none " + fmt(n) + " (need data >= range-0.02 >= none-0.04)"};
  });
  report(6, "transfer", [&]() -> Verdict {
    need_pipeline();
    std::vector<int> pred;
    for (const auto& c : clean_b) pred.push_back(c[0]);
    const double top1 = metrics::top1(pred, test.labels());
    const double r = fr(*b, clean_b, "range"), base = fr(*b, clean_b, "baseline");
    return {r >= base + 0.10, "range delta from small_conv_a on small_conv_b (top-1 " + fmt(top1) + "): FR " +
                                  fmt(r) + " vs baseline " + fmt(base)};
  });
  report(9, "layer-shift-monotonicity", [&]() -> Verdict {
    need_pipeline();
    const auto samples = test.head(256).images();
    const auto prof = analysis::layer_shift_profile(*a, perts.at("range").delta, samples, analysis::profile_layers(*a));
    const double rho = analysis::depth_monotonicity(prof);
    std::string shifts;
    for (const auto& [id, s] : prof.per_layer) shifts += (shifts.empty() ? "" : " ") + id + "=" + fmt(s, 1);
    return {samples.size() == 256 && rho > 0.8, "Spearman " + fmt(rho) + " over " + std::to_string(samples.size()) +
                                                    " samples; shift% " + shifts};
  });
  report(10, "activation-correlation", [&]() -> Verdict {
    need_long_run();
    const bool ok = trace->pearson_r && *trace->pearson_r > 0.7;
    return {ok, "Pearson " + (trace->pearson_r ? fmt(*trace->pearson_r) : std::string("undefined")) + " over " +
                    std::to_string(trace->points.size()) + (trace->uniform_fallback ? " uniform" : " pre-rescale") +
                    " checkpoints at " + trace->layer_id};
  });
  report(11, "defense-grid", [&]() -> Verdict {
    need_pipeline();
    const std::string csv = io::read_file(runs / "defend_a/reports/defense_grid.csv");
    const auto grid = defense::parse_grid_csv(csv);
    const bool round_trip = defense::to_csv(grid) == csv;
    std::map<std::string, double> fool;
    for (const auto& r : grid.rows) fool[r.transform + (r.params.empty() ? "" : ":" + r.params)] = r.fooling.at(0);
    const double undefended = fool.at("none");
    bool ok = round_trip;
    std::string detail = "undefended " + fmt(undefended);
    for (const char* key : {"median_smooth:window=3", "jpeg:quality=50", "bit_reduce:bits=3"}) {
      const double f = fool.at(key);
      ok &= f < undefended;
      detail += std::string(", ") + key + " " + fmt(f);
    }
    return {ok, detail + (round_trip ? ", CSV round-trips" : ", CSV round-trip mismatch")};
  });
  report(12, "serialization", [&]() -> Verdict {
    need_pipeline();
    const fs::path w = runs / "victim_a/weights/small_conv_a-s7.uapw";
    const fs::path p = runs / "craft_range/perturbations/range.uapf";
    save_weights(load_weights(w), g_work / "rt.uapw");
    save_perturbation(load_perturbation(p), g_work / "rt.uapf");
    const bool ok_w = git_blob_hash_file(w) == git_blob_hash_file(g_work / "rt.uapw");
    const bool ok_p = git_blob_hash_file(p) == git_blob_hash_file(g_work / "rt.uapf");
    return {ok_w && ok_p, std::string("UAPW ") + (ok_w ? "identical" : "differs") + ", UAPF " +
                              (ok_p ? "identical" : "differs") + " after read and rewrite"};
  });
  report(13, "determinism", [&]() -> Verdict {
    need_pipeline();
    return {pipe->range_hash_first == pipe->range_hash_second,
            "range.uapf " + pipe->range_hash_first.substr(0, 12) + " vs " + pipe->range_hash_second.substr(0, 12) +
                " across two craft invocations"};
  });

  for (const auto& [id, line] : lines) std::cout << line << "\n";
  std::cout << (failures ? std::to_string(failures) + " of 13 criteria failed" : std::string("all 13 criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
