#pragma once

// Config-driven run orchestration behind the command-line tool. Every run
// writes into one output directory:
//   manifest.json, weights/, perturbations/, reports/, plots/
// Problems found before any work starts raise ConfigError (exit status 2);
// anything later is a runtime failure (exit status 1).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gduap/analysis.hpp"
#include "gduap/config.hpp"
#include "gduap/crafting.hpp"
#include "gduap/datasets.hpp"
#include "gduap/defenses.hpp"
#include "gduap/errors.hpp"
#include "gduap/hash.hpp"
#include "gduap/io.hpp"
#include "gduap/metrics.hpp"
#include "gduap/model_adapter.hpp"
#include "gduap/plots.hpp"
#include "gduap/priors.hpp"
#include "gduap/training.hpp"

namespace gduap::run {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr const char* kCacheEnv = "GDUAP_CACHE_DIR";
inline constexpr int kFormatVersion = 1;

struct Paths {
  std::string dataset_root;
  std::string substitute_root;
  std::string substitute_split = "val";
  std::string output_dir = "runs/out";
  std::string weights;
  std::vector<std::string> perturbations;
  std::vector<std::string> runs;
};

struct VictimConfig {
  VictimSpec spec;
  TrainOptions train;
  std::optional<std::size_t> train_limit;
};

struct CraftOptions {
  CraftConfig config;
  AugmentSpec augment;
  std::size_t data_limit = 512;
  std::optional<std::size_t> substitute_limit;
  bool less_background = false;
};

struct EvalOptions {
  bool baseline = true;
  std::optional<std::size_t> test_limit;
};

struct AnalysisOptions {
  std::size_t n_samples = 256;
  std::vector<std::string> layers;
  bool correlation = true;
};

struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  Paths paths;
  VictimConfig victim;
  CraftOptions craft;
  EvalOptions eval;
  std::vector<defense::TransformSpec> defense;
  AnalysisOptions analysis;
  ojson source;  // effective configuration after flag overrides
};

struct Overrides {
  std::optional<std::string> command;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  bool overwrite = false;
};

inline const std::set<std::string>& commands() {
  static const std::set<std::string> c{"train-victim", "craft", "eval", "defend", "analyze", "compare"};
  return c;
}

// Default grid: the undefended reference plus one setting per transform.
inline std::vector<defense::TransformSpec> default_defenses() {
  using defense::Kind;
  std::vector<defense::TransformSpec> v(7);
  v[0].kind = Kind::none;
  v[1].kind = Kind::ten_crop;
  v[2].kind = Kind::gaussian_smooth;
  v[3].kind = Kind::median_smooth;
  v[4].kind = Kind::bilateral;
  v[5].kind = Kind::bit_reduce;
  v[6].kind = Kind::jpeg;
  v[6].quality = 50;
  return v;
}

// Applies flag overrides (flags > config > defaults) to a schema-valid
// document and converts it.
inline RunConfig build_config(nlohmann::json doc, const Overrides& ov) {
  if (ov.command) {
    if (doc.contains("command") && doc["command"] != *ov.command)
      throw ConfigError("config command '" + doc["command"].get<std::string>() + "' does not match subcommand '" +
                        *ov.command + "'");
    doc["command"] = *ov.command;
  }
  if (ov.seed) {
    doc["seed"] = *ov.seed;
    for (const char* k : {"victim", "craft"})
      if (doc.contains(k)) doc[k]["seed"] = *ov.seed;
  }
  if (ov.output_dir) doc["paths"]["output_dir"] = *ov.output_dir;
  if (!doc.contains("command")) throw ConfigError("no command given");
  const auto issues = config::validate(doc);
  if (!issues.empty()) throw ConfigError(issues.front().pointer + ": " + issues.front().message);

  RunConfig c;
  c.command = doc["command"].get<std::string>();
  c.seed = doc.value("seed", std::uint64_t{0});
  const auto obj = [&](const char* k) { return doc.value(k, nlohmann::json::object()); };

  const auto p = obj("paths");
  c.paths.dataset_root = p.value("dataset_root", "");
  c.paths.substitute_root = p.value("substitute_root", "");
  c.paths.substitute_split = p.value("substitute_split", "val");
  c.paths.output_dir = p.value("output_dir", c.paths.output_dir);
  c.paths.weights = p.value("weights", "");
  c.paths.perturbations = p.value("perturbations", std::vector<std::string>{});
  c.paths.runs = p.value("runs", std::vector<std::string>{});

  const auto v = obj("victim");
  c.victim.spec.architecture = nn::architecture_from_string(v.value("architecture", "small_conv_a"));
  c.victim.spec.num_classes = v.value("num_classes", c.victim.spec.architecture == Architecture::toy_fcn ? 4 : 10);
  c.victim.spec.seed = v.value("seed", c.seed);
  c.victim.train.epochs = v.value("epochs", c.victim.train.epochs);
  c.victim.train.batch_size = v.value("batch_size", c.victim.train.batch_size);
  c.victim.train.lr = v.value("lr", c.victim.train.lr);
  c.victim.train.weight_decay = v.value("weight_decay", c.victim.train.weight_decay);
  if (v.contains("train_limit")) c.victim.train_limit = v["train_limit"].get<std::size_t>();

  const auto k = obj("craft");
  auto& cc = c.craft.config;
  cc.xi = k.value("xi", cc.xi);
  cc.lr = k.value("lr", cc.lr);
  cc.theta = k.value("theta", cc.theta);
  cc.patience_H = k.value("patience_H", cc.patience_H);
  cc.val_every_saturating = k.value("val_every_saturating", cc.val_every_saturating);
  cc.val_every_quiet = k.value("val_every_quiet", cc.val_every_quiet);
  cc.max_iterations = k.value("max_iterations", cc.max_iterations);
  cc.prior_mode = prior_mode_from_string(k.value("prior_mode", "range"));
  cc.aggregation = aggregation_from_string(k.value("aggregation", "log_product"));
  cc.seed = k.value("seed", c.seed);
  cc.batch_size = k.value("batch_size", cc.batch_size);
  c.craft.data_limit = k.value("data_limit", c.craft.data_limit);
  if (k.contains("substitute_limit")) c.craft.substitute_limit = k["substitute_limit"].get<std::size_t>();
  c.craft.less_background = k.value("less_background", false);
  const auto a = k.value("augment", nlohmann::json::object());
  // the data prior streams real samples unaugmented unless asked otherwise
  c.craft.augment.enabled = a.value("enabled", cc.prior_mode != PriorMode::data);
  c.craft.augment.crop = a.value("crop", true);
  if (a.contains("blur_sigma_range")) c.craft.augment.blur_sigma_range = a["blur_sigma_range"].get<std::array<double, 2>>();
  if (a.contains("rotation_degrees_range"))
    c.craft.augment.rotation_degrees_range = a["rotation_degrees_range"].get<std::array<double, 2>>();
  cc.validate();
  c.craft.augment.validate();

  const auto e = obj("eval");
  c.eval.baseline = e.value("baseline", true);
  if (e.contains("test_limit")) c.eval.test_limit = e["test_limit"].get<std::size_t>();

  if (doc.contains("defense")) {
    for (const auto& d : doc["defense"]) {
      defense::TransformSpec t;
      t.kind = defense::kind_from_string(d.at("kind").get<std::string>());
      t.sigma = d.value("sigma", t.sigma);
      t.window = d.value("window", t.window);
      t.sigma_spatial = d.value("sigma_spatial", t.sigma_spatial);
      t.sigma_range = d.value("sigma_range", t.sigma_range);
      t.bits = d.value("bits", t.bits);
      t.quality = d.value("quality", t.quality);
      t.crop_fraction = d.value("crop_fraction", t.crop_fraction);
      t.validate();
      c.defense.push_back(t);
    }
  } else {
    c.defense = default_defenses();
  }
  if (c.defense.empty() || c.defense.front().kind != defense::Kind::none)
    c.defense.insert(c.defense.begin(), defense::TransformSpec{});

  const auto an = obj("analysis");
  c.analysis.n_samples = an.value("n_samples", c.analysis.n_samples);
  c.analysis.layers = an.value("layers", std::vector<std::string>{});
  c.analysis.correlation = an.value("correlation", true);

  c.source = ojson::parse(doc.dump());
  return c;
}

// Relative dataset paths that do not exist from the working directory are
// looked up under $GDUAP_CACHE_DIR.
inline fs::path resolve_data_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  if (const char* cache = std::getenv(kCacheEnv); cache && *cache) {
    const fs::path alt = fs::path(cache) / path;
    if (fs::exists(alt)) return alt;
  }
  return path;
}

inline fs::path default_cache_dir() {
  if (const char* cache = std::getenv(kCacheEnv); cache && *cache) return cache;
  return "data";
}

// ---------------------------------------------------------------------------

class RunDir {
 public:
  RunDir(fs::path root, bool overwrite) : root_(std::move(root)) {
    if (fs::exists(root_) && !fs::is_directory(root_)) throw ConfigError("output path '" + root_.string() + "' is a file");
    if (fs::exists(root_) && !fs::is_empty(root_)) {
      if (!overwrite)
        throw ConfigError("output directory '" + root_.string() + "' is not empty; pass --overwrite to replace it");
      fs::remove(root_ / "manifest.json");
      for (const char* d : {"weights", "perturbations", "reports", "plots"}) fs::remove_all(root_ / d);
    }
    for (const char* d : {"weights", "perturbations", "reports", "plots"}) fs::create_directories(root_ / d);
  }

  const fs::path& root() const { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }

  void add_input(const std::string& role, const fs::path& p) {
    inputs_.push_back({{"role", role}, {"path", p.string()}, {"git_hash", git_blob_hash_file(p)}});
  }
  void write_text(const std::string& rel, const std::string& text) {
    io::write_file(path(rel), text);
    artifact(rel);
  }
  void write_json(const std::string& rel, const ojson& j) { write_text(rel, j.dump(2) + "\n"); }
  void artifact(const std::string& rel) { artifacts_.push_back({{"path", rel}, {"git_hash", git_blob_hash_file(path(rel))}}); }

  void finish(const RunConfig& cfg) const {
    ojson m;
    m["tool"] = "gduap";
    m["format_version"] = kFormatVersion;
    m["command"] = cfg.command;
    m["config"] = cfg.source;
    m["inputs"] = inputs_;
    m["artifacts"] = artifacts_;
    io::write_file(root_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  fs::path root_;
  ojson inputs_ = ojson::array();
  ojson artifacts_ = ojson::array();
};

// ---------------------------------------------------------------------------

struct Context {
  const RunConfig& cfg;
  RunDir& dir;
  std::ostream& log;
};

namespace detail {

inline fs::path require_path(const std::string& p, const std::string& key, bool data = false) {
  if (p.empty()) throw ConfigError("paths." + key + " is required for this command");
  const fs::path r = data ? resolve_data_path(p) : fs::path(p);
  if (!fs::exists(r)) throw ConfigError("paths." + key + ": '" + p + "' does not exist");
  return r;
}

inline fs::path manifest_of(const fs::path& root) { return fs::is_directory(root) ? root / "manifest.json" : root; }

inline Corpus limited(Corpus c, std::optional<std::size_t> n) { return n ? c.head(*n) : c; }

inline ojson report_json(const metrics::MetricReport& r) { return r.to_json(); }

// Clean and adversarial task metric plus GFR for one perturbation.
inline metrics::MetricReport evaluate(const ModelAdapter& model, const Corpus& test, const std::vector<LabelMap>& clean,
                                      const Image& delta) {
  metrics::MetricReport r;
  r.n_samples = test.size();
  std::vector<Image> adv_in;
  for (const auto& s : test.samples) adv_in.push_back(add_clipped(s.image, delta));
  const auto adv = model.forward(adv_in);
  if (model.task() == Task::classification) {
    std::vector<int> c, a;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      c.push_back(clean[i][0]);
      a.push_back(adv[i][0]);
    }
    r.clean["top1"] = metrics::top1(c, test.labels());
    r.adversarial["top1"] = metrics::top1(a, test.labels());
    r.gfr["top1"] = metrics::fooling_rate(a, c);
  } else {
    std::vector<LabelMap> ref;
    for (const auto& s : test.samples) ref.push_back(s.mask);
    r.clean["miou"] = metrics::miou(clean, ref, model.num_classes());
    r.adversarial["miou"] = metrics::miou(adv, ref, model.num_classes());
    r.gfr["miou"] = metrics::gfr_miou(adv, clean, model.num_classes());
  }
  return r;
}

inline std::string stem_of(const std::string& p) { return fs::path(p).stem().string(); }

}  // namespace detail

// Preflight: required inputs present, artifacts compatible. Raises ConfigError.
struct Inputs {
  std::optional<fs::path> dataset, substitute, weights;
  std::vector<fs::path> perturbations, runs;
};

inline Inputs preflight(const RunConfig& c) {
  Inputs in;
  const auto& p = c.paths;
  const std::string& cmd = c.command;
  if (!commands().count(cmd)) throw ConfigError("unknown command '" + cmd + "'");
  if (cmd == "compare") {
    if (p.runs.empty()) throw ConfigError("paths.runs must list at least one run directory");
    for (const auto& r : p.runs) in.runs.push_back(detail::require_path(r, "runs"));
    return in;
  }
  const bool needs_dataset = cmd == "train-victim" || cmd == "eval" || cmd == "defend" || cmd == "analyze" ||
                             (cmd == "craft" && (p.weights.empty() || c.craft.config.prior_mode != PriorMode::none));
  if (needs_dataset || !p.dataset_root.empty())
    in.dataset = detail::manifest_of(detail::require_path(p.dataset_root, "dataset_root", true));
  if (cmd == "craft" || (cmd == "analyze" && c.analysis.correlation))
    in.substitute = detail::manifest_of(detail::require_path(p.substitute_root, "substitute_root", true));
  if (cmd != "train-victim" && !(cmd == "craft" && p.weights.empty()))
    in.weights = detail::require_path(p.weights, "weights");
  if (cmd == "eval" || cmd == "defend" || cmd == "analyze") {
    if (p.perturbations.empty() && cmd != "analyze") throw ConfigError("paths.perturbations must not be empty");
    for (const auto& q : p.perturbations) in.perturbations.push_back(detail::require_path(q, "perturbations"));
  }
  if (in.weights) {
    std::optional<ModelAdapter> loaded;
    try {
      loaded.emplace(load_weights(*in.weights));
    } catch (const Error& e) {
      throw ConfigError("paths.weights: " + std::string(e.what()));
    }
    const ModelAdapter& m = *loaded;
    for (const auto& q : in.perturbations) {
      Perturbation d;
      try {
        d = load_perturbation(q);
      } catch (const Error& e) {
        throw ConfigError("paths.perturbations: " + q.string() + ": " + e.what());
      }
      if (d.shape() != m.input_shape())
        throw ConfigError("perturbation '" + q.string() + "' has shape " + to_string(d.shape()) +
                          " but the model input is " + to_string(m.input_shape()));
    }
  }
  if (cmd == "defend" && in.weights && load_weights(*in.weights).task() != Task::classification)
    for (const auto& t : c.defense)
      if (t.kind == defense::Kind::ten_crop) throw ConfigError("ten_crop applies to classifiers only");
  return in;
}

// ---------------------------------------------------------------------------

inline ModelAdapter obtain_victim(Context& ctx, const Inputs& in) {
  if (in.weights) {
    ctx.dir.add_input("weights", *in.weights);
    return load_weights(*in.weights);
  }
  const auto& v = ctx.cfg.victim;
  auto train = detail::limited(load_split(*in.dataset, "train"), v.train_limit);
  if (train.empty()) throw IngestionError("dataset has no 'train' split");
  ctx.log << "training " << nn::to_string(v.spec.architecture) << " on " << train.size() << " samples\n";
  auto m = train_victim(v.spec, train, v.train);
  const std::string rel = "weights/" + m.model_id() + ".uapw";
  save_weights(m, ctx.dir.path(rel));
  ctx.dir.artifact(rel);
  return m;
}

inline int cmd_train_victim(Context& ctx, const Inputs& in) {
  ctx.dir.add_input("dataset", *in.dataset);
  auto m = obtain_victim(ctx, in);
  ojson rep{{"model_id", m.model_id()}, {"architecture", nn::to_string(m.spec().architecture)},
            {"train_dataset_id", m.spec().train_dataset_id}};
  const auto test = load_split(*in.dataset, "test");
  if (!test.empty()) {
    if (m.task() == Task::classification) {
      rep["test_top1"] = metrics::round6(metrics::top1(m.classify(test.images()), test.labels()));
    } else {
      std::vector<LabelMap> ref;
      for (const auto& s : test.samples) ref.push_back(s.mask);
      rep["test_miou"] = metrics::round6(metrics::miou(m.forward(test.images()), ref, m.num_classes()));
    }
    rep["n_test"] = test.size();
  }
  ctx.dir.write_json("reports/train.json", rep);
  ctx.log << rep.dump() << "\n";
  return 0;
}

inline PriorSource make_prior(const RunConfig& c, const ModelAdapter& m, const Inputs& in) {
  switch (c.craft.config.prior_mode) {
    case PriorMode::none:
      return PriorSource::none(m.input_shape());
    case PriorMode::range:
      return PriorSource::range(channel_mean(load_split(*in.dataset, "train")), m.input_shape(),
                                mix_seed(c.craft.config.seed, 0x9A1), c.craft.augment);
    case PriorMode::data: {
      auto train = load_split(*in.dataset, "train");
      if (c.craft.less_background) train = curate_less_bg(train, 0);
      return PriorSource::data(train.head(c.craft.data_limit), m.input_shape(), c.craft.augment);
    }
  }
  throw ConfigError("unknown prior mode");
}

inline int cmd_craft(Context& ctx, const Inputs& in) {
  const auto& c = ctx.cfg;
  if (in.dataset) ctx.dir.add_input("dataset", *in.dataset);
  ctx.dir.add_input("substitute", *in.substitute);
  auto model = obtain_victim(ctx, in);
  auto prior = make_prior(c, model, in);
  const auto sub = detail::limited(load_split(*in.substitute, c.paths.substitute_split), c.craft.substitute_limit);
  if (sub.empty()) throw IngestionError("substitute split '" + c.paths.substitute_split + "' is empty");

  const std::string mode = to_string(c.craft.config.prior_mode);
  ctx.log << "crafting " << mode << " perturbation on " << model.model_id() << "\n";
  const auto res = craft(model, c.craft.config, prior, sub);
  const std::string rel = "perturbations/" + mode + ".uapf";
  save_perturbation(res.best, ctx.dir.path(rel));
  ctx.dir.artifact(rel);

  ojson rep{{"model_id", model.model_id()},
            {"prior_mode", mode},
            {"seed", c.craft.config.seed},
            {"iterations_run", res.best.meta.iterations_run},
            {"truncated", res.truncated},
            {"rescale_events", res.rescale_events.size()},
            {"validation_fooling_rate", metrics::round6(res.best.meta.validation_fooling_rate)}};
  ojson cps = ojson::array();
  std::vector<std::pair<std::string, double>> curve;
  for (const auto& [it, f] : res.checkpoints) {
    cps.push_back({it, metrics::round6(f)});
    curve.emplace_back(std::to_string(it), f);
  }
  rep["checkpoints"] = cps;

  if (c.eval.baseline) {
    auto base = random_baseline(model.input_shape(), c.craft.config.xi, c.craft.config.seed);
    base.meta.model_id = model.model_id();
    save_perturbation(base, ctx.dir.path("perturbations/baseline.uapf"));
    ctx.dir.artifact("perturbations/baseline.uapf");
  }
  if (in.dataset) {
    const auto test = detail::limited(load_split(*in.dataset, "test"), c.eval.test_limit);
    if (!test.empty()) {
      const auto clean = model.forward(test.images());
      rep["test_fooling_rate"] = metrics::round6(evaluate_fooling(model, test.images(), clean, res.best.delta));
    }
  }
  ctx.dir.write_json("reports/craft.json", rep);
  if (curve.size() > 1) {
    plot::line_plot(curve, "validation fooling rate per checkpoint", "fooling rate", ctx.dir.path("plots/craft_validation.png"));
    ctx.dir.artifact("plots/craft_validation.png");
  }
  ctx.log << rep.dump() << "\n";
  return 0;
}

inline std::vector<std::pair<std::string, Perturbation>> load_perturbations(Context& ctx, const Inputs& in) {
  std::vector<std::pair<std::string, Perturbation>> out;
  std::set<std::string> names;
  for (const auto& p : in.perturbations) {
    ctx.dir.add_input("perturbation", p);
    std::string name = detail::stem_of(p.string());
    while (!names.insert(name).second) name += "_";
    out.emplace_back(name, load_perturbation(p));
  }
  return out;
}

inline int cmd_eval(Context& ctx, const Inputs& in) {
  const auto& c = ctx.cfg;
  ctx.dir.add_input("dataset", *in.dataset);
  const auto model = obtain_victim(ctx, in);
  const auto test = detail::limited(load_split(*in.dataset, "test"), c.eval.test_limit);
  if (test.empty()) throw IngestionError("dataset has no 'test' split");
  auto perts = load_perturbations(ctx, in);
  const bool has_baseline = std::any_of(perts.begin(), perts.end(), [](const auto& p) { return p.first == "baseline"; });
  if (c.eval.baseline && !has_baseline)
    perts.emplace_back("baseline", random_baseline(model.input_shape(), perts.front().second.xi, c.seed));
  const auto clean = model.forward(test.images());
  ojson reps = ojson::object();
  for (const auto& [name, p] : perts) reps[name] = detail::evaluate(model, test, clean, p.delta).to_json();
  ojson rep{{"model_id", model.model_id()},
            {"weights_hash", git_blob_hash_file(*in.weights)},
            {"test_set", test.id},
            {"n_samples", test.size()},
            {"perturbations", reps}};
  ctx.dir.write_json("reports/eval.json", rep);
  ctx.log << rep.dump() << "\n";
  return 0;
}

inline int cmd_defend(Context& ctx, const Inputs& in) {
  const auto& c = ctx.cfg;
  ctx.dir.add_input("dataset", *in.dataset);
  const auto model = obtain_victim(ctx, in);
  const auto test = detail::limited(load_split(*in.dataset, "test"), c.eval.test_limit);
  if (test.empty()) throw IngestionError("dataset has no 'test' split");
  const auto perts = load_perturbations(ctx, in);
  std::vector<defense::LabeledPerturbation> lp;
  for (const auto& [name, p] : perts) lp.push_back({name, &p});
  const auto grid = defense::evaluate_grid(model, c.defense, lp, test);
  const std::string csv = defense::to_csv(grid);
  defense::parse_grid_csv(csv);  // self-check against the grid format
  ctx.dir.write_text("reports/defense_grid.csv", csv);
  ctx.log << csv;
  return 0;
}

inline int cmd_analyze(Context& ctx, const Inputs& in) {
  const auto& c = ctx.cfg;
  ctx.dir.add_input("dataset", *in.dataset);
  auto model = obtain_victim(ctx, in);
  auto test = load_split(*in.dataset, "test").head(c.analysis.n_samples);
  if (test.empty()) throw IngestionError("dataset has no 'test' split");
  const auto images = test.images();
  auto perts = load_perturbations(ctx, in);
  ojson rep{{"model_id", model.model_id()}, {"n_samples", test.size()}};

  std::optional<analysis::DeltaRecorder> recorder;
  if (c.analysis.correlation) {
    ctx.dir.add_input("substitute", *in.substitute);
    recorder.emplace();
    auto prior = make_prior(c, model, in);
    const auto sub = detail::limited(load_split(*in.substitute, c.paths.substitute_split), c.craft.substitute_limit);
    ctx.log << "crafting with recording for the correlation study\n";
    auto res = craft(model, c.craft.config, prior, sub, recorder->observer());
    perts.emplace_back(std::string("crafted_") + to_string(c.craft.config.prior_mode), std::move(res.best));
  }
  if (perts.empty()) throw ConfigError("analyze needs paths.perturbations or analysis.correlation");
  perts.emplace_back("baseline", random_baseline(model.input_shape(), perts.front().second.xi, c.seed));

  const auto layers = c.analysis.layers.empty() ? analysis::profile_layers(model) : c.analysis.layers;
  const auto prof = analysis::layer_shift_profile(model, perts.front().second.delta, images, layers);
  ctx.dir.write_text("reports/layer_shift.csv", analysis::to_csv(prof));
  plot::line_plot(prof.per_layer, "relative activation shift (" + perts.front().first + ")", "shift %",
                  ctx.dir.path("plots/layer_shift.png"));
  ctx.dir.artifact("plots/layer_shift.png");
  rep["layer_shift_perturbation"] = perts.front().first;
  try {
    rep["depth_spearman"] = metrics::round6(analysis::depth_monotonicity(prof));
  } catch (const UndefinedMetric&) {
    rep["depth_spearman"] = nullptr;
  }

  if (model.task() == Task::classification) {
    std::vector<std::pair<std::string, const Perturbation*>> rows;
    for (const auto& [n, p] : perts) rows.emplace_back(n, &p);
    const auto table = analysis::shift_vs_fooling_table(model, rows, images);
    ctx.dir.write_text("reports/shift_vs_fooling.csv", analysis::to_csv(table));
  }

  if (recorder) {
    const auto trace = analysis::correlation_trace(*recorder, model, analysis::final_conv_layer(model), images);
    ctx.dir.write_text("reports/correlation.csv", analysis::to_csv(trace));
    std::vector<std::pair<double, double>> pts;
    for (const auto& q : trace.points) pts.emplace_back(q.delta_norm, q.shift_norm);
    plot::scatter_plot(pts, "activation change vs perturbation response", "||f(d)||", "||f(x+d)-f(x)||",
                       ctx.dir.path("plots/correlation.png"));
    ctx.dir.artifact("plots/correlation.png");
    rep["correlation"] = {{"layer", trace.layer_id},
                          {"points", trace.points.size()},
                          {"pearson_r", trace.pearson_r ? ojson(metrics::round6(*trace.pearson_r)) : ojson(nullptr)},
                          {"degenerate", trace.degenerate},
                          {"uniform_fallback", trace.uniform_fallback}};
  }
  ctx.dir.write_json("reports/analysis.json", rep);
  ctx.log << rep.dump() << "\n";
  return 0;
}

// Consolidates eval reports of several runs into one table.
inline int cmd_compare(Context& ctx, const Inputs& in) {
  std::optional<std::string> model_id, weights_hash, test_set;
  ojson rows = ojson::array();
  std::set<std::string> seen;
  std::map<std::string, double> fooling;
  std::string csv = "run,perturbation,metric,clean,adversarial,gfr\n";
  for (const auto& run : in.runs) {
    const auto rp = run / "reports" / "eval.json";
    if (!fs::exists(rp)) throw Error("run '" + run.string() + "' has no reports/eval.json");
    ctx.dir.add_input("eval_report", rp);
    const auto j = nlohmann::json::parse(io::read_file(rp));
    const auto mid = j.at("model_id").get<std::string>();
    const auto wh = j.at("weights_hash").get<std::string>();
    const auto ts = j.at("test_set").get<std::string>();
    if (model_id && (*model_id != mid || *weights_hash != wh || *test_set != ts))
      throw ContractError("run '" + run.string() + "' evaluates a different victim or test set");
    model_id = mid;
    weights_hash = wh;
    test_set = ts;
    for (const auto& [name, rj] : j.at("perturbations").items()) {
      if (!seen.insert(name).second) continue;
      const auto r = metrics::MetricReport::from_json(rj);
      for (const auto& [metric, g] : r.gfr) {
        rows.push_back({{"run", run.string()},
                        {"perturbation", name},
                        {"metric", metric},
                        {"clean", r.clean.at(metric)},
                        {"adversarial", r.adversarial.at(metric)},
                        {"gfr", g}});
        csv += run.string() + "," + name + "," + metric + "," + analysis::fmt6(r.clean.at(metric)) + "," +
               analysis::fmt6(r.adversarial.at(metric)) + "," + analysis::fmt6(g) + "\n";
        fooling[name] = g;
      }
    }
  }
  ojson rep{{"model_id", *model_id}, {"test_set", *test_set}, {"rows", rows}};
  auto has = [&](const char* n) { return fooling.count(n) != 0; };
  if (has("none") && has("range") && has("data")) {
    rep["prior_ordering"] = {{"data_ge_range_minus_2pt", fooling["data"] >= fooling["range"] - 0.02},
                             {"range_minus_2pt_ge_none_minus_4pt", fooling["range"] - 0.02 >= fooling["none"] - 0.04}};
  }
  ctx.dir.write_json("reports/compare.json", rep);
  ctx.dir.write_text("reports/compare.csv", csv);
  ctx.log << csv;
  return 0;
}

inline int execute(const RunConfig& cfg, bool overwrite, std::ostream& log) {
  const Inputs in = preflight(cfg);
  RunDir dir(cfg.paths.output_dir, overwrite);
  Context ctx{cfg, dir, log};
  int rc = 0;
  if (cfg.command == "train-victim") rc = cmd_train_victim(ctx, in);
  else if (cfg.command == "craft") rc = cmd_craft(ctx, in);
  else if (cfg.command == "eval") rc = cmd_eval(ctx, in);
  else if (cfg.command == "defend") rc = cmd_defend(ctx, in);
  else if (cfg.command == "analyze") rc = cmd_analyze(ctx, in);
  else if (cfg.command == "compare") rc = cmd_compare(ctx, in);
  dir.finish(cfg);
  return rc;
}

// Desk datasets: desk10 (train/test), a substitute set (val) and toyseg
// (train/test), written under `root`.
inline void write_synthetic_datasets(const fs::path& root, std::uint64_t seed, std::size_t n_train = 3000,
                                     std::size_t n_test = 500, std::size_t n_sub = 200) {
  const auto tr = synth::desk10(n_train, mix_seed(seed, 1));
  const auto te = synth::desk10(n_test, mix_seed(seed, 2));
  write_dataset(root / "desk10", "desk10", {{"train", &tr}, {"test", &te}});
  const auto sub = synth::substitute(n_sub, mix_seed(seed, 3));
  write_dataset(root / "substitute", "substitute", {{"val", &sub}});
  const auto str = synth::toyseg(n_train / 3, mix_seed(seed, 4));
  const auto ste = synth::toyseg(n_test / 5, mix_seed(seed, 5));
  write_dataset(root / "toyseg", "toyseg", {{"train", &str}, {"test", &ste}});
}

}  // namespace gduap::run
