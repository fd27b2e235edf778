#include "soda/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "soda/behavior.hpp"
#include "soda/cli/manifest.hpp"
#include "soda/error.hpp"
#include "soda/log.hpp"
#include "soda/objective.hpp"
#include "soda/ope.hpp"
#include "soda/random.hpp"
#include "soda/simulator.hpp"
#include "soda/trainer.hpp"

namespace soda::cli {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_field(fields[i]);
  }
  out << '\n';
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_run_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create " + dir.string() + ": " + ec.message());
}

RunManifest begin_step(const std::string& command) {
  RunManifest m;
  m.command = command;
  m.started_at = utc_timestamp();
  return m;
}

void finish_step(RunManifest& m, const fs::path& run_dir) {
  m.finalize_id();
  m.finished_at = utc_timestamp();
  record_step(run_dir, m);
}

fs::path input_path(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("missing required input: ") + what);
  fs::path r = resolve_input(p);
  if (!fs::exists(r)) throw ConfigError(std::string(what) + " not found: " + p.string());
  return r;
}

std::string collection_name(const fs::path& root, const fs::path& checkpoint) {
  if (!fs::is_directory(root)) return checkpoint.parent_path().filename().string();
  std::string rel = fs::relative(checkpoint.parent_path(), root).generic_string();
  return rel.empty() || rel == "." ? fs::absolute(root).lexically_normal().filename().string() : rel;
}

EvalConfig load_eval_config(const std::optional<fs::path>& path, RunManifest& m) {
  EvalConfig cfg;
  if (path) {
    fs::path p = input_path(*path, "eval config");
    cfg = EvalConfig::from_kv(KeyValueFile::load(p));
    m.add_input(p);
  }
  cfg.validate();
  m.configs["eval"] = cfg.to_kv().serialize();
  return cfg;
}

struct Summary {
  double mean = 0.0, std = 0.0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::vector<std::string> action_headers() {
  std::vector<std::string> h;
  for (ActionId a = 0; a < kNumActions; ++a) h.push_back(action_label(a));
  return h;
}

// Settings recorded by `train` next to each checkpoint, if present.
std::optional<TrainConfig> sibling_train_config(const fs::path& checkpoint) {
  fs::path p = checkpoint.parent_path() / "train.conf";
  if (!fs::exists(p)) return std::nullopt;
  return TrainConfig::load(p);
}

TrainConfig apply_overrides(TrainConfig base, const TrainOverrides& o) {
  KeyValueFile kv;
  if (o.lambda) kv.set("lambda", format_number(*o.lambda));
  if (o.epsilon) kv.set("epsilon", format_number(*o.epsilon));
  if (o.learning_rate) kv.set("learning_rate", format_number(*o.learning_rate));
  if (o.quality) kv.set("quality", *o.quality);
  if (o.epochs) kv.set("epochs", std::to_string(*o.epochs));
  if (o.K) kv.set("K", std::to_string(*o.K));
  if (o.hidden) kv.set("hidden", std::to_string(*o.hidden));
  if (o.batch_size) kv.set("batch_size", std::to_string(*o.batch_size));
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (o.no_safety) kv.set("use_safety", "false");
  if (o.no_diversity) kv.set("use_diversity", "false");
  return TrainConfig::from_kv(kv, base);
}

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

std::vector<SweepAxis> parse_sweep(const std::vector<std::string>& specs) {
  const auto known = TrainConfig{}.to_kv().values();
  std::vector<SweepAxis> axes;
  for (const auto& spec : specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--sweep expects key=v1,v2,...: '" + spec + "'");
    SweepAxis axis{spec.substr(0, eq), {}};
    if (!known.count(axis.key)) throw ConfigError("--sweep: unknown train key '" + axis.key + "'");
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');) {
      if (!v.empty()) axis.values.push_back(v);
    }
    if (axis.values.empty()) throw ConfigError("--sweep: no values for '" + axis.key + "'");
    for (const auto& a : axes) {
      if (a.key == axis.key) throw ConfigError("--sweep: key '" + axis.key + "' given twice");
    }
    axes.push_back(std::move(axis));
  }
  return axes;
}

// Ground-truth filters over transitions of the evaluation dataset.
std::function<bool(const Transition&)> make_filter(const std::string& name, const Schema& schema) {
  auto feature = [&](const char* f) {
    auto idx = schema.index_of(f);
    if (!idx) throw ConfigError("filter '" + name + "' needs a feature named " + f);
    return *idx;
  };
  if (name == "all") return [](const Transition&) { return true; };
  if (name == "fluid-taken") return [](const Transition& tr) { return action_components(tr.action).fluid_bin > 0; };
  if (name == "vaso-taken") return [](const Transition& tr) { return action_components(tr.action).vaso_bin > 0; };
  if (name == "lactate>2") {
    std::size_t i = feature("Lactate");
    return [i](const Transition& tr) { return tr.state[i] > 2.0; };
  }
  if (name == "MAP<55") {
    std::size_t i = feature("MAP");
    return [i](const Transition& tr) { return tr.state[i] < 55.0; };
  }
  throw ConfigError("unknown filter '" + name + "' (expected all, fluid-taken, vaso-taken, lactate>2, MAP<55)");
}

std::string filter_slug(const std::string& name) {
  if (name == "lactate>2") return "lactate_gt_2";
  if (name == "MAP<55") return "map_lt_55";
  std::string s = name;
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

}  // namespace

std::vector<fs::path> find_checkpoints(const fs::path& root) {
  fs::path r = resolve_input(root);
  if (!fs::exists(r)) throw ConfigError("checkpoints not found: " + root.string());
  std::vector<fs::path> found;
  if (fs::is_regular_file(r)) {
    found.push_back(r);
  } else {
    for (const auto& e : fs::recursive_directory_iterator(r)) {
      if (e.is_regular_file() && e.path().filename() == "checkpoint.json") found.push_back(e.path());
    }
    std::sort(found.begin(), found.end());
  }
  if (found.empty()) throw ConfigError("no checkpoint.json under " + root.string());
  return found;
}

void cmd_simulate(const SimulateOptions& opt) {
  RunManifest m = begin_step("simulate");
  SimConfig cfg = SimConfig::defaults();
  if (opt.config) {
    fs::path p = input_path(*opt.config, "simulator config");
    cfg = SimConfig::load(p);
    m.add_input(p);
    m.configs["sim"] = read_text(p);
  } else {
    m.configs["sim"] = "";
  }
  cfg.validate();
  if (opt.n == 0) throw ConfigError("--n must be positive");
  const std::uint64_t seed = opt.seed.value_or(cfg.seed);
  m.seed = seed;
  make_run_dir(opt.out);

  struct Part {
    Split split;
    std::size_t n;
    const char* file;
  };
  const Part parts[] = {{Split::kTrain, opt.n, "train.jsonl"},
                        {Split::kValidation, opt.n_val, "val.jsonl"},
                        {Split::kTest, opt.n_test, "test.jsonl"}};
  for (const auto& part : parts) {
    if (part.n == 0) continue;
    Dataset d = simulate_dataset(cfg, part.n, derive_seed(seed, static_cast<std::uint64_t>(part.split)), part.split);
    const fs::path path = opt.out / part.file;
    save_dataset(d, path);
    m.add_output(opt.out, path);
    log_info("simulate: wrote " + std::to_string(part.n) + " trajectories to " + path.string());
  }
  finish_step(m, opt.out);
}

void cmd_fit_behavior(const FitBehaviorOptions& opt) {
  RunManifest m = begin_step("fit-behavior");
  fs::path data_path = input_path(opt.data, "dataset");
  Dataset data = load_dataset(data_path);
  m.add_input(data_path);
  std::vector<double> weights;
  if (opt.weights) {
    fs::path wp = input_path(*opt.weights, "distance weights");
    weights = load_distance_weights(wp, data.schema);
    m.add_input(wp);
  }
  if (!(opt.epsilon > 0.0 && opt.epsilon < 1.0)) throw ConfigError("--epsilon must lie in (0, 1)");
  std::ostringstream snap;
  snap << "k = " << opt.k << "\nepsilon = " << format_number(opt.epsilon)
       << "\nexclude_self = " << (opt.exclude_self ? "true" : "false") << "\n";
  m.configs["behavior"] = snap.str();

  BehaviorModel model = BehaviorModel::fit(data, opt.k, std::move(weights));
  make_run_dir(opt.out);
  const fs::path model_path = opt.out / "behavior.json";
  model.save(model_path);
  m.add_output(opt.out, model_path);

  BehaviorTable table = tabulate_behavior(model, data, opt.exclude_self, true, opt.threads);
  const fs::path cache_path = opt.out / "masks.jsonl";
  save_mask_cache(table, opt.epsilon, cache_path);
  m.add_output(opt.out, cache_path);
  log_info("fit-behavior: k=" + std::to_string(opt.k) + " over " + std::to_string(model.size()) + " states");
  finish_step(m, opt.out);
}

void cmd_train(const TrainCommandOptions& opt) {
  RunManifest m = begin_step("train");
  fs::path data_path = input_path(opt.data, "dataset");
  fs::path model_path = input_path(opt.behavior, "behavior model");
  TrainConfig base;
  if (opt.config) {
    fs::path p = input_path(*opt.config, "train config");
    base = TrainConfig::load(p);
    m.add_input(p);
  }
  base = apply_overrides(base, opt.overrides);
  const auto axes = parse_sweep(opt.sweep);

  Dataset data = load_dataset(data_path);
  BehaviorModel model = BehaviorModel::load(model_path);
  m.add_input(data_path);
  m.add_input(model_path);
  if (!(model.schema() == data.schema)) throw SchemaError("behavior model schema differs from the dataset schema");

  std::optional<BehaviorTable> cached;
  if (opt.masks) {
    fs::path p = input_path(*opt.masks, "mask cache");
    cached = load_mask_cache(p);
    m.add_input(p);
    if (cached->size() != data.num_transitions() || cached->k != model.k()) {
      throw ConfigError(p.string() + ": mask cache does not match the dataset and behavior model");
    }
  }
  std::optional<BehaviorTable> tables[2];  // indexed by exclude_self
  if (cached) tables[cached->exclude_self] = std::move(*cached);
  auto table_for = [&](bool exclude_self) -> const BehaviorTable& {
    auto& t = tables[exclude_self];
    if (!t) t = tabulate_behavior(model, data, exclude_self, false, opt.threads);
    return *t;
  };

  std::optional<Dataset> val;
  std::optional<BehaviorTable> val_table;
  TrainOptions topt;
  topt.eval = load_eval_config(opt.eval_config, m);
  if (opt.validation) {
    fs::path p = input_path(*opt.validation, "validation dataset");
    val = load_dataset(p);
    m.add_input(p);
    val_table = tabulate_behavior(model, *val, false, false, opt.threads);
    topt.validation = &*val;
    topt.validation_behavior = &*val_table;
  }
  topt.resume = opt.resume;
  topt.stop_after = opt.stop_after;

  // Cartesian product of the sweep axes; a single run when there are none.
  std::vector<std::vector<std::size_t>> grid{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<std::size_t>> next;
    for (const auto& g : grid) {
      for (std::size_t i = 0; i < axis.values.size(); ++i) {
        auto h = g;
        h.push_back(i);
        next.push_back(std::move(h));
      }
    }
    grid = std::move(next);
  }

  make_run_dir(opt.out);
  m.seed = base.seed;
  m.configs["train"] = base.to_kv().serialize();
  for (const auto& g : grid) {
    KeyValueFile kv;
    std::string name;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      kv.set(axes[a].key, axes[a].values[g[a]]);
      name += (name.empty() ? "" : "_") + axes[a].key + "-" + axes[a].values[g[a]];
    }
    TrainConfig cfg = TrainConfig::from_kv(kv, base);
    const fs::path dir = axes.empty() ? opt.out : opt.out / name;
    make_run_dir(dir);
    if (!axes.empty()) m.configs["train:" + name] = cfg.to_kv().serialize();

    topt.checkpoint_dir = dir;
    TrainState state = train(data, table_for(cfg.exclude_self), cfg, topt);
    {
      auto out = open_output(dir / "train.conf");
      out << cfg.to_kv().serialize();
    }
    for (const char* f : {"checkpoint.json", "train_state.json", "history.csv", "train.conf"}) {
      if (fs::exists(dir / f)) m.add_output(opt.out, dir / f);
    }
    log_info("train: " + std::to_string(state.epochs_done) + " epochs done in " + dir.string());
  }
  finish_step(m, opt.out);
}

void cmd_evaluate(const EvaluateOptions& opt) {
  RunManifest m = begin_step("evaluate");
  const auto checkpoints = find_checkpoints(opt.checkpoints);
  fs::path data_path = input_path(opt.data, "dataset");
  fs::path model_path = input_path(opt.behavior, "behavior model");
  EvalConfig cfg = load_eval_config(opt.config, m);
  Dataset data = load_dataset(data_path);
  BehaviorModel model = BehaviorModel::load(model_path);
  m.add_input(data_path);
  m.add_input(model_path);
  for (const auto& c : checkpoints) m.add_input(c);
  BehaviorTable table = tabulate_behavior(model, data, false, false, opt.threads);
  const double behavior_value = empirical_behavior_value(data, cfg.gamma);

  make_run_dir(opt.out);
  const fs::path metrics_path = opt.out / "metrics.csv";
  const fs::path summary_path = opt.out / "summary.csv";
  auto metrics = open_output(metrics_path);
  auto summary = open_output(summary_path);
  const std::vector<std::string> metric_names{"CWPDIS Value",
                                              "CE w/ Beh. Actions",
                                              "SymKL w/ Beh. Action Probabilities",
                                              "ESS",
                                              "SymKL btw pairs",
                                              "# Unseen Actions"};
  {
    std::vector<std::string> h{"collection", "lambda", "safety", "quality", "policy"};
    h.insert(h.end(), metric_names.begin(), metric_names.end());
    h.push_back("Kept");
    write_csv_row(metrics, h);
    std::vector<std::string> s{"collection", "lambda", "safety", "quality", "# Kept", "Behavior Value"};
    for (const auto& n : metric_names) {
      s.push_back(n + " mean");
      s.push_back(n + " std");
    }
    write_csv_row(summary, s);
  }

  std::cout << "behavior value " << format_number(behavior_value) << " over " << data.size() << " trajectories\n";
  for (const auto& ckpt : checkpoints) {
    PolicyCollection collection = load_collection(ckpt);
    if (!(collection.schema == data.schema)) throw SchemaError(ckpt.string() + ": schema differs from the dataset");
    const std::string name = collection_name(resolve_input(opt.checkpoints), ckpt);
    auto tc = sibling_train_config(ckpt);
    const std::string lambda = tc ? format_number(tc->use_diversity ? tc->lambda : 0.0) : "";
    const std::string safety = collection.use_safety ? "yes" : "no";
    const std::string quality = tc ? to_string(tc->quality) : "";

    CollectionEvaluation ev = evaluate_collection(collection, data, table, cfg);
    std::vector<std::vector<double>> kept_values(metric_names.size());
    for (std::size_t i = 0; i < ev.results.size(); ++i) {
      const OPEResult& r = ev.results[i];
      auto pair = ev.kept_pairwise_for(i);
      std::vector<std::optional<double>> vals{r.value,
                                              r.ce_vs_behavior,
                                              r.symkl_vs_behavior,
                                              r.ess,
                                              pair,
                                              static_cast<double>(r.unseen_action_count)};
      std::vector<std::string> row{name, lambda, safety, quality, std::to_string(i)};
      for (std::size_t k = 0; k < vals.size(); ++k) {
        row.push_back(vals[k] ? format_number(*vals[k]) : "");
        if (r.kept && vals[k]) kept_values[k].push_back(*vals[k]);
      }
      row.push_back(r.kept ? "1" : "0");
      write_csv_row(metrics, row);
    }
    std::vector<std::string> srow{name, lambda, safety, quality, std::to_string(ev.kept_count()),
                                  format_number(behavior_value)};
    std::cout << name << ": kept " << ev.kept_count() << "/" << ev.results.size();
    for (std::size_t k = 0; k < metric_names.size(); ++k) {
      if (kept_values[k].empty()) {
        srow.insert(srow.end(), {"", ""});
        continue;
      }
      Summary s = summarize(kept_values[k]);
      srow.push_back(format_number(s.mean));
      srow.push_back(format_number(s.std));
      std::cout << " | " << metric_names[k] << " " << s.mean << " ± " << s.std;
    }
    std::cout << "\n";
    write_csv_row(summary, srow);
  }
  metrics.close();
  summary.close();
  m.add_output(opt.out, metrics_path);
  m.add_output(opt.out, summary_path);
  finish_step(m, opt.out);
}

void cmd_report(const ReportOptions& opt) {
  RunManifest m = begin_step("report");
  const auto checkpoints = find_checkpoints(opt.checkpoints);
  fs::path data_path = input_path(opt.data, "dataset");
  fs::path model_path = input_path(opt.behavior, "behavior model");
  EvalConfig cfg = load_eval_config(opt.config, m);
  Dataset data = load_dataset(data_path);
  BehaviorModel model = BehaviorModel::load(model_path);
  m.add_input(data_path);
  m.add_input(model_path);
  for (const auto& c : checkpoints) m.add_input(c);

  std::vector<std::pair<std::string, std::function<bool(const Transition&)>>> filters;
  for (const auto& f : opt.filters) filters.emplace_back(f, make_filter(f, data.schema));
  {
    std::string snap = "filters =";
    for (const auto& f : opt.filters) snap += " " + f;
    m.configs["report"] = snap + "\ntop = " + std::to_string(opt.top) + "\n";
  }

  BehaviorTable table = tabulate_behavior(model, data, false, false, opt.threads);
  std::vector<const Transition*> flat;
  std::vector<const std::string*> stay;
  for (const auto& traj : data.trajectories) {
    for (const auto& tr : traj.transitions) {
      flat.push_back(&tr);
      stay.push_back(&traj.stay_id);
    }
  }
  const std::size_t N = flat.size();
  const auto headers = action_headers();

  make_run_dir(opt.out);
  const fs::path root = resolve_input(opt.checkpoints);
  for (const auto& ckpt : checkpoints) {
    PolicyCollection collection = load_collection(ckpt);
    if (!(collection.schema == data.schema)) throw SchemaError(ckpt.string() + ": schema differs from the dataset");
    const fs::path dir = checkpoints.size() == 1 ? opt.out : opt.out / collection_name(root, ckpt);
    make_run_dir(dir);

    CollectionEvaluation ev = evaluate_collection(collection, data, table, cfg);
    const auto dists = deployed_distributions(collection, data, table);
    std::vector<std::size_t> agents;
    for (std::size_t i = 0; i < ev.results.size(); ++i) {
      if (ev.results[i].kept) agents.push_back(i);
    }
    if (agents.empty()) log_warning("report: no policy of " + ckpt.string() + " reaches the ESS threshold");

    for (const auto& [fname, pred] : filters) {
      std::vector<std::size_t> sel;
      for (std::size_t i = 0; i < N; ++i) {
        if (pred(*flat[i])) sel.push_back(i);
      }
      const fs::path path = dir / ("action_probs_" + filter_slug(fname) + ".csv");
      auto out = open_output(path);
      std::vector<std::string> h{"source", "n_states"};
      h.insert(h.end(), headers.begin(), headers.end());
      write_csv_row(out, h);
      auto emit = [&](const std::string& source, auto&& probs_at) {
        std::vector<double> avg(kNumActions, 0.0);
        for (std::size_t i : sel) {
          const ActionDistribution p = probs_at(i);
          for (int a = 0; a < kNumActions; ++a) avg[a] += p[a];
        }
        std::vector<std::string> row{source, std::to_string(sel.size())};
        for (double v : avg) row.push_back(format_number(sel.empty() ? 0.0 : v / static_cast<double>(sel.size())));
        write_csv_row(out, row);
      };
      emit("behavior", [&](std::size_t i) { return table.probs(i); });
      for (std::size_t k : agents) {
        emit("policy_" + std::to_string(k), [&](std::size_t i) { return dists[k][i]; });
      }
      out.close();
      m.add_output(opt.out, path);
    }

    // Per-state mean pairwise symKL among kept agents (all agents when
    // fewer than two are kept).
    std::vector<std::size_t> group = agents;
    if (group.size() < 2) {
      group.resize(collection.size());
      std::iota(group.begin(), group.end(), std::size_t{0});
    }
    std::vector<double> score(N, 0.0);
    if (group.size() >= 2) {
      for (std::size_t i = 0; i < N; ++i) {
        const SafetyMask support = collection.use_safety ? table.mask(i, collection.epsilon) : SafetyMask::all();
        double sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < group.size(); ++a) {
          for (std::size_t b = a + 1; b < group.size(); ++b, ++pairs) {
            sum += sym_kl(dists[group[a]][i], dists[group[b]][i], support);
          }
        }
        score[i] = sum / static_cast<double>(pairs);
      }
    }
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    const fs::path top_path = dir / "top_diversity.csv";
    auto out = open_output(top_path);
    std::vector<std::string> h{"rank", "stay_id", "t", "pairwise_symkl", "source"};
    h.insert(h.end(), headers.begin(), headers.end());
    write_csv_row(out, h);
    for (std::size_t r = 0; r < std::min(opt.top, N); ++r) {
      const std::size_t i = order[r];
      auto emit = [&](const std::string& source, const ActionDistribution& p) {
        std::vector<std::string> row{std::to_string(r + 1), *stay[i], std::to_string(flat[i]->t),
                                     format_number(score[i]), source};
        for (double v : p) row.push_back(format_number(v));
        write_csv_row(out, row);
      };
      emit("behavior", table.probs(i));
      for (std::size_t k : group) emit("policy_" + std::to_string(k), dists[k][i]);
    }
    out.close();
    m.add_output(opt.out, top_path);
  }
  finish_step(m, opt.out);
}

int run(int argc, char** argv) {
  CLI::App app{"soda: diverse, safety-masked policy collections from logged treatment data"};
  app.require_subcommand(1);
  int threads = 1;
  bool quiet = false, verbose = false;
  app.add_option("--threads", threads, "Worker threads for neighbour searches")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "Only print errors");
  app.add_flag("-v,--verbose", verbose, "Progress messages");

  SimulateOptions sim;
  std::string sim_config;
  auto* s = app.add_subcommand("simulate", "Generate synthetic trajectories (train/val/test JSON Lines)");
  s->add_option("--config", sim_config, "Simulator config file");
  s->add_option("--n", sim.n, "Training trajectories");
  s->add_option("--n-val", sim.n_val, "Validation trajectories");
  s->add_option("--n-test", sim.n_test, "Test trajectories");
  s->add_option("--seed", sim.seed, "Seed (overrides the config)");
  s->add_option("--out", sim.out, "Run directory")->required();

  FitBehaviorOptions fit;
  std::string fit_weights;
  auto* f = app.add_subcommand("fit-behavior", "Fit the kNN behaviour model and mask cache");
  f->add_option("--data", fit.data, "Dataset (JSON Lines)")->required();
  f->add_option("--k", fit.k, "Neighbours per state");
  f->add_option("--weights", fit_weights, "Per-feature distance weights");
  f->add_option("--epsilon", fit.epsilon, "Mask threshold recorded in the cache");
  f->add_flag("--exclude-self", fit.exclude_self, "Leave each reference state out of its own neighbourhood");
  f->add_option("--out", fit.out, "Run directory")->required();

  TrainCommandOptions tr;
  std::string tr_config, tr_masks, tr_val, tr_eval;
  auto* t = app.add_subcommand("train", "Train a policy collection");
  t->add_option("--data", tr.data, "Training dataset")->required();
  t->add_option("--behavior", tr.behavior, "Behaviour model (behavior.json)")->required();
  t->add_option("--masks", tr_masks, "Mask cache for the training dataset");
  t->add_option("--config", tr_config, "Train config file");
  t->add_option("--validation", tr_val, "Validation dataset for per-epoch ESS/CWPDIS");
  t->add_option("--eval-config", tr_eval, "Eval config used for validation metrics");
  t->add_option("--lambda", tr.overrides.lambda, "Diversity weight");
  t->add_option("--epsilon", tr.overrides.epsilon, "Safety-mask threshold");
  t->add_option("--quality", tr.overrides.quality, "Quality term: symkl, ce or none");
  t->add_option("--epochs", tr.overrides.epochs, "Training epochs");
  t->add_option("--K", tr.overrides.K, "Policies in the collection");
  t->add_option("--hidden", tr.overrides.hidden, "Hidden units per layer");
  t->add_option("--batch-size", tr.overrides.batch_size, "Trajectories per minibatch");
  t->add_option("--learning-rate", tr.overrides.learning_rate, "Adam step size");
  t->add_option("--seed", tr.overrides.seed, "Training seed");
  t->add_flag("--no-safety", tr.overrides.no_safety, "Train and deploy without the safety mask");
  t->add_flag("--no-diversity", tr.overrides.no_diversity, "Drop the diversity term");
  t->add_option("--sweep", tr.sweep, "Grid axis key=v1,v2,... (repeatable)");
  t->add_flag("--resume", tr.resume, "Continue from train_state.json in --out");
  t->add_option("--stop-after", tr.stop_after, "Stop after this many completed epochs");
  t->add_option("--out", tr.out, "Run directory")->required();

  EvaluateOptions ev;
  std::string ev_config;
  auto* e = app.add_subcommand("evaluate", "Off-policy metrics for every checkpoint");
  e->add_option("--checkpoints", ev.checkpoints, "checkpoint.json or directory")->required();
  e->add_option("--behavior", ev.behavior, "Behaviour model (behavior.json)")->required();
  e->add_option("--data", ev.data, "Evaluation dataset")->required();
  e->add_option("--config", ev_config, "Eval config file");
  e->add_option("--out", ev.out, "Run directory")->required();

  ReportOptions rep;
  std::string rep_config;
  auto* r = app.add_subcommand("report", "Action-probability tables and most-diverse states");
  r->add_option("--checkpoints", rep.checkpoints, "checkpoint.json or directory")->required();
  r->add_option("--behavior", rep.behavior, "Behaviour model (behavior.json)")->required();
  r->add_option("--data", rep.data, "Evaluation dataset")->required();
  r->add_option("--config", rep_config, "Eval config file");
  r->add_option("--filter", rep.filters, "all, fluid-taken, vaso-taken, lactate>2, MAP<55 (repeatable)");
  r->add_option("--top", rep.top, "States in the diversity dump");
  r->add_option("--out", rep.out, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  set_log_level(quiet ? LogLevel::kQuiet : verbose ? LogLevel::kInfo : LogLevel::kWarning);
  auto opt_path = [](const std::string& p) { return p.empty() ? std::nullopt : std::optional<fs::path>(p); };

  try {
    if (*s) {
      sim.config = opt_path(sim_config);
      cmd_simulate(sim);
    } else if (*f) {
      fit.weights = opt_path(fit_weights);
      fit.threads = threads;
      cmd_fit_behavior(fit);
    } else if (*t) {
      tr.config = opt_path(tr_config);
      tr.masks = opt_path(tr_masks);
      tr.validation = opt_path(tr_val);
      tr.eval_config = opt_path(tr_eval);
      tr.threads = threads;
      cmd_train(tr);
    } else if (*e) {
      ev.config = opt_path(ev_config);
      ev.threads = threads;
      cmd_evaluate(ev);
    } else if (*r) {
      rep.config = opt_path(rep_config);
      rep.threads = threads;
      cmd_report(rep);
    }
  } catch (const ConfigError& err) {
    std::cerr << "soda: " << err.what() << "\n";
    return 2;
  } catch (const ParseError& err) {
    std::cerr << "soda: " << err.what() << "\n";
    return 2;
  } catch (const SchemaError& err) {
    std::cerr << "soda: " << err.what() << "\n";
    return 2;
  } catch (const InvalidInput& err) {
    std::cerr << "soda: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "soda: " << err.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace soda::cli
