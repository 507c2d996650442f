#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stld/config.hpp"
#include "stld/dataset_io.hpp"
#include "stld/runner.hpp"

namespace {

using nlohmann::json;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int jobs = 1;
  std::string config;
};

// Leftover "--key value" / "--key=value" arguments become config overrides.
json load_doc(const Globals& g, const std::vector<std::string>& extras) {
  json doc = json::object();
  if (!g.config.empty()) {
    std::ifstream in(g.config);
    if (!in) throw stld::ValidationError("cannot open config file " + g.config);
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw stld::ValidationError("config file " + g.config + " is not valid JSON: " + e.what());
    }
  }
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0) throw stld::ValidationError("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      stld::apply_override(doc, a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw stld::ValidationError("override " + a + " has no value");
      stld::apply_override(doc, a.substr(2), extras[++i]);
    }
  }
  return doc;
}

stld::ExperimentConfig resolve(const Globals& g, const std::vector<std::string>& extras) {
  json doc = load_doc(g, extras);
  if (g.seed) doc["seeds"] = {*g.seed};
  if (g.out) doc["output"] = *g.out;
  stld::ExperimentConfig cfg = stld::config_from_json(doc);
  cfg.validate();
  return cfg;
}

std::vector<double> parse_values(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw stld::ValidationError("--values: '" + cell + "' is not a number");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-training landmark detection experiments on synthetic tasks"};
  app.require_subcommand(1);
  Globals g;
  // Global flags are accepted before or after the subcommand name.
  auto add_globals = [&g](CLI::App* a) {
    a->add_option("--seed", g.seed, "Run seed (replaces the config's seed list); data seed for gen-data");
    a->add_option("--out", g.out, "Output directory (runs root, or dataset directory for gen-data)");
    a->add_option("--jobs", g.jobs, "Parallel workers for seeds")->check(CLI::PositiveNumber);
    a->add_option("--config", g.config, "Experiment config JSON");
  };
  add_globals(&app);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  gen->allow_extras();

  auto* run = app.add_subcommand("run", "Run an experiment for every configured seed");
  run->allow_extras();

  auto* sw = app.add_subcommand("sweep", "One run per value along a sweep axis");
  std::string axis, values;
  sw->add_option("--axis", axis, "threshold | sigma2 | p2")->required();
  sw->add_option("--values", values, "Comma-separated values")->required();
  sw->allow_extras();

  auto* an = app.add_subcommand("analyze", "Run an analysis over a finished run directory");
  std::string an_kind, an_dir;
  stld::AnalysisOptions opt;
  std::string compare;
  an->add_option("kind", an_kind, "density_kl | histogram | forgetting | correlation")->required();
  an->add_option("run_dir", an_dir, "Run directory")->required();
  an->add_option("--bins", opt.bins, "Density / histogram bins");
  an->add_option("--range", opt.range_px, "Histogram range in pixels");
  an->add_option("--groups", opt.groups, "Quantile groups for forgetting / correlation");
  an->add_option("--tau", opt.tau, "Confidence threshold for the confident_pseudo group");
  an->add_flag("--reverse-kl", opt.reverse_kl, "Compute KL(group || anchor)");
  an->add_option("--compare", compare, "Comparator run directory for forgetting");

  auto* ep = app.add_subcommand("emit-plot", "Write long-format plot data (series,x,y)");
  std::string ep_kind, ep_output;
  std::vector<std::string> ep_dirs;
  ep->add_option("kind", ep_kind, "rounds | ablation | histogram | forgetting | correlation | density_kl")->required();
  ep->add_option("run_dirs", ep_dirs, "Run directories (several for ablation)")->required();
  ep->add_option("-o,--output", ep_output, "Output CSV (default <run_dir>/plot_<kind>.csv)");

  auto* vf = app.add_subcommand("verify", "Recompute checksums of a run directory");
  std::string vf_dir;
  bool rerun = false;
  vf->add_option("run_dir", vf_dir, "Run directory")->required();
  vf->add_flag("--rerun", rerun, "Also re-execute the config and compare artifacts");

  for (auto* sub : {gen, run, sw, an, ep, vf}) add_globals(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      json doc = load_doc(g, gen->remaining());
      if (g.seed) doc["data"]["seed"] = *g.seed;
      const stld::ExperimentConfig cfg = stld::config_from_json(doc);
      cfg.task.validate();
      if (!g.out) throw stld::ValidationError("gen-data needs --out <dataset directory>");
      stld::StoredTask t;
      t.config = cfg.task;
      t.seed = cfg.data_seed;
      const stld::TaskSamples s = stld::build_samples(cfg);
      t.train = s.train;
      for (const auto& x : s.test) t.test.push_back(x.with_gt(x.hidden_gt()));
      stld::save_task(*g.out, t);
      std::cout << *g.out << "\n";
    } else if (*run) {
      const auto cfg = resolve(g, run->remaining());
      const auto res = stld::run_experiment(cfg, g.jobs, &std::cerr);
      std::cout << res.dir.string() << "\n";
    } else if (*sw) {
      const auto cfg = resolve(g, sw->remaining());
      std::optional<std::filesystem::path> table;
      const auto rows = stld::sweep(cfg, axis, parse_values(values), g.jobs, &std::cerr, &table);
      for (const auto& r : rows)
        std::cerr << r.value << ": " << r.status << (r.nme_mean ? " mean NME " + std::to_string(*r.nme_mean) : "")
                  << "\n";
      std::cout << table->string() << "\n";
    } else if (*an) {
      if (!compare.empty()) opt.compare = compare;
      std::cout << stld::analyze(an_dir, an_kind, opt).string() << "\n";
    } else if (*ep) {
      std::vector<std::filesystem::path> dirs(ep_dirs.begin(), ep_dirs.end());
      const std::filesystem::path out =
          ep_output.empty() ? dirs.front() / ("plot_" + ep_kind + ".csv") : std::filesystem::path(ep_output);
      std::cout << stld::emit_plot_data(dirs, ep_kind, out).string() << "\n";
    } else if (*vf) {
      const auto rep = stld::verify(vf_dir, rerun, g.jobs);
      for (const auto& m : rep.missing) std::cerr << "missing: " << m << "\n";
      for (const auto& m : rep.mismatched) std::cerr << "mismatch: " << m << "\n";
      std::cout << (rep.ok() ? "ok" : "FAILED") << " (" << rep.checked << " files checked)\n";
      return rep.ok() ? 0 : 2;
    }
  } catch (const stld::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
