#include "stld/runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "stld/analysis.hpp"
#include "stld/dataset_io.hpp"

namespace stld {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> opt_num(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

// Reads a CSV with a header into rows keyed by column name.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw ValidationError("malformed row in " + path.string() + ": " + line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, std::max<std::size_t>(n, 1));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

fs::path seed_dir(const fs::path& run_dir, std::uint64_t seed) { return run_dir / ("seed_" + std::to_string(seed)); }

fs::path pseudo_path(const fs::path& run_dir, std::uint64_t seed, int t) {
  return seed_dir(run_dir, seed) / ("pseudo_r" + std::to_string(t) + ".csv");
}

std::string pseudo_csv(const PseudoStore& store) {
  std::ostringstream os;
  os << "id,landmark_index,x,y,landmark_confidence,confidence,round_estimated\n";
  for (const auto& [id, label] : store.entries())
    for (Index k = 0; k < label.points.rows(); ++k) {
      os << id << ',' << k << ',' << num(label.points(k, 0)) << ',' << num(label.points(k, 1)) << ',';
      if (label.landmark_confidence) os << num((*label.landmark_confidence)(k));
      os << ',' << num(label.confidence) << ',' << label.round_estimated << '\n';
    }
  return os.str();
}

PseudoStore read_pseudo(const fs::path& path) {
  std::map<int, std::vector<std::map<std::string, std::string>>> by_id;
  for (auto& row : read_csv(path)) by_id[std::stoi(row.at("id"))].push_back(std::move(row));
  std::map<int, PseudoLabel> entries;
  for (auto& [id, rows] : by_id) {
    PseudoLabel p;
    p.points.resize(static_cast<Index>(rows.size()), 2);
    Eigen::VectorXd lc(static_cast<Index>(rows.size()));
    bool has_lc = true;
    for (const auto& r : rows) {
      const int k = std::stoi(r.at("landmark_index"));
      require(k >= 0 && k < p.points.rows(), "bad landmark index in " + path.string());
      p.points(k, 0) = std::stod(r.at("x"));
      p.points(k, 1) = std::stod(r.at("y"));
      const auto c = opt_num(r.at("landmark_confidence"));
      has_lc = has_lc && c.has_value();
      if (c) lc(k) = *c;
    }
    if (has_lc) p.landmark_confidence = lc;
    p.confidence = opt_num(rows.front().at("confidence"));
    p.round_estimated = std::stoi(rows.front().at("round_estimated"));
    entries[id] = std::move(p);
  }
  return make_pseudo_store(std::move(entries));
}

std::string rounds_csv(const std::string& id, const std::string& strategy, std::uint64_t seed,
                       const std::vector<RoundLog>& logs) {
  std::ostringstream os;
  os << "run_id,strategy,seed,round,stage1_loss,stage2_loss,pseudo_noise_mean,selected,test_nme,test_auc,test_fr,"
        "sigma_or_p,lambda,pseudo_noise_median\n";
  for (const auto& l : logs) {
    os << id << ',' << strategy << ',' << seed << ',' << l.round << ',' << num(l.stage1_loss) << ','
       << num(l.stage2_loss) << ',' << num(l.pseudo_noise_mean) << ',';
    if (l.selected) os << *l.selected;
    os << ',' << num(l.test_nme) << ',' << num(l.test_auc) << ',' << num(l.test_fr) << ',' << num(l.granularity)
       << ',' << num(l.lambda) << ',' << num(l.pseudo_noise_median) << '\n';
  }
  return os.str();
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a64(read_text(p))); }

bool excluded_from_checksums(const fs::path& rel) {
  const std::string s = rel.generic_string();
  return s == "timing.csv" || s == "checksums.txt";
}

void write_checksums(const fs::path& run_dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), run_dir);
    if (!excluded_from_checksums(rel)) files.push_back(rel.generic_string());
  }
  std::sort(files.begin(), files.end());
  std::ostringstream os;
  for (const auto& f : files) os << file_hash(run_dir / f) << "  " << f << '\n';
  write_text(run_dir / "checksums.txt", os.str());
}

std::map<std::string, std::string> read_checksums(const fs::path& run_dir) {
  std::ifstream in(run_dir / "checksums.txt");
  if (!in) throw ValidationError("no checksums.txt in " + run_dir.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() < 19) continue;
    out[line.substr(18)] = line.substr(0, 16);
  }
  return out;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError("bad JSON in " + path.string() + ": " + e.what());
  }
}

bool degenerate_run(const ExperimentConfig& cfg) {
  return cfg.strategy.kind == Strategy::Kind::Stld && cfg.strategy.shrink && cfg.curriculum.degenerate();
}

}  // namespace

// ---------------------------------------------------------------------------
// Data

TaskSamples build_samples(const ExperimentConfig& cfg) {
  TaskSamples out;
  if (cfg.dataset_dir.empty()) {
    std::vector<Sample> all = generate_task(cfg.task, cfg.n_train, cfg.n_test, cfg.data_seed);
    out.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + cfg.n_train));
    out.test.assign(std::make_move_iterator(all.begin() + cfg.n_train), std::make_move_iterator(all.end()));
    return out;
  }
  StoredTask t = load_task(cfg.dataset_dir);
  require(task_to_json(t.config) == task_to_json(cfg.task),
          "config field 'task': differs from the generator config in " + cfg.dataset_dir);
  require(static_cast<int>(t.train.size()) == cfg.n_train, "config field 'data.n_train': dataset has " +
                                                               std::to_string(t.train.size()) + " training samples");
  require(static_cast<int>(t.test.size()) == cfg.n_test,
          "config field 'data.n_test': dataset has " + std::to_string(t.test.size()) + " test samples");
  out.train = std::move(t.train);
  out.test = std::move(t.test);
  return out;
}

Dataset build_dataset(const ExperimentConfig& cfg, const TaskSamples& samples, std::uint64_t seed) {
  return split_dataset(samples.train, samples.test, cfg.labeled_ratio, cfg.split_seed + seed, cfg.bias_knob);
}

// ---------------------------------------------------------------------------
// Runs

RunOutcome run_experiment(const ExperimentConfig& cfg, int jobs, std::ostream* log) {
  cfg.validate();
  RunOutcome res;
  res.run_id = run_id(cfg);
  res.dir = fs::path(cfg.output) / res.run_id;
  res.degenerate_curriculum = degenerate_run(cfg);
  fs::create_directories(res.dir);
  write_text(res.dir / "config.json", to_json(cfg).dump(2) + "\n");

  std::mutex log_mu;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mu);
    *log << "[" << res.run_id << "] " << msg << std::endl;
  };
  if (res.degenerate_curriculum) say("degenerate curriculum: every pseudo-label granularity equals the standard value");

  const TaskSamples samples = build_samples(cfg);
  const std::string strategy = cfg.strategy.name();
  std::vector<std::vector<RoundLog>> logs(cfg.seeds.size());

  parallel_for(cfg.seeds.size(), jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const Dataset data = build_dataset(cfg, samples, seed);
    RunResult r = run_strategy(data, cfg.strategy, cfg.run_settings(seed));
    const fs::path sd = seed_dir(res.dir, seed);
    fs::create_directories(sd);
    write_text(sd / "rounds.csv", rounds_csv(res.run_id, strategy, seed, r.logs));
    std::ostringstream split;
    split << "id,split\n";
    std::map<int, const char*> which;
    for (const auto& s : data.labeled) which[s.id] = "labeled";
    for (const auto& s : data.unlabeled) which[s.id] = "unlabeled";
    for (const auto& s : data.test) which[s.id] = "test";
    for (const auto& [id, w] : which) split << id << ',' << w << '\n';
    write_text(sd / "split.csv", split.str());
    for (std::size_t t = 0; t < r.pseudo_history.size(); ++t)
      write_text(pseudo_path(res.dir, seed, static_cast<int>(t)), pseudo_csv(r.pseudo_history[t]));
    save_checkpoint(r.warm_start, sd / "warm.ckpt");
    save_checkpoint(r.final_model, sd / "final.ckpt");
    say("seed " + std::to_string(seed) + " done, final test NME " + num(r.logs.back().test_nme));
    logs[i] = std::move(r.logs);
  });

  std::vector<double> nme, auc, fr, noise;
  std::ostringstream timing;
  timing << "seed,round,seconds\n";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const RoundLog& last = logs[i].back();
    nme.push_back(last.test_nme);
    auc.push_back(last.test_auc);
    fr.push_back(last.test_fr);
    if (last.pseudo_noise_mean) noise.push_back(*last.pseudo_noise_mean);
    for (const auto& l : logs[i]) timing << cfg.seeds[i] << ',' << l.round << ',' << num(l.seconds) << '\n';
  }
  std::ostringstream summary;
  summary << "metric,mean,std,n\n";
  auto row = [&](const char* name, const std::vector<double>& v) {
    if (!v.empty()) summary << name << ',' << num(mean_of(v)) << ',' << num(std_of(v)) << ',' << v.size() << '\n';
  };
  row("final_test_nme", nme);
  row("final_test_auc", auc);
  row("final_test_fr", fr);
  row("final_pseudo_noise_mean", noise);
  write_text(res.dir / "summary.csv", summary.str());
  write_text(res.dir / "timing.csv", timing.str());

  ordered_json status;
  status["code_version"] = kCodeVersion;
  status["run_id"] = res.run_id;
  status["strategy"] = strategy;
  status["seeds"] = cfg.seeds;
  status["degenerate_curriculum"] = res.degenerate_curriculum;
  status["auc_convention"] = "area under the CED on [0, cutoff] divided by cutoff, stored in [0, 1]";
  status["complete"] = true;
  write_text(res.dir / "status.json", status.dump(2) + "\n");
  write_checksums(res.dir);

  res.nme_mean = mean_of(nme);
  res.nme_std = std_of(nme);
  return res;
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

void check_axis(const ExperimentConfig& base, const std::string& axis) {
  if (axis == "threshold") {
    require(base.strategy.kind == Strategy::Kind::Threshold,
            "sweep axis 'threshold' needs strategy.kind threshold_select, got " + to_string(base.strategy.kind));
  } else if (axis == "sigma2" || axis == "p2") {
    const Pathway want = axis == "sigma2" ? Pathway::Heatmap : Pathway::Coordinate;
    require(base.pathway == want, "sweep axis '" + axis + "' needs pathway " + to_string(want));
    require(base.strategy.kind == Strategy::Kind::Stld && base.strategy.shrink,
            "sweep axis '" + axis + "' needs strategy.kind stld with shrink on");
  } else {
    throw ValidationError("unknown sweep axis '" + axis + "'; valid axes: threshold, sigma2, p2");
  }
}

}  // namespace

ExperimentConfig sweep_point(const ExperimentConfig& base, const std::string& axis, double value) {
  check_axis(base, axis);
  ExperimentConfig c = base;
  if (axis == "threshold") {
    c.strategy.tau = value;
  } else {
    const double term = c.curriculum.standard();
    c.curriculum.values = {value, 0.5 * (value + term), term};
    c.rounds = c.curriculum.rounds();
  }
  c.validate();
  return c;
}

std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<double>& values,
                            int jobs, std::ostream* log, std::optional<fs::path>* table_path) {
  base.validate();
  check_axis(base, axis);
  require(!values.empty(), "sweep: no values given");
  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    row.value = v;
    ExperimentConfig c;
    try {
      c = sweep_point(base, axis, v);
    } catch (const ValidationError& e) {
      row.status = std::string("skipped: ") + e.what();
      if (log) *log << "[sweep " << axis << "] value " << num(v) << " skipped: " << e.what() << std::endl;
      rows.push_back(row);
      continue;
    }
    const RunOutcome out = run_experiment(c, jobs, log);
    row.run_id = out.run_id;
    row.nme_mean = out.nme_mean;
    row.nme_std = out.nme_std;
    row.status = out.degenerate_curriculum ? "degenerate curriculum" : "ok";
    rows.push_back(row);
  }

  ordered_json key = to_json(base);
  key.erase("output");
  key["sweep_axis"] = axis;
  key["sweep_values"] = values;
  const fs::path table = fs::path(base.output) / ("sweep_" + axis + "_" + hex64(fnv1a64(key.dump())).substr(0, 12) + ".csv");
  fs::create_directories(table.parent_path());
  std::ostringstream os;
  os << "value,status,run_id,mean_final_nme,std_final_nme\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    os << num(r.value) << ',' << status << ',' << r.run_id << ',' << num(r.nme_mean) << ',' << num(r.nme_std) << '\n';
  }
  write_text(table, os.str());
  if (table_path) *table_path = table;
  return rows;
}

// ---------------------------------------------------------------------------
// Analyses

namespace {

struct LoadedRun {
  fs::path dir;
  ExperimentConfig cfg;
  std::string run_id;
  std::string strategy;
  TaskSamples samples;
};

LoadedRun load_run(const fs::path& dir) {
  require(fs::exists(dir / "config.json"), "not a run directory (no config.json): " + dir.string());
  require(fs::exists(dir / "status.json"), "run directory is incomplete (no status.json): " + dir.string());
  LoadedRun r;
  r.dir = dir;
  r.cfg = config_from_json(read_json(dir / "config.json"));
  const json status = read_json(dir / "status.json");
  r.run_id = status.at("run_id").get<std::string>();
  r.strategy = status.at("strategy").get<std::string>();
  return r;
}

void load_samples(LoadedRun& r) {
  if (r.samples.train.empty()) r.samples = build_samples(r.cfg);
}

std::map<int, LandmarkSet> hidden_of(const std::vector<Sample>& v) {
  std::map<int, LandmarkSet> out;
  for (const auto& s : v) out[s.id] = s.hidden_gt();
  return out;
}

void require_pseudo(const LoadedRun& r, std::uint64_t seed, int t) {
  if (!fs::exists(pseudo_path(r.dir, seed, t)))
    throw ValidationError("run " + r.run_id + " has no pseudo-labels for seed " + std::to_string(seed) + " round " +
                          std::to_string(t) + " (strategy " + r.strategy + ")");
}

std::string analyze_density(LoadedRun& run, const AnalysisOptions& opt, ordered_json& params) {
  params["bins"] = opt.bins;
  params["extent"] = run.cfg.task.grid;
  params["tau"] = opt.tau;
  params["direction"] = opt.reverse_kl ? "KL(group || unlabeled_gt)" : "KL(unlabeled_gt || group)";
  params["pseudo_round"] = 0;
  std::ostringstream os;
  os << "seed,group,landmark,kl\n";
  const double extent = run.cfg.task.grid;
  for (std::uint64_t seed : run.cfg.seeds) {
    require_pseudo(run, seed, 0);
    const Dataset data = build_dataset(run.cfg, run.samples, seed);
    const PseudoStore pseudo = read_pseudo(pseudo_path(run.dir, seed, 0));
    std::vector<LandmarkSet> anchor, labeled, all, confident;
    for (const auto& s : data.unlabeled) anchor.push_back(s.hidden_gt());
    for (const auto& s : data.labeled) labeled.push_back(*s.gt);
    for (const auto& [id, p] : pseudo.entries()) {
      all.push_back(p.points);
      if (p.confidence && *p.confidence >= opt.tau) confident.push_back(p.points);
    }
    const DensityMap a = density_map(anchor, opt.bins, extent);
    auto emit = [&](const char* group, const std::vector<LandmarkSet>& sets) {
      if (sets.empty()) {
        os << seed << ',' << group << ",mean,\n";
        return;
      }
      const DensityMap g = density_map(sets, opt.bins, extent);
      const KlResult kl = opt.reverse_kl ? kl_divergence(g, a) : kl_divergence(a, g);
      for (Index k = 0; k < kl.per_landmark.size(); ++k)
        os << seed << ',' << group << ',' << k << ',' << num(kl.per_landmark(k)) << '\n';
      os << seed << ',' << group << ",mean," << num(kl.mean) << '\n';
    };
    emit("labeled", labeled);
    emit("confident_pseudo", confident);
    emit("all_pseudo", all);
  }
  return os.str();
}

std::string analyze_histogram(LoadedRun& run, const AnalysisOptions& opt, ordered_json& params) {
  params["bins"] = opt.bins;
  params["range_px"] = opt.range_px;
  std::ostringstream os;
  os << "seed,round,bin,dx,dy,count\n";
  const double width = 2.0 * opt.range_px / opt.bins;
  for (std::uint64_t seed : run.cfg.seeds) {
    require_pseudo(run, seed, 0);
    const Dataset data = build_dataset(run.cfg, run.samples, seed);
    const auto gts = hidden_of(data.unlabeled);
    for (int t = 0; fs::exists(pseudo_path(run.dir, seed, t)); ++t) {
      const NoiseHistogram h = noise_histogram(read_pseudo(pseudo_path(run.dir, seed, t)), gts, opt.range_px, opt.bins);
      for (int r = 0; r < h.bins; ++r)
        for (int c = 0; c < h.bins; ++c)
          os << seed << ',' << t << ',' << r << '_' << c << ',' << num(-opt.range_px + (c + 0.5) * width) << ','
             << num(-opt.range_px + (r + 0.5) * width) << ',' << h.counts(r, c) << '\n';
      os << seed << ',' << t << ",overflow,,," << h.overflow << '\n';
    }
  }
  return os.str();
}

void forgetting_rows(std::ostringstream& os, LoadedRun& run, const std::string& series, int groups) {
  for (std::uint64_t seed : run.cfg.seeds) {
    require_pseudo(run, seed, 1);
    const Dataset data = build_dataset(run.cfg, run.samples, seed);
    const auto gts = hidden_of(data.unlabeled);
    for (int t = 1; fs::exists(pseudo_path(run.dir, seed, t)); ++t) {
      const PseudoStore used = read_pseudo(pseudo_path(run.dir, seed, t - 1));
      PredictionMap after;
      for (const auto& [id, p] : read_pseudo(pseudo_path(run.dir, seed, t)).entries()) after[id] = {p.points, {}};
      const auto bins = forgetting_curve(used, after, gts, groups);
      for (std::size_t b = 0; b < bins.size(); ++b)
        os << series << ',' << seed << ',' << t << ',' << b << ',' << bins[b].count << ',' << num(bins[b].noise_mean)
           << ',' << num(bins[b].delta_mean) << '\n';
    }
  }
}

std::string analyze_forgetting(LoadedRun& run, const AnalysisOptions& opt, ordered_json& params) {
  params["noise_bins"] = opt.groups;
  params["binning"] = "equal-count quantiles of pseudo-label noise";
  std::ostringstream os;
  os << "series,seed,round,bin,count,noise_mean,delta_mean\n";
  forgetting_rows(os, run, run.strategy, opt.groups);
  if (opt.compare) {
    LoadedRun other = load_run(*opt.compare);
    load_samples(other);
    params["comparator_run"] = other.run_id;
    const std::string name = other.strategy == run.strategy ? "compare:" + other.strategy : other.strategy;
    forgetting_rows(os, other, name, opt.groups);
  }
  return os.str();
}

std::string analyze_correlation(LoadedRun& run, const AnalysisOptions& opt, ordered_json& params) {
  GradientLoss loss;
  loss.p = 1.0;
  loss.sigma = run.cfg.curriculum.sigma_std;
  params["groups"] = opt.groups;
  params["grouping"] = "equal-count quantiles of the pseudo-label loss, group 0 = largest";
  params["snapshots"] = {"init (rebuilt from the run seed)", "final.ckpt"};
  params["pseudo_round"] = 0;
  params["loss"] = run.cfg.pathway == Pathway::Heatmap ? "heatmap mse" : "l1";
  params["layer"] = "last";
  std::ostringstream os;
  os << "seed,group,count,loss_mean,r\n";
  for (std::uint64_t seed : run.cfg.seeds) {
    require_pseudo(run, seed, 0);
    const fs::path ckpt = seed_dir(run.dir, seed) / "final.ckpt";
    require(fs::exists(ckpt), "missing checkpoint " + ckpt.string());
    const TinyModel final_model = load_checkpoint(ckpt);
    const std::vector<TinyModel> snapshots{
        init_model(final_model.pathway, final_model.dims, init_seed(seed, 0)), final_model};
    const Dataset data = build_dataset(run.cfg, run.samples, seed);
    const PseudoStore pseudo = read_pseudo(pseudo_path(run.dir, seed, 0));
    std::vector<LandmarkSet> gt, ps;
    for (const auto& s : data.unlabeled) {
      gt.push_back(s.hidden_gt());
      ps.push_back(pseudo.at(s.id).points);
    }
    const auto groups = gradient_correlation(snapshots, data.unlabeled, gt, ps, loss, opt.groups);
    for (std::size_t g = 0; g < groups.size(); ++g)
      os << seed << ',' << g << ',' << groups[g].count << ',' << num(groups[g].loss_mean) << ',' << num(groups[g].r)
         << '\n';
  }
  return os.str();
}

std::string list(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& k : v) s += (s.empty() ? "" : ", ") + k;
  return s;
}

}  // namespace

fs::path analyze(const fs::path& run_dir, const std::string& kind, const AnalysisOptions& opt) {
  const auto& kinds = analysis_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ValidationError("unknown analysis '" + kind + "'; valid analyses: " + list(kinds));
  require(opt.bins >= 1 && opt.groups >= 1 && opt.range_px > 0.0, "analysis options out of range");
  LoadedRun run = load_run(run_dir);
  load_samples(run);
  ordered_json params;
  params["analysis"] = kind;
  params["run_id"] = run.run_id;
  params["strategy"] = run.strategy;
  std::string csv;
  if (kind == "density_kl") csv = analyze_density(run, opt, params);
  else if (kind == "histogram") csv = analyze_histogram(run, opt, params);
  else if (kind == "forgetting") csv = analyze_forgetting(run, opt, params);
  else csv = analyze_correlation(run, opt, params);
  const fs::path out = run_dir / (run.run_id + "." + kind + ".csv");
  write_text(out, csv);
  write_text(run_dir / (run.run_id + "." + kind + ".json"), params.dump(2) + "\n");
  write_checksums(run_dir);
  return out;
}

// ---------------------------------------------------------------------------
// Plot data

std::vector<RoundRow> read_rounds(const fs::path& run_dir) {
  const LoadedRun run = load_run(run_dir);
  std::vector<RoundRow> out;
  for (std::uint64_t seed : run.cfg.seeds) {
    const fs::path p = seed_dir(run_dir, seed) / "rounds.csv";
    require(fs::exists(p), "missing " + p.string());
    for (const auto& r : read_csv(p)) {
      RoundRow row;
      row.seed = seed;
      row.round = std::stoi(r.at("round"));
      row.pseudo_noise_mean = opt_num(r.at("pseudo_noise_mean"));
      row.test_nme = std::stod(r.at("test_nme"));
      row.test_auc = std::stod(r.at("test_auc"));
      row.test_fr = std::stod(r.at("test_fr"));
      out.push_back(row);
    }
  }
  return out;
}

namespace {

// Accumulates (series, x) -> mean y, preserving first-seen order.
class SeriesMean {
 public:
  void add(const std::string& series, double x, double y) {
    const auto key = std::make_pair(series, x);
    if (!sums_.count(key)) order_.push_back(key);
    auto& [s, n] = sums_[key];
    s += y;
    ++n;
  }
  std::string csv() const {
    std::ostringstream os;
    os << "series,x,y\n";
    for (const auto& key : order_) {
      const auto& [s, n] = sums_.at(key);
      os << key.first << ',' << num(key.second) << ',' << num(s / n) << '\n';
    }
    return os.str();
  }

 private:
  std::vector<std::pair<std::string, double>> order_;
  std::map<std::pair<std::string, double>, std::pair<double, long>> sums_;
};

std::vector<std::map<std::string, std::string>> analysis_rows(const fs::path& run_dir, const std::string& kind) {
  const LoadedRun run = load_run(run_dir);
  const fs::path p = run_dir / (run.run_id + "." + kind + ".csv");
  if (!fs::exists(p))
    throw ValidationError("emit-plot " + kind + ": missing " + p.filename().string() + "; run `stld analyze " + kind +
                          " " + run_dir.string() + "` first");
  return read_csv(p);
}

}  // namespace

fs::path emit_plot_data(const std::vector<fs::path>& run_dirs, const std::string& kind, const fs::path& out_path) {
  const auto& kinds = plot_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ValidationError("unknown plot kind '" + kind + "'; valid kinds: " + list(kinds));
  require(!run_dirs.empty(), "emit-plot: no run directory given");
  SeriesMean sm;
  const fs::path& dir = run_dirs.front();
  if (kind == "rounds") {
    for (const auto& r : read_rounds(dir)) {
      sm.add("test_nme", r.round, r.test_nme);
      if (r.pseudo_noise_mean) sm.add("pseudo_noise", r.round, *r.pseudo_noise_mean);
    }
  } else if (kind == "ablation") {
    for (const auto& d : run_dirs) {
      const LoadedRun run = load_run(d);
      for (const auto& r : read_rounds(d)) sm.add(run.strategy, r.round, r.test_nme);
    }
  } else if (kind == "histogram") {
    for (const auto& r : analysis_rows(dir, kind)) {
      if (r.at("bin") == "overflow") continue;
      const std::string t = r.at("round");
      const double count = std::stod(r.at("count"));
      sm.add("dx_round" + t, std::stod(r.at("dx")), count);
      sm.add("dy_round" + t, std::stod(r.at("dy")), count);
    }
  } else if (kind == "forgetting") {
    for (const auto& r : analysis_rows(dir, kind))
      if (!r.at("delta_mean").empty())
        sm.add(r.at("series") + " t=" + r.at("round"), std::stod(r.at("bin")), std::stod(r.at("delta_mean")));
  } else if (kind == "correlation") {
    for (const auto& r : analysis_rows(dir, kind)) {
      const double g = std::stod(r.at("group"));
      if (!r.at("r").empty()) sm.add("r", g, std::stod(r.at("r")));
      sm.add("loss", g, std::stod(r.at("loss_mean")));
    }
  } else {
    for (const auto& r : analysis_rows(dir, kind))
      if (r.at("landmark") != "mean" && !r.at("kl").empty()) sm.add(r.at("group"), std::stod(r.at("landmark")), std::stod(r.at("kl")));
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_text(out_path, sm.csv());
  return out_path;
}

// ---------------------------------------------------------------------------
// Verification

VerifyReport verify(const fs::path& run_dir, bool rerun, int jobs) {
  VerifyReport rep;
  const auto sums = read_checksums(run_dir);
  for (const auto& [rel, hash] : sums) {
    ++rep.checked;
    const fs::path p = run_dir / rel;
    if (!fs::exists(p)) rep.missing.push_back(rel);
    else if (file_hash(p) != hash) rep.mismatched.push_back(rel);
  }
  if (!rerun) return rep;

  ExperimentConfig cfg = config_from_json(read_json(run_dir / "config.json"));
  const fs::path scratch = fs::temp_directory_path() / ("stld-verify-" + run_id(cfg) + "-" +
                                                        std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  fs::remove_all(scratch);
  cfg.output = scratch.string();
  const RunOutcome again = run_experiment(cfg, jobs);
  for (const auto& [rel, hash] : read_checksums(again.dir)) {
    ++rep.checked;
    if (rel == "config.json") {
      // Differs only in the output directory.
      json a = read_json(run_dir / rel), b = read_json(again.dir / rel);
      a.erase("output");
      b.erase("output");
      if (a != b) rep.mismatched.push_back("rerun:" + rel);
      continue;
    }
    const auto it = sums.find(rel);
    if (it == sums.end()) rep.missing.push_back(rel);
    else if (it->second != hash) rep.mismatched.push_back("rerun:" + rel);
  }
  fs::remove_all(scratch);
  return rep;
}

}  // namespace stld
