#include "stld/selftrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "stld/heatmap.hpp"

namespace stld {

// ---------------------------------------------------------------------------
// Configuration

void StageConfig::validate() const {
  require(epochs >= 0, "stage.epochs must be >= 0");
  require(lr > 0.0 && std::isfinite(lr), "stage.lr must be > 0");
  require(batch >= 1, "stage.batch must be >= 1");
  require(decay_factor > 0.0 && decay_factor <= 1.0, "stage.decay_factor must be in (0, 1]");
  for (double d : decay_at) require(d > 0.0 && d <= 1.0, "stage.decay_at entries must be in (0, 1]");
  require(speedup_divisor >= 1, "stage.speedup_divisor must be >= 1");
}

double StageConfig::lr_at_epoch(int epoch, int total_epochs) const {
  double out = lr;
  for (double frac : decay_at) {
    const auto at = static_cast<int>(std::lround(frac * total_epochs));
    if (epoch >= at) out *= decay_factor;
  }
  return out;
}

std::uint64_t init_seed(std::uint64_t seed, int round) {
  return stream_seed(seed, 0x1a17, static_cast<std::uint64_t>(round));
}

std::uint64_t shuffle_seed(std::uint64_t seed, int round, int stage) {
  return stream_seed(seed, 0x5f0f, static_cast<std::uint64_t>(round) * 8 + static_cast<std::uint64_t>(stage));
}

// ---------------------------------------------------------------------------
// Training

Eigen::VectorXd target_vector(const TrainSpec& spec, const LandmarkSet& target, double granularity) {
  const int g = spec.dims.grid;
  if (spec.pathway == Pathway::Heatmap) return encode_heatmaps<double>(target, granularity, g, g).values;
  Eigen::VectorXd v(2 * target.rows());
  for (Index k = 0; k < target.rows(); ++k) {
    v(2 * k) = target(k, 0) / g;
    v(2 * k + 1) = target(k, 1) / g;
  }
  return v;
}

namespace {

struct Item {
  const Sample* sample;
  const LandmarkSet* target;
  double weight;
  double granularity;
  bool pseudo;
};

void shuffle(std::vector<Index>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

FitResult fit_stage(TinyModel init, const TrainSpec& spec, const std::vector<Sample>& labeled,
                    const std::vector<Sample>& unlabeled, const PseudoStore* pseudo,
                    const std::vector<int>& pseudo_ids, const PseudoTerm& term, int epochs,
                    std::uint64_t shuffle_seed_value) {
  TrainingScope scope;
  spec.stage.validate();
  require(epochs >= 0, "fit_stage: epochs must be >= 0");
  require(init.pathway == spec.pathway, "fit_stage: model pathway does not match training spec");
  require(term.weight >= 0.0, "fit_stage: pseudo weight must be >= 0");

  std::vector<Item> items;
  const double std_gran = spec.standard_granularity();
  for (const auto& s : labeled) {
    require(s.gt.has_value(), "fit_stage: labeled sample " + std::to_string(s.id) + " has no ground truth");
    items.push_back({&s, &*s.gt, 1.0, std_gran, false});
  }
  if (term.weight > 0.0 && !pseudo_ids.empty()) {
    require(pseudo != nullptr, "fit_stage: pseudo ids given without a pseudo store");
    std::unordered_map<int, const Sample*> by_id;
    for (const auto& s : unlabeled) by_id.emplace(s.id, &s);
    for (int id : pseudo_ids) {
      auto it = by_id.find(id);
      require(it != by_id.end(), "fit_stage: pseudo id " + std::to_string(id) + " is not an unlabeled sample");
      items.push_back({it->second, &pseudo->at(id).points, term.weight, term.granularity, true});
    }
  }
  if (epochs == 0) return {std::move(init), std::nullopt};
  require(!items.empty(), "fit_stage: nothing to train on");

  const auto n = static_cast<Index>(items.size());
  const Index in = init.input_size();
  const Index out = init.output_size();
  Eigen::MatrixXd x(in, n), y(out, n);
  Eigen::VectorXd w(n), gran(n);
  std::vector<bool> is_pseudo(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Item& it = items[static_cast<std::size_t>(i)];
    require(it.sample->image.size() == in, "fit_stage: raster size does not match model input");
    require(it.target->rows() == spec.dims.landmarks, "fit_stage: target landmark count mismatch");
    x.col(i) = flat(it.sample->image);
    y.col(i) = target_vector(spec, *it.target, it.granularity);
    w(i) = it.weight;
    gran(i) = it.granularity;
    is_pseudo[static_cast<std::size_t>(i)] = it.pseudo;
  }

  TinyModel model = std::move(init);
  AdamState adam = AdamState::for_model(model, spec.stage.lr);
  Rng rng = make_rng(shuffle_seed_value, 0x0bad);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const Index bs = spec.stage.batch;
  double epoch_loss = 0.0;

  Eigen::MatrixXd xb, yb, grad;
  for (int e = 0; e < epochs; ++e) {
    adam.lr = spec.stage.lr_at_epoch(e, epochs);
    shuffle(order, rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (Index start = 0; start < n; start += bs) {
      const Index b = std::min(bs, n - start);
      xb.resize(in, b);
      yb.resize(out, b);
      for (Index j = 0; j < b; ++j) {
        const Index src = order[static_cast<std::size_t>(start + j)];
        xb.col(j) = x.col(src);
        yb.col(j) = y.col(src);
      }
      // Per-sample factor applied to the sample's own mean loss.
      double scale_labeled = 1.0 / static_cast<double>(b), scale_pseudo = scale_labeled;
      if (term.per_source) {
        Index n_pseudo = 0;
        for (Index j = 0; j < b; ++j) n_pseudo += is_pseudo[static_cast<std::size_t>(order[static_cast<std::size_t>(start + j)])];
        scale_labeled = b > n_pseudo ? 1.0 / static_cast<double>(b - n_pseudo) : 0.0;
        scale_pseudo = n_pseudo > 0 ? 1.0 / static_cast<double>(n_pseudo) : 0.0;
      }
      ForwardCache cache = forward(model, xb);
      grad.resize(out, b);
      double batch_loss = 0.0;
      for (Index j = 0; j < b; ++j) {
        const Index src = order[static_cast<std::size_t>(start + j)];
        const double wi = w(src) * (is_pseudo[static_cast<std::size_t>(src)] ? scale_pseudo : scale_labeled);
        if (spec.pathway == Pathway::Heatmap) {
          const double cells = static_cast<double>(out);
          grad.col(j) = cache.output.col(j) - yb.col(j);
          batch_loss += wi * 0.5 * grad.col(j).squaredNorm() / cells;
          grad.col(j) *= wi / cells;
        } else {
          const LossGrad lg = lp_loss(cache.output.col(j), yb.col(j), gran(src));
          batch_loss += wi * lg.loss;
          grad.col(j) = lg.grad * wi;
        }
      }
      const Gradients g = backward(model, cache, grad);
      adam_step(adam, model, g);
      loss_sum += batch_loss;
      ++batches;
    }
    epoch_loss = loss_sum / batches;
  }
  if (!model.all_finite()) throw RuntimeError("fit_stage: parameters diverged to non-finite values");
  return {std::move(model), epoch_loss};
}

FitResult train_supervised(const std::vector<Sample>& labeled, TinyModel model_init, const TrainSpec& spec,
                           std::uint64_t shuffle_seed_value) {
  require(!labeled.empty(), "train_supervised: empty labeled set");
  return fit_stage(std::move(model_init), spec, labeled, {}, nullptr, {}, PseudoTerm{}, spec.stage.epochs,
                   shuffle_seed_value);
}

int pretrain_epochs(const StageConfig& stage, int t) {
  if (t <= 1 || !stage.speedup) return stage.epochs;
  return std::max(1, stage.epochs / stage.speedup_divisor);
}

FitResult pseudo_pretrain(const std::vector<Sample>& unlabeled, const PseudoStore& pseudo, TinyModel init,
                          const TrainSpec& spec, int epochs, std::uint64_t shuffle_seed_value) {
  require(!pseudo.empty(), "pseudo_pretrain: empty pseudo-labeled set");
  for (const auto& s : unlabeled)
    require(pseudo.contains(s.id), "pseudo_pretrain: no pseudo-label for unlabeled id " + std::to_string(s.id));
  return fit_stage(std::move(init), spec, {}, unlabeled, &pseudo, pseudo.ids(),
                   PseudoTerm{1.0, spec.standard_granularity()}, epochs, shuffle_seed_value);
}

FitResult mixed_train(TinyModel theta_pre, const std::vector<Sample>& labeled,
                      const std::vector<Sample>& unlabeled, const PseudoStore& pseudo, int t, int T,
                      const Curriculum& curriculum, const TrainSpec& spec, std::uint64_t shuffle_seed_value) {
  require(curriculum.kind == spec.pathway, "mixed_train: curriculum is for the " + to_string(curriculum.kind) +
                                               " pathway but the model is " + to_string(spec.pathway));
  require(t >= 1 && t <= T, "mixed_train: t must be in [1, T]");
  require(curriculum.rounds() == T, "mixed_train: curriculum length must be T - 1");
  require(curriculum.standard() == spec.standard_granularity(),
          "mixed_train: curriculum terminal value differs from the standard granularity");
  PseudoTerm term;
  if (t >= 2) term = {lambda_weight(t, T, curriculum.lambda_sub), granularity_at(curriculum, t), spec.stage.per_source};
  return fit_stage(std::move(theta_pre), spec, labeled, unlabeled, &pseudo, pseudo.ids(), term,
                   spec.stage.epochs, shuffle_seed_value);
}

// ---------------------------------------------------------------------------
// Selection and estimation

std::vector<int> select_confident(const PseudoStore& pseudo, const SelectionRule& rule) {
  std::vector<std::pair<double, int>> conf;
  for (const auto& [id, label] : pseudo.entries()) {
    if (!label.confidence)
      throw ValidationError(
          "select_confident: no confidence available (coordinate regression does not output confidence)");
    conf.emplace_back(*label.confidence, id);
  }
  std::vector<int> out;
  if (rule.kind == SelectionRule::Kind::Threshold) {
    for (const auto& [c, id] : conf)
      if (c >= rule.value) out.push_back(id);
  } else {
    require(rule.value >= 0.0 && rule.value <= 100.0, "select_confident: percentile must be in [0, 100]");
    std::stable_sort(conf.begin(), conf.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const auto k = static_cast<std::size_t>(std::llround(rule.value / 100.0 * static_cast<double>(conf.size())));
    for (std::size_t i = 0; i < std::min(k, conf.size()); ++i) out.push_back(conf[i].second);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

template <typename Fn>
void for_each_prediction(const TinyModel& model, const std::vector<Sample>& samples, Fn&& fn) {
  const Index chunk = 128;
  const auto n = static_cast<Index>(samples.size());
  for (Index start = 0; start < n; start += chunk) {
    const Index b = std::min(chunk, n - start);
    Eigen::MatrixXd x(model.input_size(), b);
    for (Index j = 0; j < b; ++j) {
      const Sample& s = samples[static_cast<std::size_t>(start + j)];
      require(s.image.size() == model.input_size(), "estimate: raster size does not match model input");
      x.col(j) = flat(s.image);
    }
    const Eigen::MatrixXd y = predict(model, x);
    for (Index j = 0; j < b; ++j) fn(samples[static_cast<std::size_t>(start + j)], y.col(j));
  }
}

Prediction decode_output(const TinyModel& model, const Eigen::Ref<const Eigen::VectorXd>& y) {
  const int g = model.dims.grid, nl = model.dims.landmarks;
  Prediction p;
  if (model.pathway == Pathway::Heatmap) {
    const HeatmapStack hs = HeatmapStack::from_flat(y, nl, g, g);
    Decoded d = decode_heatmaps(hs);
    p.points = std::move(d.points);
    p.landmark_confidence = std::move(d.confidence);
  } else {
    p.points.resize(nl, 2);
    for (int k = 0; k < nl; ++k) {
      p.points(k, 0) = y(2 * k) * g;
      p.points(k, 1) = y(2 * k + 1) * g;
    }
  }
  return p;
}

}  // namespace

PredictionMap estimate(const TinyModel& model, const std::vector<Sample>& samples) {
  TrainingScope scope;
  PredictionMap out;
  for_each_prediction(model, samples,
                      [&](const Sample& s, const auto& y) { out.emplace(s.id, decode_output(model, y)); });
  return out;
}

std::vector<LandmarkSet> predict_points(const TinyModel& model, const std::vector<Sample>& samples) {
  std::vector<LandmarkSet> out;
  out.reserve(samples.size());
  for_each_prediction(model, samples,
                      [&](const Sample&, const auto& y) { out.push_back(decode_output(model, y).points); });
  return out;
}

// ---------------------------------------------------------------------------
// Strategies

std::string to_string(Strategy::Kind k) {
  switch (k) {
    case Strategy::Kind::SupervisedOnly: return "supervised_only";
    case Strategy::Kind::Naive: return "naive";
    case Strategy::Kind::Threshold: return "threshold_select";
    case Strategy::Kind::Percentile: return "percentile_curriculum";
    case Strategy::Kind::LinearWarmup: return "linear_warmup";
    case Strategy::Kind::Stld: return "stld";
  }
  return "unknown";
}

Strategy::Kind strategy_kind_from_string(const std::string& s) {
  for (auto k : {Strategy::Kind::SupervisedOnly, Strategy::Kind::Naive, Strategy::Kind::Threshold,
                 Strategy::Kind::Percentile, Strategy::Kind::LinearWarmup, Strategy::Kind::Stld})
    if (to_string(k) == s) return k;
  throw ValidationError("strategy.kind '" + s +
                        "' is not one of supervised_only, naive, threshold_select, percentile_curriculum, "
                        "linear_warmup, stld");
}

std::string Strategy::name() const {
  std::ostringstream os;
  os << to_string(kind);
  if (kind == Kind::Threshold) os << "(tau=" << tau << ")";
  if (kind == Kind::Stld) os << "(pp=" << (pseudo_pretrain ? "on" : "off") << " shrink=" << (shrink ? "on" : "off") << ")";
  return os.str();
}

void Strategy::validate(Pathway pathway) const {
  if (uses_confidence() && pathway == Pathway::Coordinate)
    throw ValidationError("strategy." + to_string(kind) +
                          ": no confidence available on the coordinate pathway; selection needs heatmaps");
  if (kind == Kind::Threshold) require(tau >= 0.0 && tau <= 1.0, "strategy.tau must be in [0, 1]");
  if (kind == Kind::Percentile) {
    require(!percentile_steps.empty(), "strategy.percentile_steps must be nonempty");
    for (std::size_t i = 0; i < percentile_steps.size(); ++i) {
      require(percentile_steps[i] > 0.0 && percentile_steps[i] <= 100.0,
              "strategy.percentile_steps must be in (0, 100]");
      if (i > 0)
        require(percentile_steps[i] > percentile_steps[i - 1], "strategy.percentile_steps must be increasing");
    }
    require(percentile_steps.back() == 100.0, "strategy.percentile_steps must end at 100");
  }
}

double percentile_at(const std::vector<double>& steps, int t, int T) {
  require(!steps.empty(), "percentile_at: empty steps");
  require(t >= 1 && t <= T, "percentile_at: t must be in [1, T]");
  const long idx = static_cast<long>(steps.size()) - T + (t - 1);
  return steps[static_cast<std::size_t>(std::max(0L, idx))];
}

bool RoundLog::same_outcome(const RoundLog& o) const {
  return round == o.round && stage1_loss == o.stage1_loss && stage2_loss == o.stage2_loss &&
         pseudo_noise_mean == o.pseudo_noise_mean && pseudo_noise_median == o.pseudo_noise_median &&
         selected == o.selected && test_nme == o.test_nme && test_auc == o.test_auc && test_fr == o.test_fr &&
         granularity == o.granularity && lambda == o.lambda;
}

std::pair<double, double> pseudo_noise(const PseudoStore& pseudo, const std::vector<Sample>& unlabeled) {
  std::vector<double> err;
  err.reserve(unlabeled.size());
  for (const auto& s : unlabeled)
    err.push_back((pseudo.at(s.id).points - s.hidden_gt()).rowwise().norm().mean());
  require(!err.empty(), "pseudo_noise: no unlabeled samples");
  const double mean = std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(err.size());
  std::sort(err.begin(), err.end());
  const std::size_t m = err.size() / 2;
  const double median = err.size() % 2 ? err[m] : 0.5 * (err[m - 1] + err[m]);
  return {mean, median};
}

namespace {

void evaluate_test(RoundLog& log, const TinyModel& model, const Dataset& data, const RunSettings& rs) {
  const auto preds = predict_points(model, data.test);
  std::vector<LandmarkSet> gts;
  gts.reserve(data.test.size());
  for (const auto& s : data.test) gts.push_back(*s.gt);
  const NmeResult r = nme(preds, gts, rs.normalizer);
  const std::vector<double> per(r.per_sample.data(), r.per_sample.data() + r.per_sample.size());
  const AucFr af = auc_fr(per, rs.auc_cutoff);
  log.test_nme = r.mean;
  log.test_auc = af.auc;
  log.test_fr = af.fr;
}

}  // namespace

RunResult run_strategy(const Dataset& data, const Strategy& strategy, const RunSettings& rs) {
  using Clock = std::chrono::steady_clock;
  const TrainSpec& spec = rs.spec;
  strategy.validate(spec.pathway);
  spec.stage.validate();
  require(rs.rounds >= 1, "rounds must be >= 1");
  require(!data.labeled.empty(), "run_strategy: empty labeled split");
  require(!data.test.empty(), "run_strategy: empty test split");
  if (strategy.kind == Strategy::Kind::Stld && strategy.shrink) {
    require(rs.curriculum.kind == spec.pathway, "curriculum pathway does not match the model pathway");
    require(rs.curriculum.rounds() == rs.rounds, "curriculum must have rounds - 1 values");
  }
  const bool semi = strategy.kind != Strategy::Kind::SupervisedOnly;
  require(!semi || !data.unlabeled.empty(), "run_strategy: empty unlabeled split");

  RunResult res;
  auto t0 = Clock::now();
  auto fresh = [&](int round) { return init_model(spec.pathway, spec.dims, init_seed(rs.seed, round)); };

  FitResult warm = train_supervised(data.labeled, fresh(0), spec, shuffle_seed(rs.seed, 0, 2));
  res.warm_start = warm.model;

  if (!semi) {
    RoundLog log;
    log.round = 1;
    log.stage2_loss = warm.final_loss;
    evaluate_test(log, warm.model, data, rs);
    log.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    res.logs.push_back(log);
    res.final_model = std::move(warm.model);
    return res;
  }

  res.pseudo_history.push_back(
      update_pseudo(PseudoStore(data.unlabeled_ids()), estimate(warm.model, data.unlabeled), 0, strategy.aggregate));

  const double std_gran = spec.standard_granularity();
  const std::vector<int> all_ids = data.unlabeled_ids();
  std::optional<TinyModel> prev_pre;
  TinyModel model;

  for (int t = 1; t <= rs.rounds; ++t) {
    t0 = Clock::now();
    const PseudoStore& store = res.pseudo_history.back();
    RoundLog log;
    log.round = t;
    FitResult stage2;
    auto train_fresh_on = [&](const std::vector<int>& ids, double weight) {
      return fit_stage(fresh(t), spec, data.labeled, data.unlabeled, &store, ids, PseudoTerm{weight, std_gran},
                       spec.stage.epochs, shuffle_seed(rs.seed, t, 2));
    };

    switch (strategy.kind) {
      case Strategy::Kind::Naive:
        stage2 = train_fresh_on(all_ids, 1.0);
        log.granularity = std_gran;
        log.lambda = 1.0;
        break;
      case Strategy::Kind::Threshold:
      case Strategy::Kind::Percentile: {
        const SelectionRule rule = strategy.kind == Strategy::Kind::Threshold
                                       ? SelectionRule::threshold(strategy.tau)
                                       : SelectionRule::top_percentile(percentile_at(strategy.percentile_steps, t, rs.rounds));
        const std::vector<int> chosen = select_confident(store, rule);
        stage2 = train_fresh_on(chosen, 1.0);
        log.selected = static_cast<long>(chosen.size());
        log.granularity = std_gran;
        log.lambda = 1.0;
        break;
      }
      case Strategy::Kind::LinearWarmup: {
        const double lam = rs.rounds == 1 ? 1.0 : 0.1 + 0.9 * (t - 1) / static_cast<double>(rs.rounds - 1);
        stage2 = train_fresh_on(all_ids, lam);
        log.granularity = std_gran;
        log.lambda = lam;
        break;
      }
      case Strategy::Kind::Stld: {
        TinyModel init2;
        if (strategy.pseudo_pretrain) {
          const bool resume = t > 1 && spec.stage.speedup && prev_pre.has_value();
          FitResult pre = pseudo_pretrain(data.unlabeled, store, resume ? *prev_pre : fresh(t), spec,
                                          pretrain_epochs(spec.stage, resume ? t : 1), shuffle_seed(rs.seed, t, 1));
          log.stage1_loss = pre.final_loss;
          prev_pre = pre.model;
          init2 = std::move(pre.model);
        } else {
          init2 = fresh(t);
        }
        if (strategy.shrink) {
          stage2 = mixed_train(std::move(init2), data.labeled, data.unlabeled, store, t, rs.rounds, rs.curriculum,
                               spec, shuffle_seed(rs.seed, t, 2));
          if (t >= 2) log.granularity = granularity_at(rs.curriculum, t);
          log.lambda = lambda_weight(t, rs.rounds, rs.curriculum.lambda_sub);
        } else {
          stage2 = fit_stage(std::move(init2), spec, data.labeled, data.unlabeled, &store, all_ids,
                             PseudoTerm{1.0, std_gran}, spec.stage.epochs, shuffle_seed(rs.seed, t, 2));
          log.granularity = std_gran;
          log.lambda = 1.0;
        }
        break;
      }
      case Strategy::Kind::SupervisedOnly:
        break;
    }

    model = std::move(stage2.model);
    log.stage2_loss = stage2.final_loss;
    PseudoStore next = update_pseudo(store, estimate(model, data.unlabeled), t, strategy.aggregate);
    const auto [mean, median] = pseudo_noise(next, data.unlabeled);
    log.pseudo_noise_mean = mean;
    log.pseudo_noise_median = median;
    evaluate_test(log, model, data, rs);
    log.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    res.logs.push_back(log);
    res.pseudo_history.push_back(std::move(next));
  }
  res.final_model = std::move(model);
  return res;
}

}  // namespace stld
