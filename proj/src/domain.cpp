#include "stld/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace stld {

namespace {
thread_local int training_depth = 0;
std::atomic<std::uint64_t> measurement_reads{0};
}  // namespace

TrainingScope::TrainingScope() { ++training_depth; }
TrainingScope::~TrainingScope() { --training_depth; }
bool TrainingScope::active() { return training_depth > 0; }

std::uint64_t hidden_gt_reads() { return measurement_reads.load(); }

const LandmarkSet& Sample::hidden_gt() const {
  if (TrainingScope::active())
    throw RuntimeError("hidden ground truth of sample " + std::to_string(id) +
                       " read from a training code path");
  if (!hidden_gt_) throw ValidationError("sample " + std::to_string(id) + " has no hidden_gt");
  measurement_reads.fetch_add(1, std::memory_order_relaxed);
  return *hidden_gt_;
}

std::vector<int> Dataset::unlabeled_ids() const {
  std::vector<int> ids;
  ids.reserve(unlabeled.size());
  for (const auto& s : unlabeled) ids.push_back(s.id);
  return ids;
}

PseudoStore::PseudoStore(std::vector<int> ids) : ids_(std::move(ids)) {
  std::sort(ids_.begin(), ids_.end());
  require(std::adjacent_find(ids_.begin(), ids_.end()) == ids_.end(),
          "pseudo store ids must be unique");
}

const PseudoLabel& PseudoStore::at(int id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ValidationError("no pseudo-label for id " + std::to_string(id));
  return it->second;
}

PseudoStore make_pseudo_store(std::map<int, PseudoLabel> entries) {
  PseudoStore store;
  for (const auto& [id, _] : entries) store.ids_.push_back(id);
  store.entries_ = std::move(entries);
  return store;
}

Dataset split_dataset(const std::vector<Sample>& train, const std::vector<Sample>& test,
                      double labeled_ratio, std::uint64_t seed, double bias_knob) {
  require(!train.empty(), "split_dataset: no training samples");
  require(labeled_ratio > 0.0 && labeled_ratio <= 1.0, "split_dataset: labeled_ratio must be in (0, 1]");
  require(bias_knob >= 0.0 && bias_knob <= 1.0, "split_dataset: bias_knob must be in [0, 1]");
  for (const auto& s : train)
    require(s.has_hidden_gt(), "split_dataset: sample " + std::to_string(s.id) + " lacks hidden_gt");

  const auto n = train.size();
  const auto n_l = static_cast<std::size_t>(std::llround(labeled_ratio * static_cast<double>(n)));
  if (n_l == 0) throw ValidationError("split_dataset: empty labeled split");

  // Candidate pool: all samples ordered by pose latent (ties by id), truncated
  // to the lowest (1 - bias) fraction.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (bias_knob > 0.0) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (train[a].pose_latent != train[b].pose_latent)
        return train[a].pose_latent < train[b].pose_latent;
      return train[a].id < train[b].id;
    });
  }
  auto pool = static_cast<std::size_t>(std::ceil((1.0 - bias_knob) * static_cast<double>(n)));
  pool = std::clamp(pool, n_l, n);

  // Partial Fisher-Yates over the pool.
  Rng rng = make_rng(seed, 0x5b117);
  std::vector<std::size_t> cand(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool));
  for (std::size_t i = 0; i < n_l; ++i) {
    const auto j = i + static_cast<std::size_t>(rng() % (pool - i));
    std::swap(cand[i], cand[j]);
  }
  std::vector<bool> is_labeled(n, false);
  for (std::size_t i = 0; i < n_l; ++i) is_labeled[cand[i]] = true;

  Dataset ds;
  std::set<int> seen;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = train[i];
    require(seen.insert(s.id).second, "split_dataset: duplicate id " + std::to_string(s.id));
    if (is_labeled[i]) {
      // Labeled ground truth is the generator's annotation.
      Sample l = s.with_gt(s.gt ? s.gt : std::optional<LandmarkSet>(s.hidden_gt()));
      ds.labeled.push_back(std::move(l));
    } else {
      ds.unlabeled.push_back(s.with_gt(std::nullopt));
    }
  }
  for (const auto& s : test) {
    require(seen.insert(s.id).second, "split_dataset: test id " + std::to_string(s.id) + " collides with training ids");
    ds.test.push_back(s.gt ? s : s.with_gt(s.hidden_gt()));
  }
  return ds;
}

PseudoStore update_pseudo(const PseudoStore& store, const PredictionMap& predictions, int round,
                          ConfidenceAggregate agg) {
  std::vector<int> missing;
  for (int id : store.ids())
    if (!predictions.count(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::ostringstream os;
    os << "update_pseudo: predictions missing for id(s)";
    for (int id : missing) os << ' ' << id;
    throw ValidationError(os.str());
  }
  PseudoStore next;
  next.ids_ = store.ids();
  for (int id : store.ids()) {
    const Prediction& p = predictions.at(id);
    require(p.points.allFinite(), "update_pseudo: non-finite prediction for id " + std::to_string(id));
    PseudoLabel label;
    label.points = p.points;
    label.round_estimated = round;
    if (p.landmark_confidence) {
      label.landmark_confidence = p.landmark_confidence;
      label.confidence = agg == ConfidenceAggregate::Mean ? p.landmark_confidence->mean()
                                                          : p.landmark_confidence->minCoeff();
    }
    next.entries_.emplace(id, std::move(label));
  }
  return next;
}

}  // namespace stld
