#include <cmath>
#include <sstream>

#include "stld/losses.hpp"

namespace stld {

std::string to_string(Pathway p) { return p == Pathway::Heatmap ? "heatmap" : "coordinate"; }

Pathway pathway_from_string(const std::string& s) {
  if (s == "heatmap") return Pathway::Heatmap;
  if (s == "coordinate") return Pathway::Coordinate;
  throw ValidationError("pathway must be 'heatmap' or 'coordinate', got '" + s + "'");
}

namespace {

void check_common(const Curriculum& c) {
  require(!c.values.empty(), "curriculum.values must be nonempty");
  require(c.lambda_sub > 0.0 && c.lambda_sub <= 1.0, "curriculum.lambda_sub must be in (0, 1]");
  require(c.sigma_std > 0.0, "curriculum.sigma_std must be > 0");
  for (double v : c.values) require(std::isfinite(v), "curriculum.values must be finite");
  if (c.values.back() != c.standard()) {
    std::ostringstream os;
    os << "curriculum.values must end at the standard value " << c.standard() << ", got " << c.values.back();
    throw ValidationError(os.str());
  }
  if (c.kind == Pathway::Coordinate)
    for (double v : c.values) require(v >= 1.0, "curriculum.values must be >= 1 for the coordinate pathway");
  else
    for (double v : c.values) require(v > 0.0, "curriculum.values must be > 0 for the heatmap pathway");
}

}  // namespace

void Curriculum::validate() const {
  check_common(*this);
  for (std::size_t i = 1; i < values.size(); ++i)
    require(values[i] < values[i - 1], "curriculum.values must be strictly decreasing");
}

bool Curriculum::degenerate() const {
  for (double v : values)
    if (v != standard()) return false;
  return true;
}

void Curriculum::validate_allow_degenerate() const {
  if (degenerate()) {
    check_common(*this);
    return;
  }
  validate();
}

Curriculum Curriculum::heatmap_default() { return Curriculum{Pathway::Heatmap, {2.2, 1.8, 1.5}, 1.5, 0.1}; }

Curriculum Curriculum::coordinate_default() {
  return Curriculum{Pathway::Coordinate, {2.4, 1.6, 1.0}, 1.5, 0.1};
}

double granularity_at(const Curriculum& curr, int t) {
  if (t < 2) throw ValidationError("granularity_at: shrink regression starts at round 2, got t=" + std::to_string(t));
  require(t <= curr.rounds(), "granularity_at: t exceeds the number of rounds");
  return curr.values[static_cast<std::size_t>(t - 2)];
}

double lambda_weight(int t, int T, double lambda_sub) {
  require(t >= 1 && t <= T, "lambda_weight: t must be in [1, T]");
  if (t == 1) return 0.0;
  if (t == T) return 1.0;
  return lambda_sub;
}

}  // namespace stld
