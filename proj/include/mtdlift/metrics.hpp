#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mtdlift::metrics {

enum class Arm { Control, Treated };

struct ScoredSample {
  double predicted_uplift = 0.0;
  Arm arm = Arm::Control;
  int outcome = 0;
};

struct CurvePoint {
  double fraction = 0.0;
  double gain = 0.0;
};

// points[i] is the gain after targeting the first i samples (i = 0..N).
struct Curve {
  std::vector<CurvePoint> points;
  double normalized_area = 0.0;
};

// Result that may be undefined (e.g. one arm missing from the targeted slice).
struct MaybeValue {
  std::optional<double> value;
  std::string reason;

  bool ok() const { return value.has_value(); }
};

// Exact formulas are in docs/metrics.md.

double average_uplift(std::span<const ScoredSample> scored);

MaybeValue uplift_at_k(std::span<const ScoredSample> scored, double k = 0.30);

Curve qini_curve(std::span<const ScoredSample> scored);
double qini_score(std::span<const ScoredSample> scored);

Curve uplift_curve(std::span<const ScoredSample> scored);
double auuc(std::span<const ScoredSample> scored);

// Descending by score, ties by original index.
std::vector<std::size_t> targeting_order(std::span<const ScoredSample> scored);
// Descending by (outcome if treated, -outcome if control), ties by index.
std::vector<std::size_t> optimum_order(std::span<const ScoredSample> scored);

// Gains along an explicit order; building blocks shared by both curves.
std::vector<CurvePoint> qini_gains(std::span<const ScoredSample> scored, std::span<const std::size_t> order);
std::vector<CurvePoint> uplift_gains(std::span<const ScoredSample> scored, std::span<const std::size_t> order);
double trapezoid_area(std::span<const CurvePoint> points);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);
// Two-sided p-value of rho under H0 via the t approximation.
double spearman_p_value(double rho, std::size_t n);

std::string curve_csv(const Curve& curve);
std::string curve_svg(const Curve& curve, const std::string& title);

}  // namespace mtdlift::metrics
