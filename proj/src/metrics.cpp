#include "mtdlift/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "mtdlift/dataset.hpp"
#include "mtdlift/error.hpp"

namespace mtdlift::metrics {

namespace {

void require_both_arms(std::span<const ScoredSample> scored, const char* what) {
  bool has_t = false, has_c = false;
  for (const auto& s : scored) {
    if (!std::isfinite(s.predicted_uplift)) fail(ErrorKind::Numeric, std::string(what) + ": non-finite score");
    (s.arm == Arm::Treated ? has_t : has_c) = true;
  }
  if (!has_t || !has_c)
    fail(ErrorKind::Degenerate, std::string(what) + ": needs both a treated and a control sample");
}

double normalize(double model, double optimum, double random) {
  const double denom = optimum - random;
  if (denom == 0.0) return 0.0;
  return (model - random) / denom;
}

template <typename GainFn>
Curve scored_curve(std::span<const ScoredSample> scored, GainFn gains, const char* what) {
  require_both_arms(scored, what);
  const auto order = targeting_order(scored);
  const auto best = optimum_order(scored);
  Curve curve;
  curve.points = gains(scored, order);
  const auto optimum = gains(scored, best);
  const double random = 0.5 * curve.points.back().gain;
  curve.normalized_area = normalize(trapezoid_area(curve.points), trapezoid_area(optimum), random);
  return curve;
}

}  // namespace

double average_uplift(std::span<const ScoredSample> scored) {
  require_both_arms(scored, "average_uplift");
  double yt = 0, yc = 0, nt = 0, nc = 0;
  for (const auto& s : scored) {
    if (s.arm == Arm::Treated) {
      yt += s.outcome;
      nt += 1;
    } else {
      yc += s.outcome;
      nc += 1;
    }
  }
  return yt / nt - yc / nc;
}

MaybeValue uplift_at_k(std::span<const ScoredSample> scored, double k) {
  if (!(k > 0.0 && k <= 1.0)) fail(ErrorKind::InvalidArgument, "uplift_at_k: k must lie in (0, 1]");
  if (scored.empty()) return {std::nullopt, "empty input"};
  for (const auto& s : scored)
    if (!std::isfinite(s.predicted_uplift)) fail(ErrorKind::Numeric, "uplift_at_k: non-finite score");
  const double n = static_cast<double>(scored.size());
  // The epsilon keeps k*N products such as 0.3*10 from rounding up a step.
  auto top = static_cast<std::size_t>(std::ceil(k * n - 1e-9));
  top = std::clamp<std::size_t>(top, 1, scored.size());
  const auto order = targeting_order(scored);
  double yt = 0, yc = 0, nt = 0, nc = 0;
  for (std::size_t r = 0; r < top; ++r) {
    const auto& s = scored[order[r]];
    if (s.arm == Arm::Treated) {
      yt += s.outcome;
      nt += 1;
    } else {
      yc += s.outcome;
      nc += 1;
    }
  }
  if (nt == 0) return {std::nullopt, "no treated sample in the top " + std::to_string(top)};
  if (nc == 0) return {std::nullopt, "no control sample in the top " + std::to_string(top)};
  return {yt / nt - yc / nc, {}};
}

std::vector<std::size_t> targeting_order(std::span<const ScoredSample> scored) {
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].predicted_uplift > scored[b].predicted_uplift;
  });
  return order;
}

std::vector<std::size_t> optimum_order(std::span<const ScoredSample> scored) {
  auto key = [&](std::size_t i) {
    const auto& s = scored[i];
    return s.arm == Arm::Treated ? s.outcome : -s.outcome;
  };
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  return order;
}

std::vector<CurvePoint> qini_gains(std::span<const ScoredSample> scored, std::span<const std::size_t> order) {
  const double n = static_cast<double>(order.size());
  std::vector<CurvePoint> pts;
  pts.reserve(order.size() + 1);
  pts.push_back({0.0, 0.0});
  double yt = 0, yc = 0, nt = 0, nc = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& s = scored[order[r]];
    if (s.arm == Arm::Treated) {
      yt += s.outcome;
      nt += 1;
    } else {
      yc += s.outcome;
      nc += 1;
    }
    const double gain = nc > 0 ? yt - yc * nt / nc : yt;
    pts.push_back({static_cast<double>(r + 1) / n, gain});
  }
  return pts;
}

std::vector<CurvePoint> uplift_gains(std::span<const ScoredSample> scored, std::span<const std::size_t> order) {
  const double n = static_cast<double>(order.size());
  std::vector<CurvePoint> pts;
  pts.reserve(order.size() + 1);
  pts.push_back({0.0, 0.0});
  double yt = 0, yc = 0, nt = 0, nc = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& s = scored[order[r]];
    if (s.arm == Arm::Treated) {
      yt += s.outcome;
      nt += 1;
    } else {
      yc += s.outcome;
      nc += 1;
    }
    const double rate_t = nt > 0 ? yt / nt : 0.0;
    const double rate_c = nc > 0 ? yc / nc : 0.0;
    pts.push_back({static_cast<double>(r + 1) / n, (rate_t - rate_c) * static_cast<double>(r + 1)});
  }
  return pts;
}

double trapezoid_area(std::span<const CurvePoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].fraction - points[i - 1].fraction) * (points[i].gain + points[i - 1].gain) * 0.5;
  return area;
}

Curve qini_curve(std::span<const ScoredSample> scored) { return scored_curve(scored, qini_gains, "qini"); }

double qini_score(std::span<const ScoredSample> scored) { return qini_curve(scored).normalized_area; }

Curve uplift_curve(std::span<const ScoredSample> scored) { return scored_curve(scored, uplift_gains, "auuc"); }

double auuc(std::span<const ScoredSample> scored) { return uplift_curve(scored).normalized_area; }

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[idx[m]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) fail(ErrorKind::InvalidArgument, "spearman: need two equal-length series");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double spearman_p_value(double rho, std::size_t n) {
  if (n < 3) return 1.0;
  if (std::abs(rho) >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = rho * std::sqrt(df / (1.0 - rho * rho));
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

std::string curve_csv(const Curve& curve) {
  std::string out = "fraction,gain\n";
  for (const auto& p : curve.points) out += format_double(p.fraction) + "," + format_double(p.gain) + "\n";
  return out;
}

std::string curve_svg(const Curve& curve, const std::string& title) {
  constexpr double width = 640, height = 400, margin = 40;
  double lo = 0.0, hi = 0.0;
  for (const auto& p : curve.points) {
    lo = std::min(lo, p.gain);
    hi = std::max(hi, p.gain);
  }
  if (hi == lo) hi = lo + 1.0;
  auto px = [&](double f) { return margin + f * (width - 2 * margin); };
  auto py = [&](double g) { return height - margin - (g - lo) / (hi - lo) * (height - 2 * margin); };
  char buf[96];
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  svg << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\" ", px(0), py(0), px(1),
                py(curve.points.back().gain));
  svg << buf << "stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.3f,%.3f", i ? " " : "", px(curve.points[i].fraction), py(curve.points[i].gain));
    svg << buf;
  }
  svg << "\"/>\n";
  std::snprintf(buf, sizeof buf, "%.6f", curve.normalized_area);
  svg << "<text x=\"" << width - margin << "\" y=\"" << height - 12
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">normalized area " << buf << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace mtdlift::metrics
