#pragma once

// Direct-loop reimplementation of the uplift metrics. Deliberately shares no
// code with the library: every prefix is recounted from scratch.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace oracle {

struct Unit {
  double score;
  bool treated;
  int y;
};

// Selection sort on (score desc, index asc).
inline std::vector<std::size_t> by_score(const std::vector<Unit>& u) {
  std::vector<std::size_t> order;
  std::vector<bool> used(u.size(), false);
  for (std::size_t pick = 0; pick < u.size(); ++pick) {
    std::size_t best = u.size();
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (used[i]) continue;
      if (best == u.size() || u[i].score > u[best].score) best = i;
    }
    used[best] = true;
    order.push_back(best);
  }
  return order;
}

// Treated positives, then every zero-outcome unit, then control positives;
// index order inside each block.
inline std::vector<std::size_t> optimum(const std::vector<Unit>& u) {
  std::vector<std::size_t> order;
  for (int block = 0; block < 3; ++block)
    for (std::size_t i = 0; i < u.size(); ++i) {
      const int b = u[i].y == 0 ? 1 : (u[i].treated ? 0 : 2);
      if (b == block) order.push_back(i);
    }
  return order;
}

struct Counts {
  double yt = 0, yc = 0, nt = 0, nc = 0;
};

inline Counts prefix(const std::vector<Unit>& u, const std::vector<std::size_t>& order, std::size_t m) {
  Counts c;
  for (std::size_t r = 0; r < m; ++r) {
    const Unit& x = u[order[r]];
    if (x.treated) {
      c.nt += 1;
      c.yt += x.y;
    } else {
      c.nc += 1;
      c.yc += x.y;
    }
  }
  return c;
}

inline double qini_gain(const Counts& c) { return c.nc == 0 ? c.yt : c.yt - c.yc * (c.nt / c.nc); }

inline double uplift_gain(const Counts& c, std::size_t m) {
  const double rt = c.nt == 0 ? 0.0 : c.yt / c.nt;
  const double rc = c.nc == 0 ? 0.0 : c.yc / c.nc;
  return (rt - rc) * static_cast<double>(m);
}

template <typename Gain>
double area(const std::vector<Unit>& u, const std::vector<std::size_t>& order, Gain gain) {
  const double n = static_cast<double>(u.size());
  double total = 0.0;
  double prev = 0.0;
  for (std::size_t m = 1; m <= u.size(); ++m) {
    const double g = gain(prefix(u, order, m), m);
    total += (prev + g) / (2.0 * n);
    prev = g;
  }
  return total;
}

template <typename Gain>
double normalized(const std::vector<Unit>& u, Gain gain) {
  const double end = gain(prefix(u, by_score(u), u.size()), u.size());
  const double random = end / 2.0;
  const double model = area(u, by_score(u), gain);
  const double best = area(u, optimum(u), gain);
  if (best - random == 0.0) return 0.0;
  return (model - random) / (best - random);
}

inline double qini(const std::vector<Unit>& u) {
  return normalized(u, [](const Counts& c, std::size_t) { return qini_gain(c); });
}

inline double auuc(const std::vector<Unit>& u) {
  return normalized(u, [](const Counts& c, std::size_t m) { return uplift_gain(c, m); });
}

inline double average_uplift(const std::vector<Unit>& u) {
  const Counts c = prefix(u, by_score(u), u.size());
  return c.yt / c.nt - c.yc / c.nc;
}

// Top ceil(k*N) units, k given as a percentage to keep the ceiling exact.
inline std::optional<double> uplift_at_percent(const std::vector<Unit>& u, int percent) {
  std::size_t top = (u.size() * static_cast<std::size_t>(percent) + 99) / 100;
  if (top == 0) top = 1;
  const Counts c = prefix(u, by_score(u), top);
  if (c.nt == 0 || c.nc == 0) return std::nullopt;
  return c.yt / c.nt - c.yc / c.nc;
}

}  // namespace oracle
