#pragma once

// Fast invariant suite behind `hermnet selfcheck`: small random models and
// structures, each property reported as pass/fail.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "hermnet/graph.hpp"
#include "hermnet/model.hpp"
#include "hermnet/structure.hpp"

namespace hermnet {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace selfcheck_detail {

using Rng = std::mt19937_64;

inline double uni(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::Matrix3d rotation(Rng& rng) {
  std::normal_distribution<double> n;
  Eigen::Matrix3d g;
  for (int i = 0; i < 9; ++i) g(i / 3, i % 3) = n(rng);
  Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(g).householderQ();
  if (q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

inline Vec3 rotated(const Eigen::Matrix3d& r, const Vec3& x) {
  const Eigen::Vector3d y = r * Eigen::Vector3d(x[0], x[1], x[2]);
  return {y[0], y[1], y[2]};
}

inline AtomicStructure cluster(Rng& rng, std::size_t n, const std::vector<int>& el) {
  AtomicStructure s;
  while (s.size() < n) {
    const Vec3 p{uni(rng, 0, 3.5), uni(rng, 0, 3.5), uni(rng, 0, 3.5)};
    bool ok = true;
    for (const auto& q : s.positions) {
      const double d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                        (p[2] - q[2]) * (p[2] - q[2]);
      ok = ok && d2 > 1.0;
    }
    if (!ok) continue;
    s.positions.push_back(p);
    s.species.push_back(el[std::uniform_int_distribution<std::size_t>(0, el.size() - 1)(rng)]);
  }
  return s;
}

inline AtomicStructure crystal(Rng& rng, std::size_t n, const std::vector<int>& el,
                               double lo, double hi, std::array<bool, 3> pbc) {
  while (true) {
    AtomicStructure s;
    Mat3 c{};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) c[i][j] = uni(rng, -0.25, 0.25);
      c[i][i] = uni(rng, lo, hi);
    }
    s.cell = c;
    s.pbc = pbc;
    for (std::size_t a = 0; a < n; ++a) {
      const Vec3 f{uni(rng, 0, 1), uni(rng, 0, 1), uni(rng, 0, 1)};
      Vec3 p{};
      for (int d = 0; d < 3; ++d) p[d] = f[0] * c[0][d] + f[1] * c[1][d] + f[2] * c[2][d];
      s.positions.push_back(p);
      s.species.push_back(el[std::uniform_int_distribution<std::size_t>(0, el.size() - 1)(rng)]);
    }
    if (build_cutoff_graph(s, 1.0).edges.empty()) return s;
  }
}

/// Small model with order-one random readout and biases.
inline Model random_model(Variant v, const std::vector<int>& elements, std::uint64_t seed) {
  ModelConfig c;
  c.variant = v;
  c.hidden = 8;
  c.layers = 2;
  c.r_cut = 3.5;
  c.element_set = elements;
  Model m = make_model(c, seed);
  Rng rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& [name, t] : m.params) {
    const bool bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (name == "readout.1.w") {
      for (double& x : t.data()) x = n(rng);
    } else if (bias) {
      for (double& x : t.data()) x = 0.1 * n(rng);
    }
  }
  return m;
}

inline double max_abs(const std::vector<Vec3>& f) {
  double m = 0;
  for (const auto& v : f) {
    for (double x : v) m = std::max(m, std::abs(x));
  }
  return m;
}

inline std::string fmt(const char* f, double a, double b = 0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), f, a, b);
  return buf;
}

const Variant kVariants[] = {Variant::kHVNet, Variant::kHPNet, Variant::kHTNet};

}  // namespace selfcheck_detail

/// Rotation, translation and permutation behavior of energies and forces.
inline std::vector<CheckResult> check_equivariance(const FaultInjection& fault,
                                                   std::uint64_t seed) {
  using namespace selfcheck_detail;
  Rng rng(seed);
  double worst_e = 0, worst_f = 0, worst_pe = 0, worst_pf = 0;
  const std::vector<int> el{1, 6, 8};
  for (Variant v : kVariants) {
    const Model m = random_model(v, el, seed + 1);
    for (int t = 0; t < 4; ++t) {
      AtomicStructure s = t % 2 ? crystal(rng, 4, el, 3.0, 4.5, {true, true, true})
                                : cluster(rng, 6, el);
      PredictOptions opt;
      opt.fault = fault;
      const Prediction p0 = predict(m, s, opt);
      const Eigen::Matrix3d r = rotation(rng);
      const Vec3 shift{uni(rng, -3, 3), uni(rng, -3, 3), uni(rng, -3, 3)};
      AtomicStructure s1 = s;
      for (auto& x : s1.positions) {
        x = rotated(r, x);
        for (int d = 0; d < 3; ++d) x[d] += shift[d];
      }
      if (s1.cell) {
        for (auto& row : *s1.cell) row = rotated(r, row);
      }
      const Prediction p1 = predict(m, s1, opt);
      const double fscale = std::max(max_abs(p0.forces), 1e-12);
      worst_e = std::max(worst_e, std::abs(p1.energy - p0.energy) / std::max(std::abs(p0.energy), 1e-12));
      for (std::size_t i = 0; i < s.size(); ++i) {
        const Vec3 rf = rotated(r, p0.forces[i]);
        for (int d = 0; d < 3; ++d) {
          worst_f = std::max(worst_f, std::abs(p1.forces[i][d] - rf[d]) / fscale);
        }
      }
      std::vector<std::size_t> perm(s.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
      AtomicStructure s2 = s;
      for (std::size_t i = 0; i < perm.size(); ++i) {
        s2.species[i] = s.species[perm[i]];
        s2.positions[i] = s.positions[perm[i]];
      }
      const Prediction p2 = predict(m, s2, opt);
      worst_pe = std::max(worst_pe, std::abs(p2.energy - p0.energy) / std::max(std::abs(p0.energy), 1e-12));
      for (std::size_t i = 0; i < s.size(); ++i) {
        for (int d = 0; d < 3; ++d) {
          worst_pf = std::max(worst_pf, std::abs(p2.forces[i][d] - p0.forces[perm[i]][d]) / fscale);
        }
      }
    }
  }
  return {
      {"rotation-translation equivariance", worst_e <= 1e-8 && worst_f <= 1e-7,
       fmt("energy rel dev %.3g, force rel dev %.3g", worst_e, worst_f)},
      {"permutation equivariance", worst_pe <= 1e-8 && worst_pf <= 1e-7,
       fmt("energy rel dev %.3g, force rel dev %.3g", worst_pe, worst_pf)},
  };
}

/// Forces against central differences of the energy, h = 1e-4 Å.
inline CheckResult check_finite_difference(const FaultInjection& fault, std::uint64_t seed) {
  using namespace selfcheck_detail;
  Rng rng(seed);
  const std::vector<int> el{1, 8};
  double worst = 0;
  for (Variant v : kVariants) {
    const Model m = random_model(v, el, seed + 2);
    const AtomicStructure s = cluster(rng, 5, el);
    PredictOptions opt;
    opt.fault = fault;
    const Prediction p = predict(m, s, opt);
    PredictOptions eo = opt;
    eo.forces = false;
    const double h = 1e-4;
    const double scale = std::max(max_abs(p.forces), 1e-12);
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (int d = 0; d < 3; ++d) {
        AtomicStructure a = s, b = s;
        a.positions[i][d] += h;
        b.positions[i][d] -= h;
        const double fd = -(predict(m, a, eo).energy - predict(m, b, eo).energy) / (2 * h);
        worst = std::max(worst, std::abs(fd - p.forces[i][d]) / scale);
      }
    }
  }
  return {"finite-difference forces", worst <= 1e-5, fmt("max rel error %.3g", worst)};
}

/// Cell-list neighbor search against the exhaustive search.
inline CheckResult check_neighbor_list(std::uint64_t seed) {
  using namespace selfcheck_detail;
  Rng rng(seed);
  std::size_t mismatches = 0, cases = 0;
  for (int t = 0; t < 30; ++t) {
    const std::array<bool, 3> pbc{t % 4 != 1, t % 4 != 2, t % 4 != 3 || t % 8 == 3};
    const double lo = t % 3 == 0 ? 1.2 : 3.0;
    const AtomicStructure s = t % 5 == 4 ? cluster(rng, 8, {1, 6})
                                         : crystal(rng, 1 + t % 6, {1, 6}, lo, lo + 3.0, pbc);
    const double rc = uni(rng, 1.5, 4.5);
    auto key = [](const RelationalGraph& g) {
      std::vector<std::tuple<std::size_t, std::size_t, int, int, int>> out;
      for (const Edge& e : g.edges) {
        out.emplace_back(e.src, e.dst, e.offset[0], e.offset[1], e.offset[2]);
      }
      std::sort(out.begin(), out.end());
      return out;
    };
    ++cases;
    if (key(build_cutoff_graph(s, rc)) != key(build_cutoff_graph_reference(s, rc))) {
      ++mismatches;
    }
  }
  return {"neighbor-list oracle", mismatches == 0,
          std::to_string(mismatches) + " mismatching graphs out of " + std::to_string(cases)};
}

/// Energy change and force change as one neighbor crosses the cutoff.
inline CheckResult check_cutoff_smoothness(const FaultInjection& fault, std::uint64_t seed) {
  using namespace selfcheck_detail;
  Rng rng(seed);
  double worst_e = 0;
  bool forces_shrink = true;
  for (Variant v : kVariants) {
    const Model m = random_model(v, {1, 8}, seed + 3);
    const double rc = m.config.r_cut;
    AtomicStructure s;
    s.species = {8, 1, 1};
    s.positions = {Vec3{0, 0, 0}, Vec3{0.96, 0, 0}, Vec3{0, 0, 0}};
    auto at = [&](double r) {
      AtomicStructure x = s;
      x.positions[2] = {-0.3 * r, std::sqrt(1 - 0.09) * r, 0};
      PredictOptions opt;
      opt.fault = fault;
      return predict(m, x, opt);
    };
    const Prediction in3 = at(rc - 1e-3), out3 = at(rc + 1e-3);
    const Prediction in4 = at(rc - 1e-4), out4 = at(rc + 1e-4);
    worst_e = std::max(worst_e, std::abs(in3.energy - out3.energy));
    double jump3 = 0, jump4 = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      for (int d = 0; d < 3; ++d) {
        jump3 = std::max(jump3, std::abs(in3.forces[i][d] - out3.forces[i][d]));
        jump4 = std::max(jump4, std::abs(in4.forces[i][d] - out4.forces[i][d]));
      }
    }
    // A continuous force changes less over the narrower window.
    if (jump4 > 1e-9 && jump4 > 0.5 * jump3) forces_shrink = false;
  }
  return {"cutoff smoothness", worst_e < 1e-6 && forces_shrink,
          fmt("max |dE| %.3g eV across 2e-3 A", worst_e) +
              (forces_shrink ? "" : "; force jump does not vanish")};
}

inline std::vector<CheckResult> run_selfcheck(const FaultInjection& fault = {},
                                              std::uint64_t seed = 2024) {
  std::vector<CheckResult> out = check_equivariance(fault, seed);
  out.push_back(check_finite_difference(fault, seed + 10));
  out.push_back(check_neighbor_list(seed + 20));
  out.push_back(check_cutoff_smoothness(fault, seed + 30));
  return out;
}

}  // namespace hermnet
