#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <unordered_map>
#include <variant>
#include <vector>

#include "hermnet/elements.hpp"
#include "hermnet/error.hpp"
#include "hermnet/structure.hpp"

namespace hermnet {

using Offset = std::array<int, 3>;

/// Directed edge src -> dst. r_vec points from the destination (the center)
/// to the periodic image of its neighbor:
///   r_vec = position(src) + offset . cell - position(dst)
struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  Offset offset{0, 0, 0};
  Vec3 shift{0.0, 0.0, 0.0};  // offset . cell, Å
  Vec3 r_vec{0.0, 0.0, 0.0};
  double r_norm = 0.0;

  auto key() const { return std::tie(dst, src, offset); }
};

struct UntypedKey {
  auto operator<=>(const UntypedKey&) const = default;
};
/// Edges grouped by destination element.
struct VertexKey {
  int dst = 0;
  auto operator<=>(const VertexKey&) const = default;
};
/// Edges grouped by (source element, destination element).
struct PairKey {
  int src = 0;
  int dst = 0;
  auto operator<=>(const PairKey&) const = default;
};
/// A -> B <- C, stored with the source pair sorted (a <= c).
struct TriadKey {
  int dst = 0;
  int src_a = 0;
  int src_c = 0;

  static TriadKey make(int dst, int a, int c) {
    return a <= c ? TriadKey{dst, a, c} : TriadKey{dst, c, a};
  }
  auto operator<=>(const TriadKey&) const = default;
};

using RelationKey = std::variant<UntypedKey, VertexKey, PairKey, TriadKey>;

inline std::string relation_name(const RelationKey& key) {
  struct Visitor {
    std::string operator()(const UntypedKey&) const { return "any"; }
    std::string operator()(const VertexKey& k) const {
      return std::string(element_symbol(k.dst));
    }
    std::string operator()(const PairKey& k) const {
      return std::string(element_symbol(k.src)) + ">" +
             std::string(element_symbol(k.dst));
    }
    std::string operator()(const TriadKey& k) const {
      return std::string(element_symbol(k.src_a)) + ">" +
             std::string(element_symbol(k.dst)) + "<" +
             std::string(element_symbol(k.src_c));
    }
  };
  return std::visit(Visitor{}, key);
}

enum class Decomposition { kVertex, kPair, kTriad };

/// Cutoff graph with edges partitioned into relations. Relation lists hold
/// indices into `edges`.
struct RelationalGraph {
  std::size_t n_nodes = 0;
  std::vector<int> species;
  double r_cut = 0.0;
  std::vector<Edge> edges;
  std::map<RelationKey, std::vector<std::size_t>> relations;
};

/// Image shift and edge vector, evaluated identically by every search path.
inline void fill_edge_geometry(const AtomicStructure& s, Edge& e) {
  e.shift = {0.0, 0.0, 0.0};
  if (s.cell) {
    const Mat3& c = *s.cell;
    for (int d = 0; d < 3; ++d) {
      e.shift[d] = e.offset[0] * c[0][d] + e.offset[1] * c[1][d] +
                   e.offset[2] * c[2][d];
    }
  }
  const Vec3& ps = s.positions[e.src];
  const Vec3& pd = s.positions[e.dst];
  for (int d = 0; d < 3; ++d) e.r_vec[d] = (ps[d] + e.shift[d]) - pd[d];
  e.r_norm = std::sqrt(e.r_vec[0] * e.r_vec[0] + e.r_vec[1] * e.r_vec[1] +
                       e.r_vec[2] * e.r_vec[2]);
}

namespace graph_detail {

/// Perpendicular heights of the cell, |det| / |a_i x a_j|.
inline Vec3 cell_heights(const Mat3& cell) {
  const Eigen::Matrix3d m = to_eigen(cell);
  const double vol = std::abs(m.determinant());
  Vec3 h{};
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d a = m.row((k + 1) % 3);
    const Eigen::Vector3d b = m.row((k + 2) % 3);
    h[k] = vol / a.cross(b).norm();
  }
  return h;
}

inline long floor_div(long a, long b) {
  long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

struct BinHash {
  std::size_t operator()(const std::array<long, 3>& k) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (long v : k) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) +
           (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

inline void finalize(RelationalGraph& g) {
  std::sort(g.edges.begin(), g.edges.end(),
            [](const Edge& a, const Edge& b) { return a.key() < b.key(); });
  std::vector<std::size_t> all(g.edges.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  g.relations.clear();
  g.relations.emplace(UntypedKey{}, std::move(all));
}

inline RelationalGraph empty_graph(const AtomicStructure& s, double r_cut) {
  validate(s);
  if (!(r_cut > 0.0) || !std::isfinite(r_cut)) {
    throw Error("cutoff radius must be positive, got " + std::to_string(r_cut));
  }
  RelationalGraph g;
  g.n_nodes = s.size();
  g.species = s.species;
  g.r_cut = r_cut;
  return g;
}

}  // namespace graph_detail

/// All ordered pairs (src -> dst, image offset) with 0 < |r_vec| <= r_cut,
/// found with a cell list. Periodic directions enumerate every image the
/// cutoff reaches, so cells thinner than r_cut are handled.
inline RelationalGraph build_cutoff_graph(const AtomicStructure& s,
                                          double r_cut) {
  using namespace graph_detail;
  RelationalGraph g = empty_graph(s, r_cut);
  const std::size_t n = s.size();

  // Work in fractional coordinates of the cell (or Cartesian coordinates
  // when there is no periodicity at all).
  const bool use_cell = s.periodic();
  Eigen::Matrix3d basis = Eigen::Matrix3d::Identity();
  Vec3 height{1.0, 1.0, 1.0};
  if (use_cell) {
    basis = to_eigen(*s.cell);
    height = cell_heights(*s.cell);
  }
  const Eigen::Matrix3d inv = basis.inverse();

  std::vector<Eigen::Vector3d> frac(n);
  std::vector<Offset> wrap(n, Offset{0, 0, 0});
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::RowVector3d p(s.positions[i][0], s.positions[i][1],
                               s.positions[i][2]);
    frac[i] = (p * inv).transpose();
    for (int k = 0; k < 3; ++k) {
      if (!(std::abs(frac[i][k]) < 1e9)) {
        throw Error("atom " + std::to_string(i) +
                    " lies too far from the origin for neighbor search");
      }
      if (use_cell && s.pbc[k]) {
        const double w = std::floor(frac[i][k]);
        frac[i][k] -= w;
        wrap[i][k] = static_cast<int>(w);
        if (frac[i][k] >= 1.0) {
          frac[i][k] = 0.0;
          wrap[i][k] += 1;
        }
      }
    }
  }
  for (int k = 0; k < 3; ++k) {
    lo[k] = frac[0][k];
    for (std::size_t i = 1; i < n; ++i) lo[k] = std::min(lo[k], frac[i][k]);
  }

  constexpr double kSlack = 1.0 + 1e-9;
  std::array<long, 3> nbins{1, 1, 1};
  std::array<long, 3> reach{1, 1, 1};
  std::array<bool, 3> wraps{false, false, false};
  for (int k = 0; k < 3; ++k) {
    wraps[k] = use_cell && s.pbc[k];
    if (wraps[k]) {
      nbins[k] = std::max(1L, static_cast<long>(std::floor(height[k] / r_cut)));
      reach[k] = static_cast<long>(
          std::ceil(r_cut * static_cast<double>(nbins[k]) / height[k] * kSlack));
    }
  }
  auto bin_of = [&](const Eigen::Vector3d& f) {
    std::array<long, 3> b{};
    for (int k = 0; k < 3; ++k) {
      if (wraps[k]) {
        b[k] = std::min(nbins[k] - 1,
                        static_cast<long>(std::floor(f[k] * nbins[k])));
      } else {
        b[k] = static_cast<long>(
            std::floor((f[k] - lo[k]) * height[k] / (r_cut * kSlack)));
      }
    }
    return b;
  };

  std::unordered_map<std::array<long, 3>, std::vector<std::size_t>, BinHash>
      bins;
  std::vector<std::array<long, 3>> atom_bin(n);
  for (std::size_t i = 0; i < n; ++i) {
    atom_bin[i] = bin_of(frac[i]);
    bins[atom_bin[i]].push_back(i);
  }

  double search_cells = 1.0;
  for (int k = 0; k < 3; ++k) search_cells *= 2.0 * reach[k] + 1.0;
  if (search_cells > 1e7) {
    throw Error("cell is too thin for cutoff " + std::to_string(r_cut));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = atom_bin[i];
    for (long dx = -reach[0]; dx <= reach[0]; ++dx) {
      for (long dy = -reach[1]; dy <= reach[1]; ++dy) {
        for (long dz = -reach[2]; dz <= reach[2]; ++dz) {
          const std::array<long, 3> delta{dx, dy, dz};
          std::array<long, 3> cell_bin{};
          Offset image{0, 0, 0};
          for (int k = 0; k < 3; ++k) {
            const long raw = b[k] + delta[k];
            if (wraps[k]) {
              const long im = floor_div(raw, nbins[k]);
              image[k] = static_cast<int>(im);
              cell_bin[k] = raw - im * nbins[k];
            } else {
              cell_bin[k] = raw;
            }
          }
          const auto it = bins.find(cell_bin);
          if (it == bins.end()) continue;
          for (std::size_t j : it->second) {
            Edge e;
            e.src = j;
            e.dst = i;
            for (int k = 0; k < 3; ++k) {
              e.offset[k] = image[k] - wrap[j][k] + wrap[i][k];
            }
            if (j == i && e.offset == Offset{0, 0, 0}) continue;
            fill_edge_geometry(s, e);
            if (e.r_norm > 0.0 && e.r_norm <= r_cut) g.edges.push_back(e);
          }
        }
      }
    }
  }
  finalize(g);
  return g;
}

/// O(N^2 * images) reference search used by the self-check.
inline RelationalGraph build_cutoff_graph_reference(const AtomicStructure& s,
                                                    double r_cut) {
  using namespace graph_detail;
  RelationalGraph g = empty_graph(s, r_cut);
  const std::size_t n = s.size();
  std::vector<Eigen::Vector3d> frac(n, Eigen::Vector3d::Zero());
  Vec3 height{1.0, 1.0, 1.0};
  if (s.periodic()) {
    const Eigen::Matrix3d inv = to_eigen(*s.cell).inverse();
    height = cell_heights(*s.cell);
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::RowVector3d p(s.positions[i][0], s.positions[i][1],
                                 s.positions[i][2]);
      frac[i] = (p * inv).transpose();
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::array<long, 3> lo{0, 0, 0}, hi{0, 0, 0};
      for (int k = 0; k < 3; ++k) {
        if (!s.pbc[k]) continue;
        const double df = frac[j][k] - frac[i][k];
        const double span = r_cut / height[k];
        lo[k] = static_cast<long>(std::ceil(-df - span)) - 1;
        hi[k] = static_cast<long>(std::floor(-df + span)) + 1;
      }
      for (long a = lo[0]; a <= hi[0]; ++a) {
        for (long b = lo[1]; b <= hi[1]; ++b) {
          for (long c = lo[2]; c <= hi[2]; ++c) {
            Edge e;
            e.src = j;
            e.dst = i;
            e.offset = {static_cast<int>(a), static_cast<int>(b),
                        static_cast<int>(c)};
            if (i == j && e.offset == Offset{0, 0, 0}) continue;
            fill_edge_geometry(s, e);
            if (e.r_norm > 0.0 && e.r_norm <= r_cut) g.edges.push_back(e);
          }
        }
      }
    }
  }
  finalize(g);
  return g;
}

/// Re-keys the edges of `graph` into typed relations. The triad
/// decomposition groups edges by destination element; its triad keys are
/// formed from inbound edge pairs (see materialize_triads).
inline RelationalGraph decompose(const RelationalGraph& graph,
                                 Decomposition kind) {
  RelationalGraph out;
  out.n_nodes = graph.n_nodes;
  out.species = graph.species;
  out.r_cut = graph.r_cut;
  out.edges = graph.edges;
  for (std::size_t e = 0; e < out.edges.size(); ++e) {
    const int src = out.species[out.edges[e].src];
    const int dst = out.species[out.edges[e].dst];
    RelationKey key = kind == Decomposition::kPair ? RelationKey(PairKey{src, dst})
                                                   : RelationKey(VertexKey{dst});
    out.relations[key].push_back(e);
  }
  return out;
}

/// Triad keys present in the graph with the number of unordered inbound
/// edge pairs {j -> i, k -> i} (j == k included once) realizing each.
inline std::map<TriadKey, std::size_t> materialize_triads(
    const RelationalGraph& graph) {
  std::vector<std::map<int, std::size_t>> inbound(graph.n_nodes);
  for (const Edge& e : graph.edges) ++inbound[e.dst][graph.species[e.src]];
  std::map<TriadKey, std::size_t> out;
  for (std::size_t i = 0; i < graph.n_nodes; ++i) {
    const int center = graph.species[i];
    for (auto a = inbound[i].begin(); a != inbound[i].end(); ++a) {
      for (auto c = a; c != inbound[i].end(); ++c) {
        const std::size_t pairs = a == c ? a->second * (a->second + 1) / 2
                                         : a->second * c->second;
        out[TriadKey::make(center, a->first, c->first)] += pairs;
      }
    }
  }
  return out;
}

/// Number of sub-networks for a vocabulary of `n_elements` elements.
inline std::size_t relation_count(std::size_t n_elements, Decomposition kind) {
  if (n_elements == 0) throw Error("relation_count: empty element set");
  switch (kind) {
    case Decomposition::kVertex:
      return n_elements;
    case Decomposition::kPair:
      return n_elements * n_elements;
    case Decomposition::kTriad:
      return n_elements * (n_elements * (n_elements + 1) / 2);
  }
  return 0;
}

}  // namespace hermnet
