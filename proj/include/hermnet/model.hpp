#pragma once

// Heterogeneous relational message passing network.
//
// Node state: scalar features s[N,F] and vector features v[N,3,F]. Each layer
// runs a radial stage (edge messages filtered by distance, summed onto the
// destination) and, except for HPNet, an angular stage (channel-mixed inner
// products of the vector features). Parameter blocks are keyed by relation:
//   HVNet  radial + angular blocks per destination element
//   HPNet  radial blocks per (source, destination) element pair, no angular
//   HTNet  radial blocks per destination element, angular blocks per triad
//          A -> B <- C, each seeing only the vector contributions from A and C

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hermnet/autodiff.hpp"
#include "hermnet/basis.hpp"
#include "hermnet/elements.hpp"
#include "hermnet/error.hpp"
#include "hermnet/graph.hpp"
#include "hermnet/structure.hpp"
#include "hermnet/tensor.hpp"
#include "hermnet/text.hpp"

namespace hermnet {

enum class Variant { kHVNet, kHPNet, kHTNet };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kHVNet:
      return "hvnet";
    case Variant::kHPNet:
      return "hpnet";
    case Variant::kHTNet:
      return "htnet";
  }
  return "";
}

inline Variant parse_variant(std::string_view name) {
  const std::string n = text::lower(name);
  if (n == "hvnet") return Variant::kHVNet;
  if (n == "hpnet") return Variant::kHPNet;
  if (n == "htnet") return Variant::kHTNet;
  throw Error("unknown variant '" + std::string(name) +
              "' (expected hvnet, hpnet or htnet)");
}

/// Deliberate defects used to prove the self-check can fail.
struct FaultInjection {
  /// Negates the z component of r_vec on edges with src > dst.
  bool flip_rvec_component = false;
  /// Exponent applied to the cosine cutoff (1 is correct).
  double cutoff_exponent = 1.0;
};

struct ModelConfig {
  Variant variant = Variant::kHVNet;
  std::size_t hidden = 128;
  std::size_t layers = 3;
  std::size_t n_rbf = kDefaultRadialBasisSize;
  double r_cut = 5.0;
  std::vector<int> element_set;  // sorted atomic numbers

  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  if (c.hidden < 1) throw Error("hidden width must be at least 1");
  if (c.layers < 1) throw Error("layer count must be at least 1");
  if (c.n_rbf < 1) throw Error("radial basis size must be at least 1");
  if (!(c.r_cut > 0.0) || !std::isfinite(c.r_cut)) {
    throw Error("cutoff radius must be positive");
  }
  if (c.element_set.empty()) throw Error("element set is empty");
  for (std::size_t i = 0; i < c.element_set.size(); ++i) {
    const int z = c.element_set[i];
    if (z < 1 || z > kMaxAtomicNumber) {
      throw Error("invalid atomic number " + std::to_string(z));
    }
    if (i && c.element_set[i - 1] >= z) {
      throw Error("element set must be sorted and free of duplicates");
    }
  }
}

/// Named parameter tensors, ordered by name.
using ModelParams = std::map<std::string, Tensor>;

namespace model_detail {

inline std::string radial_prefix(std::size_t layer, const std::string& key) {
  return "layer" + std::to_string(layer) + ".radial." + key + ".";
}

inline std::string angular_prefix(std::size_t layer, const std::string& key) {
  return "layer" + std::to_string(layer) + ".angular." + key + ".";
}

}  // namespace model_detail

inline std::vector<RelationKey> radial_keys(const ModelConfig& c) {
  std::vector<RelationKey> keys;
  if (c.variant == Variant::kHPNet) {
    for (int a : c.element_set) {
      for (int b : c.element_set) keys.emplace_back(PairKey{a, b});
    }
  } else {
    for (int b : c.element_set) keys.emplace_back(VertexKey{b});
  }
  return keys;
}

inline std::vector<RelationKey> angular_keys(const ModelConfig& c) {
  std::vector<RelationKey> keys;
  if (c.variant == Variant::kHVNet) {
    for (int b : c.element_set) keys.emplace_back(VertexKey{b});
  } else if (c.variant == Variant::kHTNet) {
    for (int b : c.element_set) {
      for (std::size_t i = 0; i < c.element_set.size(); ++i) {
        for (std::size_t k = i; k < c.element_set.size(); ++k) {
          keys.emplace_back(
              TriadKey::make(b, c.element_set[i], c.element_set[k]));
        }
      }
    }
  }
  return keys;
}

/// Every parameter name with its shape.
inline std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
  validate(c);
  using namespace model_detail;
  const std::size_t f = c.hidden;
  std::map<std::string, Shape> out;
  out["embedding"] = {static_cast<std::size_t>(kMaxAtomicNumber), f};
  for (std::size_t l = 0; l < c.layers; ++l) {
    for (const auto& key : radial_keys(c)) {
      const std::string p = radial_prefix(l, relation_name(key));
      out[p + "phi.0.w"] = {f, f};
      out[p + "phi.0.b"] = {f};
      out[p + "phi.1.w"] = {f, 3 * f};
      out[p + "phi.1.b"] = {3 * f};
      out[p + "filter.w"] = {c.n_rbf, 3 * f};
      out[p + "filter.b"] = {3 * f};
    }
    for (const auto& key : angular_keys(c)) {
      const std::string p = angular_prefix(l, relation_name(key));
      out[p + "U"] = {f, f};
      out[p + "V"] = {f, f};
      out[p + "mlp.0.w"] = {3 * f, f};
      out[p + "mlp.0.b"] = {f};
      out[p + "mlp.1.w"] = {f, 3 * f};
      out[p + "mlp.1.b"] = {3 * f};
    }
  }
  out["readout.0.w"] = {f, f};
  out["readout.0.b"] = {f};
  out["readout.1.w"] = {f, 1};
  out["readout.1.b"] = {1};
  out["ref_energy"] = {c.element_set.size()};
  return out;
}

/// Glorot-uniform weights, zero biases, unit-normal embedding, zero final
/// readout layer and zero reference energies.
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& [name, shape] : parameter_shapes(c)) {
    Tensor t(shape);
    const bool bias = name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (name == "embedding") {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& x : t.data()) x = normal(rng);
    } else if (name == "readout.1.w" || name == "ref_energy" || bias) {
      // zeros
    } else {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> uni(-limit, limit);
      for (double& x : t.data()) x = uni(rng);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

/// Throws unless `params` holds exactly the tensors `c` requires.
inline void check_params(const ModelConfig& c, const ModelParams& params) {
  const auto shapes = parameter_shapes(c);
  for (const auto& [name, shape] : shapes) {
    const auto it = params.find(name);
    if (it == params.end()) throw Error("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + name + "' has shape " +
                       shape_string(it->second.shape()) + ", expected " +
                       shape_string(shape));
    }
  }
  for (const auto& [name, t] : params) {
    if (!shapes.count(name)) throw Error("unexpected parameter '" + name + "'");
  }
}

struct Model {
  ModelConfig config;
  ModelParams params;
};

inline Model make_model(ModelConfig config, std::uint64_t seed) {
  validate(config);
  Model m{config, init_params(config, seed)};
  return m;
}

inline std::size_t element_index(const ModelConfig& c, int z) {
  const auto it = std::lower_bound(c.element_set.begin(), c.element_set.end(), z);
  if (it == c.element_set.end() || *it != z) {
    std::string known;
    for (int e : c.element_set) {
      known += (known.empty() ? "" : ",") + std::string(element_symbol(e));
    }
    throw VocabularyError("element " + std::string(element_symbol(z)) +
                          " is not in the model vocabulary {" + known + "}");
  }
  return static_cast<std::size_t>(it - c.element_set.begin());
}

// ---------------------------------------------------------------------------
// Batches and plans

/// Several structures concatenated into one block-diagonal graph.
struct Batch {
  std::size_t n_frames = 0;
  std::size_t n_nodes = 0;
  std::vector<int> species;
  std::vector<std::size_t> frame_of_node;
  std::vector<std::size_t> node_offset;  // first node of each frame
  Tensor positions;                      // [N, 3]
  std::vector<std::size_t> src, dst;
  Tensor shift;                          // [E, 3]
  std::size_t n_edges() const { return src.size(); }
};

/// `graphs[k]` must be the cutoff graph of `structures[k]`.
inline Batch make_batch(const std::vector<const AtomicStructure*>& structures,
                        const std::vector<const RelationalGraph*>& graphs) {
  if (structures.size() != graphs.size()) {
    throw Error("make_batch: structure and graph counts differ");
  }
  Batch b;
  b.n_frames = structures.size();
  std::size_t n_edges = 0;
  for (std::size_t k = 0; k < structures.size(); ++k) {
    if (graphs[k]->n_nodes != structures[k]->size()) {
      throw Error("make_batch: graph does not match structure");
    }
    b.n_nodes += structures[k]->size();
    n_edges += graphs[k]->edges.size();
  }
  b.positions = Tensor(Shape{b.n_nodes, 3});
  b.shift = Tensor(Shape{n_edges, 3});
  b.src.reserve(n_edges);
  b.dst.reserve(n_edges);
  std::size_t base = 0;
  for (std::size_t k = 0; k < structures.size(); ++k) {
    const AtomicStructure& s = *structures[k];
    b.node_offset.push_back(base);
    for (std::size_t i = 0; i < s.size(); ++i) {
      b.species.push_back(s.species[i]);
      b.frame_of_node.push_back(k);
      for (int d = 0; d < 3; ++d) b.positions(base + i, d) = s.positions[i][d];
    }
    for (const Edge& e : graphs[k]->edges) {
      const std::size_t row = b.src.size();
      b.src.push_back(base + e.src);
      b.dst.push_back(base + e.dst);
      for (int d = 0; d < 3; ++d) b.shift(row, d) = e.shift[d];
    }
    base += s.size();
  }
  return b;
}

struct RadialJob {
  std::string block;
  ad::Index edges;      // rows of the batch edge arrays
  ad::Index src_nodes;  // distinct source nodes
  ad::Index src_local;  // per edge: position of its source in src_nodes
  ad::Index src;        // per edge: source node
  ad::Index dst;        // per edge: destination node
  // Per source element: job-local edge rows and their destinations.
  std::vector<std::pair<int, std::pair<ad::Index, ad::Index>>> by_source;
};

struct AngularJob {
  std::string block;
  ad::Index nodes;
  std::vector<int> sources;  // empty: the full vector state
};

struct LayerPlan {
  std::vector<RadialJob> radial;
  std::vector<AngularJob> angular;
  bool split_by_source = false;
};

enum class PlanMode {
  kTyped,
  /// One relation spanning the whole graph; single-element models only.
  kUntyped,
};

namespace model_detail {

inline RadialJob make_radial_job(const Batch& b, std::string block,
                                 const std::vector<std::size_t>& edges,
                                 bool split_by_source) {
  RadialJob job;
  job.block = std::move(block);
  std::vector<std::size_t> src(edges.size()), dst(edges.size());
  std::vector<std::size_t> nodes;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    src[k] = b.src[edges[k]];
    dst[k] = b.dst[edges[k]];
  }
  nodes = src;
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  std::vector<std::size_t> local(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    local[k] = static_cast<std::size_t>(
        std::lower_bound(nodes.begin(), nodes.end(), src[k]) - nodes.begin());
  }
  if (split_by_source) {
    std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
        split;
    for (std::size_t k = 0; k < edges.size(); ++k) {
      auto& [rows, targets] = split[b.species[src[k]]];
      rows.push_back(k);
      targets.push_back(dst[k]);
    }
    for (auto& [z, rt] : split) {
      job.by_source.emplace_back(
          z, std::make_pair(ad::make_index(std::move(rt.first)),
                            ad::make_index(std::move(rt.second))));
    }
  }
  job.edges = ad::make_index(edges);
  job.src_nodes = ad::make_index(std::move(nodes));
  job.src_local = ad::make_index(std::move(local));
  job.src = ad::make_index(std::move(src));
  job.dst = ad::make_index(std::move(dst));
  return job;
}

}  // namespace model_detail

/// Groups the batch edges and nodes into parameter-block jobs. Throws
/// VocabularyError for elements outside the model vocabulary.
inline LayerPlan make_plan(const ModelConfig& c, const Batch& b,
                           PlanMode mode = PlanMode::kTyped) {
  using model_detail::make_radial_job;
  for (int z : b.species) element_index(c, z);
  LayerPlan plan;
  if (mode == PlanMode::kUntyped) {
    if (c.element_set.size() != 1 || c.variant == Variant::kHPNet ||
        c.variant == Variant::kHTNet) {
      throw Error("untyped plan requires a single-element HVNet model");
    }
    const std::string key = relation_name(VertexKey{c.element_set[0]});
    std::vector<std::size_t> all(b.n_edges());
    for (std::size_t e = 0; e < all.size(); ++e) all[e] = e;
    plan.radial.push_back(make_radial_job(b, key, all, false));
    std::vector<std::size_t> nodes(b.n_nodes);
    for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i] = i;
    plan.angular.push_back({key, ad::make_index(std::move(nodes)), {}});
    return plan;
  }

  plan.split_by_source = c.variant == Variant::kHTNet;
  std::map<RelationKey, std::vector<std::size_t>> groups;
  for (std::size_t e = 0; e < b.n_edges(); ++e) {
    const int zs = b.species[b.src[e]];
    const int zd = b.species[b.dst[e]];
    const RelationKey key = c.variant == Variant::kHPNet
                                ? RelationKey(PairKey{zs, zd})
                                : RelationKey(VertexKey{zd});
    groups[key].push_back(e);
  }
  for (const auto& [key, edges] : groups) {
    plan.radial.push_back(
        make_radial_job(b, relation_name(key), edges, plan.split_by_source));
  }

  std::map<int, std::vector<std::size_t>> by_element;
  for (std::size_t i = 0; i < b.n_nodes; ++i) by_element[b.species[i]].push_back(i);
  if (c.variant == Variant::kHVNet) {
    for (auto& [z, nodes] : by_element) {
      plan.angular.push_back(
          {relation_name(VertexKey{z}), ad::make_index(std::move(nodes)), {}});
    }
  } else if (c.variant == Variant::kHTNet) {
    // Every source pair of the vocabulary runs, present or not, so that a
    // neighbor crossing the cutoff changes the energy continuously.
    for (auto& [z, nodes] : by_element) {
      const ad::Index idx = ad::make_index(std::move(nodes));
      for (std::size_t i = 0; i < c.element_set.size(); ++i) {
        for (std::size_t k = i; k < c.element_set.size(); ++k) {
          const int a = c.element_set[i];
          const int cc = c.element_set[k];
          std::vector<int> sources{a};
          if (cc != a) sources.push_back(cc);
          plan.angular.push_back(
              {relation_name(TriadKey::make(z, a, cc)), idx, sources});
        }
      }
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Layers

/// Parameters placed on a tape.
class ParamLeaves {
 public:
  ParamLeaves(ad::Tape& tape, const ModelParams& params, bool trainable) {
    for (const auto& [name, t] : params) {
      vars_.emplace(name, trainable ? tape.variable(t) : tape.constant(t));
    }
  }

  const ad::Var& operator()(const std::string& name) const {
    const auto it = vars_.find(name);
    if (it == vars_.end()) {
      throw VocabularyError("no parameter block '" + name + "'");
    }
    return it->second;
  }

  const std::map<std::string, ad::Var>& all() const { return vars_; }

 private:
  std::map<std::string, ad::Var> vars_;
};

struct NodeState {
  ad::Var s;  // [N, F]
  ad::Var v;  // [N, 3, F]
};

struct EdgeGeometry {
  ad::Var rvec;  // [E, 3]
  ad::Var r;     // [E]
  ad::Var rhat;  // [E, 3]
  ad::Var rbf;   // [E, n_rbf]
  ad::Var fcut;  // [E]
};

inline ad::Var dense(const ad::Var& x, const ad::Var& w, const ad::Var& b) {
  ad::Var y = ad::matmul(x, w);
  return ad::add(y, ad::bcast_rows(b, ad::detail::drop_last(y.shape())));
}

/// Edge vectors, distances, basis and cutoff on the tape, differentiable
/// with respect to `positions` [N, 3].
inline EdgeGeometry edge_geometry(const ad::Var& positions, const Batch& b,
                                  const ModelConfig& c,
                                  const FaultInjection& fault = {}) {
  ad::Tape& tape = positions.tape();
  EdgeGeometry g;
  const ad::Index src = ad::make_index(b.src);
  const ad::Index dst = ad::make_index(b.dst);
  g.rvec = ad::add(ad::sub(ad::gather(positions, src), ad::gather(positions, dst)),
                   tape.constant(b.shift));
  if (fault.flip_rvec_component) {
    Tensor mask(Shape{b.n_edges(), 3}, 1.0);
    for (std::size_t e = 0; e < b.n_edges(); ++e) {
      if (b.src[e] > b.dst[e]) mask(e, 2) = -1.0;
    }
    g.rvec = ad::mul(g.rvec, tape.constant(std::move(mask)));
  }
  g.r = ad::pow(ad::sum_last(ad::mul(g.rvec, g.rvec)), 0.5);
  g.rhat = ad::div(g.rvec, ad::bcast_last(g.r, 3));
  g.rbf = ad::radial_basis(g.r, c.r_cut, c.n_rbf);
  g.fcut = ad::cosine_cutoff(g.r, c.r_cut, fault.cutoff_exponent);
  return g;
}

struct RadialAggregate {
  ad::Var ds;  // [N, F]
  ad::Var dv;  // [N, 3, F]
  std::vector<std::pair<int, ad::Var>> dv_by_source;
};

/// Messages along the job's edges, summed onto their destinations.
inline RadialAggregate radial_message(const NodeState& state,
                                      const EdgeGeometry& geom,
                                      const RadialJob& job,
                                      const ParamLeaves& p,
                                      const std::string& prefix) {
  const std::size_t n = state.s.value().extent(0);
  const std::size_t f = state.s.value().last();
  ad::Var s_src = ad::gather(state.s, job.src_nodes);
  ad::Var phi = dense(ad::silu(dense(s_src, p(prefix + "phi.0.w"),
                                     p(prefix + "phi.0.b"))),
                      p(prefix + "phi.1.w"), p(prefix + "phi.1.b"));
  phi = ad::gather(phi, job.src_local);
  ad::Var filter = dense(ad::gather(geom.rbf, job.edges), p(prefix + "filter.w"),
                         p(prefix + "filter.b"));
  filter = ad::mul(filter, ad::bcast_last(ad::gather(geom.fcut, job.edges), 3 * f));
  const ad::Var x = ad::mul(phi, filter);
  const ad::Var a = ad::slice_last(x, 0, f);
  const ad::Var bb = ad::slice_last(x, f, f);
  const ad::Var cc = ad::slice_last(x, 2 * f, f);

  RadialAggregate out;
  out.ds = ad::scatter_add(a, job.dst, n);
  const ad::Var dv_edge =
      ad::add(ad::scale_vectors(ad::gather(state.v, job.src), bb),
              ad::outer(ad::gather(geom.rhat, job.edges), cc));
  out.dv = ad::scatter_add(dv_edge, job.dst, n);
  for (const auto& [z, rows_dst] : job.by_source) {
    out.dv_by_source.emplace_back(
        z, ad::scatter_add(ad::gather(dv_edge, rows_dst.first),
                           rows_dst.second, n));
  }
  return out;
}

/// Residual update with summed aggregates.
inline NodeState radial_update(const NodeState& state, const ad::Var& ds,
                               const ad::Var& dv) {
  return {ad::add(state.s, ds), ad::add(state.v, dv)};
}

/// Softening of the vector norm invariant: sqrt(|x|^2 + eps) - sqrt(eps) is
/// zero at x = 0 and keeps its curvature bounded there.
inline constexpr double kNormEpsilon = 0.1;

inline ad::Var soft_norm(const ad::Var& v) {
  return ad::add_scalar(ad::norm_spatial(v, kNormEpsilon),
                        -std::sqrt(kNormEpsilon));
}

struct AngularDelta {
  ad::Var ds;  // [N, F]
  ad::Var dv;  // [N, 3, F]
};

/// Angular message for the job's nodes given the scalar state `s` and the
/// vector state `v` visible to the job. Returns full-size increments.
inline AngularDelta angular_message(const ad::Var& s, const ad::Var& v,
                                    const AngularJob& job, const ParamLeaves& p,
                                    const std::string& prefix) {
  const std::size_t n = s.value().extent(0);
  const std::size_t f = s.value().last();
  const ad::Var vj = ad::gather(v, job.nodes);
  const ad::Var uv = ad::matmul(vj, p(prefix + "U"));
  const ad::Var vv = ad::matmul(vj, p(prefix + "V"));
  const ad::Var inner = ad::inner_spatial(uv, vv);
  const ad::Var norm = soft_norm(vv);
  const ad::Var h = ad::concat_last({ad::gather(s, job.nodes), inner, norm});
  const ad::Var y = dense(ad::silu(dense(h, p(prefix + "mlp.0.w"),
                                         p(prefix + "mlp.0.b"))),
                          p(prefix + "mlp.1.w"), p(prefix + "mlp.1.b"));
  const ad::Var a_ss = ad::slice_last(y, 0, f);
  const ad::Var a_sv = ad::slice_last(y, f, f);
  const ad::Var a_vv = ad::slice_last(y, 2 * f, f);
  AngularDelta out;
  out.ds = ad::scatter_add(ad::add(a_ss, ad::mul(a_sv, inner)), job.nodes, n);
  out.dv = ad::scatter_add(ad::scale_vectors(uv, a_vv), job.nodes, n);
  return out;
}

/// One full layer: radial stage over every radial job, then the angular
/// stage (skipped when the plan has no angular jobs).
inline NodeState hermconv_layer(const NodeState& state, const EdgeGeometry& geom,
                                const LayerPlan& plan, const ParamLeaves& p,
                                std::size_t layer) {
  using namespace model_detail;
  const ad::Var zero_s = state.s.tape().constant(Tensor(state.s.shape()));
  const ad::Var zero_v = state.v.tape().constant(Tensor(state.v.shape()));
  std::optional<ad::Var> ds, dv;
  std::map<int, ad::Var> dv_source;
  auto accumulate = [](std::optional<ad::Var>& acc, const ad::Var& x) {
    acc = acc ? ad::add(*acc, x) : x;
  };
  for (const RadialJob& job : plan.radial) {
    const RadialAggregate agg =
        radial_message(state, geom, job, p, radial_prefix(layer, job.block));
    accumulate(ds, agg.ds);
    accumulate(dv, agg.dv);
    for (const auto& [z, part] : agg.dv_by_source) {
      const auto it = dv_source.find(z);
      if (it == dv_source.end()) {
        dv_source.emplace(z, part);
      } else {
        it->second = ad::add(it->second, part);
      }
    }
  }
  NodeState mid = radial_update(state, ds ? *ds : zero_s, dv ? *dv : zero_v);
  if (plan.angular.empty()) return mid;

  std::optional<ad::Var> as, av;
  for (const AngularJob& job : plan.angular) {
    ad::Var v = mid.v;
    if (!job.sources.empty()) {
      v = state.v;
      for (int z : job.sources) {
        const auto it = dv_source.find(z);
        if (it != dv_source.end()) v = ad::add(v, it->second);
      }
    }
    const AngularDelta d =
        angular_message(mid.s, v, job, p, angular_prefix(layer, job.block));
    accumulate(as, d.ds);
    accumulate(av, d.dv);
  }
  return {ad::add(mid.s, *as), ad::add(mid.v, *av)};
}

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardResult {
  ad::Var positions;      // [N, 3] leaf
  ad::Var atom_energy;    // [N]
  ad::Var frame_energy;   // [n_frames]
  ad::Var total_energy;   // scalar
  NodeState final_state;
};

inline NodeState initial_state(const ParamLeaves& p, const Batch& b,
                               std::size_t hidden) {
  std::vector<std::size_t> rows(b.n_nodes);
  for (std::size_t i = 0; i < b.n_nodes; ++i) {
    rows[i] = static_cast<std::size_t>(b.species[i] - 1);
  }
  const ad::Var& emb = p("embedding");
  NodeState st;
  st.s = ad::gather(emb, ad::make_index(std::move(rows)));
  st.v = emb.tape().constant(Tensor(Shape{b.n_nodes, 3, hidden}));
  return st;
}

inline ForwardResult forward(ad::Tape& tape, const ModelConfig& c,
                             const ParamLeaves& p, const Batch& b,
                             const LayerPlan& plan,
                             const FaultInjection& fault = {}) {
  ForwardResult out;
  out.positions = tape.variable(b.positions);
  const EdgeGeometry geom = edge_geometry(out.positions, b, c, fault);
  NodeState st = initial_state(p, b, c.hidden);
  for (std::size_t l = 0; l < c.layers; ++l) st = hermconv_layer(st, geom, plan, p, l);
  out.final_state = st;

  const ad::Var e = dense(ad::silu(dense(st.s, p("readout.0.w"), p("readout.0.b"))),
                          p("readout.1.w"), p("readout.1.b"));
  std::vector<std::size_t> elem(b.n_nodes);
  for (std::size_t i = 0; i < b.n_nodes; ++i) elem[i] = element_index(c, b.species[i]);
  const ad::Var ref = ad::gather(p("ref_energy"), ad::make_index(std::move(elem)));
  out.atom_energy = ad::add(ad::reshape(e, Shape{b.n_nodes}), ref);
  out.frame_energy = ad::scatter_add(out.atom_energy,
                                     ad::make_index(b.frame_of_node), b.n_frames);
  out.total_energy = ad::sum(out.frame_energy);
  return out;
}

struct Prediction {
  double energy = 0.0;
  std::vector<double> atom_energies;
  std::vector<Vec3> forces;
};

struct PredictOptions {
  bool forces = true;
  PlanMode mode = PlanMode::kTyped;
  FaultInjection fault{};
};

/// Energy (and forces, -dE/dx) of one structure.
inline Prediction predict(const Model& m, const AtomicStructure& s,
                          const PredictOptions& opt = {}) {
  for (int z : s.species) element_index(m.config, z);
  const RelationalGraph g = build_cutoff_graph(s, m.config.r_cut);
  const Batch b = make_batch({&s}, {&g});
  const LayerPlan plan = make_plan(m.config, b, opt.mode);
  ad::Tape tape;
  const ParamLeaves p(tape, m.params, false);
  const ForwardResult fw = forward(tape, m.config, p, b, plan, opt.fault);
  Prediction out;
  out.energy = fw.frame_energy.value()[0];
  out.atom_energies = fw.atom_energy.value().data();
  if (opt.forces) {
    const ad::Var wrt[] = {fw.positions};
    const Tensor grad = tape.backward(fw.total_energy, wrt).tensor(fw.positions);
    out.forces.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (int d = 0; d < 3; ++d) out.forces[i][d] = -grad(i, d);
    }
  }
  return out;
}

/// Final scalar and vector features of one structure.
inline std::pair<Tensor, Tensor> node_features(const Model& m,
                                               const AtomicStructure& s,
                                               PlanMode mode = PlanMode::kTyped) {
  const RelationalGraph g = build_cutoff_graph(s, m.config.r_cut);
  const Batch b = make_batch({&s}, {&g});
  const LayerPlan plan = make_plan(m.config, b, mode);
  ad::Tape tape;
  const ParamLeaves p(tape, m.params, false);
  const ForwardResult fw = forward(tape, m.config, p, b, plan);
  return {fw.final_state.s.value(), fw.final_state.v.value()};
}

}  // namespace hermnet
