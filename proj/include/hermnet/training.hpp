#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "hermnet/autodiff.hpp"
#include "hermnet/error.hpp"
#include "hermnet/graph.hpp"
#include "hermnet/model.hpp"
#include "hermnet/structure.hpp"

namespace hermnet {

struct TrainConfig {
  double lr = 3e-4;
  std::size_t patience = 10;
  double factor = 0.5;
  double energy_weight = 1.0;
  double force_weight = 100.0;
  std::size_t batch_size = 8;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw Error("learning rate must be positive");
  if (c.patience < 1) throw Error("plateau patience must be at least 1");
  if (!(c.factor > 0.0 && c.factor < 1.0)) {
    throw Error("plateau factor must lie in (0, 1)");
  }
  if (!(c.energy_weight >= 0.0) || !(c.force_weight >= 0.0) ||
      c.energy_weight + c.force_weight <= 0.0) {
    throw Error("loss weights must be non-negative and not both zero");
  }
  if (c.batch_size < 1) throw Error("batch size must be at least 1");
  if (c.epochs < 1) throw Error("epoch count must be at least 1");
  if (c.threads < 1) throw Error("thread count must be at least 1");
}

// ---------------------------------------------------------------------------
// Reference energies

/// Least-squares per-element offsets: E_frame ~ sum_Z count_Z * eps_Z.
/// Throws DomainError when the composition matrix is rank deficient.
inline std::map<int, double> fit_reference_energies(const Dataset& data) {
  std::vector<const LabeledFrame*> frames;
  for (const auto& f : data.frames()) {
    if (f.energy) frames.push_back(&f);
  }
  if (frames.empty()) throw DomainError("no frames with energy labels");
  const std::vector<int>& elements = data.element_set();
  const auto n_el = static_cast<Eigen::Index>(elements.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frames.size()), n_el);
  Eigen::VectorXd b(static_cast<Eigen::Index>(frames.size()));
  for (std::size_t r = 0; r < frames.size(); ++r) {
    for (int z : frames[r]->structure.species) {
      const auto col = std::lower_bound(elements.begin(), elements.end(), z) -
                       elements.begin();
      a(static_cast<Eigen::Index>(r), col) += 1.0;
    }
    b[static_cast<Eigen::Index>(r)] = *frames[r]->energy;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < n_el) {
    throw DomainError(
        "composition matrix is rank deficient: element counts are linearly "
        "dependent across frames (for example a fixed stoichiometry), so "
        "per-element reference energies are not identifiable; supply them "
        "manually");
  }
  const Eigen::MatrixXd ata = a.transpose() * a;
  const Eigen::VectorXd atb = a.transpose() * b;
  const Eigen::VectorXd x = ata.ldlt().solve(atb);
  std::map<int, double> out;
  for (Eigen::Index k = 0; k < n_el; ++k) out[elements[static_cast<std::size_t>(k)]] = x[k];
  return out;
}

/// Minimum-norm least-squares offsets; defined for any composition matrix.
inline std::map<int, double> fit_reference_energies_min_norm(const Dataset& data) {
  std::vector<const LabeledFrame*> frames;
  for (const auto& f : data.frames()) {
    if (f.energy) frames.push_back(&f);
  }
  if (frames.empty()) throw DomainError("no frames with energy labels");
  const std::vector<int>& elements = data.element_set();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frames.size()),
                                            static_cast<Eigen::Index>(elements.size()));
  Eigen::VectorXd b(static_cast<Eigen::Index>(frames.size()));
  for (std::size_t r = 0; r < frames.size(); ++r) {
    for (int z : frames[r]->structure.species) {
      const auto col = std::lower_bound(elements.begin(), elements.end(), z) -
                       elements.begin();
      a(static_cast<Eigen::Index>(r), col) += 1.0;
    }
    b[static_cast<Eigen::Index>(r)] = *frames[r]->energy;
  }
  const Eigen::VectorXd x = a.completeOrthogonalDecomposition().solve(b);
  std::map<int, double> out;
  for (std::size_t k = 0; k < elements.size(); ++k) out[elements[k]] = x[static_cast<Eigen::Index>(k)];
  return out;
}

inline void set_reference_energies(Model& m, const std::map<int, double>& refs) {
  Tensor& t = m.params.at("ref_energy");
  for (const auto& [z, e] : refs) t[element_index(m.config, z)] = e;
}

// ---------------------------------------------------------------------------
// Loss

struct LossWeights {
  double energy = 1.0;
  double force = 100.0;
};

/// w_E * mean_frames((dE / N)^2) + w_F * mean_components(dF^2), evaluated
/// on plain numbers. Frames without force labels add no force components.
inline double loss_value(const std::vector<double>& pred_energy,
                         const std::vector<std::vector<Vec3>>& pred_forces,
                         const std::vector<const LabeledFrame*>& labels,
                         const LossWeights& w) {
  if (labels.empty()) throw Error("loss of an empty batch");
  double e_term = 0.0, f_term = 0.0;
  std::size_t components = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const LabeledFrame& f = *labels[k];
    if (!f.energy) throw Error("loss needs energy labels");
    const double de = (pred_energy[k] - *f.energy) /
                      static_cast<double>(f.structure.size());
    e_term += de * de;
    if (w.force > 0.0 && f.forces && k < pred_forces.size() &&
        !pred_forces[k].empty()) {
      for (std::size_t i = 0; i < f.structure.size(); ++i) {
        for (int d = 0; d < 3; ++d) {
          const double df = pred_forces[k][i][d] - (*f.forces)[i][d];
          f_term += df * df;
        }
      }
      components += 3 * f.structure.size();
    }
  }
  double loss = w.energy * e_term / static_cast<double>(labels.size());
  if (components) loss += w.force * f_term / static_cast<double>(components);
  return loss;
}

/// Loss over `frames` and its gradient with respect to every parameter.
/// `frame_norm` and `component_norm` are the mean denominators; passing the
/// totals of a larger minibatch lets chunks be summed.
struct LossGradient {
  double loss = 0.0;
  std::map<std::string, Tensor> grads;
};

inline LossGradient loss_gradient(const Model& m,
                                  const std::vector<const LabeledFrame*>& frames,
                                  const std::vector<const RelationalGraph*>& graphs,
                                  const LossWeights& w, double frame_norm,
                                  double component_norm) {
  std::vector<const AtomicStructure*> structures;
  for (const auto* f : frames) structures.push_back(&f->structure);
  const Batch b = make_batch(structures, graphs);
  const LayerPlan plan = make_plan(m.config, b);
  ad::Tape tape;
  const ParamLeaves p(tape, m.params, true);
  const ForwardResult fw = forward(tape, m.config, p, b, plan);

  Tensor e_true(Shape{b.n_frames});
  Tensor inv_n(Shape{b.n_frames});
  for (std::size_t k = 0; k < frames.size(); ++k) {
    e_true[k] = *frames[k]->energy;
    inv_n[k] = 1.0 / static_cast<double>(frames[k]->structure.size());
  }
  const ad::Var de = ad::mul(ad::sub(fw.frame_energy, tape.constant(e_true)),
                             tape.constant(inv_n));
  ad::Var loss = ad::scale(ad::sum(ad::mul(de, de)), w.energy / frame_norm);

  bool any_forces = false;
  for (const auto* f : frames) any_forces = any_forces || f->forces.has_value();
  if (w.force > 0.0 && any_forces) {
    const ad::Var wrt[] = {fw.positions};
    const ad::Var grad_x =
        tape.backward(fw.total_energy, wrt, true).of(fw.positions);
    Tensor f_true(Shape{b.n_nodes, 3});
    Tensor mask(Shape{b.n_nodes, 3});
    for (std::size_t k = 0; k < frames.size(); ++k) {
      if (!frames[k]->forces) continue;
      for (std::size_t i = 0; i < frames[k]->structure.size(); ++i) {
        for (int d = 0; d < 3; ++d) {
          f_true(b.node_offset[k] + i, d) = (*frames[k]->forces)[i][d];
          mask(b.node_offset[k] + i, d) = 1.0;
        }
      }
    }
    // -grad_x - F_true, masked to labeled frames.
    const ad::Var df = ad::mul(ad::add(grad_x, tape.constant(f_true)),
                               tape.constant(mask));
    loss = ad::add(loss, ad::scale(ad::sum(ad::mul(df, df)),
                                   w.force / component_norm));
  }

  LossGradient out;
  out.loss = loss.value().item();
  std::vector<ad::Var> leaves;
  for (const auto& [name, v] : p.all()) leaves.push_back(v);
  const ad::Gradients g = tape.backward(loss, leaves);
  for (const auto& [name, v] : p.all()) out.grads.emplace(name, g.tensor(v));
  return out;
}

/// Runs `work(k)` for k in [0, n) on up to `threads` threads.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& work) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t k = 0; k < n; ++k) work(k);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < n; k += threads) work(k);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Minibatch loss and gradient, split into `threads` contiguous chunks whose
/// gradients are summed in chunk order.
inline LossGradient minibatch_gradient(const Model& m,
                                       const std::vector<const LabeledFrame*>& frames,
                                       const std::vector<const RelationalGraph*>& graphs,
                                       const LossWeights& w, std::size_t threads) {
  if (frames.empty()) throw Error("loss of an empty batch");
  double components = 0.0;
  for (const auto* f : frames) {
    if (f->forces) components += 3.0 * static_cast<double>(f->structure.size());
  }
  const double frame_norm = static_cast<double>(frames.size());
  const double component_norm = std::max(components, 1.0);
  const std::size_t chunks = std::max<std::size_t>(1, std::min(threads, frames.size()));
  std::vector<LossGradient> parts(chunks);
  parallel_for(chunks, chunks, [&](std::size_t c) {
    const std::size_t lo = frames.size() * c / chunks;
    const std::size_t hi = frames.size() * (c + 1) / chunks;
    const std::vector<const LabeledFrame*> fs(frames.begin() + lo, frames.begin() + hi);
    const std::vector<const RelationalGraph*> gs(graphs.begin() + lo, graphs.begin() + hi);
    parts[c] = loss_gradient(m, fs, gs, w, frame_norm, component_norm);
  });
  LossGradient total = std::move(parts[0]);
  for (std::size_t c = 1; c < chunks; ++c) {
    total.loss += parts[c].loss;
    for (auto& [name, g] : total.grads) {
      const Tensor& other = parts[c].grads.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += other[i];
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct AdamState {
  std::map<std::string, Tensor> m, v;
  std::size_t step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having zero gradient.
inline void adam_step(ModelParams& params, const std::map<std::string, Tensor>& grads,
                      AdamState& state, double lr, const AdamConfig& cfg = {}) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto& m = state.m.try_emplace(name, Tensor(p.shape())).first->second;
    auto& v = state.v.try_emplace(name, Tensor(p.shape())).first->second;
    const auto it = grads.find(name);
    const Tensor* g = it == grads.end() ? nullptr : &it->second;
    if (g && g->shape() != p.shape()) {
      throw ShapeError("adam_step: gradient of '" + name + "' has shape " +
                       shape_string(g->shape()));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

/// Reduces the learning rate by `factor` after `patience` epochs without a
/// relative improvement above 1e-6, never going below lr0 * 1e-4.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, std::size_t patience, double factor)
      : lr0_(lr0), lr_(lr0), patience_(patience), factor_(factor) {}

  double lr() const noexcept { return lr_; }
  double floor() const noexcept { return lr0_ * 1e-4; }

  /// Records one validation loss and returns the learning rate to use next.
  double step(double loss) {
    if (!have_best_ || loss < best_ - 1e-6 * std::abs(best_)) {
      best_ = loss;
      have_best_ = true;
      bad_ = 0;
    } else if (++bad_ >= patience_) {
      lr_ = std::max(lr_ * factor_, floor());
      bad_ = 0;
    }
    return lr_;
  }

 private:
  double lr0_, lr_;
  std::size_t patience_;
  double factor_;
  double best_ = 0.0;
  bool have_best_ = false;
  std::size_t bad_ = 0;
};

/// Learning rate after replaying a validation-loss history.
inline double lr_from_history(const std::vector<double>& history, double lr0,
                              std::size_t patience, double factor) {
  if (history.empty()) throw Error("lr_from_history: empty history");
  PlateauScheduler s(lr0, patience, factor);
  for (double x : history) s.step(x);
  return s.lr();
}

// ---------------------------------------------------------------------------
// Prediction over datasets and metrics

/// Cutoff graphs for every frame.
inline std::vector<RelationalGraph> build_graphs(const Dataset& data, double r_cut,
                                                 std::size_t threads = 1) {
  std::vector<RelationalGraph> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t k) {
    out[k] = build_cutoff_graph(data[k].structure, r_cut);
  });
  return out;
}

/// Energies and forces for each frame, evaluated in blocks of frames.
inline std::vector<Prediction> predict_frames(const Model& m, const Dataset& data,
                                              const std::vector<RelationalGraph>& graphs,
                                              bool forces, std::size_t threads = 1,
                                              std::size_t block = 16) {
  for (int z : data.element_set()) element_index(m.config, z);
  std::vector<Prediction> out(data.size());
  const std::size_t n_blocks = (data.size() + block - 1) / block;
  parallel_for(n_blocks, threads, [&](std::size_t blk) {
    const std::size_t lo = blk * block;
    const std::size_t hi = std::min(data.size(), lo + block);
    std::vector<const AtomicStructure*> ss;
    std::vector<const RelationalGraph*> gs;
    for (std::size_t k = lo; k < hi; ++k) {
      ss.push_back(&data[k].structure);
      gs.push_back(&graphs[k]);
    }
    const Batch b = make_batch(ss, gs);
    const LayerPlan plan = make_plan(m.config, b);
    ad::Tape tape;
    const ParamLeaves p(tape, m.params, false);
    const ForwardResult fw = forward(tape, m.config, p, b, plan);
    Tensor grad;
    if (forces) {
      const ad::Var wrt[] = {fw.positions};
      grad = tape.backward(fw.total_energy, wrt).tensor(fw.positions);
    }
    for (std::size_t k = lo; k < hi; ++k) {
      Prediction& pr = out[k];
      const std::size_t base = b.node_offset[k - lo];
      const std::size_t n = data[k].structure.size();
      pr.energy = fw.frame_energy.value()[k - lo];
      pr.atom_energies.assign(fw.atom_energy.value().data().begin() + base,
                              fw.atom_energy.value().data().begin() + base + n);
      if (forces) {
        pr.forces.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (int d = 0; d < 3; ++d) pr.forces[i][d] = -grad(base + i, d);
        }
      }
    }
  });
  return out;
}

struct Metrics {
  double energy_mae = 0.0;            // eV
  double energy_mae_per_atom = 0.0;   // eV/atom
  double energy_rmse_per_atom = 0.0;  // eV/atom
  double force_mae = 0.0;             // eV/Å
  double force_rmse = 0.0;            // eV/Å
  std::size_t n_frames = 0;
  std::size_t n_force_components = 0;
};

inline Metrics compute_metrics(const std::vector<Prediction>& pred, const Dataset& data) {
  if (pred.size() != data.size()) throw Error("prediction count does not match dataset");
  Metrics m;
  double ae = 0, ae_atom = 0, se_atom = 0, af = 0, sf = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const LabeledFrame& f = data[k];
    if (!f.energy) throw Error("metrics need energy labels on every frame");
    const double de = pred[k].energy - *f.energy;
    const double n = static_cast<double>(f.structure.size());
    ae += std::abs(de);
    ae_atom += std::abs(de) / n;
    se_atom += (de / n) * (de / n);
    if (f.forces && !pred[k].forces.empty()) {
      for (std::size_t i = 0; i < f.structure.size(); ++i) {
        for (int d = 0; d < 3; ++d) {
          const double df = pred[k].forces[i][d] - (*f.forces)[i][d];
          af += std::abs(df);
          sf += df * df;
        }
      }
      m.n_force_components += 3 * f.structure.size();
    }
  }
  m.n_frames = data.size();
  if (m.n_frames) {
    const double nf = static_cast<double>(m.n_frames);
    m.energy_mae = ae / nf;
    m.energy_mae_per_atom = ae_atom / nf;
    m.energy_rmse_per_atom = std::sqrt(se_atom / nf);
  }
  if (m.n_force_components) {
    const double nc = static_cast<double>(m.n_force_components);
    m.force_mae = af / nc;
    m.force_rmse = std::sqrt(sf / nc);
  }
  return m;
}

inline Metrics evaluate(const Model& m, const Dataset& data, std::size_t threads = 1) {
  const auto graphs = build_graphs(data, m.config.r_cut, threads);
  return compute_metrics(predict_frames(m, data, graphs, true, threads), data);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_energy_mae_per_atom = 0.0;
  double val_force_mae = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  Metrics best_val_metrics;
};

inline std::string format_epoch(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu\t%.6g\t%.10g\t%.10g\t%.10g\t%.10g", r.epoch,
                r.lr, r.train_loss, r.val_loss, r.val_energy_mae_per_atom,
                r.val_force_mae);
  return buf;
}

struct TrainHooks {
  std::ostream* log = nullptr;   // one TSV line per epoch
  std::ostream* diag = nullptr;  // human-readable notes
};

inline void check_training_data(const Model& m, const Dataset& data, const TrainConfig& c,
                                const char* what) {
  for (int z : data.element_set()) element_index(m.config, z);
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!data[k].energy) {
      throw Error(std::string(what) + " frame " + std::to_string(k) +
                  " has no energy label");
    }
    if (c.force_weight > 0.0 && !data[k].forces) {
      throw Error(std::string(what) + " frame " + std::to_string(k) +
                  " has no force labels but force_weight > 0");
    }
  }
}

/// Trains `m` in place and leaves it holding the parameters with the lowest
/// validation loss. An empty validation set falls back to the training set.
inline TrainResult train(Model& m, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& c, const TrainHooks& hooks = {}) {
  validate(c);
  if (train_set.empty()) throw Error("training set is empty");
  const Dataset& val = val_set.empty() ? train_set : val_set;
  check_training_data(m, train_set, c, "training");
  check_training_data(m, val, c, "validation");
  const LossWeights w{c.energy_weight, c.force_weight};

  const auto train_graphs = build_graphs(train_set, m.config.r_cut, c.threads);
  const auto val_graphs = build_graphs(val, m.config.r_cut, c.threads);
  std::vector<const LabeledFrame*> val_frames;
  for (const auto& f : val.frames()) val_frames.push_back(&f);

  AdamState adam;
  PlateauScheduler sched(c.lr, c.patience, c.factor);
  TrainResult result;
  ModelParams best = m.params;
  bool have_best = false;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    const double lr = sched.lr();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(c.seed + epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += c.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + c.batch_size);
      std::vector<const LabeledFrame*> fs;
      std::vector<const RelationalGraph*> gs;
      for (std::size_t k = lo; k < hi; ++k) {
        fs.push_back(&train_set[order[k]]);
        gs.push_back(&train_graphs[order[k]]);
      }
      const LossGradient lg = minibatch_gradient(m, fs, gs, w, c.threads);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch) +
                              " at learning rate " + std::to_string(lr) +
                              "; lower the learning rate or check the labels "
                              "for extreme forces");
      }
      loss_sum += lg.loss * static_cast<double>(hi - lo);
      adam_step(m.params, lg.grads, adam, lr);
    }

    const auto preds = predict_frames(m, val, val_graphs, c.force_weight > 0.0, c.threads);
    std::vector<double> pe;
    std::vector<std::vector<Vec3>> pf;
    for (const auto& p : preds) {
      pe.push_back(p.energy);
      pf.push_back(p.forces);
    }
    const double val_loss = loss_value(pe, pf, val_frames, w);
    if (!std::isfinite(val_loss)) {
      throw DivergenceError("validation loss became non-finite in epoch " +
                            std::to_string(epoch) + " at learning rate " +
                            std::to_string(lr) + "; lower the learning rate");
    }
    const Metrics vm = compute_metrics(preds, val);

    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(order.size()), val_loss,
                    vm.energy_mae_per_atom, vm.force_mae};
    result.history.push_back(rec);
    if (hooks.log) *hooks.log << format_epoch(rec) << '\n' << std::flush;
    if (!have_best || val_loss < result.best_val_loss) {
      have_best = true;
      best = m.params;
      result.best_epoch = epoch;
      result.best_val_loss = val_loss;
      result.best_val_metrics = vm;
    }
    sched.step(val_loss);
  }
  m.params = std::move(best);
  if (hooks.diag) {
    *hooks.diag << "best validation loss " << result.best_val_loss << " at epoch "
                << result.best_epoch << '\n';
  }
  return result;
}

/// Fits reference energies on `data` and stores them in the model. Falls back
/// to the minimum-norm solution when the composition is not identifiable.
inline std::map<int, double> initialize_references(Model& m, const Dataset& data,
                                                   std::ostream* diag = nullptr) {
  std::map<int, double> refs;
  try {
    refs = fit_reference_energies(data);
  } catch (const DomainError& e) {
    if (diag) *diag << "note: " << e.what() << "; using the minimum-norm solution\n";
    refs = fit_reference_energies_min_norm(data);
  }
  set_reference_energies(m, refs);
  return refs;
}

}  // namespace hermnet
