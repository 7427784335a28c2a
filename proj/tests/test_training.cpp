#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "hermnet/config.hpp"
#include "hermnet/selfcheck.hpp"
#include "hermnet/training.hpp"
#include "hermnet_testing.hpp"

using namespace hermnet;
using namespace hermnet::testing;

namespace {

LabeledFrame composition_frame(const std::map<int, int>& counts, double energy) {
  LabeledFrame f;
  double x = 0;
  for (const auto& [z, n] : counts) {
    for (int k = 0; k < n; ++k) {
      f.structure.species.push_back(z);
      f.structure.positions.push_back(Vec3{x, 0, 0});
      x += 1.5;
    }
  }
  f.energy = energy;
  return f;
}

Model small_model(const Dataset& data, Variant v = Variant::kHVNet, std::size_t hidden = 4,
                  std::size_t layers = 1) {
  ModelConfig c;
  c.variant = v;
  c.hidden = hidden;
  c.layers = layers;
  c.r_cut = 5.0;
  c.element_set = data.element_set();
  return make_model(c, 1);
}

std::vector<const LabeledFrame*> pointers(const Dataset& d) {
  std::vector<const LabeledFrame*> out;
  for (const auto& f : d.frames()) out.push_back(&f);
  return out;
}

// Loss evaluated only through predict() and loss_value().
double plain_loss(const Model& m, const Dataset& d, const LossWeights& w) {
  std::vector<double> pe;
  std::vector<std::vector<Vec3>> pf;
  for (const auto& f : d.frames()) {
    const Prediction p = predict(m, f.structure, {w.force > 0});
    pe.push_back(p.energy);
    pf.push_back(p.forces);
  }
  return loss_value(pe, pf, pointers(d), w);
}

LossGradient full_gradient(const Model& m, const Dataset& d, const LossWeights& w,
                           std::size_t threads = 1) {
  const auto graphs = build_graphs(d, m.config.r_cut);
  std::vector<const RelationalGraph*> gs;
  for (const auto& g : graphs) gs.push_back(&g);
  return minibatch_gradient(m, pointers(d), gs, w, threads);
}

double rel_error(double a, double b) { return std::abs(a - b) / std::abs(b); }

TrainConfig quick_config() {
  TrainConfig c;
  c.lr = 3e-3;
  c.epochs = 4;
  c.batch_size = 3;
  c.patience = 2;
  c.seed = 5;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reference energies

TEST(ReferenceEnergies, ExactSmallSystem) {
  const double h = -13.6, o = -432.0;
  Dataset d;
  d.push_back(composition_frame({{1, 2}}, 2 * h));
  d.push_back(composition_frame({{8, 2}}, 2 * o));
  d.push_back(composition_frame({{1, 2}, {8, 1}}, 2 * h + o));
  const auto refs = fit_reference_energies(d);
  EXPECT_NEAR(refs.at(1), h, 1e-10);
  EXPECT_NEAR(refs.at(8), o, 1e-10);
}

TEST(ReferenceEnergies, RecoversOffsetsUnderNoise) {
  const std::map<int, double> truth = {{1, -0.5}, {6, -37.8}, {7, -54.6}, {8, -75.1}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Dataset d;
    for (int k = 0; k < 50; ++k) {
      std::map<int, int> counts;
      double e = 0;
      for (const auto& [z, eps] : truth) {
        const int n = static_cast<int>(uniform_int(rng, 0, 6));
        if (n) counts[z] = n;
        e += n * eps;
      }
      if (counts.empty()) counts[1] = 1, e = truth.at(1);
      d.push_back(composition_frame(counts, e + uniform(rng, -1e-6, 1e-6)));
    }
    const auto refs = fit_reference_energies(d);
    for (const auto& [z, eps] : truth) EXPECT_NEAR(refs.at(z), eps, 1e-5) << "Z=" << z;
  }
}

TEST(ReferenceEnergies, FixedStoichiometryIsRankDeficient) {
  Dataset d;
  d.push_back(composition_frame({{1, 2}, {8, 1}}, -10.0));
  d.push_back(composition_frame({{1, 4}, {8, 2}}, -20.2));
  EXPECT_THROW(fit_reference_energies(d), DomainError);
  // The minimum-norm solution lies along the composition direction (2, 1).
  // With x = t * (2, 1) the rows predict 5t and 10t.
  const auto refs = fit_reference_energies_min_norm(d);
  const double t_ls = (5 * -10.0 + 10 * -20.2) / (25.0 + 100.0);
  EXPECT_NEAR(refs.at(1), 2 * t_ls, 1e-10);
  EXPECT_NEAR(refs.at(8), t_ls, 1e-10);

  Model m = small_model(d);
  std::ostringstream diag;
  const auto fallback = initialize_references(m, d, &diag);
  EXPECT_NE(diag.str().find("minimum-norm"), std::string::npos);
  EXPECT_NEAR(m.params.at("ref_energy")[0], fallback.at(1), 0.0);
}

TEST(ReferenceEnergies, ShiftingLabelsShiftsOffsets) {
  Dataset a = lennard_jones_dataset(12, 6, 3);
  const std::map<int, double> delta = {{18, 0.37}, {36, -1.25}};
  Dataset b;
  for (LabeledFrame f : a.frames()) {
    for (int z : f.structure.species) *f.energy += delta.at(z);
    b.push_back(std::move(f));
  }
  const auto ra = fit_reference_energies(a), rb = fit_reference_energies(b);
  for (const auto& [z, dz] : delta) EXPECT_NEAR(rb.at(z) - ra.at(z), dz, 1e-10);
}

TEST(ReferenceEnergies, NoLabelsIsAnError) {
  Dataset d;
  LabeledFrame f = composition_frame({{1, 1}}, 0);
  f.energy.reset();
  d.push_back(f);
  EXPECT_THROW(fit_reference_energies(d), DomainError);
  EXPECT_THROW(fit_reference_energies_min_norm(d), DomainError);
}

// ---------------------------------------------------------------------------
// Loss

TEST(Loss, Examples) {
  LabeledFrame f = composition_frame({{1, 2}}, 3.0);
  f.forces = std::vector<Vec3>{{0, 0, 1}, {0, 0, -1}};
  const std::vector<const LabeledFrame*> labels = {&f};
  const LossWeights w{1.0, 100.0};
  EXPECT_EQ(loss_value({3.0}, {*f.forces}, labels, w), 0.0);
  EXPECT_DOUBLE_EQ(loss_value({5.0}, {*f.forces}, labels, w), 1.0);
  std::vector<Vec3> off = *f.forces;
  off[1][0] = 1.0;
  EXPECT_DOUBLE_EQ(loss_value({3.0}, {off}, labels, w), 100.0 / 6.0);
  EXPECT_DOUBLE_EQ(loss_value({3.0}, {off}, labels, {1.0, 0.0}), 0.0);
  EXPECT_THROW(loss_value({}, {}, {}, w), Error);
}

TEST(Loss, TapeLossMatchesPlainLoss) {
  const Dataset d = lennard_jones_dataset(3, 6, 7);
  const Model m = selfcheck_detail::random_model(Variant::kHPNet, d.element_set(), 2);
  for (LossWeights w : {LossWeights{1, 100}, LossWeights{1, 0}, LossWeights{0, 1}}) {
    EXPECT_LT(rel_error(full_gradient(m, d, w).loss, plain_loss(m, d, w)), 1e-12);
  }
}

TEST(Loss, ChunkedGradientMatchesSingleChunk) {
  const Dataset d = lennard_jones_dataset(5, 6, 8);
  const Model m = selfcheck_detail::random_model(Variant::kHVNet, d.element_set(), 3);
  const LossWeights w{1, 100};
  const LossGradient a = full_gradient(m, d, w, 1), b = full_gradient(m, d, w, 3);
  EXPECT_NEAR(a.loss, b.loss, 1e-12 * std::abs(a.loss));
  for (const auto& [name, g] : a.grads) {
    const Tensor& h = b.grads.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_NEAR(g[i], h[i], 1e-10 * (1 + std::abs(g[i]))) << name;
    }
  }
}

TEST(Loss, EmptyBatchIsAnError) {
  const Dataset d = lennard_jones_dataset(1, 6, 9);
  const Model m = small_model(d);
  EXPECT_THROW(minibatch_gradient(m, {}, {}, {}, 1), Error);
}

class LossGradientFd : public ::testing::TestWithParam<Variant> {};

TEST_P(LossGradientFd, EveryParameterBlockMatchesFiniteDifferences) {
  const Dataset d = lennard_jones_dataset(2, 5, 10);
  const Model m = selfcheck_detail::random_model(GetParam(), d.element_set(), 4);
  const LossWeights w{1, 10};
  const LossGradient lg = full_gradient(m, d, w);
  Rng rng(11);
  const double h = 1e-5;
  std::size_t checked = 0;
  for (const auto& [name, g] : lg.grads) {
    if (name == "embedding") continue;  // rows of absent elements are exactly zero
    for (int rep = 0; rep < 2; ++rep) {
      const std::size_t i = uniform_int(rng, 0, g.size() - 1);
      Model a = m, b = m;
      a.params.at(name)[i] += h;
      b.params.at(name)[i] -= h;
      const double fd = (plain_loss(a, d, w) - plain_loss(b, d, w)) / (2 * h);
      const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-3});
      EXPECT_LT(std::abs(fd - g[i]) / scale, 1e-4) << name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 20u);
  // Embedding rows of the two present elements.
  const Tensor& ge = lg.grads.at("embedding");
  const std::size_t hidden = m.config.hidden;
  for (int z : d.element_set()) {
    const std::size_t i = static_cast<std::size_t>(z - 1) * hidden + 1;
    Model a = m, b = m;
    a.params.at("embedding")[i] += h;
    b.params.at("embedding")[i] -= h;
    const double fd = (plain_loss(a, d, w) - plain_loss(b, d, w)) / (2 * h);
    EXPECT_LT(std::abs(fd - ge[i]) / std::max({std::abs(fd), std::abs(ge[i]), 1e-3}), 1e-4);
  }
  EXPECT_EQ(ge[0], 0.0);  // hydrogen row: no hydrogen in the data
}

INSTANTIATE_TEST_SUITE_P(Variants, LossGradientFd,
                         ::testing::Values(Variant::kHVNet, Variant::kHPNet, Variant::kHTNet),
                         [](const auto& info) { return variant_name(info.param); });

// ---------------------------------------------------------------------------
// Optimizer and schedule

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  ModelParams p = {{"x", Tensor({3}, {1.0, -2.0, 0.5})}};
  const std::map<std::string, Tensor> g = {{"x", Tensor({3}, {0.3, -4.0, 1e-3})}};
  AdamState st;
  adam_step(p, g, st, 0.01);
  EXPECT_NEAR(p.at("x")[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.at("x")[1], -2.0 + 0.01, 1e-9);
  EXPECT_NEAR(p.at("x")[2], 0.5 - 0.01, 1e-7);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroOrMissingGradientLeavesParametersUnchanged) {
  ModelParams p = {{"x", Tensor({2}, {1.0, 2.0})}, {"y", Tensor({1}, {3.0})}};
  const ModelParams before = p;
  AdamState st;
  for (int k = 0; k < 5; ++k) adam_step(p, {{"x", Tensor({2})}}, st, 0.1);
  EXPECT_EQ(p, before);
  EXPECT_THROW(adam_step(p, {{"x", Tensor({3})}}, st, 0.1), ShapeError);
}

TEST(Adam, ConvergesOnAQuadratic) {
  const std::vector<double> target = {3.0, -1.0, 0.25, 7.0};
  ModelParams p = {{"x", Tensor({4})}};
  AdamState st;
  for (int k = 0; k < 2000; ++k) {
    Tensor g({4});
    for (std::size_t i = 0; i < 4; ++i) g[i] = 2 * (p.at("x")[i] - target[i]) * (i + 1);
    adam_step(p, {{"x", g}}, st, 0.05);
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.at("x")[i], target[i], 1e-3);
}

TEST(Scheduler, DecreasingLossKeepsRate) {
  PlateauScheduler s(1e-3, 3, 0.5);
  for (int k = 0; k < 50; ++k) EXPECT_EQ(s.step(10.0 - 0.1 * k), 1e-3);
}

TEST(Scheduler, PlateauOfPatienceReducesRate) {
  for (std::size_t patience : {1u, 2u, 5u, 10u}) {
    std::vector<double> flat(patience + 1, 2.0);
    EXPECT_DOUBLE_EQ(lr_from_history(flat, 1e-3, patience, 0.5), 5e-4);
    flat.pop_back();
    EXPECT_DOUBLE_EQ(lr_from_history(flat, 1e-3, patience, 0.5), 1e-3);
    std::vector<double> twice(2 * patience + 1, 2.0);
    EXPECT_DOUBLE_EQ(lr_from_history(twice, 1e-3, patience, 0.5), 2.5e-4);
  }
  // Improvements below the relative threshold count as a plateau.
  EXPECT_DOUBLE_EQ(lr_from_history({1.0, 1.0 - 1e-9, 1.0 - 2e-9}, 1.0, 2, 0.5), 0.5);
  EXPECT_THROW(lr_from_history({}, 1.0, 2, 0.5), Error);
}

TEST(Scheduler, RateHasAFloor) {
  PlateauScheduler s(1e-2, 1, 0.1);
  for (int k = 0; k < 100; ++k) s.step(1.0);
  EXPECT_DOUBLE_EQ(s.lr(), 1e-6);
  EXPECT_DOUBLE_EQ(s.floor(), 1e-6);
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, Examples) {
  Dataset d;
  std::vector<Prediction> pred;
  const double labels[] = {1, 2, 4}, predicted[] = {1, 2, 3};
  for (int k = 0; k < 3; ++k) {
    LabeledFrame f = composition_frame({{1, 1}}, labels[k]);
    f.forces = std::vector<Vec3>{{0.5, -0.5, 1.0}};
    d.push_back(f);
    Prediction p;
    p.energy = predicted[k];
    p.forces = {Vec3{0.6, -0.4, 1.1}};
    pred.push_back(p);
  }
  const Metrics m = compute_metrics(pred, d);
  EXPECT_DOUBLE_EQ(m.energy_mae, 1.0 / 3);
  EXPECT_DOUBLE_EQ(m.energy_mae_per_atom, 1.0 / 3);
  EXPECT_DOUBLE_EQ(m.energy_rmse_per_atom, std::sqrt(1.0 / 3));
  EXPECT_NEAR(m.force_mae, 0.1, 1e-15);
  EXPECT_NEAR(m.force_rmse, 0.1, 1e-15);
  EXPECT_EQ(m.n_frames, 3u);
  EXPECT_EQ(m.n_force_components, 9u);
  pred.pop_back();
  EXPECT_THROW(compute_metrics(pred, d), Error);
}

TEST(Metrics, PerAtomNormalization) {
  Dataset d;
  d.push_back(composition_frame({{1, 4}}, 0.0));
  Prediction p;
  p.energy = 2.0;
  const Metrics m = compute_metrics({p}, d);
  EXPECT_DOUBLE_EQ(m.energy_mae, 2.0);
  EXPECT_DOUBLE_EQ(m.energy_mae_per_atom, 0.5);
  EXPECT_EQ(m.n_force_components, 0u);
}

TEST(Metrics, InvariantUnderFramePermutation) {
  const Dataset d = lennard_jones_dataset(8, 5, 12);
  const Model m = selfcheck_detail::random_model(Variant::kHVNet, d.element_set(), 5);
  Rng rng(1);
  const auto perm = random_permutation(rng, d.size());
  const Dataset shuffled = subset(d, perm);
  const Metrics a = evaluate(m, d), b = evaluate(m, shuffled);
  EXPECT_NEAR(a.energy_mae, b.energy_mae, 1e-12 * a.energy_mae);
  EXPECT_NEAR(a.force_mae, b.force_mae, 1e-12 * a.force_mae);
  EXPECT_NEAR(a.force_rmse, b.force_rmse, 1e-12 * a.force_rmse);
}

TEST(Metrics, BlockedPredictionMatchesSinglePredictions) {
  const Dataset d = lennard_jones_dataset(20, 5, 13);
  const Model m = selfcheck_detail::random_model(Variant::kHTNet, d.element_set(), 6);
  const auto graphs = build_graphs(d, m.config.r_cut, 2);
  const auto pred = predict_frames(m, d, graphs, true, 2, 7);
  for (std::size_t k = 0; k < d.size(); ++k) {
    const Prediction p = predict(m, d[k].structure);
    EXPECT_NEAR(pred[k].energy, p.energy, 1e-10);
    for (std::size_t i = 0; i < p.forces.size(); ++i) {
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(pred[k].forces[i][c], p.forces[i][c], 1e-10);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, ReducesTheLoss) {
  const Dataset d = lennard_jones_dataset(12, 5, 14);
  Model m = small_model(d, Variant::kHVNet, 8, 1);
  initialize_references(m, d);
  TrainConfig c = quick_config();
  c.epochs = 15;
  const double before = plain_loss(m, d, {c.energy_weight, c.force_weight});
  const TrainResult r = train(m, d, {}, c);
  ASSERT_EQ(r.history.size(), 15u);
  const double after = plain_loss(m, d, {c.energy_weight, c.force_weight});
  EXPECT_LT(after, 0.5 * before);
  // The model keeps the best-validation parameters.
  EXPECT_NEAR(after, r.best_val_loss, 1e-9 * after);
  for (const auto& rec : r.history) EXPECT_GE(rec.val_loss, r.best_val_loss);
}

TEST(Train, IsDeterministicForAFixedSeed) {
  const Dataset d = lennard_jones_dataset(8, 5, 15);
  Model a = small_model(d), b = small_model(d);
  const TrainResult ra = train(a, d, {}, quick_config());
  const TrainResult rb = train(b, d, {}, quick_config());
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t k = 0; k < ra.history.size(); ++k) {
    EXPECT_EQ(ra.history[k].train_loss, rb.history[k].train_loss);
  }
}

TEST(Train, ThreadCountDoesNotChangeTheTrajectoryBeyondRounding) {
  const Dataset d = lennard_jones_dataset(8, 5, 16);
  Model a = small_model(d), b = small_model(d);
  TrainConfig c = quick_config();
  const TrainResult ra = train(a, d, {}, c);
  c.threads = 3;
  const TrainResult rb = train(b, d, {}, c);
  for (std::size_t k = 0; k < ra.history.size(); ++k) {
    EXPECT_NEAR(ra.history[k].train_loss, rb.history[k].train_loss,
                1e-8 * ra.history[k].train_loss);
  }
}

TEST(Train, EnergyOnlyRunAcceptsUnlabeledForces) {
  const Dataset src = lennard_jones_dataset(6, 5, 17);
  Dataset d;
  for (LabeledFrame f : src.frames()) {
    f.forces.reset();
    d.push_back(std::move(f));
  }
  Model m = small_model(d);
  TrainConfig c = quick_config();
  EXPECT_THROW(train(m, d, {}, c), Error);
  c.force_weight = 0.0;
  const TrainResult r = train(m, d, {}, c);
  EXPECT_EQ(r.history.size(), c.epochs);
  EXPECT_EQ(r.best_val_metrics.n_force_components, 0u);
}

TEST(Train, NonFiniteLabelsDiverge) {
  const Dataset src = lennard_jones_dataset(4, 5, 18);
  Dataset d;
  for (LabeledFrame f : src.frames()) {
    if (d.empty()) f.energy = std::numeric_limits<double>::quiet_NaN();
    d.push_back(std::move(f));
  }
  Model m = small_model(d);
  EXPECT_THROW(train(m, d, {}, quick_config()), DivergenceError);
}

TEST(Train, RejectsBadInputs) {
  const Dataset d = lennard_jones_dataset(4, 5, 19);
  Model m = small_model(d);
  EXPECT_THROW(train(m, {}, {}, quick_config()), Error);
  TrainConfig c = quick_config();
  c.factor = 1.0;
  EXPECT_THROW(train(m, d, {}, c), Error);
  ModelConfig other = m.config;
  other.element_set = {18};
  Model narrow = make_model(other, 0);
  EXPECT_THROW(train(narrow, d, {}, quick_config()), VocabularyError);
}

TEST(Train, LogsOneLinePerEpoch) {
  const Dataset d = lennard_jones_dataset(6, 5, 20);
  Model m = small_model(d);
  std::ostringstream log, diag;
  train(m, subset(d, {0, 1, 2, 3}), subset(d, {4, 5}), quick_config(), {&log, &diag});
  std::istringstream lines(log.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 5) << line;
    EXPECT_EQ(line.substr(0, line.find('\t')), std::to_string(n));
  }
  EXPECT_EQ(n, 4u);
  EXPECT_NE(diag.str().find("best validation loss"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Run configuration

TEST(RunConfig, ParsesAllSections) {
  std::istringstream in(
      "# demo\n"
      "[model]\nvariant = HTNet\nhidden = 16 ; width\nlayers = 2\nr_cut = 4.5\n"
      "[train]\nlr = 1e-3\npatience = 4\nfactor = 0.3\nenergy_weight = 2\n"
      "force_weight = 50\nbatch_size = 2\nepochs = 7\nseed = 9\nthreads = 2\n"
      "n_train = 30\nn_val = 5\n"
      "[data]\npath = frames.xyz\nformat = deepmd_raw\n"
      "[output]\ndir = out\n");
  const RunConfig c = parse_run_config(in, "demo.cfg", "/data");
  EXPECT_EQ(c.model.variant, Variant::kHTNet);
  EXPECT_EQ(c.model.hidden, 16u);
  EXPECT_EQ(c.model.layers, 2u);
  EXPECT_EQ(c.model.r_cut, 4.5);
  EXPECT_EQ(c.train.lr, 1e-3);
  EXPECT_EQ(c.train.patience, 4u);
  EXPECT_EQ(c.train.factor, 0.3);
  EXPECT_EQ(c.train.energy_weight, 2.0);
  EXPECT_EQ(c.train.force_weight, 50.0);
  EXPECT_EQ(c.train.batch_size, 2u);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.threads, 2u);
  EXPECT_EQ(c.n_train, 30u);
  EXPECT_EQ(c.n_val, 5u);
  EXPECT_EQ(c.data_path, std::filesystem::path("/data/frames.xyz"));
  EXPECT_EQ(c.data_format, DataFormat::kDeepmdRaw);
  EXPECT_EQ(c.output_dir, std::filesystem::path("/data/out"));
}

TEST(RunConfig, Defaults) {
  std::istringstream in("[data]\npath = /abs/x.xyz\n");
  const RunConfig c = parse_run_config(in, "d.cfg", "/base");
  EXPECT_EQ(c.model.hidden, 128u);
  EXPECT_EQ(c.model.layers, 3u);
  EXPECT_EQ(c.model.r_cut, 5.0);
  EXPECT_EQ(c.train.lr, 3e-4);
  EXPECT_EQ(c.train.force_weight, 100.0);
  EXPECT_EQ(c.n_val, 0u);
  EXPECT_FALSE(c.threads.has_value());
  EXPECT_EQ(c.data_path, std::filesystem::path("/abs/x.xyz"));
  EXPECT_EQ(c.data_format, DataFormat::kExtxyz);
}

TEST(RunConfig, ErrorsCarryLineNumbers) {
  const std::pair<const char*, std::size_t> cases[] = {
      {"[model]\nhidden = 8\nwidth = 3\n[data]\npath = a\n", 3},
      {"[model]\nhidden = eight\n[data]\npath = a\n", 2},
      {"[model]\nhidden = 0\n[data]\npath = a\n", 2},
      {"[model]\nr_cut = -1\n[data]\npath = a\n", 2},
      {"[model]\nvariant = gcn\n[data]\npath = a\n", 2},
      {"[train]\nlr = 1\nlr = 2\n[data]\npath = a\n", 3},
      {"[train]\nfactor = 1.5\n[data]\npath = a\n", 2},
      {"[train]\nforce_weight = -1\n[data]\npath = a\n", 2},
      {"hidden = 4\n", 1},
      {"[model\n", 1},
      {"[optim]\n", 1},
      {"[model]\nhidden\n", 2},
      {"[model]\nhidden =\n", 2},
      {"[data]\nformat = hdf5\n", 2},
      {"[model]\nhidden = 4\n", 2},
      {"[train]\nenergy_weight = 0\nforce_weight = 0\n[data]\npath = a\n", 5},
  };
  for (const auto& [text, line] : cases) {
    std::istringstream in(text);
    try {
      parse_run_config(in, "bad.cfg");
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), line) << text << " -> " << e.what();
      EXPECT_EQ(e.file(), "bad.cfg");
    }
  }
}

TEST(RunConfig, FixtureFile) {
  const RunConfig c = load_run_config(std::filesystem::path(HERMNET_TEST_DATA) / "fixture.cfg");
  EXPECT_EQ(c.model.hidden, 8u);
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.data_path.filename(), "ar_kr_10.xyz");
  EXPECT_TRUE(std::filesystem::exists(c.data_path));
  EXPECT_THROW(load_run_config("/nonexistent/x.cfg"), ParseError);
}
