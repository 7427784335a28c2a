#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "hermnet/elements.hpp"
#include "hermnet/error.hpp"

namespace hermnet {

using Vec3 = std::array<double, 3>;
/// Rows are lattice vectors a, b, c (Å).
using Mat3 = std::array<Vec3, 3>;

inline Eigen::Matrix3d to_eigen(const Mat3& m) {
  Eigen::Matrix3d out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out(i, j) = m[i][j];
  }
  return out;
}

inline double determinant(const Mat3& m) { return to_eigen(m).determinant(); }

/// Positions (Å), atomic numbers and an optional periodic cell.
struct AtomicStructure {
  std::vector<int> species;
  std::vector<Vec3> positions;
  std::optional<Mat3> cell;
  std::array<bool, 3> pbc{false, false, false};

  std::size_t size() const noexcept { return species.size(); }
  bool periodic() const noexcept { return pbc[0] || pbc[1] || pbc[2]; }

  bool operator==(const AtomicStructure&) const = default;
};

inline void validate(const AtomicStructure& s) {
  if (s.species.empty()) throw Error("structure has no atoms");
  if (s.species.size() != s.positions.size()) {
    throw Error("structure has " + std::to_string(s.species.size()) +
                " species but " + std::to_string(s.positions.size()) +
                " positions");
  }
  for (int z : s.species) {
    if (z < 1 || z > kMaxAtomicNumber) {
      throw Error("invalid atomic number " + std::to_string(z));
    }
  }
  if (s.periodic()) {
    if (!s.cell) throw Error("periodic structure without a cell");
    if (std::abs(determinant(*s.cell)) <= 1e-10) {
      throw Error("periodic cell is singular");
    }
  }
}

/// A structure with its reference energy (eV) and forces (eV/Å), when known.
struct LabeledFrame {
  AtomicStructure structure;
  std::optional<double> energy;
  std::optional<std::vector<Vec3>> forces;
  std::map<std::string, double> targets;

  bool labeled() const noexcept { return energy.has_value(); }

  bool operator==(const LabeledFrame&) const = default;
};

/// Ordered frames plus the sorted set of elements occurring in them.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<LabeledFrame> frames) {
    for (auto& f : frames) push_back(std::move(f));
  }

  void push_back(LabeledFrame frame) {
    if (frame.forces && frame.forces->size() != frame.structure.size()) {
      throw Error("frame has " + std::to_string(frame.forces->size()) +
                  " force rows for " +
                  std::to_string(frame.structure.size()) + " atoms");
    }
    for (int z : frame.structure.species) {
      auto it = std::lower_bound(elements_.begin(), elements_.end(), z);
      if (it == elements_.end() || *it != z) elements_.insert(it, z);
    }
    frames_.push_back(std::move(frame));
  }

  const std::vector<LabeledFrame>& frames() const noexcept { return frames_; }
  const LabeledFrame& operator[](std::size_t i) const { return frames_[i]; }
  std::size_t size() const noexcept { return frames_.size(); }
  bool empty() const noexcept { return frames_.empty(); }
  const std::vector<int>& element_set() const noexcept { return elements_; }

  std::size_t atom_count() const {
    std::size_t n = 0;
    for (const auto& f : frames_) n += f.structure.size();
    return n;
  }

  bool operator==(const Dataset&) const = default;

 private:
  std::vector<LabeledFrame> frames_;
  std::vector<int> elements_;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Seeded random partition of [0, n); whatever is left after train and
/// validation is the test set.
inline SplitIndices split_indices(std::size_t n, std::size_t n_train,
                                  std::size_t n_val, std::uint64_t seed) {
  if (n_train > n || n_val > n - n_train) {
    throw Error("split requests " + std::to_string(n_train) + " + " +
                std::to_string(n_val) + " frames but the dataset holds " +
                std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + n_train);
  out.validation.assign(order.begin() + n_train,
                        order.begin() + n_train + n_val);
  out.test.assign(order.begin() + n_train + n_val, order.end());
  return out;
}

struct DatasetSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
};

inline Dataset subset(const Dataset& data,
                      const std::vector<std::size_t>& indices) {
  Dataset out;
  for (std::size_t i : indices) out.push_back(data[i]);
  return out;
}

inline DatasetSplit split_dataset(const Dataset& data, std::size_t n_train,
                                  std::size_t n_val, std::uint64_t seed) {
  const SplitIndices idx = split_indices(data.size(), n_train, n_val, seed);
  return {subset(data, idx.train), subset(data, idx.validation),
          subset(data, idx.test)};
}

}  // namespace hermnet
