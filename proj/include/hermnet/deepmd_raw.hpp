#pragma once

// DeePMD-kit raw text layout: one directory holding
//   type.raw       type index per atom (whitespace separated)
//   type_map.raw   optional, one chemical symbol per type index
//   box.raw        9 floats per frame (rows a, b, c)
//   coord.raw      3N floats per frame
//   energy.raw     optional, 1 float per frame
//   force.raw      optional, 3N floats per frame
// Every frame is periodic in all three directions.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hermnet/elements.hpp"
#include "hermnet/error.hpp"
#include "hermnet/structure.hpp"
#include "hermnet/text.hpp"

namespace hermnet {

namespace deepmd_detail {

struct RawRow {
  std::size_t line;
  std::vector<double> values;
};

/// Reads non-blank lines as rows of `width` floats.
inline std::vector<RawRow> read_rows(const std::filesystem::path& path,
                                     std::size_t width) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::vector<RawRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::is_blank(line)) continue;
    const auto toks = text::split_ws(line);
    if (toks.size() != width) {
      throw ParseError(path.string(), line_no,
                       "expected " + std::to_string(width) +
                           " columns, got " + std::to_string(toks.size()));
    }
    RawRow row{line_no, {}};
    row.values.reserve(width);
    for (auto t : toks) {
      const auto x = text::parse_double(t);
      if (!x) {
        throw ParseError(path.string(), line_no,
                         "malformed number '" + std::string(t) + "'");
      }
      row.values.push_back(*x);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void check_frame_count(const std::filesystem::path& path,
                              const std::vector<RawRow>& rows,
                              std::size_t expected) {
  if (rows.size() == expected) return;
  const std::size_t line =
      rows.size() > expected ? rows[expected].line
                             : (rows.empty() ? 1 : rows.back().line + 1);
  throw ParseError(path.string(), line,
                   "frame-count mismatch: " + std::to_string(rows.size()) +
                       " frames here but coord.raw has " +
                       std::to_string(expected));
}

}  // namespace deepmd_detail

inline Dataset read_deepmd_raw(const std::filesystem::path& dir) {
  using namespace deepmd_detail;
  namespace fs = std::filesystem;

  // type.raw
  const fs::path type_path = dir / "type.raw";
  std::ifstream type_in(type_path);
  if (!type_in) throw ParseError(type_path.string(), 0, "cannot open file");
  std::vector<int> types;
  {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(type_in, line)) {
      ++line_no;
      for (auto t : text::split_ws(line)) {
        const auto v = text::parse_int<int>(t);
        if (!v || *v < 0) {
          throw ParseError(type_path.string(), line_no,
                           "invalid type index '" + std::string(t) + "'");
        }
        types.push_back(*v);
      }
    }
  }
  if (types.empty()) throw ParseError(type_path.string(), 1, "no atoms");

  // type_map.raw; without it type index t denotes atomic number t + 1.
  std::vector<int> type_to_z;
  const fs::path map_path = dir / "type_map.raw";
  if (fs::exists(map_path)) {
    std::ifstream map_in(map_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(map_in, line)) {
      ++line_no;
      const auto toks = text::split_ws(line);
      if (toks.empty()) continue;
      if (toks.size() != 1) {
        throw ParseError(map_path.string(), line_no,
                         "expected one symbol per line");
      }
      const auto z = atomic_number(toks[0]);
      if (!z) {
        throw ParseError(map_path.string(), line_no,
                         "unknown element symbol '" + std::string(toks[0]) +
                             "'");
      }
      type_to_z.push_back(*z);
    }
  }
  std::vector<int> species;
  species.reserve(types.size());
  for (int t : types) {
    int z = 0;
    if (!type_to_z.empty()) {
      if (static_cast<std::size_t>(t) >= type_to_z.size()) {
        throw ParseError(type_path.string(), 1,
                         "type index " + std::to_string(t) +
                             " has no entry in type_map.raw");
      }
      z = type_to_z[t];
    } else {
      z = t + 1;
      if (z > kMaxAtomicNumber) {
        throw ParseError(type_path.string(), 1,
                         "type index " + std::to_string(t) +
                             " is not an atomic number and type_map.raw is "
                             "absent");
      }
    }
    species.push_back(z);
  }

  const std::size_t n = species.size();
  const auto coords = read_rows(dir / "coord.raw", 3 * n);
  const auto boxes = read_rows(dir / "box.raw", 9);
  check_frame_count(dir / "box.raw", boxes, coords.size());
  std::vector<RawRow> energies, forces;
  const bool have_energy = fs::exists(dir / "energy.raw");
  const bool have_force = fs::exists(dir / "force.raw");
  if (have_energy) {
    energies = read_rows(dir / "energy.raw", 1);
    check_frame_count(dir / "energy.raw", energies, coords.size());
  }
  if (have_force) {
    forces = read_rows(dir / "force.raw", 3 * n);
    check_frame_count(dir / "force.raw", forces, coords.size());
  }

  Dataset data;
  for (std::size_t f = 0; f < coords.size(); ++f) {
    LabeledFrame frame;
    frame.structure.species = species;
    frame.structure.positions.resize(n);
    for (std::size_t a = 0; a < n; ++a) {
      for (int d = 0; d < 3; ++d) {
        frame.structure.positions[a][d] = coords[f].values[3 * a + d];
      }
    }
    Mat3 cell{};
    for (int k = 0; k < 9; ++k) cell[k / 3][k % 3] = boxes[f].values[k];
    if (std::abs(determinant(cell)) <= 1e-10) {
      throw ParseError((dir / "box.raw").string(), boxes[f].line,
                       "singular box");
    }
    frame.structure.cell = cell;
    frame.structure.pbc = {true, true, true};
    if (have_energy) frame.energy = energies[f].values[0];
    if (have_force) {
      std::vector<Vec3> fv(n);
      for (std::size_t a = 0; a < n; ++a) {
        for (int d = 0; d < 3; ++d) fv[a][d] = forces[f].values[3 * a + d];
      }
      frame.forces = std::move(fv);
    }
    data.push_back(std::move(frame));
  }
  return data;
}

/// Writes the raw layout. Requires one fixed species ordering, fully
/// periodic frames, and energies/forces present on all frames or none.
inline void write_deepmd_raw(const Dataset& data,
                             const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (data.empty()) {
    fs::create_directories(dir);
    return;
  }
  const auto& first = data[0].structure.species;
  bool all_energy = true, any_energy = false;
  bool all_force = true, any_force = false;
  for (const auto& frame : data.frames()) {
    const auto& s = frame.structure;
    validate(s);
    if (s.species != first) {
      throw Error("deepmd raw requires one species ordering for all frames");
    }
    if (!s.cell || !(s.pbc[0] && s.pbc[1] && s.pbc[2])) {
      throw Error("deepmd raw requires fully periodic frames");
    }
    if (!frame.targets.empty()) {
      throw Error("deepmd raw cannot store named scalar targets");
    }
    all_energy = all_energy && frame.energy.has_value();
    any_energy = any_energy || frame.energy.has_value();
    all_force = all_force && frame.forces.has_value();
    any_force = any_force || frame.forces.has_value();
  }
  if (any_energy != all_energy || any_force != all_force) {
    throw Error("deepmd raw requires labels on all frames or on none");
  }

  fs::create_directories(dir);
  const auto& elements = data.element_set();
  {
    std::ofstream out(dir / "type_map.raw");
    for (int z : elements) out << element_symbol(z) << '\n';
  }
  {
    std::ofstream out(dir / "type.raw");
    for (std::size_t a = 0; a < first.size(); ++a) {
      const auto t = std::lower_bound(elements.begin(), elements.end(),
                                      first[a]) - elements.begin();
      out << (a ? " " : "") << t;
    }
    out << '\n';
  }
  auto write_rows = [&](const char* name, auto&& row_of) {
    std::ofstream out(dir / name);
    for (const auto& frame : data.frames()) {
      const std::vector<double> row = row_of(frame);
      for (std::size_t k = 0; k < row.size(); ++k) {
        out << (k ? " " : "") << text::format_double(row[k]);
      }
      out << '\n';
    }
  };
  write_rows("box.raw", [](const LabeledFrame& f) {
    std::vector<double> row;
    for (const auto& v : *f.structure.cell) row.insert(row.end(), v.begin(), v.end());
    return row;
  });
  write_rows("coord.raw", [](const LabeledFrame& f) {
    std::vector<double> row;
    for (const auto& v : f.structure.positions) row.insert(row.end(), v.begin(), v.end());
    return row;
  });
  if (!all_energy) fs::remove(dir / "energy.raw");
  if (!all_force) fs::remove(dir / "force.raw");
  if (all_energy) {
    write_rows("energy.raw", [](const LabeledFrame& f) {
      return std::vector<double>{*f.energy};
    });
  }
  if (all_force) {
    write_rows("force.raw", [](const LabeledFrame& f) {
      std::vector<double> row;
      for (const auto& v : *f.forces) row.insert(row.end(), v.begin(), v.end());
      return row;
    });
  }
}

}  // namespace hermnet
