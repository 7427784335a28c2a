#pragma once

// Extended XYZ reader/writer.
//
//   <N>
//   Lattice="ax ay az bx by bz cx cy cz" Properties=species:S:1:pos:R:3:forces:R:3 energy=<E> pbc="T T T"
//   <symbol> <x> <y> <z> [<fx> <fy> <fz>]
//
// Unquoted numeric key=value pairs other than `energy` become named scalar
// targets. Non-numeric keys are ignored.

#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hermnet/elements.hpp"
#include "hermnet/error.hpp"
#include "hermnet/structure.hpp"
#include "hermnet/text.hpp"

namespace hermnet {

namespace extxyz_detail {

struct Column {
  std::string name;
  char type;
  std::size_t count;
};

struct Header {
  std::vector<std::pair<std::string, std::string>> pairs;
};

inline Header parse_header(std::string_view line, const std::string& source,
                           std::size_t line_no) {
  Header h;
  std::size_t i = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError(source, line_no, msg);
  };
  while (i < line.size()) {
    while (i < line.size() && text::is_space(line[i])) ++i;
    if (i >= line.size()) break;
    const std::size_t key_start = i;
    while (i < line.size() && line[i] != '=' && !text::is_space(line[i])) ++i;
    std::string key(line.substr(key_start, i - key_start));
    std::string value;
    if (i < line.size() && line[i] == '=') {
      ++i;
      if (i < line.size() && line[i] == '"') {
        const std::size_t close = line.find('"', i + 1);
        if (close == std::string_view::npos) {
          fail("unterminated quoted value for key '" + key + "'");
        }
        value = std::string(line.substr(i + 1, close - i - 1));
        i = close + 1;
      } else {
        const std::size_t v_start = i;
        while (i < line.size() && !text::is_space(line[i])) ++i;
        value = std::string(line.substr(v_start, i - v_start));
      }
    }
    if (key.empty()) fail("empty key in comment line");
    h.pairs.emplace_back(std::move(key), std::move(value));
  }
  return h;
}

inline std::vector<Column> parse_properties(const std::string& spec,
                                            const std::string& source,
                                            std::size_t line_no) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t colon = spec.find(':', start);
    parts.push_back(spec.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  if (parts.size() % 3 != 0) {
    throw ParseError(source, line_no,
                     "Properties must be name:type:count triples");
  }
  std::vector<Column> cols;
  for (std::size_t k = 0; k < parts.size(); k += 3) {
    const auto count = text::parse_int<std::size_t>(parts[k + 2]);
    if (parts[k].empty() || parts[k + 1].size() != 1 || !count ||
        *count == 0 || *count > 64) {
      throw ParseError(source, line_no,
                       "malformed Properties entry '" + parts[k] + ":" +
                           parts[k + 1] + ":" + parts[k + 2] + "'");
    }
    const char type = parts[k + 1][0];
    if (type != 'S' && type != 'R' && type != 'I' && type != 'L') {
      throw ParseError(source, line_no,
                       "unknown Properties type '" + parts[k + 1] + "'");
    }
    cols.push_back({parts[k], type, *count});
  }
  return cols;
}

inline bool parse_flag(std::string_view tok, bool& out) {
  const std::string t = text::lower(tok);
  if (t == "t" || t == "true" || t == "1") {
    out = true;
    return true;
  }
  if (t == "f" || t == "false" || t == "0") {
    out = false;
    return true;
  }
  return false;
}

inline bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (text::is_space(c) || c == '"' || c == '=') return false;
  }
  const std::string k = text::lower(key);
  return k != "energy" && k != "lattice" && k != "properties" && k != "pbc";
}

}  // namespace extxyz_detail

/// Parses concatenated extended-XYZ frames. `source` names the input in
/// error messages.
inline Dataset parse_extxyz(std::istream& in,
                            const std::string& source = "<stream>") {
  using namespace extxyz_detail;
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    text::strip_cr(line);
    return true;
  };

  while (next_line()) {
    if (text::is_blank(line)) continue;
    const auto count_tokens = text::split_ws(line);
    std::optional<std::size_t> n;
    if (count_tokens.size() == 1) n = text::parse_int<std::size_t>(count_tokens[0]);
    if (!n || *n == 0) {
      throw ParseError(source, line_no,
                       "expected a positive atom count, got '" + line + "'");
    }
    const std::size_t count_line = line_no;
    if (!next_line()) {
      throw ParseError(source, count_line + 1, "missing comment line");
    }
    const std::size_t header_line = line_no;
    const Header header = parse_header(line, source, header_line);

    LabeledFrame frame;
    std::vector<Column> columns = {{"species", 'S', 1}, {"pos", 'R', 3}};
    bool have_lattice = false;
    bool have_pbc = false;
    std::array<bool, 3> pbc{false, false, false};
    for (const auto& [key, value] : header.pairs) {
      const std::string k = text::lower(key);
      if (k == "lattice") {
        const auto toks = text::split_ws(value);
        if (toks.size() != 9) {
          throw ParseError(source, header_line,
                           "Lattice needs 9 numbers, got " +
                               std::to_string(toks.size()));
        }
        Mat3 cell{};
        for (std::size_t t = 0; t < 9; ++t) {
          const auto x = text::parse_double(toks[t]);
          if (!x) {
            throw ParseError(source, header_line,
                             "malformed Lattice entry '" + std::string(toks[t]) +
                                 "'");
          }
          cell[t / 3][t % 3] = *x;
        }
        frame.structure.cell = cell;
        have_lattice = true;
      } else if (k == "properties") {
        columns = parse_properties(value, source, header_line);
      } else if (k == "pbc") {
        const auto toks = text::split_ws(value);
        if (toks.size() != 3 || !parse_flag(toks[0], pbc[0]) ||
            !parse_flag(toks[1], pbc[1]) || !parse_flag(toks[2], pbc[2])) {
          throw ParseError(source, header_line,
                           "pbc needs three T/F flags, got '" + value + "'");
        }
        have_pbc = true;
      } else if (k == "energy") {
        const auto e = text::parse_double(value);
        if (!e) {
          throw ParseError(source, header_line,
                           "malformed energy '" + value + "'");
        }
        frame.energy = *e;
      } else if (const auto x = text::parse_double(value)) {
        frame.targets[key] = *x;
      }
    }
    if (have_pbc) {
      frame.structure.pbc = pbc;
    } else if (have_lattice) {
      frame.structure.pbc = {true, true, true};
    }
    if (frame.structure.periodic()) {
      if (!have_lattice) {
        throw ParseError(source, header_line, "pbc set without a Lattice");
      }
      if (std::abs(determinant(*frame.structure.cell)) <= 1e-10) {
        throw ParseError(source, header_line, "Lattice is singular");
      }
    }

    // Column layout.
    std::size_t width = 0;
    std::ptrdiff_t species_col = -1, z_col = -1, pos_col = -1, force_col = -1;
    for (const Column& c : columns) {
      const std::string name = text::lower(c.name);
      if (name == "species" && c.type == 'S' && c.count == 1) {
        species_col = static_cast<std::ptrdiff_t>(width);
      } else if (name == "z" && c.type == 'I' && c.count == 1) {
        z_col = static_cast<std::ptrdiff_t>(width);
      } else if (name == "pos" && c.type == 'R' && c.count == 3) {
        pos_col = static_cast<std::ptrdiff_t>(width);
      } else if ((name == "forces" || name == "force") && c.type == 'R' &&
                 c.count == 3) {
        force_col = static_cast<std::ptrdiff_t>(width);
      }
      width += c.count;
    }
    if (pos_col < 0 || (species_col < 0 && z_col < 0)) {
      throw ParseError(source, header_line,
                       "Properties must contain pos:R:3 and species:S:1 or "
                       "Z:I:1");
    }

    std::vector<Vec3> forces;
    for (std::size_t a = 0; a < *n; ++a) {
      if (!next_line()) {
        throw ParseError(source, line_no + 1,
                         "frame declares " + std::to_string(*n) +
                             " atoms but the input ends after " +
                             std::to_string(a));
      }
      const auto toks = text::split_ws(line);
      if (toks.size() != width) {
        throw ParseError(source, line_no,
                         "expected " + std::to_string(width) +
                             " columns, got " + std::to_string(toks.size()));
      }
      int z = 0;
      if (species_col >= 0) {
        const auto found = atomic_number(toks[species_col]);
        if (!found) {
          throw ParseError(source, line_no,
                           "unknown element symbol '" +
                               std::string(toks[species_col]) + "'");
        }
        z = *found;
      } else {
        const auto found = text::parse_int<int>(toks[z_col]);
        if (!found || *found < 1 || *found > kMaxAtomicNumber) {
          throw ParseError(source, line_no,
                           "invalid atomic number '" +
                               std::string(toks[z_col]) + "'");
        }
        z = *found;
      }
      auto read_vec = [&](std::ptrdiff_t col) {
        Vec3 v{};
        for (int d = 0; d < 3; ++d) {
          const auto x = text::parse_double(toks[col + d]);
          if (!x) {
            throw ParseError(source, line_no,
                             "malformed number '" +
                                 std::string(toks[col + d]) + "'");
          }
          v[d] = *x;
        }
        return v;
      };
      frame.structure.species.push_back(z);
      frame.structure.positions.push_back(read_vec(pos_col));
      if (force_col >= 0) forces.push_back(read_vec(force_col));
    }
    if (force_col >= 0) frame.forces = std::move(forces);
    data.push_back(std::move(frame));
  }
  return data;
}

inline Dataset parse_extxyz(const std::string& content,
                            const std::string& source = "<string>") {
  std::istringstream in(content);
  return parse_extxyz(in, source);
}

inline Dataset read_extxyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  return parse_extxyz(in, path);
}

inline void write_extxyz(std::ostream& out, const Dataset& data) {
  using text::format_double;
  for (const auto& frame : data.frames()) {
    const auto& s = frame.structure;
    validate(s);
    out << s.size() << '\n';
    std::string header;
    if (s.cell) {
      header += "Lattice=\"";
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          if (i || j) header += ' ';
          header += format_double((*s.cell)[i][j]);
        }
      }
      header += "\" ";
    }
    header += "Properties=species:S:1:pos:R:3";
    if (frame.forces) header += ":forces:R:3";
    if (frame.energy) header += " energy=" + format_double(*frame.energy);
    for (const auto& [key, value] : frame.targets) {
      if (!extxyz_detail::valid_key(key)) {
        throw Error("target name '" + key + "' cannot be written to extxyz");
      }
      header += " " + key + "=" + format_double(value);
    }
    if (s.cell) {
      header += " pbc=\"";
      for (int d = 0; d < 3; ++d) {
        if (d) header += ' ';
        header += s.pbc[d] ? 'T' : 'F';
      }
      header += '"';
    }
    out << header << '\n';
    for (std::size_t a = 0; a < s.size(); ++a) {
      out << element_symbol(s.species[a]);
      for (double x : s.positions[a]) out << ' ' << format_double(x);
      if (frame.forces) {
        for (double x : (*frame.forces)[a]) out << ' ' << format_double(x);
      }
      out << '\n';
    }
  }
}

inline std::string write_extxyz(const Dataset& data) {
  std::ostringstream out;
  write_extxyz(out, data);
  return out.str();
}

}  // namespace hermnet
