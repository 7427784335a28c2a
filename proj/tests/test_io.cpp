#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "hermnet/deepmd_raw.hpp"
#include "hermnet/extxyz.hpp"
#include "hermnet/structure.hpp"
#include "format_fuzz.hpp"
#include "hermnet_testing.hpp"

using namespace hermnet;
using namespace hermnet::testing;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// extxyz

TEST(Extxyz, HydrogenMolecule) {
  const Dataset d = parse_extxyz(
      "2\nProperties=species:S:1:pos:R:3 energy=-31.0\nH 0 0 0\nH 0 0 0.74\n");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].structure.size(), 2u);
  EXPECT_EQ(d.element_set(), std::vector<int>{1});
  EXPECT_EQ(d[0].energy, -31.0);
  EXPECT_EQ(d[0].structure.positions[1], (Vec3{0, 0, 0.74}));
  EXPECT_FALSE(d[0].forces);
  EXPECT_FALSE(d[0].structure.periodic());
}

TEST(Extxyz, LatticeImpliesPeriodicCell) {
  const Dataset d = parse_extxyz(
      "1\nLattice=\"5 0 0 0 5 0 0 0 5\" Properties=species:S:1:pos:R:3\nCu 0 0 0\n");
  const Mat3 expected{{{5, 0, 0}, {0, 5, 0}, {0, 0, 5}}};
  EXPECT_EQ(d[0].structure.cell, expected);
  EXPECT_EQ(d[0].structure.pbc, (std::array<bool, 3>{true, true, true}));
}

TEST(Extxyz, ExplicitPbcAndForces) {
  const Dataset d = parse_extxyz(
      "2\nLattice=\"4 0 0 0 4 0 0 0 9\" pbc=\"T T F\" energy=-1.5 "
      "Properties=species:S:1:pos:R:3:forces:R:3\n"
      "O 0 0 0 0.1 0.2 0.3\nH 1 0 0 -0.1 -0.2 -0.3\n");
  EXPECT_EQ(d[0].structure.pbc, (std::array<bool, 3>{true, true, false}));
  ASSERT_TRUE(d[0].forces);
  EXPECT_EQ((*d[0].forces)[1], (Vec3{-0.1, -0.2, -0.3}));
  EXPECT_EQ(d.element_set(), (std::vector<int>{1, 8}));
}

TEST(Extxyz, MissingLabelsGiveUnlabeledFrames) {
  const Dataset d = parse_extxyz("1\n\nHe 0 0 0\n");
  EXPECT_FALSE(d[0].labeled());
  EXPECT_FALSE(d[0].forces);
}

TEST(Extxyz, NumericHeaderKeysBecomeTargets) {
  const Dataset d = parse_extxyz(
      "1\nProperties=species:S:1:pos:R:3 gap=0.25 name=water energy=1\nO 0 0 0\n");
  EXPECT_EQ(d[0].targets.at("gap"), 0.25);
  EXPECT_EQ(d[0].targets.count("name"), 0u);
}

TEST(Extxyz, ExtraColumnsAndAtomicNumbers) {
  const Dataset d = parse_extxyz(
      "2\nProperties=Z:I:1:charge:R:1:pos:R:3\n8 -0.8 0 0 0\n1 0.4 1 0 0\n");
  EXPECT_EQ(d[0].structure.species, (std::vector<int>{8, 1}));
  EXPECT_EQ(d[0].structure.positions[1], (Vec3{1, 0, 0}));
}

TEST(Extxyz, EmptyInputGivesEmptyDataset) {
  EXPECT_TRUE(parse_extxyz("").empty());
  EXPECT_TRUE(parse_extxyz("\n  \n").empty());
  EXPECT_EQ(write_extxyz(Dataset{}), "");
}

TEST(Extxyz, CrlfLineEndings) {
  const Dataset d = parse_extxyz("1\r\nenergy=2\r\nAr 0 0 1\r\n");
  EXPECT_EQ(d[0].energy, 2.0);
  EXPECT_EQ(d[0].structure.positions[0], (Vec3{0, 0, 1}));
}

struct ErrorCase {
  std::string text;
  std::size_t line;
};

TEST(Extxyz, ErrorsCarryLineNumbers) {
  const std::vector<ErrorCase> cases = {
      {"2\n\nH 0 0 0\n", 4},                                      // too few atoms
      {"2\n\nH 0 0 0\nH 0 0\n", 4},                               // short row
      {"1\n\nXx 0 0 0\n", 3},                                     // unknown symbol
      {"1\nLattice=\"5 0 0 0 5 0\"\nH 0 0 0\n", 2},               // short lattice
      {"1\nLattice=\"5 0 0 0 5 0 0 0 q\"\nH 0 0 0\n", 2},         // malformed lattice
      {"1\nLattice=\"1 0 0 2 0 0 0 0 1\"\nH 0 0 0\n", 2},         // singular
      {"x\n\nH 0 0 0\n", 1},                                      // bad count
      {"1\n\nH 0 0 0\n\n1\n\nH 0 zero 0\n", 7},                   // second frame
      {"1\nenergy=abc\nH 0 0 0\n", 2},                            // bad energy
      {"1\npbc=\"T T\"\nH 0 0 0\n", 2},                           // pbc arity
      {"1\nProperties=species:S:1\nH\n", 2},                      // no positions
      {"1\nLattice=\"5 0 0 0 5 0 0 0 5\n", 2},                    // unterminated quote
  };
  for (const auto& c : cases) {
    try {
      parse_extxyz(c.text, "case.xyz");
      ADD_FAILURE() << "no error for:\n" << c.text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.file(), "case.xyz");
      EXPECT_EQ(e.line(), c.line) << e.what();
    }
  }
}

TEST(Extxyz, RoundTripOnRandomDatasets) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const Dataset d = random_extxyz_dataset(rng);
    const std::string text = write_extxyz(d);
    const Dataset back = parse_extxyz(text);
    ASSERT_EQ(back, d) << "seed " << seed << "\n" << text;
    EXPECT_EQ(write_extxyz(back), text);
  }
}

TEST(Extxyz, NoAtomsAreDropped) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Dataset d = random_extxyz_dataset(rng);
    const std::string text = write_extxyz(d);
    std::size_t atom_lines = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto toks = text::split_ws(line);
      if (toks.size() >= 4 && atomic_number(toks[0])) ++atom_lines;
    }
    EXPECT_EQ(parse_extxyz(text).atom_count(), atom_lines);
  }
}

TEST(Extxyz, FuzzedInputsOnlyRaiseLocatedErrors) {
  std::size_t errors = 0;
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    Rng rng(seed);
    Dataset d = random_extxyz_dataset(rng);
    if (d.empty()) d = parse_extxyz("1\n\nH 0 0 0\n");
    const std::string text = mutate(rng, write_extxyz(d));
    try {
      const Dataset parsed = parse_extxyz(text, "fuzz.xyz");
      for (const auto& f : parsed.frames()) EXPECT_NO_THROW(validate(f.structure));
    } catch (const ParseError& e) {
      ++errors;
      EXPECT_EQ(e.file(), "fuzz.xyz");
      EXPECT_GE(e.line(), 1u);
      EXPECT_LE(e.line(), count_lines(text) + 1) << e.what();
    } catch (const std::exception& e) {
      ADD_FAILURE() << "seed " << seed << ": unlocated error " << e.what();
    }
  }
  EXPECT_GT(errors, 100u);
}

TEST(Extxyz, WriterRejectsUnwritableTargets) {
  LabeledFrame f;
  f.structure.species = {1};
  f.structure.positions = {Vec3{0, 0, 0}};
  f.targets["two words"] = 1.0;
  EXPECT_THROW(write_extxyz(Dataset({f})), Error);
}

TEST(Extxyz, ReadMissingFileIsLocated) {
  EXPECT_THROW(read_extxyz("/nonexistent/none.xyz"), ParseError);
}

// ---------------------------------------------------------------------------
// deepmd raw

TEST(DeepmdRaw, CopperExample) {
  TempDir dir("cu");
  write_file(dir / "type.raw", "0 0\n");
  write_file(dir / "type_map.raw", "Cu\n");
  write_file(dir / "box.raw", "3.6 0 0 0 3.6 0 0 0 3.6\n");
  write_file(dir / "coord.raw", "0 0 0 1.8 1.8 0\n");
  write_file(dir / "energy.raw", "-7.5\n");
  write_file(dir / "force.raw", "0 0 0 0 0 0\n");
  const Dataset d = read_deepmd_raw(dir.path());
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].structure.species, (std::vector<int>{29, 29}));
  const Mat3 cell{{{3.6, 0, 0}, {0, 3.6, 0}, {0, 0, 3.6}}};
  EXPECT_EQ(d[0].structure.cell, cell);
  EXPECT_EQ(d[0].structure.pbc, (std::array<bool, 3>{true, true, true}));
  EXPECT_EQ(d[0].energy, -7.5);
}

TEST(DeepmdRaw, FrameCountMismatchNamesTheFile) {
  TempDir dir("mismatch");
  write_file(dir / "type.raw", "0\n");
  write_file(dir / "type_map.raw", "Cu\n");
  std::string boxes, coords, energies;
  for (int f = 0; f < 10; ++f) {
    if (f < 9) {
      boxes += "3 0 0 0 3 0 0 0 3\n";
      coords += "0 0 0\n";
    }
    energies += "-1\n";
  }
  write_file(dir / "box.raw", boxes);
  write_file(dir / "coord.raw", coords);
  write_file(dir / "energy.raw", energies);
  try {
    read_deepmd_raw(dir.path());
    FAIL() << "expected a frame-count error";
  } catch (const ParseError& e) {
    EXPECT_NE(e.file().find("energy.raw"), std::string::npos);
    EXPECT_EQ(e.line(), 10u);
    EXPECT_NE(std::string(e.what()).find("frame-count"), std::string::npos);
  }
}

TEST(DeepmdRaw, ColumnCountErrorsAreLocated) {
  TempDir dir("columns");
  write_file(dir / "type.raw", "0 1\n");
  write_file(dir / "type_map.raw", "O\nH\n");
  write_file(dir / "box.raw", "3 0 0 0 3 0 0 0 3\n3 0 0 0 3 0 0 0 3\n");
  write_file(dir / "coord.raw", "0 0 0 1 0 0\n0 0 0 1 0\n");
  try {
    read_deepmd_raw(dir.path());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(e.file().find("coord.raw"), std::string::npos);
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(DeepmdRaw, MissingTypeMapUsesAtomicNumbers) {
  TempDir dir("notypemap");
  write_file(dir / "type.raw", "0 7\n");
  write_file(dir / "box.raw", "3 0 0 0 3 0 0 0 3\n");
  write_file(dir / "coord.raw", "0 0 0 1 1 1\n");
  const Dataset d = read_deepmd_raw(dir.path());
  EXPECT_EQ(d[0].structure.species, (std::vector<int>{1, 8}));
  EXPECT_FALSE(d[0].labeled());
}

TEST(DeepmdRaw, TypeIndexWithoutMapEntry) {
  TempDir dir("badtype");
  write_file(dir / "type.raw", "0 2\n");
  write_file(dir / "type_map.raw", "O\nH\n");
  write_file(dir / "box.raw", "3 0 0 0 3 0 0 0 3\n");
  write_file(dir / "coord.raw", "0 0 0 1 1 1\n");
  EXPECT_THROW(read_deepmd_raw(dir.path()), ParseError);
}

TEST(DeepmdRaw, RoundTripOnRandomDatasets) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Dataset d = random_deepmd_dataset(rng);
    TempDir dir("rt");
    write_deepmd_raw(d, dir.path());
    ASSERT_EQ(read_deepmd_raw(dir.path()), d) << "seed " << seed;
  }
}

TEST(DeepmdRaw, WriterRestrictions) {
  TempDir dir("reject");
  Dataset open;
  LabeledFrame f;
  f.structure.species = {1};
  f.structure.positions = {Vec3{0, 0, 0}};
  open.push_back(f);
  EXPECT_THROW(write_deepmd_raw(open, dir / "open"), Error);

  Rng rng(1);
  Dataset mixed = random_deepmd_dataset(rng);
  LabeledFrame other = mixed[0];
  std::reverse(other.structure.species.begin(), other.structure.species.end());
  other.structure.species.push_back(1);
  other.structure.positions.push_back(Vec3{0, 0, 0});
  if (other.forces) other.forces->push_back(Vec3{0, 0, 0});
  mixed.push_back(other);
  EXPECT_THROW(write_deepmd_raw(mixed, dir / "mixed"), Error);
}

TEST(DeepmdRaw, EmptyDatasetWritesNothing) {
  TempDir dir("empty");
  write_deepmd_raw(Dataset{}, dir / "out");
  EXPECT_TRUE(fs::is_directory(dir / "out"));
  EXPECT_TRUE(fs::is_empty(dir / "out"));
}

TEST(DeepmdRaw, FuzzedFilesOnlyRaiseLocatedErrors) {
  const char* files[] = {"type.raw", "type_map.raw", "box.raw", "coord.raw", "energy.raw",
                         "force.raw"};
  std::size_t errors = 0;
  for (std::uint64_t seed = 0; seed < 600; ++seed) {
    Rng rng(seed);
    TempDir dir("fuzz");
    Dataset d = random_deepmd_dataset(rng);
    write_deepmd_raw(d, dir.path());
    const std::string victim = files[uniform_int(rng, 0, 5)];
    if (!fs::exists(dir / victim)) continue;
    write_file(dir / victim, mutate(rng, read_file(dir / victim)));
    try {
      read_deepmd_raw(dir.path());
    } catch (const ParseError& e) {
      ++errors;
      EXPECT_FALSE(e.file().empty());
    } catch (const std::exception& e) {
      ADD_FAILURE() << "seed " << seed << ": unlocated error " << e.what();
    }
  }
  EXPECT_GT(errors, 50u);
}

// ---------------------------------------------------------------------------
// Structures and splits

TEST(Structure, ValidationRules) {
  AtomicStructure s;
  EXPECT_THROW(validate(s), Error);
  s.species = {1};
  s.positions = {Vec3{0, 0, 0}};
  EXPECT_NO_THROW(validate(s));
  s.pbc = {true, false, false};
  EXPECT_THROW(validate(s), Error);
  s.cell = Mat3{{{1, 0, 0}, {2, 0, 0}, {0, 0, 1}}};
  EXPECT_THROW(validate(s), Error);
  s.cell = Mat3{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  EXPECT_NO_THROW(validate(s));
  s.species = {119};
  EXPECT_THROW(validate(s), Error);
}

TEST(Structure, ElementSetIsUnionOfSpecies) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Dataset d = random_extxyz_dataset(rng);
    std::set<int> expected;
    for (const auto& f : d.frames()) expected.insert(f.structure.species.begin(), f.structure.species.end());
    EXPECT_EQ(d.element_set(), std::vector<int>(expected.begin(), expected.end()));
  }
}

TEST(Structure, ForceRowsMustMatchAtoms) {
  LabeledFrame f;
  f.structure.species = {1, 1};
  f.structure.positions = {Vec3{0, 0, 0}, Vec3{1, 0, 0}};
  f.forces = std::vector<Vec3>{Vec3{0, 0, 0}};
  Dataset d;
  EXPECT_THROW(d.push_back(f), Error);
}

namespace {
Dataset numbered(std::size_t n) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledFrame f;
    f.structure.species = {1};
    f.structure.positions = {Vec3{0, 0, 0}};
    f.energy = static_cast<double>(i);
    d.push_back(f);
  }
  return d;
}

std::set<double> ids(const Dataset& d) {
  std::set<double> out;
  for (const auto& f : d.frames()) out.insert(*f.energy);
  return out;
}
}  // namespace

TEST(Split, TenFrames) {
  const DatasetSplit s = split_dataset(numbered(10), 8, 1, 0);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.validation.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  std::set<double> all = ids(s.train);
  for (double x : ids(s.validation)) EXPECT_TRUE(all.insert(x).second);
  for (double x : ids(s.test)) EXPECT_TRUE(all.insert(x).second);
  EXPECT_EQ(all.size(), 10u);
}

TEST(Split, SameSeedSameSplit) {
  const Dataset d = numbered(30);
  const auto a = split_indices(d.size(), 10, 5, 42);
  const auto b = split_indices(d.size(), 10, 5, 42);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(split_indices(d.size(), 10, 5, 43).train, a.train);
}

TEST(Split, Md17Protocol) {
  const auto s = split_indices(3000, 1000, 1000, 7);
  EXPECT_EQ(s.train.size(), 1000u);
  EXPECT_EQ(s.validation.size(), 1000u);
  EXPECT_EQ(s.test.size(), 1000u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 3000u);
}

TEST(Split, OversubscriptionIsRejected) {
  EXPECT_THROW(split_indices(10, 8, 3, 0), Error);
  EXPECT_THROW(split_indices(10, 11, 0, 0), Error);
  EXPECT_NO_THROW(split_indices(10, 10, 0, 0));
}
