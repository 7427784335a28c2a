#pragma once

// Run configuration: sectioned key = value text.
//
//   # comment
//   [model]
//   variant = hvnet        # hvnet | hpnet | htnet
//   hidden = 128
//   layers = 3
//   r_cut = 5.0
//   [train]
//   lr = 3e-4
//   patience = 10
//   factor = 0.5
//   energy_weight = 1
//   force_weight = 100
//   batch_size = 8
//   epochs = 100
//   seed = 0
//   n_train = 1000         # default: all frames not used for validation
//   n_val = 0              # 0: validate on the training set
//   threads = 1            # default: all available cores
//   [data]
//   path = train.xyz       # relative to the config file
//   format = extxyz        # extxyz | deepmd_raw
//   [output]
//   dir = run

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "hermnet/error.hpp"
#include "hermnet/model.hpp"
#include "hermnet/text.hpp"
#include "hermnet/training.hpp"

namespace hermnet {

enum class DataFormat { kExtxyz, kDeepmdRaw };

inline DataFormat parse_format(std::string_view s) {
  const std::string n = text::lower(s);
  if (n == "extxyz" || n == "xyz") return DataFormat::kExtxyz;
  if (n == "deepmd_raw" || n == "deepmd") return DataFormat::kDeepmdRaw;
  throw Error("unknown data format '" + std::string(s) +
              "' (expected extxyz or deepmd_raw)");
}

struct RunConfig {
  ModelConfig model;  // element_set is filled from the data
  TrainConfig train;
  std::optional<std::size_t> threads;  // unset: all available cores
  std::optional<std::size_t> n_train;
  std::size_t n_val = 0;
  std::filesystem::path data_path;
  DataFormat data_format = DataFormat::kExtxyz;
  std::filesystem::path output_dir = "run";
};

inline RunConfig parse_run_config(std::istream& in, const std::string& source,
                                  const std::filesystem::path& base_dir = {}) {
  RunConfig cfg;
  std::string line, section;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;

  auto fail = [&](const std::string& msg) -> void {
    throw ParseError(source, line_no, msg);
  };
  auto as_double = [&](const std::string& key, std::string_view v) {
    const auto x = text::parse_double(v);
    if (!x) fail("'" + key + "' expects a number, got '" + std::string(v) + "'");
    return *x;
  };
  auto as_count = [&](const std::string& key, std::string_view v) {
    const auto x = text::parse_int<std::size_t>(v);
    if (!x) {
      fail("'" + key + "' expects a non-negative integer, got '" + std::string(v) + "'");
    }
    return *x;
  };
  auto positive = [&](const std::string& key, double x) {
    if (!(x > 0.0)) fail("'" + key + "' must be positive");
    return x;
  };
  auto at_least_one = [&](const std::string& key, std::size_t x) {
    if (x < 1) fail("'" + key + "' must be at least 1");
    return x;
  };
  auto resolve = [&](std::string_view v) {
    std::filesystem::path p{std::string(v)};
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };

  using Setter = std::function<void(const std::string&, std::string_view)>;
  const std::map<std::string, Setter> setters = {
      {"model.variant",
       [&](const std::string&, std::string_view v) {
         try {
           cfg.model.variant = parse_variant(v);
         } catch (const Error& e) {
           fail(e.what());
         }
       }},
      {"model.hidden", [&](const std::string& k, std::string_view v) {
         cfg.model.hidden = at_least_one(k, as_count(k, v));
       }},
      {"model.layers", [&](const std::string& k, std::string_view v) {
         cfg.model.layers = at_least_one(k, as_count(k, v));
       }},
      {"model.r_cut", [&](const std::string& k, std::string_view v) {
         cfg.model.r_cut = positive(k, as_double(k, v));
       }},
      {"train.lr", [&](const std::string& k, std::string_view v) {
         cfg.train.lr = positive(k, as_double(k, v));
       }},
      {"train.patience", [&](const std::string& k, std::string_view v) {
         cfg.train.patience = at_least_one(k, as_count(k, v));
       }},
      {"train.factor", [&](const std::string& k, std::string_view v) {
         const double x = as_double(k, v);
         if (!(x > 0.0 && x < 1.0)) fail("'" + k + "' must lie in (0, 1)");
         cfg.train.factor = x;
       }},
      {"train.energy_weight", [&](const std::string& k, std::string_view v) {
         const double x = as_double(k, v);
         if (x < 0.0) fail("'" + k + "' must be non-negative");
         cfg.train.energy_weight = x;
       }},
      {"train.force_weight", [&](const std::string& k, std::string_view v) {
         const double x = as_double(k, v);
         if (x < 0.0) fail("'" + k + "' must be non-negative");
         cfg.train.force_weight = x;
       }},
      {"train.batch_size", [&](const std::string& k, std::string_view v) {
         cfg.train.batch_size = at_least_one(k, as_count(k, v));
       }},
      {"train.epochs", [&](const std::string& k, std::string_view v) {
         cfg.train.epochs = at_least_one(k, as_count(k, v));
       }},
      {"train.seed", [&](const std::string& k, std::string_view v) {
         cfg.train.seed = as_count(k, v);
       }},
      {"train.threads", [&](const std::string& k, std::string_view v) {
         cfg.threads = at_least_one(k, as_count(k, v));
       }},
      {"train.n_train", [&](const std::string& k, std::string_view v) {
         cfg.n_train = at_least_one(k, as_count(k, v));
       }},
      {"train.n_val", [&](const std::string& k, std::string_view v) {
         cfg.n_val = as_count(k, v);
       }},
      {"data.path", [&](const std::string&, std::string_view v) {
         cfg.data_path = resolve(v);
       }},
      {"data.format",
       [&](const std::string&, std::string_view v) {
         try {
           cfg.data_format = parse_format(v);
         } catch (const Error& e) {
           fail(e.what());
         }
       }},
      {"output.dir", [&](const std::string&, std::string_view v) {
         cfg.output_dir = resolve(v);
       }},
  };

  while (std::getline(in, line)) {
    ++line_no;
    text::strip_cr(line);
    const std::size_t hash = line.find_first_of("#;");
    std::string_view body(line);
    if (hash != std::string::npos) body = body.substr(0, hash);
    while (!body.empty() && text::is_space(body.front())) body.remove_prefix(1);
    while (!body.empty() && text::is_space(body.back())) body.remove_suffix(1);
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') fail("unterminated section header");
      section = text::lower(body.substr(1, body.size() - 2));
      if (section != "model" && section != "train" && section != "data" &&
          section != "output") {
        fail("unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = body.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    std::string_view key = body.substr(0, eq);
    std::string_view value = body.substr(eq + 1);
    while (!key.empty() && text::is_space(key.back())) key.remove_suffix(1);
    while (!value.empty() && text::is_space(value.front())) value.remove_prefix(1);
    if (key.empty()) fail("empty key");
    if (value.empty()) fail("empty value for '" + std::string(key) + "'");
    if (section.empty()) fail("key '" + std::string(key) + "' outside any section");
    const std::string full = section + "." + text::lower(key);
    const auto it = setters.find(full);
    if (it == setters.end()) fail("unknown key '" + std::string(key) + "' in [" + section + "]");
    if (const auto prev = seen.find(full); prev != seen.end()) {
      fail("duplicate key '" + full + "' (first set on line " +
           std::to_string(prev->second) + ")");
    }
    seen.emplace(full, line_no);
    it->second(full, value);
  }
  if (cfg.data_path.empty()) {
    line_no = line_no ? line_no : 1;
    fail("missing required key 'path' in [data]");
  }
  if (cfg.train.energy_weight + cfg.train.force_weight <= 0.0) {
    fail("energy_weight and force_weight cannot both be zero");
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open config file");
  return parse_run_config(in, path.string(), path.parent_path());
}

}  // namespace hermnet
