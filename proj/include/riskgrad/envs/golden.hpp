#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskgrad/envs/env.hpp"

namespace riskgrad::envs {

/// Hexadecimal float text; round-trips every double exactly.
inline std::string hex_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw std::runtime_error("bad hex double: " + s);
  return v;
}

struct GoldenTransition {
  std::vector<double> state;
  std::vector<double> action;
  std::vector<double> next_state;
  double reward = 0.0;
};

inline constexpr int kGoldenVersion = 1;

/// Records `count` consecutive transitions under the default spec of `kind`
/// with uniformly random actions from a seeded stream.
inline std::vector<GoldenTransition> record_transitions(EnvKind kind, std::size_t count, std::uint64_t seed) {
  const EnvSpec spec = EnvSpec::defaults(kind);
  const EnvInfo inf = info(spec);
  Rng rng(seed);
  auto cur = reset(spec, rng);
  std::vector<GoldenTransition> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> action;
    if (inf.discrete) action = {static_cast<double>(rng.index(inf.action_dim))};
    else action = {rng.uniform(-inf.action_limit, inf.action_limit)};
    auto next = step(spec, cur.true_state, action, rng);
    out.push_back({cur.true_state, action, next.true_state, next.reward});
    cur = next.done ? reset(spec, rng) : next;
  }
  return out;
}

inline nlohmann::json golden_to_json(const std::vector<GoldenTransition>& rows) {
  const auto hex_vec = [](const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(hex_double(x));
    return a;
  };
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : rows)
    arr.push_back({{"state", hex_vec(t.state)},
                   {"action", hex_vec(t.action)},
                   {"next_state", hex_vec(t.next_state)},
                   {"reward", hex_double(t.reward)}});
  return arr;
}

inline std::vector<GoldenTransition> golden_from_json(const nlohmann::json& arr) {
  const auto vec = [](const nlohmann::json& a) {
    std::vector<double> v;
    for (const auto& x : a) v.push_back(parse_hex_double(x.get<std::string>()));
    return v;
  };
  std::vector<GoldenTransition> out;
  for (const auto& t : arr)
    out.push_back({vec(t.at("state")), vec(t.at("action")), vec(t.at("next_state")),
                   parse_hex_double(t.at("reward").get<std::string>())});
  return out;
}

/// Golden file: {"format": "riskgrad-golden", "version": 1, "<env kind>": [transitions...]}.
inline void write_golden_file(const std::string& path, std::size_t count, std::uint64_t seed) {
  nlohmann::json doc{{"format", "riskgrad-golden"}, {"version", kGoldenVersion}, {"seed", seed}};
  for (auto k : {EnvKind::PendulumSwingup, EnvKind::CartBalance})
    doc[to_string(k)] = golden_to_json(record_transitions(k, count, seed));
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << doc.dump(2) << '\n';
}

inline nlohmann::json read_golden_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  const auto doc = nlohmann::json::parse(f);
  if (doc.value("format", "") != "riskgrad-golden" || doc.value("version", 0) != kGoldenVersion)
    throw std::runtime_error("unsupported golden file: " + path);
  return doc;
}

}  // namespace riskgrad::envs
