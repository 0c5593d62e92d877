#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "riskgrad/mdp/tabular_mdp.hpp"

namespace riskgrad::mdp {

inline constexpr int kMdpFormatVersion = 1;

// {"format": "riskgrad-mdp", "version": 1, "n_states": S, "n_actions": A,
//  "gamma": g, "initial_dist": [S], "transition": [S*A*S], "reward": [S*A]}
inline nlohmann::json to_json(const TabularMdp& mdp) {
  return {{"format", "riskgrad-mdp"},
          {"version", kMdpFormatVersion},
          {"n_states", mdp.n_states()},
          {"n_actions", mdp.n_actions()},
          {"gamma", mdp.gamma()},
          {"initial_dist", std::vector<double>(mdp.initial_dist().begin(), mdp.initial_dist().end())},
          {"transition", mdp.transition_tensor()},
          {"reward", mdp.reward_tensor()}};
}

/// Parses and revalidates every invariant through the TabularMdp constructor.
inline TabularMdp mdp_from_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string{}) != "riskgrad-mdp")
    throw std::invalid_argument("not a riskgrad-mdp document");
  if (doc.at("version").get<int>() != kMdpFormatVersion)
    throw std::invalid_argument("unsupported riskgrad-mdp version");
  return {doc.at("n_states").get<std::size_t>(),
          doc.at("n_actions").get<std::size_t>(),
          doc.at("transition").get<std::vector<double>>(),
          doc.at("reward").get<std::vector<double>>(),
          doc.at("gamma").get<double>(),
          doc.at("initial_dist").get<std::vector<double>>()};
}

inline void save_mdp(const TabularMdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << to_json(mdp).dump(2) << '\n';
}

inline TabularMdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return mdp_from_json(nlohmann::json::parse(in));
}

}  // namespace riskgrad::mdp
