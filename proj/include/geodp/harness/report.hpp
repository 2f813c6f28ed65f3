#pragma once

// Evaluation summaries: per-episode outcomes and the top-5 checkpoint statistic.

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodp/error.hpp"

namespace geodp::harness {

struct TopK {
  std::vector<double> values;  // descending
  double mean = 0.0;
  double stddev = 0.0;  // population
};

// Mean and population std of the k highest success rates.
inline TopK top_k(std::vector<double> history, std::size_t k = 5) {
  require(history.size() >= k, ErrorKind::usage,
          "top-" + std::to_string(k) + " needs at least " + std::to_string(k) + " checkpoints, history has " +
              std::to_string(history.size()));
  for (double v : history)
    require(v >= 0.0 && v <= 100.0, ErrorKind::range, "success rates must lie in [0, 100]");
  std::sort(history.begin(), history.end(), std::greater<>());
  TopK r;
  r.values.assign(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(k));
  for (double v : r.values) r.mean += v;
  r.mean /= static_cast<double>(k);
  for (double v : r.values) r.stddev += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(r.stddev / static_cast<double>(k));
  return r;
}

struct EpisodeOutcome {
  std::uint64_t seed = 0;
  bool success = false;
  std::size_t steps = 0;
  std::size_t plans = 0;
};

struct EvalResult {
  std::vector<EpisodeOutcome> episodes;

  double success_rate() const {
    if (episodes.empty()) return 0.0;
    std::size_t wins = 0;
    for (const auto& e : episodes) wins += e.success;
    return 100.0 * static_cast<double>(wins) / static_cast<double>(episodes.size());
  }

  std::string outcome_string() const {
    std::string s;
    for (const auto& e : episodes) s += e.success ? '1' : '0';
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : episodes)
      eps.push_back({{"seed", e.seed}, {"success", e.success}, {"steps", e.steps}, {"plans", e.plans}});
    return {{"success_rate", success_rate()}, {"episodes", eps}};
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "episode,seed,success,steps,plans\n";
    for (std::size_t i = 0; i < episodes.size(); ++i)
      os << i << ',' << episodes[i].seed << ',' << (episodes[i].success ? 1 : 0) << ',' << episodes[i].steps << ','
         << episodes[i].plans << '\n';
    return os.str();
  }
};

inline nlohmann::json top_k_json(const TopK& t) {
  return {{"values", t.values}, {"mean", t.mean}, {"std", t.stddev}};
}

// Success-rate history: a JSON array of numbers, or an object with a
// "history" array of {"epoch", "success_rate"} records.
inline std::vector<double> parse_history(const nlohmann::json& j) {
  std::vector<double> out;
  const nlohmann::json& arr = j.is_object() ? j.at("history") : j;
  require(arr.is_array(), ErrorKind::config, "history: expected an array");
  for (const auto& v : arr) out.push_back(v.is_object() ? v.at("success_rate").get<double>() : v.get<double>());
  return out;
}

}  // namespace geodp::harness
