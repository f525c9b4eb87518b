#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "ccm.hpp"

namespace rl1gp {

using json = nlohmann::json;

inline json read_json(const std::string & path)
{
  std::ifstream is(path);
  if (!is) { throw std::runtime_error("cannot read " + path); }
  return json::parse(is);
}

inline void write_json(const json & j, const std::string & path)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path); }
  os << j.dump(2) << "\n";
}

template <int N>
ContractionMetric<N> metric_from_json(const json & j)
{
  ContractionMetric<N> m;
  m.lambda = j.at("lambda").get<double>();
  m.alpha_lower = j.at("alpha_lower").get<double>();
  m.alpha_upper = j.at("alpha_upper").get<double>();
  if (!(m.lambda > 0) || !(m.alpha_lower > 0) || m.alpha_upper < m.alpha_lower) {
    throw std::invalid_argument("metric: need lambda > 0 and 0 < alpha_lower <= alpha_upper");
  }
  for (const auto & t : j.at("terms")) {
    typename ContractionMetric<N>::Term term;
    const auto e = t.at("exponents").get<std::vector<int>>();
    const auto c = t.at("coefficients").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(e.size()) != N || static_cast<int>(c.size()) != N) {
      throw std::invalid_argument("metric: term dimension mismatch");
    }
    for (int i = 0; i < N; ++i) {
      term.exponents[i] = e[i];
      if (static_cast<int>(c[i].size()) != N) { throw std::invalid_argument("metric: coefficient row size"); }
      for (int k = 0; k < N; ++k) { term.coefficients(i, k) = c[i][k]; }
    }
    term.coefficients = 0.5 * (term.coefficients + term.coefficients.transpose()).eval();
    m.terms.push_back(term);
  }
  if (m.terms.empty()) { throw std::invalid_argument("metric: no terms"); }
  return m;
}

template <int N>
ContractionMetric<N> load_metric(const std::string & path)
{
  return metric_from_json<N>(read_json(path));
}

}  // namespace rl1gp
