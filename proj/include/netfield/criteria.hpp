#pragma once

// DIC, WAIC and harmonic-mean CPO from posterior samples of a fitted model,
// plus a side-by-side comparison table.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "netfield/error.hpp"
#include "netfield/inference.hpp"

namespace netfield {

/// Observation log-likelihoods, one row per observation and one column per sample.
struct PointwiseLikelihood {
  Eigen::MatrixXd samples;
  Eigen::VectorXd at_mode;
};

/// log p(y_i | eta_i) for each entry of `eta` (rows = observations).
inline Eigen::MatrixXd pointwise_loglik(const NetworkModel& model, const HyperParams& theta, const Eigen::MatrixXd& eta) {
  const ObservationSet& obs = model.observations();
  Eigen::MatrixXd ll(eta.rows(), eta.cols());
  if (model.spec().family == Family::gaussian) {
    const double prec = theta.precision();
    const double c = 0.5 * std::log(prec / (2.0 * M_PI));
    for (Eigen::Index s = 0; s < eta.cols(); ++s)
      for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        const double r = obs.y[i] - eta(i, s);
        ll(i, s) = c - 0.5 * prec * r * r;
      }
    return ll;
  }
  for (Eigen::Index s = 0; s < eta.cols(); ++s)
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
      const double e = obs.exposure[i];
      ll(i, s) = obs.y[i] * (std::log(e) + eta(i, s)) - e * std::exp(eta(i, s)) - std::lgamma(obs.y[i] + 1.0);
    }
  return ll;
}

template <NormalSource Src>
PointwiseLikelihood pointwise_likelihood(const FitResult& fit, int samples, Src& source) {
  const Eigen::MatrixXd latent = posterior_samples(fit, samples, source);
  PointwiseLikelihood out;
  out.samples = pointwise_loglik(*fit.model, fit.theta, observation_eta(fit, latent));
  out.at_mode = pointwise_loglik(*fit.model, fit.theta, fit.laplace.eta);
  return out;
}

inline PointwiseLikelihood pointwise_likelihood(const FitResult& fit, int samples, std::uint64_t seed) {
  NormalStream stream(seed);
  return pointwise_likelihood(fit, samples, stream);
}

struct DicResult {
  double dic = 0.0;
  double p_d = 0.0;
  double mean_deviance = 0.0;
  double deviance_at_mode = 0.0;
  /// Monte Carlo standard error of the DIC estimate.
  double mc_se = 0.0;
};

struct WaicResult {
  double waic = 0.0;
  double p_waic = 0.0;
  double lppd = 0.0;
};

struct CpoResult {
  std::vector<double> cpo;
  std::vector<bool> reliable;
  std::size_t unreliable = 0;
  double mean_cpo = 0.0;
  double mean_neg_log_cpo = 0.0;
};

namespace detail {

inline double log_mean_exp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().mean());
}

// Unbiased variance, shifted by the first entry (exactly 0 for constant input).
inline double sample_variance(const Eigen::VectorXd& v) {
  const auto n = static_cast<double>(v.size());
  const Eigen::ArrayXd d = v.array() - v[0];
  return std::max(0.0, (d.square().sum() - d.sum() * d.sum() / n) / (n - 1.0));
}

}  // namespace detail

inline DicResult dic(const PointwiseLikelihood& pl) {
  const auto s = pl.samples.cols();
  if (s < 1) throw InputError("DIC needs at least one sample");
  const Eigen::VectorXd dev = -2.0 * pl.samples.colwise().sum().transpose();
  DicResult r;
  r.deviance_at_mode = -2.0 * Eigen::MatrixXd(pl.at_mode).colwise().sum()(0);
  // Centred at the mode so that identical samples give p_D = 0 exactly.
  const Eigen::VectorXd excess = dev.array() - r.deviance_at_mode;
  r.p_d = excess.mean();
  r.mean_deviance = r.deviance_at_mode + r.p_d;
  r.dic = r.mean_deviance + r.p_d;
  if (s > 1) r.mc_se = 2.0 * std::sqrt(detail::sample_variance(dev) / static_cast<double>(s));
  return r;
}

inline WaicResult waic(const PointwiseLikelihood& pl) {
  const auto s = pl.samples.cols();
  if (s < 2) throw InputError("WAIC needs at least 2 samples");
  WaicResult r;
  for (Eigen::Index i = 0; i < pl.samples.rows(); ++i) {
    const Eigen::VectorXd row = pl.samples.row(i).transpose();
    r.lppd += detail::log_mean_exp(row);
    r.p_waic += detail::sample_variance(row);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

inline CpoResult cpo(const PointwiseLikelihood& pl) {
  const auto s = pl.samples.cols();
  if (s < 2) throw InputError("CPO needs at least 2 samples");
  CpoResult r;
  double sum = 0.0, sum_neg_log = 0.0;
  std::size_t used = 0;
  for (Eigen::Index i = 0; i < pl.samples.rows(); ++i) {
    const Eigen::VectorXd row = pl.samples.row(i).transpose();
    const bool ok = (row.array().exp() > 0.0).all();
    const double log_cpo = -detail::log_mean_exp(-row);
    r.cpo.push_back(std::exp(log_cpo));
    r.reliable.push_back(ok);
    if (!ok) {
      ++r.unreliable;
      continue;
    }
    sum += std::exp(log_cpo);
    sum_neg_log -= log_cpo;
    ++used;
  }
  if (used > 0) {
    r.mean_cpo = sum / static_cast<double>(used);
    r.mean_neg_log_cpo = sum_neg_log / static_cast<double>(used);
  }
  return r;
}

inline DicResult dic(const FitResult& fit, int samples, std::uint64_t seed) {
  return dic(pointwise_likelihood(fit, samples, seed));
}
inline WaicResult waic(const FitResult& fit, int samples, std::uint64_t seed) {
  if (samples < 2) throw InputError("WAIC needs at least 2 samples");
  return waic(pointwise_likelihood(fit, samples, seed));
}
inline CpoResult cpo(const FitResult& fit, int samples, std::uint64_t seed) {
  if (samples < 2) throw InputError("CPO needs at least 2 samples");
  return cpo(pointwise_likelihood(fit, samples, seed));
}

struct CriteriaReport {
  DicResult dic;
  WaicResult waic;
  CpoResult cpo;
  double fit_seconds = 0.0;
  double criteria_seconds = 0.0;
  int samples = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// All three criteria from one shared sample set.
inline CriteriaReport evaluate_criteria(const FitResult& fit, int samples, std::uint64_t seed) {
  if (samples < 2) throw InputError("criteria need at least 2 samples");
  const auto t0 = std::chrono::steady_clock::now();
  const PointwiseLikelihood pl = pointwise_likelihood(fit, samples, seed);
  CriteriaReport r;
  r.dic = dic(pl);
  r.waic = waic(pl);
  r.cpo = cpo(pl);
  r.fit_seconds = fit.seconds;
  r.samples = samples;
  r.seed = seed;
  if (r.dic.p_d < -1.5 * r.dic.mc_se)
    r.warnings.push_back("p_D is negative beyond Monte Carlo error; the posterior mode may be a poor plug-in");
  if (r.cpo.unreliable > 0)
    r.warnings.push_back(std::to_string(r.cpo.unreliable) + " CPO value(s) excluded: sampled likelihood underflowed");
  r.criteria_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct ComparisonEntry {
  std::string label;
  CriteriaReport report;
};

struct Comparison {
  std::vector<ComparisonEntry> entries;
  std::string lowest_dic;
  std::string lowest_waic;
};

/// Orders models by label and marks the lowest DIC and WAIC.
inline Comparison compare_report(std::vector<ComparisonEntry> entries) {
  if (entries.empty()) throw InputError("comparison needs at least one model");
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
  for (std::size_t i = 1; i < entries.size(); ++i)
    if (entries[i].label == entries[i - 1].label) throw InputError("duplicate model label: " + entries[i].label);
  Comparison c;
  c.entries = std::move(entries);
  double best_dic = std::numeric_limits<double>::infinity(), best_waic = best_dic;
  for (const auto& e : c.entries) {
    if (e.report.dic.dic < best_dic) {
      best_dic = e.report.dic.dic;
      c.lowest_dic = e.label;
    }
    if (e.report.waic.waic < best_waic) {
      best_waic = e.report.waic.waic;
      c.lowest_waic = e.label;
    }
  }
  return c;
}

inline std::string format_fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

inline std::string format_significant(double v, int digits) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

/// Aligned text table: one column per model, lowest DIC and WAIC marked with '*'.
inline std::string comparison_table(const Comparison& c) {
  std::vector<std::string> rows = {"DIC", "p_D", "WAIC", "p_WAIC", "lppd", "mean CPO", "mean -log CPO",
                                   "unreliable CPO", "Execution Time (Secs.)", "samples", "seed"};
  std::vector<std::vector<std::string>> cells(rows.size());
  std::vector<std::string> header = {""};
  for (const auto& e : c.entries) {
    header.push_back(e.label);
    const CriteriaReport& r = e.report;
    cells[0].push_back(format_fixed(r.dic.dic, 2) + (e.label == c.lowest_dic ? " *" : ""));
    cells[1].push_back(format_fixed(r.dic.p_d, 2));
    cells[2].push_back(format_fixed(r.waic.waic, 2) + (e.label == c.lowest_waic ? " *" : ""));
    cells[3].push_back(format_fixed(r.waic.p_waic, 2));
    cells[4].push_back(format_fixed(r.waic.lppd, 2));
    cells[5].push_back(format_significant(r.cpo.mean_cpo, 7));
    cells[6].push_back(format_significant(r.cpo.mean_neg_log_cpo, 7));
    cells[7].push_back(std::to_string(r.cpo.unreliable));
    cells[8].push_back(format_fixed(r.fit_seconds, 2));
    cells[9].push_back(std::to_string(r.samples));
    cells[10].push_back(std::to_string(r.seed));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : rows) width[0] = std::max(width[0], r.size());
  for (std::size_t j = 1; j < header.size(); ++j) {
    width[j] = header[j].size();
    for (const auto& row : cells) width[j] = std::max(width[j], row[j - 1].size());
  }
  std::ostringstream os;
  auto line = [&](const std::string& first, const std::vector<std::string>& rest) {
    os << std::left << std::setw(static_cast<int>(width[0])) << first;
    for (std::size_t j = 0; j < rest.size(); ++j) os << "  " << std::right << std::setw(static_cast<int>(width[j + 1])) << rest[j];
    os << '\n';
  };
  line("", std::vector<std::string>(header.begin() + 1, header.end()));
  for (std::size_t i = 0; i < rows.size(); ++i) line(rows[i], cells[i]);
  return os.str();
}

inline nlohmann::ordered_json to_json(const CriteriaReport& r) {
  nlohmann::ordered_json j;
  j["dic"] = r.dic.dic;
  j["p_d"] = r.dic.p_d;
  j["mean_deviance"] = r.dic.mean_deviance;
  j["deviance_at_mode"] = r.dic.deviance_at_mode;
  j["dic_mc_se"] = r.dic.mc_se;
  j["waic"] = r.waic.waic;
  j["p_waic"] = r.waic.p_waic;
  j["lppd"] = r.waic.lppd;
  j["mean_cpo"] = r.cpo.mean_cpo;
  j["mean_neg_log_cpo"] = r.cpo.mean_neg_log_cpo;
  j["unreliable_cpo"] = r.cpo.unreliable;
  j["fit_seconds"] = r.fit_seconds;
  j["criteria_seconds"] = r.criteria_seconds;
  j["samples"] = r.samples;
  j["seed"] = r.seed;
  j["warnings"] = r.warnings;
  return j;
}

inline nlohmann::ordered_json to_json(const Comparison& c) {
  nlohmann::ordered_json j;
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& e : c.entries) {
    nlohmann::ordered_json m;
    m["label"] = e.label;
    m.update(to_json(e.report));
    m["lowest_dic"] = e.label == c.lowest_dic;
    m["lowest_waic"] = e.label == c.lowest_waic;
    j["models"].push_back(std::move(m));
  }
  j["lowest_dic"] = c.lowest_dic;
  j["lowest_waic"] = c.lowest_waic;
  return j;
}

}  // namespace netfield
