#pragma once

// Latent Gaussian regression on a metric graph:
//   eta_i = beta_0 + Z_i beta + S(x_i) + eps_i,  y_i ~ Poisson(E_i exp(eta_i))
// with S a graph Whittle-Matern field (sparse FEM precision) or a dense
// Matern covariance on the resistance or Euclidean metric. Hyperparameters
// are fixed at their MAP estimate under a Laplace-approximate marginal.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "netfield/covariance.hpp"
#include "netfield/error.hpp"
#include "netfield/fem.hpp"
#include "netfield/graph.hpp"
#include "netfield/metrics.hpp"
#include "netfield/priors.hpp"
#include "netfield/random.hpp"
#include "netfield/sparse.hpp"

namespace netfield {

/// η above this is treated as an overflow hazard.
inline constexpr double kMaxLinearPredictor = 50.0;

/// y (ln E + eta) - E e^eta - ln(y!).
inline double poisson_loglik(double y, double exposure, double eta) {
  if (!(y >= 0.0) || y != std::floor(y)) throw InputError("Poisson count must be a nonnegative integer");
  if (!(exposure > 0.0)) throw InputError("exposure must be > 0");
  return y * (std::log(exposure) + eta) - exposure * std::exp(eta) - std::lgamma(y + 1.0);
}

enum class Family { poisson, gaussian };
enum class ModelKind { graph_spde, resistance_matern, euclidean_matern };
enum class Aggregation { exact_position, segment_centroid };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::graph_spde: return "graph-spde";
    case ModelKind::resistance_matern: return "resistance-matern";
    case ModelKind::euclidean_matern: return "euclidean-matern";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "graph-spde") return ModelKind::graph_spde;
  if (s == "resistance-matern") return ModelKind::resistance_matern;
  if (s == "euclidean-matern") return ModelKind::euclidean_matern;
  throw InputError("unknown model: " + s);
}

inline std::string to_string(Family f) { return f == Family::poisson ? "poisson" : "gaussian"; }

inline Family parse_family(const std::string& s) {
  if (s == "poisson") return Family::poisson;
  if (s == "gaussian") return Family::gaussian;
  throw InputError("unknown family: " + s);
}

inline std::string to_string(Aggregation a) { return a == Aggregation::exact_position ? "exact" : "centroid"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "exact") return Aggregation::exact_position;
  if (s == "centroid") return Aggregation::segment_centroid;
  throw InputError("unknown aggregation: " + s);
}

/// Responses at on-network positions. For the Gaussian family `y` holds real
/// responses and exposures are ignored.
struct ObservationSet {
  std::vector<GraphPosition> positions;
  Eigen::VectorXd y;
  Eigen::VectorXd exposure;
  Eigen::MatrixXd covariates;
  std::vector<std::string> covariate_names;
  Aggregation aggregation = Aggregation::exact_position;

  std::size_t size() const { return positions.size(); }

  /// Fills default exposures and an empty covariate block where missing.
  void complete() {
    const auto m = static_cast<Eigen::Index>(positions.size());
    if (exposure.size() == 0) exposure = Eigen::VectorXd::Ones(m);
    if (covariates.rows() == 0 && covariates.cols() == 0) covariates.resize(m, 0);
  }

  void validate(const MetricGraph& g, Family family) const {
    const auto m = static_cast<Eigen::Index>(positions.size());
    if (y.size() != m || exposure.size() != m || covariates.rows() != m)
      throw InputError("observation arrays have inconsistent lengths");
    if (static_cast<Eigen::Index>(covariate_names.size()) != covariates.cols() && !covariate_names.empty())
      throw InputError("covariate names do not match covariate columns");
    for (const auto& p : positions) g.check(p);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!std::isfinite(y[i])) throw InputError("non-finite response at row " + std::to_string(i));
      if (family == Family::poisson && (y[i] < 0.0 || y[i] != std::floor(y[i])))
        throw InputError("count at row " + std::to_string(i) + " is not a nonnegative integer");
      if (!(exposure[i] > 0.0) || !std::isfinite(exposure[i]))
        throw InputError("exposure at row " + std::to_string(i) + " must be > 0");
    }
    if (!covariates.allFinite()) throw InputError("non-finite covariate value");
  }
};

struct ModelSpec {
  ModelKind kind = ModelKind::graph_spde;
  Family family = Family::poisson;
  /// FEM operator order for graph_spde (1 or 2).
  int alpha = 1;
  /// Matern smoothness for the covariance models.
  double nu = 0.5;
  /// iid effect per observation row (Poisson family only).
  bool nugget = true;
  double beta_precision = 0.001;
  /// Mesh resolution; 0 selects default_h_max.
  double h_max = 0.0;
  PcPrior pc;
  PrecisionPrior precision_prior;

  double smoothness() const { return kind == ModelKind::graph_spde ? alpha - 0.5 : nu; }
  bool has_nugget_block() const { return family == Family::poisson && nugget; }
  /// Third hyperparameter is active (nugget precision or noise precision).
  bool uses_precision() const { return family == Family::gaussian || nugget; }

  void validate() const {
    if (kind == ModelKind::graph_spde && alpha != 1 && alpha != 2) throw InputError("alpha must be 1 or 2");
    if (kind == ModelKind::resistance_matern) require_resistance_nu(nu);
    if (kind == ModelKind::euclidean_matern && !(nu > 0.0)) throw InputError("nu must be > 0");
    if (!(beta_precision > 0.0)) throw InputError("beta prior precision must be > 0");
    if (h_max < 0.0 || !std::isfinite(h_max)) throw InputError("h_max must be >= 0");
    pc.validate();
    precision_prior.validate();
  }
};

/// theta = (log kappa, log tau, log precision). The third entry is the
/// nugget precision for Poisson models and the noise precision for Gaussian ones.
struct HyperParams {
  double log_kappa = 0.0;
  double log_tau = 0.0;
  double log_precision = 0.0;

  double kappa() const { return std::exp(log_kappa); }
  double tau() const { return std::exp(log_tau); }
  double precision() const { return std::exp(log_precision); }
  double range(double nu) const { return std::sqrt(8.0 * nu) / kappa(); }
  double sigma(double nu) const { return std::sqrt(field_variance(kappa(), tau(), nu)); }

  static HyperParams from_range_sigma(double range, double sigma, double precision, double nu) {
    const auto [kappa, tau] = natural_params(ParamDirection::range_sigma_to_kappa_tau, range, sigma, nu);
    return {std::log(kappa), std::log(tau), std::log(precision)};
  }
};

/// Prior precision of the joint latent vector and its log determinant.
struct LatentPrior {
  bool is_dense = false;
  SparseSymMatrix sparse;
  Eigen::MatrixXd dense;
  double log_det = 0.0;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return is_dense ? Eigen::VectorXd(dense * x) : Eigen::VectorXd(sparse * x); }
};

/// Assembled model: graph, observations, predictor matrix and the
/// theta-independent parts of the prior. Observation rows are stored in a
/// canonical order (see input_rows). Latent layout:
///   graph_spde:  [field at mesh nodes, intercept, covariates, nugget per row]
///   covariance:  [field + nugget per row, intercept, covariates]
class NetworkModel {
 public:
  NetworkModel(MetricGraph graph, ObservationSet obs, ModelSpec spec)
      : graph_(std::move(graph)), obs_(std::move(obs)), spec_(std::move(spec)) {
    spec_.validate();
    obs_.complete();
    obs_.validate(graph_, spec_.family);
    canonicalize();
    if (graph_.edge_count() == 0) throw InputError("graph has no edges");
    diameter_ = graph_diameter(graph_);
    if (!(diameter_ > 0.0)) diameter_ = graph_.total_length();
    const auto m = static_cast<Eigen::Index>(obs_.size());
    const Eigen::Index p1 = 1 + obs_.covariates.cols();
    if (spec_.kind == ModelKind::graph_spde) {
      if (spec_.h_max == 0.0) spec_.h_max = default_h_max(graph_);
      mesh_ = discretize(graph_, spec_.h_max);
      fem_ = assemble_matrices(mesh_);
      field_size_ = static_cast<Eigen::Index>(mesh_.node_count());
      nugget_size_ = spec_.has_nugget_block() ? m : 0;
      const SparseMatrix a_field = observation_matrix(graph_, mesh_, obs_.positions);
      std::vector<Eigen::Triplet<double>> trip;
      for (Eigen::Index r = 0; r < a_field.outerSize(); ++r)
        for (SparseMatrix::InnerIterator it(a_field, r); it; ++it) trip.emplace_back(r, it.col(), it.value());
      add_design(trip, field_size_);
      for (Eigen::Index i = 0; i < nugget_size_; ++i) trip.emplace_back(i, field_size_ + p1 + i, 1.0);
      predictor_.resize(m, field_size_ + p1 + nugget_size_);
      predictor_.setFromTriplets(trip.begin(), trip.end());
    } else {
      if (obs_.size() > kMaxDensePositions)
        throw InputError("covariance models support at most " + std::to_string(kMaxDensePositions) +
                         " observation positions (got " + std::to_string(obs_.size()) + ")");
      field_size_ = m;
      nugget_size_ = 0;
      distances_ = observation_distances(obs_.positions);
      std::vector<Eigen::Triplet<double>> trip;
      for (Eigen::Index i = 0; i < m; ++i) trip.emplace_back(i, i, 1.0);
      add_design(trip, m);
      predictor_.resize(m, m + p1);
      predictor_.setFromTriplets(trip.begin(), trip.end());
    }
  }

  const MetricGraph& graph() const { return graph_; }
  const ObservationSet& observations() const { return obs_; }
  const ModelSpec& spec() const { return spec_; }
  const DiscretizationMesh& mesh() const { return mesh_; }
  const FemMatrices& fem() const { return fem_; }
  bool dense() const { return spec_.kind != ModelKind::graph_spde; }
  double diameter() const { return diameter_; }

  Eigen::Index field_size() const { return field_size_; }
  Eigen::Index beta_size() const { return 1 + obs_.covariates.cols(); }
  Eigen::Index beta_offset() const { return field_size_; }
  Eigen::Index nugget_size() const { return nugget_size_; }
  Eigen::Index latent_size() const { return field_size_ + beta_size() + nugget_size_; }
  /// Input row of each stored (canonically ordered) observation row.
  const std::vector<std::size_t>& input_rows() const { return input_rows_; }
  /// Maps the latent vector to the per-observation linear predictor.
  const SparseMatrix& predictor() const { return predictor_; }

  /// Field precision on the mesh (graph_spde only).
  SparseSymMatrix field_precision(const HyperParams& theta) const {
    return precision_matrix(fem_.mass, fem_.stiffness, {theta.kappa(), theta.tau(), spec_.alpha});
  }

  MaternParams matern(const HyperParams& theta) const {
    const double nu = spec_.smoothness();
    return {field_variance(theta.kappa(), theta.tau(), nu), theta.kappa(), nu};
  }

  /// Covariance of the per-row latent block of a covariance model.
  Eigen::MatrixXd row_covariance(const HyperParams& theta) const {
    const MaternParams mp = matern(theta);
    Eigen::MatrixXd k = matern_from_distances(distances_, mp);
    const double extra = spec_.family == Family::poisson && spec_.nugget ? 1.0 / theta.precision() : 0.0;
    k.diagonal().array() += extra + 1e-9 * mp.sigma2;
    return k;
  }

  /// Latent covariance between new positions and the observation rows (covariance models).
  Eigen::MatrixXd cross_covariance(const HyperParams& theta, std::span<const GraphPosition> positions) const {
    const MaternParams mp = matern(theta);
    const auto m = static_cast<Eigen::Index>(obs_.size());
    Eigen::MatrixXd d(static_cast<Eigen::Index>(positions.size()), m);
    if (spec_.kind == ModelKind::euclidean_matern) {
      std::vector<Point> obs_xy;
      for (const auto& p : obs_.positions) obs_xy.push_back(position_to_xy(graph_, p));
      for (std::size_t i = 0; i < positions.size(); ++i) {
        const Point q = position_to_xy(graph_, positions[i]);
        for (Eigen::Index j = 0; j < m; ++j) d(static_cast<Eigen::Index>(i), j) = distance(q, obs_xy[j]);
      }
    } else {
      constexpr std::size_t block = 1000;
      for (std::size_t start = 0; start < positions.size(); start += block) {
        const std::size_t len = std::min(block, positions.size() - start);
        std::vector<GraphPosition> all(obs_.positions);
        all.insert(all.end(), positions.begin() + start, positions.begin() + start + len);
        const DistanceMatrix dm = pairwise_distances(graph_, all, Metric::resistance);
        d.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) =
            dm.values.bottomLeftCorner(static_cast<Eigen::Index>(len), m);
      }
    }
    return matern_from_distances(d, mp);
  }

  LatentPrior prior_precision(const HyperParams& theta) const {
    const Eigen::Index p1 = beta_size();
    const double bp = spec_.beta_precision;
    LatentPrior out;
    if (!dense()) {
      const SparseSymMatrix qs = field_precision(theta);
      const SpdFactor factor(qs, "field precision");
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(static_cast<std::size_t>(qs.nonZeros() + p1 + nugget_size_));
      for (Eigen::Index k = 0; k < qs.outerSize(); ++k)
        for (SparseSymMatrix::InnerIterator it(qs, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
      for (Eigen::Index j = 0; j < p1; ++j) trip.emplace_back(field_size_ + j, field_size_ + j, bp);
      const double tau_eps = theta.precision();
      for (Eigen::Index i = 0; i < nugget_size_; ++i)
        trip.emplace_back(field_size_ + p1 + i, field_size_ + p1 + i, tau_eps);
      out.sparse.resize(latent_size(), latent_size());
      out.sparse.setFromTriplets(trip.begin(), trip.end());
      out.log_det = factor.log_det() + static_cast<double>(p1) * std::log(bp) +
                    static_cast<double>(nugget_size_) * std::log(tau_eps);
      return out;
    }
    out.is_dense = true;
    const Eigen::Index m = field_size_;
    out.dense = Eigen::MatrixXd::Zero(latent_size(), latent_size());
    if (m > 0) {
      const SpdFactor factor(row_covariance(theta), "field covariance");
      Eigen::MatrixXd inv = factor.solve(Eigen::MatrixXd::Identity(m, m));
      out.dense.topLeftCorner(m, m) = 0.5 * (inv + inv.transpose());
      out.log_det = -factor.log_det();
    }
    for (Eigen::Index j = 0; j < p1; ++j) out.dense(m + j, m + j) = bp;
    out.log_det += static_cast<double>(p1) * std::log(bp);
    return out;
  }

 private:
  // Rows sorted by (edge, offset, y, exposure, covariates) so that every result
  // is independent of the order observations were supplied in.
  void canonicalize() {
    const std::size_t m = obs_.size();
    input_rows_.resize(m);
    for (std::size_t i = 0; i < m; ++i) input_rows_[i] = i;
    auto key_less = [&](std::size_t a, std::size_t b) {
      const auto ra = static_cast<Eigen::Index>(a), rb = static_cast<Eigen::Index>(b);
      if (obs_.positions[a].edge != obs_.positions[b].edge) return obs_.positions[a].edge < obs_.positions[b].edge;
      if (obs_.positions[a].offset != obs_.positions[b].offset)
        return obs_.positions[a].offset < obs_.positions[b].offset;
      if (obs_.y[ra] != obs_.y[rb]) return obs_.y[ra] < obs_.y[rb];
      if (obs_.exposure[ra] != obs_.exposure[rb]) return obs_.exposure[ra] < obs_.exposure[rb];
      for (Eigen::Index j = 0; j < obs_.covariates.cols(); ++j)
        if (obs_.covariates(ra, j) != obs_.covariates(rb, j)) return obs_.covariates(ra, j) < obs_.covariates(rb, j);
      return false;
    };
    std::stable_sort(input_rows_.begin(), input_rows_.end(), key_less);
    ObservationSet sorted = obs_;
    for (std::size_t i = 0; i < m; ++i) {
      const auto r = static_cast<Eigen::Index>(i), src = static_cast<Eigen::Index>(input_rows_[i]);
      sorted.positions[i] = obs_.positions[input_rows_[i]];
      sorted.y[r] = obs_.y[src];
      sorted.exposure[r] = obs_.exposure[src];
      sorted.covariates.row(r) = obs_.covariates.row(src);
    }
    obs_ = std::move(sorted);
  }

  void add_design(std::vector<Eigen::Triplet<double>>& trip, Eigen::Index col0) const {
    const auto m = static_cast<Eigen::Index>(obs_.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      trip.emplace_back(i, col0, 1.0);
      for (Eigen::Index j = 0; j < obs_.covariates.cols(); ++j)
        if (obs_.covariates(i, j) != 0.0) trip.emplace_back(i, col0 + 1 + j, obs_.covariates(i, j));
    }
  }

  Eigen::MatrixXd observation_distances(std::span<const GraphPosition> positions) const {
    if (positions.empty()) return {};
    if (spec_.kind == ModelKind::euclidean_matern) {
      std::vector<Point> xy;
      for (const auto& p : positions) xy.push_back(position_to_xy(graph_, p));
      return euclidean_distances(xy);
    }
    return pairwise_distances(graph_, positions, Metric::resistance).values;
  }

  MetricGraph graph_;
  ObservationSet obs_;
  ModelSpec spec_;
  double diameter_ = 0.0;
  DiscretizationMesh mesh_;
  FemMatrices fem_;
  Eigen::MatrixXd distances_;
  Eigen::Index field_size_ = 0;
  Eigen::Index nugget_size_ = 0;
  SparseMatrix predictor_;
  std::vector<std::size_t> input_rows_;
};

namespace detail {

struct LikelihoodTerms {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::VectorXd weight;
};

// Sum of per-row log-likelihoods with gradient and negative Hessian in eta.
inline LikelihoodTerms likelihood_terms(const NetworkModel& model, const HyperParams& theta,
                                        const Eigen::VectorXd& eta) {
  const ObservationSet& obs = model.observations();
  const auto m = eta.size();
  LikelihoodTerms t;
  t.gradient.resize(m);
  t.weight.resize(m);
  if (model.spec().family == Family::gaussian) {
    const double prec = theta.precision();
    const double c = 0.5 * std::log(prec / (2.0 * M_PI));
    for (Eigen::Index i = 0; i < m; ++i) {
      const double r = obs.y[i] - eta[i];
      t.value += c - 0.5 * prec * r * r;
      t.gradient[i] = prec * r;
      t.weight[i] = prec;
    }
    return t;
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    const double mu = obs.exposure[i] * std::exp(eta[i]);
    t.value += obs.y[i] * (std::log(obs.exposure[i]) + eta[i]) - mu - std::lgamma(obs.y[i] + 1.0);
    t.gradient[i] = obs.y[i] - mu;
    t.weight[i] = mu;
  }
  return t;
}

inline bool eta_guard_ok(const NetworkModel& model, const Eigen::VectorXd& eta) {
  if (model.spec().family == Family::gaussian) return eta.allFinite();
  return eta.allFinite() && (eta.size() == 0 || eta.maxCoeff() <= kMaxLinearPredictor);
}

}  // namespace detail

struct LaplaceOptions {
  int max_iterations = 50;
  double gradient_tolerance = 1e-8;
};

struct LaplaceResult {
  Eigen::VectorXd mode;
  Eigen::VectorXd eta;
  LatentPrior prior;
  /// Posterior precision Q* = Q_joint + A*^T W A* at the mode.
  bool is_dense = false;
  SparseSymMatrix precision;
  Eigen::MatrixXd dense_precision;
  std::shared_ptr<const SpdFactor> factor;
  double loglik = 0.0;
  double log_det_posterior = 0.0;
  /// Laplace log marginal likelihood; the (2 pi)^{N/2} factors cancel exactly.
  double marginal = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> gradient_trace;
};

/// Newton-Raphson with step halving on sum loglik(A* u) - u^T Q_joint u / 2,
/// started at u = 0.
inline LaplaceResult laplace_mode(const NetworkModel& model, const HyperParams& theta,
                                  const LaplaceOptions& opts = {}) {
  if (!std::isfinite(theta.log_kappa) || !std::isfinite(theta.log_tau) || !std::isfinite(theta.log_precision))
    throw InputError("hyperparameters must be finite");
  LaplaceResult res;
  res.prior = model.prior_precision(theta);
  res.is_dense = res.prior.is_dense;
  const SparseMatrix& a = model.predictor();
  const SparseSymMatrix at = a.transpose();
  const Eigen::Index n = model.latent_size();

  auto hessian = [&](const Eigen::VectorXd& w) {
    const SparseSymMatrix awa = at * w.asDiagonal() * a;
    if (res.is_dense) {
      res.dense_precision = res.prior.dense + Eigen::MatrixXd(awa);
      res.factor = std::make_shared<const SpdFactor>(res.dense_precision, "posterior precision");
    } else {
      res.precision = res.prior.sparse + awa;
      res.factor = std::make_shared<const SpdFactor>(res.precision, "posterior precision");
    }
  };
  auto objective = [&](const Eigen::VectorXd& x, const detail::LikelihoodTerms& t) {
    return t.value - 0.5 * x.dot(res.prior.apply(x));
  };

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd eta = a * x;
  detail::LikelihoodTerms terms = detail::likelihood_terms(model, theta, eta);
  double f = objective(x, terms);
  for (int iter = 0;; ++iter) {
    const Eigen::VectorXd grad = at * terms.gradient - res.prior.apply(x);
    const double gnorm = n ? grad.cwiseAbs().maxCoeff() : 0.0;
    res.gradient_trace.push_back(gnorm);
    if (gnorm < opts.gradient_tolerance) {
      res.iterations = iter;
      res.gradient_norm = gnorm;
      break;
    }
    if (iter >= opts.max_iterations)
      throw ConvergenceError("mode search did not converge in " + std::to_string(opts.max_iterations) +
                                 " Newton iterations (gradient norm " + std::to_string(gnorm) + ")",
                             res.gradient_trace);
    hessian(terms.weight);
    const Eigen::VectorXd step = res.factor->solve_vec(grad);
    double t = 1.0;
    bool accepted = false, guarded = false;
    for (int half = 0; half < 40; ++half, t *= 0.5) {
      const Eigen::VectorXd xt = x + t * step;
      const Eigen::VectorXd et = a * xt;
      if (!detail::eta_guard_ok(model, et)) {
        guarded = true;
        continue;
      }
      detail::LikelihoodTerms tt = detail::likelihood_terms(model, theta, et);
      const double ft = objective(xt, tt);
      if (std::isfinite(ft) && ft >= f - 1e-12 * (1.0 + std::abs(f))) {
        x = xt;
        eta = et;
        terms = std::move(tt);
        f = ft;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (guarded)
        throw NumericalError("linear predictor exceeds " + std::to_string(kMaxLinearPredictor) +
                             " during mode search; rescale exposures");
      throw ConvergenceError("line search failed to improve the mode objective", res.gradient_trace);
    }
  }
  hessian(terms.weight);
  res.mode = std::move(x);
  res.eta = std::move(eta);
  res.loglik = terms.value;
  res.log_det_posterior = res.factor->log_det();
  res.marginal = f + 0.5 * res.prior.log_det - 0.5 * res.log_det_posterior;
  return res;
}

inline double laplace_marginal_loglik(const NetworkModel& model, const HyperParams& theta,
                                      const LaplaceOptions& opts = {}) {
  return laplace_mode(model, theta, opts).marginal;
}

/// Exact log density of y = A u + Z beta + noise, u ~ N(0, Q^{-1}),
/// beta ~ N(0, I / beta_precision), noise ~ N(0, I / noise_precision).
inline double gaussian_marginal_loglik(const SparseSymMatrix& q, const SparseMatrix& a, double noise_precision,
                                       const Eigen::VectorXd& y, double beta_precision,
                                       const Eigen::MatrixXd& z) {
  const Eigen::Index n = q.rows(), m = y.size(), p = z.cols();
  if (q.cols() != n || a.rows() != m || a.cols() != n || (p > 0 && z.rows() != m))
    throw InputError("gaussian_marginal_loglik: inconsistent dimensions");
  if (!(noise_precision > 0.0) || !(beta_precision > 0.0)) throw InputError("precisions must be > 0");
  std::vector<Eigen::Triplet<double>> jt, bt;
  for (Eigen::Index k = 0; k < q.outerSize(); ++k)
    for (SparseSymMatrix::InnerIterator it(q, k); it; ++it) jt.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index j = 0; j < p; ++j) jt.emplace_back(n + j, n + j, beta_precision);
  for (Eigen::Index r = 0; r < a.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(a, r); it; ++it) bt.emplace_back(r, it.col(), it.value());
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      if (z(i, j) != 0.0) bt.emplace_back(i, n + j, z(i, j));
  SparseSymMatrix joint(n + p, n + p), b(m, n + p);
  joint.setFromTriplets(jt.begin(), jt.end());
  b.setFromTriplets(bt.begin(), bt.end());
  const SparseSymMatrix bt_mat = b.transpose();
  const SparseSymMatrix post = joint + noise_precision * (bt_mat * b);
  const SpdFactor prior_factor(joint, "joint prior precision");
  const SpdFactor post_factor(post, "joint posterior precision");
  const Eigen::VectorXd rhs = noise_precision * (bt_mat * y);
  const Eigen::VectorXd mean = post_factor.solve_vec(rhs);
  return 0.5 * static_cast<double>(m) * std::log(noise_precision / (2.0 * M_PI)) -
         0.5 * noise_precision * y.squaredNorm() + 0.5 * rhs.dot(mean) + 0.5 * prior_factor.log_det() -
         0.5 * post_factor.log_det();
}

/// Working coordinates (log range, log sigma, log precision) and their box.
struct SearchSpace {
  double nu = 0.5;
  Eigen::Vector3d lower;
  Eigen::Vector3d upper;
  int dim = 3;

  static SearchSpace for_model(const NetworkModel& model) {
    SearchSpace s;
    s.nu = model.spec().smoothness();
    const double log_kappa_min = std::log(1.0 / (10.0 * model.diameter()));
    const double log_kappa_max = std::log(1000.0 / model.graph().shortest_edge());
    const double log_scale = 0.5 * std::log(8.0 * s.nu);
    s.lower << log_scale - log_kappa_max, std::log(1e-3), std::log(1e-3);
    s.upper << log_scale - log_kappa_min, std::log(1e2), std::log(1e8);
    s.dim = model.spec().uses_precision() ? 3 : 2;
    return s;
  }

  Eigen::Vector3d clamp(const Eigen::Vector3d& z) const { return z.cwiseMax(lower).cwiseMin(upper); }

  HyperParams to_theta(const Eigen::Vector3d& z) const {
    return HyperParams::from_range_sigma(std::exp(z[0]), std::exp(z[1]), std::exp(z[2]), nu);
  }

  Eigen::Vector3d from_theta(const HyperParams& h) const {
    return {std::log(h.range(nu)), std::log(h.sigma(nu)), h.log_precision};
  }
};

/// Log prior density of the working coordinates.
inline double log_prior_density(const ModelSpec& spec, const Eigen::Vector3d& z) {
  double lp = pc_prior_logdensity(std::exp(z[0]), std::exp(z[1]), spec.pc) + z[0] + z[1];
  if (spec.uses_precision()) lp += spec.precision_prior.log_density_of_log(z[2]);
  return lp;
}

struct OptimizerSettings {
  int max_evaluations = 200;
  int restarts = 2;
  double tolerance = 1e-4;
  double initial_step = 1.0;
  double restart_scale = 0.5;
  std::uint64_t seed = 1;
  /// Optional starting point in (range, sigma, precision); non-positive entries use defaults.
  double start_range = 0.0;
  double start_sigma = 0.0;
  double start_precision = 0.0;
};

struct Evaluation {
  HyperParams theta;
  double objective = -std::numeric_limits<double>::infinity();
  bool ok = false;
};

struct OptimizationResult {
  HyperParams theta;
  double objective = -std::numeric_limits<double>::infinity();
  std::vector<Evaluation> log;
  int evaluations = 0;
  bool flat = false;
};

/// Nelder-Mead in the working coordinates with box clamping, one initial run
/// and `restarts` further runs started from perturbations of the incumbent.
inline OptimizationResult optimize_hyperparameters(const NetworkModel& model, const OptimizerSettings& s = {},
                                                   const LaplaceOptions& lopts = {}) {
  if (model.observations().size() < 2) throw InputError("hyperparameter search needs at least 2 observations");
  const SearchSpace space = SearchSpace::for_model(model);
  const int dim = space.dim;
  OptimizationResult out;
  std::exception_ptr last_error;
  Eigen::Vector3d best_z = Eigen::Vector3d::Zero();

  auto evaluate = [&](Eigen::Vector3d z) {
    z = space.clamp(z);
    Evaluation ev;
    ev.theta = space.to_theta(z);
    try {
      ev.objective = laplace_mode(model, ev.theta, lopts).marginal + log_prior_density(model.spec(), z);
      ev.ok = std::isfinite(ev.objective);
      if (!ev.ok) ev.objective = -std::numeric_limits<double>::infinity();
    } catch (const Error&) {
      last_error = std::current_exception();
    }
    out.log.push_back(ev);
    if (ev.ok && ev.objective > out.objective) {
      out.objective = ev.objective;
      out.theta = ev.theta;
      best_z = z;
    }
    return ev.objective;
  };

  Eigen::Vector3d start;
  {
    const ObservationSet& obs = model.observations();
    const double r = s.start_range > 0.0 ? s.start_range : model.diameter() / 10.0;
    const double sig = s.start_sigma > 0.0 ? s.start_sigma : 1.0;
    double prec = s.start_precision;
    if (!(prec > 0.0)) {
      if (model.spec().family == Family::gaussian) {
        const double mean = obs.y.mean();
        const double var = (obs.y.array() - mean).square().sum() / std::max<double>(1.0, obs.size() - 1.0);
        prec = 2.0 / std::max(var, 1e-12);
      } else {
        prec = 100.0;
      }
    }
    start << std::log(r), std::log(sig), std::log(prec);
    start = space.clamp(start);
  }

  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  struct Vertex {
    Eigen::Vector3d z;
    double f;
  };

  for (int run = 0; run <= s.restarts; ++run) {
    Eigen::Vector3d z0 = start;
    if (run > 0) {
      if (!std::isfinite(out.objective)) z0 = start;
      else z0 = best_z;
      for (int k = 0; k < dim; ++k) z0[k] += s.restart_scale * normal(rng);
      z0 = space.clamp(z0);
    }
    const int budget_end = static_cast<int>(out.log.size()) + s.max_evaluations;
    std::vector<Vertex> simplex;
    simplex.push_back({z0, evaluate(z0)});
    for (int k = 0; k < dim; ++k) {
      Eigen::Vector3d z = z0;
      z[k] += (z0[k] + s.initial_step <= space.upper[k]) ? s.initial_step : -s.initial_step;
      simplex.push_back({space.clamp(z), evaluate(z)});
    }
    std::vector<double> best_history;
    auto by_value = [](const Vertex& a, const Vertex& b) { return a.f > b.f; };
    while (static_cast<int>(out.log.size()) < budget_end) {
      std::stable_sort(simplex.begin(), simplex.end(), by_value);
      best_history.push_back(simplex.front().f);
      const std::size_t cycle = static_cast<std::size_t>(dim + 1);
      const double spread = simplex.front().f - simplex.back().f;
      if (best_history.size() > cycle &&
          best_history.back() - best_history[best_history.size() - 1 - cycle] < s.tolerance &&
          std::isfinite(spread) && spread < s.tolerance)
        break;
      Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
      for (int k = 0; k < dim; ++k) centroid += simplex[k].z;
      centroid /= dim;
      Vertex& worst = simplex.back();
      const Eigen::Vector3d zr = space.clamp(centroid + (centroid - worst.z));
      const double fr = evaluate(zr);
      if (fr > simplex.front().f) {
        const Eigen::Vector3d ze = space.clamp(centroid + 2.0 * (centroid - worst.z));
        const double fe = evaluate(ze);
        worst = fe > fr ? Vertex{ze, fe} : Vertex{zr, fr};
      } else if (fr > simplex[dim - 1].f) {
        worst = {zr, fr};
      } else {
        const bool outside = fr > worst.f;
        const Eigen::Vector3d zc =
            space.clamp(outside ? Eigen::Vector3d(centroid + 0.5 * (zr - centroid))
                                : Eigen::Vector3d(centroid + 0.5 * (worst.z - centroid)));
        const double fc = evaluate(zc);
        if (fc > (outside ? fr : worst.f)) {
          worst = {zc, fc};
        } else {
          for (std::size_t k = 1; k < simplex.size(); ++k) {
            simplex[k].z = space.clamp(simplex.front().z + 0.5 * (simplex[k].z - simplex.front().z));
            simplex[k].f = evaluate(simplex[k].z);
          }
        }
      }
    }
    std::stable_sort(simplex.begin(), simplex.end(), by_value);
    double diam = 0.0;
    for (const auto& v : simplex) diam = std::max(diam, (v.z - simplex.front().z).cwiseAbs().maxCoeff());
    const double spread = simplex.front().f - simplex.back().f;
    if (run == 0) out.flat = std::isfinite(spread) && spread < 1e-6 && diam > 1e-2;
  }
  out.evaluations = static_cast<int>(out.log.size());
  if (!std::isfinite(out.objective)) {
    if (last_error) std::rethrow_exception(last_error);
    throw NumericalError("every hyperparameter evaluation failed");
  }
  return out;
}

struct FitOptions {
  OptimizerSettings optimizer;
  LaplaceOptions laplace;
};

struct FitResult {
  std::shared_ptr<const NetworkModel> model;
  HyperParams theta;
  LaplaceResult laplace;
  /// Log marginal plus log prior at theta (optimizer objective).
  double objective = 0.0;
  int evaluations = 0;
  bool flat = false;
  double seconds = 0.0;
  std::vector<Evaluation> evaluation_log;
  std::vector<std::string> warnings;

  const Eigen::VectorXd& mode() const { return laplace.mode; }
  Eigen::VectorXd beta() const { return laplace.mode.segment(model->beta_offset(), model->beta_size()); }
  /// Posterior standard deviations of the beta block under the Gaussian approximation.
  Eigen::VectorXd beta_sd() const {
    const Eigen::Index n = model->latent_size(), off = model->beta_offset(), p1 = model->beta_size();
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, p1);
    for (Eigen::Index j = 0; j < p1; ++j) e(off + j, j) = 1.0;
    const Eigen::MatrixXd cols = laplace.factor->solve(e);
    Eigen::VectorXd sd(p1);
    for (Eigen::Index j = 0; j < p1; ++j) sd[j] = std::sqrt(cols(off + j, j));
    return sd;
  }
};

/// Mode and posterior precision at fixed hyperparameters.
inline FitResult fit_at(std::shared_ptr<const NetworkModel> model, const HyperParams& theta,
                        const LaplaceOptions& lopts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  FitResult fit;
  fit.model = std::move(model);
  fit.theta = theta;
  fit.laplace = laplace_mode(*fit.model, theta, lopts);
  const SearchSpace space = SearchSpace::for_model(*fit.model);
  fit.objective = fit.laplace.marginal + log_prior_density(fit.model->spec(), space.from_theta(theta));
  fit.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return fit;
}

inline FitResult fit_model(std::shared_ptr<const NetworkModel> model, const FitOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  OptimizationResult opt = optimize_hyperparameters(*model, opts.optimizer, opts.laplace);
  FitResult fit = fit_at(std::move(model), opt.theta, opts.laplace);
  fit.objective = opt.objective;
  fit.evaluations = opt.evaluations;
  fit.flat = opt.flat;
  fit.evaluation_log = std::move(opt.log);
  if (fit.flat) fit.warnings.push_back("objective is nearly flat around the optimum; hyperparameters weakly identified");
  fit.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return fit;
}

/// S draws from N(mode, Q*^{-1}), one per column.
template <NormalSource Src>
Eigen::MatrixXd posterior_samples(const FitResult& fit, int samples, Src& source) {
  if (samples < 1) throw InputError("number of samples must be >= 1");
  const Eigen::Index n = fit.laplace.mode.size();
  Eigen::MatrixXd out(n, samples);
  for (int s = 0; s < samples; ++s)
    out.col(s) = fit.laplace.mode + fit.laplace.factor->whiten_solve(normal_vector(n, source));
  return out;
}

inline Eigen::MatrixXd posterior_samples(const FitResult& fit, int samples, std::uint64_t seed) {
  NormalStream stream(seed);
  return posterior_samples(fit, samples, stream);
}

/// Per-observation linear predictor for each latent sample column.
inline Eigen::MatrixXd observation_eta(const FitResult& fit, const Eigen::MatrixXd& latent) {
  return fit.model->predictor() * latent;
}

struct PredictionSummary {
  double eta_mean = 0.0;
  double eta_sd = 0.0;
  double rho_median = 0.0;
  double rho_lower = 0.0;
  double rho_upper = 0.0;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline PredictionSummary summarize(const Eigen::VectorXd& eta) {
  PredictionSummary p;
  const auto s = eta.size();
  p.eta_mean = eta.mean();
  p.eta_sd = s > 1 ? std::sqrt((eta.array() - p.eta_mean).square().sum() / static_cast<double>(s - 1)) : 0.0;
  std::vector<double> v(eta.data(), eta.data() + s);
  std::sort(v.begin(), v.end());
  p.rho_median = std::exp(quantile_sorted(v, 0.5));
  p.rho_lower = std::exp(quantile_sorted(v, 0.025));
  p.rho_upper = std::exp(quantile_sorted(v, 0.975));
  return p;
}

}  // namespace detail

/// Linear-predictor samples (positions x samples) of field + intercept at new
/// positions; covariates are not used at prediction sites. Covariance models
/// add the kriging conditional S(new) | latent rows.
template <NormalSource Src>
Eigen::MatrixXd predictive_eta(const FitResult& fit, std::span<const GraphPosition> positions, int samples,
                               Src& source) {
  const NetworkModel& model = *fit.model;
  for (const auto& p : positions) model.graph().check(p);
  const Eigen::MatrixXd latent = posterior_samples(fit, samples, source);
  const Eigen::Index b0 = model.beta_offset();
  const auto np = static_cast<Eigen::Index>(positions.size());
  Eigen::MatrixXd eta(np, samples);
  if (!model.dense()) {
    const SparseMatrix proj = observation_matrix(model.graph(), model.mesh(), positions);
    eta = proj * latent.topRows(model.field_size());
  } else {
    const Eigen::Index m = model.field_size();
    Eigen::VectorXd cond_sd = Eigen::VectorXd::Zero(np);
    eta.setZero();
    if (m > 0) {
      const Eigen::MatrixXd k_new = model.cross_covariance(fit.theta, positions);
      const SpdFactor rows(model.row_covariance(fit.theta), "field covariance");
      const Eigen::MatrixXd weights = rows.solve(Eigen::MatrixXd(k_new.transpose())).transpose();
      const double sigma2 = model.matern(fit.theta).sigma2;
      for (Eigen::Index j = 0; j < np; ++j)
        cond_sd[j] = std::sqrt(std::max(0.0, sigma2 - k_new.row(j).dot(weights.row(j))));
      eta = weights * latent.topRows(m);
    } else {
      cond_sd.setConstant(std::sqrt(model.matern(fit.theta).sigma2));
    }
    for (int s = 0; s < samples; ++s) eta.col(s) += cond_sd.cwiseProduct(normal_vector(np, source));
  }
  eta.rowwise() += latent.row(b0);
  return eta;
}

template <NormalSource Src>
std::vector<PredictionSummary> predict(const FitResult& fit, std::span<const GraphPosition> positions, int samples,
                                       Src& source) {
  const Eigen::MatrixXd eta = predictive_eta(fit, positions, samples, source);
  std::vector<PredictionSummary> out;
  out.reserve(positions.size());
  for (Eigen::Index j = 0; j < eta.rows(); ++j) out.push_back(detail::summarize(eta.row(j).transpose()));
  return out;
}

inline std::vector<PredictionSummary> predict(const FitResult& fit, std::span<const GraphPosition> positions,
                                              int samples, std::uint64_t seed) {
  NormalStream stream(seed);
  return predict(fit, positions, samples, stream);
}

}  // namespace netfield
