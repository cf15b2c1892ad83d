#pragma once

// Scenario-based estimation of the inflation factor alpha: sample size,
// parameter distribution, fictitious experiments and constraint removal.

#include "smvrft/common.hpp"
#include "smvrft/lti.hpp"
#include "smvrft/random.hpp"
#include "smvrft/signals.hpp"
#include "smvrft/sm.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace smvrft::scenario {

struct ScenarioSpec {
    double epsilon = 0.05;
    double beta = 1e-6;
    std::size_t p = 0;
    std::size_t N = 0;
    double M_cap = 1e6;
    std::uint64_t base_seed = 1;

    void validate() const {
        require(epsilon > 0.0 && epsilon < 1.0, "ScenarioSpec: epsilon must lie in (0,1)");
        require(beta > 0.0 && beta < 1.0, "ScenarioSpec: beta must lie in (0,1)");
        require(M_cap > 1.0, "ScenarioSpec: M_cap must exceed 1");
        require(N == 0 || p < N, "ScenarioSpec: p must be below N");
    }
};

// ---------------------------------------------------------------------------
// Sample size.

/// log of sum_{j=0}^{p} C(N,j) eps^j (1-eps)^(N-j).
inline double log_binomial_tail(std::size_t N, double epsilon, std::size_t p) {
    require(epsilon > 0.0 && epsilon < 1.0, "log_binomial_tail: epsilon must lie in (0,1)");
    if (p >= N) return 0.0;
    const double n = static_cast<double>(N);
    const double le = std::log(epsilon);
    const double l1e = std::log1p(-epsilon);
    std::vector<double> terms;
    terms.reserve(p + 1);
    for (std::size_t j = 0; j <= p; ++j) {
        const double jj = static_cast<double>(j);
        terms.push_back(std::lgamma(n + 1.0) - std::lgamma(jj + 1.0) - std::lgamma(n - jj + 1.0) + jj * le +
                        (n - jj) * l1e);
    }
    const double top = *std::max_element(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    return top + std::log(acc);
}

inline bool tail_satisfied(std::size_t N, double epsilon, double beta, std::size_t p) {
    return log_binomial_tail(N, epsilon, p) <= std::log(beta);
}

/// Smallest N with binomial tail <= beta: doubling, then bisection.
inline std::size_t min_sample_size(double epsilon, double beta, std::size_t p, std::size_t max_n = 1u << 30) {
    require(epsilon > 0.0 && epsilon < 1.0, "min_sample_size: epsilon must lie in (0,1)");
    require(beta > 0.0 && beta < 1.0, "min_sample_size: beta must lie in (0,1)");
    std::size_t lo = p;  // tail(p) = 1 > beta
    std::size_t hi = std::max<std::size_t>(p + 1, 1);
    while (!tail_satisfied(hi, epsilon, beta, p)) {
        lo = hi;
        if (hi >= max_n) {
            throw Error(ErrorKind::capacity, "min_sample_size: no N below the iteration cap satisfies the bound");
        }
        hi = std::min(hi * 2, max_n);
    }
    while (hi - lo > 1) {
        const std::size_t mid = lo + (hi - lo) / 2;
        (tail_satisfied(mid, epsilon, beta, p) ? hi : lo) = mid;
    }
    if (hi > 1 && tail_satisfied(hi - 1, epsilon, beta, p)) {
        throw Error(ErrorKind::numerical, "min_sample_size: binomial tail is not monotone near the solution");
    }
    return hi;
}

// ---------------------------------------------------------------------------
// Parameter distribution and sampling.

struct ThetaDistribution {
    lti::ParameterVector mean;
    Matrix covariance;
    bool stability_filter = true;

    void validate() const {
        const auto p = mean.values().size();
        require(covariance.rows() == p && covariance.cols() == p, "ThetaDistribution: covariance has the wrong size");
        require((covariance - covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + covariance.norm()),
                "ThetaDistribution: covariance must be symmetric");
        if (p > 0) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(covariance, Eigen::EigenvaluesOnly);
            require(es.eigenvalues().minCoeff() >= -1e-10 * (1.0 + covariance.norm()),
                    "ThetaDistribution: covariance must be positive semidefinite");
        }
    }
};

/// Gaussian at the least-squares estimate with covariance s^2 (Phi'Phi)^-1.
inline ThetaDistribution fit_theta_distribution(const signals::RegressorData& data) {
    const Eigen::Index rows = data.phi.rows();
    const Eigen::Index p = data.phi.cols();
    require(p >= 2 && p % 2 == 0, "fit_theta_distribution: regressor width must be 2n");
    require(rows >= p, "fit_theta_distribution: fewer pairs than parameters");
    require(data.target.size() == rows, "fit_theta_distribution: target length mismatch");
    Eigen::ColPivHouseholderQR<Matrix> qr(data.phi);
    if (qr.rank() < p) {
        throw Error(ErrorKind::numerical, "fit_theta_distribution: regressor matrix is rank deficient");
    }
    const Vector theta = qr.solve(data.target);
    const Vector res = data.target - data.phi * theta;
    const double dof = static_cast<double>(std::max<Eigen::Index>(rows - p, 1));
    const double s2 = res.squaredNorm() / dof;
    const Matrix normal = data.phi.transpose() * data.phi;
    Matrix cov = s2 * normal.ldlt().solve(Matrix::Identity(p, p));
    cov = 0.5 * (cov + cov.transpose());
    return ThetaDistribution{lti::ParameterVector(theta), cov, true};
}

struct Scenario {
    std::size_t index = 0;
    lti::ParameterVector theta;
    Signal noise;  // k = -n+1 .. N_d
};

inline bool is_stable_theta(const lti::ParameterVector& theta) {
    return lti::spectral_radius(lti::theta_to_state_space(theta).A) < 1.0;
}

/// Scenario i uses its own stream seeded by base_seed + i.
inline Scenario sample_scenario(std::size_t index, const ScenarioSpec& spec, const ThetaDistribution& dist,
                                double noise_bound, std::size_t record_length, std::size_t rejection_window = 10000) {
    const Eigen::Index p = dist.mean.values().size();
    Eigen::SelfAdjointEigenSolver<Matrix> es(dist.covariance);
    const Matrix root =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    Rng rng(spec.base_seed + index);
    Scenario sc;
    sc.index = index;
    std::size_t attempts = 0;
    for (;;) {
        Vector z(p);
        for (Eigen::Index j = 0; j < p; ++j) z(j) = rng.normal();
        lti::ParameterVector candidate(Vector(dist.mean.values() + root * z));
        if (!dist.stability_filter || is_stable_theta(candidate)) {
            sc.theta = candidate;
            break;
        }
        if (++attempts >= rejection_window) {
            throw Error(ErrorKind::unstable,
                        "sample_scenarios: more than 99% of draws rejected as unstable; distribution is concentrated "
                        "on unstable systems");
        }
    }
    sc.noise.resize(record_length);
    for (auto& v : sc.noise) v = rng.uniform(-noise_bound, noise_bound);
    return sc;
}

inline std::vector<Scenario> sample_scenarios(const ScenarioSpec& spec, const ThetaDistribution& dist,
                                              double noise_bound, std::size_t record_length,
                                              std::size_t first_index = 0) {
    spec.validate();
    dist.validate();
    require(spec.N >= 1, "sample_scenarios: N must be set");
    require(noise_bound >= 0.0, "sample_scenarios: noise bound must be nonnegative");
    require(record_length > static_cast<std::size_t>(dist.mean.order()), "sample_scenarios: record too short");
    std::vector<Scenario> out;
    out.reserve(spec.N);
    for (std::size_t i = 0; i < spec.N; ++i) {
        out.push_back(sample_scenario(first_index + i, spec, dist, noise_bound, record_length));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-scenario alpha.

struct ScenarioEvaluation {
    double alpha = 1.0;
    double lambda_lb = 0.0;
    double lambda_hat_max = 0.0;
};

inline constexpr double kLambdaZero = 1e-10;

/// Runs the fictitious experiment and returns the smallest alpha >= 1 with
/// theta_i in Theta_i(alpha), clipped to M_cap.
inline ScenarioEvaluation evaluate_scenario(const Scenario& sc, const Signal& u, const Signal& init,
                                            double noise_bound, const sm::OmegaBox& omega, double M_cap = 1e6) {
    const int n = sc.theta.order();
    require(sc.noise.size() == u.size(), "scenario_alpha: noise and input lengths differ");
    require(M_cap > 1.0, "scenario_alpha: M_cap must exceed 1");
    signals::Dataset ds;
    ds.u = u;
    ds.n = n;
    ds.noise_bound = noise_bound;
    ds.y1 = lti::simulate(sc.theta, u, sc.noise, init);
    ds.y2 = ds.y1;
    const auto reg = signals::build_regressors(ds, 1);

    const double lambda_lb = sm::estimate_error_bound(reg, omega, noise_bound).lambda_lb;
    const Vector lambda_hat = (reg.target - reg.phi * sc.theta.values()).cwiseAbs().array() - noise_bound;
    const double worst = lambda_hat.maxCoeff();

    ScenarioEvaluation ev{1.0, lambda_lb, worst};
    if (lambda_lb > kLambdaZero) {
        ev.alpha = std::clamp(worst / lambda_lb, 1.0, M_cap);
    } else {
        ev.alpha = worst <= 0.0 ? 1.0 : M_cap;
    }
    return ev;
}

inline double scenario_alpha(const Scenario& sc, const Signal& u, const Signal& init, double noise_bound,
                             const sm::OmegaBox& omega, double M_cap = 1e6) {
    return evaluate_scenario(sc, u, init, noise_bound, omega, M_cap).alpha;
}

// ---------------------------------------------------------------------------
// Removal and validation.

struct ScenarioOutcome {
    std::vector<double> alphas;
    std::vector<std::size_t> removed;
    double alpha_star = 1.0;
};

/// Drops the p largest alphas (higher index first among ties) and returns the
/// largest remaining one.
inline ScenarioOutcome estimate_alpha(const std::vector<double>& alphas, std::size_t p, double M_cap = 1e6) {
    require(alphas.size() > p, "estimate_alpha: need more scenarios than discarded ones");
    std::vector<std::size_t> order(alphas.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (alphas[a] != alphas[b]) return alphas[a] > alphas[b];
        return a > b;
    });
    ScenarioOutcome out;
    out.alphas = alphas;
    out.removed.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(p));
    std::sort(out.removed.begin(), out.removed.end());
    out.alpha_star = alphas[order[p]];
    if (out.alpha_star >= M_cap) {
        throw Error(ErrorKind::infeasible,
                    "estimate_alpha: alpha* reached M_cap after removal; increase p or data quality");
    }
    return out;
}

inline std::vector<double> scenario_alphas(const std::vector<Scenario>& scenarios, const Signal& u,
                                           const Signal& init, double noise_bound, const sm::OmegaBox& omega,
                                           double M_cap = 1e6) {
    std::vector<double> out(scenarios.size());
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        out[i] = scenario_alpha(scenarios[i], u, init, noise_bound, omega, M_cap);
    }
    return out;
}

/// Fraction of fresh scenarios whose alpha exceeds alpha_star.
inline double validate_alpha(double alpha_star, const std::vector<Scenario>& fresh, const Signal& u,
                             const Signal& init, double noise_bound, const sm::OmegaBox& omega, double M_cap = 1e6,
                             std::vector<double>* fresh_alphas = nullptr) {
    require(!fresh.empty(), "validate_alpha: no validation scenarios");
    const auto alphas = scenario_alphas(fresh, u, init, noise_bound, omega, M_cap);
    const auto violations = std::count_if(alphas.begin(), alphas.end(), [&](double a) { return a > alpha_star; });
    if (fresh_alphas != nullptr) *fresh_alphas = alphas;
    return static_cast<double>(violations) / static_cast<double>(alphas.size());
}

// ---------------------------------------------------------------------------
// Full run on a dataset.

struct ScenarioRun {
    ScenarioSpec spec;
    ThetaDistribution distribution;
    ScenarioOutcome outcome;
    std::vector<double> validation_alphas;
    double violation_fraction = 0.0;
};

/// Algorithm steps 2-7 on output record y1, optionally followed by a
/// validation batch of `validation_count` fresh scenarios.
inline ScenarioRun run_scenario_method(ScenarioSpec spec, const signals::Dataset& ds, const sm::OmegaBox& omega,
                                       std::size_t validation_count = 0) {
    spec.validate();
    ds.validate();
    if (spec.N == 0) spec.N = min_sample_size(spec.epsilon, spec.beta, spec.p);
    spec.validate();

    ScenarioRun run;
    run.spec = spec;
    run.distribution = fit_theta_distribution(signals::build_regressors(ds, 1));
    const Signal init(ds.y1.begin(), ds.y1.begin() + ds.n);

    const auto batch = sample_scenarios(spec, run.distribution, ds.noise_bound, ds.samples());
    run.outcome = estimate_alpha(scenario_alphas(batch, ds.u, init, ds.noise_bound, omega, spec.M_cap), spec.p,
                                 spec.M_cap);
    if (validation_count > 0) {
        ScenarioSpec fresh = spec;
        fresh.N = validation_count;
        const auto vbatch = sample_scenarios(fresh, run.distribution, ds.noise_bound, ds.samples(), spec.N);
        run.violation_fraction = validate_alpha(run.outcome.alpha_star, vbatch, ds.u, init, ds.noise_bound, omega,
                                                spec.M_cap, &run.validation_alphas);
    }
    return run;
}

inline nlohmann::json to_json(const ScenarioRun& run) {
    nlohmann::json j;
    j["epsilon"] = run.spec.epsilon;
    j["beta"] = run.spec.beta;
    j["p"] = run.spec.p;
    j["N"] = run.spec.N;
    j["M_cap"] = run.spec.M_cap;
    j["base_seed"] = run.spec.base_seed;
    j["alphas"] = run.outcome.alphas;
    j["removed"] = run.outcome.removed;
    j["alpha_star"] = run.outcome.alpha_star;
    j["theta_mean"] = std::vector<double>(run.distribution.mean.values().begin(), run.distribution.mean.values().end());
    j["validation_alphas"] = run.validation_alphas;
    j["violation_fraction"] = run.violation_fraction;
    return j;
}

inline ScenarioRun scenario_run_from_json(const nlohmann::json& j) {
    try {
        ScenarioRun run;
        run.spec.epsilon = j.at("epsilon").get<double>();
        run.spec.beta = j.at("beta").get<double>();
        run.spec.p = j.at("p").get<std::size_t>();
        run.spec.N = j.at("N").get<std::size_t>();
        run.spec.M_cap = j.at("M_cap").get<double>();
        run.spec.base_seed = j.at("base_seed").get<std::uint64_t>();
        run.outcome.alphas = j.at("alphas").get<std::vector<double>>();
        run.outcome.removed = j.at("removed").get<std::vector<std::size_t>>();
        run.outcome.alpha_star = j.at("alpha_star").get<double>();
        const auto mean = j.at("theta_mean").get<std::vector<double>>();
        run.distribution.mean = lti::ParameterVector(Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size())));
        run.validation_alphas = j.value("validation_alphas", std::vector<double>{});
        run.violation_fraction = j.value("violation_fraction", 0.0);
        run.spec.validate();
        return run;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::input, std::string("scenario report: ") + e.what());
    }
}

}  // namespace smvrft::scenario
