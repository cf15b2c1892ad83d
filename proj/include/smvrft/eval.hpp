#pragma once

// Closed-loop evaluation: reference profiles, simulation of both control
// laws, FIT index, robust stability audit and Bode comparison.

#include "smvrft/common.hpp"
#include "smvrft/lti.hpp"
#include "smvrft/random.hpp"
#include "smvrft/sm.hpp"
#include "smvrft/synth_ei.hpp"
#include "smvrft/synth_ff.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace smvrft::eval {

struct Segment {
    double value = 0.0;
    double start = 0.0;
    double end = 0.0;
};

/// Piecewise-constant setpoint; the last interval is closed.
struct ReferenceProfile {
    std::vector<Segment> segments;
    double Ts = 0.125;

    void validate() const {
        require(!segments.empty(), "ReferenceProfile: no segments");
        require(Ts > 0.0, "ReferenceProfile: sample time must be positive");
        for (std::size_t i = 0; i < segments.size(); ++i) {
            require(segments[i].end > segments[i].start, "ReferenceProfile: empty interval");
            if (i > 0) {
                require(std::abs(segments[i].start - segments[i - 1].end) < 1e-12,
                        "ReferenceProfile: intervals must be contiguous");
            }
        }
    }

    std::size_t samples() const {
        return static_cast<std::size_t>(std::floor((segments.back().end - segments.front().start) / Ts + 1e-9)) + 1;
    }

    Signal sequence() const {
        validate();
        Signal out(samples());
        std::size_t seg = 0;
        for (std::size_t k = 0; k < out.size(); ++k) {
            const double t = segments.front().start + static_cast<double>(k) * Ts;
            while (seg + 1 < segments.size() && t >= segments[seg].end - 1e-9) ++seg;
            out[k] = segments[seg].value;
        }
        return out;
    }

    /// Reference values 0, 8, -6, 10, -3 on intervals of `width` seconds.
    static ReferenceProfile table(double Ts = 0.125, double width = 6.5) {
        ReferenceProfile p;
        p.Ts = Ts;
        const double values[] = {0.0, 8.0, -6.0, 10.0, -3.0};
        for (int i = 0; i < 5; ++i) p.segments.push_back({values[i], i * width, (i + 1) * width});
        return p;
    }

    static ReferenceProfile constant(double value, std::size_t samples, double Ts = 0.125) {
        ReferenceProfile p;
        p.Ts = Ts;
        p.segments.push_back({value, 0.0, static_cast<double>(samples - 1) * Ts});
        return p;
    }
};

inline double fit_index(const Signal& yr, const Signal& y) {
    require(yr.size() == y.size() && !yr.empty(), "fit_index: sequences must have equal nonzero length");
    double mean = 0.0;
    for (double v : yr) mean += v;
    mean /= static_cast<double>(yr.size());
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < yr.size(); ++i) {
        num += (yr[i] - y[i]) * (yr[i] - y[i]);
        den += (yr[i] - mean) * (yr[i] - mean);
    }
    require(den > 0.0, "fit_index: reference model output is constant");
    return 100.0 * (1.0 - std::sqrt(num) / std::sqrt(den));
}

struct ClosedLoopReport {
    Signal ref;
    Signal y;
    Signal u;
    Signal e;
    Signal yr;  // reference model response
    double fit = 0.0;
    bool unstable = false;
    double radius_true = 0.0;
    double radius_vertices = 0.0;
    double steady_error = 0.0;  // |e| at the last sample
    double Ts = 0.125;
};

struct SimulationOptions {
    double noise_bound = 0.0;
    std::uint64_t seed = 1;
    double output_disturbance = 0.0;
    double divergence = 1e9;
};

namespace detail {

/// Plant z(k+1) = theta' phi(k) driven by a causal control law; the law sees
/// y = z + d + disturbance through the state of measured outputs and past
/// inputs. `law(x, ref, e)` returns u.
template <class Law>
ClosedLoopReport run_loop(const lti::ParameterVector& plant, const Signal& ref, const SimulationOptions& opt,
                          Law&& law) {
    const int n = plant.order();
    const std::size_t N = ref.size();
    const Vector& t = plant.values();
    ClosedLoopReport rep;
    rep.ref = ref;
    rep.y.assign(N, 0.0);
    rep.u.assign(N, 0.0);
    rep.e.assign(N, 0.0);

    Rng rng(opt.seed);
    Signal z(N + 1, 0.0);
    for (std::size_t k = 0; k < N; ++k) {
        const double d = opt.noise_bound > 0.0 ? rng.uniform(-opt.noise_bound, opt.noise_bound) : 0.0;
        rep.y[k] = z[k] + d + opt.output_disturbance;
        rep.e[k] = ref[k] - rep.y[k];
        RowVector x(2 * n - 1);
        for (int j = 0; j < n; ++j) x(j) = k >= static_cast<std::size_t>(j) ? rep.y[k - static_cast<std::size_t>(j)] : 0.0;
        for (int j = 0; j < n - 1; ++j) {
            const auto lag = static_cast<std::size_t>(j) + 1;
            x(n + j) = k >= lag ? rep.u[k - lag] : 0.0;
        }
        rep.u[k] = law(x, ref[k], rep.e[k]);

        double next = 0.0;
        for (int j = 0; j < n; ++j) {
            const auto lag = static_cast<std::size_t>(j);
            if (k >= lag) next += t(j) * z[k - lag] + t(n + j) * rep.u[k - lag];
        }
        z[k + 1] = next;
        if (!std::isfinite(rep.y[k]) || std::abs(rep.y[k]) > opt.divergence || !std::isfinite(next) ||
            std::abs(next) > opt.divergence) {
            rep.unstable = true;
            rep.y.resize(k + 1);
            rep.u.resize(k + 1);
            rep.e.resize(k + 1);
            rep.ref.resize(k + 1);
            break;
        }
    }
    rep.steady_error = std::abs(rep.e.back());
    return rep;
}

inline void finish(ClosedLoopReport& rep, const lti::TransferFunction& M, double Ts) {
    rep.Ts = Ts;
    rep.yr = lti::filter_signal(M, rep.ref).values;
    if (rep.unstable) {
        rep.fit = -conic::kInf;
        return;
    }
    double lo = *std::min_element(rep.yr.begin(), rep.yr.end());
    double hi = *std::max_element(rep.yr.begin(), rep.yr.end());
    rep.fit = hi > lo ? fit_index(rep.yr, rep.y) : 0.0;
}

}  // namespace detail

inline ClosedLoopReport simulate_closed_loop_ff(const lti::ParameterVector& plant, const synth::FFController& ctrl,
                                                const ReferenceProfile& profile, const lti::TransferFunction& M,
                                                const SimulationOptions& opt = {}) {
    require(ctrl.K.size() == 2 * plant.order() - 1, "simulate_closed_loop_ff: controller and plant orders differ");
    auto rep = detail::run_loop(plant, profile.sequence(), opt, [&](const RowVector& x, double ref, double) {
        return ctrl.f_K * ref + (ctrl.K * x.transpose()).value();
    });
    const auto ss = lti::theta_to_state_space(plant);
    rep.radius_true = lti::spectral_radius(ss.A + ss.B * ctrl.K);
    detail::finish(rep, M, profile.Ts);
    return rep;
}

inline ClosedLoopReport simulate_closed_loop_ei(const lti::ParameterVector& plant, const synth::EIController& ctrl,
                                                const ReferenceProfile& profile, const lti::TransferFunction& M,
                                                const SimulationOptions& opt = {}) {
    require(ctrl.K.size() == 2 * plant.order() - 1, "simulate_closed_loop_ei: controller and plant orders differ");
    double eta = 0.0;
    auto rep = detail::run_loop(plant, profile.sequence(), opt, [&](const RowVector& x, double, double e) {
        const double u = (ctrl.K * x.transpose()).value() + ctrl.g * (eta + e);
        eta += e;
        return u;
    });
    const auto aug = lti::augment_integrator(lti::theta_to_state_space(plant));
    rep.radius_true = lti::spectral_radius(aug.A + aug.B * ctrl.closed_loop_gain());
    detail::finish(rep, M, profile.Ts);
    return rep;
}

// ---------------------------------------------------------------------------

inline Matrix closed_loop_matrix(const lti::ParameterVector& theta, const synth::FFController& c) {
    const auto ss = lti::theta_to_state_space(theta);
    return ss.A + ss.B * c.K;
}

inline Matrix closed_loop_matrix(const lti::ParameterVector& theta, const synth::EIController& c) {
    const auto aug = lti::augment_integrator(lti::theta_to_state_space(theta));
    return aug.A + aug.B * c.closed_loop_gain();
}

struct StabilityAudit {
    std::vector<double> vertex_radii;
    std::vector<double> combination_radii;
    double max_radius = 0.0;
};

/// Radii at every vertex plus `combinations` Dirichlet(1) mixtures.
template <class Controller>
StabilityAudit robust_stability_check(const Controller& ctrl, const std::vector<lti::ParameterVector>& vertices,
                                      std::size_t combinations = 100, std::uint64_t seed = 1) {
    require(!vertices.empty(), "robust_stability_check: no vertices");
    StabilityAudit audit;
    for (const auto& v : vertices) audit.vertex_radii.push_back(lti::spectral_radius(closed_loop_matrix(v, ctrl)));
    Rng rng(seed);
    const auto p = vertices.front().values().size();
    for (std::size_t c = 0; c < combinations; ++c) {
        Vector w(static_cast<Eigen::Index>(vertices.size()));
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.exponential();
        w /= w.sum();
        Vector theta = Vector::Zero(p);
        for (std::size_t i = 0; i < vertices.size(); ++i) theta += w(static_cast<Eigen::Index>(i)) * vertices[i].values();
        audit.combination_radii.push_back(lti::spectral_radius(closed_loop_matrix(lti::ParameterVector(theta), ctrl)));
    }
    audit.max_radius = std::max(*std::max_element(audit.vertex_radii.begin(), audit.vertex_radii.end()),
                                audit.combination_radii.empty()
                                    ? 0.0
                                    : *std::max_element(audit.combination_radii.begin(), audit.combination_radii.end()));
    return audit;
}

template <class Controller>
StabilityAudit robust_stability_check(const Controller& ctrl, const sm::FeasibleParameterSet& fps,
                                      std::size_t combinations = 100, std::uint64_t seed = 1) {
    require(!fps.vertices.empty(), "robust_stability_check: FPS has no vertex representation");
    return robust_stability_check(ctrl, fps.vertices, combinations, seed);
}

// ---------------------------------------------------------------------------

struct BodeTable {
    std::vector<double> omega;
    std::vector<double> loop_magnitude;
    std::vector<double> loop_phase;
    std::vector<double> model_magnitude;
    std::vector<double> model_phase;
};

/// ybar -> y of the closed loop: (A_cl, b, c) realisation.
struct LoopRealisation {
    Matrix A;
    Vector b;
    RowVector c;
};

inline LoopRealisation loop_realisation(const lti::ParameterVector& plant, const synth::FFController& ctrl) {
    const auto ss = lti::theta_to_state_space(plant);
    return {Matrix(ss.A + ss.B * ctrl.K), Vector(ss.B * ctrl.f_K), ss.C};
}

inline LoopRealisation loop_realisation(const lti::ParameterVector& plant, const synth::EIController& ctrl) {
    const auto ss = lti::theta_to_state_space(plant);
    const auto aug = lti::augment_integrator(ss);
    const Eigen::Index m = ss.dimension();
    LoopRealisation r{Matrix(aug.A + aug.B * ctrl.closed_loop_gain()), Vector::Zero(m + 1), RowVector::Zero(m + 1)};
    r.b.head(m) = ctrl.g * ss.B;
    r.b(m) = 1.0;
    r.c.head(m) = ss.C;
    return r;
}

inline std::complex<double> loop_response(const LoopRealisation& r, double omega) {
    const Eigen::Index m = r.A.rows();
    const Eigen::MatrixXcd zI = std::polar(1.0, omega) * Eigen::MatrixXcd::Identity(m, m);
    const Eigen::VectorXcd s = (zI - r.A.cast<std::complex<double>>()).partialPivLu().solve(r.b.cast<std::complex<double>>());
    return (r.c.cast<std::complex<double>>() * s).value();
}

template <class Controller>
BodeTable bode_comparison(const Controller& ctrl, const lti::ParameterVector& plant, const lti::TransferFunction& M,
                          const std::vector<double>& grid) {
    const auto r = loop_realisation(plant, ctrl);
    if (lti::spectral_radius(r.A) >= 1.0) {
        throw Error(ErrorKind::unstable, "bode_comparison: closed loop is not asymptotically stable");
    }
    BodeTable t;
    t.omega = grid;
    for (double w : grid) {
        const auto h = loop_response(r, w);
        const auto mh = lti::evaluate(M, w);
        t.loop_magnitude.push_back(std::abs(h));
        t.loop_phase.push_back(std::arg(h));
        t.model_magnitude.push_back(std::abs(mh));
        t.model_phase.push_back(std::arg(mh));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Emitters.

inline std::string trajectories_csv(const ClosedLoopReport& rep) {
    std::ostringstream os;
    os << std::setprecision(12) << "k,t,ref,y,u,e\n";
    for (std::size_t k = 0; k < rep.y.size(); ++k) {
        os << k << ',' << static_cast<double>(k) * rep.Ts << ',' << rep.ref[k] << ',' << rep.y[k] << ',' << rep.u[k]
           << ',' << rep.e[k] << '\n';
    }
    return os.str();
}

inline std::string bode_csv(const BodeTable& t) {
    std::ostringstream os;
    os << std::setprecision(12) << "omega,loop_mag,loop_phase,model_mag,model_phase\n";
    for (std::size_t i = 0; i < t.omega.size(); ++i) {
        os << t.omega[i] << ',' << t.loop_magnitude[i] << ',' << t.loop_phase[i] << ',' << t.model_magnitude[i] << ','
           << t.model_phase[i] << '\n';
    }
    return os.str();
}

inline nlohmann::json summary_json(const ClosedLoopReport& rep) {
    nlohmann::json j;
    j["fit"] = rep.unstable ? nlohmann::json(nullptr) : nlohmann::json(rep.fit);
    j["unstable"] = rep.unstable;
    j["radius_true"] = rep.radius_true;
    j["radius_vertices"] = rep.radius_vertices;
    j["steady_error"] = rep.steady_error;
    j["samples"] = rep.y.size();
    j["Ts"] = rep.Ts;
    return j;
}

}  // namespace smvrft::eval
