#pragma once

// State feedback with static feedforward: u = f_K ybar + K x, f_K = rho - K f.

#include "smvrft/common.hpp"
#include "smvrft/conic.hpp"
#include "smvrft/lti.hpp"
#include "smvrft/signals.hpp"
#include "smvrft/sm.hpp"
#include "smvrft/synth.hpp"

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace smvrft::synth {

/// f = [1 (n times), rho (n-1 times)].
inline Vector steady_direction(int n, double rho) {
    Vector f(2 * n - 1);
    f.head(n).setOnes();
    f.tail(n - 1).setConstant(rho);
    return f;
}

/// Least-squares static gain sum(b) / (1 - sum(a)) from output record y1.
inline double estimate_static_gain(const signals::Dataset& ds) {
    const auto reg = signals::build_regressors(ds, 1);
    Eigen::ColPivHouseholderQR<Matrix> qr(reg.phi);
    if (qr.rank() < reg.phi.cols()) {
        throw Error(ErrorKind::numerical, "estimate_static_gain: regressor matrix is rank deficient");
    }
    return lti::ParameterVector(Vector(qr.solve(reg.target))).static_gain();
}

struct VrftDataFF {
    Vector R;
    Matrix Q;
    double constant = 0.0;
    double rho = 1.0;
    Vector f;
    std::size_t rows = 0;
    double min_eigenvalue = 0.0;
    double condition = 1.0;
};

namespace detail {

/// First data row kept: pairs k = 0 .. n-1 carry filter transients.
inline std::size_t first_row(int n) { return static_cast<std::size_t>(n); }

/// Sample index of pair k in a record starting at k = -n+1.
inline std::size_t sample(int n, std::size_t k) { return k + static_cast<std::size_t>(n) - 1; }

inline Signal filtered(const lti::TransferFunction& F, const Signal& x) { return lti::filter_signal(F, x).values; }

/// x(k) = [y(k) .. y(k-n+1), u(k-1) .. u(k-n+1)] read from sample index i,
/// with zeros before the record.
inline RowVector state_row(const Signal& y, const Signal& u, int n, std::size_t i) {
    RowVector x(2 * n - 1);
    for (int j = 0; j < n; ++j) {
        x(j) = i >= static_cast<std::size_t>(j) ? y[i - static_cast<std::size_t>(j)] : 0.0;
    }
    for (int j = 0; j < n - 1; ++j) {
        const auto lag = static_cast<std::size_t>(j) + 1;
        x(n + j) = i >= lag ? u[i - lag] : 0.0;
    }
    return x;
}

inline void check_positive_definite(const Matrix& Q, double& min_eig, double& condition, const std::string& what) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(Q, Eigen::EigenvaluesOnly);
    min_eig = es.eigenvalues().minCoeff();
    const double max_eig = es.eigenvalues().maxCoeff();
    condition = min_eig > 0.0 ? max_eig / min_eig : conic::kInf;
    if (!(min_eig > 1e-12 * std::max(1.0, max_eig))) {
        std::ostringstream os;
        os << what << " is not positive definite (min eigenvalue " << min_eig << ", max " << max_eig
           << "); the data are not exciting enough";
        throw Error(ErrorKind::numerical, os.str());
    }
}

}  // namespace detail

inline VrftDataFF build_ff_data(const signals::Dataset& ds, const lti::TransferFunction& M,
                                const lti::TransferFunction& F, double mu) {
    ds.validate();
    require(std::isfinite(mu) && mu != 0.0, "build_ff_data: static gain must be nonzero");
    const int n = ds.n;
    const std::size_t nd = ds.horizon();
    const std::size_t k0 = detail::first_row(n);
    require(nd > k0 + 1, "build_ff_data: record too short");

    VrftDataFF data;
    data.rho = 1.0 / mu;
    data.f = steady_direction(n, data.rho);
    data.rows = nd - k0;
    const auto T = static_cast<Eigen::Index>(data.rows);
    const Eigen::Index m = 2 * n - 1;

    const Signal uF = detail::filtered(F, ds.u);
    Matrix X[2];
    Vector U[2];
    for (int e = 0; e < 2; ++e) {
        const Signal& y = ds.output(e + 1);
        const Signal rF = detail::filtered(F, signals::virtual_reference(M, y));
        const Signal yF = detail::filtered(F, y);
        X[e].resize(T, m);
        U[e].resize(T);
        for (std::size_t k = k0; k < nd; ++k) {
            const std::size_t i = detail::sample(n, k);
            const auto row = static_cast<Eigen::Index>(k - k0);
            U[e](row) = uF[i] - data.rho * rF[i];
            X[e].row(row) = detail::state_row(yF, uF, n, i) - data.f.transpose() * rF[i];
        }
    }
    const double scale = 1.0 / (2.0 * static_cast<double>(T));
    data.R = scale * (X[0].transpose() * U[1] + X[1].transpose() * U[0]);
    data.Q = scale * (X[0].transpose() * X[1] + X[1].transpose() * X[0]);
    data.Q = 0.5 * (data.Q + data.Q.transpose());
    data.constant = 2.0 * scale * U[0].dot(U[1]);
    detail::check_positive_definite(data.Q, data.min_eigenvalue, data.condition, "build_ff_data: Q");
    return data;
}

/// const + K Q K' - 2 K R.
inline double quadratic_cost(const VrftDataFF& data, const RowVector& K) {
    return data.constant + (K * data.Q * K.transpose()).value() - 2.0 * (K * data.R).value();
}

/// Direct evaluation: filter u - uhat_i for each record and average the
/// cross products over the kept pairs.
inline double vrft_cost_ff(const RowVector& K, const signals::Dataset& ds, const lti::TransferFunction& M,
                           const lti::TransferFunction& F, double mu) {
    ds.validate();
    const int n = ds.n;
    require(K.size() == 2 * n - 1, "vrft_cost_ff: gain has the wrong size");
    const double rho = 1.0 / mu;
    const double fK = rho - (K * steady_direction(n, rho)).value();
    const std::size_t nd = ds.horizon();
    const std::size_t k0 = detail::first_row(n);

    Signal err[2];
    for (int e = 0; e < 2; ++e) {
        const Signal& y = ds.output(e + 1);
        const Signal r = signals::virtual_reference(M, y);
        Signal residual(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            residual[i] = ds.u[i] - fK * r[i] - (K * detail::state_row(y, ds.u, n, i).transpose()).value();
        }
        err[e] = detail::filtered(F, residual);
    }
    double acc = 0.0;
    for (std::size_t k = k0; k < nd; ++k) {
        const std::size_t i = detail::sample(n, k);
        acc += err[0][i] * err[1][i];
    }
    return acc / static_cast<double>(nd - k0);
}

// ---------------------------------------------------------------------------

struct FFController {
    RowVector K;
    double f_K = 0.0;
    double rho = 1.0;
    std::string dataset_hash;
    std::string fps_hash;

    int order() const { return static_cast<int>((K.size() + 1) / 2); }
};

inline std::vector<PlantVertex> plant_vertices(const std::vector<lti::ParameterVector>& thetas) {
    std::vector<PlantVertex> out;
    out.reserve(thetas.size());
    for (const auto& t : thetas) {
        const auto ss = lti::theta_to_state_space(t);
        out.push_back({ss.A, ss.B});
    }
    return out;
}

inline SynthesisProgram assemble_ff_sdp(const VrftDataFF& data, const std::vector<PlantVertex>& vertices,
                                        const SynthesisConfig& cfg) {
    require(data.Q.rows() == data.R.size(), "assemble_ff_sdp: Q and R dimensions differ");
    const Vector v = data.Q.ldlt().solve(data.R);
    return assemble_vrft_sdp(v, data.Q, vertices, cfg);
}

inline FFController extract_ff_controller(const GainSolution& sol, const VrftDataFF& data) {
    FFController c;
    c.K = sol.gain;
    c.rho = data.rho;
    c.f_K = data.rho - (c.K * data.f).value();
    return c;
}

struct FFSynthesis {
    FFController controller;
    GainSolution solution;
    SynthesisProgram program;
    conic::SolveReport report;
    VrftDataFF data;
    lti::TransferFunction filter;
};

inline FFSynthesis synthesize_ff(const signals::Dataset& ds, const std::vector<lti::ParameterVector>& vertices,
                                 double mu, const SynthesisConfig& cfg) {
    FFSynthesis out;
    out.filter = design_filter(cfg, ds);
    out.data = build_ff_data(ds, cfg.M, out.filter, mu);
    const auto plants = plant_vertices(vertices);
    auto solved = solve_synthesis([&](const SynthesisConfig& c) { return assemble_ff_sdp(out.data, plants, c); }, cfg);
    out.program = std::move(solved.program);
    out.report = std::move(solved.report);
    out.solution = std::move(solved.solution);
    out.controller = extract_ff_controller(out.solution, out.data);
    return out;
}

// ---------------------------------------------------------------------------
// Records.

inline std::string to_record(const FFController& c) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "ff_controller 1\nn " << c.order() << "\nK";
    for (Eigen::Index j = 0; j < c.K.size(); ++j) os << ' ' << c.K(j);
    os << "\nf_K " << c.f_K << "\nrho " << c.rho << "\ndataset_hash " << (c.dataset_hash.empty() ? "-" : c.dataset_hash)
       << "\nfps_hash " << (c.fps_hash.empty() ? "-" : c.fps_hash) << '\n';
    return os.str();
}

namespace detail {

class RecordReader {
public:
    RecordReader(const std::string& text, std::string what) : is_(text), what_(std::move(what)) {}

    void expect(const std::string& key) {
        std::string got;
        if (!(is_ >> got) || got != key) fail("expected '" + key + "'");
    }

    template <class T>
    T read(const std::string& key) {
        expect(key);
        return value<T>(key);
    }

    template <class T>
    T value(const std::string& key) {
        T v{};
        if (!(is_ >> v)) fail("bad value for '" + key + "'");
        return v;
    }

    [[noreturn]] void fail(const std::string& msg) const { throw Error(ErrorKind::input, what_ + ": " + msg); }

private:
    std::istringstream is_;
    std::string what_;
};

inline std::string hash_field(std::string s) { return s == "-" ? std::string{} : s; }

}  // namespace detail

inline FFController ff_controller_from_record(const std::string& text) {
    detail::RecordReader in(text, "ff controller record");
    if (in.read<int>("ff_controller") != 1) in.fail("unsupported version");
    const int n = in.read<int>("n");
    if (n < 1) in.fail("order must be positive");
    FFController c;
    in.expect("K");
    c.K.resize(2 * n - 1);
    for (Eigen::Index j = 0; j < c.K.size(); ++j) c.K(j) = in.value<double>("K");
    c.f_K = in.read<double>("f_K");
    c.rho = in.read<double>("rho");
    c.dataset_hash = detail::hash_field(in.read<std::string>("dataset_hash"));
    c.fps_hash = detail::hash_field(in.read<std::string>("fps_hash"));
    return c;
}

}  // namespace smvrft::synth
