#pragma once

// State feedback with explicit integral action:
// eta(k+1) = eta(k) + e(k), u = K x + g (eta + e).

#include "smvrft/common.hpp"
#include "smvrft/conic.hpp"
#include "smvrft/lti.hpp"
#include "smvrft/signals.hpp"
#include "smvrft/synth.hpp"
#include "smvrft/synth_ff.hpp"

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace smvrft::synth {

/// E = [[I, 0], [-C, 1]] with C = [1 0 .. 0].
inline Matrix integral_transform(int n) {
    const Eigen::Index m = 2 * n - 1;
    Matrix E = Matrix::Identity(m + 1, m + 1);
    E(m, 0) = -1.0;
    return E;
}

inline Matrix integral_transform_inverse(int n) {
    const Eigen::Index m = 2 * n - 1;
    Matrix Ei = Matrix::Identity(m + 1, m + 1);
    Ei(m, 0) = 1.0;
    return Ei;
}

struct VrftDataEI {
    Vector R;     // raw
    Matrix Q;     // raw
    Vector Rcal;  // E^-1 R
    Matrix Qcal;  // E^-1 Q E^-T
    Matrix E;
    double constant = 0.0;
    std::size_t rows = 0;
    double min_eigenvalue = 0.0;
    double condition = 1.0;
};

namespace detail {

/// D(q) = 1 - q^-1 with a zero sample before the record.
inline Signal difference(const Signal& x) {
    Signal d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - (i > 0 ? x[i - 1] : 0.0);
    return d;
}

}  // namespace detail

inline VrftDataEI build_ei_data(const signals::Dataset& ds, const lti::TransferFunction& M,
                                const lti::TransferFunction& F) {
    ds.validate();
    const int n = ds.n;
    const std::size_t nd = ds.horizon();
    const std::size_t k0 = detail::first_row(n);
    require(nd > k0 + 1, "build_ei_data: record too short");
    const Eigen::Index m = 2 * n;

    VrftDataEI data;
    data.rows = nd - k0;
    const auto T = static_cast<Eigen::Index>(data.rows);
    const Signal uDF = detail::difference(detail::filtered(F, ds.u));

    Matrix X[2];
    Vector U(T);
    for (int e = 0; e < 2; ++e) {
        const Signal& y = ds.output(e + 1);
        const Signal r = signals::virtual_reference(M, y);
        const Signal eF = detail::filtered(F, signals::virtual_error(r, Signal(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(r.size()))));
        const Signal yDF = detail::difference(detail::filtered(F, y));
        X[e].resize(T, m);
        for (std::size_t k = k0; k < nd; ++k) {
            const std::size_t i = detail::sample(n, k);
            const auto row = static_cast<Eigen::Index>(k - k0);
            X[e].row(row).head(m - 1) = detail::state_row(yDF, uDF, n, i);
            X[e](row, m - 1) = eF[i];
            U(row) = uDF[i];
        }
    }
    const double scale = 1.0 / (2.0 * static_cast<double>(T));
    data.R = scale * (X[0] + X[1]).transpose() * U;
    data.Q = scale * (X[0].transpose() * X[1] + X[1].transpose() * X[0]);
    data.Q = 0.5 * (data.Q + data.Q.transpose());
    data.constant = U.squaredNorm() / static_cast<double>(T);
    data.E = integral_transform(n);
    const Matrix Ei = integral_transform_inverse(n);
    data.Rcal = Ei * data.R;
    data.Qcal = Ei * data.Q * Ei.transpose();
    data.Qcal = 0.5 * (data.Qcal + data.Qcal.transpose());
    detail::check_positive_definite(data.Qcal, data.min_eigenvalue, data.condition, "build_ei_data: Qcal");
    return data;
}

/// const + [K g] Q [K g]' - 2 [K g] R.
inline double quadratic_cost(const VrftDataEI& data, const RowVector& Kg) {
    return data.constant + (Kg * data.Q * Kg.transpose()).value() - 2.0 * (Kg * data.R).value();
}

/// Direct evaluation of u - uhat_i = D u - D K x_i - g e_i, filtered by F.
inline double vrft_cost_ei(const RowVector& K, double g, const signals::Dataset& ds, const lti::TransferFunction& M,
                           const lti::TransferFunction& F) {
    ds.validate();
    const int n = ds.n;
    require(K.size() == 2 * n - 1, "vrft_cost_ei: gain has the wrong size");
    const std::size_t nd = ds.horizon();
    const std::size_t k0 = detail::first_row(n);
    const Signal Du = detail::difference(ds.u);

    Signal err[2];
    for (int e = 0; e < 2; ++e) {
        const Signal& y = ds.output(e + 1);
        const Signal r = signals::virtual_reference(M, y);
        const Signal Dy = detail::difference(y);
        Signal residual(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            const double etilde = r[i] - y[i];
            residual[i] = Du[i] - (K * detail::state_row(Dy, Du, n, i).transpose()).value() - g * etilde;
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

struct EIController {
    RowVector K;
    double g = 0.0;
    std::string dataset_hash;
    std::string fps_hash;

    int order() const { return static_cast<int>((K.size() + 1) / 2); }

    /// J = [K - g C, g].
    RowVector closed_loop_gain() const {
        RowVector J(K.size() + 1);
        J.head(K.size()) = K;
        J(0) -= g;
        J(K.size()) = g;
        return J;
    }
};

inline std::vector<PlantVertex> augmented_vertices(const std::vector<lti::ParameterVector>& thetas) {
    std::vector<PlantVertex> out;
    out.reserve(thetas.size());
    for (const auto& t : thetas) {
        const auto aug = lti::augment_integrator(lti::theta_to_state_space(t));
        out.push_back({aug.A, aug.B});
    }
    return out;
}

inline SynthesisProgram assemble_ei_sdp(const VrftDataEI& data, const std::vector<PlantVertex>& vertices,
                                        const SynthesisConfig& cfg) {
    require(data.Qcal.rows() == data.Rcal.size(), "assemble_ei_sdp: Q and R dimensions differ");
    const Vector v = data.Qcal.ldlt().solve(data.Rcal);
    return assemble_vrft_sdp(v, data.Qcal, vertices, cfg);
}

/// Same program built from the raw (R, Q) through E: Qcal^-1 Rcal = E' Q^-1 R.
inline SynthesisProgram assemble_ei_sdp_raw(const VrftDataEI& data, const std::vector<PlantVertex>& vertices,
                                            const SynthesisConfig& cfg) {
    const Vector v = data.E.transpose() * data.Q.ldlt().solve(data.R);
    const Eigen::Index m = data.E.rows();
    const Matrix Ei = data.E.fullPivLu().solve(Matrix::Identity(m, m));
    return assemble_vrft_sdp(v, Ei * data.Q * Ei.transpose(), vertices, cfg);
}

/// [K g] = J E^-1.
inline EIController extract_ei_controller(const GainSolution& sol) {
    const auto m = sol.gain.size();
    require(m >= 2, "extract_ei_controller: gain too short");
    const int n = static_cast<int>(m / 2);
    const RowVector Kg = sol.gain * integral_transform_inverse(n);
    EIController c;
    c.K = Kg.head(m - 1);
    c.g = Kg(m - 1);
    return c;
}

struct EISynthesis {
    EIController controller;
    GainSolution solution;
    SynthesisProgram program;
    conic::SolveReport report;
    VrftDataEI data;
    lti::TransferFunction filter;
};

inline EISynthesis synthesize_ei(const signals::Dataset& ds, const std::vector<lti::ParameterVector>& vertices,
                                 const SynthesisConfig& cfg) {
    EISynthesis out;
    out.filter = design_filter(cfg, ds);
    out.data = build_ei_data(ds, cfg.M, out.filter);
    const auto plants = augmented_vertices(vertices);
    auto solved = solve_synthesis([&](const SynthesisConfig& c) { return assemble_ei_sdp(out.data, plants, c); }, cfg);
    out.program = std::move(solved.program);
    out.report = std::move(solved.report);
    out.solution = std::move(solved.solution);
    out.controller = extract_ei_controller(out.solution);
    return out;
}

inline std::string to_record(const EIController& c) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "ei_controller 1\nn " << c.order() << "\nK";
    for (Eigen::Index j = 0; j < c.K.size(); ++j) os << ' ' << c.K(j);
    os << "\ng " << c.g << "\ndataset_hash " << (c.dataset_hash.empty() ? "-" : c.dataset_hash) << "\nfps_hash "
       << (c.fps_hash.empty() ? "-" : c.fps_hash) << '\n';
    return os.str();
}

inline EIController ei_controller_from_record(const std::string& text) {
    detail::RecordReader in(text, "ei controller record");
    if (in.read<int>("ei_controller") != 1) in.fail("unsupported version");
    const int n = in.read<int>("n");
    if (n < 1) in.fail("order must be positive");
    EIController c;
    in.expect("K");
    c.K.resize(2 * n - 1);
    for (Eigen::Index j = 0; j < c.K.size(); ++j) c.K(j) = in.value<double>("K");
    c.g = in.read<double>("g");
    c.dataset_hash = detail::hash_field(in.read<std::string>("dataset_hash"));
    c.fps_hash = detail::hash_field(in.read<std::string>("fps_hash"));
    return c;
}

}  // namespace smvrft::synth
