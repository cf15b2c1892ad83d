#pragma once

// Shared pieces of the VRFT synthesis problems: prefilter design and the
// LMI program min sigma + c lambda_g over the VRFT Schur block, the G
// relaxation pair and one robust stability block per vertex.

#include "smvrft/common.hpp"
#include "smvrft/conic.hpp"
#include "smvrft/lti.hpp"
#include "smvrft/signals.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace smvrft::synth {

enum class GammaMode { fixed, free };

struct SynthesisConfig {
    double c = 1e6;
    GammaMode gamma_mode = GammaMode::free;
    double gamma = 1e-6;  // floor when free, value when fixed
    double strict_margin = -1.0;  // negative: scaled default of the conic layer
    lti::TransferFunction M = lti::TransferFunction::first_order(-0.855, 0.145);
    lti::TransferFunction W = lti::TransferFunction::gain(1.0);
    bool filter_enabled = true;
    int ar_order = 5;
    conic::SdpOptions sdp;

    void validate() const {
        require(c > 0.0, "SynthesisConfig: c must be positive");
        require(gamma > 0.0, "SynthesisConfig: gamma must be positive");
        require(ar_order >= 0, "SynthesisConfig: AR order must be nonnegative");
    }
};

/// F = M^2 W / Z.
inline lti::TransferFunction design_filter(const lti::TransferFunction& M, const lti::TransferFunction& W,
                                           const lti::TransferFunction& Z) {
    require(M.is_stable(), "design_filter: reference model must be stable");
    require(W.is_stable(), "design_filter: weight must be stable");
    if (!Z.is_stable() || !Z.is_minimum_phase() || Z.input_delay() != 0) {
        throw Error(ErrorKind::numerical, "design_filter: spectral factor must be stable and minimum phase");
    }
    return M * M * W * Z.reciprocal();
}

inline lti::TransferFunction design_filter(const SynthesisConfig& cfg, const signals::Dataset& ds) {
    if (!cfg.filter_enabled) return lti::TransferFunction::gain(1.0);
    const auto z = signals::estimate_ar_spectrum(ds.y1, cfg.ar_order);
    return design_filter(cfg.M, cfg.W, z.Z);
}

// ---------------------------------------------------------------------------

struct PlantVertex {
    Matrix A;
    Vector B;
};

/// Decision variables of the assembled program.
struct SynthesisProgram {
    conic::SemidefiniteProgram sdp;
    conic::VariableBlock G;
    conic::VariableBlock L;
    conic::VariableBlock sigma;
    conic::VariableBlock lambda_g;
    conic::VariableBlock gamma;  // empty when fixed
    std::vector<conic::VariableBlock> P;
    double fixed_gamma = 1.0;
    double data_scale = 1.0;  // Q and R enter divided by this
};

inline conic::AffineMatrix scaled_variable(const conic::VariableBlock& scalar, const Matrix& m) {
    auto out = conic::AffineMatrix::zero(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (m(r, c) != 0.0) out.add_term(static_cast<int>(r), static_cast<int>(c), scalar.at(0, 0), m(r, c));
        }
    }
    return out;
}

/// Largest eigenvalue of Q; dividing Q and R by it leaves K = L G^-1 unchanged.
inline double data_scale(const Matrix& Q) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (Q + Q.transpose()), Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().maxCoeff();
    return top > 0.0 && std::isfinite(top) ? top : 1.0;
}

/// v = Q^-1 R enters the Schur block, Qg is the matrix G is tied to. The
/// program is posed on Qg / data_scale(Qg).
inline SynthesisProgram assemble_vrft_sdp(const Vector& v, const Matrix& Qg_raw, const std::vector<PlantVertex>& vertices,
                                          const SynthesisConfig& cfg) {
    cfg.validate();
    const Eigen::Index m = v.size();
    require(m >= 1, "assemble_sdp: empty data");
    require(Qg_raw.rows() == m && Qg_raw.cols() == m, "assemble_sdp: Q and R dimensions differ");
    require(!vertices.empty(), "assemble_sdp: at least one vertex is required");
    for (const auto& vx : vertices) {
        require(vx.A.rows() == m && vx.A.cols() == m && vx.B.size() == m, "assemble_sdp: vertex dimension mismatch");
    }

    SynthesisProgram prog;
    prog.data_scale = data_scale(Qg_raw);
    const Matrix Qg = Qg_raw / prog.data_scale;
    auto& sdp = prog.sdp;
    prog.sigma = sdp.add_scalar("sigma");
    prog.lambda_g = sdp.add_scalar("lambda_g");
    prog.G = sdp.add_symmetric("G", m);
    prog.L = sdp.add_matrix("L", 1, m);
    if (cfg.gamma_mode == GammaMode::free) prog.gamma = sdp.add_scalar("gamma");
    prog.fixed_gamma = cfg.gamma;
    for (std::size_t i = 0; i < vertices.size(); ++i) prog.P.push_back(sdp.add_symmetric("P" + std::to_string(i + 1), m));

    sdp.add_cost(prog.sigma.at(0, 0), 1.0);
    sdp.add_cost(prog.lambda_g.at(0, 0), cfg.c);

    const auto G = prog.G.expr();
    const auto L = prog.L.expr();
    const Matrix vcol = v;
    const Matrix vrow = v.transpose();

    auto corner = prog.sigma.expr() + 2.0 * (L * vcol) - vrow * G * vcol;
    sdp.add_lmi(conic::AffineMatrix::blocks({{corner, L}, {L.transpose(), G}}), conic::Strictness::nonstrict, "vrft");

    const auto tie = cfg.gamma_mode == GammaMode::free ? scaled_variable(prog.gamma, Qg)
                                                       : conic::AffineMatrix(Matrix(cfg.gamma * Qg));
    const auto slack = scaled_variable(prog.lambda_g, Matrix::Identity(m, m));
    sdp.add_lmi(G - tie + slack, conic::Strictness::nonstrict, "relax_upper");
    sdp.add_lmi(tie - G + slack, conic::Strictness::nonstrict, "relax_lower");

    for (std::size_t i = 0; i < vertices.size(); ++i) {
        const auto P = prog.P[i].expr();
        const auto off = vertices[i].A * G + Matrix(vertices[i].B) * L;
        auto block = conic::AffineMatrix::blocks({{P, off}, {off.transpose(), 2.0 * G - P}});
        const std::string label = "stability_" + std::to_string(i + 1);
        if (cfg.strict_margin >= 0.0) {
            sdp.add_lmi_with_margin(std::move(block), cfg.strict_margin, label);
        } else {
            sdp.add_lmi(std::move(block), conic::Strictness::strict, label);
        }
    }

    if (cfg.gamma_mode == GammaMode::free) {
        sdp.add_lmi(prog.gamma.expr() - conic::AffineMatrix::scalar(cfg.gamma), conic::Strictness::nonstrict,
                    "gamma_floor");
    }
    return prog;
}

struct GainSolution {
    RowVector gain;  // L G^-1
    Matrix G;
    RowVector L;
    double sigma = 0.0;
    double lambda_g = 0.0;
    double gamma = 1.0;
    double condition = 1.0;
    bool gamma_fallback = false;  // free-gamma solve failed, fixed gamma = 1 used
};

inline GainSolution extract_gain(const SynthesisProgram& prog, const conic::SolveReport& report) {
    if (report.status == conic::SolveStatus::infeasible) {
        throw Error(ErrorKind::infeasible, "synthesis: LMI problem infeasible: " + report.message);
    }
    if (!report.ok()) {
        throw Error(ErrorKind::numerical, std::string("synthesis: solver returned ") + conic::to_string(report.status) +
                                              ": " + report.message);
    }
    GainSolution out;
    const double scale = prog.data_scale;
    out.G = scale * prog.G.value(report.x);
    out.L = scale * prog.L.value(report.x);
    out.sigma = scale * prog.sigma.scalar_value(report.x);
    out.lambda_g = scale * prog.lambda_g.scalar_value(report.x);
    out.gamma = prog.gamma.index.empty() ? prog.fixed_gamma : prog.gamma.scalar_value(report.x);
    Eigen::JacobiSVD<Matrix> svd(out.G);
    const auto& s = svd.singularValues();
    out.condition = s(s.size() - 1) > 0.0 ? s(0) / s(s.size() - 1) : conic::kInf;
    if (!(out.condition <= 1e12)) {
        throw Error(ErrorKind::numerical, "synthesis: G is near singular (condition " + std::to_string(out.condition) + ")");
    }
    out.gain = out.G.partialPivLu().solve(out.L.transpose()).transpose();
    return out;
}

struct SolvedProgram {
    SynthesisProgram program;
    conic::SolveReport report;
    GainSolution solution;
};

/// Free gamma first; a numerical failure there is retried with gamma fixed at 1.
template <class Assemble>
SolvedProgram solve_synthesis(Assemble&& assemble, const SynthesisConfig& cfg) {
    SolvedProgram out;
    out.program = assemble(cfg);
    out.report = conic::solve_sdp(out.program.sdp, cfg.sdp);
    if (cfg.gamma_mode == GammaMode::free) {
        try {
            out.solution = extract_gain(out.program, out.report);
            return out;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::numerical) throw;
        }
        SynthesisConfig fixed = cfg;
        fixed.gamma_mode = GammaMode::fixed;
        fixed.gamma = 1.0;
        out = solve_synthesis(assemble, fixed);
        out.solution.gamma_fallback = true;
        return out;
    }
    out.solution = extract_gain(out.program, out.report);
    return out;
}

/// Schur test: sigma >= L G^-1 L' - 2 L v + v' G v.
inline double schur_slack(const GainSolution& s, const Vector& v) {
    const double quad = (s.L * s.G.partialPivLu().solve(s.L.transpose())).value();
    return s.sigma - (quad - 2.0 * (s.L * v).value() + v.dot(s.G * v));
}

}  // namespace smvrft::synth
