#include "smvrft/synth_ei.hpp"
#include "smvrft/synth_ff.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace smvrft;
using namespace smvrft::synth;

namespace {

const lti::ParameterVector kExample1{1.88332727, -1.27622805, 0.23457029, 0.03667627, 0.10379312, 0.0178611};
const auto kM30 = lti::TransferFunction::first_order(-0.855, 0.145);

SynthesisConfig fixed_gamma() {
    SynthesisConfig cfg;
    cfg.gamma_mode = GammaMode::fixed;
    cfg.gamma = 1.0;
    return cfg;
}

signals::Dataset example_dataset(std::size_t nd, double dbar, std::uint64_t seed) {
    const auto u = signals::generate_prbs(nd + 3, -10.0, 10.0, seed);
    return signals::collect_dataset(kExample1, u, dbar, {seed * 2 + 1, seed * 2 + 2}, 0.125);
}

RowVector random_row(Rng& rng, Eigen::Index m, double scale) {
    RowVector r(m);
    for (Eigen::Index j = 0; j < m; ++j) r(j) = rng.uniform(-scale, scale);
    return r;
}

/// Box of +-spread around theta with all 2^(2n) corners.
std::vector<lti::ParameterVector> box_around(const lti::ParameterVector& theta, double spread) {
    const Vector c = theta.values();
    const sm::Box box{c.array() - spread, c.array() + spread};
    std::vector<lti::ParameterVector> out;
    for (const auto& v : sm::box_vertices(box)) out.emplace_back(v);
    return out;
}

std::vector<lti::ParameterVector> random_combinations(const std::vector<lti::ParameterVector>& vertices, int count,
                                                      std::uint64_t seed) {
    Rng rng(seed);
    std::vector<lti::ParameterVector> out;
    for (int c = 0; c < count; ++c) {
        Vector w(static_cast<Eigen::Index>(vertices.size()));
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.exponential();
        w /= w.sum();
        Vector theta = Vector::Zero(vertices.front().values().size());
        for (std::size_t i = 0; i < vertices.size(); ++i) theta += w(static_cast<Eigen::Index>(i)) * vertices[i].values();
        out.emplace_back(theta);
    }
    return out;
}

/// Feasible-point solution vector with G, L, sigma placed by hand.
Vector assignment(const SynthesisProgram& prog, const Matrix& G, const RowVector& L, double sigma) {
    Vector x = Vector::Zero(prog.sdp.variable_count());
    for (Eigen::Index r = 0; r < G.rows(); ++r)
        for (Eigen::Index c = 0; c < G.cols(); ++c) x(prog.G.at(r, c)) = G(r, c);
    for (Eigen::Index c = 0; c < L.size(); ++c) x(prog.L.at(0, c)) = L(c);
    x(prog.sigma.at(0, 0)) = sigma;
    return x;
}

conic::SolveReport fake_report(const Vector& x) {
    conic::SolveReport r;
    r.status = conic::SolveStatus::optimal;
    r.x = x;
    return r;
}

/// First-order plant y(k+1) = a y(k) + b u(k) + noise-free, under u = fK ybar + k y.
signals::Dataset first_order_ff_loop(double a, double b, double k, double fK, const Signal& ref) {
    signals::Dataset ds;
    ds.n = 1;
    ds.u.resize(ref.size());
    ds.y1.assign(ref.size(), 0.0);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        ds.u[i] = fK * ref[i] + k * ds.y1[i];
        if (i + 1 < ref.size()) ds.y1[i + 1] = a * ds.y1[i] + b * ds.u[i];
    }
    ds.y2 = ds.y1;
    return ds;
}

signals::Dataset first_order_ei_loop(double a, double b, double k, double g, const Signal& ref) {
    signals::Dataset ds;
    ds.n = 1;
    ds.u.resize(ref.size());
    ds.y1.assign(ref.size(), 0.0);
    double eta = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double e = ref[i] - ds.y1[i];
        ds.u[i] = k * ds.y1[i] + g * (eta + e);
        eta += e;
        if (i + 1 < ref.size()) ds.y1[i + 1] = a * ds.y1[i] + b * ds.u[i];
    }
    ds.y2 = ds.y1;
    return ds;
}

/// Closed-loop step response under the FF law with the true plant.
double ff_step_error(const lti::ParameterVector& plant, const FFController& c, double ybar, std::size_t steps) {
    const auto ss = lti::theta_to_state_space(plant);
    Vector x = Vector::Zero(ss.dimension());
    double y = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
        const double u = c.f_K * ybar + (c.K * x).value();
        x = ss.A * x + ss.B * u;
        y = x(0);
    }
    return std::abs(y - ybar);
}

double ei_step_error(const lti::ParameterVector& plant, const EIController& c, double ybar, std::size_t steps) {
    const auto ss = lti::theta_to_state_space(plant);
    Vector x = Vector::Zero(ss.dimension());
    double eta = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
        const double e = ybar - x(0);
        const double u = (c.K * x).value() + c.g * (eta + e);
        eta += e;
        x = ss.A * x + ss.B * u;
    }
    return std::abs(x(0) - ybar);
}

}  // namespace

// ---------------------------------------------------------------------------
// Filter.

TEST(DesignFilter, UnitFactorsGiveUnitFilter) {
    const auto F = design_filter(lti::TransferFunction::gain(1.0), lti::TransferFunction::gain(1.0),
                                 lti::TransferFunction::gain(1.0));
    for (double w : lti::frequency_grid(64)) EXPECT_NEAR(std::abs(lti::evaluate(F, w) - 1.0), 0.0, 1e-15);
}

TEST(DesignFilter, MagnitudeMatchesDefinition) {
    const auto ds = example_dataset(400, 0.1, 3);
    const auto Z = signals::estimate_ar_spectrum(ds.y1, 5).Z;
    const auto W = lti::TransferFunction({1.0, 0.3}, {1.0, -0.2});
    const auto F = design_filter(kM30, W, Z);
    for (double w : lti::frequency_grid(256)) {
        const double expected = std::pow(std::abs(lti::evaluate(kM30, w)), 4) * std::norm(lti::evaluate(W, w)) /
                                std::norm(lti::evaluate(Z, w));
        EXPECT_NEAR(std::norm(lti::evaluate(F, w)), expected, 1e-9 * (1.0 + expected));
    }
}

TEST(DesignFilter, ConstantSpectralFactor) {
    const auto F = design_filter(kM30, lti::TransferFunction::gain(1.0), lti::TransferFunction::gain(2.5));
    EXPECT_NEAR(F.static_gain(), 1.0 / 2.5, 1e-12);
    EXPECT_EQ(F.input_delay(), 2u);
}

TEST(DesignFilter, UnitCircleFactorRejected) {
    const lti::TransferFunction Z({1.0}, {1.0, -1.0});
    try {
        design_filter(kM30, lti::TransferFunction::gain(1.0), Z);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
}

// ---------------------------------------------------------------------------
// Feedforward data.

TEST(FFData, SteadyDirectionAndSymmetry) {
    const auto ds = example_dataset(300, 0.1, 4);
    const double mu = kExample1.static_gain();
    const auto F = design_filter(SynthesisConfig{}, ds);
    const auto data = build_ff_data(ds, kM30, F, mu);
    EXPECT_EQ(data.f.size(), 5);
    EXPECT_EQ(data.f.head(3), Vector::Ones(3));
    EXPECT_EQ(data.f.tail(2), Vector::Constant(2, 1.0 / mu));
    EXPECT_LT((data.Q - data.Q.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT(data.min_eigenvalue, 0.0);
    EXPECT_EQ(data.rows, 297u);
}

TEST(FFData, QuadraticIdentityAgainstDirectCost) {
    const auto ds = example_dataset(300, 0.1, 5);
    const double mu = estimate_static_gain(ds);
    Rng rng(6);
    for (bool filtered : {false, true}) {
        SynthesisConfig cfg;
        cfg.filter_enabled = filtered;
        const auto F = design_filter(cfg, ds);
        const auto data = build_ff_data(ds, kM30, F, mu);
        for (int t = 0; t < 20; ++t) {
            const RowVector K = random_row(rng, 5, 2.0);
            const double direct = vrft_cost_ff(K, ds, kM30, F, mu);
            EXPECT_NEAR(quadratic_cost(data, K), direct, 1e-8 * (1.0 + std::abs(direct)));
        }
    }
}

TEST(FFData, NoiselessTwinIsPerfectSquare) {
    auto ds = example_dataset(200, 0.1, 7);
    ds.y2 = ds.y1;
    const auto F = design_filter(SynthesisConfig{}, ds);
    const auto data = build_ff_data(ds, kM30, F, 1.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(data.Q);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    Rng rng(8);
    for (int t = 0; t < 10; ++t) EXPECT_GE(vrft_cost_ff(random_row(rng, 5, 1.0), ds, kM30, F, 1.0), 0.0);
}

TEST(FFData, MatchedControllerHasZeroCost) {
    const double a = 0.8, b = 0.5, k = -0.4;
    const double mu = b / (1.0 - a);
    const double fK = 1.0 / mu - k;
    Signal ref = signals::generate_prbs(200, -1.0, 1.0, 9);
    const auto ds = first_order_ff_loop(a, b, k, fK, ref);
    const auto M = lti::TransferFunction::first_order(-(a + b * k), b * fK);
    const RowVector K = RowVector::Constant(1, k);
    EXPECT_NEAR(vrft_cost_ff(K, ds, M, lti::TransferFunction::gain(1.0), mu), 0.0, 1e-20);
    const auto data = build_ff_data(ds, M, lti::TransferFunction::gain(1.0), mu);
    EXPECT_NEAR(quadratic_cost(data, K), 0.0, 1e-10);
    EXPECT_NEAR((data.R - data.Q * K.transpose()).norm(), 0.0, 1e-10);
}

TEST(FFData, NonExcitingDataRejected) {
    auto ds = example_dataset(100, 0.0, 10);
    std::fill(ds.u.begin(), ds.u.end(), 0.0);
    std::fill(ds.y1.begin(), ds.y1.end(), 0.0);
    ds.y2 = ds.y1;
    try {
        build_ff_data(ds, kM30, lti::TransferFunction::gain(1.0), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
}

// ---------------------------------------------------------------------------
// Feedforward program.

TEST(FFProgram, ScalarHandCase) {
    VrftDataFF data;
    data.R = Vector::Zero(1);
    data.Q = Matrix::Identity(1, 1);
    data.f = Vector::Ones(1);
    const std::vector<PlantVertex> vertices{{Matrix::Constant(1, 1, 0.5), Vector::Ones(1)}};
    const auto prog = assemble_ff_sdp(data, vertices, fixed_gamma());
    EXPECT_EQ(prog.sdp.blocks().size(), 2u + 1u + 1u);

    Vector x = assignment(prog, Matrix::Identity(1, 1), RowVector::Zero(1), 0.0);
    x(prog.P[0].at(0, 0)) = 1.0;
    for (double e : conic::check_feasibility(x, prog.sdp)) EXPECT_GE(e, 0.0);
    EXPECT_NEAR(conic::check_feasibility(x, prog.sdp)[3], 0.5, 1e-12);

    const auto report = conic::solve_sdp(prog.sdp);
    ASSERT_TRUE(report.ok()) << report.message;
    for (double e : report.block_min_eigenvalues) EXPECT_GE(e, -1e-8);
}

TEST(FFProgram, BlockCountGrowsWithVertices) {
    VrftDataFF data;
    data.R = Vector::Ones(3);
    data.Q = Matrix::Identity(3, 3);
    std::vector<PlantVertex> v(7, PlantVertex{Matrix::Identity(3, 3) * 0.5, Vector::Ones(3)});
    EXPECT_EQ(assemble_ff_sdp(data, v, fixed_gamma()).sdp.blocks().size(), 2u + 7u + 1u);
    EXPECT_EQ(assemble_ff_sdp(data, v, SynthesisConfig{}).sdp.blocks().size(), 2u + 7u + 1u + 1u);
    EXPECT_THROW(assemble_ff_sdp(data, {}, SynthesisConfig{}), std::invalid_argument);
    EXPECT_THROW(assemble_ff_sdp(data, {PlantVertex{Matrix::Identity(2, 2), Vector::Ones(2)}}, SynthesisConfig{}),
                 std::invalid_argument);
}

TEST(FFProgram, FreeGammaRespectsFloor) {
    VrftDataFF data;
    data.R = Vector::Constant(1, 0.3);
    data.Q = Matrix::Identity(1, 1);
    data.f = Vector::Ones(1);
    const std::vector<PlantVertex> vertices{{Matrix::Constant(1, 1, 1.2), Vector::Ones(1)}};
    SynthesisConfig cfg;
    cfg.gamma = 1e-3;
    const auto out = solve_synthesis([&](const SynthesisConfig& c) { return assemble_ff_sdp(data, vertices, c); }, cfg);
    ASSERT_TRUE(out.report.ok()) << out.report.message;
    EXPECT_FALSE(out.solution.gamma_fallback);
    EXPECT_GE(out.solution.gamma, cfg.gamma * (1.0 - 1e-6));
    EXPECT_LT(std::abs(1.2 + out.solution.gain(0)), 1.0);
}

TEST(FFProgram, FreeGammaFailureFallsBackToFixed) {
    VrftDataFF data;
    data.R = Vector::Zero(1);
    data.Q = Matrix::Identity(1, 1);
    data.f = Vector::Ones(1);
    const std::vector<PlantVertex> vertices{{Matrix::Constant(1, 1, 0.5), Vector::Ones(1)}};
    int calls = 0;
    const auto out = solve_synthesis(
        [&](const SynthesisConfig& c) {
            ++calls;
            auto prog = assemble_ff_sdp(data, vertices, c);
            if (c.gamma_mode == GammaMode::free) prog.sdp.add_cost(prog.sigma.at(0, 0), -2.0);
            return prog;
        },
        SynthesisConfig{});
    EXPECT_EQ(calls, 2);
    EXPECT_TRUE(out.solution.gamma_fallback);
    EXPECT_EQ(out.solution.gamma, 1.0);
    EXPECT_TRUE(out.program.gamma.index.empty());
    EXPECT_LT(std::abs(0.5 + out.solution.gain(0)), 1.0);
}

TEST(FFProgram, GainExtraction) {
    VrftDataFF data;
    data.R = Vector::Zero(3);
    data.Q = Matrix::Identity(3, 3);
    data.rho = 2.0;
    data.f = steady_direction(2, 2.0);
    const std::vector<PlantVertex> v{{Matrix::Identity(3, 3) * 0.5, Vector::Ones(3)}};
    const auto prog = assemble_ff_sdp(data, v, SynthesisConfig{});
    const RowVector L = (RowVector(3) << 0.1, -0.2, 0.3).finished();
    const auto sol = extract_gain(prog, fake_report(assignment(prog, Matrix::Identity(3, 3), L, 1.0)));
    EXPECT_EQ(sol.gain, L);
    const auto c = extract_ff_controller(sol, data);
    EXPECT_EQ(c.f_K + (c.K * data.f).value(), data.rho);

    Matrix G = Matrix::Identity(3, 3);
    G(2, 2) = 1e-14;
    try {
        extract_gain(prog, fake_report(assignment(prog, G, L, 1.0)));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
    auto bad = fake_report(assignment(prog, Matrix::Identity(3, 3), L, 1.0));
    bad.status = conic::SolveStatus::infeasible;
    try {
        extract_gain(prog, bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::infeasible);
    }
}

TEST(FFProgram, RobustStabilityOnExampleOne) {
    const auto ds = example_dataset(500, 0.1, 11);
    const auto vertices = box_around(kExample1, 0.004);
    const double mu = kExample1.static_gain();
    SynthesisConfig cfg;
    const auto out = synthesize_ff(ds, vertices, mu, cfg);
    ASSERT_TRUE(out.report.ok()) << out.report.message;
    for (std::size_t b = 3; b < out.report.block_min_eigenvalues.size(); ++b) {
        EXPECT_GT(out.report.block_min_eigenvalues[b], 0.0);
    }
    for (const auto& v : vertices) {
        const auto ss = lti::theta_to_state_space(v);
        EXPECT_LT(lti::spectral_radius(ss.A + ss.B * out.controller.K), 1.0);
    }
    for (const auto& v : random_combinations(vertices, 100, 12)) {
        const auto ss = lti::theta_to_state_space(v);
        EXPECT_LT(lti::spectral_radius(ss.A + ss.B * out.controller.K), 1.0);
    }

    // Schur equivalence at the optimum, both ways.
    const Vector v = out.data.Q.ldlt().solve(out.data.R);
    EXPECT_GE(schur_slack(out.solution, v), -1e-6 * (1.0 + std::abs(out.solution.sigma)));
    auto lowered = out.solution;
    lowered.sigma -= 1e-3 * (1.0 + std::abs(lowered.sigma));
    EXPECT_LT(schur_slack(lowered, v), 0.0);

    EXPECT_LT(ff_step_error(kExample1, out.controller, 2.0, 3000), 1e-6);
    EXPECT_NEAR(out.controller.f_K, out.controller.rho - (out.controller.K * out.data.f).value(), 1e-15);
}

// ---------------------------------------------------------------------------
// Integral action.

TEST(EIData, TransformInvariants) {
    for (int n : {1, 2, 3}) {
        const Matrix E = integral_transform(n);
        const Matrix Ei = integral_transform_inverse(n);
        EXPECT_EQ(E * Ei, Matrix::Identity(2 * n, 2 * n));
        EXPECT_EQ(E(2 * n - 1, 0), -1.0);
        EXPECT_EQ(E.row(2 * n - 1).tail(2 * n - 1).sum(), 1.0);
    }
}

TEST(EIData, DifferencingAnnihilatesConstants) {
    const auto d = detail::difference(Signal(10, 3.5));
    EXPECT_EQ(d[0], 3.5);
    for (std::size_t i = 1; i < d.size(); ++i) EXPECT_EQ(d[i], 0.0);
}

TEST(EIData, TransformedMatricesAndIdentity) {
    const auto ds = example_dataset(300, 0.1, 13);
    Rng rng(14);
    for (bool filtered : {false, true}) {
        SynthesisConfig cfg;
        cfg.filter_enabled = filtered;
        const auto F = design_filter(cfg, ds);
        const auto data = build_ei_data(ds, kM30, F);
        const Matrix Ei = integral_transform_inverse(3);
        EXPECT_LT((data.Qcal - data.Qcal.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((data.Rcal - Ei * data.R).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((data.Qcal - Ei * data.Q * Ei.transpose()).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_GT(data.min_eigenvalue, 0.0);
        for (int t = 0; t < 20; ++t) {
            const RowVector K = random_row(rng, 5, 2.0);
            const double g = rng.uniform(-1.0, 1.0);
            RowVector Kg(6);
            Kg << K, g;
            const double direct = vrft_cost_ei(K, g, ds, kM30, F);
            EXPECT_NEAR(quadratic_cost(data, Kg), direct, 1e-8 * (1.0 + std::abs(direct)));
            const RowVector J = Kg * data.E;
            const double via_cal = data.constant + (J * data.Qcal * J.transpose()).value() - 2.0 * (J * data.Rcal).value();
            EXPECT_NEAR(via_cal, direct, 1e-8 * (1.0 + std::abs(direct)));
        }
    }
}

TEST(EIData, MatchedControllerHasZeroCost) {
    const double a = 0.8, b = 0.5, k = -0.3, g = 0.2;
    Signal ref = signals::generate_prbs(300, -1.0, 1.0, 15);
    const auto ds = first_order_ei_loop(a, b, k, g, ref);
    // y/ybar = g b q^-1 / ((1 - q^-1)(1 - a q^-1) + g b q^-1 - k b q^-1 (1 - q^-1))
    const std::vector<double> den{1.0, -(1.0 + a) + g * b - k * b, a + k * b};
    const lti::TransferFunction M({0.0, g * b}, den);
    const RowVector K = RowVector::Constant(1, k);
    EXPECT_NEAR(vrft_cost_ei(K, g, ds, M, lti::TransferFunction::gain(1.0)), 0.0, 1e-20);
    const auto data = build_ei_data(ds, M, lti::TransferFunction::gain(1.0));
    const RowVector Kg = (RowVector(2) << k, g).finished();
    EXPECT_NEAR(quadratic_cost(data, Kg), 0.0, 1e-10);
}

TEST(EIData, VirtualErrorFilteredWithoutDifferencing) {
    // Identity only holds if e_F = F e, not D F e.
    const auto ds = example_dataset(200, 0.1, 16);
    const auto F = design_filter(SynthesisConfig{}, ds);
    const auto data = build_ei_data(ds, kM30, F);
    const std::size_t i = detail::sample(3, 50);
    const Signal r = signals::virtual_reference(kM30, ds.y1);
    Signal e(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) e[j] = r[j] - ds.y1[j];
    const Signal eF = detail::filtered(F, e);
    const Signal eDF = detail::difference(eF);
    EXPECT_GT(std::abs(eF[i] - eDF[i]), 1e-6);
    RowVector unit = RowVector::Zero(6);
    unit(5) = 1.0;
    EXPECT_NEAR(quadratic_cost(data, unit), vrft_cost_ei(RowVector::Zero(5), 1.0, ds, kM30, F), 1e-8);
}

TEST(EIProgram, ScalarPlantFeasible) {
    VrftDataEI data;
    data.R = Vector::Zero(2);
    data.Q = Matrix::Identity(2, 2);
    data.E = integral_transform(1);
    data.Rcal = data.R;
    data.Qcal = integral_transform_inverse(1) * data.Q * integral_transform_inverse(1).transpose();
    const auto verts = augmented_vertices({lti::ParameterVector{0.5, 1.0}});
    EXPECT_EQ(verts[0].A, (Matrix(2, 2) << 0.5, 0.0, -1.0, 1.0).finished());
    EXPECT_EQ(verts[0].B, (Vector(2) << 1.0, 0.0).finished());
    const auto prog = assemble_ei_sdp(data, verts, fixed_gamma());
    EXPECT_EQ(prog.sdp.blocks().size(), 4u);
    const auto report = conic::solve_sdp(prog.sdp);
    ASSERT_TRUE(report.ok()) << report.message;
    const auto sol = extract_gain(prog, report);
    EXPECT_GT(sol.L.norm(), 1e-6);
    EXPECT_LT(lti::spectral_radius(verts[0].A + verts[0].B * sol.gain), 1.0);
    // The open augmented matrix has an eigenvalue at 1, so L = 0 cannot pass.
    EXPECT_NEAR(lti::spectral_radius(verts[0].A), 1.0, 1e-12);
}

TEST(EIProgram, GainRecovery) {
    GainSolution sol;
    sol.gain = (RowVector(2) << 0.7, -0.2).finished();
    const auto c = extract_ei_controller(sol);
    EXPECT_DOUBLE_EQ(c.K(0), 0.5);
    EXPECT_DOUBLE_EQ(c.g, -0.2);
    EXPECT_LT((c.closed_loop_gain() - sol.gain).cwiseAbs().maxCoeff(), 1e-15);

    EIController ctl;
    ctl.K = (RowVector(5) << 0.3, -0.1, 0.05, 0.2, -0.4).finished();
    ctl.g = 0.15;
    const auto ss = lti::theta_to_state_space(kExample1);
    const auto aug = lti::augment_integrator(ss);
    Matrix block(6, 6);
    block.topLeftCorner(5, 5) = ss.A + ss.B * ctl.K - ctl.g * ss.B * ss.C;
    block.topRightCorner(5, 1) = ctl.g * ss.B;
    block.bottomLeftCorner(1, 5) = -ss.C;
    block(5, 5) = 1.0;
    EXPECT_LT((aug.A + aug.B * ctl.closed_loop_gain() - block).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EIProgram, TransformRoutesAgree) {
    const auto ds = example_dataset(200, 0.1, 17);
    const auto data = build_ei_data(ds, kM30, design_filter(SynthesisConfig{}, ds));
    const auto verts = augmented_vertices(box_around(kExample1, 0.01));
    const auto a = assemble_ei_sdp(data, verts, SynthesisConfig{});
    const auto b = assemble_ei_sdp_raw(data, verts, SynthesisConfig{});
    ASSERT_EQ(a.sdp.blocks().size(), b.sdp.blocks().size());
    Rng rng(18);
    for (int t = 0; t < 5; ++t) {
        Vector x(a.sdp.variable_count());
        for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = rng.uniform(-1, 1);
        for (std::size_t k = 0; k < a.sdp.blocks().size(); ++k) {
            const Matrix fa = a.sdp.blocks()[k].F.evaluate(x);
            const Matrix fb = b.sdp.blocks()[k].F.evaluate(x);
            EXPECT_LT((fa - fb).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + fa.cwiseAbs().maxCoeff())) << k;
        }
    }
}

TEST(EIProgram, RobustStabilityAndOffsetFreeTracking) {
    const auto ds = example_dataset(500, 0.1, 19);
    const auto vertices = box_around(kExample1, 0.004);
    const auto out = synthesize_ei(ds, vertices, SynthesisConfig{});
    ASSERT_TRUE(out.report.ok()) << out.report.message;
    const RowVector J = out.controller.closed_loop_gain();
    EXPECT_LT((J - out.solution.gain).cwiseAbs().maxCoeff(), 1e-10);
    for (const auto& v : vertices) {
        const auto aug = lti::augment_integrator(lti::theta_to_state_space(v));
        EXPECT_LT(lti::spectral_radius(aug.A + aug.B * J), 1.0);
    }
    for (const auto& v : random_combinations(vertices, 100, 20)) {
        const auto aug = lti::augment_integrator(lti::theta_to_state_space(v));
        EXPECT_LT(lti::spectral_radius(aug.A + aug.B * J), 1.0);
    }
    for (const auto& v : vertices) EXPECT_LT(ei_step_error(v, out.controller, 2.0, 4000), 1e-6);
}

TEST(Records, ControllersRoundTrip) {
    FFController ff;
    ff.K = (RowVector(5) << 0.1, -0.2, 0.3, 1e-17, -4.5).finished();
    ff.rho = 1.25;
    ff.f_K = 0.3;
    ff.dataset_hash = "abc123";
    const auto ff2 = ff_controller_from_record(to_record(ff));
    EXPECT_EQ(ff2.K, ff.K);
    EXPECT_EQ(ff2.f_K, ff.f_K);
    EXPECT_EQ(ff2.rho, ff.rho);
    EXPECT_EQ(ff2.dataset_hash, "abc123");
    EXPECT_EQ(ff2.fps_hash, "");

    EIController ei;
    ei.K = ff.K;
    ei.g = -0.7;
    ei.fps_hash = "ffee";
    const auto ei2 = ei_controller_from_record(to_record(ei));
    EXPECT_EQ(ei2.K, ei.K);
    EXPECT_EQ(ei2.g, ei.g);
    EXPECT_EQ(ei2.fps_hash, "ffee");
    EXPECT_THROW(ff_controller_from_record("ff_controller 1\nn x\n"), Error);
    EXPECT_THROW(ei_controller_from_record(to_record(ff)), Error);
}
