#include "smvrft/sm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace smvrft;
using namespace smvrft::sm;

namespace {

const lti::ParameterVector kExample1{1.88332727, -1.27622805, 0.23457029, 0.03667627, 0.10379312, 0.0178611};

signals::RegressorData random_pairs(Rng& rng, int dim, int count, const Vector& theta, double noise) {
    signals::RegressorData d{Matrix(count, dim), Vector(count)};
    for (int k = 0; k < count; ++k) {
        for (int j = 0; j < dim; ++j) d.phi(k, j) = rng.uniform(-1, 1);
        d.target(k) = d.phi.row(k).dot(theta) + rng.uniform(-noise, noise);
    }
    return d;
}

/// Brute-force vertex set of { x : H x <= h }: every nonsingular active subset.
std::vector<Vector> brute_force_vertices(const Matrix& H, const Vector& h) {
    const auto p = H.cols();
    const int rows = static_cast<int>(H.rows());
    std::vector<Vector> out;
    std::vector<int> pick(static_cast<std::size_t>(p));
    std::function<void(int, int)> rec = [&](int depth, int start) {
        if (depth == p) {
            Matrix S(p, p);
            Vector t(p);
            for (Eigen::Index i = 0; i < p; ++i) {
                S.row(i) = H.row(pick[static_cast<std::size_t>(i)]);
                t(i) = h(pick[static_cast<std::size_t>(i)]);
            }
            Eigen::FullPivLU<Matrix> lu(S);
            if (lu.rank() < p) return;
            const Vector x = lu.solve(t);
            if (((H * x - h).array() > 1e-9).any()) return;
            for (const auto& v : out) {
                if ((v - x).cwiseAbs().maxCoeff() < 1e-7) return;
            }
            out.push_back(x);
            return;
        }
        for (int i = start; i < rows; ++i) {
            pick[static_cast<std::size_t>(depth)] = i;
            rec(depth + 1, i + 1);
        }
    };
    rec(0, 0);
    return out;
}

bool same_vertex_sets(const std::vector<Vector>& a, const std::vector<Vector>& b, double tol) {
    if (a.size() != b.size()) return false;
    for (const auto& v : a) {
        bool found = false;
        for (const auto& w : b) found = found || (v - w).cwiseAbs().maxCoeff() < tol;
        if (!found) return false;
    }
    return true;
}

}  // namespace

TEST(ErrorBound, NoiselessDataGivesZero) {
    const auto u = signals::generate_prbs(203, -10.0, 10.0, 3);
    const auto ds = signals::collect_dataset(kExample1, u, 0.0, {1, 2}, 0.125);
    const auto reg = signals::build_regressors(ds, 1);
    for (double dbar : {0.0, 0.1}) {
        const auto eb = estimate_error_bound(reg, OmegaBox::symmetric(3), dbar);
        EXPECT_NEAR(eb.lambda_lb, 0.0, 1e-9);
    }
}

TEST(ErrorBound, BoundaryClampedResidual) {
    signals::RegressorData d{Matrix(1, 2), Vector(1)};
    d.phi << 1.0, 0.0;
    d.target << 2.0;
    const OmegaBox omega{Vector::Zero(2), Vector::Ones(2)};
    const auto eb = estimate_error_bound(d, omega, 0.0);
    EXPECT_NEAR(eb.lambda_lb, 1.0, 1e-12);
    EXPECT_NEAR(eb.theta[0], 1.0, 1e-12);
}

TEST(ErrorBound, MatchesBisectionOnFeasibilityLps) {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        Vector theta(6);
        for (int j = 0; j < 6; ++j) theta(j) = rng.uniform(-0.5, 0.5);
        const auto d = random_pairs(rng, 6, 30, theta, 0.3);
        const auto omega = OmegaBox::symmetric(3, 1.0);
        const double dbar = 0.05;
        const auto eb = estimate_error_bound(d, omega, dbar);

        auto feasible = [&](double lambda) {
            conic::LinearProgram lp(6);
            lp.A.resize(60, 6);
            lp.b.resize(60);
            lp.A.topRows(30) = d.phi;
            lp.A.bottomRows(30) = -d.phi;
            lp.b.head(30) = d.target.array() + lambda + dbar;
            lp.b.tail(30) = lambda + dbar - d.target.array();
            lp.lower = omega.lower;
            lp.upper = omega.upper;
            return conic::solve_lp(lp).ok();
        };
        double lo = 0.0, hi = 10.0;
        ASSERT_TRUE(feasible(hi));
        if (feasible(0.0)) {
            hi = 0.0;
        } else {
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                (feasible(mid) ? hi : lo) = mid;
            }
        }
        EXPECT_NEAR(eb.lambda_lb, hi, 1e-6) << trial;
        EXPECT_GE(eb.lambda_lb, 0.0);
        const double worst = (d.target - d.phi * eb.theta.values()).cwiseAbs().maxCoeff();
        EXPECT_LE(worst, eb.lambda_lb + dbar + 1e-8);
    }
}

TEST(ErrorBound, RejectsBadInput) {
    signals::RegressorData empty{Matrix(0, 2), Vector(0)};
    EXPECT_THROW(estimate_error_bound(empty, OmegaBox::symmetric(1), 0.1), std::invalid_argument);
    const OmegaBox bad{Vector::Ones(2), Vector::Zero(2)};
    signals::RegressorData one{Matrix::Ones(1, 2), Vector::Ones(1)};
    EXPECT_THROW(estimate_error_bound(one, bad, 0.1), std::invalid_argument);
}

TEST(BuildFps, RowCountsAndArgminMembership) {
    Rng rng(42);
    Vector theta(2);
    theta << 0.5, 1.0;
    const auto d = random_pairs(rng, 2, 40, theta, 0.2);
    const auto omega = OmegaBox::symmetric(1);
    const auto eb = estimate_error_bound(d, omega, 0.05);
    const auto fps = build_fps(d, 1.0, eb.lambda_lb, 0.05, omega);
    EXPECT_EQ(fps.H.rows(), 2 * 40 + 4);
    EXPECT_EQ(fps.data_rows, 80u);
    const auto m = membership(eb.theta, fps);
    EXPECT_TRUE(m.inside);
    EXPECT_NEAR(m.margin, 0.0, 1e-8);
    EXPECT_THROW(build_fps(d, 0.5, eb.lambda_lb, 0.05, omega), std::invalid_argument);
}

TEST(BuildFps, HugeAlphaLeavesOmega) {
    Rng rng(43);
    const auto d = random_pairs(rng, 2, 20, Vector::Ones(2), 0.2);
    const auto omega = OmegaBox::symmetric(1, 2.0);
    const auto eb = estimate_error_bound(d, omega, 0.0);
    const auto fps = enumerate_vertices(build_fps(d, 1e6, eb.lambda_lb, 0.0, omega));
    EXPECT_EQ(fps.vertices.size(), 4u);
    for (const auto& v : fps.vertices) EXPECT_NEAR(v.values().cwiseAbs().minCoeff(), 2.0, 1e-9);
}

TEST(BuildFps, NestedInAlpha) {
    Rng rng(44);
    Vector theta(4);
    theta << 0.6, -0.1, 0.4, 0.2;
    const auto d = random_pairs(rng, 4, 60, theta, 0.1);
    const auto omega = OmegaBox::symmetric(2, 3.0);
    const auto eb = estimate_error_bound(d, omega, 0.02);
    const auto small = enumerate_vertices(build_fps(d, 1.5, eb.lambda_lb, 0.02, omega));
    const auto large = build_fps(d, 3.0, eb.lambda_lb, 0.02, omega);
    ASSERT_FALSE(small.vertices.empty());
    for (const auto& v : small.vertices) EXPECT_TRUE(membership(v, large).inside);
}

TEST(NoiselessIdentification, TrueParameterInsideUnitAlpha) {
    const auto u = signals::generate_prbs(103, -10.0, 10.0, 5);
    const auto ds = signals::collect_dataset(kExample1, u, 0.0, {1, 2}, 0.125);
    const auto reg = signals::build_regressors(ds, 1);
    const auto eb = estimate_error_bound(reg, OmegaBox::symmetric(3), 0.0);
    const auto fps = build_fps(reg, 1.0, eb.lambda_lb, 0.0, OmegaBox::symmetric(3));
    EXPECT_NEAR(eb.lambda_lb, 0.0, 1e-9);
    EXPECT_TRUE(membership(kExample1, fps, 1e-7).inside);
}

TEST(EnumerateVertices, UnitSquare) {
    Matrix H(4, 2);
    H << 1, 0, -1, 0, 0, 1, 0, -1;
    Vector h(4);
    h << 1, 0, 1, 0;
    const auto v = enumerate_polytope_vertices(H, h);
    std::vector<Vector> expected;
    for (double a : {0.0, 1.0})
        for (double b : {0.0, 1.0}) expected.push_back((Vector(2) << a, b).finished());
    EXPECT_TRUE(same_vertex_sets(v, expected, 1e-12));
}

TEST(EnumerateVertices, Simplex3d) {
    Matrix H(4, 3);
    H << -1, 0, 0, 0, -1, 0, 0, 0, -1, 1, 1, 1;
    Vector h(4);
    h << 0, 0, 0, 1;
    const auto v = enumerate_polytope_vertices(H, h);
    EXPECT_EQ(v.size(), 4u);
    EXPECT_TRUE(same_vertex_sets(v, brute_force_vertices(H, h), 1e-12));
}

TEST(EnumerateVertices, RandomPolytopesMatchActiveSetOracle) {
    Rng rng(45);
    for (int trial = 0; trial < 40; ++trial) {
        const int p = 2 + trial % 3;
        const int extra = 2 + static_cast<int>(rng.uniform(0, 12 - 2 * p - 1));
        Matrix H(2 * p + extra, p);
        Vector h(2 * p + extra);
        H.setZero();
        for (int j = 0; j < p; ++j) {
            H(2 * j, j) = 1.0;
            h(2 * j) = rng.uniform(0.5, 2.0);
            H(2 * j + 1, j) = -1.0;
            h(2 * j + 1) = rng.uniform(0.5, 2.0);
        }
        for (int i = 2 * p; i < H.rows(); ++i) {
            for (int j = 0; j < p; ++j) H(i, j) = rng.uniform(-1, 1);
            h(i) = rng.uniform(0.2, 1.0);
        }
        for (bool prune : {true, false}) {
            EnumerationOptions opt;
            opt.prune = prune;
            const auto v = enumerate_polytope_vertices(H, h, opt);
            const auto oracle = brute_force_vertices(H, h);
            EXPECT_TRUE(same_vertex_sets(v, oracle, 1e-8)) << trial << ' ' << v.size() << " vs " << oracle.size();
        }
    }
}

TEST(EnumerateVertices, DegenerateVertices) {
    // Pyramid: four side faces meet at the apex.
    Matrix H(5, 3);
    H << 0, 0, -1, 1, 0, 1, -1, 0, 1, 0, 1, 1, 0, -1, 1;
    Vector h(5);
    h << 0, 1, 1, 1, 1;
    const auto v = enumerate_polytope_vertices(H, h);
    EXPECT_EQ(v.size(), 5u);
    EXPECT_TRUE(same_vertex_sets(v, brute_force_vertices(H, h), 1e-10));
}

TEST(EnumerateVertices, FpsVerticesAreActiveAndFeasible) {
    const auto u = signals::generate_prbs(153, -10.0, 10.0, 6);
    const lti::ParameterVector plant{0.7, 0.3, 0.5, 0.2};
    const auto ds = signals::collect_dataset(plant, u, 0.1, {1, 2}, 1.0);
    const auto reg = signals::build_regressors(ds, 1);
    const auto omega = OmegaBox::symmetric(2);
    const auto eb = estimate_error_bound(reg, omega, 0.1);
    const auto fps = enumerate_vertices(build_fps(reg, 3.0, eb.lambda_lb, 0.1, omega));
    ASSERT_GE(fps.vertices.size(), 5u);
    for (const auto& v : fps.vertices) {
        const Vector slack = fps.h - fps.H * v.values();
        EXPECT_GE(slack.minCoeff(), -1e-8);
        int active = 0;
        for (Eigen::Index i = 0; i < slack.size(); ++i) active += slack(i) <= 1e-7 * (1.0 + std::abs(fps.h(i)));
        EXPECT_GE(active, 4);
    }
    for (std::size_t a = 0; a < fps.vertices.size(); ++a)
        for (std::size_t b = a + 1; b < fps.vertices.size(); ++b)
            EXPECT_GT((fps.vertices[a].values() - fps.vertices[b].values()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_TRUE(membership(plant, fps).inside);
}

TEST(EnumerateVertices, CapSignalsCapacity) {
    const int p = 4;
    Matrix H = Matrix::Zero(2 * p, p);
    Vector h = Vector::Ones(2 * p);
    for (int j = 0; j < p; ++j) {
        H(2 * j, j) = 1.0;
        H(2 * j + 1, j) = -1.0;
    }
    EnumerationOptions opt;
    opt.vertex_cap = 10;
    try {
        enumerate_polytope_vertices(H, h, opt);
        FAIL() << "expected capacity error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::capacity);
    }
    opt.vertex_cap = 16;
    EXPECT_EQ(enumerate_polytope_vertices(H, h, opt).size(), 16u);
}

TEST(EnumerateVertices, UnboundedRejected) {
    Matrix H(1, 2);
    H << 1, 0;
    EXPECT_THROW(enumerate_polytope_vertices(H, Vector::Ones(1), {5000, false}), Error);
}

TEST(OuterBox, ContainsPolytopeAndMatchesBoxes) {
    Matrix H(3, 2);
    H << -1, 0, 0, -1, 1, 1;
    Vector h(3);
    h << 0, 0, 1;
    const auto box = bounding_box(H, h);
    EXPECT_NEAR(box.lower.norm(), 0.0, 1e-12);
    EXPECT_NEAR((box.upper - Vector::Ones(2)).norm(), 0.0, 1e-12);

    Rng rng(46);
    const auto d = random_pairs(rng, 4, 50, Vector::Constant(4, 0.3), 0.1);
    const auto omega = OmegaBox::symmetric(2, 2.0);
    const auto eb = estimate_error_bound(d, omega, 0.0);
    const auto exact = enumerate_vertices(build_fps(d, 2.0, eb.lambda_lb, 0.0, omega));
    const auto boxed = outer_box(exact);
    EXPECT_TRUE(boxed.outer_box);
    EXPECT_EQ(boxed.vertices.size(), 16u);
    Vector lo = Vector::Constant(4, conic::kInf), hi = Vector::Constant(4, -conic::kInf);
    for (const auto& v : boxed.vertices) {
        lo = lo.cwiseMin(v.values());
        hi = hi.cwiseMax(v.values());
    }
    for (const auto& v : exact.vertices) {
        EXPECT_TRUE(((v.values().array() >= lo.array() - 1e-9) && (v.values().array() <= hi.array() + 1e-9)).all());
    }
    // The box is tight: each face touches an exact vertex.
    for (int j = 0; j < 4; ++j) {
        double vmin = conic::kInf, vmax = -conic::kInf;
        for (const auto& v : exact.vertices) {
            vmin = std::min(vmin, v[j]);
            vmax = std::max(vmax, v[j]);
        }
        EXPECT_NEAR(vmin, lo(j), 1e-8);
        EXPECT_NEAR(vmax, hi(j), 1e-8);
    }

    const auto omega_only = build_fps(d, 1e9, eb.lambda_lb, 0.0, omega);
    EXPECT_TRUE(same_vertex_sets(
        [&] {
            std::vector<Vector> v;
            for (const auto& t : outer_box(omega_only).vertices) v.push_back(t.values());
            return v;
        }(),
        enumerate_polytope_vertices(omega_only.H, omega_only.h), 1e-9));
}

TEST(Membership, Basics) {
    Rng rng(47);
    const auto d = random_pairs(rng, 2, 20, Vector::Ones(2), 0.1);
    const auto omega = OmegaBox::symmetric(1, 5.0);
    const auto eb = estimate_error_bound(d, omega, 0.0);
    const auto fps = enumerate_vertices(build_fps(d, 2.0, eb.lambda_lb, 0.0, omega));
    for (const auto& v : fps.vertices) {
        const auto m = membership(v, fps);
        EXPECT_TRUE(m.inside);
        EXPECT_GE(m.margin, -1e-8);
    }
    const auto outside = membership(lti::ParameterVector{6.0, 0.0}, fps);
    EXPECT_FALSE(outside.inside);
    EXPECT_LT(outside.margin, 0.0);
    EXPECT_THROW(membership(Vector::Zero(3), fps), std::invalid_argument);
}

TEST(VertexMatrices, AffineInTheta) {
    Rng rng(48);
    const auto d = random_pairs(rng, 6, 80, Vector::Constant(6, 0.1), 0.1);
    const auto omega = OmegaBox::symmetric(3, 1.0);
    const auto eb = estimate_error_bound(d, omega, 0.0);
    const auto fps = enumerate_vertices(build_fps(d, 1.5, eb.lambda_lb, 0.0, omega));
    const auto mats = vertex_matrices(fps);
    ASSERT_EQ(mats.size(), fps.vertices.size());
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> gamma(mats.size());
        double total = 0.0;
        for (auto& g : gamma) total += (g = rng.exponential());
        Vector theta = Vector::Zero(6);
        Matrix A = Matrix::Zero(5, 5);
        Vector B = Vector::Zero(5);
        for (std::size_t i = 0; i < mats.size(); ++i) {
            const double g = gamma[i] / total;
            theta += g * fps.vertices[i].values();
            A += g * mats[i].A;
            B += g * mats[i].B;
        }
        const auto ss = lti::theta_to_state_space(lti::ParameterVector(theta));
        EXPECT_LT((ss.A - A).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((ss.B - B).cwiseAbs().maxCoeff(), 1e-12);
    }
    FeasibleParameterSet single = fps;
    single.vertices.resize(1);
    const auto one = vertex_matrices(single);
    EXPECT_EQ(one.front().A, lti::theta_to_state_space(fps.vertices.front()).A);
    single.vertices.clear();
    EXPECT_THROW(vertex_matrices(single), std::invalid_argument);
}

TEST(FpsRecord, RoundTrip) {
    Rng rng(49);
    const auto d = random_pairs(rng, 2, 10, Vector::Ones(2), 0.1);
    const auto omega = OmegaBox::symmetric(1, 5.0);
    const auto eb = estimate_error_bound(d, omega, 0.01);
    const auto fps = enumerate_vertices(build_fps(d, 2.5, eb.lambda_lb, 0.01, omega));
    const auto back = fps_from_record(to_record(fps));
    EXPECT_EQ(back.alpha, fps.alpha);
    EXPECT_EQ(back.lambda_lb, fps.lambda_lb);
    EXPECT_EQ(back.H, fps.H);
    EXPECT_EQ(back.h, fps.h);
    ASSERT_EQ(back.vertices.size(), fps.vertices.size());
    for (std::size_t i = 0; i < fps.vertices.size(); ++i) EXPECT_EQ(back.vertices[i].values(), fps.vertices[i].values());
    EXPECT_THROW(fps_from_record("fps 1\nalpha x\n"), Error);
}
