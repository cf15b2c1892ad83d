#pragma once

// Linear programs and block-diagonal semidefinite programs.
//
// LPs are solved through their dual in standard form by a dense revised
// simplex method. SDPs are solved by a primal-dual interior-point method
// (HKM direction, Mehrotra predictor-corrector) with a sparse Schur
// complement.

#include "smvrft/common.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/OrderingMethods>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace smvrft::conic {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class SolveStatus { optimal, infeasible, unbounded, numerical_failure };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::unbounded: return "unbounded";
        case SolveStatus::numerical_failure: return "numerical_failure";
    }
    return "unknown";
}

struct SolveReport {
    SolveStatus status = SolveStatus::numerical_failure;
    Vector x;
    double objective = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> block_min_eigenvalues;  // SDP only, unshifted
    Vector row_duals;                           // LP only, one per inequality row
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gap = 0.0;
    std::string message;

    bool ok() const { return status == SolveStatus::optimal; }
};

// ===========================================================================
// Linear programming

/// min c'x  s.t.  A x <= b,  lower <= x <= upper (infinite bounds allowed).
struct LinearProgram {
    Vector cost;
    Matrix A;
    Vector b;
    Vector lower;
    Vector upper;

    explicit LinearProgram(Eigen::Index n = 0)
        : cost(Vector::Zero(n)), A(0, n), b(0), lower(Vector::Constant(n, -kInf)), upper(Vector::Constant(n, kInf)) {}

    Eigen::Index variables() const { return cost.size(); }

    void add_row(const RowVector& coeffs, double rhs) {
        require(coeffs.size() == variables(), "LinearProgram: row has the wrong length");
        A.conservativeResize(A.rows() + 1, Eigen::NoChange);
        A.row(A.rows() - 1) = coeffs;
        b.conservativeResize(b.size() + 1);
        b(b.size() - 1) = rhs;
    }

    void validate() const {
        const auto n = variables();
        require(n >= 1, "LinearProgram: no variables");
        require(A.cols() == n && A.rows() == b.size(), "LinearProgram: inconsistent constraint dimensions");
        require(lower.size() == n && upper.size() == n, "LinearProgram: inconsistent bound dimensions");
        require(cost.allFinite() && A.allFinite() && b.allFinite(), "LinearProgram: non-finite data");
        for (Eigen::Index j = 0; j < n; ++j) {
            require(!std::isnan(lower(j)) && !std::isnan(upper(j)), "LinearProgram: NaN bound");
        }
    }
};

struct LpOptions {
    double tolerance = 1e-9;
    int max_iterations = 0;  // 0 picks a size-dependent cap
};

namespace detail {

enum class SimplexOutcome { optimal, infeasible, unbounded, iteration_limit };

struct SimplexResult {
    SimplexOutcome outcome = SimplexOutcome::iteration_limit;
    Vector w;   // primal of the standard form
    Vector pi;  // simplex multipliers
    int iterations = 0;
};

/// min h'w  s.t.  E w = f,  w >= 0, by two-phase revised simplex with an
/// explicit basis inverse. Artificial columns never re-enter.
inline SimplexResult standard_form_simplex(const Matrix& E, const Vector& f, const Vector& h, double tol, int max_iter) {
    const Eigen::Index m = E.rows();
    const Eigen::Index N = E.cols();
    SimplexResult res;

    Vector sign = Vector::Ones(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (f(i) < 0.0) sign(i) = -1.0;
    }
    const Matrix Es = sign.asDiagonal() * E;
    const Vector fs = sign.cwiseProduct(f);

    auto column = [&](Eigen::Index j) -> Vector {
        if (j < N) return Es.col(j);
        Vector e = Vector::Zero(m);
        e(j - N) = 1.0;
        return e;
    };

    std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
    std::vector<char> is_basic(static_cast<std::size_t>(N + m), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
        basis[static_cast<std::size_t>(i)] = N + i;
        is_basic[static_cast<std::size_t>(N + i)] = 1;
    }
    Matrix binv = Matrix::Identity(m, m);
    Vector xb = fs;

    auto refactor = [&]() {
        Matrix B(m, m);
        for (Eigen::Index i = 0; i < m; ++i) B.col(i) = column(basis[static_cast<std::size_t>(i)]);
        Eigen::PartialPivLU<Matrix> lu(B);
        binv = lu.inverse();
        xb = binv * fs;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (xb(i) < 0.0 && xb(i) > -tol) xb(i) = 0.0;
        }
    };

    auto pivot = [&](Eigen::Index r, Eigen::Index q, const Vector& alpha) {
        const double ar = alpha(r);
        binv.row(r) /= ar;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (i != r && alpha(i) != 0.0) binv.row(i) -= alpha(i) * binv.row(r);
        }
        is_basic[static_cast<std::size_t>(basis[static_cast<std::size_t>(r)])] = 0;
        basis[static_cast<std::size_t>(r)] = q;
        is_basic[static_cast<std::size_t>(q)] = 1;
    };

    auto run = [&](const Vector& cost) -> SimplexOutcome {
        const double cost_scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
        bool bland = false;
        double best = kInf;
        int stall = 0;
        int since_refactor = 0;
        while (res.iterations < max_iter) {
            Vector cb(m);
            for (Eigen::Index i = 0; i < m; ++i) cb(i) = cost(basis[static_cast<std::size_t>(i)]);
            const Vector pi = binv.transpose() * cb;
            const RowVector reduced = cost.head(N).transpose() - pi.transpose() * Es;

            Eigen::Index q = -1;
            double most = -tol * cost_scale;
            for (Eigen::Index j = 0; j < N; ++j) {
                if (is_basic[static_cast<std::size_t>(j)]) continue;
                if (reduced(j) < most) {
                    q = j;
                    if (bland) break;
                    most = reduced(j);
                }
            }
            if (q < 0) {
                res.pi = pi;
                return SimplexOutcome::optimal;
            }

            const Vector alpha = binv * Es.col(q);
            Eigen::Index r = -1;
            double ratio = kInf;
            for (Eigen::Index i = 0; i < m; ++i) {
                if (alpha(i) <= 1e-11) continue;
                const double t = std::max(xb(i), 0.0) / alpha(i);
                const bool better = t < ratio - 1e-12 ||
                                    (t <= ratio + 1e-12 && r >= 0 &&
                                     (bland ? basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(r)]
                                            : alpha(i) > alpha(r)));
                if (r < 0 || better) {
                    r = i;
                    ratio = t;
                }
            }
            if (r < 0) {
                return SimplexOutcome::unbounded;
            }
            xb -= ratio * alpha;
            xb(r) = ratio;
            pivot(r, q, alpha);
            ++res.iterations;
            if (++since_refactor >= 64) {
                refactor();
                since_refactor = 0;
            }

            double obj = 0.0;
            for (Eigen::Index i = 0; i < m; ++i) obj += cost(basis[static_cast<std::size_t>(i)]) * xb(i);
            if (obj < best - 1e-12 * (1.0 + std::abs(best == kInf ? 0.0 : best))) {
                best = obj;
                stall = 0;
                bland = false;
            } else if (++stall > 50) {
                bland = true;
            }
        }
        return SimplexOutcome::iteration_limit;
    };

    // Phase 1.
    Vector phase1 = Vector::Zero(N + m);
    phase1.tail(m).setOnes();
    auto outcome = run(phase1);
    if (outcome == SimplexOutcome::iteration_limit) {
        res.outcome = outcome;
        return res;
    }
    double infeas = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (basis[static_cast<std::size_t>(i)] >= N) infeas += std::max(xb(i), 0.0);
    }
    if (infeas > 1e-8 * (1.0 + fs.lpNorm<1>())) {
        res.outcome = SimplexOutcome::infeasible;
        return res;
    }
    // Drive zero-level artificials out of the basis where possible.
    for (Eigen::Index r = 0; r < m; ++r) {
        if (basis[static_cast<std::size_t>(r)] < N) continue;
        const RowVector row = binv.row(r) * Es;
        Eigen::Index q = -1;
        double best = 1e-7;
        for (Eigen::Index j = 0; j < N; ++j) {
            if (!is_basic[static_cast<std::size_t>(j)] && std::abs(row(j)) > best) {
                best = std::abs(row(j));
                q = j;
            }
        }
        if (q >= 0) {
            pivot(r, q, binv * Es.col(q));
            refactor();
        }
    }

    // Phase 2.
    Vector phase2 = Vector::Zero(N + m);
    phase2.head(N) = h;
    outcome = run(phase2);
    res.outcome = outcome;
    if (outcome == SimplexOutcome::optimal) {
        res.w = Vector::Zero(N);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto j = basis[static_cast<std::size_t>(i)];
            if (j < N) res.w(j) = std::max(xb(i), 0.0);
        }
        res.pi = sign.cwiseProduct(res.pi);
    }
    return res;
}

}  // namespace detail

/// Solves the LP through its dual  min h'w s.t. G'w = -c, w >= 0, where
/// G x <= h stacks the inequality rows and the finite bounds. The primal
/// solution is the vector of simplex multipliers.
inline SolveReport solve_lp(const LinearProgram& lp, const LpOptions& options = {}) {
    lp.validate();
    const Eigen::Index n = lp.variables();

    std::vector<RowVector> rows;
    std::vector<double> rhs;
    std::vector<Eigen::Index> origin;  // index into A rows, or -1 for bounds
    SolveReport report;
    for (Eigen::Index i = 0; i < lp.A.rows(); ++i) {
        rows.push_back(lp.A.row(i));
        rhs.push_back(lp.b(i));
        origin.push_back(i);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        if (lp.lower(j) > lp.upper(j)) {
            report.status = SolveStatus::infeasible;
            report.message = "lower bound exceeds upper bound";
            return report;
        }
        if (std::isfinite(lp.upper(j))) {
            RowVector e = RowVector::Zero(n);
            e(j) = 1.0;
            rows.push_back(e);
            rhs.push_back(lp.upper(j));
            origin.push_back(-1);
        }
        if (std::isfinite(lp.lower(j))) {
            RowVector e = RowVector::Zero(n);
            e(j) = -1.0;
            rows.push_back(e);
            rhs.push_back(-lp.lower(j));
            origin.push_back(-1);
        }
    }

    // Normalise rows; drop empty ones after checking them.
    std::vector<Eigen::Index> kept;
    std::vector<double> scale;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double s = rows[i].cwiseAbs().maxCoeff();
        if (s == 0.0) {
            if (rhs[i] < -1e-12) {
                report.status = SolveStatus::infeasible;
                report.message = "empty constraint row with negative right-hand side";
                return report;
            }
            continue;
        }
        kept.push_back(static_cast<Eigen::Index>(i));
        scale.push_back(s);
    }
    const auto N = static_cast<Eigen::Index>(kept.size());
    Matrix E(n, N);  // G'
    Vector h(N);
    for (Eigen::Index k = 0; k < N; ++k) {
        const auto i = static_cast<std::size_t>(kept[static_cast<std::size_t>(k)]);
        E.col(k) = rows[i].transpose() / scale[static_cast<std::size_t>(k)];
        h(k) = rhs[i] / scale[static_cast<std::size_t>(k)];
    }
    const double cscale = std::max(lp.cost.cwiseAbs().maxCoeff(), 1e-300);
    const Vector f = lp.cost.cwiseAbs().maxCoeff() > 0.0 ? Vector(-lp.cost / cscale) : Vector(Vector::Zero(n));
    const int cap = options.max_iterations > 0 ? options.max_iterations : static_cast<int>(50 * (n + N) + 1000);

    auto res = detail::standard_form_simplex(E, f, h, options.tolerance, cap);
    report.iterations = res.iterations;
    switch (res.outcome) {
        case detail::SimplexOutcome::optimal: {
            report.status = SolveStatus::optimal;
            report.x = res.pi;
            report.objective = lp.cost.dot(report.x);
            report.row_duals = Vector::Zero(lp.A.rows());
            for (Eigen::Index k = 0; k < N; ++k) {
                const auto o = origin[static_cast<std::size_t>(kept[static_cast<std::size_t>(k)])];
                if (o >= 0) report.row_duals(o) = res.w(k) * cscale / scale[static_cast<std::size_t>(k)];
            }
            double viol = 0.0;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                viol = std::max(viol, (rows[i].dot(report.x) - rhs[i]) / std::max(1.0, rows[i].cwiseAbs().maxCoeff()));
            }
            report.primal_residual = std::max(viol, 0.0);
            report.gap = std::abs(report.objective + h.dot(res.w) * cscale);
            if (report.primal_residual > 1e-6 * (1.0 + report.x.cwiseAbs().maxCoeff())) {
                report.status = SolveStatus::numerical_failure;
                report.message = "recovered point violates constraints";
            }
            return report;
        }
        case detail::SimplexOutcome::unbounded:
            report.status = SolveStatus::infeasible;
            report.message = "dual unbounded";
            return report;
        case detail::SimplexOutcome::infeasible: {
            auto probe = detail::standard_form_simplex(E, Vector::Zero(n), h, options.tolerance, cap);
            report.iterations += probe.iterations;
            if (probe.outcome == detail::SimplexOutcome::optimal) {
                report.status = SolveStatus::unbounded;
                report.message = "objective unbounded below";
            } else if (probe.outcome == detail::SimplexOutcome::unbounded) {
                report.status = SolveStatus::infeasible;
                report.message = "constraints inconsistent";
            } else {
                report.status = SolveStatus::numerical_failure;
                report.message = "feasibility probe hit the iteration limit";
            }
            return report;
        }
        case detail::SimplexOutcome::iteration_limit:
            report.status = SolveStatus::numerical_failure;
            report.message = "simplex iteration limit";
            return report;
    }
    return report;
}

// ===========================================================================
// Affine matrix expressions

struct LinearTerm {
    int row;
    int col;
    int var;
    double coeff;
};

/// F0 + sum_v x_v F_v with sparse coefficient matrices.
class AffineMatrix {
public:
    AffineMatrix() = default;
    explicit AffineMatrix(Matrix constant) : constant_(std::move(constant)) {}

    static AffineMatrix zero(Eigen::Index rows, Eigen::Index cols) { return AffineMatrix(Matrix::Zero(rows, cols)); }
    static AffineMatrix identity(Eigen::Index n) { return AffineMatrix(Matrix::Identity(n, n)); }
    static AffineMatrix scalar(double value) { return AffineMatrix(Matrix::Constant(1, 1, value)); }

    Eigen::Index rows() const { return constant_.rows(); }
    Eigen::Index cols() const { return constant_.cols(); }
    const Matrix& constant() const { return constant_; }
    const std::vector<LinearTerm>& terms() const { return terms_; }

    void add_term(int row, int col, int var, double coeff) {
        require(row >= 0 && row < rows() && col >= 0 && col < cols(), "AffineMatrix: term outside the matrix");
        require(var >= 0, "AffineMatrix: negative variable index");
        if (coeff != 0.0) terms_.push_back({row, col, var, coeff});
    }

    /// Sort by (var, col, row) and merge duplicates.
    AffineMatrix& compress() {
        std::sort(terms_.begin(), terms_.end(), [](const LinearTerm& a, const LinearTerm& b) {
            return std::tie(a.var, a.col, a.row) < std::tie(b.var, b.col, b.row);
        });
        std::vector<LinearTerm> merged;
        for (const auto& t : terms_) {
            if (!merged.empty() && merged.back().var == t.var && merged.back().row == t.row && merged.back().col == t.col) {
                merged.back().coeff += t.coeff;
            } else {
                merged.push_back(t);
            }
        }
        std::erase_if(merged, [](const LinearTerm& t) { return t.coeff == 0.0; });
        terms_ = std::move(merged);
        return *this;
    }

    AffineMatrix transpose() const {
        AffineMatrix out(constant_.transpose());
        out.terms_.reserve(terms_.size());
        for (const auto& t : terms_) out.terms_.push_back({t.col, t.row, t.var, t.coeff});
        return out;
    }

    Matrix evaluate(const Vector& x) const {
        Matrix out = constant_;
        for (const auto& t : terms_) {
            require(t.var < x.size(), "AffineMatrix: assignment too short");
            out(t.row, t.col) += t.coeff * x(t.var);
        }
        return out;
    }

    int max_variable() const {
        int v = -1;
        for (const auto& t : terms_) v = std::max(v, t.var);
        return v;
    }

    AffineMatrix& operator+=(const AffineMatrix& o) {
        require(rows() == o.rows() && cols() == o.cols(), "AffineMatrix: dimension mismatch in sum");
        constant_ += o.constant_;
        terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
        return *this;
    }
    AffineMatrix& operator-=(const AffineMatrix& o) { return *this += -o; }
    AffineMatrix& operator*=(double s) {
        constant_ *= s;
        for (auto& t : terms_) t.coeff *= s;
        return *this;
    }

    friend AffineMatrix operator+(AffineMatrix a, const AffineMatrix& b) { return a += b; }
    friend AffineMatrix operator-(AffineMatrix a, const AffineMatrix& b) { return a -= b; }
    friend AffineMatrix operator-(AffineMatrix a) { return a *= -1.0; }
    friend AffineMatrix operator*(double s, AffineMatrix a) { return a *= s; }
    friend AffineMatrix operator+(AffineMatrix a, const Matrix& b) { return a += AffineMatrix(b); }
    friend AffineMatrix operator-(AffineMatrix a, const Matrix& b) { return a -= AffineMatrix(b); }
    friend AffineMatrix operator+(const Matrix& a, AffineMatrix b) { return b += AffineMatrix(a); }
    friend AffineMatrix operator-(const Matrix& a, const AffineMatrix& b) { return AffineMatrix(a) - b; }

    friend AffineMatrix operator*(const Matrix& m, const AffineMatrix& a) {
        require(m.cols() == a.rows(), "AffineMatrix: dimension mismatch in left product");
        AffineMatrix out(m * a.constant_);
        for (const auto& t : a.terms_) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                const double v = m(i, t.row);
                if (v != 0.0) out.terms_.push_back({static_cast<int>(i), t.col, t.var, v * t.coeff});
            }
        }
        return out.compress();
    }

    friend AffineMatrix operator*(const AffineMatrix& a, const Matrix& m) {
        require(a.cols() == m.rows(), "AffineMatrix: dimension mismatch in right product");
        AffineMatrix out(a.constant_ * m);
        for (const auto& t : a.terms_) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const double v = m(t.col, j);
                if (v != 0.0) out.terms_.push_back({t.row, static_cast<int>(j), t.var, v * t.coeff});
            }
        }
        return out.compress();
    }

    /// Block matrix from a grid of expressions with consistent sizes.
    static AffineMatrix blocks(const std::vector<std::vector<AffineMatrix>>& grid) {
        require(!grid.empty() && !grid.front().empty(), "AffineMatrix::blocks: empty grid");
        std::vector<Eigen::Index> heights, widths;
        for (const auto& row : grid) {
            require(row.size() == grid.front().size(), "AffineMatrix::blocks: ragged grid");
            heights.push_back(row.front().rows());
        }
        for (const auto& cell : grid.front()) widths.push_back(cell.cols());
        const Eigen::Index total_rows = std::accumulate(heights.begin(), heights.end(), Eigen::Index{0});
        const Eigen::Index total_cols = std::accumulate(widths.begin(), widths.end(), Eigen::Index{0});
        AffineMatrix out(Matrix::Zero(total_rows, total_cols));
        Eigen::Index r0 = 0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            Eigen::Index c0 = 0;
            for (std::size_t j = 0; j < grid[i].size(); ++j) {
                const auto& cell = grid[i][j];
                require(cell.rows() == heights[i] && cell.cols() == widths[j], "AffineMatrix::blocks: size mismatch");
                out.constant_.block(r0, c0, cell.rows(), cell.cols()) = cell.constant_;
                for (const auto& t : cell.terms_) {
                    out.terms_.push_back({t.row + static_cast<int>(r0), t.col + static_cast<int>(c0), t.var, t.coeff});
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        return out.compress();
    }

private:
    Matrix constant_;
    std::vector<LinearTerm> terms_;
};

// ===========================================================================
// Semidefinite programs

/// A named matrix of decision variables. Symmetric variables share one
/// scalar between (i, j) and (j, i).
struct VariableBlock {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    bool symmetric = false;
    std::vector<int> index;  // row-major, rows * cols

    int at(Eigen::Index r, Eigen::Index c) const { return index[static_cast<std::size_t>(r * cols + c)]; }

    AffineMatrix expr() const {
        AffineMatrix out = AffineMatrix::zero(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) out.add_term(static_cast<int>(r), static_cast<int>(c), at(r, c), 1.0);
        }
        return out;
    }

    Matrix value(const Vector& x) const {
        Matrix out(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = x(at(r, c));
        }
        return out;
    }

    double scalar_value(const Vector& x) const { return x(at(0, 0)); }
};

enum class Strictness { nonstrict, strict };

struct LmiBlock {
    std::string label;
    AffineMatrix F;  // required: F(x) - margin * I >= 0
    double margin = 0.0;
};

/// min c'x subject to a list of affine LMI blocks.
class SemidefiniteProgram {
public:
    VariableBlock add_scalar(const std::string& name) { return add_variables(name, 1, 1, false); }
    VariableBlock add_symmetric(const std::string& name, Eigen::Index dim) { return add_variables(name, dim, dim, true); }
    VariableBlock add_matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        return add_variables(name, rows, cols, false);
    }

    int variable_count() const { return static_cast<int>(names_.size()); }
    const std::string& variable_name(int v) const { return names_[static_cast<std::size_t>(v)]; }
    const Vector& cost() const { return cost_; }
    const std::vector<LmiBlock>& blocks() const { return blocks_; }

    void add_cost(int var, double coeff) {
        require(var >= 0 && var < variable_count(), "SemidefiniteProgram: unknown variable in cost");
        cost_(var) += coeff;
    }

    /// Adds a 1x1 expression to the cost (its constant part is dropped).
    void add_cost(const AffineMatrix& scalar, double weight = 1.0) {
        require(scalar.rows() == 1 && scalar.cols() == 1, "SemidefiniteProgram: cost term must be 1x1");
        for (const auto& t : scalar.terms()) add_cost(t.var, weight * t.coeff);
    }

    /// Strict blocks get the margin 1e-7 (1 + ||F0||_F).
    int add_lmi(AffineMatrix F, Strictness strictness, const std::string& label) {
        const double margin = strictness == Strictness::strict ? 1e-7 * (1.0 + F.constant().norm()) : 0.0;
        return add_lmi_with_margin(std::move(F), margin, label);
    }

    int add_lmi_with_margin(AffineMatrix F, double margin, const std::string& label) {
        require(F.rows() == F.cols() && F.rows() > 0, "add_lmi: block must be square and nonempty");
        require(margin >= 0.0, "add_lmi: margin must be nonnegative");
        F.compress();
        require(F.max_variable() < variable_count(), "add_lmi: block references an unknown variable");
        check_symmetric(F, label);
        blocks_.push_back({label, std::move(F), margin});
        return static_cast<int>(blocks_.size()) - 1;
    }

    /// Sparse text dump: header lines, then "block row col var coeff" for the
    /// upper triangle, with var 0 the constant term and var v+1 variable v.
    std::string dump() const {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "variables " << variable_count() << "\nblocks " << blocks_.size() << "\ncost";
        for (Eigen::Index v = 0; v < cost_.size(); ++v) os << ' ' << cost_(v);
        os << '\n';
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            os << "block " << b << " dim " << blocks_[b].F.rows() << " margin " << blocks_[b].margin << " label "
               << (blocks_[b].label.empty() ? "-" : blocks_[b].label) << '\n';
        }
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const auto& F = blocks_[b].F;
            for (Eigen::Index c = 0; c < F.cols(); ++c) {
                for (Eigen::Index r = 0; r <= c; ++r) {
                    if (F.constant()(r, c) != 0.0) os << b << ' ' << r << ' ' << c << " 0 " << F.constant()(r, c) << '\n';
                }
            }
            for (const auto& t : F.terms()) {
                if (t.row <= t.col) os << b << ' ' << t.row << ' ' << t.col << ' ' << t.var + 1 << ' ' << t.coeff << '\n';
            }
        }
        return os.str();
    }

private:
    VariableBlock add_variables(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool symmetric) {
        require(rows >= 1 && cols >= 1, "SemidefiniteProgram: variable block must be nonempty");
        VariableBlock vb{name, rows, cols, symmetric, std::vector<int>(static_cast<std::size_t>(rows * cols), -1)};
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                int& slot = vb.index[static_cast<std::size_t>(r * cols + c)];
                if (symmetric && c < r) {
                    slot = vb.at(c, r);
                    continue;
                }
                slot = variable_count();
                names_.push_back(name + "(" + std::to_string(r) + "," + std::to_string(c) + ")");
            }
        }
        const Eigen::Index old = cost_.size();
        cost_.conservativeResize(variable_count());
        cost_.tail(variable_count() - old).setZero();
        return vb;
    }

    static void check_symmetric(const AffineMatrix& F, const std::string& label) {
        const double scale = 1.0 + F.constant().cwiseAbs().maxCoeff();
        require((F.constant() - F.constant().transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
                "add_lmi: constant term of block '" + label + "' is not symmetric");
        std::map<std::tuple<int, int, int>, double> coeffs;
        for (const auto& t : F.terms()) coeffs[{t.var, t.row, t.col}] += t.coeff;
        for (const auto& [key, value] : coeffs) {
            const auto& [var, r, c] = key;
            const auto it = coeffs.find({var, c, r});
            const double mirror = it == coeffs.end() ? 0.0 : it->second;
            require(std::abs(mirror - value) <= 1e-12 * (1.0 + std::abs(value)),
                    "add_lmi: block '" + label + "' is not symmetric in variable " + std::to_string(var));
        }
    }

    std::vector<std::string> names_;
    Vector cost_;
    std::vector<LmiBlock> blocks_;
};

/// Unshifted minimum eigenvalue of every block at `x`.
inline std::vector<double> check_feasibility(const Vector& x, const SemidefiniteProgram& sdp) {
    require(x.size() == sdp.variable_count(), "check_feasibility: assignment has the wrong length");
    std::vector<double> out;
    out.reserve(sdp.blocks().size());
    for (const auto& block : sdp.blocks()) {
        const Matrix value = block.F.evaluate(x);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (value + value.transpose()), Eigen::EigenvaluesOnly);
        out.push_back(eig.eigenvalues().minCoeff());
    }
    return out;
}

struct SdpOptions {
    double tolerance = 1e-8;
    int max_iterations = 120;
    double step_fraction = 0.98;
    bool phase_one_on_failure = true;
    bool verbose = false;
};

namespace detail {

struct Entry {
    int r;
    int c;
    double v;
};

struct CanonicalBlock {
    Eigen::Index dim = 0;
    Matrix C;
    std::vector<int> vars;                  // ascending
    std::vector<std::vector<Entry>> A;      // A[k] for vars[k], both triangles
    std::vector<Eigen::Index> slots;        // Schur value positions, lower-triangular pairs
    double scale = 1.0;
};

inline double trace_product(const std::vector<Entry>& a, const Matrix& m) {
    double acc = 0.0;
    for (const auto& e : a) acc += e.v * m(e.c, e.r);
    return acc;
}

/// Largest step in (0, inf] keeping X + a dX positive semidefinite.
inline double max_step(const Matrix& X, const Matrix& dX) {
    Eigen::LLT<Matrix> llt(X);
    if (llt.info() != Eigen::Success) return 0.0;
    const Matrix Linv_dX = llt.matrixL().solve(dX);
    const Matrix S = llt.matrixL().solve(Linv_dX.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
    const double lmin = eig.eigenvalues().minCoeff();
    return lmin < 0.0 ? -1.0 / lmin : kInf;
}

/// Interior-point core on the scaled problem
///   max b'y  s.t.  Z = C - sum y_i A_i >= 0   with primal   min <C,X>, <A_i,X> = b_i, X >= 0.
struct IpmResult {
    SolveStatus status = SolveStatus::numerical_failure;
    Vector y;
    int iterations = 0;
    double rel_primal = 0.0;
    double rel_dual = 0.0;
    double rel_gap = 0.0;
    bool diverged_primal = false;
    bool diverged_dual = false;
    std::string message;
};

inline IpmResult interior_point(std::vector<CanonicalBlock>& blocks, const Vector& b, const SdpOptions& opt) {
    const auto m = b.size();
    IpmResult out;

    // Schur complement sparsity pattern (lower triangle).
    std::vector<Eigen::Triplet<double>> pattern;
    for (Eigen::Index i = 0; i < m; ++i) pattern.emplace_back(i, i, 0.0);
    for (const auto& blk : blocks) {
        for (std::size_t ki = 0; ki < blk.vars.size(); ++ki) {
            for (std::size_t kj = 0; kj <= ki; ++kj) pattern.emplace_back(blk.vars[ki], blk.vars[kj], 0.0);
        }
    }
    Eigen::SparseMatrix<double> M(m, m);
    M.setFromTriplets(pattern.begin(), pattern.end());
    M.makeCompressed();
    pattern.clear();
    pattern.shrink_to_fit();
    auto slot_of = [&](Eigen::Index row, Eigen::Index col) {
        const auto* inner = M.innerIndexPtr();
        const auto begin = M.outerIndexPtr()[col];
        const auto end = M.outerIndexPtr()[col + 1];
        const auto* pos = std::lower_bound(inner + begin, inner + end, static_cast<int>(row));
        return static_cast<Eigen::Index>(pos - inner);
    };
    std::vector<Eigen::Index> diag_slot(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) diag_slot[static_cast<std::size_t>(i)] = slot_of(i, i);
    for (auto& blk : blocks) {
        blk.slots.clear();
        for (std::size_t ki = 0; ki < blk.vars.size(); ++ki) {
            for (std::size_t kj = 0; kj <= ki; ++kj) blk.slots.push_back(slot_of(blk.vars[ki], blk.vars[kj]));
        }
    }
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    ldlt.analyzePattern(M);

    // Starting point.
    const std::size_t nb = blocks.size();
    std::vector<Matrix> X(nb), Z(nb), Zinv(nb), Rd(nb), dX(nb), dZ(nb), dXa(nb), dZa(nb);
    double total_dim = 0.0;
    double normC = 0.0;
    const double normb = b.norm();
    for (std::size_t k = 0; k < nb; ++k) {
        const auto& blk = blocks[k];
        const double n = static_cast<double>(blk.dim);
        total_dim += n;
        normC += blk.C.squaredNorm();
        double max_a = 0.0;
        double xi = std::max(10.0, std::sqrt(n));
        for (std::size_t v = 0; v < blk.vars.size(); ++v) {
            double fro = 0.0;
            for (const auto& e : blk.A[v]) fro += e.v * e.v;
            fro = std::sqrt(fro);
            max_a = std::max(max_a, fro);
            xi = std::max(xi, std::sqrt(n) * (1.0 + std::abs(b(blk.vars[v]))) / (1.0 + fro));
        }
        const double eta = std::max({10.0, std::sqrt(n), blk.C.norm(), max_a});
        X[k] = xi * Matrix::Identity(blk.dim, blk.dim);
        Z[k] = eta * Matrix::Identity(blk.dim, blk.dim);
    }
    normC = std::sqrt(normC);
    Vector y = Vector::Zero(m);

    auto apply_A = [&](const CanonicalBlock& blk, const Vector& coeffs) {
        Matrix S = Matrix::Zero(blk.dim, blk.dim);
        for (std::size_t v = 0; v < blk.vars.size(); ++v) {
            const double c = coeffs(blk.vars[v]);
            if (c == 0.0) continue;
            for (const auto& e : blk.A[v]) S(e.r, e.c) += c * e.v;
        }
        return S;
    };

    Matrix W;
    int slow_steps = 0;
    // Best iterate by max(rp, rd, gap); late iterations can lose accuracy.
    double best_merit = kInf;
    IpmResult best;
    int since_best = 0;
    for (int iter = 0; iter <= opt.max_iterations; ++iter) {
        out.iterations = iter;
        // Residuals.
        Vector rp = b;
        double pobj = 0.0;
        double mu = 0.0;
        double rd_norm = 0.0;
        double x_norm = 0.0;
        bool factor_ok = true;
        for (std::size_t k = 0; k < nb; ++k) {
            const auto& blk = blocks[k];
            for (std::size_t v = 0; v < blk.vars.size(); ++v) rp(blk.vars[v]) -= trace_product(blk.A[v], X[k]);
            Rd[k] = blk.C - Z[k] - apply_A(blk, y);
            rd_norm += Rd[k].squaredNorm();
            pobj += (blk.C.cwiseProduct(X[k])).sum();
            mu += (X[k].cwiseProduct(Z[k])).sum();
            x_norm = std::max(x_norm, X[k].norm());
            Eigen::LLT<Matrix> llt(Z[k]);
            if (llt.info() != Eigen::Success) {
                factor_ok = false;
                break;
            }
            Zinv[k] = llt.solve(Matrix::Identity(blk.dim, blk.dim));
        }
        if (!factor_ok) {
            out.message = "dual slack lost definiteness";
            break;
        }
        mu /= total_dim;
        const double dobj = b.dot(y);
        out.rel_primal = rp.norm() / (1.0 + normb);
        out.rel_dual = std::sqrt(rd_norm) / (1.0 + normC);
        out.rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
        const double rel_mu = mu * total_dim / (1.0 + std::abs(pobj) + std::abs(dobj));
        out.y = y;
        const double merit = std::max({out.rel_primal, out.rel_dual, out.rel_gap});
        if (merit < 0.5 * best_merit) {
            best_merit = merit;
            best = out;
            since_best = 0;
        } else if (++since_best >= 20 && best_merit < 1e-5) {
            out.message = "no further progress";
            break;
        }
        if (opt.verbose) {
            std::fprintf(stderr, "ipm %3d  pobj % .8e  dobj % .8e  rp %.2e  rd %.2e  gap %.2e  mu %.2e\n", iter, pobj, dobj,
                         out.rel_primal, out.rel_dual, out.rel_gap, mu);
        }
        if (out.rel_primal < opt.tolerance && out.rel_dual < opt.tolerance && out.rel_gap < opt.tolerance &&
            rel_mu < opt.tolerance * 10.0) {
            out.status = SolveStatus::optimal;
            return out;
        }
        if (x_norm > 1e10 && out.rel_dual > 1e-3 * out.rel_primal) {
            out.diverged_primal = true;
            out.message = "primal iterates diverged";
            break;
        }
        if (y.norm() > 1e10) {
            out.diverged_dual = true;
            out.message = "dual iterates diverged";
            break;
        }
        if (iter == opt.max_iterations) {
            out.message = "iteration limit";
            break;
        }

        // Schur complement M_ij = <A_i, X A_j Z^-1>.
        std::fill(M.valuePtr(), M.valuePtr() + M.nonZeros(), 0.0);
        for (std::size_t k = 0; k < nb; ++k) {
            const auto& blk = blocks[k];
            const auto nv = blk.vars.size();
            for (std::size_t kj = 0; kj < nv; ++kj) {
                W.setZero(blk.dim, blk.dim);
                for (const auto& e : blk.A[kj]) W.noalias() += e.v * X[k].col(e.r) * Zinv[k].row(e.c);
                for (std::size_t ki = kj; ki < nv; ++ki) {
                    M.valuePtr()[blk.slots[ki * (ki + 1) / 2 + kj]] += trace_product(blk.A[ki], W);
                }
            }
        }
        double max_diag = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) max_diag = std::max(max_diag, M.valuePtr()[diag_slot[static_cast<std::size_t>(i)]]);
        double reg = 0.0;
        bool solved = false;
        for (int attempt = 0; attempt < 6; ++attempt) {
            ldlt.factorize(M);
            if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all()) {
                solved = true;
                break;
            }
            const double add = (reg == 0.0 ? 1e-14 : reg * 99.0) * std::max(max_diag, 1e-300);
            reg = reg == 0.0 ? 1e-14 : reg * 100.0;
            for (Eigen::Index i = 0; i < m; ++i) M.valuePtr()[diag_slot[static_cast<std::size_t>(i)]] += add;
        }
        if (!solved) {
            out.message = "Schur complement factorisation failed";
            break;
        }

        auto direction = [&](double sigma_mu, bool corrector, Vector& dy) {
            Vector rhs = b;
            std::vector<Matrix> H(nb);
            for (std::size_t k = 0; k < nb; ++k) {
                H[k] = sigma_mu * Zinv[k] - X[k] * Rd[k] * Zinv[k];
                if (corrector) H[k] -= dXa[k] * dZa[k] * Zinv[k];
                const auto& blk = blocks[k];
                for (std::size_t v = 0; v < blk.vars.size(); ++v) rhs(blk.vars[v]) -= trace_product(blk.A[v], H[k]);
            }
            dy = ldlt.solve(rhs);
            for (std::size_t k = 0; k < nb; ++k) {
                dZ[k] = Rd[k] - apply_A(blocks[k], dy);
                Matrix d = H[k] - X[k] - X[k] * dZ[k] * Zinv[k] + X[k] * Rd[k] * Zinv[k];
                dX[k] = 0.5 * (d + d.transpose());
            }
        };
        auto steps = [&]() {
            double ap = 1.0, ad = 1.0;
            for (std::size_t k = 0; k < nb; ++k) {
                ap = std::min(ap, opt.step_fraction * max_step(X[k], dX[k]));
                ad = std::min(ad, opt.step_fraction * max_step(Z[k], dZ[k]));
            }
            return std::pair{ap, ad};
        };

        Vector dy;
        direction(0.0, false, dy);
        auto [ap, ad] = steps();
        double mu_aff = 0.0;
        for (std::size_t k = 0; k < nb; ++k) {
            mu_aff += ((X[k] + ap * dX[k]).cwiseProduct(Z[k] + ad * dZ[k])).sum();
            dXa[k] = dX[k];
            dZa[k] = dZ[k];
        }
        mu_aff /= total_dim;
        const double ratio = std::clamp(mu_aff / mu, 0.0, 1.0);
        const double sigma = std::pow(ratio, 3.0);
        direction(sigma * mu, true, dy);
        std::tie(ap, ad) = steps();
        // Back off until every updated block still factors.
        std::vector<Matrix> Xn(nb), Zn(nb);
        bool accepted = false;
        for (int back = 0; back < 30 && !accepted; ++back) {
            accepted = true;
            for (std::size_t k = 0; k < nb && accepted; ++k) {
                Xn[k] = X[k] + ap * dX[k];
                Zn[k] = Z[k] + ad * dZ[k];
                Xn[k] = 0.5 * (Xn[k] + Xn[k].transpose());
                Zn[k] = 0.5 * (Zn[k] + Zn[k].transpose());
                accepted = Eigen::LLT<Matrix>(Xn[k]).info() == Eigen::Success &&
                           Eigen::LLT<Matrix>(Zn[k]).info() == Eigen::Success;
            }
            if (!accepted) {
                ap *= 0.7;
                ad *= 0.7;
            }
        }
        if (!accepted) {
            out.message = "iterates lost definiteness";
            break;
        }
        X.swap(Xn);
        Z.swap(Zn);
        y += ad * dy;
        slow_steps = (std::max(ap, ad) < 1e-6) ? slow_steps + 1 : 0;
        if (slow_steps >= 5) {
            out.message = "step lengths stalled";
            break;
        }
    }
    // Accept a slightly inaccurate solution rather than failing outright.
    if (!out.diverged_primal && !out.diverged_dual && best_merit < std::max({out.rel_primal, out.rel_dual, out.rel_gap})) {
        const std::string why = out.message;
        out.y = best.y;
        out.rel_primal = best.rel_primal;
        out.rel_dual = best.rel_dual;
        out.rel_gap = best.rel_gap;
        out.message = why + "; best iterate kept";
    }
    if (out.rel_primal < 100.0 * opt.tolerance && out.rel_dual < 100.0 * opt.tolerance && out.rel_gap < 1e-6 &&
        !out.diverged_primal && !out.diverged_dual) {
        out.status = SolveStatus::optimal;
        out.message = "converged to reduced accuracy (" + out.message + ")";
    }
    return out;
}

inline std::vector<CanonicalBlock> canonicalise(const SemidefiniteProgram& sdp, std::vector<char>& used) {
    std::vector<CanonicalBlock> out;
    used.assign(static_cast<std::size_t>(sdp.variable_count()), 0);
    for (const auto& block : sdp.blocks()) {
        CanonicalBlock cb;
        cb.dim = block.F.rows();
        double scale = block.F.constant().norm();
        std::map<int, std::vector<Entry>> per_var;
        for (const auto& t : block.F.terms()) per_var[t.var].push_back({t.row, t.col, -t.coeff});
        for (const auto& [var, entries] : per_var) {
            double fro = 0.0;
            for (const auto& e : entries) fro += e.v * e.v;
            scale = std::max(scale, std::sqrt(fro));
        }
        if (scale == 0.0) scale = 1.0;
        cb.scale = scale;
        cb.C = (block.F.constant() - block.margin * Matrix::Identity(cb.dim, cb.dim)) / scale;
        for (auto& [var, entries] : per_var) {
            for (auto& e : entries) e.v /= scale;
            cb.vars.push_back(var);
            cb.A.push_back(std::move(entries));
            used[static_cast<std::size_t>(var)] = 1;
        }
        out.push_back(std::move(cb));
    }
    return out;
}

}  // namespace detail

/// Appends a phase-one problem: min t s.t. F_b(x) + t I >= margin_b I for
/// every block and t >= -1. Its optimal t is positive exactly when the
/// original constraints are infeasible.
inline SemidefiniteProgram phase_one_problem(const SemidefiniteProgram& sdp, int& t_index) {
    SemidefiniteProgram p1;
    if (sdp.variable_count() > 0) p1.add_matrix("x", sdp.variable_count(), 1);
    const auto t = p1.add_scalar("t");
    t_index = t.at(0, 0);
    for (const auto& block : sdp.blocks()) {
        AffineMatrix F = block.F;
        for (Eigen::Index i = 0; i < F.rows(); ++i) F.add_term(static_cast<int>(i), static_cast<int>(i), t_index, 1.0);
        p1.add_lmi_with_margin(std::move(F), block.margin, block.label);
    }
    p1.add_lmi_with_margin(t.expr() + Matrix::Ones(1, 1), 0.0, "phase-one floor");
    p1.add_cost(t_index, 1.0);
    return p1;
}

inline SolveReport solve_sdp(const SemidefiniteProgram& sdp, const SdpOptions& options = {}) {
    const int nvar = sdp.variable_count();
    require(nvar >= 1, "solve_sdp: no variables");
    SolveReport report;

    std::vector<char> used;
    auto blocks = detail::canonicalise(sdp, used);
    for (int v = 0; v < nvar; ++v) {
        if (!used[static_cast<std::size_t>(v)]) {
            throw std::invalid_argument("solve_sdp: variable '" + sdp.variable_name(v) + "' appears in no block");
        }
    }
    const double cmax = sdp.cost().cwiseAbs().maxCoeff();
    const Vector b = cmax > 0.0 ? Vector(-sdp.cost() / cmax) : Vector(Vector::Zero(nvar));

    auto ipm = detail::interior_point(blocks, b, options);
    report.iterations = ipm.iterations;
    report.primal_residual = ipm.rel_primal;
    report.dual_residual = ipm.rel_dual;
    report.gap = ipm.rel_gap;
    report.message = ipm.message;
    report.x = ipm.y;
    if (report.x.size() == nvar) {
        report.objective = sdp.cost().dot(report.x);
        report.block_min_eigenvalues = check_feasibility(report.x, sdp);
    }

    if (ipm.status == SolveStatus::optimal) {
        // Independent check against the unscaled blocks.
        double worst = kInf;
        std::size_t worst_block = 0;
        for (std::size_t k = 0; k < sdp.blocks().size(); ++k) {
            const double slack = report.block_min_eigenvalues[k] - sdp.blocks()[k].margin;
            double tol = 1e-7 * (1.0 + blocks[k].scale);
            if (sdp.blocks()[k].margin > 0.0) tol = std::min(tol, sdp.blocks()[k].margin);
            if (slack + tol < worst) {
                worst = slack + tol;
                worst_block = k;
            }
        }
        if (worst >= 0.0) {
            report.status = SolveStatus::optimal;
            return report;
        }
        report.message = "solution violates block '" + sdp.blocks()[worst_block].label + "'";
    }

    if (!options.phase_one_on_failure) {
        report.status = SolveStatus::numerical_failure;
        return report;
    }
    int t_index = 0;
    const auto p1 = phase_one_problem(sdp, t_index);
    SdpOptions p1_options = options;
    p1_options.phase_one_on_failure = false;
    const auto r1 = solve_sdp(p1, p1_options);
    double threshold = 1.0;
    for (const auto& blk : blocks) threshold = std::max(threshold, blk.scale);
    threshold *= options.tolerance;
    for (const auto& blk : sdp.blocks()) {
        if (blk.margin > 0.0) threshold = std::min(threshold, 0.5 * blk.margin);
    }
    if (r1.ok() && r1.x(t_index) > threshold) {
        report.status = SolveStatus::infeasible;
        std::ostringstream os;
        os << "constraints infeasible (phase-one value " << r1.x(t_index) << " above " << threshold << ")";
        report.message = os.str();
    } else if (r1.ok() && ipm.diverged_dual) {
        report.status = SolveStatus::unbounded;
        report.message = "objective unbounded below";
    } else {
        report.status = SolveStatus::numerical_failure;
        std::ostringstream os;
        os << "interior point failed: " << ipm.message << "; residuals p=" << ipm.rel_primal << " d=" << ipm.rel_dual
           << " gap=" << ipm.rel_gap;
        if (!report.block_min_eigenvalues.empty()) {
            const auto it = std::min_element(report.block_min_eigenvalues.begin(), report.block_min_eigenvalues.end());
            const auto k = static_cast<std::size_t>(it - report.block_min_eigenvalues.begin());
            os << "; weakest block '" << sdp.blocks()[k].label << "' min eig " << *it;
        }
        report.message = os.str();
    }
    return report;
}

}  // namespace smvrft::conic
