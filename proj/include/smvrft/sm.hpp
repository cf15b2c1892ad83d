#pragma once

// Set Membership identification: error-bound LP, the feasible parameter set
// as an H-polytope, its vertices and an outer bounding box.

#include "smvrft/common.hpp"
#include "smvrft/conic.hpp"
#include "smvrft/lti.hpp"
#include "smvrft/signals.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace smvrft::sm {

/// Componentwise prior bounds on theta.
struct OmegaBox {
    Vector lower;
    Vector upper;

    static OmegaBox symmetric(int order, double bound = 10.0) {
        return OmegaBox{Vector::Constant(2 * order, -bound), Vector::Constant(2 * order, bound)};
    }

    Eigen::Index dimension() const { return lower.size(); }

    void validate() const {
        require(lower.size() == upper.size() && lower.size() >= 2 && lower.size() % 2 == 0,
                "OmegaBox: bounds must have equal even length");
        require((lower.array() < upper.array()).all(), "OmegaBox: lower must be below upper");
        require(lower.allFinite() && upper.allFinite(), "OmegaBox: bounds must be finite");
    }

    bool contains(const Vector& theta) const {
        return ((theta.array() >= lower.array()) && (theta.array() <= upper.array())).all();
    }
};

struct ErrorBound {
    double lambda_lb = 0.0;
    lti::ParameterVector theta;
};

/// lambda_lb = min lambda  s.t.  |y(k+1) - theta' phi(k)| <= lambda + noise_bound,
/// theta in Omega, lambda >= 0.
inline ErrorBound estimate_error_bound(const signals::RegressorData& data, const OmegaBox& omega, double noise_bound) {
    omega.validate();
    require(data.phi.rows() >= 1, "estimate_error_bound: at least one data pair is required");
    require(data.phi.cols() == omega.dimension(), "estimate_error_bound: regressor and Omega dimensions differ");
    require(noise_bound >= 0.0, "estimate_error_bound: noise bound must be nonnegative");

    const Eigen::Index p = data.phi.cols();
    const Eigen::Index rows = data.phi.rows();
    conic::LinearProgram lp(p + 1);
    lp.cost(p) = 1.0;
    lp.A.resize(2 * rows, p + 1);
    lp.b.resize(2 * rows);
    lp.A.topLeftCorner(rows, p) = data.phi;
    lp.A.bottomLeftCorner(rows, p) = -data.phi;
    lp.A.col(p).setConstant(-1.0);
    lp.b.head(rows) = data.target.array() + noise_bound;
    lp.b.tail(rows) = noise_bound - data.target.array();
    lp.lower.head(p) = omega.lower;
    lp.upper.head(p) = omega.upper;
    lp.lower(p) = 0.0;

    const auto r = conic::solve_lp(lp);
    if (r.status == conic::SolveStatus::infeasible || r.status == conic::SolveStatus::unbounded) {
        throw Error(ErrorKind::numerical, "estimate_error_bound: internal error, bound LP reported " +
                                              std::string(conic::to_string(r.status)));
    }
    if (!r.ok()) {
        throw Error(ErrorKind::numerical, "estimate_error_bound: LP solver failed: " + r.message);
    }
    return ErrorBound{std::max(r.x(p), 0.0), lti::ParameterVector(omega.lower.cwiseMax(r.x.head(p)).cwiseMin(omega.upper))};
}

// ---------------------------------------------------------------------------

/// Theta(alpha) = { theta in Omega : |y(k+1) - theta' phi(k)| <= alpha lambda_lb + noise_bound }
/// as H theta <= h, optionally with its vertices.
struct FeasibleParameterSet {
    Matrix H;
    Vector h;
    std::vector<lti::ParameterVector> vertices;
    double alpha = 1.0;
    double lambda_lb = 0.0;
    double noise_bound = 0.0;
    std::size_t data_rows = 0;
    bool outer_box = false;  // vertices are those of the bounding box

    Eigen::Index dimension() const { return H.cols(); }
    int order() const { return static_cast<int>(H.cols() / 2); }
};

inline FeasibleParameterSet build_fps(const signals::RegressorData& data, double alpha, double lambda_lb,
                                      double noise_bound, const OmegaBox& omega) {
    omega.validate();
    require(alpha >= 1.0, "build_fps: alpha must be at least 1");
    require(lambda_lb >= 0.0 && noise_bound >= 0.0, "build_fps: bounds must be nonnegative");
    require(data.phi.cols() == omega.dimension(), "build_fps: regressor and Omega dimensions differ");
    const Eigen::Index p = data.phi.cols();
    const Eigen::Index rows = data.phi.rows();
    const double bound = alpha * lambda_lb + noise_bound;

    FeasibleParameterSet fps;
    fps.alpha = alpha;
    fps.lambda_lb = lambda_lb;
    fps.noise_bound = noise_bound;
    fps.data_rows = static_cast<std::size_t>(2 * rows);
    fps.H.resize(2 * rows + 2 * p, p);
    fps.h.resize(2 * rows + 2 * p);
    fps.H.topRows(rows) = data.phi;
    fps.h.head(rows) = data.target.array() + bound;
    fps.H.middleRows(rows, rows) = -data.phi;
    fps.h.segment(rows, rows) = bound - data.target.array();
    fps.H.bottomRows(2 * p).setZero();
    for (Eigen::Index j = 0; j < p; ++j) {
        fps.H(2 * rows + 2 * j, j) = 1.0;
        fps.h(2 * rows + 2 * j) = omega.upper(j);
        fps.H(2 * rows + 2 * j + 1, j) = -1.0;
        fps.h(2 * rows + 2 * j + 1) = -omega.lower(j);
    }
    return fps;
}

struct Membership {
    bool inside = false;
    double margin = 0.0;  // min over rows of h - H theta
};

inline Membership membership(const Vector& theta, const FeasibleParameterSet& fps, double tol = 1e-8) {
    require(theta.size() == fps.dimension(), "membership: dimension mismatch");
    const double margin = (fps.h - fps.H * theta).minCoeff();
    return Membership{margin >= -tol, margin};
}

inline Membership membership(const lti::ParameterVector& theta, const FeasibleParameterSet& fps, double tol = 1e-8) {
    return membership(theta.values(), fps, tol);
}

// ---------------------------------------------------------------------------

/// Indices of the rows of H x <= h that are not implied by the others,
/// found by maximising each row over the remaining ones.
inline std::vector<Eigen::Index> irredundant_rows(const Matrix& H, const Vector& h, double tol = 1e-9) {
    const Eigen::Index rows = H.rows();
    const Eigen::Index p = H.cols();
    const Vector norms = H.rowwise().norm();
    std::vector<char> keep(static_cast<std::size_t>(rows), 1);

    for (Eigen::Index i = 0; i < rows; ++i) {
        if (norms(i) == 0.0) {
            require(h(i) >= 0.0, "irredundant_rows: empty polytope (zero row with negative offset)");
            keep[static_cast<std::size_t>(i)] = 0;
        }
    }

    for (Eigen::Index i = 0; i < rows; ++i) {
        if (!keep[static_cast<std::size_t>(i)]) continue;
        std::vector<Eigen::Index> others;
        for (Eigen::Index k = 0; k < rows; ++k) {
            if (k != i && keep[static_cast<std::size_t>(k)]) others.push_back(k);
        }
        conic::LinearProgram lp(p);
        lp.cost = -H.row(i).transpose();
        lp.A.resize(static_cast<Eigen::Index>(others.size()), p);
        lp.b.resize(static_cast<Eigen::Index>(others.size()));
        for (std::size_t k = 0; k < others.size(); ++k) {
            lp.A.row(static_cast<Eigen::Index>(k)) = H.row(others[k]);
            lp.b(static_cast<Eigen::Index>(k)) = h(others[k]);
        }
        const auto r = conic::solve_lp(lp);
        if (r.status == conic::SolveStatus::infeasible) {
            throw Error(ErrorKind::infeasible, "irredundant_rows: polytope is empty");
        }
        if (r.ok() && -r.objective <= h(i) + tol * std::max(1.0, norms(i))) {
            keep[static_cast<std::size_t>(i)] = 0;
        } else if (!r.ok() && r.status != conic::SolveStatus::unbounded) {
            throw Error(ErrorKind::numerical, "irredundant_rows: LP failed: " + r.message);
        }
    }
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (keep[static_cast<std::size_t>(i)]) out.push_back(i);
    }
    return out;
}

struct EnumerationOptions {
    std::size_t vertex_cap = 5000;
    bool prune = true;
    double zero_tol = 1e-9;
    double merge_tol = 1e-9;
};

namespace detail {

/// Fixed-width bitset sized at run time.
class RowSet {
public:
    explicit RowSet(std::size_t bits = 0) : words_((bits + 63) / 64, 0) {}
    void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
    bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
    std::size_t count() const {
        std::size_t c = 0;
        for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
        return c;
    }
    RowSet operator&(const RowSet& o) const {
        RowSet out = *this;
        for (std::size_t k = 0; k < words_.size(); ++k) out.words_[k] &= o.words_[k];
        return out;
    }
    std::size_t common_count(const RowSet& o) const {
        std::size_t c = 0;
        for (std::size_t k = 0; k < words_.size(); ++k) c += static_cast<std::size_t>(std::popcount(words_[k] & o.words_[k]));
        return c;
    }
    template <class F>
    void for_each(F&& f) const {
        for (std::size_t k = 0; k < words_.size(); ++k) {
            auto w = words_[k];
            while (w) {
                const int b = std::countr_zero(w);
                f(k * 64 + static_cast<std::size_t>(b));
                w &= w - 1;
            }
        }
    }

private:
    std::vector<std::uint64_t> words_;
};

struct Ray {
    Vector r;
    RowSet zeros;
};

}  // namespace detail

/// Vertices of the bounded polytope { x : H x <= h } by the double-description
/// method on the homogenised cone { (x, t) : h t - H x >= 0, t >= 0 }.
inline std::vector<Vector> enumerate_polytope_vertices(const Matrix& H_in, const Vector& h_in,
                                                       const EnumerationOptions& options = {}) {
    require(H_in.rows() == h_in.size(), "enumerate_vertices: inconsistent H-representation");
    const Eigen::Index p = H_in.cols();
    require(p >= 1, "enumerate_vertices: empty dimension");

    Matrix H = H_in;
    Vector h = h_in;
    if (options.prune) {
        const auto rows = irredundant_rows(H_in, h_in);
        H.resize(static_cast<Eigen::Index>(rows.size()), p);
        h.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            H.row(static_cast<Eigen::Index>(k)) = H_in.row(rows[k]);
            h(static_cast<Eigen::Index>(k)) = h_in(rows[k]);
        }
    }

    const Eigen::Index D = p + 1;
    const Eigen::Index R = H.rows() + 1;
    Matrix A(R, D);  // cone rows, A y >= 0, y = (x, t)
    A.topLeftCorner(R - 1, p) = -H;
    A.topRightCorner(R - 1, 1) = h;
    A.row(R - 1).setZero();
    A(R - 1, p) = 1.0;
    for (Eigen::Index i = 0; i < R; ++i) {
        const double s = A.row(i).norm();
        if (s > 0.0) A.row(i) /= s;
    }

    Eigen::ColPivHouseholderQR<Matrix> qr(A.transpose());
    qr.setThreshold(1e-10);
    if (qr.rank() < D) {
        throw Error(ErrorKind::input, "enumerate_vertices: polytope is unbounded (constraint rank deficient)");
    }
    std::vector<Eigen::Index> initial(static_cast<std::size_t>(D));
    for (Eigen::Index k = 0; k < D; ++k) initial[static_cast<std::size_t>(k)] = qr.colsPermutation().indices()(k);
    std::vector<char> processed(static_cast<std::size_t>(R), 0);
    Matrix AS(D, D);
    for (Eigen::Index k = 0; k < D; ++k) {
        AS.row(k) = A.row(initial[static_cast<std::size_t>(k)]);
        processed[static_cast<std::size_t>(initial[static_cast<std::size_t>(k)])] = 1;
    }
    const Matrix rays0 = AS.fullPivLu().inverse();

    auto zero_set = [&](const Vector& r) {
        detail::RowSet z(static_cast<std::size_t>(R));
        const Vector s = A * r;
        const double scale = r.norm();
        for (Eigen::Index i = 0; i < R; ++i) {
            if (processed[static_cast<std::size_t>(i)] && std::abs(s(i)) <= options.zero_tol * scale) {
                z.set(static_cast<std::size_t>(i));
            }
        }
        return z;
    };

    std::vector<detail::Ray> rays;
    for (Eigen::Index k = 0; k < D; ++k) {
        Vector r = rays0.col(k);
        r /= r.cwiseAbs().maxCoeff();
        rays.push_back({r, detail::RowSet(static_cast<std::size_t>(R))});
    }
    for (auto& ray : rays) ray.zeros = zero_set(ray.r);

    const std::size_t blowup = std::max<std::size_t>(20 * options.vertex_cap, 100000);
    std::vector<Eigen::Index> sequence;
    for (Eigen::Index i = 0; i < R; ++i) {
        if (!processed[static_cast<std::size_t>(i)]) sequence.push_back(i);
    }

    for (const Eigen::Index i : sequence) {
        std::vector<std::size_t> pos, neg, zer;
        std::vector<double> value(rays.size());
        for (std::size_t k = 0; k < rays.size(); ++k) {
            const double s = A.row(i).dot(rays[k].r);
            value[k] = s;
            const double tol = options.zero_tol * rays[k].r.norm();
            if (s > tol) {
                pos.push_back(k);
            } else if (s < -tol) {
                neg.push_back(k);
            } else {
                zer.push_back(k);
            }
        }
        processed[static_cast<std::size_t>(i)] = 1;
        if (neg.empty()) {
            for (auto k : zer) rays[k].zeros.set(static_cast<std::size_t>(i));
            continue;
        }

        std::vector<detail::Ray> next;
        next.reserve(pos.size() + zer.size());
        for (auto k : pos) next.push_back(rays[k]);
        for (auto k : zer) {
            next.push_back(rays[k]);
            next.back().zeros.set(static_cast<std::size_t>(i));
        }
        const std::size_t need = static_cast<std::size_t>(D - 2);
        for (auto kp : pos) {
            for (auto kn : neg) {
                const auto& rp = rays[kp];
                const auto& rn = rays[kn];
                if (rp.zeros.common_count(rn.zeros) < need) continue;
                const detail::RowSet common = rp.zeros & rn.zeros;
                // Algebraic adjacency: the common active rows have rank D - 2.
                Matrix active(static_cast<Eigen::Index>(common.count()), D);
                Eigen::Index row = 0;
                common.for_each([&](std::size_t j) { active.row(row++) = A.row(static_cast<Eigen::Index>(j)); });
                Eigen::FullPivLU<Matrix> lu(active);
                lu.setThreshold(1e-9);
                if (lu.rank() != D - 2) continue;
                Vector r = value[kp] * rn.r - value[kn] * rp.r;
                r /= r.cwiseAbs().maxCoeff();
                next.push_back({r, zero_set(r)});
                next.back().zeros.set(static_cast<std::size_t>(i));
            }
        }
        rays = std::move(next);
        if (rays.size() > blowup) {
            throw Error(ErrorKind::capacity, "enumerate_vertices: intermediate ray count exceeded " + std::to_string(blowup));
        }
    }

    std::vector<Vector> vertices;
    for (const auto& ray : rays) {
        const double t = ray.r(p);
        if (t <= options.zero_tol) continue;
        Vector v = ray.r.head(p) / t;
        bool duplicate = false;
        for (const auto& w : vertices) {
            if ((w - v).cwiseAbs().maxCoeff() <= options.merge_tol * std::max(1.0, v.cwiseAbs().maxCoeff())) {
                duplicate = true;
                break;
            }
        }
        if (!duplicate) vertices.push_back(std::move(v));
    }
    if (vertices.size() > options.vertex_cap) {
        throw Error(ErrorKind::capacity, "enumerate_vertices: " + std::to_string(vertices.size()) +
                                             " vertices exceed the cap of " + std::to_string(options.vertex_cap));
    }
    std::sort(vertices.begin(), vertices.end(), [](const Vector& a, const Vector& b) {
        return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
    });
    return vertices;
}

inline FeasibleParameterSet enumerate_vertices(FeasibleParameterSet fps, const EnumerationOptions& options = {}) {
    const auto verts = enumerate_polytope_vertices(fps.H, fps.h, options);
    fps.vertices.clear();
    for (const auto& v : verts) fps.vertices.emplace_back(v);
    fps.outer_box = false;
    return fps;
}

struct Box {
    Vector lower;
    Vector upper;
};

/// Per-coordinate extent of { x : H x <= h } from 2p LPs.
inline Box bounding_box(const Matrix& H, const Vector& h) {
    const Eigen::Index p = H.cols();
    Box box{Vector(p), Vector(p)};
    conic::LinearProgram lp(p);
    lp.A = H;
    lp.b = h;
    for (Eigen::Index j = 0; j < p; ++j) {
        for (int sense : {1, -1}) {
            lp.cost.setZero();
            lp.cost(j) = sense;
            const auto r = conic::solve_lp(lp);
            if (!r.ok()) {
                throw Error(r.status == conic::SolveStatus::infeasible ? ErrorKind::infeasible : ErrorKind::numerical,
                            "outer_box: LP for coordinate " + std::to_string(j) + " returned " + conic::to_string(r.status));
            }
            (sense > 0 ? box.lower : box.upper)(j) = r.x(j);
        }
    }
    return box;
}

inline std::vector<Vector> box_vertices(const Box& box) {
    const auto p = static_cast<std::size_t>(box.lower.size());
    require(p < 31, "box_vertices: dimension too large");
    std::vector<Vector> out;
    for (std::size_t mask = 0; mask < (std::size_t{1} << p); ++mask) {
        Vector v(static_cast<Eigen::Index>(p));
        for (std::size_t j = 0; j < p; ++j) {
            v(static_cast<Eigen::Index>(j)) = (mask >> j) & 1u ? box.upper(static_cast<Eigen::Index>(j)) : box.lower(static_cast<Eigen::Index>(j));
        }
        out.push_back(std::move(v));
    }
    return out;
}

/// Replaces the vertex list by the 2^(2n) corners of the minimum-volume
/// axis-aligned box around the FPS.
inline FeasibleParameterSet outer_box(FeasibleParameterSet fps) {
    fps.vertices.clear();
    for (const auto& v : box_vertices(bounding_box(fps.H, fps.h))) fps.vertices.emplace_back(v);
    fps.outer_box = true;
    return fps;
}

inline std::vector<lti::StateSpaceModel> vertex_matrices(const FeasibleParameterSet& fps) {
    require(!fps.vertices.empty(), "vertex_matrices: FPS has no vertices");
    std::vector<lti::StateSpaceModel> out;
    out.reserve(fps.vertices.size());
    for (const auto& v : fps.vertices) out.push_back(lti::theta_to_state_space(v));
    return out;
}

// ---------------------------------------------------------------------------
// Plain-text record.

inline std::string to_record(const FeasibleParameterSet& fps) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "fps 1\n";
    os << "alpha " << fps.alpha << "\nlambda_lb " << fps.lambda_lb << "\nnoise_bound " << fps.noise_bound << '\n';
    os << "dimension " << fps.dimension() << "\ndata_rows " << fps.data_rows << "\nouter_box " << (fps.outer_box ? 1 : 0)
       << '\n';
    os << "rows " << fps.H.rows() << '\n';
    for (Eigen::Index i = 0; i < fps.H.rows(); ++i) {
        for (Eigen::Index j = 0; j < fps.H.cols(); ++j) os << fps.H(i, j) << ' ';
        os << fps.h(i) << '\n';
    }
    os << "vertices " << fps.vertices.size() << '\n';
    for (const auto& v : fps.vertices) {
        for (Eigen::Index j = 0; j < v.values().size(); ++j) os << (j ? " " : "") << v[j];
        os << '\n';
    }
    return os.str();
}

inline FeasibleParameterSet fps_from_record(const std::string& text) {
    std::istringstream is(text);
    FeasibleParameterSet fps;
    auto expect = [&](const std::string& key) {
        std::string got;
        if (!(is >> got) || got != key) throw Error(ErrorKind::input, "fps record: expected '" + key + "'");
    };
    auto read = [&](auto& value, const std::string& what) {
        if (!(is >> value)) throw Error(ErrorKind::input, "fps record: bad " + what);
    };
    int version = 0;
    expect("fps");
    read(version, "version");
    expect("alpha");
    read(fps.alpha, "alpha");
    expect("lambda_lb");
    read(fps.lambda_lb, "lambda_lb");
    expect("noise_bound");
    read(fps.noise_bound, "noise_bound");
    Eigen::Index dim = 0;
    expect("dimension");
    read(dim, "dimension");
    if (dim < 2 || dim % 2 != 0) throw Error(ErrorKind::input, "fps record: dimension must be even and positive");
    expect("data_rows");
    read(fps.data_rows, "data_rows");
    int ob = 0;
    expect("outer_box");
    read(ob, "outer_box");
    fps.outer_box = ob != 0;
    Eigen::Index rows = 0;
    expect("rows");
    read(rows, "row count");
    fps.H.resize(rows, dim);
    fps.h.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) read(fps.H(i, j), "row entry");
        read(fps.h(i), "row offset");
    }
    std::size_t count = 0;
    expect("vertices");
    read(count, "vertex count");
    for (std::size_t k = 0; k < count; ++k) {
        Vector v(dim);
        for (Eigen::Index j = 0; j < dim; ++j) read(v(j), "vertex entry");
        fps.vertices.emplace_back(v);
    }
    return fps;
}

}  // namespace smvrft::sm
