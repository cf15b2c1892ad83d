#pragma once

// Discrete-time SISO LTI modelling: transfer functions in the backward
// shift q^-1, the ARX parameter vector and its state-space recast, ZOH
// discretisation, simulation, filtering and frequency-domain helpers.

#include "smvrft/common.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace smvrft::lti {

using Complex = std::complex<double>;

// ---------------------------------------------------------------------------
// Polynomial helpers. Coefficient vectors are ordered by increasing power of
// q^-1 (equivalently decreasing power of z after multiplying through).

inline std::vector<double> poly_multiply(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) {
        return {};
    }
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            out[i + j] += a[i] * b[j];
        }
    }
    return out;
}

/// Monic coefficients [1, c1, ..., cm] of prod (z - r_i).
inline std::vector<double> poly_from_roots(const std::vector<Complex>& roots) {
    std::vector<Complex> coeffs{Complex(1.0, 0.0)};
    for (const auto& r : roots) {
        std::vector<Complex> next(coeffs.size() + 1, Complex(0.0, 0.0));
        for (std::size_t i = 0; i < coeffs.size(); ++i) {
            next[i] += coeffs[i];
            next[i + 1] -= coeffs[i] * r;
        }
        coeffs = std::move(next);
    }
    std::vector<double> out(coeffs.size());
    std::transform(coeffs.begin(), coeffs.end(), out.begin(), [](const Complex& c) { return c.real(); });
    return out;
}

/// Roots in z of c0 z^m + c1 z^(m-1) + ... + cm (c0 != 0).
inline std::vector<Complex> poly_roots(const std::vector<double>& coeffs) {
    require(!coeffs.empty() && coeffs.front() != 0.0, "poly_roots: leading coefficient must be nonzero");
    const auto m = static_cast<Eigen::Index>(coeffs.size()) - 1;
    if (m == 0) {
        return {};
    }
    Matrix companion = Matrix::Zero(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        companion(0, j) = -coeffs[static_cast<std::size_t>(j + 1)] / coeffs.front();
    }
    for (Eigen::Index i = 1; i < m; ++i) {
        companion(i, i - 1) = 1.0;
    }
    Eigen::EigenSolver<Matrix> solver(companion, false);
    std::vector<Complex> roots(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        roots[static_cast<std::size_t>(i)] = solver.eigenvalues()(i);
    }
    return roots;
}

inline std::vector<double> characteristic_polynomial(const Matrix& a) {
    require(a.rows() == a.cols(), "characteristic_polynomial: matrix must be square");
    if (a.rows() == 0) {
        return {1.0};
    }
    Eigen::EigenSolver<Matrix> solver(a, false);
    std::vector<Complex> roots;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        roots.push_back(solver.eigenvalues()(i));
    }
    return poly_from_roots(roots);
}

// ---------------------------------------------------------------------------

/// Rational operator N(q^-1)/D(q^-1). The denominator is normalised so its
/// leading coefficient is exactly 1; leading zeros of the numerator encode
/// input delay.
class TransferFunction {
public:
    TransferFunction() : num_{1.0}, den_{1.0} {}

    TransferFunction(std::vector<double> numerator, std::vector<double> denominator,
                     std::optional<double> sample_time = std::nullopt)
        : num_(std::move(numerator)), den_(std::move(denominator)), ts_(sample_time) {
        require(!num_.empty(), "TransferFunction: empty numerator");
        require(!den_.empty(), "TransferFunction: empty denominator");
        require(den_.front() != 0.0, "TransferFunction: denominator leading coefficient must be nonzero");
        const double lead = den_.front();
        for (auto& c : num_) c /= lead;
        for (auto& c : den_) c /= lead;
        den_.front() = 1.0;
        if (ts_) {
            require(*ts_ > 0.0, "TransferFunction: sample time must be positive");
        }
    }

    static TransferFunction gain(double k) { return TransferFunction({k}, {1.0}); }

    static TransferFunction delay(std::size_t steps) {
        std::vector<double> num(steps + 1, 0.0);
        num.back() = 1.0;
        return TransferFunction(std::move(num), {1.0});
    }

    /// First-order unit-delay model b1 q^-1 / (1 + a1 q^-1).
    static TransferFunction first_order(double a1, double b1) { return TransferFunction({0.0, b1}, {1.0, a1}); }

    const std::vector<double>& numerator() const { return num_; }
    const std::vector<double>& denominator() const { return den_; }
    std::optional<double> sample_time() const { return ts_; }

    std::size_t order() const { return std::max(num_.size(), den_.size()) - 1; }

    std::size_t input_delay() const {
        std::size_t d = 0;
        while (d < num_.size() && num_[d] == 0.0) {
            ++d;
        }
        return d;
    }

    double static_gain() const {
        double n = 0.0;
        double d = 0.0;
        for (double c : num_) n += c;
        for (double c : den_) d += c;
        if (std::abs(d) < 1e-300) {
            throw Error(ErrorKind::numerical, "static_gain: pole at z = 1");
        }
        return n / d;
    }

    std::vector<Complex> poles() const { return poly_roots(den_); }

    /// Finite zeros, after stripping leading (delay) and trailing zero coefficients.
    std::vector<Complex> zeros() const {
        const std::size_t d = input_delay();
        if (d == num_.size()) {
            return {};
        }
        std::vector<double> core(num_.begin() + static_cast<std::ptrdiff_t>(d), num_.end());
        return poly_roots(core);
    }

    bool is_stable(double margin = 0.0) const {
        for (const auto& p : poles()) {
            if (std::abs(p) >= 1.0 - margin) {
                return false;
            }
        }
        return true;
    }

    bool is_minimum_phase() const {
        for (const auto& z : zeros()) {
            if (std::abs(z) >= 1.0) {
                return false;
            }
        }
        return true;
    }

    /// 1/F. Requires a nonzero direct term so the inverse stays proper.
    TransferFunction reciprocal() const {
        require(num_.front() != 0.0, "reciprocal: numerator has an input delay, inverse is improper");
        return TransferFunction(den_, num_, ts_);
    }

    friend TransferFunction operator*(const TransferFunction& a, const TransferFunction& b) {
        return TransferFunction(poly_multiply(a.num_, b.num_), poly_multiply(a.den_, b.den_), a.ts_ ? a.ts_ : b.ts_);
    }

private:
    std::vector<double> num_;
    std::vector<double> den_;
    std::optional<double> ts_;
};

/// q^-d M^-1 for a model M with d = 1 leading delay: the proper part of the
/// inverse. Filtering with it in acausal-by-one mode applies M^-1.
inline TransferFunction strip_delay_inverse(const TransferFunction& m) {
    require(m.input_delay() == 1, "strip_delay_inverse: model must have exactly one step of input delay");
    std::vector<double> shifted(m.numerator().begin() + 1, m.numerator().end());
    return TransferFunction(m.denominator(), shifted, m.sample_time());
}

// ---------------------------------------------------------------------------
// Plain-text record: "Ts <value|none>", "num <count> c...", "den <count> c...".

inline std::string to_record(const TransferFunction& tf) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "Ts ";
    if (tf.sample_time()) {
        os << *tf.sample_time();
    } else {
        os << "none";
    }
    os << "\nnum " << tf.numerator().size();
    for (double c : tf.numerator()) os << ' ' << c;
    os << "\nden " << tf.denominator().size();
    for (double c : tf.denominator()) os << ' ' << c;
    os << '\n';
    return os.str();
}

inline TransferFunction transfer_function_from_record(const std::string& text) {
    std::istringstream is(text);
    std::string key;
    std::optional<double> ts;
    std::vector<double> num;
    std::vector<double> den;
    bool have_num = false;
    bool have_den = false;
    while (is >> key) {
        if (key == "Ts") {
            std::string value;
            is >> value;
            if (value != "none") {
                ts = std::stod(value);
            }
        } else if (key == "num" || key == "den") {
            std::size_t count = 0;
            if (!(is >> count)) {
                throw Error(ErrorKind::input, "transfer function record: missing coefficient count");
            }
            auto& target = key == "num" ? num : den;
            target.resize(count);
            for (auto& c : target) {
                if (!(is >> c)) {
                    throw Error(ErrorKind::input, "transfer function record: truncated coefficient list");
                }
            }
            (key == "num" ? have_num : have_den) = true;
        } else {
            throw Error(ErrorKind::input, "transfer function record: unknown key '" + key + "'");
        }
    }
    if (!have_num || !have_den) {
        throw Error(ErrorKind::input, "transfer function record: num and den are required");
    }
    return TransferFunction(std::move(num), std::move(den), ts);
}

// ---------------------------------------------------------------------------

/// The 2n coefficients of y(k+1) = sum theta_i y(k+1-i) + sum theta_{n+j} u(k+1-j).
class ParameterVector {
public:
    ParameterVector() = default;

    explicit ParameterVector(Vector theta) : theta_(std::move(theta)) {
        require(theta_.size() >= 2 && theta_.size() % 2 == 0, "ParameterVector: length must be 2n with n >= 1");
    }

    ParameterVector(std::initializer_list<double> values)
        : ParameterVector(Vector(Eigen::Map<const Vector>(values.begin(), static_cast<Eigen::Index>(values.size())))) {}

    int order() const { return static_cast<int>(theta_.size() / 2); }
    const Vector& values() const { return theta_; }
    double operator[](Eigen::Index i) const { return theta_(i); }

    auto output_coefficients() const { return theta_.head(order()); }
    auto input_coefficients() const { return theta_.tail(order()); }

    /// Static gain sum(b) / (1 - sum(a)) from u to the noiseless output.
    double static_gain() const {
        const double denom = 1.0 - output_coefficients().sum();
        if (std::abs(denom) < 1e-300) {
            throw Error(ErrorKind::numerical, "static_gain: integrating plant");
        }
        return input_coefficients().sum() / denom;
    }

    TransferFunction transfer_function(std::optional<double> ts = std::nullopt) const {
        const int n = order();
        std::vector<double> num(static_cast<std::size_t>(n) + 1, 0.0);
        std::vector<double> den(static_cast<std::size_t>(n) + 1, 0.0);
        den[0] = 1.0;
        for (int i = 0; i < n; ++i) {
            den[static_cast<std::size_t>(i) + 1] = -theta_(i);
            num[static_cast<std::size_t>(i) + 1] = theta_(n + i);
        }
        return TransferFunction(std::move(num), std::move(den), ts);
    }

private:
    Vector theta_;
};

/// x(k+1) = A x(k) + B u(k) + Bw w(k), y(k) = C x(k), with
/// x(k) = [y(k) .. y(k-n+1), u(k-1) .. u(k-n+1)].
struct StateSpaceModel {
    Matrix A;
    Vector B;
    Vector Bw;
    RowVector C;

    Eigen::Index dimension() const { return A.rows(); }
};

/// Plant augmented with the integrator state: [[A, 0], [-C, 1]], [[B], [0]].
struct AugmentedModel {
    Matrix A;
    Vector B;
};

inline StateSpaceModel theta_to_state_space(const ParameterVector& theta) {
    const int n = theta.order();
    require(n >= 1, "theta_to_state_space: order must be positive");
    const int dim = 2 * n - 1;
    StateSpaceModel ss;
    ss.A = Matrix::Zero(dim, dim);
    ss.B = Vector::Zero(dim);
    ss.Bw = Vector::Zero(dim);
    ss.C = RowVector::Zero(dim);

    const Vector& t = theta.values();
    for (int j = 0; j < n; ++j) {
        ss.A(0, j) = t(j);
    }
    for (int j = 0; j < n - 1; ++j) {
        ss.A(0, n + j) = t(n + 1 + j);
    }
    for (int i = 1; i < n; ++i) {
        ss.A(i, i - 1) = 1.0;
    }
    for (int i = n + 1; i < dim; ++i) {
        ss.A(i, i - 1) = 1.0;
    }
    ss.B(0) = t(n);
    if (n > 1) {
        ss.B(n) = 1.0;
    }
    ss.Bw(0) = 1.0;
    ss.C(0) = 1.0;
    return ss;
}

inline AugmentedModel augment_integrator(const StateSpaceModel& ss) {
    const Eigen::Index dim = ss.dimension();
    require(ss.B.size() == dim && ss.C.size() == dim, "augment_integrator: inconsistent dimensions");
    AugmentedModel aug;
    aug.A = Matrix::Zero(dim + 1, dim + 1);
    aug.A.topLeftCorner(dim, dim) = ss.A;
    aug.A.bottomLeftCorner(1, dim) = -ss.C;
    aug.A(dim, dim) = 1.0;
    aug.B = Vector::Zero(dim + 1);
    aug.B.head(dim) = ss.B;
    return aug;
}

inline double spectral_radius(const Matrix& m) {
    require(m.rows() == m.cols(), "spectral_radius: matrix must be square");
    if (m.rows() == 0) {
        return 0.0;
    }
    Eigen::EigenSolver<Matrix> solver(m, false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------

/// Exact zero-order-hold equivalent of a strictly proper continuous transfer
/// function. Coefficients are given highest power of s first.
inline ParameterVector zoh_discretize(std::vector<double> cont_num, std::vector<double> cont_den, double ts) {
    require(ts > 0.0, "zoh_discretize: sample time must be positive");
    auto strip = [](std::vector<double>& p) {
        auto it = std::find_if(p.begin(), p.end(), [](double c) { return c != 0.0; });
        p.erase(p.begin(), it);
    };
    strip(cont_den);
    strip(cont_num);
    require(!cont_den.empty(), "zoh_discretize: zero denominator");
    const int n = static_cast<int>(cont_den.size()) - 1;
    require(n >= 1, "zoh_discretize: denominator must have positive degree");
    require(static_cast<int>(cont_num.size()) <= n, "zoh_discretize: transfer function must be strictly proper");

    const double lead = cont_den.front();
    std::vector<double> a(static_cast<std::size_t>(n));  // s^n + a1 s^(n-1) + ... + an
    for (int i = 0; i < n; ++i) {
        a[static_cast<std::size_t>(i)] = cont_den[static_cast<std::size_t>(i) + 1] / lead;
    }
    std::vector<double> b(static_cast<std::size_t>(n), 0.0);  // b1 s^(n-1) + ... + bn
    const std::size_t pad = static_cast<std::size_t>(n) - cont_num.size();
    for (std::size_t i = 0; i < cont_num.size(); ++i) {
        b[pad + i] = cont_num[i] / lead;
    }

    // Controllable canonical realisation.
    Matrix ac = Matrix::Zero(n, n);
    for (int i = 0; i + 1 < n; ++i) {
        ac(i, i + 1) = 1.0;
    }
    for (int j = 0; j < n; ++j) {
        ac(n - 1, j) = -a[static_cast<std::size_t>(n - 1 - j)];
    }
    RowVector cc(n);
    for (int j = 0; j < n; ++j) {
        cc(j) = b[static_cast<std::size_t>(n - 1 - j)];
    }

    Matrix aug = Matrix::Zero(n + 1, n + 1);
    aug.topLeftCorner(n, n) = ac * ts;
    aug(n - 1, n) = ts;
    const Matrix expd = aug.exp();
    const Matrix phi = expd.topLeftCorner(n, n);
    const Vector gamma = expd.topRightCorner(n, 1);

    // C adj(zI - Phi) Gamma = det(zI - Phi + Gamma C) - det(zI - Phi).
    const auto den_z = characteristic_polynomial(phi);
    const auto closed = characteristic_polynomial(phi - gamma * cc);

    Vector theta(2 * n);
    for (int i = 0; i < n; ++i) {
        theta(i) = -den_z[static_cast<std::size_t>(i) + 1];
        theta(n + i) = closed[static_cast<std::size_t>(i) + 1] - den_z[static_cast<std::size_t>(i) + 1];
    }
    return ParameterVector(theta);
}

// ---------------------------------------------------------------------------
// Simulation.

/// Records are indexed k = -n+1 ... : the first n samples carry the initial
/// noiseless outputs `init` (oldest first), then z(k+1) = theta' phi(k).
/// Returns y = z + d over the whole record. An empty `d` means noiseless.
inline Signal simulate(const ParameterVector& theta, const Signal& u, const Signal& d, const Signal& init) {
    const auto n = static_cast<std::size_t>(theta.order());
    require(init.size() == n, "simulate: init length must equal the model order");
    require(u.size() >= n, "simulate: input shorter than the initial regressor");
    require(d.empty() || d.size() == u.size(), "simulate: noise and input lengths differ");

    const Vector& t = theta.values();
    Signal z(u.size(), 0.0);
    std::copy(init.begin(), init.end(), z.begin());
    for (std::size_t i = n; i < u.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 1; j <= n; ++j) {
            acc += t(static_cast<Eigen::Index>(j - 1)) * z[i - j] + t(static_cast<Eigen::Index>(n + j - 1)) * u[i - j];
        }
        if (!std::isfinite(acc) || std::abs(acc) > 1e12) {
            throw Error(ErrorKind::unstable, "simulate: output diverged");
        }
        z[i] = acc;
    }
    if (!d.empty()) {
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] += d[i];
        }
    }
    return z;
}

/// x(k+1) = A x(k) + B u(k), y(k) = C x(k) + d(k), starting from x0.
inline Signal simulate(const StateSpaceModel& ss, const Signal& u, const Signal& d, const Vector& x0) {
    require(x0.size() == ss.dimension(), "simulate: initial state has the wrong dimension");
    require(d.empty() || d.size() == u.size(), "simulate: noise and input lengths differ");
    Signal y(u.size());
    Vector x = x0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        y[k] = ss.C.dot(x) + (d.empty() ? 0.0 : d[k]);
        x = ss.A * x + ss.B * u[k];
    }
    return y;
}

enum class FilterMode { causal, acausal_by_one };

struct FilteredSignal {
    Signal values;
    std::size_t transient = 0;  // leading samples still affected by the zero initial state
};

/// Zero-initial-state filtering. In acausal-by-one mode the input is first
/// advanced one step (x(k+1) feeds output k) and the final sample is dropped,
/// so the output is one sample shorter than the input.
inline FilteredSignal filter_signal(const TransferFunction& f, const Signal& x, FilterMode mode = FilterMode::causal) {
    if (!f.is_stable()) {
        throw Error(ErrorKind::numerical, "filter_signal: filter is not asymptotically stable");
    }
    const auto& num = f.numerator();
    const auto& den = f.denominator();
    const std::size_t offset = mode == FilterMode::acausal_by_one ? 1 : 0;
    const std::size_t len = x.size() >= offset ? x.size() - offset : 0;

    FilteredSignal out;
    out.values.assign(len, 0.0);
    out.transient = std::min(len, f.order());
    for (std::size_t k = 0; k < len; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < num.size() && i <= k; ++i) {
            acc += num[i] * x[k - i + offset];
        }
        for (std::size_t j = 1; j < den.size() && j <= k; ++j) {
            acc -= den[j] * out.values[k - j];
        }
        out.values[k] = acc;
    }
    return out;
}

/// Noiseless output of a transfer function plus additive noise.
inline Signal simulate(const TransferFunction& tf, const Signal& u, const Signal& d) {
    require(d.empty() || d.size() == u.size(), "simulate: noise and input lengths differ");
    auto y = filter_signal(tf, u).values;
    if (!d.empty()) {
        for (std::size_t k = 0; k < y.size(); ++k) {
            y[k] += d[k];
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Frequency domain.

inline Complex evaluate(const TransferFunction& f, double omega) {
    const Complex zinv = std::polar(1.0, -omega);
    auto horner = [&](const std::vector<double>& p) {
        Complex acc(0.0, 0.0);
        for (auto it = p.rbegin(); it != p.rend(); ++it) {
            acc = acc * zinv + *it;
        }
        return acc;
    };
    const Complex den = horner(f.denominator());
    if (std::abs(den) < 1e-12) {
        throw Error(ErrorKind::numerical, "freq_response: pole on the unit circle");
    }
    return horner(f.numerator()) / den;
}

inline std::vector<Complex> freq_response(const TransferFunction& f, const std::vector<double>& omega) {
    std::vector<Complex> out;
    out.reserve(omega.size());
    for (double w : omega) {
        require(w >= -std::numbers::pi - 1e-12 && w <= std::numbers::pi + 1e-12,
                "freq_response: frequency outside [-pi, pi]");
        out.push_back(evaluate(f, w));
    }
    return out;
}

/// `points` uniformly spaced samples of [-pi, pi) (the endpoint is the
/// periodic image of the first sample).
inline std::vector<double> frequency_grid(std::size_t points = 2048) {
    std::vector<double> grid(points);
    for (std::size_t k = 0; k < points; ++k) {
        grid[k] = -std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(points);
    }
    return grid;
}

/// Logarithmic grid on (0, pi] for Bode tables.
inline std::vector<double> log_frequency_grid(std::size_t points = 200, double lowest = 1e-3) {
    std::vector<double> grid(points);
    const double lo = std::log10(lowest);
    const double hi = std::log10(std::numbers::pi);
    for (std::size_t k = 0; k < points; ++k) {
        grid[k] = std::pow(10.0, lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1));
    }
    grid.back() = std::numbers::pi;
    return grid;
}

/// 2-norm by trapezoidal quadrature of |F(e^jw)|^2 over one period.
inline double h2_norm(const TransferFunction& f, std::size_t grid_points = 2048) {
    require(grid_points >= 8, "h2_norm: grid too coarse");
    if (!f.is_stable()) {
        throw Error(ErrorKind::numerical, "h2_norm: transfer function is not stable");
    }
    double acc = 0.0;
    for (double w : frequency_grid(grid_points)) {
        acc += std::norm(evaluate(f, w));
    }
    return std::sqrt(acc / static_cast<double>(grid_points));
}

/// 2-norm from the truncated impulse-response energy. Stops once the last
/// order+1 terms are all below 1e-12 or after 1e5 terms.
inline double h2_norm_impulse(const TransferFunction& f, double tail = 1e-12, std::size_t max_terms = 100000) {
    if (!f.is_stable()) {
        throw Error(ErrorKind::numerical, "h2_norm: transfer function is not stable");
    }
    const auto& num = f.numerator();
    const auto& den = f.denominator();
    const std::size_t window = f.order() + 1;
    std::vector<double> h;
    h.reserve(1024);
    double energy = 0.0;
    std::size_t quiet = 0;
    for (std::size_t k = 0; k < max_terms; ++k) {
        double acc = k < num.size() ? num[k] : 0.0;
        for (std::size_t j = 1; j < den.size() && j <= k; ++j) {
            acc -= den[j] * h[k - j];
        }
        h.push_back(acc);
        energy += acc * acc;
        quiet = (acc * acc < tail) ? quiet + 1 : 0;
        if (k >= f.order() && quiet >= window) {
            break;
        }
    }
    return std::sqrt(energy);
}

}  // namespace smvrft::lti
