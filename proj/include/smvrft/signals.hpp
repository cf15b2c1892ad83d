#pragma once

// Excitation, datasets and the signal preparation used by VRFT.

#include "smvrft/common.hpp"
#include "smvrft/lti.hpp"
#include "smvrft/random.hpp"

#include "json.hpp"

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>

namespace smvrft::signals {

/// Maximal-length 31-bit Fibonacci LFSR (x^31 + x^28 + 1). The register is
/// re-seeded from `seed` through splitmix64; it advances once every
/// `clock_period` samples.
inline Signal generate_prbs(std::size_t length, double low, double high, std::uint64_t seed,
                            std::size_t clock_period = 1) {
    require(low < high, "generate_prbs: low must be below high");
    require(length >= 1, "generate_prbs: length must be positive");
    require(clock_period >= 1, "generate_prbs: clock period must be positive");
    std::uint32_t reg = static_cast<std::uint32_t>(splitmix64(seed) & 0x7FFFFFFFu);
    if (reg == 0) {
        reg = 1;
    }
    Signal out(length);
    bool level = false;
    for (std::size_t k = 0; k < length; ++k) {
        if (k % clock_period == 0) {
            const std::uint32_t bit = ((reg >> 30) ^ (reg >> 27)) & 1u;
            reg = ((reg << 1) | bit) & 0x7FFFFFFFu;
            level = bit != 0;
        }
        out[k] = level ? high : low;
    }
    return out;
}

/// i.i.d. samples uniform on [-bound, bound].
inline Signal uniform_noise(std::size_t length, double bound, std::uint64_t seed) {
    require(bound >= 0.0, "uniform_noise: bound must be nonnegative");
    Rng rng(seed);
    Signal out(length);
    for (auto& v : out) {
        v = bound == 0.0 ? 0.0 : rng.uniform(-bound, bound);
    }
    return out;
}

// ---------------------------------------------------------------------------

/// Two output records driven by the same input. Samples cover k = -n+1 .. N_d,
/// so sample index i corresponds to k = i - n + 1.
struct Dataset {
    Signal u;
    Signal y1;
    Signal y2;
    int n = 1;
    double Ts = 1.0;
    double noise_bound = 0.0;

    std::size_t samples() const { return u.size(); }
    std::size_t horizon() const { return u.size() - static_cast<std::size_t>(n); }  // N_d
    std::size_t index(long k) const { return static_cast<std::size_t>(k + n - 1); }

    const Signal& output(int which) const {
        require(which == 1 || which == 2, "Dataset: output selector must be 1 or 2");
        return which == 1 ? y1 : y2;
    }

    void validate() const {
        require(n >= 1, "Dataset: order must be positive");
        require(u.size() > static_cast<std::size_t>(n), "Dataset: record too short for the order");
        require(y1.size() == u.size() && y2.size() == u.size(), "Dataset: u, y1, y2 must have equal length");
        require(Ts > 0.0, "Dataset: sample time must be positive");
        require(noise_bound >= 0.0, "Dataset: noise bound must be nonnegative");
    }
};

/// Runs the plant twice from rest on the same input with independent uniform
/// noise. `u` must cover k = -n+1 .. N_d.
inline Dataset collect_dataset(const lti::ParameterVector& plant, const Signal& u, double noise_bound,
                               std::pair<std::uint64_t, std::uint64_t> noise_seeds, double Ts = 1.0) {
    const int n = plant.order();
    require(u.size() > static_cast<std::size_t>(n), "collect_dataset: input shorter than the initial regressor");
    require(noise_bound >= 0.0, "collect_dataset: noise bound must be nonnegative");
    Dataset ds;
    ds.u = u;
    ds.n = n;
    ds.Ts = Ts;
    ds.noise_bound = noise_bound;
    const Signal rest(static_cast<std::size_t>(n), 0.0);
    ds.y1 = lti::simulate(plant, u, uniform_noise(u.size(), noise_bound, noise_seeds.first), rest);
    ds.y2 = lti::simulate(plant, u, uniform_noise(u.size(), noise_bound, noise_seeds.second), rest);
    return ds;
}

// CSV with header k,u,y1,y2 plus a JSON sidecar holding n, Ts, noise_bound.

inline std::string dataset_csv(const Dataset& ds) {
    std::ostringstream os;
    os << std::setprecision(17) << "k,u,y1,y2\n";
    for (std::size_t i = 0; i < ds.samples(); ++i) {
        os << static_cast<long>(i) - ds.n + 1 << ',' << ds.u[i] << ',' << ds.y1[i] << ',' << ds.y2[i] << '\n';
    }
    return os.str();
}

inline std::string dataset_metadata(const Dataset& ds) {
    nlohmann::json meta{{"n", ds.n}, {"Ts", ds.Ts}, {"noise_bound", ds.noise_bound}, {"N_d", ds.horizon()}};
    return meta.dump(2) + "\n";
}

inline Dataset parse_dataset(const std::string& csv, const std::string& metadata) {
    Dataset ds;
    try {
        const auto meta = nlohmann::json::parse(metadata);
        ds.n = meta.at("n").get<int>();
        ds.Ts = meta.at("Ts").get<double>();
        ds.noise_bound = meta.at("noise_bound").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::input, std::string("dataset metadata: ") + e.what());
    }

    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line) || line.rfind("k,u,y1,y2", 0) != 0) {
        throw Error(ErrorKind::input, "dataset csv: expected header k,u,y1,y2");
    }
    long expected_k = 1 - ds.n;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        std::istringstream row(line);
        std::string field;
        double values[4];
        for (double& v : values) {
            if (!std::getline(row, field, ',')) {
                throw Error(ErrorKind::input, "dataset csv: short row at line " + std::to_string(line_no));
            }
            try {
                v = std::stod(field);
            } catch (const std::exception&) {
                throw Error(ErrorKind::input, "dataset csv: bad number at line " + std::to_string(line_no));
            }
        }
        if (static_cast<long>(values[0]) != expected_k) {
            throw Error(ErrorKind::input, "dataset csv: non-consecutive k at line " + std::to_string(line_no));
        }
        ++expected_k;
        ds.u.push_back(values[1]);
        ds.y1.push_back(values[2]);
        ds.y2.push_back(values[3]);
    }
    try {
        ds.validate();
    } catch (const std::invalid_argument& e) {
        throw Error(ErrorKind::input, e.what());
    }
    return ds;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorKind::input, "cannot open '" + path + "' for writing");
    }
    out << text;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::input, "cannot open '" + path + "'");
    }
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Writes `stem`.csv and `stem`.json.
inline void save_dataset(const Dataset& ds, const std::string& stem) {
    write_text_file(stem + ".csv", dataset_csv(ds));
    write_text_file(stem + ".json", dataset_metadata(ds));
}

inline Dataset load_dataset(const std::string& stem) {
    return parse_dataset(read_text_file(stem + ".csv"), read_text_file(stem + ".json"));
}

// ---------------------------------------------------------------------------

struct SpectralFactor {
    lti::TransferFunction Z;
    int order = 0;
    double prediction_error_variance = 0.0;
};

/// Yule-Walker AR fit Z = g / (1 + c1 q^-1 + ... + cm q^-m) of the demeaned
/// sequence, solved by Levinson-Durbin on the biased autocorrelation. The
/// gain makes the 2-norm of Z equal the (biased) sample standard deviation.
inline SpectralFactor estimate_ar_spectrum(const Signal& y, int order) {
    require(order >= 0, "estimate_ar_spectrum: order must be nonnegative");
    require(y.size() > 2 * static_cast<std::size_t>(order) + 1, "estimate_ar_spectrum: sequence too short for the order");

    const auto len = static_cast<double>(y.size());
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= len;
    Signal x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) x[i] = y[i] - mean;

    std::vector<double> r(static_cast<std::size_t>(order) + 1, 0.0);
    for (std::size_t lag = 0; lag < r.size(); ++lag) {
        double acc = 0.0;
        for (std::size_t i = lag; i < x.size(); ++i) acc += x[i] * x[i - lag];
        r[lag] = acc / len;
    }
    if (r[0] <= 1e-300) {
        throw Error(ErrorKind::numerical, "estimate_ar_spectrum: sequence has zero variance");
    }

    std::vector<double> a{1.0};
    double err = r[0];
    for (int m = 1; m <= order; ++m) {
        double acc = r[static_cast<std::size_t>(m)];
        for (int j = 1; j < m; ++j) {
            acc += a[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(m - j)];
        }
        const double kappa = -acc / err;
        if (!std::isfinite(kappa) || std::abs(kappa) >= 1.0 - 1e-10 || err * (1.0 - kappa * kappa) < 1e-12 * r[0]) {
            throw Error(ErrorKind::numerical, "estimate_ar_spectrum: autocorrelation matrix is near singular");
        }
        std::vector<double> next(static_cast<std::size_t>(m) + 1, 0.0);
        next[0] = 1.0;
        for (int j = 1; j < m; ++j) {
            next[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(j)] + kappa * a[static_cast<std::size_t>(m - j)];
        }
        next[static_cast<std::size_t>(m)] = kappa;
        a = std::move(next);
        err *= 1.0 - kappa * kappa;
    }

    const lti::TransferFunction all_pole({1.0}, a);
    const double gain = std::sqrt(r[0]) / lti::h2_norm_impulse(all_pole);
    return SpectralFactor{lti::TransferFunction({gain}, a), order, err};
}

// ---------------------------------------------------------------------------

/// r = M^-1 y for a unit-delay, minimum-phase model. The result is one sample
/// shorter than y: r(k) needs y(k+1).
inline Signal virtual_reference(const lti::TransferFunction& m, const Signal& y) {
    require(m.input_delay() == 1, "virtual_reference: reference model must have exactly one step of delay");
    require(m.is_stable(), "virtual_reference: reference model must be stable");
    require(m.is_minimum_phase(), "virtual_reference: reference model must be minimum phase");
    return lti::filter_signal(lti::strip_delay_inverse(m), y, lti::FilterMode::acausal_by_one).values;
}

inline Signal virtual_error(const Signal& r, const Signal& y) {
    require(r.size() == y.size(), "virtual_error: length mismatch");
    Signal e(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) e[i] = r[i] - y[i];
    return e;
}

/// Output/regressor pairs (y(k+1), phi(k)) for k = 0 .. N_d-1 with
/// phi(k) = [y(k) .. y(k-n+1), u(k) .. u(k-n+1)].
struct RegressorData {
    Matrix phi;     // N_d x 2n
    Vector target;  // N_d
};

inline RegressorData build_regressors(const Dataset& ds, int which_output) {
    ds.validate();
    const Signal& y = ds.output(which_output);
    const int n = ds.n;
    const std::size_t nd = ds.horizon();
    require(nd >= 1, "build_regressors: no data pairs");
    RegressorData out{Matrix(static_cast<Eigen::Index>(nd), 2 * n), Vector(static_cast<Eigen::Index>(nd))};
    for (std::size_t k = 0; k < nd; ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        const std::size_t now = ds.index(static_cast<long>(k));
        out.target(row) = y[now + 1];
        for (int j = 0; j < n; ++j) {
            out.phi(row, j) = y[now - static_cast<std::size_t>(j)];
            out.phi(row, n + j) = ds.u[now - static_cast<std::size_t>(j)];
        }
    }
    return out;
}

}  // namespace smvrft::signals
