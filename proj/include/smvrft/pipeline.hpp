#pragma once

// Run configuration and the identify / alpha / synthesize / evaluate stages
// with artifact persistence and a provenance hash chain.

#include "smvrft/common.hpp"
#include "smvrft/eval.hpp"
#include "smvrft/lti.hpp"
#include "smvrft/scenario.hpp"
#include "smvrft/signals.hpp"
#include "smvrft/sm.hpp"
#include "smvrft/synth.hpp"
#include "smvrft/synth_ei.hpp"
#include "smvrft/synth_ff.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace smvrft::pipeline {

using nlohmann::json;

/// 64-bit FNV-1a as 16 hex digits.
inline std::string fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline std::string chain_hash(const std::string& parent, const std::string& payload) {
    return fnv1a(parent + "\n" + payload);
}

enum class Mode { ff, ei };

inline const char* to_string(Mode m) { return m == Mode::ff ? "ff" : "ei"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "ff") return Mode::ff;
    if (s == "ei") return Mode::ei;
    throw Error(ErrorKind::input, "mode must be 'ff' or 'ei', got '" + s + "'");
}

struct PlantSpec {
    std::string kind = "example-1";  // example-1 | example-2 | continuous | theta
    std::vector<double> theta;
    std::vector<double> num;
    std::vector<double> den;
};

struct ReferenceModel {
    std::string name = "M30";
    double a1 = -0.855;
    double b1 = 0.145;

    lti::TransferFunction transfer_function() const { return lti::TransferFunction::first_order(a1, b1); }

    static ReferenceModel named(const std::string& name) {
        if (name == "M10") return {name, -0.6, 0.4};
        if (name == "M30") return {name, -0.855, 0.145};
        if (name == "M60") return {name, -0.925, 0.075};
        throw Error(ErrorKind::input, "unknown reference model '" + name + "' (M10, M30, M60)");
    }
};

struct RunConfig {
    PlantSpec plant;
    double Ts = 0.125;
    double noise_bound = 0.1;
    std::size_t N_d = 500;
    double prbs_low = -10.0;
    double prbs_high = 10.0;
    std::size_t prbs_clock = 1;
    std::uint64_t seed = 1;

    double omega_bound = 10.0;
    std::vector<double> omega_lower;
    std::vector<double> omega_upper;

    double epsilon = 0.1;
    double beta = 1e-6;
    std::size_t p = 5;
    std::size_t N = 0;  // 0: smallest admissible
    double M_cap = 1e6;
    std::optional<std::size_t> validation;  // default: N fresh scenarios
    std::optional<double> alpha;            // forces alpha, skipping the scenario stage

    ReferenceModel reference;
    std::vector<double> W_num{1.0};
    std::vector<double> W_den{1.0};
    int ar_order = 5;
    bool filter = true;
    double c = 1e6;
    synth::GammaMode gamma_mode = synth::GammaMode::free;
    double gamma = 1e-6;
    Mode mode = Mode::ff;
    std::optional<double> mu;  // FF static gain; default: least squares on y1

    std::size_t vertex_cap = 5000;
    bool outer_box_fallback = true;

    double profile_width = 6.5;
    bool eval_noise = true;
    double eval_disturbance = 0.0;

    void validate() const {
        require(Ts > 0.0, "config: Ts must be positive");
        require(noise_bound >= 0.0, "config: noise_bound must be nonnegative");
        require(N_d >= 10, "config: N_d must be at least 10");
        require(prbs_low < prbs_high, "config: PRBS low must be below high");
        require(prbs_clock >= 1, "config: PRBS clock must be positive");
        require(omega_bound > 0.0, "config: omega bound must be positive");
        require(omega_lower.size() == omega_upper.size(), "config: omega lower/upper lengths differ");
        require(epsilon > 0.0 && epsilon < 1.0, "config: epsilon must lie in (0,1)");
        require(beta > 0.0 && beta < 1.0, "config: beta must lie in (0,1)");
        require(M_cap > 1.0, "config: M_cap must exceed 1");
        require(!alpha || *alpha >= 1.0, "config: alpha must be at least 1");
        require(std::abs(reference.a1) < 1.0, "config: reference model must be stable");
        require(ar_order >= 0, "config: AR order must be nonnegative");
        require(c > 0.0 && gamma > 0.0, "config: c and gamma must be positive");
        require(!mu || *mu != 0.0, "config: mu must be nonzero");
        require(vertex_cap >= 1, "config: vertex cap must be positive");
        require(profile_width > 0.0, "config: profile width must be positive");
        const std::set<std::string> kinds{"example-1", "example-2", "continuous", "theta"};
        require(kinds.count(plant.kind) == 1, "config: unknown plant kind '" + plant.kind + "'");
    }

    lti::ParameterVector plant_theta() const {
        const std::vector<double> den{1.0, 11.6, 32.0, 160.0};  // (s+10)(s^2+1.6s+16)
        if (plant.kind == "example-1") return lti::zoh_discretize({160.0}, den, Ts);
        if (plant.kind == "example-2") return lti::zoh_discretize({160.0, -80.0}, den, Ts);
        if (plant.kind == "continuous") return lti::zoh_discretize(plant.num, plant.den, Ts);
        require(plant.theta.size() >= 2 && plant.theta.size() % 2 == 0, "config: plant theta must have even length");
        return lti::ParameterVector(Eigen::Map<const Vector>(plant.theta.data(), static_cast<Eigen::Index>(plant.theta.size())));
    }

    sm::OmegaBox omega(int n) const {
        if (omega_lower.empty()) return sm::OmegaBox::symmetric(n, omega_bound);
        require(omega_lower.size() == static_cast<std::size_t>(2 * n), "config: omega box has the wrong dimension");
        sm::OmegaBox box{Eigen::Map<const Vector>(omega_lower.data(), 2 * n),
                         Eigen::Map<const Vector>(omega_upper.data(), 2 * n)};
        return box;
    }

    scenario::ScenarioSpec scenario_spec() const {
        scenario::ScenarioSpec s;
        s.epsilon = epsilon;
        s.beta = beta;
        s.p = p;
        s.N = N;
        s.M_cap = M_cap;
        s.base_seed = stream_seed(3);
        return s;
    }

    synth::SynthesisConfig synthesis() const {
        synth::SynthesisConfig s;
        s.c = c;
        s.gamma_mode = gamma_mode;
        s.gamma = gamma;
        s.M = reference.transfer_function();
        s.W = lti::TransferFunction(W_num, W_den);
        s.filter_enabled = filter;
        s.ar_order = ar_order;
        return s;
    }

    eval::ReferenceProfile profile() const { return eval::ReferenceProfile::table(Ts, profile_width); }

    /// Independent seed streams: 0 PRBS, 1-2 dataset noise, 3 scenarios, 4 evaluation noise.
    std::uint64_t stream_seed(std::uint64_t stream) const { return stream == 0 ? seed : splitmix64(seed * 8 + stream); }
};

// ---------------------------------------------------------------------------
// Config JSON.

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorKind::input, "config: '" + where + "' must be an object");
    for (const auto& item : j.items()) {
        if (allowed.count(item.key()) == 0) {
            throw Error(ErrorKind::input, "config: unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
    RunConfig cfg;
    try {
        detail::check_keys(j,
                           {"plant", "Ts", "noise_bound", "N_d", "prbs", "seed", "omega", "scenario", "reference_model",
                            "W", "ar_order", "filter", "c", "gamma", "gamma_mode", "mode", "mu", "vertex_cap",
                            "outer_box_fallback", "profile", "evaluation"},
                           "top level");
        if (j.contains("plant")) {
            const auto& p = j.at("plant");
            if (p.is_string()) {
                cfg.plant.kind = p.get<std::string>();
            } else {
                detail::check_keys(p, {"kind", "theta", "num", "den"}, "plant");
                detail::read(p, "kind", cfg.plant.kind);
                detail::read(p, "theta", cfg.plant.theta);
                detail::read(p, "num", cfg.plant.num);
                detail::read(p, "den", cfg.plant.den);
            }
        }
        if (cfg.plant.kind == "example-2") {
            cfg.reference = ReferenceModel::named("M60");
            cfg.ar_order = 21;
            cfg.profile_width = 13.0;
        }
        detail::read(j, "Ts", cfg.Ts);
        detail::read(j, "noise_bound", cfg.noise_bound);
        detail::read(j, "N_d", cfg.N_d);
        detail::read(j, "seed", cfg.seed);
        if (j.contains("prbs")) {
            const auto& p = j.at("prbs");
            detail::check_keys(p, {"low", "high", "clock"}, "prbs");
            detail::read(p, "low", cfg.prbs_low);
            detail::read(p, "high", cfg.prbs_high);
            detail::read(p, "clock", cfg.prbs_clock);
        }
        if (j.contains("omega")) {
            const auto& o = j.at("omega");
            if (o.is_number()) {
                cfg.omega_bound = o.get<double>();
            } else {
                detail::check_keys(o, {"bound", "lower", "upper"}, "omega");
                detail::read(o, "bound", cfg.omega_bound);
                detail::read(o, "lower", cfg.omega_lower);
                detail::read(o, "upper", cfg.omega_upper);
            }
        }
        if (j.contains("scenario")) {
            const auto& s = j.at("scenario");
            detail::check_keys(s, {"epsilon", "beta", "p", "N", "M_cap", "validation", "alpha"}, "scenario");
            detail::read(s, "epsilon", cfg.epsilon);
            detail::read(s, "beta", cfg.beta);
            detail::read(s, "p", cfg.p);
            detail::read(s, "N", cfg.N);
            detail::read(s, "M_cap", cfg.M_cap);
            if (s.contains("validation") && !s.at("validation").is_null()) cfg.validation = s.at("validation").get<std::size_t>();
            if (s.contains("alpha") && !s.at("alpha").is_null()) cfg.alpha = s.at("alpha").get<double>();
        }
        if (j.contains("reference_model")) {
            const auto& m = j.at("reference_model");
            if (m.is_string()) {
                cfg.reference = ReferenceModel::named(m.get<std::string>());
            } else {
                detail::check_keys(m, {"a1", "b1"}, "reference_model");
                cfg.reference = {"custom", m.at("a1").get<double>(), m.at("b1").get<double>()};
            }
        }
        if (j.contains("W")) {
            const auto& w = j.at("W");
            detail::check_keys(w, {"num", "den"}, "W");
            detail::read(w, "num", cfg.W_num);
            detail::read(w, "den", cfg.W_den);
        }
        detail::read(j, "ar_order", cfg.ar_order);
        detail::read(j, "filter", cfg.filter);
        detail::read(j, "c", cfg.c);
        detail::read(j, "gamma", cfg.gamma);
        if (j.contains("gamma_mode")) {
            const auto g = j.at("gamma_mode").get<std::string>();
            if (g != "fixed" && g != "free") throw Error(ErrorKind::input, "config: gamma_mode must be 'fixed' or 'free'");
            cfg.gamma_mode = g == "free" ? synth::GammaMode::free : synth::GammaMode::fixed;
            if (cfg.gamma_mode == synth::GammaMode::fixed && !j.contains("gamma")) cfg.gamma = 1.0;
        }
        if (j.contains("mode")) cfg.mode = parse_mode(j.at("mode").get<std::string>());
        if (j.contains("mu") && !j.at("mu").is_null()) cfg.mu = j.at("mu").get<double>();
        detail::read(j, "vertex_cap", cfg.vertex_cap);
        detail::read(j, "outer_box_fallback", cfg.outer_box_fallback);
        if (j.contains("profile")) {
            const auto& p = j.at("profile");
            detail::check_keys(p, {"width"}, "profile");
            detail::read(p, "width", cfg.profile_width);
        }
        if (j.contains("evaluation")) {
            const auto& e = j.at("evaluation");
            detail::check_keys(e, {"noise", "disturbance"}, "evaluation");
            detail::read(e, "noise", cfg.eval_noise);
            detail::read(e, "disturbance", cfg.eval_disturbance);
        }
        cfg.validate();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::input, std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw Error(ErrorKind::input, e.what());
    }
    return cfg;
}

inline json to_json(const RunConfig& cfg) {
    json plant{{"kind", cfg.plant.kind}};
    if (!cfg.plant.theta.empty()) plant["theta"] = cfg.plant.theta;
    if (!cfg.plant.num.empty()) plant["num"] = cfg.plant.num;
    if (!cfg.plant.den.empty()) plant["den"] = cfg.plant.den;
    json omega{{"bound", cfg.omega_bound}};
    if (!cfg.omega_lower.empty()) {
        omega["lower"] = cfg.omega_lower;
        omega["upper"] = cfg.omega_upper;
    }
    json scen{{"epsilon", cfg.epsilon}, {"beta", cfg.beta}, {"p", cfg.p}, {"N", cfg.N}, {"M_cap", cfg.M_cap}};
    scen["validation"] = cfg.validation ? json(*cfg.validation) : json(nullptr);
    scen["alpha"] = cfg.alpha ? json(*cfg.alpha) : json(nullptr);
    json ref = cfg.reference.name == "custom" ? json{{"a1", cfg.reference.a1}, {"b1", cfg.reference.b1}}
                                              : json(cfg.reference.name);
    return json{{"plant", plant},
                {"Ts", cfg.Ts},
                {"noise_bound", cfg.noise_bound},
                {"N_d", cfg.N_d},
                {"prbs", {{"low", cfg.prbs_low}, {"high", cfg.prbs_high}, {"clock", cfg.prbs_clock}}},
                {"seed", cfg.seed},
                {"omega", omega},
                {"scenario", scen},
                {"reference_model", ref},
                {"W", {{"num", cfg.W_num}, {"den", cfg.W_den}}},
                {"ar_order", cfg.ar_order},
                {"filter", cfg.filter},
                {"c", cfg.c},
                {"gamma", cfg.gamma},
                {"gamma_mode", cfg.gamma_mode == synth::GammaMode::free ? "free" : "fixed"},
                {"mode", to_string(cfg.mode)},
                {"mu", cfg.mu ? json(*cfg.mu) : json(nullptr)},
                {"vertex_cap", cfg.vertex_cap},
                {"outer_box_fallback", cfg.outer_box_fallback},
                {"profile", {{"width", cfg.profile_width}}},
                {"evaluation", {{"noise", cfg.eval_noise}, {"disturbance", cfg.eval_disturbance}}}};
}

inline RunConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(signals::read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::input, "config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Stages.

inline signals::Dataset generate_dataset(const RunConfig& cfg) {
    cfg.validate();
    const auto theta = cfg.plant_theta();
    const auto u = signals::generate_prbs(cfg.N_d + static_cast<std::size_t>(theta.order()), cfg.prbs_low,
                                          cfg.prbs_high, cfg.stream_seed(0), cfg.prbs_clock);
    return signals::collect_dataset(theta, u, cfg.noise_bound, {cfg.stream_seed(1), cfg.stream_seed(2)}, cfg.Ts);
}

inline std::string dataset_hash(const signals::Dataset& ds) {
    return fnv1a(signals::dataset_csv(ds) + signals::dataset_metadata(ds));
}

struct AlphaStage {
    scenario::ScenarioRun run;
    std::string dataset_hash;
};

inline AlphaStage run_alpha(const RunConfig& cfg, const signals::Dataset& ds) {
    auto spec = cfg.scenario_spec();
    if (spec.N == 0) spec.N = scenario::min_sample_size(spec.epsilon, spec.beta, spec.p);
    AlphaStage out;
    out.run = scenario::run_scenario_method(spec, ds, cfg.omega(ds.n), cfg.validation.value_or(spec.N));
    out.dataset_hash = dataset_hash(ds);
    return out;
}

inline json to_json(const AlphaStage& a) {
    json j = scenario::to_json(a.run);
    j["dataset_hash"] = a.dataset_hash;
    return j;
}

struct Identification {
    sm::ErrorBound bound;
    std::optional<AlphaStage> alpha;
    sm::FeasibleParameterSet fps;
    bool theta_true_member = false;
    double theta_true_margin = 0.0;
    std::string dataset_hash;
    std::string fps_hash;
};

inline sm::FeasibleParameterSet attach_vertices(sm::FeasibleParameterSet fps, const RunConfig& cfg) {
    sm::EnumerationOptions opt;
    opt.vertex_cap = cfg.vertex_cap;
    try {
        return sm::enumerate_vertices(std::move(fps), opt);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::capacity || !cfg.outer_box_fallback) throw;
    }
    return sm::outer_box(std::move(fps));
}

inline Identification identify(const RunConfig& cfg, const signals::Dataset& ds) {
    Identification out;
    out.dataset_hash = dataset_hash(ds);
    const auto reg = signals::build_regressors(ds, 1);
    const auto omega = cfg.omega(ds.n);
    out.bound = sm::estimate_error_bound(reg, omega, ds.noise_bound);
    double alpha = 1.0;
    if (cfg.alpha) {
        alpha = *cfg.alpha;
    } else {
        out.alpha = run_alpha(cfg, ds);
        alpha = out.alpha->run.outcome.alpha_star;
    }
    out.fps = attach_vertices(sm::build_fps(reg, alpha, out.bound.lambda_lb, ds.noise_bound, omega), cfg);
    out.fps_hash = chain_hash(out.dataset_hash, sm::to_record(out.fps));
    const auto theta = cfg.plant_theta();
    if (theta.values().size() == out.fps.dimension()) {
        const auto m = sm::membership(theta, out.fps);
        out.theta_true_member = m.inside;
        out.theta_true_margin = m.margin;
    }
    return out;
}

inline json to_json(const Identification& id) {
    json j{{"lambda_lb", id.bound.lambda_lb},
           {"alpha", id.fps.alpha},
           {"alpha_forced", !id.alpha.has_value()},
           {"vertices", id.fps.vertices.size()},
           {"outer_box", id.fps.outer_box},
           {"constraint_rows", id.fps.H.rows()},
           {"theta_true_member", id.theta_true_member},
           {"theta_true_margin", id.theta_true_margin},
           {"dataset_hash", id.dataset_hash},
           {"fps_hash", id.fps_hash}};
    if (id.alpha) {
        j["scenario"] = {{"N", id.alpha->run.spec.N},
                         {"p", id.alpha->run.spec.p},
                         {"alpha_star", id.alpha->run.outcome.alpha_star},
                         {"violation_fraction", id.alpha->run.violation_fraction}};
    }
    return j;
}

// ---------------------------------------------------------------------------

struct Controller {
    Mode mode = Mode::ff;
    synth::FFController ff;
    synth::EIController ei;

    std::string record() const { return mode == Mode::ff ? synth::to_record(ff) : synth::to_record(ei); }
    std::string fps_hash() const { return mode == Mode::ff ? ff.fps_hash : ei.fps_hash; }
};

inline Controller controller_from_record(const std::string& text) {
    Controller c;
    if (text.rfind("ff_controller", 0) == 0) {
        c.mode = Mode::ff;
        c.ff = synth::ff_controller_from_record(text);
    } else if (text.rfind("ei_controller", 0) == 0) {
        c.mode = Mode::ei;
        c.ei = synth::ei_controller_from_record(text);
    } else {
        throw Error(ErrorKind::input, "controller record: unknown header");
    }
    return c;
}

struct Certificate {
    std::vector<std::string> labels;
    std::vector<double> min_eigenvalues;
    std::vector<double> margins;
    double tolerance = 0.0;
    bool passed = false;
};

/// Independent eigenvalue check of every block at `tolerance_factor` times the
/// solver tolerance, relative to the block scale.
inline Certificate certify(const synth::SynthesisProgram& prog, const conic::SolveReport& report, double solver_tolerance,
                           double tolerance_factor = 10.0) {
    Certificate c;
    c.tolerance = tolerance_factor * solver_tolerance;
    c.min_eigenvalues = conic::check_feasibility(report.x, prog.sdp);
    c.passed = true;
    for (std::size_t k = 0; k < prog.sdp.blocks().size(); ++k) {
        const auto& block = prog.sdp.blocks()[k];
        c.labels.push_back(block.label);
        c.margins.push_back(block.margin);
        const double scale = std::max(1.0, block.F.evaluate(report.x).norm());
        if (c.min_eigenvalues[k] - block.margin < -c.tolerance * scale) c.passed = false;
    }
    return c;
}

struct SynthesisStage {
    Controller controller;
    Certificate certificate;
    conic::SolveReport report;
    synth::GainSolution solution;
    double max_vertex_radius = 0.0;
    double mu = 0.0;
    std::string controller_hash;
};

inline SynthesisStage synthesize(const RunConfig& cfg, const signals::Dataset& ds, const sm::FeasibleParameterSet& fps,
                                 const std::string& fps_hash) {
    require(!fps.vertices.empty(), "synthesize: FPS has no vertices");
    const auto scfg = cfg.synthesis();
    SynthesisStage out;
    out.controller.mode = cfg.mode;
    const std::string dhash = dataset_hash(ds);
    if (cfg.mode == Mode::ff) {
        out.mu = cfg.mu ? *cfg.mu : synth::estimate_static_gain(ds);
        auto s = synth::synthesize_ff(ds, fps.vertices, out.mu, scfg);
        s.controller.dataset_hash = dhash;
        s.controller.fps_hash = fps_hash;
        out.controller.ff = s.controller;
        out.certificate = certify(s.program, s.report, scfg.sdp.tolerance);
        out.report = std::move(s.report);
        out.solution = std::move(s.solution);
        out.max_vertex_radius = eval::robust_stability_check(out.controller.ff, fps.vertices, 0).max_radius;
    } else {
        auto s = synth::synthesize_ei(ds, fps.vertices, scfg);
        s.controller.dataset_hash = dhash;
        s.controller.fps_hash = fps_hash;
        out.controller.ei = s.controller;
        out.certificate = certify(s.program, s.report, scfg.sdp.tolerance);
        out.report = std::move(s.report);
        out.solution = std::move(s.solution);
        out.max_vertex_radius = eval::robust_stability_check(out.controller.ei, fps.vertices, 0).max_radius;
    }
    out.controller_hash = chain_hash(fps_hash, out.controller.record());
    return out;
}

inline json to_json(const Certificate& c) {
    json blocks = json::array();
    for (std::size_t k = 0; k < c.labels.size(); ++k) {
        blocks.push_back({{"label", c.labels[k]}, {"min_eigenvalue", c.min_eigenvalues[k]}, {"margin", c.margins[k]}});
    }
    return json{{"passed", c.passed}, {"tolerance", c.tolerance}, {"blocks", blocks}};
}

inline json to_json(const SynthesisStage& s) {
    return json{{"mode", to_string(s.controller.mode)},
                {"status", conic::to_string(s.report.status)},
                {"objective", s.report.objective},
                {"iterations", s.report.iterations},
                {"sigma", s.solution.sigma},
                {"lambda_g", s.solution.lambda_g},
                {"gamma", s.solution.gamma},
                {"gamma_fallback", s.solution.gamma_fallback},
                {"G_condition", s.solution.condition},
                {"mu", s.controller.mode == Mode::ff ? json(s.mu) : json(nullptr)},
                {"max_vertex_radius", s.max_vertex_radius},
                {"certificate", to_json(s.certificate)},
                {"fps_hash", s.controller.fps_hash()},
                {"controller_hash", s.controller_hash}};
}

// ---------------------------------------------------------------------------

struct EvaluationStage {
    eval::ClosedLoopReport loop;
    std::optional<eval::BodeTable> bode;
    std::optional<eval::StabilityAudit> audit;
    std::string controller_hash;
    std::string report_hash;
};

inline EvaluationStage evaluate(const RunConfig& cfg, const Controller& ctrl, const sm::FeasibleParameterSet* fps = nullptr) {
    const auto plant = cfg.plant_theta();
    const auto M = cfg.reference.transfer_function();
    eval::SimulationOptions opt;
    opt.noise_bound = cfg.eval_noise ? cfg.noise_bound : 0.0;
    opt.seed = cfg.stream_seed(4);
    opt.output_disturbance = cfg.eval_disturbance;
    EvaluationStage out;
    out.controller_hash = chain_hash(ctrl.fps_hash(), ctrl.record());
    auto run = [&](const auto& c) {
        out.loop = ctrl.mode == Mode::ff ? eval::simulate_closed_loop_ff(plant, ctrl.ff, cfg.profile(), M, opt)
                                         : eval::simulate_closed_loop_ei(plant, ctrl.ei, cfg.profile(), M, opt);
        if (fps != nullptr && !fps->vertices.empty()) {
            out.audit = eval::robust_stability_check(c, fps->vertices, 100, cfg.stream_seed(5));
            out.loop.radius_vertices = out.audit->max_radius;
        }
        if (out.loop.radius_true < 1.0) out.bode = eval::bode_comparison(c, plant, M, lti::log_frequency_grid(200));
    };
    if (ctrl.mode == Mode::ff) {
        run(ctrl.ff);
    } else {
        run(ctrl.ei);
    }
    out.report_hash = chain_hash(out.controller_hash, eval::summary_json(out.loop).dump());
    return out;
}

inline json to_json(const EvaluationStage& e) {
    json j = eval::summary_json(e.loop);
    j["controller_hash"] = e.controller_hash;
    j["report_hash"] = e.report_hash;
    if (e.audit) {
        j["audit"] = {{"vertices", e.audit->vertex_radii.size()},
                      {"combinations", e.audit->combination_radii.size()},
                      {"max_radius", e.audit->max_radius}};
    }
    return j;
}

// ---------------------------------------------------------------------------
// Artifact directory.

struct ArtifactPaths {
    std::filesystem::path dir;

    std::string dataset_stem() const { return (dir / "dataset").string(); }
    std::string fps() const { return (dir / "fps.txt").string(); }
    std::string identify() const { return (dir / "identify.json").string(); }
    std::string scenario() const { return (dir / "scenario.json").string(); }
    std::string controller() const { return (dir / "controller.txt").string(); }
    std::string synthesis() const { return (dir / "synthesis.json").string(); }
    std::string trajectories() const { return (dir / "trajectories.csv").string(); }
    std::string bode() const { return (dir / "bode.csv").string(); }
    std::string report() const { return (dir / "report.json").string(); }
    std::string config() const { return (dir / "config.json").string(); }
};

}  // namespace smvrft::pipeline
