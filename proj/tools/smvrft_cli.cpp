// smvrft: identify | alpha | synthesize | evaluate | full

#include "smvrft/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

using namespace smvrft;
using pipeline::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitUnstable = 3;
constexpr int kExitInput = 4;

struct Options {
    std::string config;
    std::string out = "smvrft_out";
    std::optional<std::uint64_t> seed;
    std::string mode;
    std::string dataset;
};

struct Context {
    pipeline::RunConfig cfg;
    pipeline::ArtifactPaths paths;
    std::string dataset_source;
};

Context make_context(const Options& o) {
    Context ctx;
    ctx.cfg = o.config.empty() ? pipeline::RunConfig{} : pipeline::load_config(o.config);
    if (o.seed) ctx.cfg.seed = *o.seed;
    if (!o.mode.empty()) ctx.cfg.mode = pipeline::parse_mode(o.mode);
    try {
        ctx.cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw Error(ErrorKind::input, e.what());
    }
    ctx.paths.dir = o.out;
    std::error_code ec;
    std::filesystem::create_directories(ctx.paths.dir, ec);
    if (ec) throw Error(ErrorKind::input, "cannot create output directory '" + o.out + "': " + ec.message());
    ctx.dataset_source = o.dataset;
    if (ctx.cfg.N_d > 5000 || ctx.cfg.epsilon < 0.05) {
        std::cerr << "warning: large settings (N_d " << ctx.cfg.N_d << ", epsilon " << ctx.cfg.epsilon
                  << ") can take hours on one core\n";
    }
    signals::write_text_file(ctx.paths.config(), pipeline::to_json(ctx.cfg).dump(2) + "\n");
    return ctx;
}

void write_json(const std::string& path, const json& j) { signals::write_text_file(path, j.dump(2) + "\n"); }

/// Ingests --dataset when given, otherwise reuses or generates the one in the output directory.
signals::Dataset obtain_dataset(const Context& ctx, bool allow_generate) {
    if (!ctx.dataset_source.empty()) {
        auto ds = signals::load_dataset(ctx.dataset_source);
        signals::save_dataset(ds, ctx.paths.dataset_stem());
        return ds;
    }
    if (std::filesystem::exists(ctx.paths.dataset_stem() + ".csv")) return signals::load_dataset(ctx.paths.dataset_stem());
    if (!allow_generate) throw Error(ErrorKind::input, "no dataset: pass --dataset or run identify first");
    auto ds = pipeline::generate_dataset(ctx.cfg);
    signals::save_dataset(ds, ctx.paths.dataset_stem());
    return ds;
}

struct LoadedFps {
    sm::FeasibleParameterSet fps;
    std::string hash;
};

LoadedFps load_fps(const Context& ctx, const signals::Dataset& ds) {
    const std::string text = signals::read_text_file(ctx.paths.fps());
    LoadedFps out;
    try {
        out.fps = sm::fps_from_record(text);
    } catch (const std::invalid_argument& e) {
        throw Error(ErrorKind::input, std::string("fps artifact: ") + e.what());
    }
    out.hash = pipeline::chain_hash(pipeline::dataset_hash(ds), text);
    if (std::filesystem::exists(ctx.paths.identify())) {
        const auto id = json::parse(signals::read_text_file(ctx.paths.identify()), nullptr, false);
        if (!id.is_discarded() && id.contains("fps_hash") && id["fps_hash"] != out.hash) {
            throw Error(ErrorKind::input, "fps artifact does not match identify.json (provenance hash differs)");
        }
    }
    return out;
}

int cmd_identify(const Context& ctx) {
    const auto ds = obtain_dataset(ctx, true);
    const auto id = pipeline::identify(ctx.cfg, ds);
    signals::write_text_file(ctx.paths.fps(), sm::to_record(id.fps));
    if (id.alpha) write_json(ctx.paths.scenario(), pipeline::to_json(*id.alpha));
    const json j = pipeline::to_json(id);
    write_json(ctx.paths.identify(), j);
    std::cout << j.dump() << '\n';
    return kExitOk;
}

int cmd_alpha(const Context& ctx) {
    const auto ds = obtain_dataset(ctx, false);
    const auto a = pipeline::run_alpha(ctx.cfg, ds);
    const json j = pipeline::to_json(a);
    write_json(ctx.paths.scenario(), j);
    std::cout << json{{"N", a.run.spec.N},
                      {"p", a.run.spec.p},
                      {"alpha_star", a.run.outcome.alpha_star},
                      {"violation_fraction", a.run.violation_fraction},
                      {"dataset_hash", a.dataset_hash}}
                     .dump()
              << '\n';
    return kExitOk;
}

int cmd_synthesize(const Context& ctx) {
    const auto ds = obtain_dataset(ctx, false);
    const auto loaded = load_fps(ctx, ds);
    pipeline::SynthesisStage s;
    try {
        s = pipeline::synthesize(ctx.cfg, ds, loaded.fps, loaded.hash);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::infeasible) throw;
        throw Error(ErrorKind::infeasible,
                    std::string(e.what()) +
                        "\nthe LMI problem has no solution for this FPS; try a larger p (fewer, tighter scenarios "
                        "kept), a smaller forced alpha, or the outer-box vertex fallback");
    }
    signals::write_text_file(ctx.paths.controller(), s.controller.record());
    const json j = pipeline::to_json(s);
    write_json(ctx.paths.synthesis(), j);
    std::cout << json{{"mode", j["mode"]},
                      {"status", j["status"]},
                      {"max_vertex_radius", s.max_vertex_radius},
                      {"certificate", s.certificate.passed},
                      {"controller_hash", s.controller_hash}}
                     .dump()
              << '\n';
    if (!s.certificate.passed) {
        std::cerr << "error: the solution failed the independent eigenvalue certificate\n";
        return kExitOther;
    }
    return kExitOk;
}

int cmd_evaluate(const Context& ctx) {
    pipeline::Controller ctrl;
    try {
        ctrl = pipeline::controller_from_record(signals::read_text_file(ctx.paths.controller()));
    } catch (const std::invalid_argument& e) {
        throw Error(ErrorKind::input, std::string("controller artifact: ") + e.what());
    }
    std::optional<LoadedFps> loaded;
    if (std::filesystem::exists(ctx.paths.fps()) && std::filesystem::exists(ctx.paths.dataset_stem() + ".csv")) {
        loaded = load_fps(ctx, signals::load_dataset(ctx.paths.dataset_stem()));
        if (!ctrl.fps_hash().empty() && ctrl.fps_hash() != loaded->hash) {
            throw Error(ErrorKind::input, "controller artifact was not synthesized from the FPS in '" +
                                              ctx.paths.dir.string() + "'");
        }
    }
    const auto e = pipeline::evaluate(ctx.cfg, ctrl, loaded ? &loaded->fps : nullptr);
    signals::write_text_file(ctx.paths.trajectories(), eval::trajectories_csv(e.loop));
    if (e.bode) signals::write_text_file(ctx.paths.bode(), eval::bode_csv(*e.bode));
    json j = pipeline::to_json(e);
    j["mode"] = pipeline::to_string(ctrl.mode);
    j["fps_hash"] = ctrl.fps_hash();
    write_json(ctx.paths.report(), j);
    std::cout << j.dump() << '\n';
    if (e.loop.unstable) {
        std::cerr << "error: closed loop diverged during evaluation\n";
        return kExitUnstable;
    }
    return kExitOk;
}

int cmd_full(const Context& ctx) {
    if (const int rc = cmd_identify(ctx); rc != kExitOk) return rc;
    if (const int rc = cmd_synthesize(ctx); rc != kExitOk) return rc;
    return cmd_evaluate(ctx);
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::input: return kExitInput;
        case ErrorKind::infeasible: return kExitInfeasible;
        case ErrorKind::unstable: return kExitUnstable;
        default: return kExitOther;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Set-membership VRFT: robust data-driven state-feedback design"};
    app.require_subcommand(1, 1);
    app.fallthrough();
    Options opt;
    app.add_option("-c,--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("-o,--out", opt.out, "artifact directory")->capture_default_str();
    app.add_option("-s,--seed", opt.seed, "seed override");
    app.add_option("-m,--mode", opt.mode, "controller structure")->check(CLI::IsMember({"ff", "ei"}));
    app.add_option("-d,--dataset", opt.dataset, "dataset stem (<stem>.csv and <stem>.json) to ingest");

    int (*command)(const Context&) = nullptr;
    app.add_subcommand("identify", "generate or ingest data, estimate alpha, build the FPS and its vertices")
        ->callback([&] { command = cmd_identify; });
    app.add_subcommand("alpha", "scenario estimation of alpha on the dataset")->callback([&] { command = cmd_alpha; });
    app.add_subcommand("synthesize", "solve the robust VRFT LMI problem on the FPS vertices")
        ->callback([&] { command = cmd_synthesize; });
    app.add_subcommand("evaluate", "simulate the reference profile and report FIT, radii and Bode data")
        ->callback([&] { command = cmd_evaluate; });
    app.add_subcommand("full", "identify, synthesize and evaluate")->callback([&] { command = cmd_full; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitInput;
    }

    try {
        return command(make_context(opt));
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitOther;
    }
}
