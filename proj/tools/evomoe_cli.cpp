// SPDX-License-Identifier: Apache-2.0
// evomoe: train the three stages, evaluate, and run the routing probes.
#include "evomoe/checkpoint.hpp"
#include "evomoe/config.hpp"
#include "evomoe/diagnostics.hpp"
#include "evomoe/errors.hpp"
#include "evomoe/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace evomoe;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

enum class LogLevel { quiet, info, debug };

LogLevel log_level()
{
    const char* v = std::getenv("EVOMOE_LOG");
    if (!v)
        return LogLevel::info;
    const std::string s = v;
    if (s == "quiet")
        return LogLevel::quiet;
    if (s == "debug")
        return LogLevel::debug;
    return LogLevel::info;
}

/// Failure that maps straight to the usage/contract exit status.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void print_resolved(const RunConfig& config)
{
    std::cout << "seed=" << config.seed << "\n" << "config_hash=" << config_hash(config) << "\n"
              << to_json(config) << std::flush;
}

RunConfig resolve_config(const std::optional<std::string>& path, const std::optional<std::uint64_t>& seed)
{
    RunConfig c = path ? load_config(*path) : RunConfig{};
    if (seed)
        c.seed = *seed;
    return c;
}

json step_json(const StepRecord& r)
{
    json j{{"step", r.step},
           {"stage", r.stage},
           {"regressive", r.loss.regressive},
           {"aux", r.loss.aux},
           {"total", r.loss.total},
           {"betas", r.betas},
           {"lr", r.lr}};
    if (r.eval_ce)
        j["eval_ce"] = *r.eval_ce;
    return j;
}

struct TrainArgs {
    std::optional<std::string> config;
    int stage = 1;
    std::optional<std::string> from;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> max_steps;
};

TrainState prepare_state(const TrainArgs& a)
{
    if (!a.from) {
        if (a.stage != 1)
            throw UsageError("stage " + std::to_string(a.stage) + " needs --from with a stage-" +
                             std::to_string(a.stage - 1) + " checkpoint");
        return start_training(resolve_config(a.config, a.seed));
    }
    TrainState s = load_checkpoint(*a.from);
    if (a.config) {
        const auto c = load_config(*a.config);
        check_compatible(c, s.config, s.model.is_moe());
        s.config = c;
    }
    if (a.seed)
        s.config.seed = *a.seed;
    if (s.stage == a.stage)
        return s;  // resume
    if (s.stage != a.stage - 1)
        throw UsageError("stage " + std::to_string(a.stage) + " needs a stage-" + std::to_string(a.stage - 1) +
                         " checkpoint, '" + *a.from + "' is at stage " + std::to_string(s.stage));
    if (!stage_complete(s))
        std::cerr << "warning: starting stage " << a.stage << " from an unfinished stage-" << s.stage
                  << " checkpoint (" << s.step << " of " << s.config.stage(s.stage).steps << " steps)\n";
    if (a.stage == 2) {
        for (const auto& w : transition_to_moe(s))
            std::cerr << "warning: " << w << "\n";
    } else {
        begin_router_stage(s);
    }
    return s;
}

int cmd_train(const TrainArgs& a)
{
    if (a.stage < 1 || a.stage > 3)
        throw UsageError("--stage must be 1, 2 or 3");
    TrainState s = prepare_state(a);
    print_resolved(s.config);
    const auto level = log_level();
    const std::string log_path = a.out + ".log.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log)
        throw FormatError("cannot write '" + log_path + "'");
    const auto& st = s.config.stage(s.stage);
    log << json{{"header", true},
                {"stage", s.stage},
                {"start_step", s.step},
                {"seed", s.config.seed},
                {"config_hash", config_hash(s.config)},
                {"optimizer", "adam"},
                {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
                {"lr_schedule", "constant"},
                {"learning_rate", st.learning_rate},
                {"note", "constant learning rate at desk scale; no warmup or cosine decay"}}
               .dump()
        << "\n";

    RunOptions opts;
    opts.max_steps = a.max_steps;
    opts.on_step = [&](const StepRecord& r) {
        log << step_json(r).dump() << "\n";
        const bool show = level == LogLevel::debug || (level == LogLevel::info && r.eval_ce);
        if (show) {
            std::cerr << "stage " << r.stage << " step " << r.step << "/" << st.steps << " total=" << r.loss.total;
            if (r.eval_ce)
                std::cerr << " eval_ce=" << *r.eval_ce;
            std::cerr << "\n";
        }
    };
    try {
        run_stage(s, opts);
    } catch (const NumericError&) {
        log.flush();
        const std::string dump = a.out + ".nan.ckpt";
        save_checkpoint(dump, s);
        std::cerr << "diagnostic state written to " << dump << "\n";
        throw;
    }
    save_checkpoint(a.out, s);
    write_sidecar(a.out, s.config, s.config.seed);
    write_sidecar(log_path, s.config, s.config.seed);
    std::cout << "checkpoint=" << a.out << "\nstage=" << s.stage << "\nstep=" << s.step << "\n";
    return 0;
}

TrainState load_for_read(const std::string& path)
{
    try {
        return load_checkpoint(path);
    } catch (const FormatError& e) {
        throw UsageError(e.what());
    }
}

int cmd_eval(const std::string& ckpt, std::optional<std::size_t> batches, std::optional<std::uint64_t> seed)
{
    TrainState s = load_for_read(ckpt);
    if (batches)
        s.config.eval_batches = *batches;
    if (seed)
        s.config.seed = *seed;
    print_resolved(s.config);
    std::cout << "eval_ce=" << format_real(evaluate(s)) << "\n";
    return 0;
}

struct ProbeArgs {
    std::string kind;
    std::string ckpt;
    std::string out;
    std::size_t trials = 8;
    std::optional<std::size_t> layer;
    std::optional<std::uint64_t> seed;
};

int cmd_probe(const ProbeArgs& a)
{
    TrainState s = load_for_read(a.ckpt);
    const std::uint64_t seed = a.seed ? *a.seed : s.config.seed;
    print_resolved(s.config);
    if (!s.model.is_moe())
        throw UsageError("probe needs a checkpoint with MoE layers; '" + a.ckpt + "' is dense");
    std::filesystem::create_directories(a.out);
    const auto dir = std::filesystem::path(a.out);
    std::string artifact, stats;
    if (a.kind == "shuffle") {
        const auto r = shuffle_probe(s, a.trials, seed);
        artifact = (dir / "shuffle.csv").string();
        write_shuffle_csv(artifact, r);
        stats = shuffle_stats_json(r);
        std::cout << "mean_abs_delta=" << format_real(r.mean_abs_delta()) << "\n";
    } else if (a.kind == "kde") {
        const std::size_t layer = a.layer ? *a.layer : last_moe_layer(s.model);
        const auto r = logit_kde(s, layer);
        artifact = (dir / "kde.csv").string();
        write_kde_csv(artifact, r);
        stats = kde_stats_json(r);
        std::cout << "overlap=" << format_real(r.kde.overlap) << "\n";
    } else if (a.kind == "dist") {
        const auto d = modality_distribution(s);
        artifact = (dir / "modal_dist.csv").string();
        write_modal_dist_csv(artifact, d);
        stats = dist_stats_json(d);
        std::cout << "tv_distance_last=" << format_real(d.tv_distance.back()) << "\n";
    } else {
        throw UsageError("unknown probe kind '" + a.kind + "' (expected shuffle, kde or dist)");
    }
    write_sidecar(artifact, s.config, seed);
    const auto report = (dir / (a.kind + "_report.json")).string();
    write_probe_report(report, a.kind, s, seed, artifact, stats);
    write_sidecar(report, s.config, seed);
    std::cout << "artifact=" << artifact << "\nreport=" << report << "\n";
    return 0;
}

int cmd_export_config(const std::optional<std::string>& config, const std::optional<std::uint64_t>& seed,
                      const std::optional<std::string>& out)
{
    const auto c = resolve_config(config, seed);
    if (!out) {
        std::cout << to_json(c);
        return 0;
    }
    std::ofstream f(*out, std::ios::trunc);
    if (!f)
        throw FormatError("cannot write '" + *out + "'");
    f << to_json(c);
    f.close();
    write_sidecar(*out, c, c.seed);
    std::cout << "config=" << *out << "\n";
    return 0;
}

int cmd_inspect(const std::string& ckpt)
{
    const TrainState s = load_for_read(ckpt);
    print_resolved(s.config);
    std::cout << "stage=" << s.stage << "\nstep=" << s.step << "\nsparse=" << (s.model.is_moe() ? 1 : 0)
              << "\nadam_t=" << s.adam.t << "\n";
    std::size_t total = 0;
    for (const auto& p : parameters(s.model)) {
        std::cout << "param " << p.name << " " << shape_str(p.tensor.shape())
                  << (p.tensor.requires_grad() ? " trainable" : " frozen") << "\n";
        total += p.tensor.size();
    }
    std::cout << "parameters=" << total << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Three-stage sparse expert training on a synthetic two-modality task"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "run or resume one training stage");
    t->add_option("--config", train.config, "JSON config file")->check(CLI::ExistingFile);
    t->add_option("--stage", train.stage, "stage to run: 1, 2 or 3")->required();
    t->add_option("--from", train.from, "checkpoint of the previous stage, or of this stage to resume");
    t->add_option("--out", train.out, "output checkpoint path")->required();
    t->add_option("--seed", train.seed, "overrides the config seed");
    t->add_option("--max-steps", train.max_steps, "stop after this many steps");

    std::string eval_ckpt;
    std::optional<std::size_t> eval_batches;
    std::optional<std::uint64_t> eval_seed;
    auto* e = app.add_subcommand("eval", "held-out cross-entropy of a checkpoint");
    e->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    e->add_option("--batches", eval_batches, "number of held-out batches");
    e->add_option("--seed", eval_seed, "overrides the config seed");

    ProbeArgs probe;
    auto* p = app.add_subcommand("probe", "routing diagnostics on an MoE checkpoint");
    p->add_option("--kind", probe.kind, "shuffle, kde or dist")->required()->check(
        CLI::IsMember({"shuffle", "kde", "dist"}));
    p->add_option("--ckpt", probe.ckpt, "checkpoint path")->required();
    p->add_option("--out", probe.out, "output directory")->required();
    p->add_option("--trials", probe.trials, "shuffle trials")->check(CLI::PositiveNumber);
    p->add_option("--layer", probe.layer, "MoE block index for kde (default: last MoE layer)");
    p->add_option("--seed", probe.seed, "probe seed (default: config seed)");

    std::optional<std::string> export_config, export_out;
    std::optional<std::uint64_t> export_seed;
    auto* x = app.add_subcommand("export-config", "print the resolved configuration");
    x->add_option("--config", export_config, "JSON config file")->check(CLI::ExistingFile);
    x->add_option("--seed", export_seed, "overrides the config seed");
    x->add_option("--out", export_out, "write to this file instead of stdout");

    std::string inspect_ckpt;
    auto* i = app.add_subcommand("inspect", "summarise a checkpoint");
    i->add_option("--ckpt", inspect_ckpt, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kExitUsage;
    }

    try {
        if (t->parsed())
            return cmd_train(train);
        if (e->parsed())
            return cmd_eval(eval_ckpt, eval_batches, eval_seed);
        if (p->parsed())
            return cmd_probe(probe);
        if (x->parsed())
            return cmd_export_config(export_config, export_seed, export_out);
        if (i->parsed())
            return cmd_inspect(inspect_ckpt);
    } catch (const NumericError& err) {
        std::cerr << "numeric failure: " << err.what() << "\n";
        return kExitNumeric;
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const evomoe::Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
