#include <CLI11.hpp>

#include "flowforget/driver.hpp"

int main(int argc, char** argv) {
    CLI::App app{"continuous-flow identity unlearning lab"};
    app.require_subcommand(1);

    flowforget::CliOptions opts;
    const char* subs[] = {"unlearn",  "sweep", "ablation",  "multi-id",
                          "noise",    "gradcheck", "theorems", "report"};
    const char* descs[] = {
        "train one unlearning run and write metrics + checkpoints",
        "run the grid selected by the `sweep` config key",
        "discrete baseline vs NODE-only vs NODE+TC",
        "sequentially unlearn the `multi_ids` identities",
        "latent-noise attack, NODE vs discrete baseline",
        "gradient agreement table (finite differences, adjoint vs unrolled)",
        "identity-at-init, Gronwall/smoothness, and non-crossing checks",
        "standard before/after metrics over the full seed list",
    };
    for (std::size_t i = 0; i < std::size(subs); ++i) {
        CLI::App* sub = app.add_subcommand(subs[i], descs[i]);
        sub->add_option("--config", opts.config_path, "flat key=value config file");
        sub->add_option("--set", opts.overrides, "KEY=VALUE override (repeatable)")
            ->take_all();
        sub->add_option("--seed", opts.seed, "replace the config's seed list with one seed");
        sub->add_option("--out", opts.out_dir, "output directory (default: out)");
        sub->add_option("--jobs", opts.jobs, "max concurrent grid points (default: 1, serial)");
        sub->callback([&opts, name = std::string(subs[i])] { opts.subcommand = name; });
    }

    CLI11_PARSE(app, argc, argv);
    return flowforget::dispatch(opts);
}
