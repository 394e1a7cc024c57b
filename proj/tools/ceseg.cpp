// ceseg: gen-data / train / eval / report / params.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ceseg/commands.hpp"

namespace {

struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant;
    std::optional<std::string> profile;
    std::optional<std::string> out;
    std::optional<std::string> manifest;
    std::optional<std::string> checkpoint;
    std::optional<int> epochs;
    int folds = 0;
    bool resume = false;
    std::string split = "test";
    std::vector<std::string> reports;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON run config (sections: model, train, phantom, paths)");
    cmd->add_option("--profile", f.profile, "paper_defaults or desk_scale");
    cmd->add_option("--out", f.out, "output directory");
}

/// Profile defaults < config file < flags. Flag paths resolve against the
/// working directory.
ceseg::RunConfig resolve(const Flags& f, const std::string& command) {
    auto rc = ceseg::load_run_config(f.config ? std::optional<std::filesystem::path>(*f.config) : std::nullopt,
                                     f.profile);
    auto absolute = [](const std::string& p) { return std::filesystem::absolute(p).lexically_normal().string(); };
    if (f.seed) {
        if (command == "gen-data") rc.phantom.seed = *f.seed;
        else rc.train.seed = *f.seed;
    }
    if (f.variant) rc.train.variant = *f.variant;
    if (f.epochs) rc.train.epochs = *f.epochs;
    if (f.out) {
        if (command == "gen-data") rc.paths.data_dir = absolute(*f.out);
        else rc.paths.out_dir = absolute(*f.out);
    }
    if (f.manifest) rc.paths.manifest = absolute(*f.manifest);
    if (f.checkpoint) rc.paths.checkpoint = absolute(*f.checkpoint);
    rc.validate();
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contextual-embedding slice segmentation: data, training, evaluation, reports"};
    app.require_subcommand(1);
    Flags f;

    auto* gen = app.add_subcommand("gen-data", "write phantom volumes and a dataset manifest");
    add_common(gen, f);
    gen->add_option("--seed", f.seed, "phantom and split seed");
    gen->add_option("--folds", f.folds, "write k fold manifests instead of one 60/20/20 split")
        ->check(CLI::NonNegativeNumber);

    auto* tr = app.add_subcommand("train", "train one variant");
    add_common(tr, f);
    tr->add_option("--seed", f.seed, "training seed");
    tr->add_option("--variant", f.variant, "baseline or ce")->check(CLI::IsMember({"baseline", "ce"}));
    tr->add_option("--manifest", f.manifest, "dataset manifest");
    tr->add_option("--epochs", f.epochs, "epoch budget")->check(CLI::PositiveNumber);
    tr->add_flag("--resume", f.resume, "continue from <out>/last.ckpt");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    add_common(ev, f);
    ev->add_option("--checkpoint", f.checkpoint, "checkpoint (default <out>/best.ckpt)");
    ev->add_option("--manifest", f.manifest, "dataset manifest");
    ev->add_option("--split", f.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

    auto* rep = app.add_subcommand("report", "compare report.json files (the first is the reference)");
    rep->add_option("reports", f.reports, "report.json files")->required()->expected(2, -1);
    rep->add_option("--out", f.out, "output directory")->required();

    auto* par = app.add_subcommand("params", "print learnable parameter counts");
    par->add_option("--config", f.config, "JSON run config");
    par->add_option("--variant", f.variant, "baseline or ce")->check(CLI::IsMember({"baseline", "ce"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            ceseg::cmd_gen_data(resolve(f, "gen-data"), f.folds, std::cout);
        } else if (tr->parsed()) {
            ceseg::cmd_train(resolve(f, "train"), f.resume, std::cout);
        } else if (ev->parsed()) {
            ceseg::cmd_eval(resolve(f, "eval"), ceseg::parse_split(f.split), std::cout);
        } else if (rep->parsed()) {
            std::vector<std::filesystem::path> paths(f.reports.begin(), f.reports.end());
            ceseg::cmd_report(paths, *f.out, std::cout);
        } else if (par->parsed()) {
            const auto rc = resolve(f, "params");
            std::cout << ceseg::parameter_report(rc.model, ceseg::parse_variant(rc.train.variant)).dump(2) << "\n";
        }
    } catch (const ceseg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
