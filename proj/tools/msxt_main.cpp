#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <msxt/commands.hpp>
#include <msxt/errors.hpp>
#include <msxt/logging.hpp>

namespace {

using nlohmann::json;

constexpr const char* kFooter = R"(Exit codes:
  0  success
  1  internal error
  2  usage error (bad flags or arguments)
  3  file error (missing, unreadable, or corrupt)
  4  config schema violation
  5  data shape or contract mismatch
  6  numeric failure during training

Environment:
  MOMENT_LOG_LEVEL   stderr verbosity: error|info|debug (default info)
)";

int fail(const std::string& type, int code, const std::exception& e) {
    json line;
    line["error"] = e.what();
    line["type"] = type;
    std::cerr << line.dump() << "\n";
    return code;
}

json table_json(const msxt::RecallTable& t) {
    json j;
    j["r1_03"] = t.r1_iou03;
    j["r1_05"] = t.r1_iou05;
    j["r5_03"] = t.r5_iou03;
    j["r5_05"] = t.r5_iou05;
    return j;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"msxt: multi-scale cross-modal transformer for moment localization"};
    app.footer(kFooter);
    app.require_subcommand(1);

    msxt::GenerateOptions gopt;
    auto* gen = app.add_subcommand("generate", "Build the synthetic dataset from a config");
    gen->add_option("--config", gopt.config, "Run config JSON path")->required();
    gen->add_option("--out", gopt.out_dir, "Output dataset directory")->required();

    msxt::TrainOptions topt;
    auto* train = app.add_subcommand("train", "Train a model on a generated dataset");
    train->add_option("--config", topt.config, "Run config JSON path")->required();
    train->add_option("--data", topt.data_dir, "Dataset directory")->required();
    train->add_option("--out", topt.out_dir, "Run output directory")->required();

    msxt::EvalOptions eopt;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    eval->add_option("--checkpoint", eopt.checkpoint, "Checkpoint path")->required();
    eval->add_option("--data", eopt.data_dir, "Dataset directory")->required();
    eval->add_option("--split", eopt.split, "Split name (default val)");
    eval->add_option("--out", eopt.out_path, "Predictions JSONL output path")->required();

    msxt::EnsembleOptions nopt;
    std::vector<std::string> preds;
    auto* ens = app.add_subcommand("ensemble", "Merge two prediction files and rescore");
    ens->add_option("--pred", preds, "Two prediction JSONL paths")->required()->expected(2);
    ens->add_option("--out", nopt.out_path, "Merged predictions output path")->required();

    msxt::AugmentPreviewOptions popt;
    auto* prev = app.add_subcommand("augment-preview",
                                    "Print before/after spans for augmentation draws");
    prev->add_option("--config", popt.config, "Run config JSON path")->required();
    prev->add_option("--data", popt.data_dir, "Dataset directory")->required();
    prev->add_option("--n", popt.n, "Number of draws (default 10)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        json line;
        line["error"] = std::string(e.what());
        line["type"] = "usage";
        std::cerr << line.dump() << "\n";
        return 2;
    }

    if (const char* lvl = std::getenv("MOMENT_LOG_LEVEL"); lvl && *lvl) {
        try {
            msxt::logging::set_level(msxt::logging::parse_level(lvl));
        } catch (const msxt::ConfigError& e) {
            return fail("config", 4, e);
        }
    }

    try {
        if (gen->parsed()) {
            cmd_generate(gopt);
        } else if (train->parsed()) {
            const auto s = cmd_train(topt);
            json out;
            out["final_checkpoint"] = s.final_checkpoint.string();
            out["best_checkpoint"] = s.best_checkpoint.string();
            out["steps"] = s.steps;
            out["final_val"] = table_json(s.final_val);
            out["best_val"] = table_json(s.best_val);
            std::cout << out.dump() << "\n";
        } else if (eval->parsed()) {
            cmd_eval(eopt, std::cout);
        } else if (ens->parsed()) {
            nopt.pred_a = preds[0];
            nopt.pred_b = preds[1];
            cmd_ensemble(nopt, std::cout);
        } else if (prev->parsed()) {
            cmd_augment_preview(popt, std::cout);
        }
        return 0;
    } catch (const msxt::IoError& e) {
        return fail("io", 3, e);
    } catch (const msxt::ConfigError& e) {
        return fail("config", 4, e);
    } catch (const msxt::ShapeError& e) {
        return fail("shape", 5, e);
    } catch (const msxt::ContractError& e) {
        return fail("contract", 5, e);
    } catch (const msxt::NumericError& e) {
        return fail("numeric", 6, e);
    } catch (const std::exception& e) {
        return fail("internal", 1, e);
    }
}
