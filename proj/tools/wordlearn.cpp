// wordlearn: prepare, pretrain, fewshot, report and synth subcommands.

#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "wordlearn/experiment.hpp"

namespace {

struct PlanArgs {
  std::string preset;  // empty: the config file's preset, else desk
  std::string config;
  std::string out;
  std::map<std::string, std::string> flags;
};

void add_plan_options(CLI::App* cmd, PlanArgs& args) {
  cmd->add_option("--preset", args.preset, "paper or desk (default desk)");
  cmd->add_option("--config", args.config, "key = value settings file");
  cmd->add_option("--out", args.out, "output directory (default $WORDLEARN_OUT or ./wordlearn-out)");
  for (const auto& spec : wordlearn::setting_specs()) {
    if (spec.key == "out") continue;
    cmd->add_option_function<std::string>(
        "--" + spec.key, [&args, key = spec.key](const std::string& v) { args.flags[key] = v; }, spec.help);
  }
}

wordlearn::ExperimentPlan resolve(const PlanArgs& args) {
  wordlearn::Settings config;
  if (!args.config.empty()) config = wordlearn::read_config_file(args.config);
  auto flags = args.flags;
  if (!args.out.empty()) flags["out"] = args.out;
  std::string preset = args.preset;
  if (preset.empty()) preset = config.count("preset") ? config.at("preset") : "desk";
  return wordlearn::make_plan(preset, config, flags);
}

int run(int argc, char** argv) {
  CLI::App app{"Few-shot word learning with a pretrained LSTM language model"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no progress messages");

  PlanArgs prep_args, pre_args, fs_args, synth_args;
  auto* prepare = app.add_subcommand("prepare", "hold out the roster words and write per-word sentence files");
  add_plan_options(prepare, prep_args);
  auto* pretrain = app.add_subcommand("pretrain", "pretrain on the prepared corpus without the roster words");
  add_plan_options(pretrain, pre_args);
  auto* fewshot = app.add_subcommand("fewshot", "run the few-shot grid for every prepared word");
  add_plan_options(fewshot, fs_args);
  auto* synth = app.add_subcommand("synth", "write a synthetic topic corpus and its rare-word roster");
  add_plan_options(synth, synth_args);

  auto* report = app.add_subcommand("report", "summarise results.csv into curves, scatter, breakdown and t-tests");
  std::string report_dir;
  std::string correlation = "pearson";
  report->add_option("dir", report_dir, "results directory (default $WORDLEARN_OUT or ./wordlearn-out)");
  report->add_option("--correlation", correlation, "pearson or spearman")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const wordlearn::Log log = [quiet](const std::string& msg) {
    if (!quiet) std::cerr << msg << '\n';
  };
  if (*prepare) {
    wordlearn::cmd_prepare(resolve(prep_args), log);
  } else if (*pretrain) {
    wordlearn::cmd_pretrain(resolve(pre_args), log);
  } else if (*fewshot) {
    wordlearn::cmd_fewshot(resolve(fs_args), log);
  } else if (*synth) {
    wordlearn::cmd_synth(resolve(synth_args), log);
  } else if (*report) {
    wordlearn::Correlation method;
    if (correlation == "pearson") method = wordlearn::Correlation::pearson;
    else if (correlation == "spearman") method = wordlearn::Correlation::spearman;
    else throw wordlearn::UsageError("--correlation: expected pearson or spearman");
    wordlearn::cmd_report(report_dir.empty() ? wordlearn::default_out_dir() : std::filesystem::path(report_dir), method, log);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const wordlearn::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const wordlearn::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const wordlearn::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
