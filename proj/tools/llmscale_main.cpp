// llmscale: score a text corpus with an LLM rater and check the ratings for
// reliability and validity.
//
//   llmscale validate    --config run.yaml
//   llmscale score       --config run.yaml
//   llmscale reliability --config run.yaml
//   llmscale validity    --config run.yaml
//   llmscale report      --config run.yaml
//   llmscale simulate    --config sim.yaml
//
// Exit status: 0 success, 1 invalid input, 2 runtime failure.

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "llmscale/error.hpp"
#include "llmscale/pipeline.hpp"

namespace {

void print(const llmscale::StageOutput& out) {
  for (const auto& l : out.lines) std::cout << l << "\n";
  for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLM-based psychometric scoring pipeline"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Override the master seed");

  std::string config_path;
  const char* names[][2] = {{"validate", "Check instrument, corpus, criteria and provider settings"},
                            {"score", "Rate every text on every item and write the rating exports"},
                            {"reliability", "Factor structure and internal consistency"},
                            {"validity", "Correlate factor scores with external criteria"},
                            {"report", "Merge stage artifacts into one report"},
                            {"simulate", "Write a synthetic study bundle"}};
  for (const auto& [name, help] : names) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Run configuration (YAML)")->required();
    sub->add_option("--seed", seed, "Override the master seed");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    auto config = llmscale::load_run_config(config_path);
    if (seed) config.seed = *seed;

    if (command == "validate") {
      const auto problems = llmscale::cmd_validate(config);
      if (!problems.empty()) {
        std::cerr << llmscale::describe(problems) << "\n";
        return 1;
      }
      std::cout << "ok\n";
    } else if (command == "score") {
      print(llmscale::cmd_score(config));
    } else if (command == "reliability") {
      print(llmscale::cmd_reliability(config));
    } else if (command == "validity") {
      print(llmscale::cmd_validity(config));
    } else if (command == "report") {
      print(llmscale::cmd_report(config));
    } else if (command == "simulate") {
      print(llmscale::cmd_simulate(config));
    }
  } catch (const llmscale::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
