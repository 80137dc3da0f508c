#include <iostream>

#include "CLI11.hpp"
#include "taintvm/cli.hpp"

using namespace taintvm;

int main(int argc, char** argv) {
  CLI::App app{"generic taint analysis over a mini register VM"};
  app.require_subcommand(1);

  RunSpec spec;
  std::string mode_s = "dynamic-fp", handlers_s = "inline";

  auto add_common = [&](CLI::App* sub, bool with_mode) {
    sub->add_option("--program", spec.program_path, "assembly source")->required();
    sub->add_option("--input", spec.input_path, "input bytes for readinput");
    sub->add_option("--policy", spec.policy, "bitwise|id|bv|uaf");
    if (with_mode) sub->add_option("--mode", mode_s, "full|static-fp|dynamic-fp");
    sub->add_option("--handlers", handlers_s, "call|inline");
    sub->add_option("--threshold", spec.threshold, "misses before fast-path generation");
    sub->add_option("--max-paths", spec.max_paths, "fast paths per block");
    sub->add_option("--app", spec.app, "none|hijack|uaf|fuzz");
    sub->add_option("--stats-out", spec.stats_out, "stats JSON path");
    sub->add_option("--shadow-out", spec.shadow_out, "shadow dump path");
    sub->add_option("--report-out", spec.report_out, "app report path");
  };

  CLI::App* run = app.add_subcommand("run", "run a program under one configuration");
  add_common(run, true);

  CLI::App* compare = app.add_subcommand(
      "compare", "run the mode/max-paths comparison harness and emit CSV");
  add_common(compare, false);
  std::vector<std::string> modes_s = {"full", "static-fp", "dynamic-fp"};
  std::vector<uint32_t> sweep = {8};
  std::string compare_out;
  compare->add_option("--modes", modes_s, "modes to compare");
  compare->add_option("--sweep", sweep, "max-paths values for dynamic-fp");
  compare->add_option("--out", compare_out, "CSV path (default stdout)");

  CLI::App* table = app.add_subcommand("stats-table", "summarize stats JSON files as CSV");
  std::vector<std::string> stats_files;
  std::string table_out;
  table->add_option("files", stats_files, "stats JSON files");
  table->add_option("--out", table_out, "CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (handlers_s == "call")
      spec.handlers = HandlerCost::Call;
    else if (handlers_s == "inline")
      spec.handlers = HandlerCost::Inline;
    else
      throw std::runtime_error("unknown handler cost mode '" + handlers_s + "'");

    if (run->parsed()) {
      spec.mode = mode_from_name(mode_s);
      return cmd_run(spec, std::cerr);
    }
    if (compare->parsed()) {
      std::vector<Mode> modes;
      for (const std::string& m : modes_s) modes.push_back(mode_from_name(m));
      return cmd_compare(spec, modes, sweep, compare_out, std::cerr);
    }
    return cmd_stats_table(stats_files, table_out, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
