#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "taintvm/apps.hpp"
#include "taintvm/engine.hpp"

namespace taintvm {

// Exit protocol: 0 clean run, 1 parse/config error, 2 alarms fired,
// 3 mode-equivalence divergence (compare only).
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitAlarm = 2;
inline constexpr int kExitDivergence = 3;

struct RunSpec {
  std::string program_path;
  std::string input_path;  // empty: no input bytes
  std::string policy = "bitwise";
  Mode mode = Mode::DynamicFp;
  HandlerCost handlers = HandlerCost::Inline;
  uint32_t threshold = 16;
  uint32_t max_paths = 8;
  std::string app = "none";  // none | hijack | uaf | fuzz
  std::string stats_out;
  std::string shadow_out;
  std::string report_out;
};

// One engine run plus its app outputs; shared by run and compare.
struct AppOutputs {
  std::vector<Alarm> alarms;
  OffsetReport offsets;
  bool is_fuzz = false;
};

struct CompletedRun {
  RunResult result;
  AppOutputs app;
};

// Throws std::runtime_error on app/policy mismatch or unknown names.
CompletedRun run_one(const Program& prog, std::span<const uint8_t> input,
                     const std::string& policy_name, const EngineConfig& cfg,
                     const std::string& app_name);

int cmd_run(const RunSpec& spec, std::ostream& err);

int cmd_compare(const RunSpec& spec, const std::vector<Mode>& modes,
                const std::vector<uint32_t>& sweep, const std::string& out_csv,
                std::ostream& err);

int cmd_stats_table(const std::vector<std::string>& stats_files,
                    const std::string& out_csv, std::ostream& err);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace taintvm
