#include "taintvm/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace taintvm {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
}

CompletedRun run_one(const Program& prog, std::span<const uint8_t> input,
                     const std::string& policy_name, const EngineConfig& cfg,
                     const std::string& app_name) {
  static const std::map<std::string, std::string> kRequiredPolicy = {
      {"hijack", "bitwise"}, {"uaf", "uaf"}, {"fuzz", "bv"}};
  if (app_name != "none") {
    auto it = kRequiredPolicy.find(app_name);
    if (it == kRequiredPolicy.end()) throw std::runtime_error("unknown app '" + app_name + "'");
    if (it->second != policy_name)
      throw std::runtime_error("app '" + app_name + "' requires policy '" + it->second + "'");
  }

  auto policy = make_policy(policy_name);
  RunHooks hooks;
  HijackMonitor hijack;
  std::optional<UafMonitor> uaf;
  std::optional<FuzzOffsets> fuzz;
  if (app_name == "hijack") {
    hijack.attach(hooks);
  } else if (app_name == "uaf") {
    uaf.emplace(static_cast<UafPolicy&>(*policy));
    uaf->attach(hooks);
  } else if (app_name == "fuzz") {
    fuzz.emplace(static_cast<BvPolicy&>(*policy));
    fuzz->attach(hooks);
  }

  Engine engine(prog, *policy, cfg, std::move(hooks));
  CompletedRun out{engine.run(input), {}};
  if (app_name == "hijack") out.app.alarms = hijack.alarms();
  if (app_name == "uaf") out.app.alarms = uaf->alarms();
  if (app_name == "fuzz") {
    out.app.offsets = fuzz->report();
    out.app.is_fuzz = true;
  }
  return out;
}

namespace {

EngineConfig config_from(const RunSpec& spec) {
  EngineConfig cfg;
  cfg.mode = spec.mode;
  cfg.handler_cost = spec.handlers;
  cfg.gen_threshold = spec.threshold;
  cfg.max_paths = spec.max_paths;
  return cfg;
}

std::vector<uint8_t> load_input(const RunSpec& spec) {
  if (spec.input_path.empty()) return {};
  std::string s = read_file(spec.input_path);
  return std::vector<uint8_t>(s.begin(), s.end());
}

}  // namespace

int cmd_run(const RunSpec& spec, std::ostream& err) {
  try {
    Program prog = parse_program(read_file(spec.program_path));
    std::vector<uint8_t> input = load_input(spec);
    CompletedRun r = run_one(prog, input, spec.policy, config_from(spec), spec.app);

    if (!spec.stats_out.empty()) write_file(spec.stats_out, stats_json(r.result.stats));
    if (!spec.shadow_out.empty()) write_file(spec.shadow_out, r.result.shadow.dump());
    if (!spec.report_out.empty()) {
      std::string report = r.app.is_fuzz ? offset_report_json(r.app.offsets)
                                         : alarms_json_lines(r.app.alarms);
      write_file(spec.report_out, report);
    }
    return r.app.alarms.empty() ? kExitOk : kExitAlarm;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_compare(const RunSpec& spec, const std::vector<Mode>& modes,
                const std::vector<uint32_t>& sweep, const std::string& out_csv,
                std::ostream& err) {
  try {
    Program prog = parse_program(read_file(spec.program_path));
    std::vector<uint8_t> input = load_input(spec);

    struct Cell {
      Mode mode;
      uint32_t max_paths;
      CompletedRun run;
    };
    std::vector<Cell> cells;
    for (Mode m : modes) {
      std::vector<uint32_t> paths =
          m == Mode::DynamicFp ? sweep : std::vector<uint32_t>{spec.max_paths};
      for (uint32_t mp : paths) {
        EngineConfig cfg = config_from(spec);
        cfg.mode = m;
        cfg.max_paths = mp;
        cells.push_back(Cell{m, mp, run_one(prog, input, spec.policy, cfg, spec.app)});
      }
    }

    // the core transparency oracle: all cells must agree byte-for-byte
    const std::string shadow0 = cells.front().run.result.shadow.dump();
    const std::string machine0 = cells.front().run.result.machine.dump();
    for (const Cell& c : cells) {
      if (c.run.result.shadow.dump() != shadow0 || c.run.result.machine.dump() != machine0) {
        err << "divergence: mode " << mode_name(c.mode) << " max-paths " << c.max_paths
            << " disagrees with " << mode_name(cells.front().mode) << "\n";
        return kExitDivergence;
      }
    }

    std::ostringstream csv;
    csv << "mode,max_paths,policy,handler_invocations,context_switches,"
           "exec_none,exec_adaptive,exec_full,fp_generated,reverts,flushes\n";
    for (const Cell& c : cells) {
      const ExecStats& s = c.run.result.stats;
      csv << mode_name(c.mode) << ',' << c.max_paths << ',' << spec.policy << ','
          << s.handler_invocations << ',' << s.context_switches << ',' << s.exec_none << ','
          << s.exec_adaptive << ',' << s.exec_full << ',' << s.fp_generated << ','
          << s.reverts << ',' << s.flushes << '\n';
    }
    if (out_csv.empty())
      std::cout << csv.str();
    else
      write_file(out_csv, csv.str());
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_stats_table(const std::vector<std::string>& stats_files,
                    const std::string& out_csv, std::ostream& err) {
  if (stats_files.empty()) {
    err << "error: no stats files given\n";
    return kExitError;
  }
  try {
    std::ostringstream csv;
    csv << "file,% BB Instrum.,Avg. BB Size.,Avg. Instr Elided.,# FP Gen.,# Revert,"
           "# Exec. None,# Exec. FP,# Exec. Full\n";
    for (const std::string& path : stats_files) {
      nlohmann::json doc = nlohmann::json::parse(read_file(path));
      const auto& agg = doc.at("aggregate");
      char pct[32], sz[32], el[32];
      snprintf(pct, sizeof pct, "%.1f%%", agg.at("pct_bb_instrumentable").get<double>());
      snprintf(sz, sizeof sz, "%.2f", agg.at("avg_bb_size").get<double>());
      snprintf(el, sizeof el, "%.2f", agg.at("avg_instr_elided").get<double>());
      csv << path << ',' << pct << ',' << sz << ',' << el << ','
          << agg.at("fp_generated").get<uint64_t>() << ','
          << agg.at("reverts").get<uint64_t>() << ','
          << agg.at("exec_none").get<uint64_t>() << ','
          << agg.at("exec_adaptive").get<uint64_t>() << ','
          << agg.at("exec_full").get<uint64_t>() << '\n';
    }
    if (out_csv.empty())
      std::cout << csv.str();
    else
      write_file(out_csv, csv.str());
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace taintvm
