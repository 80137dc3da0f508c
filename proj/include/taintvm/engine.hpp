#pragma once

#include <functional>
#include <map>
#include <memory>

#include "taintvm/blocks.hpp"
#include "taintvm/dataflow.hpp"
#include "taintvm/policy.hpp"

namespace taintvm {

enum class Mode : uint8_t { Full, StaticFp, DynamicFp };
enum class HandlerCost : uint8_t { Call, Inline };

Mode mode_from_name(const std::string& s);
const char* mode_name(Mode m);

struct EngineConfig {
  Mode mode = Mode::DynamicFp;
  HandlerCost handler_cost = HandlerCost::Inline;
  uint32_t gen_threshold = 16;  // same-mask misses before generation
  uint32_t max_paths = 8;       // generated fast paths per block
  uint32_t revert_limit = 3;    // empty-elision generation attempts before monitoring stops
  uint64_t step_budget = 10'000'000;
  size_t shadow_page_limit = 0;  // 0: unlimited
};

using TaintCaseMask = uint32_t;

enum class VariantKind : uint8_t { None, Adaptive, Full };

struct CaseEntry {
  TaintCaseMask mask;
  VariantKind kind;
  std::set<uint32_t> instrument;  // block-relative handler indices
};

// Per sub-block runtime table: the case map, miss counters and generation
// state. cases[0] is always mask 0 -> None; unknown masks fall back to the
// fully instrumented variant.
struct BlockRuntime {
  SubBlock sub;
  std::vector<CaseEntry> cases;
  std::set<uint32_t> full_set;
  std::map<TaintCaseMask, uint32_t> miss_count;
  uint32_t generated = 0;
  uint32_t reverts = 0;
  bool monitoring = true;

  uint64_t exec_none = 0, exec_adaptive = 0, exec_full = 0;
  uint64_t sum_elided = 0;  // across generated paths
};

struct ExecStats {
  uint64_t block_entries = 0;
  uint64_t exec_none = 0, exec_adaptive = 0, exec_full = 0;
  uint64_t handler_invocations = 0;
  uint64_t context_switches = 0;
  uint64_t clean_calls = 0;
  uint64_t unsupported_untaints = 0;
  uint64_t steps = 0;
  uint32_t fp_generated = 0, reverts = 0, flushes = 0;
  bool budget_exhausted = false;
  bool resource_aborted = false;

  struct BlockRow {
    uint32_t entry = 0;
    uint32_t size = 0;
    uint32_t declared = 0;
    bool instrumentable = false;
    uint64_t exec_none = 0, exec_adaptive = 0, exec_full = 0;
    uint32_t fp_generated = 0, reverts = 0;
    double avg_elided = 0.0;
  };
  std::vector<BlockRow> blocks;

  double pct_instrumentable() const;
  double avg_block_size() const;
  double avg_elided() const;
};

std::string stats_json(const ExecStats& s);

// ---------------------------------------------------------------------------
// Engine hooks (the apps attach here)
// ---------------------------------------------------------------------------

struct IndirectEvent {
  uint32_t instr;
  Op op;  // Ijmp, Icall or Ret
  uint32_t target;
  std::array<Label, 4> labels;       // labels of the target value's bytes
  std::array<Location, 4> locs;      // where those bytes live
};

struct DerefEvent {
  uint32_t instr;
  uint8_t base_reg;
  uint32_t ea;
  bool write;
  std::array<Label, 4> base_labels;
};

struct AllocEvent {
  uint32_t instr;
  uint8_t dst_reg;
  uint32_t base;
  uint32_t size;
};

struct FreeEvent {
  uint32_t instr;
  uint32_t addr;
  Label ptr_label;  // meet-fold of the operand register's bytes
};

struct CmpObservation {
  uint32_t instr;
  Label m1, m2;  // meet-folds of the two operands
};

struct AddrObservation {
  uint32_t instr;
  Label m;  // meet-fold of the address operand's source bytes
};

struct HookCtx {
  ShadowState& shadow;
  const MachineState& machine;
};

struct RunHooks {
  std::function<void(HookCtx&, const IndirectEvent&)> indirect;
  std::function<void(HookCtx&, const DerefEvent&)> deref;
  std::function<void(HookCtx&, const AllocEvent&)> alloc;
  std::function<void(HookCtx&, const FreeEvent&)> free_event;
  std::function<void(const CmpObservation&)> cmp;
  std::function<void(const AddrObservation&)> addr;
  std::function<void(const GuestFault&)> fault;
};

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct RunResult {
  MachineState machine;
  ShadowState shadow;
  ExecStats stats;
  std::vector<GuestFault> faults;
};

// The dispatch key: bit i is the entry taint state of declared operand i.
// Register bits come from the over-approximate status bits; memory bits from
// region scans at effective addresses computed from the entry registers.
TaintCaseMask encode_case_mask(const SubBlock& sb, const ShadowState& shadow,
                               const std::array<uint32_t, kNumRegs>& entry_regs);

struct DispatchResult {
  bool miss;
  VariantKind kind;
  const std::set<uint32_t>* instrument;  // null on miss (use the full set)
};

// Mask 0 first, then registered masks in registration order, else MISS.
DispatchResult dispatch_case(const BlockRuntime& tab, TaintCaseMask mask);

struct MissOutcome {
  bool generated = false;
  bool reverted = false;
  bool pinned_full = false;
};

// Miss bookkeeping for dynamic fast-path mode. Precondition: the mask is not
// registered and monitoring is on. Counts the miss; past the generation
// threshold runs the data-flow analysis and registers either an adaptive path
// (>= 1 instruction elided) or a permanent full pin (a revert). Once the path
// limit is reached the mask pins to full and monitoring stops.
MissOutcome on_miss(BlockRuntime& tab, TaintCaseMask mask, const Program& prog,
                    const EngineConfig& cfg, const TaintFlowOptions& opts);

BlockRuntime build_block_runtime(const Program& prog, const SubBlock& sb,
                                 const TaintFlowOptions& opts);

// One instruction's taint handler: propagation per the opcode's algorithm
// class, label sourcing for readinput/copyn, stale-label clearing, and the
// cmp/lea observations. Memory operands resolve against the sub-block entry
// registers; copyn resolves against the live machine state.
void apply_taint_handler(ShadowState& shadow, TaintPrimitives& policy,
                         const MachineState& machine, const Instruction& ins,
                         const InstrIo& io,
                         const std::array<uint32_t, kNumRegs>& entry_regs,
                         const RunHooks* observers, uint32_t abs_index);

class Engine {
 public:
  Engine(const Program& prog, TaintPrimitives& policy, EngineConfig cfg,
         RunHooks hooks = {});

  RunResult run(std::span<const uint8_t> input);

  // Untaint hook for opcodes outside the handler tables; unreachable for the
  // built-in ISA but part of the engine surface.
  void handle_unsupported(const Instruction& ins, const InstrIo& io, ShadowState& shadow);

  const TaintFlowOptions& flow_options() const { return opts_; }

 private:
  struct RunState;
  const Program& prog_;
  TaintPrimitives& policy_;
  EngineConfig cfg_;
  RunHooks hooks_;
  TaintFlowOptions opts_;
  ExecStats* stats_ = nullptr;  // live during run()

  BlockRuntime& table_for(RunState& rs, uint32_t pc);
  void exec_subblock(RunState& rs, BlockRuntime& tab);
  void run_handler(RunState& rs, uint32_t abs, const Instruction& ins, const InstrIo& io,
                   const std::array<uint32_t, kNumRegs>& entry_regs);
};

}  // namespace taintvm
