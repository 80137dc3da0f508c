#pragma once

#include <set>
#include <utility>

#include "taintvm/blocks.hpp"

namespace taintvm {

struct TaintFlowOptions {
  // The uaf policy mints labels at every allocation, so alloc acts as a taint
  // source for the analysis under that policy.
  bool alloc_is_source = false;
  // cmp carries an instrumentation handler only when an observer is attached
  // (the fuzz app); otherwise it is elided like a direct branch.
  bool observe_cmp = false;
};

// Possibly-tainted locations during the abstract forward walk, symbolic in the
// sub-block entry registers. Register bytes are byte-precise. Memory bytes are
// keyed by (base register, entry-relative offset); ranges under different
// bases may alias at runtime, so a tainted write under one base conservatively
// taints reads under every other base. kAbsBase keys absolute ranges.
struct SymbolicFacts {
  static constexpr int kAbsBase = 16;

  std::set<uint16_t> reg_bytes;                      // reg * 4 + byte
  std::set<std::pair<int, int64_t>> mem_bytes;       // (base key, offset)
  std::set<int> tainted_write_bases;                 // mid-block tainted writes
  bool mem_top = false;                              // copyn: all memory suspect

  bool empty() const {
    return reg_bytes.empty() && mem_bytes.empty() && !mem_top;
  }
  void add_reg_byte(uint8_t r, uint8_t b) { reg_bytes.insert(r * 4 + b); }
  bool has_reg_byte(uint8_t r, uint8_t b) const { return reg_bytes.count(r * 4 + b) != 0; }
};

struct TaintFlowResult {
  std::set<uint32_t> instrument;  // block-relative instruction indices
  SymbolicFacts exit;
};

// Forward intra-block analysis deciding which instructions need their taint
// handlers under a given entry taint case. An instruction is instrumented when
// a source byte may be tainted, when a destination byte may hold a stale label
// that must be cleared, or when it is a taint source (copyn, readinput, and
// alloc when alloc_is_source).
TaintFlowResult taint_flow(const Program& prog, const SubBlock& sb,
                           const SymbolicFacts& entry, const TaintFlowOptions& opts = {});

// Entry facts for a dispatch mask over the sub-block's declared operands.
SymbolicFacts facts_from_mask(const SubBlock& sb, uint32_t mask);

// Location-level wrapper: entry taint given as concrete byte locations drawn
// from the declared operands expanded with the given entry registers; exit
// facts are translated back to concrete locations the same way.
struct TaintFlowLocResult {
  std::set<uint32_t> instrument;
  LocationSet exit_tainted;
  bool exit_mem_top = false;
};

TaintFlowLocResult taint_flow(const Program& prog, const SubBlock& sb,
                              const LocationSet& entry_tainted,
                              const std::array<uint32_t, kNumRegs>& entry_regs,
                              const TaintFlowOptions& opts = {});

// true when the instruction carries a taint handler under these options
bool has_handler(const InstrIo& io, const TaintFlowOptions& opts);

}  // namespace taintvm
