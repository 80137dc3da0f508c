#pragma once

#include <vector>

#include "taintvm/isa.hpp"

namespace taintvm {

// Declared in/out operand of a sub-block: the dispatch key material. Register
// operands are whole registers (checked via status bits); memory operands are
// entry-relative ranges (checked via region scans). Taint-source operands of
// copyn/readinput are never declared: those instructions are always
// instrumented instead of taint-checked.
struct DeclOperand {
  enum class Kind : uint8_t { Reg, Mem, Abs };
  Kind kind;
  uint8_t reg = 0;     // Reg id, or Mem base register
  int64_t disp = 0;    // Mem: entry-relative displacement
  uint32_t abs = 0;
  uint8_t width = 4;

  bool operator==(const DeclOperand&) const = default;
};

// A truncated single-entry single-exit run of instructions: every memory
// operand's effective address is its sub-block-entry base register value plus
// a constant. Per-instruction operand metadata is precomputed here.
struct SubBlock {
  uint32_t start = 0;
  uint32_t count = 0;
  std::vector<InstrIo> io;            // one per instruction, entry-relative
  std::vector<DeclOperand> declared;  // registers first, then memory operands
  size_t declared_regs = 0;           // prefix of `declared` that is registers
  bool demoted = false;               // > 32 declared operands: two-case-only
};

// Cuts a block at the first instruction whose memory operand base register is
// inconsistent with its sub-block entry value (push/pop and add/sub-immediate
// arithmetic are tracked as entry+constant and patched into displacements).
// The remainder restarts with a fresh entry.
std::vector<SubBlock> truncate_block(const Program& prog, const Block& block);

}  // namespace taintvm
