#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace taintvm {

inline constexpr unsigned kNumRegs = 16;
inline constexpr unsigned kRegBytes = 4;
inline constexpr uint8_t kStackReg = 15;
inline constexpr uint32_t kStackInit = 0x01000000;
inline constexpr uint32_t kStackReserve = 0x00010000;
inline constexpr uint32_t kHeapBase = 0x40000000;
inline constexpr uint32_t kCopyMax = 65536;

// One shadowed byte: a register byte or an absolute guest-memory byte.
struct Location {
  enum class Kind : uint8_t { RegByte, MemByte };
  Kind kind = Kind::MemByte;
  uint8_t reg = 0;
  uint8_t byte = 0;
  uint32_t addr = 0;

  static Location reg_byte(uint8_t r, uint8_t b) {
    return Location{Kind::RegByte, r, b, 0};
  }
  static Location mem_byte(uint32_t a) {
    return Location{Kind::MemByte, 0, 0, a};
  }
  auto operator<=>(const Location&) const = default;
};

enum class Op : uint8_t {
  Mov, Load, Store, Push, Pop,
  Or, And, Xor, Not,
  Add, Sub, Mul, Shl, Shr,
  Lea, Copyn, Cmp,
  Jmp, Jz, Jnz,
  Ijmp, Icall, Ret,
  Alloc, Free, ReadInput,
  Halt,
};

enum class OpClass : uint8_t {
  Transfer,        // mov, load, store, push, pop
  ByteIndepAlu,    // or, and, xor, not
  ByteCoupledAlu,  // add, sub, mul, shl, shr
  Addr,            // lea
  Copyn,
  Cmp,
  Branch,          // jmp, jz, jnz (direct targets)
  Indirect,        // ijmp, icall, ret
  Alloc,
  Free,
  ReadInput,
  Halt,
};

OpClass op_class(Op op);
const char* op_name(Op op);
// true for branch/indirect/halt: a basic block ends here
bool is_terminator(Op op);

struct Operand {
  enum class Kind : uint8_t { None, Reg, Imm, Mem };
  Kind kind = Kind::None;
  uint8_t reg = 0;    // Reg, or base register of Mem
  int32_t disp = 0;   // Mem displacement
  uint32_t imm = 0;   // Imm value, or resolved branch target index

  static Operand none() { return {}; }
  static Operand make_reg(uint8_t r) { return {Kind::Reg, r, 0, 0}; }
  static Operand make_imm(uint32_t v) { return {Kind::Imm, 0, 0, v}; }
  static Operand make_mem(uint8_t base, int32_t d) { return {Kind::Mem, base, d, 0}; }

  bool operator==(const Operand&) const = default;
};

struct Instruction {
  Op op = Op::Halt;
  uint8_t width = 4;  // 1, 2 or 4; data ops only
  Operand a, b, c;
  uint32_t line = 0;  // source line, for diagnostics

  bool operator==(const Instruction&) const = default;
};

struct InputBuffer {
  uint32_t addr = 0;
  uint32_t len = 0;

  bool operator==(const InputBuffer&) const = default;
};

struct Program {
  std::vector<Instruction> code;
  uint32_t entry = 0;
  std::optional<InputBuffer> input;
  std::map<std::string, uint32_t> labels;

  bool operator==(const Program&) const = default;
};

struct ParseError : std::runtime_error {
  uint32_t line;
  ParseError(uint32_t ln, const std::string& msg)
      : std::runtime_error("line " + std::to_string(ln) + ": " + msg), line(ln) {}
};

// Parses the assembly grammar: "opcode dst, src1[, src2]", registers r0..r15,
// immediates decimal or 0x-hex, memory [rN+disp] or [rN], labels "name:",
// directives ".input addr len" and ".entry label", comments from ';'.
Program parse_program(const std::string& text);

struct HeapEntry {
  uint32_t size = 0;
  bool freed = false;
  auto operator<=>(const HeapEntry&) const = default;
};

struct GuestFault {
  enum class Kind : uint8_t { FreeUnknown, DoubleFree, BadIndirectTarget, CopyTooLarge };
  Kind kind;
  uint32_t instr_index = 0;
  uint32_t addr = 0;
};

const char* fault_name(GuestFault::Kind k);

struct MachineState {
  std::array<uint32_t, kNumRegs> regs{};
  std::map<uint32_t, uint8_t> mem;  // sparse, implicitly zero
  bool zero_flag = false;
  uint32_t pc = 0;
  bool halted = false;
  std::map<uint32_t, HeapEntry> heap;
  uint32_t next_heap = kHeapBase;
  uint32_t code_size = 0;
  std::vector<uint8_t> input;  // bytes fed to readinput
  uint32_t input_addr = 0;
  uint32_t input_len = 0;

  uint8_t load_byte(uint32_t a) const;
  void store_byte(uint32_t a, uint8_t v);
  uint32_t load(uint32_t addr, unsigned w) const;
  void store(uint32_t addr, uint32_t v, unsigned w);

  bool operator==(const MachineState&) const = default;

  std::string dump() const;
};

// Fresh machine for a program: pc at entry, r15 at the stack top, input staged.
MachineState initial_state(const Program& prog, std::span<const uint8_t> input);

struct StepResult {
  std::optional<GuestFault> fault;
};

uint32_t width_mask(unsigned w);
uint32_t effective_address(const MachineState& m, const Operand& mem_op);

// Applies one instruction's concrete semantics. Precondition: !m.halted.
StepResult step(MachineState& m, const Instruction& ins);

struct Block {
  uint32_t start = 0;
  uint32_t count = 0;
};

// Partition into single-entry single-exit ranges. Leaders: index 0, the entry,
// every direct branch target and every instruction following a terminator.
std::vector<Block> split_blocks(const Program& prog);

// Entry-relative constant propagation over register values. A register is
// "known" while its value equals its sub-block entry value plus a constant
// (push/pop/icall/ret and add/sub-immediate keep it known; other writes do not).
class RegTracker {
 public:
  RegTracker() { off_.fill(int64_t{0}); }
  bool known(uint8_t r) const { return off_[r].has_value(); }
  int64_t offset(uint8_t r) const { return *off_[r]; }
  void apply(const Instruction& ins);

 private:
  std::array<std::optional<int64_t>, kNumRegs> off_;
};

// A contiguous byte range, symbolic relative to sub-block entry registers.
struct ByteRange {
  enum class Kind : uint8_t { Reg, Mem, Abs };
  Kind kind;
  uint8_t reg = 0;     // Reg: register id; Mem: base register
  int64_t disp = 0;    // Mem: entry-relative displacement
  uint32_t abs = 0;    // Abs: absolute address
  uint8_t width = 4;

  static ByteRange reg_range(uint8_t r, uint8_t w) { return {Kind::Reg, r, 0, 0, w}; }
  static ByteRange mem_range(uint8_t base, int64_t d, uint8_t w) {
    return {Kind::Mem, base, d, 0, w};
  }
  static ByteRange abs_range(uint32_t a, uint8_t w) { return {Kind::Abs, 0, 0, a, w}; }
};

enum class PropKind : uint8_t {
  None,           // no taint action (branches, ret, ijmp, free, halt)
  ClearDst,       // destination written from untaintable data (imm mov, alloc, icall slot)
  UnaryIndep,     // one source, per-byte transfer
  UnaryCoupled,   // one source, meet-folded
  BinaryIndep,    // two sources, per-byte
  BinaryCoupled,  // two sources, meet-folded
  Copy,           // copyn: runtime-resolved bulk label copy, always instrumented
  Input,          // readinput: taint source, always instrumented
  CmpObserve,     // cmp: no output, operands observable by apps
};

// A memory dereference made by the instruction (for hooks and EA validation).
struct MemAccess {
  uint8_t base = 0;
  int64_t disp = 0;  // entry-relative
  uint8_t width = 4;
  bool write = false;
};

// Taint-relevant operand extraction for one instruction, with memory operands
// patched to entry-relative displacements via the tracker. Address-register
// reads of load/store are not value reads; lea's base register is.
struct InstrIo {
  PropKind prop = PropKind::None;
  bool addr_site = false;  // lea: observable by the fuzz app
  std::vector<ByteRange> reads;
  std::vector<ByteRange> writes;
  std::vector<MemAccess> derefs;
  bool resolvable = true;  // false when a referenced base register is untracked
};

InstrIo instr_io(const Instruction& ins, const RegTracker& t);

using LocationSet = std::set<Location>;

struct IoSets {
  LocationSet inputs;   // bytes read before written within the prefix
  LocationSet outputs;  // bytes written
};

std::vector<Location> expand_range(const ByteRange& r,
                                   const std::array<uint32_t, kNumRegs>& entry_regs);

// Input/output byte sets of a truncated block prefix, with effective addresses
// computed from the entry register valuation. Throws std::logic_error when a
// memory operand is unresolvable (truncation is required to prevent that).
IoSets io_sets(std::span<const Instruction> prefix,
               const std::array<uint32_t, kNumRegs>& entry_regs);

}  // namespace taintvm
