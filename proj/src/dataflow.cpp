#include "taintvm/dataflow.hpp"

namespace taintvm {

namespace {

struct RangeKey {
  int base;
  int64_t lo;
  uint32_t len;
};

RangeKey key_of(const ByteRange& r) {
  switch (r.kind) {
    case ByteRange::Kind::Reg: return {-1, 0, 0};  // not a memory range
    case ByteRange::Kind::Mem: return {r.reg, r.disp, r.width};
    case ByteRange::Kind::Abs: return {SymbolicFacts::kAbsBase, r.abs, r.width};
  }
  return {-1, 0, 0};
}

bool range_possibly_tainted(const SymbolicFacts& f, const ByteRange& r) {
  if (r.kind == ByteRange::Kind::Reg) {
    for (uint8_t i = 0; i < r.width; i++)
      if (f.has_reg_byte(r.reg, i)) return true;
    return false;
  }
  if (f.mem_top) return true;
  RangeKey k = key_of(r);
  for (uint32_t i = 0; i < k.len; i++)
    if (f.mem_bytes.count({k.base, k.lo + i})) return true;
  for (int b : f.tainted_write_bases)
    if (b != k.base) return true;  // may alias across bases
  return false;
}

void mark_written_tainted(SymbolicFacts& f, const ByteRange& r) {
  if (r.kind == ByteRange::Kind::Reg) {
    for (uint8_t i = 0; i < r.width; i++) f.add_reg_byte(r.reg, i);
    return;
  }
  RangeKey k = key_of(r);
  for (uint32_t i = 0; i < k.len; i++) f.mem_bytes.insert({k.base, k.lo + i});
  f.tainted_write_bases.insert(k.base);
}

void mark_written_clean(SymbolicFacts& f, const ByteRange& r) {
  if (r.kind == ByteRange::Kind::Reg) {
    for (uint8_t i = 0; i < r.width; i++) f.reg_bytes.erase(r.reg * 4 + i);
    return;
  }
  RangeKey k = key_of(r);
  for (uint32_t i = 0; i < k.len; i++) f.mem_bytes.erase({k.base, k.lo + i});
  // cross-base conservatism is not invalidated by one clean write
}

}  // namespace

bool has_handler(const InstrIo& io, const TaintFlowOptions& opts) {
  switch (io.prop) {
    case PropKind::None: return false;
    case PropKind::CmpObserve: return opts.observe_cmp;
    default: return true;
  }
}

TaintFlowResult taint_flow(const Program& prog, const SubBlock& sb,
                           const SymbolicFacts& entry, const TaintFlowOptions& opts) {
  TaintFlowResult res;
  SymbolicFacts f = entry;

  for (uint32_t i = 0; i < sb.count; i++) {
    const InstrIo& io = sb.io[i];
    const Instruction& ins = prog.code[sb.start + i];

    if (io.prop == PropKind::Copy) {
      res.instrument.insert(i);
      f.mem_top = true;
      continue;
    }
    if (io.prop == PropKind::Input) {
      res.instrument.insert(i);
      for (uint32_t b = 0; b < ins.b.imm; b++)
        f.mem_bytes.insert({SymbolicFacts::kAbsBase, static_cast<int64_t>(ins.a.imm) + b});
      if (ins.b.imm > 0) f.tainted_write_bases.insert(SymbolicFacts::kAbsBase);
      continue;
    }
    if (!has_handler(io, opts)) continue;  // no taint action, no fact change

    bool source_op = opts.alloc_is_source && ins.op == Op::Alloc;
    bool srcs_tainted = source_op;
    for (const ByteRange& r : io.reads)
      srcs_tainted = srcs_tainted || range_possibly_tainted(f, r);
    bool dst_stale = false;
    for (const ByteRange& r : io.writes)
      dst_stale = dst_stale || range_possibly_tainted(f, r);

    if (srcs_tainted || dst_stale) res.instrument.insert(i);

    if (srcs_tainted) {
      for (const ByteRange& r : io.writes) mark_written_tainted(f, r);
    } else {
      for (const ByteRange& r : io.writes) mark_written_clean(f, r);
    }
  }

  res.exit = std::move(f);
  return res;
}

SymbolicFacts facts_from_mask(const SubBlock& sb, uint32_t mask) {
  SymbolicFacts f;
  for (size_t i = 0; i < sb.declared.size() && i < 32; i++) {
    if (!(mask & (1u << i))) continue;
    const DeclOperand& d = sb.declared[i];
    switch (d.kind) {
      case DeclOperand::Kind::Reg:
        for (uint8_t b = 0; b < 4; b++) f.add_reg_byte(d.reg, b);
        break;
      case DeclOperand::Kind::Mem:
        for (uint8_t b = 0; b < d.width; b++) f.mem_bytes.insert({d.reg, d.disp + b});
        break;
      case DeclOperand::Kind::Abs:
        for (uint8_t b = 0; b < d.width; b++)
          f.mem_bytes.insert({SymbolicFacts::kAbsBase, static_cast<int64_t>(d.abs) + b});
        break;
    }
  }
  return f;
}

TaintFlowLocResult taint_flow(const Program& prog, const SubBlock& sb,
                              const LocationSet& entry_tainted,
                              const std::array<uint32_t, kNumRegs>& entry_regs,
                              const TaintFlowOptions& opts) {
  SymbolicFacts entry;
  for (const Location& l : entry_tainted) {
    if (l.kind == Location::Kind::RegByte) {
      entry.add_reg_byte(l.reg, l.byte);
      continue;
    }
    // map the concrete address back onto every declared operand covering it
    for (const DeclOperand& d : sb.declared) {
      if (d.kind == DeclOperand::Kind::Mem) {
        uint32_t start = entry_regs[d.reg] + static_cast<uint32_t>(d.disp);
        if (l.addr - start < d.width)
          entry.mem_bytes.insert({d.reg, d.disp + (l.addr - start)});
      } else if (d.kind == DeclOperand::Kind::Abs) {
        if (l.addr - d.abs < d.width)
          entry.mem_bytes.insert(
              {SymbolicFacts::kAbsBase, static_cast<int64_t>(d.abs) + (l.addr - d.abs)});
      }
    }
  }

  TaintFlowResult r = taint_flow(prog, sb, entry, opts);

  TaintFlowLocResult out;
  out.instrument = std::move(r.instrument);
  out.exit_mem_top = r.exit.mem_top;
  for (uint16_t rb : r.exit.reg_bytes)
    out.exit_tainted.insert(Location::reg_byte(static_cast<uint8_t>(rb / 4), rb % 4));
  for (const auto& [base, off] : r.exit.mem_bytes) {
    uint32_t addr = base == SymbolicFacts::kAbsBase
                        ? static_cast<uint32_t>(off)
                        : entry_regs[base] + static_cast<uint32_t>(off);
    out.exit_tainted.insert(Location::mem_byte(addr));
  }
  return out;
}

}  // namespace taintvm
