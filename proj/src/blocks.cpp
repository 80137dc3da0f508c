#include "taintvm/blocks.hpp"

#include <algorithm>

namespace taintvm {

namespace {

void build_declared(SubBlock& sb) {
  std::vector<DeclOperand> regs, mems;
  auto add_reg = [&](uint8_t r) {
    DeclOperand d{DeclOperand::Kind::Reg, r, 0, 0, 4};
    if (std::find(regs.begin(), regs.end(), d) == regs.end()) regs.push_back(d);
  };
  auto add_range = [&](const ByteRange& br) {
    switch (br.kind) {
      case ByteRange::Kind::Reg:
        add_reg(br.reg);
        break;
      case ByteRange::Kind::Mem: {
        DeclOperand d{DeclOperand::Kind::Mem, br.reg, br.disp, 0, br.width};
        if (std::find(mems.begin(), mems.end(), d) == mems.end()) mems.push_back(d);
        break;
      }
      case ByteRange::Kind::Abs: {
        DeclOperand d{DeclOperand::Kind::Abs, 0, 0, br.abs, br.width};
        if (std::find(mems.begin(), mems.end(), d) == mems.end()) mems.push_back(d);
        break;
      }
    }
  };
  for (const InstrIo& io : sb.io) {
    if (io.prop == PropKind::Copy || io.prop == PropKind::Input) continue;
    for (const ByteRange& r : io.reads) add_range(r);
    for (const ByteRange& r : io.writes) add_range(r);
  }
  sb.declared_regs = regs.size();
  sb.declared = std::move(regs);
  sb.declared.insert(sb.declared.end(), mems.begin(), mems.end());
  sb.demoted = sb.declared.size() > 32;
}

}  // namespace

std::vector<SubBlock> truncate_block(const Program& prog, const Block& block) {
  std::vector<SubBlock> out;
  uint32_t i = block.start;
  const uint32_t end = block.start + block.count;
  while (i < end) {
    SubBlock sb;
    sb.start = i;
    RegTracker t;
    while (i < end) {
      const Instruction& ins = prog.code[i];
      InstrIo io = instr_io(ins, t);
      if (!io.resolvable) {
        if (sb.count == 0)
          throw std::logic_error("truncate_block: first instruction unresolvable");
        break;  // cut immediately before the violating instruction
      }
      sb.io.push_back(std::move(io));
      sb.count++;
      t.apply(ins);
      i++;
    }
    build_declared(sb);
    out.push_back(std::move(sb));
  }
  return out;
}

}  // namespace taintvm
