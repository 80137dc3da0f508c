#include "taintvm/isa.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

namespace taintvm {

namespace {

struct OpInfo {
  const char* name;
  Op op;
  OpClass cls;
  int operands;
  bool sizable;  // accepts a .1/.2/.4 width suffix
};

constexpr OpInfo kOps[] = {
    {"mov", Op::Mov, OpClass::Transfer, 2, true},
    {"load", Op::Load, OpClass::Transfer, 2, true},
    {"store", Op::Store, OpClass::Transfer, 2, true},
    {"push", Op::Push, OpClass::Transfer, 1, false},
    {"pop", Op::Pop, OpClass::Transfer, 1, false},
    {"or", Op::Or, OpClass::ByteIndepAlu, 2, true},
    {"and", Op::And, OpClass::ByteIndepAlu, 2, true},
    {"xor", Op::Xor, OpClass::ByteIndepAlu, 2, true},
    {"not", Op::Not, OpClass::ByteIndepAlu, 1, true},
    {"add", Op::Add, OpClass::ByteCoupledAlu, 2, true},
    {"sub", Op::Sub, OpClass::ByteCoupledAlu, 2, true},
    {"mul", Op::Mul, OpClass::ByteCoupledAlu, 2, true},
    {"shl", Op::Shl, OpClass::ByteCoupledAlu, 2, true},
    {"shr", Op::Shr, OpClass::ByteCoupledAlu, 2, true},
    {"lea", Op::Lea, OpClass::Addr, 2, false},
    {"copyn", Op::Copyn, OpClass::Copyn, 3, false},
    {"cmp", Op::Cmp, OpClass::Cmp, 2, true},
    {"jmp", Op::Jmp, OpClass::Branch, 1, false},
    {"jz", Op::Jz, OpClass::Branch, 1, false},
    {"jnz", Op::Jnz, OpClass::Branch, 1, false},
    {"ijmp", Op::Ijmp, OpClass::Indirect, 1, false},
    {"icall", Op::Icall, OpClass::Indirect, 1, false},
    {"ret", Op::Ret, OpClass::Indirect, 0, false},
    {"alloc", Op::Alloc, OpClass::Alloc, 2, false},
    {"free", Op::Free, OpClass::Free, 1, false},
    {"readinput", Op::ReadInput, OpClass::ReadInput, 0, false},
    {"halt", Op::Halt, OpClass::Halt, 0, false},
};

const OpInfo& info_for(Op op) {
  for (const auto& i : kOps)
    if (i.op == op) return i;
  throw std::logic_error("unknown opcode");
}

const OpInfo* info_for_name(const std::string& s) {
  for (const auto& i : kOps)
    if (s == i.name) return &i;
  return nullptr;
}

}  // namespace

OpClass op_class(Op op) { return info_for(op).cls; }
const char* op_name(Op op) { return info_for(op).name; }

bool is_terminator(Op op) {
  switch (op_class(op)) {
    case OpClass::Branch:
    case OpClass::Indirect:
    case OpClass::Halt:
      return true;
    default:
      return false;
  }
}

const char* fault_name(GuestFault::Kind k) {
  switch (k) {
    case GuestFault::Kind::FreeUnknown: return "free-unknown";
    case GuestFault::Kind::DoubleFree: return "double-free";
    case GuestFault::Kind::BadIndirectTarget: return "bad-indirect-target";
    case GuestFault::Kind::CopyTooLarge: return "copy-too-large";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& tok, int64_t& out) {
  std::string t = tok;
  bool neg = false;
  if (!t.empty() && (t[0] == '-' || t[0] == '+')) {
    neg = t[0] == '-';
    t = t.substr(1);
  }
  if (t.empty()) return false;
  int base = 10;
  if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
    base = 16;
    t = t.substr(2);
  }
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v, base);
  if (ec != std::errc() || p != t.data() + t.size()) return false;
  if (v > 0xFFFFFFFFull) return false;
  out = neg ? -static_cast<int64_t>(v) : static_cast<int64_t>(v);
  return true;
}

bool parse_reg(const std::string& tok, uint8_t& out) {
  if (tok.size() < 2 || tok[0] != 'r') return false;
  int64_t n;
  if (!parse_number(tok.substr(1), n)) return false;
  if (n < 0 || n >= static_cast<int64_t>(kNumRegs)) return false;
  out = static_cast<uint8_t>(n);
  return true;
}

struct RawLine {
  uint32_t line;
  std::string opcode;
  std::vector<std::string> operands;
};

std::vector<std::string> split_operands(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '[') depth++;
    if (c == ']') depth--;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cur = trim(cur);
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

Program parse_program(const std::string& text) {
  Program prog;
  std::vector<RawLine> raw;
  std::optional<std::string> entry_label;
  uint32_t entry_line = 0;

  std::istringstream in(text);
  std::string line;
  uint32_t lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    if (auto sc = line.find(';'); sc != std::string::npos) line = line.substr(0, sc);
    line = trim(line);
    if (line.empty()) continue;

    if (line[0] == '.') {
      std::istringstream ls(line);
      std::string dir;
      ls >> dir;
      if (dir == ".input") {
        std::string a, l;
        ls >> a >> l;
        int64_t addr, len;
        if (a.empty() || l.empty() || !parse_number(a, addr) || !parse_number(l, len) ||
            addr < 0 || len < 0)
          throw ParseError(lineno, "malformed .input directive");
        uint32_t lo = kStackInit - kStackReserve;
        if (static_cast<uint64_t>(addr) < kStackInit &&
            static_cast<uint64_t>(addr) + static_cast<uint64_t>(len) > lo)
          throw ParseError(lineno, "input buffer overlaps the stack region");
        prog.input = InputBuffer{static_cast<uint32_t>(addr), static_cast<uint32_t>(len)};
      } else if (dir == ".entry") {
        std::string lab;
        ls >> lab;
        if (lab.empty()) throw ParseError(lineno, "malformed .entry directive");
        entry_label = lab;
        entry_line = lineno;
      } else {
        throw ParseError(lineno, "unknown directive '" + dir + "'");
      }
      continue;
    }

    // leading label(s)
    while (true) {
      size_t colon = line.find(':');
      if (colon == std::string::npos) break;
      std::string lab = trim(line.substr(0, colon));
      bool ident = !lab.empty() && (std::isalpha(static_cast<unsigned char>(lab[0])) || lab[0] == '_');
      for (char c : lab)
        ident = ident && (std::isalnum(static_cast<unsigned char>(c)) || c == '_');
      if (!ident) break;  // not a label; let operand parsing complain if bogus
      if (prog.labels.count(lab)) throw ParseError(lineno, "duplicate label '" + lab + "'");
      prog.labels[lab] = static_cast<uint32_t>(raw.size());
      line = trim(line.substr(colon + 1));
      if (line.empty()) break;
    }
    if (line.empty()) continue;

    std::istringstream ls(line);
    std::string mnem;
    ls >> mnem;
    std::string rest;
    std::getline(ls, rest);
    raw.push_back(RawLine{lineno, mnem, split_operands(trim(rest))});
  }

  // second pass: instructions, with labels known
  for (const RawLine& rl : raw) {
    std::string name = rl.opcode;
    uint8_t width = 4;
    bool has_width = false;
    if (auto dot = name.find('.'); dot != std::string::npos) {
      std::string suffix = name.substr(dot + 1);
      name = name.substr(0, dot);
      if (suffix != "1" && suffix != "2" && suffix != "4")
        throw ParseError(rl.line, "bad width suffix '." + suffix + "'");
      width = static_cast<uint8_t>(suffix[0] - '0');
      has_width = true;
    }
    const OpInfo* oi = info_for_name(name);
    if (!oi) throw ParseError(rl.line, "unknown opcode '" + name + "'");
    if (has_width && !oi->sizable)
      throw ParseError(rl.line, std::string("width mismatch: '") + oi->name +
                                    "' has a fixed width");
    if (static_cast<int>(rl.operands.size()) != oi->operands)
      throw ParseError(rl.line, std::string("'") + oi->name + "' expects " +
                                    std::to_string(oi->operands) + " operand(s)");

    auto parse_operand = [&](const std::string& tok) -> Operand {
      if (!tok.empty() && tok.front() == '[') {
        if (tok.back() != ']') throw ParseError(rl.line, "malformed memory operand");
        std::string inners = trim(tok.substr(1, tok.size() - 2));
        size_t split = inners.find_first_of("+-", 1);
        std::string rpart = split == std::string::npos ? inners : trim(inners.substr(0, split));
        uint8_t base;
        if (!parse_reg(rpart, base))
          throw ParseError(rl.line, "bad base register in memory operand");
        int64_t d = 0;
        if (split != std::string::npos) {
          std::string dpart = trim(inners.substr(split));  // keeps the sign
          if (!parse_number(dpart, d) || d < INT32_MIN || d > INT32_MAX)
            throw ParseError(rl.line, "bad displacement in memory operand");
        }
        return Operand::make_mem(base, static_cast<int32_t>(d));
      }
      uint8_t r;
      if (parse_reg(tok, r)) return Operand::make_reg(r);
      int64_t n;
      if (parse_number(tok, n)) return Operand::make_imm(static_cast<uint32_t>(n));
      // a label name is an immediate holding that instruction's index
      if (auto it = prog.labels.find(tok); it != prog.labels.end())
        return Operand::make_imm(it->second);
      throw ParseError(rl.line, "bad operand '" + tok + "'");
    };

    auto resolve_target = [&](const std::string& tok) -> uint32_t {
      int64_t n;
      if (parse_number(tok, n)) {
        if (n < 0 || n >= static_cast<int64_t>(raw.size()))
          throw ParseError(rl.line, "branch target out of range");
        return static_cast<uint32_t>(n);
      }
      auto it = prog.labels.find(tok);
      if (it == prog.labels.end())
        throw ParseError(rl.line, "undefined label '" + tok + "'");
      if (it->second >= raw.size())
        throw ParseError(rl.line, "label '" + tok + "' points past end of program");
      return it->second;
    };

    auto expect = [&](const Operand& o, std::initializer_list<Operand::Kind> kinds,
                      const char* what) {
      for (auto k : kinds)
        if (o.kind == k) return;
      throw ParseError(rl.line, std::string("bad ") + what + " operand for '" + oi->name + "'");
    };

    Instruction ins;
    ins.op = oi->op;
    ins.width = oi->sizable ? width : 4;
    ins.line = rl.line;
    using K = Operand::Kind;

    switch (ins.op) {
      case Op::Mov:
        ins.a = parse_operand(rl.operands[0]);
        ins.b = parse_operand(rl.operands[1]);
        expect(ins.a, {K::Reg}, "destination");
        expect(ins.b, {K::Reg, K::Imm}, "source");
        break;
      case Op::Load:
        ins.a = parse_operand(rl.operands[0]);
        ins.b = parse_operand(rl.operands[1]);
        expect(ins.a, {K::Reg}, "destination");
        expect(ins.b, {K::Mem}, "source");
        break;
      case Op::Store:
        ins.a = parse_operand(rl.operands[0]);
        ins.b = parse_operand(rl.operands[1]);
        expect(ins.a, {K::Mem}, "destination");
        expect(ins.b, {K::Reg, K::Imm}, "source");
        break;
      case Op::Push:
      case Op::Pop:
      case Op::Ijmp:
      case Op::Icall:
      case Op::Free:
        ins.a = parse_operand(rl.operands[0]);
        expect(ins.a, {K::Reg}, "register");
        break;
      case Op::Not:
        ins.a = parse_operand(rl.operands[0]);
        expect(ins.a, {K::Reg}, "register");
        break;
      case Op::Or:
      case Op::And:
      case Op::Xor:
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Shl:
      case Op::Shr:
        ins.a = parse_operand(rl.operands[0]);
        ins.b = parse_operand(rl.operands[1]);
        expect(ins.a, {K::Reg}, "destination");
        expect(ins.b, {K::Reg, K::Imm}, "source");
        break;
      case Op::Lea:
        ins.a = parse_operand(rl.operands[0]);
        ins.b = parse_operand(rl.operands[1]);
        expect(ins.a, {K::Reg}, "destination");
        expect(ins.b, {K::Mem}, "source");
        break;
      case Op::Copyn:
        ins.a = parse_operand(rl.operands[0]);
        ins.b = parse_operand(rl.operands[1]);
        ins.c = parse_operand(rl.operands[2]);
        expect(ins.a, {K::Mem}, "destination");
        expect(ins.b, {K::Mem}, "source");
        expect(ins.c, {K::Reg}, "count");
        break;
      case Op::Cmp:
        ins.a = parse_operand(rl.operands[0]);
        ins.b = parse_operand(rl.operands[1]);
        expect(ins.a, {K::Reg, K::Mem}, "first");
        expect(ins.b, {K::Reg, K::Imm, K::Mem}, "second");
        break;
      case Op::Jmp:
      case Op::Jz:
      case Op::Jnz:
        ins.a = Operand::make_imm(resolve_target(rl.operands[0]));
        break;
      case Op::Alloc:
        ins.a = parse_operand(rl.operands[0]);
        ins.b = parse_operand(rl.operands[1]);
        expect(ins.a, {K::Reg}, "destination");
        expect(ins.b, {K::Reg, K::Imm}, "size");
        break;
      case Op::ReadInput:
        if (!prog.input) throw ParseError(rl.line, "readinput requires a .input directive");
        ins.a = Operand::make_imm(prog.input->addr);
        ins.b = Operand::make_imm(prog.input->len);
        break;
      case Op::Ret:
      case Op::Halt:
        break;
    }
    prog.code.push_back(ins);
  }

  if (entry_label) {
    auto it = prog.labels.find(*entry_label);
    if (it == prog.labels.end())
      throw ParseError(entry_line, "undefined label '" + *entry_label + "'");
    if (it->second >= prog.code.size())
      throw ParseError(entry_line, "entry label points past end of program");
    prog.entry = it->second;
  }
  return prog;
}

// ---------------------------------------------------------------------------
// Machine state & concrete semantics
// ---------------------------------------------------------------------------

uint8_t MachineState::load_byte(uint32_t a) const {
  auto it = mem.find(a);
  return it == mem.end() ? 0 : it->second;
}

void MachineState::store_byte(uint32_t a, uint8_t v) {
  if (v == 0) {
    mem.erase(a);  // keep the sparse map canonical
  } else {
    mem[a] = v;
  }
}

uint32_t MachineState::load(uint32_t addr, unsigned w) const {
  uint32_t v = 0;
  for (unsigned i = 0; i < w; i++) v |= static_cast<uint32_t>(load_byte(addr + i)) << (8 * i);
  return v;
}

void MachineState::store(uint32_t addr, uint32_t v, unsigned w) {
  for (unsigned i = 0; i < w; i++) store_byte(addr + i, static_cast<uint8_t>(v >> (8 * i)));
}

std::string MachineState::dump() const {
  std::ostringstream os;
  char buf[64];
  for (unsigned r = 0; r < kNumRegs; r++) {
    snprintf(buf, sizeof buf, "r%u %08x\n", r, regs[r]);
    os << buf;
  }
  for (const auto& [a, v] : mem) {
    snprintf(buf, sizeof buf, "m %08x %02x\n", a, v);
    os << buf;
  }
  os << "zf " << (zero_flag ? 1 : 0) << " pc " << pc << " halted " << (halted ? 1 : 0) << "\n";
  for (const auto& [a, h] : heap) {
    snprintf(buf, sizeof buf, "heap %08x %u %s\n", a, h.size, h.freed ? "freed" : "live");
    os << buf;
  }
  return os.str();
}

MachineState initial_state(const Program& prog, std::span<const uint8_t> input) {
  MachineState m;
  m.regs[kStackReg] = kStackInit;
  m.pc = prog.entry;
  m.code_size = static_cast<uint32_t>(prog.code.size());
  m.input.assign(input.begin(), input.end());
  if (prog.input) {
    m.input_addr = prog.input->addr;
    m.input_len = prog.input->len;
  }
  return m;
}

uint32_t width_mask(unsigned w) {
  return w >= 4 ? 0xFFFFFFFFu : ((1u << (8 * w)) - 1);
}

uint32_t effective_address(const MachineState& m, const Operand& op) {
  if (op.kind != Operand::Kind::Mem) throw std::logic_error("not a memory operand");
  return m.regs[op.reg] + static_cast<uint32_t>(op.disp);
}

namespace {

uint32_t operand_value(const MachineState& m, const Operand& op, unsigned w) {
  switch (op.kind) {
    case Operand::Kind::Reg: return m.regs[op.reg] & width_mask(w);
    case Operand::Kind::Imm: return op.imm & width_mask(w);
    case Operand::Kind::Mem: return m.load(effective_address(m, op), w);
    case Operand::Kind::None: break;
  }
  throw std::logic_error("operand has no value");
}

void write_reg_low(MachineState& m, uint8_t r, uint32_t v, unsigned w) {
  uint32_t mask = width_mask(w);
  m.regs[r] = (m.regs[r] & ~mask) | (v & mask);
}

}  // namespace

StepResult step(MachineState& m, const Instruction& ins) {
  if (m.halted) throw std::logic_error("step on a halted machine");
  StepResult res;
  const unsigned w = ins.width;
  const uint32_t mask = width_mask(w);
  uint32_t next = m.pc + 1;

  auto indirect_to = [&](uint32_t target) {
    if (target >= m.code_size) {
      res.fault = GuestFault{GuestFault::Kind::BadIndirectTarget, m.pc, target};
      m.halted = true;
      next = m.pc;
    } else {
      next = target;
    }
  };

  switch (ins.op) {
    case Op::Mov:
      write_reg_low(m, ins.a.reg, operand_value(m, ins.b, w), w);
      break;
    case Op::Load:
      write_reg_low(m, ins.a.reg, m.load(effective_address(m, ins.b), w), w);
      break;
    case Op::Store:
      m.store(effective_address(m, ins.a), operand_value(m, ins.b, w), w);
      break;
    case Op::Push: {
      uint32_t v = m.regs[ins.a.reg];
      m.regs[kStackReg] -= 4;
      m.store(m.regs[kStackReg], v, 4);
      break;
    }
    case Op::Pop: {
      uint32_t v = m.load(m.regs[kStackReg], 4);
      m.regs[kStackReg] += 4;
      m.regs[ins.a.reg] = v;
      break;
    }
    case Op::Or:
      write_reg_low(m, ins.a.reg, (m.regs[ins.a.reg] | operand_value(m, ins.b, w)) & mask, w);
      break;
    case Op::And:
      write_reg_low(m, ins.a.reg, (m.regs[ins.a.reg] & operand_value(m, ins.b, w)) & mask, w);
      break;
    case Op::Xor:
      write_reg_low(m, ins.a.reg, (m.regs[ins.a.reg] ^ operand_value(m, ins.b, w)) & mask, w);
      break;
    case Op::Not:
      write_reg_low(m, ins.a.reg, ~m.regs[ins.a.reg] & mask, w);
      break;
    case Op::Add:
      write_reg_low(m, ins.a.reg,
                    ((m.regs[ins.a.reg] & mask) + operand_value(m, ins.b, w)) & mask, w);
      break;
    case Op::Sub:
      write_reg_low(m, ins.a.reg,
                    ((m.regs[ins.a.reg] & mask) - operand_value(m, ins.b, w)) & mask, w);
      break;
    case Op::Mul:
      write_reg_low(m, ins.a.reg,
                    ((m.regs[ins.a.reg] & mask) * operand_value(m, ins.b, w)) & mask, w);
      break;
    case Op::Shl: {
      uint32_t amt = operand_value(m, ins.b, 4) & 31;
      uint32_t v = m.regs[ins.a.reg] & mask;
      write_reg_low(m, ins.a.reg, amt >= 8 * w ? 0 : ((v << amt) & mask), w);
      break;
    }
    case Op::Shr: {
      uint32_t amt = operand_value(m, ins.b, 4) & 31;
      uint32_t v = m.regs[ins.a.reg] & mask;
      write_reg_low(m, ins.a.reg, amt >= 8 * w ? 0 : (v >> amt), w);
      break;
    }
    case Op::Lea:
      m.regs[ins.a.reg] = effective_address(m, ins.b);
      break;
    case Op::Copyn: {
      uint32_t dst = effective_address(m, ins.a);
      uint32_t src = effective_address(m, ins.b);
      uint32_t cnt = m.regs[ins.c.reg];
      if (cnt > kCopyMax) {
        res.fault = GuestFault{GuestFault::Kind::CopyTooLarge, m.pc, dst};
      } else {
        for (uint32_t i = 0; i < cnt; i++) m.store_byte(dst + i, m.load_byte(src + i));
      }
      break;
    }
    case Op::Cmp:
      m.zero_flag = operand_value(m, ins.a, w) == operand_value(m, ins.b, w);
      break;
    case Op::Jmp:
      next = ins.a.imm;
      break;
    case Op::Jz:
      if (m.zero_flag) next = ins.a.imm;
      break;
    case Op::Jnz:
      if (!m.zero_flag) next = ins.a.imm;
      break;
    case Op::Ijmp:
      indirect_to(m.regs[ins.a.reg]);
      break;
    case Op::Icall: {
      uint32_t target = m.regs[ins.a.reg];
      m.regs[kStackReg] -= 4;
      m.store(m.regs[kStackReg], m.pc + 1, 4);
      indirect_to(target);
      break;
    }
    case Op::Ret: {
      uint32_t target = m.load(m.regs[kStackReg], 4);
      m.regs[kStackReg] += 4;
      indirect_to(target);
      break;
    }
    case Op::Alloc: {
      uint32_t size = operand_value(m, ins.b, 4);
      uint32_t base = m.next_heap;
      uint32_t span = ((std::max(size, 1u) + 15u) & ~15u) + 16u;
      m.next_heap = base + span;
      m.heap[base] = HeapEntry{size, false};
      m.regs[ins.a.reg] = base;
      break;
    }
    case Op::Free: {
      uint32_t addr = m.regs[ins.a.reg];
      auto it = m.heap.find(addr);
      if (it == m.heap.end()) {
        res.fault = GuestFault{GuestFault::Kind::FreeUnknown, m.pc, addr};
      } else if (it->second.freed) {
        res.fault = GuestFault{GuestFault::Kind::DoubleFree, m.pc, addr};
      } else {
        it->second.freed = true;
      }
      break;
    }
    case Op::ReadInput: {
      uint32_t addr = ins.a.imm, len = ins.b.imm;
      for (uint32_t i = 0; i < len; i++)
        m.store_byte(addr + i, i < m.input.size() ? m.input[i] : 0);
      break;
    }
    case Op::Halt:
      m.halted = true;
      next = m.pc;
      break;
  }

  m.pc = next;
  return res;
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

std::vector<Block> split_blocks(const Program& prog) {
  const uint32_t n = static_cast<uint32_t>(prog.code.size());
  std::set<uint32_t> leaders;
  if (n == 0) return {};
  leaders.insert(0);
  leaders.insert(prog.entry);
  for (uint32_t i = 0; i < n; i++) {
    const Instruction& ins = prog.code[i];
    if (op_class(ins.op) == OpClass::Branch) leaders.insert(ins.a.imm);
    if (is_terminator(ins.op) && i + 1 < n) leaders.insert(i + 1);
  }
  std::vector<Block> blocks;
  for (auto it = leaders.begin(); it != leaders.end(); ++it) {
    uint32_t start = *it;
    auto nx = std::next(it);
    uint32_t end = nx == leaders.end() ? n : *nx;
    if (end > start) blocks.push_back(Block{start, end - start});
  }
  return blocks;
}

void RegTracker::apply(const Instruction& ins) {
  auto unknown = [&](uint8_t r) { off_[r].reset(); };
  auto bump = [&](uint8_t r, int64_t d) {
    if (off_[r]) *off_[r] += d;
  };
  switch (ins.op) {
    case Op::Add:
      if (ins.b.kind == Operand::Kind::Imm)
        bump(ins.a.reg, static_cast<int64_t>(static_cast<int32_t>(ins.b.imm)));
      else
        unknown(ins.a.reg);
      break;
    case Op::Sub:
      if (ins.b.kind == Operand::Kind::Imm)
        bump(ins.a.reg, -static_cast<int64_t>(static_cast<int32_t>(ins.b.imm)));
      else
        unknown(ins.a.reg);
      break;
    case Op::Lea:
      if (ins.a.reg == ins.b.reg)
        bump(ins.a.reg, ins.b.disp);
      else
        unknown(ins.a.reg);
      break;
    case Op::Push:
      bump(kStackReg, -4);
      break;
    case Op::Pop:
      if (ins.a.reg == kStackReg) {
        unknown(kStackReg);
      } else {
        bump(kStackReg, 4);
        unknown(ins.a.reg);
      }
      break;
    case Op::Icall:
      bump(kStackReg, -4);
      break;
    case Op::Ret:
      bump(kStackReg, 4);
      break;
    case Op::Mov:
    case Op::Load:
    case Op::Or:
    case Op::And:
    case Op::Xor:
    case Op::Not:
    case Op::Mul:
    case Op::Shl:
    case Op::Shr:
    case Op::Alloc:
      unknown(ins.a.reg);
      break;
    case Op::Store:
    case Op::Copyn:
    case Op::Cmp:
    case Op::Jmp:
    case Op::Jz:
    case Op::Jnz:
    case Op::Ijmp:
    case Op::Free:
    case Op::ReadInput:
    case Op::Halt:
      break;
  }
}

InstrIo instr_io(const Instruction& ins, const RegTracker& t) {
  InstrIo io;
  const uint8_t w = ins.width;

  auto mem_read = [&](const Operand& op) -> ByteRange {
    if (!t.known(op.reg)) io.resolvable = false;
    int64_t d = (t.known(op.reg) ? t.offset(op.reg) : 0) + op.disp;
    io.derefs.push_back(MemAccess{op.reg, d, w, false});
    return ByteRange::mem_range(op.reg, d, w);
  };
  auto mem_write = [&](const Operand& op) -> ByteRange {
    if (!t.known(op.reg)) io.resolvable = false;
    int64_t d = (t.known(op.reg) ? t.offset(op.reg) : 0) + op.disp;
    io.derefs.push_back(MemAccess{op.reg, d, w, true});
    return ByteRange::mem_range(op.reg, d, w);
  };
  auto stack_slot = [&](int64_t rel, bool write) -> ByteRange {
    if (!t.known(kStackReg)) io.resolvable = false;
    int64_t d = (t.known(kStackReg) ? t.offset(kStackReg) : 0) + rel;
    io.derefs.push_back(MemAccess{kStackReg, d, 4, write});
    return ByteRange::mem_range(kStackReg, d, 4);
  };
  auto src_operand = [&](const Operand& op) -> std::optional<ByteRange> {
    switch (op.kind) {
      case Operand::Kind::Reg: return ByteRange::reg_range(op.reg, w);
      case Operand::Kind::Mem: return mem_read(op);
      default: return std::nullopt;  // immediates carry no taint
    }
  };

  switch (ins.op) {
    case Op::Mov:
      io.writes.push_back(ByteRange::reg_range(ins.a.reg, w));
      if (auto s = src_operand(ins.b)) {
        io.reads.push_back(*s);
        io.prop = PropKind::UnaryIndep;
      } else {
        io.prop = PropKind::ClearDst;
      }
      break;
    case Op::Load:
      io.reads.push_back(mem_read(ins.b));
      io.writes.push_back(ByteRange::reg_range(ins.a.reg, w));
      io.prop = PropKind::UnaryIndep;
      break;
    case Op::Store:
      io.writes.push_back(mem_write(ins.a));
      if (auto s = src_operand(ins.b)) {
        io.reads.push_back(*s);
        io.prop = PropKind::UnaryIndep;
      } else {
        io.prop = PropKind::ClearDst;
      }
      break;
    case Op::Push:
      io.reads.push_back(ByteRange::reg_range(ins.a.reg, 4));
      io.writes.push_back(stack_slot(-4, true));
      io.prop = PropKind::UnaryIndep;
      break;
    case Op::Pop:
      io.reads.push_back(stack_slot(0, false));
      io.writes.push_back(ByteRange::reg_range(ins.a.reg, 4));
      io.prop = PropKind::UnaryIndep;
      break;
    case Op::Or:
    case Op::And:
    case Op::Xor:
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Shl:
    case Op::Shr: {
      bool coupled = op_class(ins.op) == OpClass::ByteCoupledAlu;
      io.reads.push_back(ByteRange::reg_range(ins.a.reg, w));
      io.writes.push_back(ByteRange::reg_range(ins.a.reg, w));
      if (auto s = src_operand(ins.b)) {
        io.reads.push_back(*s);
        io.prop = coupled ? PropKind::BinaryCoupled : PropKind::BinaryIndep;
      } else {
        io.prop = coupled ? PropKind::UnaryCoupled : PropKind::UnaryIndep;
      }
      break;
    }
    case Op::Not:
      io.reads.push_back(ByteRange::reg_range(ins.a.reg, w));
      io.writes.push_back(ByteRange::reg_range(ins.a.reg, w));
      io.prop = PropKind::UnaryIndep;
      break;
    case Op::Lea:
      // the address value is the data: the base register is a real source
      io.reads.push_back(ByteRange::reg_range(ins.b.reg, 4));
      io.writes.push_back(ByteRange::reg_range(ins.a.reg, 4));
      io.prop = PropKind::UnaryCoupled;
      io.addr_site = true;
      break;
    case Op::Copyn:
      // ranges depend on runtime register values; handled wholly by the handler
      io.prop = PropKind::Copy;
      break;
    case Op::Cmp:
      if (auto s = src_operand(ins.a)) io.reads.push_back(*s);
      if (auto s = src_operand(ins.b)) io.reads.push_back(*s);
      io.prop = PropKind::CmpObserve;
      break;
    case Op::Icall:
      io.writes.push_back(stack_slot(-4, true));
      io.prop = PropKind::ClearDst;
      break;
    case Op::Ret:
      stack_slot(0, false);  // deref only; the popped value is consumed as control
      io.prop = PropKind::None;
      break;
    case Op::Alloc:
      // a fresh allocation is an untainted value regardless of the size operand
      io.writes.push_back(ByteRange::reg_range(ins.a.reg, 4));
      io.prop = PropKind::ClearDst;
      break;
    case Op::ReadInput:
      // buffer address/length live in the instruction's imm operands
      io.prop = PropKind::Input;
      break;
    case Op::Jmp:
    case Op::Jz:
    case Op::Jnz:
    case Op::Ijmp:
    case Op::Free:
    case Op::Halt:
      io.prop = PropKind::None;
      break;
  }
  return io;
}

std::vector<Location> expand_range(const ByteRange& r,
                                   const std::array<uint32_t, kNumRegs>& entry_regs) {
  std::vector<Location> out;
  switch (r.kind) {
    case ByteRange::Kind::Reg:
      for (uint8_t i = 0; i < r.width; i++) out.push_back(Location::reg_byte(r.reg, i));
      break;
    case ByteRange::Kind::Mem: {
      uint32_t ea = entry_regs[r.reg] + static_cast<uint32_t>(r.disp);
      for (uint8_t i = 0; i < r.width; i++) out.push_back(Location::mem_byte(ea + i));
      break;
    }
    case ByteRange::Kind::Abs:
      for (uint8_t i = 0; i < r.width; i++) out.push_back(Location::mem_byte(r.abs + i));
      break;
  }
  return out;
}

IoSets io_sets(std::span<const Instruction> prefix,
               const std::array<uint32_t, kNumRegs>& entry_regs) {
  IoSets io;
  LocationSet written;
  RegTracker t;
  for (const Instruction& ins : prefix) {
    InstrIo ii = instr_io(ins, t);
    if (!ii.resolvable)
      throw std::logic_error("io_sets: unresolvable effective address (block not truncated)");
    if (ins.op == Op::Copyn) {
      t.apply(ins);
      continue;
    }
    if (ins.op == Op::ReadInput) {
      for (uint32_t i = 0; i < ins.b.imm; i++) {
        Location l = Location::mem_byte(ins.a.imm + i);
        io.outputs.insert(l);
        written.insert(l);
      }
      t.apply(ins);
      continue;
    }
    for (const ByteRange& r : ii.reads)
      for (const Location& l : expand_range(r, entry_regs))
        if (!written.count(l)) io.inputs.insert(l);
    for (const ByteRange& r : ii.writes)
      for (const Location& l : expand_range(r, entry_regs)) {
        io.outputs.insert(l);
        written.insert(l);
      }
    t.apply(ins);
  }
  return io;
}

}  // namespace taintvm
