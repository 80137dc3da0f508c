#include "support.hpp"

#include <cstdlib>
#include <sstream>

namespace taintvm::test {

uint64_t harness_seed() {
  if (const char* s = std::getenv("TR_SEED")) {
    char* end = nullptr;
    uint64_t v = std::strtoull(s, &end, 10);
    if (end && *end == '\0') return v;
  }
  return 20260808ull;
}

// ---------------------------------------------------------------------------
// Program generator
// ---------------------------------------------------------------------------

namespace {

// register roles: r0..r3 data pool, r5 input base, r6/r7 data bases,
// r8/r11 loop counters, r9 clean scratch, r10 heap pointer, r12 copy count
class Gen {
 public:
  Gen(std::mt19937& rng, const GenOptions& opt) : rng_(rng), opt_(opt) {}

  std::string build() {
    if (opt_.use_input)
      line(".input 0x3000 " + std::to_string(opt_.input_len));
    line("mov r6, 0x2000");
    line("mov r7, 0x2400");
    line("mov r9, " + std::to_string(pick(0, 9)));
    if (opt_.use_input) {
      line("mov r5, 0x3000");
      line("readinput");
      int pulls = pick(1, 3);
      for (int i = 0; i < pulls; i++)
        line("load" + width() + " " + pool_reg() + ", [r5+" +
             std::to_string(pick(0, static_cast<int>(opt_.input_len) - 1) & ~3) + "]");
    }
    emit_body(opt_.body, 0);
    line("halt");
    std::ostringstream os;
    for (const std::string& l : lines_) os << l << "\n";
    return os.str();
  }

 private:
  std::mt19937& rng_;
  const GenOptions& opt_;
  std::vector<std::string> lines_;
  int label_n_ = 0;

  int pick(int lo, int hi) {
    return lo + static_cast<int>(rng_() % static_cast<uint32_t>(hi - lo + 1));
  }
  void line(std::string s) { lines_.push_back(std::move(s)); }
  std::string pool_reg() { return "r" + std::to_string(pick(0, opt_.pool_regs - 1)); }
  std::string base_reg() {
    int n = opt_.use_input ? 3 : 2;
    int r = pick(0, n - 1);
    return r == 0 ? "r6" : r == 1 ? "r7" : "r5";
  }
  std::string disp() { return std::to_string(4 * pick(0, opt_.disp_slots - 1)); }
  std::string width() {
    if (!opt_.width_variety) return "";
    int r = pick(0, 9);
    return r < 6 ? "" : r < 8 ? ".2" : ".1";
  }
  std::string imm() {
    static const char* vals[] = {"1", "2", "3", "5", "7", "0x11", "0x101", "0xff", "255", "1000"};
    return vals[pick(0, 9)];
  }

  void emit_simple() {
    switch (pick(0, 12)) {
      case 0: line("mov" + width() + " " + pool_reg() + ", " + pool_reg()); break;
      case 1: line("mov" + width() + " " + pool_reg() + ", " + imm()); break;
      case 2: line("load" + width() + " " + pool_reg() + ", [" + base_reg() + "+" + disp() + "]"); break;
      case 3: line("store" + width() + " [" + base_reg() + "+" + disp() + "], " + pool_reg()); break;
      case 4: {
        static const char* ops[] = {"or", "and", "xor"};
        line(std::string(ops[pick(0, 2)]) + width() + " " + pool_reg() + ", " +
             (pick(0, 2) ? pool_reg() : imm()));
        break;
      }
      case 5: {
        static const char* ops[] = {"add", "sub", "mul", "shl", "shr"};
        const char* op = ops[pick(0, 4)];
        std::string src = pick(0, 2) ? pool_reg() : imm();
        if (op[0] == 's' && op[1] == 'h' && src[0] != 'r')
          src = std::to_string(pick(0, 7));  // modest shift amounts
        line(std::string(op) + width() + " " + pool_reg() + ", " + src);
        break;
      }
      case 6: line("not" + width() + " " + pool_reg()); break;
      case 7: line("push " + pool_reg()); break;
      case 8: line("pop " + pool_reg()); break;
      case 9: line("lea " + pool_reg() + ", [" + base_reg() + "+" + disp() + "]"); break;
      case 10:
        line("cmp" + width() + " " + pool_reg() + ", " + (pick(0, 1) ? pool_reg() : imm()));
        break;
      case 11:
        line("cmp" + width() + " [" + base_reg() + "+" + disp() + "], " + imm());
        break;
      case 12:
        if (opt_.mutate_bases && pick(0, 2) == 0) {
          switch (pick(0, 3)) {
            case 0: line("lea r6, [r6+" + std::to_string(4 * pick(1, 4)) + "]"); break;
            case 1: line("load r6, [r7+" + disp() + "]"); break;
            // drift r7 toward (or onto) r6's window: base aliasing varies
            // across entries of the same block
            case 2: line("lea r7, [r7-" + std::to_string(4 * pick(1, 8)) + "]"); break;
            case 3: line("mov r7, r6"); break;
          }
        } else {
          line("mov " + pool_reg() + ", " + imm());
        }
        break;
    }
  }

  void emit_special() {
    int r = pick(0, 3);
    if (opt_.copyn && r == 0) {
      line("mov r12, " + std::to_string(pick(1, 12)));
      line("copyn [" + base_reg() + "+" + disp() + "], [" + base_reg() + "+" + disp() +
           "], r12");
    } else if (opt_.heap && r == 1) {
      line("alloc r10, " + std::to_string(pick(4, 32)));
      line("store [r10+" + std::to_string(4 * pick(0, 3)) + "], " + pool_reg());
    } else if (opt_.heap && r == 2) {
      line("free r10");  // double frees and foreign frees surface as fault events
    } else if (opt_.use_input && r == 3) {
      line("readinput");
    } else {
      emit_simple();
    }
  }

  void emit_body(int budget, int depth) {
    while (budget > 0) {
      int roll = pick(0, 99);
      if (roll < 60 || !opt_.loops) {
        emit_simple();
        budget--;
      } else if (roll < 72 && depth < 2 && budget >= 6) {
        std::string counter = depth == 0 ? "r8" : "r11";
        std::string lab = "L" + std::to_string(label_n_++);
        int iters = pick(2, opt_.max_loop_iters);
        int inner = std::min(budget - 4, pick(2, 6));
        line("mov " + counter + ", " + std::to_string(iters));
        line(lab + ":");
        emit_body(inner, depth + 1);
        line("sub " + counter + ", 1");
        line("cmp " + counter + ", 0");
        line("jnz " + lab);
        budget -= inner + 4;
      } else if (roll < 85 && budget >= 3) {
        std::string lab = "S" + std::to_string(label_n_++);
        int skipped = std::min(budget - 1, pick(1, 4));
        line("cmp r9, " + std::to_string(pick(0, 9)));
        line((pick(0, 1) ? "jz " : "jnz ") + lab);
        for (int i = 0; i < skipped; i++) emit_simple();
        line(lab + ":");
        budget -= skipped + 2;
      } else {
        emit_special();
        budget--;
      }
    }
  }
};

}  // namespace

std::string gen_program(std::mt19937& rng, const GenOptions& opt) {
  return Gen(rng, opt).build();
}

std::vector<uint8_t> gen_input(std::mt19937& rng, uint32_t len) {
  std::vector<uint8_t> out(len);
  for (auto& b : out) b = static_cast<uint8_t>(rng() % 256);
  return out;
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

namespace {

uint32_t concrete_value(const MachineState& m, const Operand& o, unsigned w) {
  switch (o.kind) {
    case Operand::Kind::Reg: return m.regs[o.reg] & width_mask(w);
    case Operand::Kind::Imm: return o.imm & width_mask(w);
    case Operand::Kind::Mem: return m.load(effective_address(m, o), w);
    default: return 0;
  }
}

}  // namespace

IoSets trace_io(std::span<const Instruction> prefix, MachineState m) {
  IoSets io;
  LocationSet written;
  auto read_loc = [&](Location l) {
    if (!written.count(l)) io.inputs.insert(l);
  };
  auto write_loc = [&](Location l) {
    io.outputs.insert(l);
    written.insert(l);
  };
  auto read_reg = [&](uint8_t r, unsigned w) {
    for (unsigned b = 0; b < w; b++) read_loc(Location::reg_byte(r, b));
  };
  auto write_reg = [&](uint8_t r, unsigned w) {
    for (unsigned b = 0; b < w; b++) write_loc(Location::reg_byte(r, b));
  };
  auto read_mem = [&](uint32_t a, unsigned w) {
    for (unsigned b = 0; b < w; b++) read_loc(Location::mem_byte(a + b));
  };
  auto write_mem = [&](uint32_t a, unsigned w) {
    for (unsigned b = 0; b < w; b++) write_loc(Location::mem_byte(a + b));
  };
  auto read_operand = [&](const Operand& o, unsigned w) {
    if (o.kind == Operand::Kind::Reg) read_reg(o.reg, w);
    if (o.kind == Operand::Kind::Mem) read_mem(effective_address(m, o), w);
  };

  for (const Instruction& ins : prefix) {
    const unsigned w = ins.width;
    switch (ins.op) {
      case Op::Mov:
        read_operand(ins.b, w);
        write_reg(ins.a.reg, w);
        break;
      case Op::Load:
        read_mem(effective_address(m, ins.b), w);
        write_reg(ins.a.reg, w);
        break;
      case Op::Store:
        read_operand(ins.b, w);
        write_mem(effective_address(m, ins.a), w);
        break;
      case Op::Push:
        read_reg(ins.a.reg, 4);
        write_mem(m.regs[kStackReg] - 4, 4);
        break;
      case Op::Pop:
        read_mem(m.regs[kStackReg], 4);
        write_reg(ins.a.reg, 4);
        break;
      case Op::Or:
      case Op::And:
      case Op::Xor:
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Shl:
      case Op::Shr:
        read_reg(ins.a.reg, w);
        read_operand(ins.b, w);
        write_reg(ins.a.reg, w);
        break;
      case Op::Not:
        read_reg(ins.a.reg, w);
        write_reg(ins.a.reg, w);
        break;
      case Op::Lea:
        read_reg(ins.b.reg, 4);
        write_reg(ins.a.reg, 4);
        break;
      case Op::Cmp:
        read_operand(ins.a, w);
        read_operand(ins.b, w);
        break;
      case Op::Icall:
        write_mem(m.regs[kStackReg] - 4, 4);
        break;
      case Op::Alloc:
        write_reg(ins.a.reg, 4);
        break;
      case Op::ReadInput:
        for (uint32_t i = 0; i < ins.b.imm; i++) write_loc(Location::mem_byte(ins.a.imm + i));
        break;
      case Op::Copyn:
      case Op::Jmp:
      case Op::Jz:
      case Op::Jnz:
      case Op::Ijmp:
      case Op::Ret:
      case Op::Free:
      case Op::Halt:
        break;
    }
    step(m, ins);
    if (m.halted) break;
  }
  return io;
}

SiteValues trace_site_values(const Program& prog, std::span<const uint8_t> input,
                             uint64_t max_steps) {
  SiteValues out;
  MachineState m = initial_state(prog, input);
  while (!m.halted && m.pc < prog.code.size() && max_steps-- > 0) {
    const Instruction& ins = prog.code[m.pc];
    if (ins.op == Op::Cmp) {
      uint64_t a = concrete_value(m, ins.a, ins.width);
      uint64_t b = concrete_value(m, ins.b, ins.width);
      out[m.pc].push_back((a << 32) | b);
    } else if (ins.op == Op::Lea) {
      out[m.pc].push_back(effective_address(m, ins.b));
    }
    step(m, ins);
  }
  return out;
}

std::map<uint32_t, std::set<uint32_t>> flip_byte_influence(
    const Program& prog, std::span<const uint8_t> input, uint64_t max_steps) {
  std::map<uint32_t, std::set<uint32_t>> influence;
  SiteValues base = trace_site_values(prog, input, max_steps);
  std::vector<uint8_t> mutated(input.begin(), input.end());
  for (uint32_t k = 0; k < mutated.size(); k++) {
    uint8_t saved = mutated[k];
    mutated[k] ^= 0xA5;
    SiteValues flipped = trace_site_values(prog, mutated, max_steps);
    mutated[k] = saved;
    for (const auto& [site, vals] : base) {
      auto it = flipped.find(site);
      if (it == flipped.end() || it->second != vals) influence[site].insert(k);
    }
    for (const auto& [site, vals] : flipped)
      if (!base.count(site)) influence[site].insert(k);
  }
  return influence;
}

// ---------------------------------------------------------------------------
// Forced-set execution
// ---------------------------------------------------------------------------

void run_block_with_set(const Program& prog, const SubBlock& sb, MachineState& m,
                        ShadowState& shadow, TaintPrimitives& policy,
                        const std::set<uint32_t>& set) {
  const std::array<uint32_t, kNumRegs> entry_regs = m.regs;
  auto* uaf = dynamic_cast<UafPolicy*>(&policy);
  for (uint32_t i = 0; i < sb.count; i++) {
    const uint32_t abs = sb.start + i;
    const Instruction& ins = prog.code[abs];
    if (set.count(i))
      apply_taint_handler(shadow, policy, m, ins, sb.io[i], entry_regs, nullptr, abs);
    Label free_label = 0;
    if (ins.op == Op::Free && uaf) {
      std::vector<Location> locs;
      for (uint8_t b = 0; b < 4; b++) locs.push_back(Location::reg_byte(ins.a.reg, b));
      free_label = fold_meet(shadow, policy, locs);
    }
    step(m, ins);
    if (ins.op == Op::Alloc && uaf) {
      Label l = uaf->mint_live(abs);
      for (uint8_t b = 0; b < 4; b++)
        shadow.set_label(Location::reg_byte(ins.a.reg, b), l);
    }
    if (ins.op == Op::Free && uaf && uaf->valid(free_label) &&
        uaf->status(free_label) == UafPolicy::Status::Live)
      uaf->set_dangling(free_label);
    if (m.halted) break;
  }
}

void taint_operands(const SubBlock& sb, uint32_t mask, ShadowState& shadow,
                    TaintPrimitives& policy,
                    const std::array<uint32_t, kNumRegs>& entry_regs, std::mt19937& rng) {
  auto fresh = [&](uint32_t salt) -> Label {
    if (auto* bv = dynamic_cast<BvPolicy*>(&policy))
      return bv->store().singleton(rng() % 8);
    if (auto* uaf = dynamic_cast<UafPolicy*>(&policy)) {
      Label l = uaf->mint_live(salt);
      if (rng() % 3 == 0) uaf->set_dangling(l);
      return l;
    }
    return (rng() % 1000) + 1;  // bitwise / id: any nonzero tag
  };
  for (size_t i = 0; i < sb.declared.size() && i < 32; i++) {
    if (!(mask & (1u << i))) continue;
    const DeclOperand& d = sb.declared[i];
    if (d.kind == DeclOperand::Kind::Reg) {
      uint8_t subset = static_cast<uint8_t>(1 + rng() % 15);
      for (uint8_t b = 0; b < 4; b++)
        if (subset & (1u << b))
          shadow.set_label(Location::reg_byte(d.reg, b), fresh(static_cast<uint32_t>(i)));
    } else {
      uint32_t start = d.kind == DeclOperand::Kind::Abs
                           ? d.abs
                           : entry_regs[d.reg] + static_cast<uint32_t>(d.disp);
      uint8_t subset = static_cast<uint8_t>(1 + rng() % ((1u << d.width) - 1));
      for (uint8_t b = 0; b < d.width; b++)
        if (subset & (1u << b))
          shadow.set_label(Location::mem_byte(start + b), fresh(static_cast<uint32_t>(i)));
    }
  }
}

// ---------------------------------------------------------------------------
// Crafted corpora
// ---------------------------------------------------------------------------

std::vector<CraftedCase> uaf_cases() {
  std::vector<CraftedCase> cases;
  auto add = [&](std::string name, std::string text, bool buggy,
                 std::vector<uint32_t> sites = {}) {
    cases.push_back(
        CraftedCase{std::move(name), std::move(text), {}, buggy, std::move(sites)});
  };

  add("load-after-free",
      "alloc r1, 16\n"
      "free r1\n"
      "load r0, [r1]\n"
      "halt\n",
      true, {0});
  add("store-after-free",
      "alloc r1, 16\n"
      "free r1\n"
      "store [r1], 7\n"
      "halt\n",
      true, {0});
  add("double-free",
      "alloc r1, 16\n"
      "free r1\n"
      "free r1\n"
      "halt\n",
      true, {0});
  add("alias-through-register-copy",
      "alloc r1, 16\n"
      "mov r2, r1\n"
      "free r1\n"
      "load r0, [r2]\n"
      "halt\n",
      true, {0});
  add("alias-through-memory",
      "mov r6, 0x2000\n"
      "alloc r1, 16\n"
      "store [r6], r1\n"
      "free r1\n"
      "load r2, [r6]\n"
      "load r0, [r2]\n"
      "halt\n",
      true, {1});
  add("interior-pointer-after-free",
      "alloc r1, 16\n"
      "mov r2, r1\n"
      "add r2, 8\n"
      "free r1\n"
      "load r0, [r2]\n"
      "halt\n",
      true, {0});
  add("alias-through-stack",
      "alloc r1, 16\n"
      "push r1\n"
      "free r1\n"
      "pop r2\n"
      "load r0, [r2]\n"
      "halt\n",
      true, {0});
  add("double-free-through-alias",
      "alloc r1, 16\n"
      "mov r2, r1\n"
      "free r1\n"
      "free r2\n"
      "halt\n",
      true, {0});
  add("benign-pointer-subtraction",
      "alloc r1, 16\n"
      "alloc r2, 16\n"
      "sub r2, r1\n"  // a taint-free distance, even though both sources are pointers
      "mov r3, r2\n"
      "load r0, [r1]\n"
      "free r1\n"
      "halt\n",
      false);
  add("benign-lifecycle",
      "alloc r1, 8\n"
      "store [r1], 7\n"
      "load r0, [r1]\n"
      "free r1\n"
      "halt\n",
      false);
  return cases;
}

std::vector<CraftedCase> hijack_cases() {
  std::vector<CraftedCase> cases;
  auto add = [&](std::string name, std::string text, std::vector<uint8_t> input, bool buggy) {
    cases.push_back(CraftedCase{std::move(name), std::move(text), std::move(input), buggy, {}});
  };

  // input byte picks the jump target: classic tainted indirect jump
  add("tainted-indirect-jump",
      ".input 0x3000 4\n"
      "        mov r5, 0x3000\n"
      "        readinput\n"
      "        load.1 r1, [r5]\n"
      "        ijmp r1\n"
      "win:    halt\n"
      "lose:   halt\n",
      {4, 0, 0, 0}, true);  // byte 0 = index of win

  // copyn overflows the stack return slot with input bytes, then ret
  add("tainted-return-via-copy-overflow",
      ".input 0x3000 8\n"
      "        mov r7, 0x3000\n"
      "        readinput\n"
      "        mov r2, fn\n"
      "        icall r2\n"
      "back:   halt\n"
      "fn:     lea r6, [r15]\n"
      "        mov r12, 4\n"
      "        copyn [r6], [r7], r12\n"
      "        ret\n",
      {4, 0, 0, 0, 0xEE, 0xEE, 0xEE, 0xEE}, true);  // bytes 0..3 = index of back

  add("untainted-indirect-jump",
      "mov r1, done\n"
      "ijmp r1\n"
      "dead: halt\n"
      "done: halt\n",
      {}, false);

  add("direct-branches-only",
      ".input 0x3000 4\n"
      "mov r5, 0x3000\n"
      "readinput\n"
      "load r1, [r5]\n"
      "cmp r9, 0\n"
      "jz out\n"
      "mov r2, 1\n"
      "out: halt\n",
      {1, 2, 3, 4}, false);

  add("untainted-call-return",
      "mov r2, fn\n"
      "icall r2\n"
      "halt\n"
      "fn: mov r0, 5\n"
      "ret\n",
      {}, false);

  add("input-to-data-not-control",
      ".input 0x3000 4\n"
      "mov r5, 0x3000\n"
      "mov r6, 0x2000\n"
      "readinput\n"
      "load r1, [r5]\n"
      "add r1, 5\n"
      "store [r6], r1\n"
      "mov r2, done\n"
      "ijmp r2\n"
      "dead: halt\n"
      "done: halt\n",
      {9, 8, 7, 6}, false);
  return cases;
}

std::string aliasing_reuse_program() {
  return ".input 0x3000 4\n"
         "        mov r5, 0x3000\n"
         "        readinput\n"
         "        load r0, [r5]\n"
         "        mov r6, 0x2000\n"
         "        mov r7, 0x2400\n"
         "        mov r12, body\n"
         "        mov r8, 40\n"
         "warm:   icall r12\n"
         "        sub r8, 1\n"
         "        cmp r8, 0\n"
         "        jnz warm\n"
         "        mov r7, r6\n"
         "        icall r12\n"
         "        halt\n"
         "body:   store [r6], r0\n"
         "        load r1, [r7]\n"
         "        lea r6, [r6+16]\n"
         "        ret\n";
}

LoopProgram loop_program(std::mt19937& rng, int iterations, int phases) {
  LoopProgram lp;
  lp.input = gen_input(rng, 8);
  for (auto& b : lp.input) b |= 1;  // keep taint-source bytes nonzero

  std::ostringstream os;
  os << ".input 0x3000 8\n"
        "        mov r5, 0x3000\n"
        "        mov r6, 0x2000\n"
        "        readinput\n"
        "        mov r12, body\n";
  // each phase taints a different subset of {r0, r3, r4} and reruns the loop
  static const int combos[][3] = {{1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0, 0, 1},
                                  {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
  for (int p = 0; p < phases; p++) {
    const int* c = combos[p % 7];
    os << (c[0] ? "        load r0, [r5]\n" : "        mov r0, 3\n");
    os << (c[1] ? "        load r3, [r5+4]\n" : "        mov r3, 5\n");
    os << (c[2] ? "        load r4, [r5+2]\n" : "        mov r4, 9\n");
    // prime the loop's memory slots so its entry case is stable from the start
    os << "        store [r6], r0\n"
          "        store [r6+4], r3\n"
          "        store [r6+8], r4\n";
    os << "        mov r8, " << iterations << "\n";
    os << "        icall r12\n";
  }
  os << "        halt\n"
        "body:\n"
        "loop:   add r0, 1\n"
        "        store [r6], r0\n"
        "        add r3, 1\n"
        "        store [r6+4], r3\n"
        "        add r4, 1\n"
        "        store [r6+8], r4\n"
        "        mov r1, 7\n"
        "        add r1, 2\n"
        "        xor r2, r1\n"
        "        store [r6+12], r1\n"
        "        sub r8, 1\n"
        "        cmp r8, 0\n"
        "        jnz loop\n"
        "        ret\n";
  lp.text = os.str();
  return lp;
}

}  // namespace taintvm::test
