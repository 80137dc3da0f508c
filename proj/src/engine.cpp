#include "taintvm/engine.hpp"

#include "json.hpp"

namespace taintvm {

using ordered_json = nlohmann::ordered_json;

Mode mode_from_name(const std::string& s) {
  if (s == "full") return Mode::Full;
  if (s == "static-fp") return Mode::StaticFp;
  if (s == "dynamic-fp") return Mode::DynamicFp;
  throw std::runtime_error("unknown mode '" + s + "'");
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Full: return "full";
    case Mode::StaticFp: return "static-fp";
    case Mode::DynamicFp: return "dynamic-fp";
  }
  return "?";
}

double ExecStats::pct_instrumentable() const {
  if (blocks.empty()) return 0.0;
  size_t n = 0;
  for (const auto& b : blocks) n += b.instrumentable ? 1 : 0;
  return 100.0 * static_cast<double>(n) / static_cast<double>(blocks.size());
}

double ExecStats::avg_block_size() const {
  if (blocks.empty()) return 0.0;
  uint64_t total = 0;
  for (const auto& b : blocks) total += b.size;
  return static_cast<double>(total) / static_cast<double>(blocks.size());
}

double ExecStats::avg_elided() const {
  uint64_t paths = 0;
  double elided = 0.0;
  for (const auto& b : blocks) {
    paths += b.fp_generated;
    elided += b.avg_elided * b.fp_generated;
  }
  return paths == 0 ? 0.0 : elided / static_cast<double>(paths);
}

std::string stats_json(const ExecStats& s) {
  ordered_json agg;
  agg["block_entries"] = s.block_entries;
  agg["exec_none"] = s.exec_none;
  agg["exec_adaptive"] = s.exec_adaptive;
  agg["exec_full"] = s.exec_full;
  agg["fp_generated"] = s.fp_generated;
  agg["reverts"] = s.reverts;
  agg["flushes"] = s.flushes;
  agg["handler_invocations"] = s.handler_invocations;
  agg["context_switches"] = s.context_switches;
  agg["clean_calls"] = s.clean_calls;
  agg["unsupported_untaints"] = s.unsupported_untaints;
  agg["steps"] = s.steps;
  agg["budget_exhausted"] = s.budget_exhausted;
  agg["resource_aborted"] = s.resource_aborted;
  agg["pct_bb_instrumentable"] = s.pct_instrumentable();
  agg["avg_bb_size"] = s.avg_block_size();
  agg["avg_instr_elided"] = s.avg_elided();

  ordered_json blocks = ordered_json::array();
  for (const auto& b : s.blocks) {
    ordered_json row;
    row["entry"] = b.entry;
    row["size"] = b.size;
    row["declared_operands"] = b.declared;
    row["instrumentable"] = b.instrumentable;
    row["exec_none"] = b.exec_none;
    row["exec_adaptive"] = b.exec_adaptive;
    row["exec_full"] = b.exec_full;
    row["fp_generated"] = b.fp_generated;
    row["reverts"] = b.reverts;
    row["avg_elided"] = b.avg_elided;
    blocks.push_back(std::move(row));
  }

  ordered_json doc;
  doc["aggregate"] = std::move(agg);
  doc["blocks"] = std::move(blocks);
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Dispatch machinery
// ---------------------------------------------------------------------------

TaintCaseMask encode_case_mask(const SubBlock& sb, const ShadowState& shadow,
                               const std::array<uint32_t, kNumRegs>& entry_regs) {
  TaintCaseMask mask = 0;
  std::vector<uint8_t> regs;
  regs.reserve(sb.declared_regs);
  for (size_t i = 0; i < sb.declared_regs; i++) regs.push_back(sb.declared[i].reg);
  mask |= shadow.reg_case_bits(regs);
  for (size_t i = sb.declared_regs; i < sb.declared.size() && i < 32; i++) {
    const DeclOperand& d = sb.declared[i];
    uint32_t ea = d.kind == DeclOperand::Kind::Abs
                      ? d.abs
                      : entry_regs[d.reg] + static_cast<uint32_t>(d.disp);
    if (shadow.region_tainted(ea, d.width)) mask |= 1u << i;
  }
  return mask;
}

namespace {

bool any_declared_tainted(const SubBlock& sb, const ShadowState& shadow,
                          const std::array<uint32_t, kNumRegs>& entry_regs) {
  for (size_t i = 0; i < sb.declared_regs; i++)
    if (shadow.status_bits() & (1u << sb.declared[i].reg)) return true;
  for (size_t i = sb.declared_regs; i < sb.declared.size(); i++) {
    const DeclOperand& d = sb.declared[i];
    uint32_t ea = d.kind == DeclOperand::Kind::Abs
                      ? d.abs
                      : entry_regs[d.reg] + static_cast<uint32_t>(d.disp);
    if (shadow.region_tainted(ea, d.width)) return true;
  }
  return false;
}

}  // namespace

DispatchResult dispatch_case(const BlockRuntime& tab, TaintCaseMask mask) {
  if (mask == 0) return {false, VariantKind::None, &tab.cases[0].instrument};
  for (size_t i = 1; i < tab.cases.size(); i++) {
    if (tab.cases[i].mask != mask) continue;
    if (tab.cases[i].kind == VariantKind::Adaptive)
      return {false, VariantKind::Adaptive, &tab.cases[i].instrument};
    return {false, VariantKind::Full, &tab.full_set};
  }
  return {true, VariantKind::Full, nullptr};
}

MissOutcome on_miss(BlockRuntime& tab, TaintCaseMask mask, const Program& prog,
                    const EngineConfig& cfg, const TaintFlowOptions& opts) {
  MissOutcome out;
  if (tab.generated >= cfg.max_paths) {
    // the block is out of path budget: pin this case and stop monitoring
    tab.cases.push_back(CaseEntry{mask, VariantKind::Full, {}});
    tab.monitoring = false;
    out.pinned_full = true;
    return out;
  }
  uint32_t count = ++tab.miss_count[mask];
  if (count < cfg.gen_threshold) return out;

  TaintFlowResult flow = taint_flow(prog, tab.sub, facts_from_mask(tab.sub, mask), opts);
  size_t elided = tab.full_set.size() - flow.instrument.size();
  if (elided >= 1) {
    tab.sum_elided += elided;
    tab.cases.push_back(CaseEntry{mask, VariantKind::Adaptive, std::move(flow.instrument)});
    tab.generated++;
    out.generated = true;
  } else {
    tab.cases.push_back(CaseEntry{mask, VariantKind::Full, {}});
    tab.reverts++;
    out.reverted = true;
    if (tab.reverts >= cfg.revert_limit) tab.monitoring = false;
  }
  return out;
}

BlockRuntime build_block_runtime(const Program& prog, const SubBlock& sb,
                                 const TaintFlowOptions& opts) {
  BlockRuntime tab;
  tab.sub = sb;
  for (uint32_t i = 0; i < sb.count; i++)
    if (has_handler(sb.io[i], opts)) tab.full_set.insert(i);
  TaintFlowResult none = taint_flow(prog, sb, SymbolicFacts{}, opts);
  tab.cases.push_back(CaseEntry{0, VariantKind::None, std::move(none.instrument)});
  return tab;
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct Engine::RunState {
  MachineState machine;
  ShadowState shadow;
  std::map<uint32_t, BlockRuntime> tables;
  std::vector<GuestFault> faults;
  uint64_t budget = 0;
};

Engine::Engine(const Program& prog, TaintPrimitives& policy, EngineConfig cfg, RunHooks hooks)
    : prog_(prog), policy_(policy), cfg_(cfg), hooks_(std::move(hooks)) {
  opts_.alloc_is_source = dynamic_cast<UafPolicy*>(&policy_) != nullptr;
  opts_.observe_cmp = static_cast<bool>(hooks_.cmp);
}

BlockRuntime& Engine::table_for(RunState& rs, uint32_t pc) {
  auto it = rs.tables.find(pc);
  if (it != rs.tables.end()) return it->second;
  // a new block observed at runtime: scan to its terminator, truncate, build
  uint32_t end = pc;
  while (end < prog_.code.size() && !is_terminator(prog_.code[end].op)) end++;
  if (end < prog_.code.size()) end++;  // include the terminator
  Block blk{pc, end - pc};
  BlockRuntime* first = nullptr;
  for (const SubBlock& sb : truncate_block(prog_, blk)) {
    auto [pos, fresh] = rs.tables.emplace(sb.start, BlockRuntime{});
    if (fresh) {
      pos->second = build_block_runtime(prog_, sb, opts_);
      if (cfg_.mode != Mode::DynamicFp || cfg_.max_paths == 0 || pos->second.sub.demoted)
        pos->second.monitoring = false;
    }
    if (!first) first = &pos->second;
  }
  return *first;
}

void apply_taint_handler(ShadowState& sh, TaintPrimitives& policy,
                         const MachineState& machine, const Instruction& ins,
                         const InstrIo& io,
                         const std::array<uint32_t, kNumRegs>& entry_regs,
                         const RunHooks* observers, uint32_t abs) {
  auto expand = [&](const ByteRange& r) { return expand_range(r, entry_regs); };

  switch (io.prop) {
    case PropKind::ClearDst:
      for (const ByteRange& r : io.writes)
        for (const Location& l : expand(r)) sh.set_label(l, 0);
      break;
    case PropKind::UnaryIndep:
    case PropKind::UnaryCoupled: {
      auto dst = expand(io.writes[0]);
      auto src = expand(io.reads[0]);
      if (io.addr_site && observers && observers->addr) {
        Label m = fold_meet(sh, policy, src);
        if (m) observers->addr(AddrObservation{abs, m});
      }
      propagate_unary(sh, policy, dst, src,
                      io.prop == PropKind::UnaryCoupled ? PropMode::Coupled
                                                        : PropMode::Independent);
      break;
    }
    case PropKind::BinaryIndep:
    case PropKind::BinaryCoupled: {
      auto dst = expand(io.writes[0]);
      auto s1 = expand(io.reads[0]);
      auto s2 = expand(io.reads[1]);
      propagate_binary(sh, policy, dst, s1, s2,
                       io.prop == PropKind::BinaryCoupled ? PropMode::Coupled
                                                          : PropMode::Independent);
      break;
    }
    case PropKind::Copy: {
      uint32_t dst = effective_address(machine, ins.a);
      uint32_t src = effective_address(machine, ins.b);
      uint32_t cnt = machine.regs[ins.c.reg];
      if (cnt <= kCopyMax) {
        for (uint32_t i = 0; i < cnt; i++) {
          Label l = sh.get_label(Location::mem_byte(src + i));
          sh.set_label(Location::mem_byte(dst + i), policy.src_dst(l));
        }
      }
      break;
    }
    case PropKind::Input: {
      uint32_t addr = ins.a.imm, len = ins.b.imm;
      for (uint32_t i = 0; i < len; i++)
        sh.set_label(Location::mem_byte(addr + i), policy.source_label(i));
      break;
    }
    case PropKind::CmpObserve: {
      Label m1 = io.reads.empty() ? 0 : fold_meet(sh, policy, expand(io.reads[0]));
      Label m2 = io.reads.size() > 1 ? fold_meet(sh, policy, expand(io.reads[1])) : 0;
      if (observers && observers->cmp) observers->cmp(CmpObservation{abs, m1, m2});
      break;
    }
    case PropKind::None:
      break;
  }
}

void Engine::run_handler(RunState& rs, uint32_t abs, const Instruction& ins,
                         const InstrIo& io,
                         const std::array<uint32_t, kNumRegs>& entry_regs) {
  stats_->handler_invocations++;
  if (cfg_.handler_cost == HandlerCost::Call) stats_->context_switches++;
  apply_taint_handler(rs.shadow, policy_, rs.machine, ins, io, entry_regs, &hooks_, abs);
}

void Engine::handle_unsupported(const Instruction&, const InstrIo& io, ShadowState& shadow) {
  std::array<uint32_t, kNumRegs> zero_regs{};
  for (const ByteRange& r : io.writes)
    for (const Location& l : expand_range(r, zero_regs))
      if (l.kind == Location::Kind::RegByte) shadow.set_label(l, 0);
  if (stats_) {
    stats_->unsupported_untaints++;
    stats_->clean_calls++;
  }
}

void Engine::exec_subblock(RunState& rs, BlockRuntime& tab) {
  const SubBlock& sb = tab.sub;
  const std::array<uint32_t, kNumRegs> entry_regs = rs.machine.regs;
  const std::set<uint32_t>* set = nullptr;

  stats_->block_entries++;
  if (cfg_.mode == Mode::Full) {
    set = &tab.full_set;
    tab.exec_full++;
    stats_->exec_full++;
  } else if (sb.demoted) {
    if (any_declared_tainted(sb, rs.shadow, entry_regs)) {
      set = &tab.full_set;
      tab.exec_full++;
      stats_->exec_full++;
    } else {
      set = &tab.cases[0].instrument;
      tab.exec_none++;
      stats_->exec_none++;
    }
  } else {
    TaintCaseMask mask = encode_case_mask(sb, rs.shadow, entry_regs);
    DispatchResult d = dispatch_case(tab, mask);
    if (!d.miss) {
      set = d.instrument;
      switch (d.kind) {
        case VariantKind::None: tab.exec_none++; stats_->exec_none++; break;
        case VariantKind::Adaptive: tab.exec_adaptive++; stats_->exec_adaptive++; break;
        case VariantKind::Full: tab.exec_full++; stats_->exec_full++; break;
      }
    } else {
      set = &tab.full_set;
      tab.exec_full++;
      stats_->exec_full++;
      if (cfg_.mode == Mode::DynamicFp && tab.monitoring) {
        stats_->clean_calls++;  // the miss path is a transparent call
        MissOutcome out = on_miss(tab, mask, prog_, cfg_, opts_);
        if (out.generated) {
          stats_->fp_generated++;
          stats_->flushes++;  // the dispatch chain is rebuilt with the new case
        }
        if (out.reverted) stats_->reverts++;
      }
    }
  }

  HookCtx ctx{rs.shadow, rs.machine};
  for (uint32_t i = 0; i < sb.count; i++) {
    const uint32_t abs = sb.start + i;
    const Instruction& ins = prog_.code[abs];
    const InstrIo& io = sb.io[i];

    if (set->count(i)) run_handler(rs, abs, ins, io, entry_regs);

    if (hooks_.deref) {
      if (ins.op == Op::Copyn) {
        auto labels_of = [&](uint8_t r) {
          std::array<Label, 4> ls;
          for (uint8_t b = 0; b < 4; b++) ls[b] = rs.shadow.get_label(Location::reg_byte(r, b));
          return ls;
        };
        hooks_.deref(ctx, DerefEvent{abs, ins.a.reg, effective_address(rs.machine, ins.a),
                                     true, labels_of(ins.a.reg)});
        hooks_.deref(ctx, DerefEvent{abs, ins.b.reg, effective_address(rs.machine, ins.b),
                                     false, labels_of(ins.b.reg)});
      } else {
        for (const MemAccess& a : io.derefs) {
          std::array<Label, 4> ls;
          for (uint8_t b = 0; b < 4; b++)
            ls[b] = rs.shadow.get_label(Location::reg_byte(a.base, b));
          hooks_.deref(ctx, DerefEvent{abs, a.base,
                                       entry_regs[a.base] + static_cast<uint32_t>(a.disp),
                                       a.write, ls});
        }
      }
    }

    if (hooks_.indirect && op_class(ins.op) == OpClass::Indirect) {
      IndirectEvent ev{};
      ev.instr = abs;
      ev.op = ins.op;
      if (ins.op == Op::Ret) {
        uint32_t sp = rs.machine.regs[kStackReg];
        ev.target = rs.machine.load(sp, 4);
        for (uint8_t b = 0; b < 4; b++) {
          ev.locs[b] = Location::mem_byte(sp + b);
          ev.labels[b] = rs.shadow.get_label(ev.locs[b]);
        }
      } else {
        ev.target = rs.machine.regs[ins.a.reg];
        for (uint8_t b = 0; b < 4; b++) {
          ev.locs[b] = Location::reg_byte(ins.a.reg, b);
          ev.labels[b] = rs.shadow.get_label(ev.locs[b]);
        }
      }
      hooks_.indirect(ctx, ev);
    }

    uint32_t alloc_size = 0;
    if (ins.op == Op::Alloc)
      alloc_size = ins.b.kind == Operand::Kind::Imm ? ins.b.imm
                                                    : rs.machine.regs[ins.b.reg];
    Label free_label = 0;
    if (ins.op == Op::Free && hooks_.free_event) {
      std::vector<Location> locs;
      for (uint8_t b = 0; b < 4; b++) locs.push_back(Location::reg_byte(ins.a.reg, b));
      free_label = fold_meet(rs.shadow, policy_, locs);
    }

    StepResult sr = step(rs.machine, ins);

    if (ins.op == Op::Alloc && hooks_.alloc)
      hooks_.alloc(ctx, AllocEvent{abs, ins.a.reg, rs.machine.regs[ins.a.reg], alloc_size});
    if (ins.op == Op::Free && hooks_.free_event)
      hooks_.free_event(ctx, FreeEvent{abs, rs.machine.regs[ins.a.reg], free_label});

    if (sr.fault) {
      rs.faults.push_back(*sr.fault);
      if (hooks_.fault) hooks_.fault(*sr.fault);
    }

    stats_->steps++;
    if (--rs.budget == 0 && !rs.machine.halted) {
      rs.machine.halted = true;
      stats_->budget_exhausted = true;
    }
    if (rs.machine.halted) break;
  }
}

RunResult Engine::run(std::span<const uint8_t> input) {
  RunState rs;
  rs.machine = initial_state(prog_, input);
  rs.budget = std::max<uint64_t>(cfg_.step_budget, 1);

  ExecStats stats;
  stats_ = &stats;

  if (dynamic_cast<UafPolicy*>(&policy_)) {
    rs.shadow.on_retain = [p = &policy_](Label l) { p->retain(l); };
    rs.shadow.on_release = [p = &policy_](Label l) { p->release(l); };
  }
  if (cfg_.shadow_page_limit > 0) rs.shadow.set_page_limit(cfg_.shadow_page_limit);

  try {
    while (!rs.machine.halted && rs.machine.pc < prog_.code.size()) {
      BlockRuntime& tab = table_for(rs, rs.machine.pc);
      exec_subblock(rs, tab);
    }
  } catch (const ShadowResourceError&) {
    stats.resource_aborted = true;  // abort the run, keep partial stats
    rs.machine.halted = true;
  }

  stats.clean_calls += policy_.clean_call_events();

  for (const auto& [entry, tab] : rs.tables) {
    ExecStats::BlockRow row;
    row.entry = entry;
    row.size = tab.sub.count;
    row.declared = static_cast<uint32_t>(tab.sub.declared.size());
    row.instrumentable = tab.sub.count >= 2 && !tab.full_set.empty();
    row.exec_none = tab.exec_none;
    row.exec_adaptive = tab.exec_adaptive;
    row.exec_full = tab.exec_full;
    row.fp_generated = tab.generated;
    row.reverts = tab.reverts;
    row.avg_elided =
        tab.generated == 0 ? 0.0
                           : static_cast<double>(tab.sum_elided) / tab.generated;
    stats.blocks.push_back(row);
  }

  stats_ = nullptr;

  RunResult res;
  res.machine = std::move(rs.machine);
  res.shadow = std::move(rs.shadow);
  res.stats = std::move(stats);
  res.faults = std::move(rs.faults);
  return res;
}

}  // namespace taintvm
