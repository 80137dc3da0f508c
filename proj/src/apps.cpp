#include "taintvm/apps.hpp"

#include "json.hpp"

namespace taintvm {

using ordered_json = nlohmann::ordered_json;

const char* alarm_name(Alarm::Kind k) {
  switch (k) {
    case Alarm::Kind::Hijack: return "HIJACK";
    case Alarm::Kind::UafDeref: return "UAF-DEREF";
    case Alarm::Kind::UafFreeOfDangling: return "UAF-FREE-OF-DANGLING";
  }
  return "?";
}

namespace {

ordered_json location_json(const Location& l) {
  ordered_json j;
  if (l.kind == Location::Kind::RegByte) {
    j["reg"] = l.reg;
    j["byte"] = l.byte;
  } else {
    j["addr"] = l.addr;
  }
  return j;
}

}  // namespace

std::string alarms_json_lines(const std::vector<Alarm>& alarms) {
  std::string out;
  for (const Alarm& a : alarms) {
    ordered_json j;
    j["kind"] = alarm_name(a.kind);
    j["instr"] = a.instr;
    ordered_json locs = ordered_json::array();
    for (const Location& l : a.locations) locs.push_back(location_json(l));
    j["locations"] = std::move(locs);
    if (a.kind != Alarm::Kind::Hijack) {
      j["creation_site"] = a.creation_site;
    } else {
      j["target"] = a.target;
      j["tainted_bytes"] = a.tainted_bytes;
    }
    out += j.dump() + "\n";
  }
  return out;
}

void HijackMonitor::attach(RunHooks& hooks) {
  hooks.indirect = [this](HookCtx&, const IndirectEvent& ev) {
    Alarm a;
    a.kind = Alarm::Kind::Hijack;
    a.instr = ev.instr;
    a.target = ev.target;
    for (uint8_t b = 0; b < 4; b++) {
      if (ev.labels[b] == 0) continue;
      a.tainted_bytes.push_back(b);
      a.locations.push_back(ev.locs[b]);
    }
    if (!a.tainted_bytes.empty()) alarms_.push_back(std::move(a));
  };
}

void UafMonitor::attach(RunHooks& hooks) {
  hooks.alloc = [this](HookCtx& ctx, const AllocEvent& ev) {
    Label l = policy_.mint_live(ev.instr);
    for (uint8_t b = 0; b < 4; b++)
      ctx.shadow.set_label(Location::reg_byte(ev.dst_reg, b), l);
  };
  hooks.free_event = [this](HookCtx&, const FreeEvent& ev) {
    if (!policy_.valid(ev.ptr_label)) return;  // untainted operand: fault only
    if (policy_.status(ev.ptr_label) == UafPolicy::Status::Dangling) {
      Alarm a;
      a.kind = Alarm::Kind::UafFreeOfDangling;
      a.instr = ev.instr;
      a.creation_site = policy_.creation_site(ev.ptr_label);
      alarms_.push_back(std::move(a));
    } else {
      policy_.set_dangling(ev.ptr_label);
    }
  };
  hooks.deref = [this](HookCtx&, const DerefEvent& ev) {
    for (uint8_t b = 0; b < 4; b++) {
      Label l = ev.base_labels[b];
      if (!policy_.valid(l) || policy_.status(l) != UafPolicy::Status::Dangling) continue;
      Alarm a;
      a.kind = Alarm::Kind::UafDeref;
      a.instr = ev.instr;
      a.creation_site = policy_.creation_site(l);
      a.locations.push_back(Location::reg_byte(ev.base_reg, b));
      alarms_.push_back(std::move(a));
      return;  // one alarm per dereference
    }
  };
}

void FuzzOffsets::attach(RunHooks& hooks) {
  hooks.cmp = [this](const CmpObservation& ob) {
    BdtStore::NodeId u = policy_.store().union_sets(ob.m1, ob.m2);
    if (u == 0) return;
    auto [it, fresh] = acc_.emplace(ob.instr, u);
    if (!fresh) it->second = policy_.store().union_sets(it->second, u);
  };
  hooks.addr = [this](const AddrObservation& ob) {
    if (ob.m == 0) return;
    auto [it, fresh] = acc_.emplace(ob.instr, ob.m);
    if (!fresh) it->second = policy_.store().union_sets(it->second, ob.m);
  };
}

OffsetReport FuzzOffsets::report() const {
  OffsetReport rep;
  for (const auto& [site, node] : acc_) rep[site] = policy_.store().elements(node);
  return rep;
}

std::string offset_report_json(const OffsetReport& rep) {
  ordered_json j = ordered_json::object();
  for (const auto& [site, offsets] : rep) j[std::to_string(site)] = offsets;
  return j.dump(2) + "\n";
}

}  // namespace taintvm
