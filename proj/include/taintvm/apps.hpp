#pragma once

#include <map>
#include <vector>

#include "taintvm/engine.hpp"

namespace taintvm {

struct Alarm {
  enum class Kind : uint8_t { Hijack, UafDeref, UafFreeOfDangling };
  Kind kind;
  uint32_t instr = 0;
  std::vector<Location> locations;      // offending bytes
  uint32_t creation_site = 0;           // uaf: where the pointer was allocated
  uint32_t target = 0;                  // hijack: the tainted transfer target
  std::vector<uint8_t> tainted_bytes;   // hijack: which target bytes were tainted
};

const char* alarm_name(Alarm::Kind k);
std::string alarms_json_lines(const std::vector<Alarm>& alarms);

// Control-flow-hijack detection over the bitwise policy: any indirect jump,
// call or return whose target value carries taint raises an alarm. Reporting
// only; execution continues.
class HijackMonitor {
 public:
  void attach(RunHooks& hooks);
  const std::vector<Alarm>& alarms() const { return alarms_; }

 private:
  std::vector<Alarm> alarms_;
};

// Use-after-free debugging over the uaf policy. Every allocation taints the
// destination register's bytes with a fresh shared LIVE record; freeing flips
// the record to DANGLING in place so all copies observe it. Dereferencing
// through a register holding a DANGLING label, or freeing one, alarms.
class UafMonitor {
 public:
  explicit UafMonitor(UafPolicy& policy) : policy_(policy) {}
  void attach(RunHooks& hooks);
  const std::vector<Alarm>& alarms() const { return alarms_; }

 private:
  UafPolicy& policy_;
  std::vector<Alarm> alarms_;
};

// site (cmp or lea instruction index) -> input byte offsets that influenced it
using OffsetReport = std::map<uint32_t, std::vector<uint32_t>>;

// Fuzz input-offset extraction over the bv policy: accumulates, per cmp/lea
// site, the union of the offset sets carried by the operands' bytes.
class FuzzOffsets {
 public:
  explicit FuzzOffsets(BvPolicy& policy) : policy_(policy) {}
  void attach(RunHooks& hooks);
  OffsetReport report() const;

 private:
  BvPolicy& policy_;
  std::map<uint32_t, BdtStore::NodeId> acc_;
};

std::string offset_report_json(const OffsetReport& rep);

}  // namespace taintvm
