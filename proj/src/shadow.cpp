#include "taintvm/shadow.hpp"

#include <sstream>

namespace taintvm {

Label ShadowState::get_label(const Location& loc) const {
  if (loc.kind == Location::Kind::RegByte) return regs_[loc.reg][loc.byte];
  auto it = pages_.find(loc.addr & kPageMask);
  if (it == pages_.end()) return 0;
  return it->second[loc.addr & (kPageSize - 1)];
}

ShadowState::Page& ShadowState::page_for(uint32_t addr) {
  uint32_t base = addr & kPageMask;
  auto it = pages_.find(base);
  if (it != pages_.end()) return it->second;
  if (pages_.size() >= page_limit_) {
    collect_garbage();
    if (pages_.size() >= page_limit_) throw ShadowResourceError();
  }
  return pages_.emplace(base, Page{}).first->second;
}

void ShadowState::write_slot(Label& slot, Label l) {
  if (slot == l) return;
  if (on_retain && l) on_retain(l);
  if (on_release && slot) on_release(slot);
  slot = l;
}

void ShadowState::set_label(const Location& loc, Label l) {
  if (loc.kind == Location::Kind::RegByte) {
    write_slot(regs_[loc.reg][loc.byte], l);
    bool any = false;
    for (Label b : regs_[loc.reg]) any = any || b != 0;
    if (any)
      status_ |= static_cast<uint16_t>(1u << loc.reg);
    else
      status_ &= static_cast<uint16_t>(~(1u << loc.reg));
    return;
  }
  if (l == 0 && !pages_.count(loc.addr & kPageMask)) return;  // zero write elides allocation
  write_slot(page_for(loc.addr)[loc.addr & (kPageSize - 1)], l);
}

bool ShadowState::region_tainted(uint32_t addr, uint32_t len) const {
  uint64_t end = static_cast<uint64_t>(addr) + len;
  uint64_t a = addr;
  while (a < end) {
    uint32_t base = static_cast<uint32_t>(a) & kPageMask;
    uint64_t page_end = static_cast<uint64_t>(base) + kPageSize;
    auto it = pages_.find(base);
    if (it == pages_.end()) {
      a = page_end;
      continue;
    }
    uint64_t stop = std::min(end, page_end);
    for (uint64_t p = a; p < stop; p++)
      if (it->second[p & (kPageSize - 1)] != 0) return true;
    a = stop;
  }
  return false;
}

uint32_t ShadowState::reg_case_bits(std::span<const uint8_t> regs) const {
  if (regs.size() > kNumRegs) throw std::logic_error("reg_case_bits: list too long");
  uint32_t seen = 0, out = 0;
  for (size_t i = 0; i < regs.size(); i++) {
    uint8_t r = regs[i];
    if (seen & (1u << r)) throw std::logic_error("reg_case_bits: duplicate register");
    seen |= 1u << r;
    if (status_ & (1u << r)) out |= 1u << i;
  }
  return out;
}

size_t ShadowState::collect_garbage() {
  size_t freed = 0;
  for (auto it = pages_.begin(); it != pages_.end();) {
    bool any = false;
    for (Label l : it->second) any = any || l != 0;
    if (!any) {
      it = pages_.erase(it);
      freed++;
    } else {
      ++it;
    }
  }
  return freed;
}

std::string ShadowState::dump() const {
  std::ostringstream os;
  char buf[48];
  for (const auto& [base, page] : pages_) {
    for (uint32_t i = 0; i < kPageSize; i++) {
      if (page[i] == 0) continue;
      snprintf(buf, sizeof buf, "mem 0x%08x %08x\n", base + i, page[i]);
      os << buf;
    }
  }
  for (unsigned r = 0; r < kNumRegs; r++) {
    for (unsigned b = 0; b < kRegBytes; b++) {
      if (regs_[r][b] == 0) continue;
      snprintf(buf, sizeof buf, "reg r%u b%u %08x\n", r, b, regs_[r][b]);
      os << buf;
    }
  }
  return os.str();
}

}  // namespace taintvm
