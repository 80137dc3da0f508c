#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>

#include "taintvm/isa.hpp"

namespace taintvm {

// 32-bit taint tag per byte; 0 means "no taint". Nonzero values belong to the
// active policy (a raw tag or a handle into a policy label store).
using Label = uint32_t;

inline constexpr uint32_t kPageSize = 4096;
inline constexpr uint32_t kPageMask = ~(kPageSize - 1);

struct ShadowResourceError : std::runtime_error {
  ShadowResourceError() : std::runtime_error("shadow memory page limit exceeded") {}
};

// Byte-granular label store for guest memory and registers. Memory shadow is
// allocated page-by-page on the first nonzero write; a per-register status bit
// over-approximates "any byte of this register is tainted".
class ShadowState {
 public:
  Label get_label(const Location& loc) const;
  void set_label(const Location& loc, Label l);

  // true iff any label in [addr, addr+len) is nonzero; unallocated pages are
  // skipped wholesale.
  bool region_tainted(uint32_t addr, uint32_t len) const;

  // Packs the status bits of the listed registers into the low bits of the
  // result, in list order. Duplicate registers are a contract violation.
  uint32_t reg_case_bits(std::span<const uint8_t> regs) const;

  // Deallocates every page whose labels are all zero; observable labels are
  // unchanged. Returns the number of pages freed.
  size_t collect_garbage();

  uint16_t status_bits() const { return status_; }
  size_t page_count() const { return pages_.size(); }
  void set_page_limit(size_t n) { page_limit_ = n; }

  // "mem 0xADDR LABELHEX" then "reg rN bK LABELHEX" lines, nonzero only, sorted.
  std::string dump() const;

  // Overwrite notifications for reference-counted label stores.
  std::function<void(Label)> on_retain;
  std::function<void(Label)> on_release;

 private:
  using Page = std::array<Label, kPageSize>;
  std::map<uint32_t, Page> pages_;
  std::array<std::array<Label, kRegBytes>, kNumRegs> regs_{};
  uint16_t status_ = 0;
  size_t page_limit_ = SIZE_MAX;

  Page& page_for(uint32_t addr);
  void write_slot(Label& slot, Label l);
};

}  // namespace taintvm
