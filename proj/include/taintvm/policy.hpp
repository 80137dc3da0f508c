#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "taintvm/bdt.hpp"
#include "taintvm/shadow.hpp"

namespace taintvm {

struct PolicyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The three user-defined taint primitives plus taint-source seeding. meet
// combines the labels of two bytes found within one source operand; srcsrcdst
// combines bytes stemming from different sources. Primitives may be stateful,
// so the engine invokes them once per destination byte in ascending order.
class TaintPrimitives {
 public:
  virtual ~TaintPrimitives() = default;
  virtual Label src_dst(Label s) = 0;
  virtual Label src_src_dst(Label s1, Label s2) = 0;
  virtual Label meet(Label a, Label b) = 0;

  // initial label for input byte `offset` at a taint source
  virtual Label source_label(uint32_t offset) = 0;

  virtual void retain(Label) {}
  virtual void release(Label) {}

  // policy-side slow-path events (e.g. fresh node allocations)
  virtual uint64_t clean_call_events() const { return 0; }
};

enum class PropMode : uint8_t { Coupled, Independent };

// One-source propagation: coupled meet-folds the source bytes and assigns
// src_dst of the fold to every destination byte; independent maps byte i of
// the source to byte i of the destination.
void propagate_unary(ShadowState& shadow, TaintPrimitives& policy,
                     std::span<const Location> dst, std::span<const Location> src,
                     PropMode mode);

// Two-source propagation: coupled meet-folds each source separately, then
// assigns src_src_dst(fold1, fold2) per destination byte; independent pairs
// bytes positionally.
void propagate_binary(ShadowState& shadow, TaintPrimitives& policy,
                      std::span<const Location> dst, std::span<const Location> src1,
                      std::span<const Location> src2, PropMode mode);

// meet-fold of a byte list, seeded with NO-TAINT
Label fold_meet(const ShadowState& shadow, TaintPrimitives& policy,
                std::span<const Location> locs);

// ---------------------------------------------------------------------------
// Built-in policies
// ---------------------------------------------------------------------------

// Flag tainting: labels are OR-merged tags.
class BitwisePolicy final : public TaintPrimitives {
 public:
  Label src_dst(Label s) override { return s; }
  Label src_src_dst(Label s1, Label s2) override { return s1 | s2; }
  Label meet(Label a, Label b) override { return a | b; }
  Label source_label(uint32_t) override { return 1; }
};

// Fresh-ID tainting: every propagation of a tainted source mints a new id.
class IdPolicy final : public TaintPrimitives {
 public:
  Label src_dst(Label s) override { return s ? fresh_id() : 0; }
  Label src_src_dst(Label s1, Label s2) override { return (s1 | s2) ? fresh_id() : 0; }
  Label meet(Label a, Label b) override {
    if (a && b) return std::min(a, b);
    return a ? a : b;
  }
  Label source_label(uint32_t) override { return fresh_id(); }

  Label fresh_id();
  uint32_t counter() const { return counter_; }
  void set_counter(uint32_t c) { counter_ = c; }

 private:
  uint32_t counter_ = 0;
};

// Bit-vector tainting: labels are handles into a shared reduced-tree store of
// input offset sets; merging is set union.
class BvPolicy final : public TaintPrimitives {
 public:
  Label src_dst(Label s) override { return s; }
  Label src_src_dst(Label s1, Label s2) override { return store_.union_sets(s1, s2); }
  Label meet(Label a, Label b) override { return store_.union_sets(a, b); }
  Label source_label(uint32_t offset) override { return store_.singleton(offset); }
  uint64_t clean_call_events() const override { return store_.nodes_allocated(); }

  BdtStore& store() { return store_; }
  const BdtStore& store() const { return store_; }

 private:
  BdtStore store_;
};

// Pointer tracking: labels are handles to shared, reference-counted records
// carrying a LIVE/DANGLING status and the creation site. A freed record flips
// to DANGLING in place, so every copy of the pointer observes it.
class UafPolicy final : public TaintPrimitives {
 public:
  enum class Status : uint8_t { Live, Dangling };

  Label src_dst(Label s) override { return s; }
  Label src_src_dst(Label s1, Label s2) override {
    if (s1 == 0 && s2 == 0) return 0;
    if (s1 != 0 && s2 != 0) return 0;  // pointer +/- pointer is not a pointer
    return s1 ? s1 : s2;
  }
  Label meet(Label a, Label b) override;
  Label source_label(uint32_t) override { return 0; }  // input bytes are not pointers
  void retain(Label l) override;
  void release(Label l) override;

  Label mint_live(uint32_t creation_site);
  bool valid(Label l) const { return l >= 1 && l <= records_.size(); }
  Status status(Label l) const;
  void set_dangling(Label l);
  uint32_t creation_site(Label l) const;
  int64_t refcount(Label l) const;

 private:
  struct Record {
    uint32_t creation_site;
    Status status;
    int64_t refcount;
  };
  std::vector<Record> records_;
};

// Policy selection names for the CLI: bitwise, id, bv, uaf.
std::unique_ptr<TaintPrimitives> make_policy(const std::string& name);

}  // namespace taintvm
