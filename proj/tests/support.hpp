#pragma once

#include <random>
#include <string>

#include "taintvm/apps.hpp"
#include "taintvm/cli.hpp"
#include "taintvm/engine.hpp"

namespace taintvm::test {

// Seed for all randomized corpora; override with the TR_SEED env var.
uint64_t harness_seed();

// ---------------------------------------------------------------------------
// Random program generation
// ---------------------------------------------------------------------------

struct GenOptions {
  int body = 25;              // approximate body instruction budget
  bool loops = true;
  bool heap = false;
  bool copyn = false;
  bool use_input = true;
  uint32_t input_len = 8;
  bool mutate_bases = false;  // body may disturb base registers (forces truncation)
  int pool_regs = 4;          // data registers r0..r(pool-1), max 4
  int disp_slots = 16;        // distinct 4-byte memory slots per base register
  bool width_variety = true;
  int max_loop_iters = 6;
};

// Emits assembly text. Control flow only ever depends on the clean scratch
// register and loop counters, so flipping input bytes never changes the path.
std::string gen_program(std::mt19937& rng, const GenOptions& opt);

std::vector<uint8_t> gen_input(std::mt19937& rng, uint32_t len);

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

// Concrete-execution io oracle: runs the prefix on a live machine and records
// byte-level first accesses directly from instruction semantics (addresses
// from live register values, not from constant propagation).
IoSets trace_io(std::span<const Instruction> prefix, MachineState m);

// Concrete value sequences observed at cmp sites (both operand values) and
// lea sites (the computed address), keyed by instruction index.
using SiteValues = std::map<uint32_t, std::vector<uint64_t>>;
SiteValues trace_site_values(const Program& prog, std::span<const uint8_t> input,
                             uint64_t max_steps = 200000);

// Flip-byte influence oracle: offset k influences a site iff flipping input
// byte k changes the value sequence observed there.
std::map<uint32_t, std::set<uint32_t>> flip_byte_influence(
    const Program& prog, std::span<const uint8_t> input, uint64_t max_steps = 200000);

// ---------------------------------------------------------------------------
// Forced-set block execution (elision soundness oracle support)
// ---------------------------------------------------------------------------

// Executes a sub-block with concrete semantics, running taint handlers only
// for the given block-relative indices. Mirrors the per-allocation tainting of
// the uaf app when the policy is uaf.
void run_block_with_set(const Program& prog, const SubBlock& sb, MachineState& m,
                        ShadowState& shadow, TaintPrimitives& policy,
                        const std::set<uint32_t>& set);

// Writes policy-appropriate nonzero labels so that exactly the operands named
// by `mask` are tainted (aliasing may set extra bits; re-encode afterwards).
void taint_operands(const SubBlock& sb, uint32_t mask, ShadowState& shadow,
                    TaintPrimitives& policy,
                    const std::array<uint32_t, kNumRegs>& entry_regs, std::mt19937& rng);

// ---------------------------------------------------------------------------
// Crafted corpora for the app criteria
// ---------------------------------------------------------------------------

struct CraftedCase {
  std::string name;
  std::string text;
  std::vector<uint8_t> input;
  bool buggy = false;                 // expects >= 1 alarm
  std::vector<uint32_t> creation_sites;  // uaf: expected sites (subset check)
};

std::vector<CraftedCase> uaf_cases();     // 8 buggy + 2 benign
std::vector<CraftedCase> hijack_cases();  // 2 tainted-control + 4 benign

// Loop corpus: hot loops with a stable, partially tainted entry case where a
// fixed fraction of each block's handlers is elidable.
struct LoopProgram {
  std::string text;
  std::vector<uint8_t> input;
};
LoopProgram loop_program(std::mt19937& rng, int iterations, int phases = 1);

// A block whose two memory operands are disjoint during warm-up and alias at
// a later entry with the identical taint case: the worst case for reusing a
// generated variant, used to pin the dataflow's aliasing conservatism.
std::string aliasing_reuse_program();

}  // namespace taintvm::test
