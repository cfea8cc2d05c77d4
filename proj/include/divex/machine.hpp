#ifndef DIVEX_MACHINE_HPP
#define DIVEX_MACHINE_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "divex/isa.hpp"
#include "divex/layout.hpp"

namespace divex::machine {

enum class TrapCause : std::uint8_t {
  None = 0,
  InvalidOpcode = 1,
  UnalignedFetch = 2,
  FetchOutOfRegion = 3,
  LoadUnaligned = 4,
  LoadOutOfRegion = 5,
  StoreUnaligned = 6,
  StoreOutOfRegion = 7,
};

const char* trap_name(TrapCause c);

struct MemRegion {
  std::uint32_t base = 0;
  std::vector<std::uint8_t> bytes;
  bool contains(std::uint32_t a) const { return a >= base && a - base < bytes.size(); }
};

struct ReplicaState {
  std::uint32_t replica = 0;
  std::uint32_t pc = 0;
  std::array<std::uint32_t, isa::kNumRegs> regs{};
  bool flag_eq = false, flag_lt = false;
  std::vector<MemRegion> mem;
  bool halted = false;
  TrapCause trap = TrapCause::None;
  // Address-valued data is replica-specific by construction; the taint marks
  // what canonicalization must mask. Seeded by &object immediates and the
  // stack pointer, propagated through arithmetic, memory words and the
  // return-address slots written by call.
  std::uint32_t reg_taint = 0;  // bit per register
  std::set<std::uint32_t> mem_taint;

  std::optional<std::uint32_t> read_word(std::uint32_t addr) const;
  bool write_word(std::uint32_t addr, std::uint32_t value);
  bool mapped(std::uint32_t addr) const;
  bool tainted(unsigned reg) const { return reg_taint >> reg & 1; }
  void set_taint(unsigned reg, bool on) {
    reg_taint = on ? reg_taint | (1u << reg) : reg_taint & ~(1u << reg);
  }
};

// One event per executed physical instruction (including layout NOPs and
// stitch jumps, which are flagged transparent and never canonicalized).
struct StepEvent {
  std::uint32_t replica = 0;
  std::uint32_t pc_before = 0;
  std::optional<isa::Instruction> instr;
  isa::InstrKind kind = isa::InstrKind::Nop;
  std::optional<std::uint32_t> effective_address;  // load/store data access
  std::optional<std::uint32_t> stack_address;      // call push / ret pop slot
  std::optional<std::uint32_t> loaded_value;
  std::optional<std::uint32_t> stored_value;
  std::optional<std::uint32_t> computed_result;
  std::optional<bool> branch_taken;
  std::optional<std::uint32_t> addr_imm_ordinal;  // set at ldi &object sites
  bool result_is_addr = false;  // value fields that carry addresses are
  bool loaded_is_addr = false;  // masked out of the canonical record
  bool stored_is_addr = false;
  bool is_transparent = false;
  bool halted_normally = false;
  TrapCause trap = TrapCause::None;
};

// Architectural state mutation applied between slices; origin-agnostic.
struct Mutation {
  enum class Kind { PcDelta, PcSet, RegSet, RegBitflip, MemSet, MemBitflip, RegCopy };
  Kind kind = Kind::PcDelta;
  std::int64_t delta = 0;       // PcDelta
  std::uint32_t addr = 0;       // PcSet, MemSet, MemBitflip
  std::uint32_t value = 0;      // RegSet, MemSet
  unsigned reg = 0;             // RegSet, RegBitflip, RegCopy dst
  unsigned src_reg = 0;         // RegCopy
  unsigned bit = 0;             // bitflips

  bool operator==(const Mutation&) const = default;
};

ReplicaState reset(const layout::ReplicaImage& img, const std::vector<layout::Region>& shared);

// Executes exactly one instruction; traps halt the replica and surface as
// events rather than aborting.
StepEvent step(ReplicaState& st, const layout::ReplicaImage& img);

// Returns false when a memory mutation names an unmapped address.
bool apply_mutation(ReplicaState& st, const Mutation& m);

}  // namespace divex::machine

#endif
