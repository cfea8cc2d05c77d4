#ifndef DIVEX_CANONICAL_HPP
#define DIVEX_CANONICAL_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "divex/machine.hpp"

namespace divex::canonical {

constexpr std::uint8_t kNoReg = 0xFF;
constexpr std::uint8_t kTrapOpcode = 0xFF;

// Layout-free projection of one executed instruction. Contains no program
// counter, effective address or displacement; see the ISA reference for the
// normative 29-byte serialization.
struct CanonicalRecord {
  std::uint8_t opcode = 0;
  std::uint8_t cond = 0;
  std::uint8_t dst = kNoReg, src1 = kNoReg, src2 = kNoReg;
  std::uint8_t imm_tag = 0;  // 0 none, 1 value, 2 data-object ordinal
  std::uint32_t imm = 0;
  std::uint8_t loaded_tag = 0;
  std::uint32_t loaded = 0;
  std::uint8_t result_tag = 0;
  std::uint32_t result = 0;
  std::uint8_t stored_tag = 0;
  std::uint32_t stored = 0;
  std::uint8_t branch_tag = 0;
  std::uint8_t taken = 0;
  std::uint8_t trap_tag = 0;
  std::uint8_t trap_cause = 0;

  bool operator==(const CanonicalRecord&) const = default;
  std::array<std::uint8_t, 29> serialize() const;
  std::string to_string() const;
};

// None for transparent events (layout NOPs and stitch jumps).
std::optional<CanonicalRecord> canonicalize(const machine::StepEvent& e);

// FNV-1a 64 over the canonical serialization.
std::uint64_t record_hash(const CanonicalRecord& r);
std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull);

// Static projection used by the layout scan and the bound computation: the
// value-independent record prefix (opcode, condition, registers, masked
// immediate) of an instruction as it sits in the image.
std::array<std::uint8_t, 10> static_projection(const isa::Instruction& instr,
                                               std::optional<std::uint32_t> masked_ordinal);

struct CanonicalTrace {
  std::vector<CanonicalRecord> records;
  std::uint64_t running_digest = 0xcbf29ce484222325ull;

  void append(const CanonicalRecord& r);
  std::size_t size() const { return records.size(); }
  bool operator==(const CanonicalTrace& o) const { return records == o.records; }
};

}  // namespace divex::canonical

#endif
