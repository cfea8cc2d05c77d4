#ifndef DIVEX_ISA_HPP
#define DIVEX_ISA_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace divex::isa {

using Word = std::uint32_t;
using Addr = std::uint32_t;

constexpr unsigned kInstrWidth = 4;   // bytes per instruction
constexpr unsigned kWordSize = 4;     // bytes per data word
constexpr unsigned kNumRegs = 16;
constexpr unsigned kSpReg = 15;       // stack pointer register

// Field widths that feed the per-step value-coincidence bound.
struct IsaConstants {
  unsigned opcode_bits = 8;
  unsigned reg_field_bits = 4;
  unsigned num_reg_fields = 3;
  unsigned value_bits = 32;
  unsigned instr_width = kInstrWidth;
  unsigned word_size = kWordSize;
};

// Exact power of two 2^-neg_exp, kept symbolic so callers can do exact
// arithmetic without floats.
struct PowerOfTwoBound {
  unsigned neg_exp = 0;
  double approx() const { return neg_exp >= 1024 ? 0.0 : std::pow(2.0, -double(neg_exp)); }
};

// Probability that two independently drawn records coincide in opcode,
// register ids and result value: 2^-(b_op + n*b_reg + b_val).
PowerOfTwoBound epsilon_bound(const IsaConstants& c);

enum class Opcode : std::uint8_t {
  NOP = 0x00,
  HALT = 0x01,
  ADD = 0x10,
  SUB = 0x11,
  AND = 0x12,
  OR = 0x13,
  XOR = 0x14,
  SHL = 0x15,
  SHR = 0x16,
  CMP = 0x17,
  LDI = 0x20,
  LOAD = 0x21,
  STORE = 0x22,
  BEQ = 0x30,
  BNE = 0x31,
  BLT = 0x32,
  BGE = 0x33,
  JMP = 0x40,
  CALL = 0x41,
  RET = 0x42,
};

enum class InstrKind { Alu, Load, Store, Branch, Jump, Call, Ret, Nop, Halt };

enum class Condition : std::uint8_t { None = 0, Eq = 1, Ne = 2, Lt = 3, Ge = 4 };

struct OpcodeInfo {
  Opcode op;
  const char* mnemonic;
  InstrKind kind;
  Condition cond;  // branches only
};

// The full opcode table; order is the documentation order.
const std::vector<OpcodeInfo>& opcode_table();
const OpcodeInfo* opcode_info(Opcode op);
const OpcodeInfo* opcode_info(std::string_view mnemonic);
bool opcode_assigned(std::uint8_t code);

struct Instruction {
  Opcode opcode = Opcode::NOP;
  std::optional<unsigned> dst;    // 0..15
  std::optional<unsigned> src1;
  std::optional<unsigned> src2;
  std::optional<std::int32_t> immediate;     // LDI: 20-bit signed payload
  std::optional<std::int32_t> displacement;  // branches/JMP/CALL: byte offset, 24-bit signed

  InstrKind kind() const;
  Condition condition() const;
  bool operator==(const Instruction&) const = default;
};

// Convenience constructors.
Instruction make_nop();
Instruction make_halt();
Instruction make_alu(Opcode op, unsigned dst, unsigned src1, unsigned src2);
Instruction make_cmp(unsigned src1, unsigned src2);
Instruction make_ldi(unsigned dst, std::int32_t imm);
Instruction make_load(unsigned dst, unsigned addr_reg);
Instruction make_store(unsigned addr_reg, unsigned value_reg);
Instruction make_branch(Opcode op, std::int32_t disp);

struct EncodeError {
  std::string message;
};

// Deterministic 4-byte encoding; layout documented by render_isa_reference().
// Fails on malformed operand combinations or out-of-range fields.
std::optional<Word> encode(const Instruction& instr, EncodeError* err = nullptr);

// Total decode: invalid encodings and unaligned fetches yield nullopt rather
// than aborting, so faults landing mid-instruction or in data stay modelable.
std::optional<Instruction> decode(Word word, bool alignment_ok = true);

constexpr std::int32_t kImmMin = -(1 << 19);
constexpr std::int32_t kImmMax = (1 << 19) - 1;
constexpr std::int32_t kDispMin = -(1 << 23);
constexpr std::int32_t kDispMax = (1 << 23) - 1;

// Markdown reference: opcode table, bit layouts, canonical record layout.
// The emitted bit-layout table is the normative encoding contract.
std::string render_isa_reference();

}  // namespace divex::isa

#endif
