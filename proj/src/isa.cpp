#include "divex/isa.hpp"

#include <array>
#include <sstream>

namespace divex::isa {

PowerOfTwoBound epsilon_bound(const IsaConstants& c) {
  return PowerOfTwoBound{c.opcode_bits + c.num_reg_fields * c.reg_field_bits + c.value_bits};
}

const std::vector<OpcodeInfo>& opcode_table() {
  static const std::vector<OpcodeInfo> table = {
      {Opcode::NOP, "nop", InstrKind::Nop, Condition::None},
      {Opcode::HALT, "halt", InstrKind::Halt, Condition::None},
      {Opcode::ADD, "add", InstrKind::Alu, Condition::None},
      {Opcode::SUB, "sub", InstrKind::Alu, Condition::None},
      {Opcode::AND, "and", InstrKind::Alu, Condition::None},
      {Opcode::OR, "or", InstrKind::Alu, Condition::None},
      {Opcode::XOR, "xor", InstrKind::Alu, Condition::None},
      {Opcode::SHL, "shl", InstrKind::Alu, Condition::None},
      {Opcode::SHR, "shr", InstrKind::Alu, Condition::None},
      {Opcode::CMP, "cmp", InstrKind::Alu, Condition::None},
      {Opcode::LDI, "ldi", InstrKind::Alu, Condition::None},
      {Opcode::LOAD, "load", InstrKind::Load, Condition::None},
      {Opcode::STORE, "store", InstrKind::Store, Condition::None},
      {Opcode::BEQ, "beq", InstrKind::Branch, Condition::Eq},
      {Opcode::BNE, "bne", InstrKind::Branch, Condition::Ne},
      {Opcode::BLT, "blt", InstrKind::Branch, Condition::Lt},
      {Opcode::BGE, "bge", InstrKind::Branch, Condition::Ge},
      {Opcode::JMP, "jmp", InstrKind::Jump, Condition::None},
      {Opcode::CALL, "call", InstrKind::Call, Condition::None},
      {Opcode::RET, "ret", InstrKind::Ret, Condition::None},
  };
  return table;
}

const OpcodeInfo* opcode_info(Opcode op) {
  for (const auto& e : opcode_table())
    if (e.op == op) return &e;
  return nullptr;
}

const OpcodeInfo* opcode_info(std::string_view mnemonic) {
  for (const auto& e : opcode_table())
    if (mnemonic == e.mnemonic) return &e;
  return nullptr;
}

bool opcode_assigned(std::uint8_t code) {
  for (const auto& e : opcode_table())
    if (static_cast<std::uint8_t>(e.op) == code) return true;
  return false;
}

InstrKind Instruction::kind() const {
  const OpcodeInfo* info = opcode_info(opcode);
  return info ? info->kind : InstrKind::Nop;
}

Condition Instruction::condition() const {
  const OpcodeInfo* info = opcode_info(opcode);
  return info ? info->cond : Condition::None;
}

Instruction make_nop() { return Instruction{}; }

Instruction make_halt() {
  Instruction i;
  i.opcode = Opcode::HALT;
  return i;
}

Instruction make_alu(Opcode op, unsigned dst, unsigned src1, unsigned src2) {
  Instruction i;
  i.opcode = op;
  i.dst = dst;
  i.src1 = src1;
  i.src2 = src2;
  return i;
}

Instruction make_cmp(unsigned src1, unsigned src2) {
  Instruction i;
  i.opcode = Opcode::CMP;
  i.src1 = src1;
  i.src2 = src2;
  return i;
}

Instruction make_ldi(unsigned dst, std::int32_t imm) {
  Instruction i;
  i.opcode = Opcode::LDI;
  i.dst = dst;
  i.immediate = imm;
  return i;
}

Instruction make_load(unsigned dst, unsigned addr_reg) {
  Instruction i;
  i.opcode = Opcode::LOAD;
  i.dst = dst;
  i.src1 = addr_reg;
  return i;
}

Instruction make_store(unsigned addr_reg, unsigned value_reg) {
  Instruction i;
  i.opcode = Opcode::STORE;
  i.src1 = addr_reg;
  i.src2 = value_reg;
  return i;
}

Instruction make_branch(Opcode op, std::int32_t disp) {
  Instruction i;
  i.opcode = op;
  i.displacement = disp;
  return i;
}

namespace {

bool reg_ok(const std::optional<unsigned>& r) { return r && *r < kNumRegs; }

// Word layout, bits 31..0:
//   [31:24] opcode
//   R-format (alu):       [23:20] dst, [19:16] src1, [15:12] src2, [11:0] zero
//   CMP/STORE:            [23:20] zero, [19:16] src1, [15:12] src2, [11:0] zero
//   LOAD:                 [23:20] dst, [19:16] src1, [15:0] zero
//   LDI:                  [23:20] dst, [19:0] imm20 (signed)
//   B-format (bcc/jmp/call): [23:0] disp24 (signed, bytes)
//   NOP/HALT/RET:         [23:0] zero
Word pack(std::uint8_t op, Word rest) { return (Word(op) << 24) | (rest & 0x00FFFFFFu); }

std::optional<Word> fail(EncodeError* err, std::string msg) {
  if (err) err->message = std::move(msg);
  return std::nullopt;
}

}  // namespace

std::optional<Word> encode(const Instruction& instr, EncodeError* err) {
  const OpcodeInfo* info = opcode_info(instr.opcode);
  if (!info) return fail(err, "unassigned opcode");
  const std::uint8_t op = static_cast<std::uint8_t>(instr.opcode);
  switch (instr.opcode) {
    case Opcode::NOP:
    case Opcode::HALT:
    case Opcode::RET:
      if (instr.dst || instr.src1 || instr.src2 || instr.immediate || instr.displacement)
        return fail(err, "operands not allowed");
      return pack(op, 0);
    case Opcode::ADD:
    case Opcode::SUB:
    case Opcode::AND:
    case Opcode::OR:
    case Opcode::XOR:
    case Opcode::SHL:
    case Opcode::SHR:
      if (!reg_ok(instr.dst) || !reg_ok(instr.src1) || !reg_ok(instr.src2) || instr.immediate ||
          instr.displacement)
        return fail(err, "alu needs dst,src1,src2");
      return pack(op, (*instr.dst << 20) | (*instr.src1 << 16) | (*instr.src2 << 12));
    case Opcode::CMP:
      if (instr.dst || !reg_ok(instr.src1) || !reg_ok(instr.src2) || instr.immediate ||
          instr.displacement)
        return fail(err, "cmp needs src1,src2");
      return pack(op, (*instr.src1 << 16) | (*instr.src2 << 12));
    case Opcode::LDI: {
      if (!reg_ok(instr.dst) || instr.src1 || instr.src2 || !instr.immediate || instr.displacement)
        return fail(err, "ldi needs dst,imm");
      std::int32_t imm = *instr.immediate;
      if (imm < kImmMin || imm > kImmMax) return fail(err, "immediate out of 20-bit range");
      return pack(op, (*instr.dst << 20) | (Word(imm) & 0xFFFFFu));
    }
    case Opcode::LOAD:
      if (!reg_ok(instr.dst) || !reg_ok(instr.src1) || instr.src2 || instr.immediate ||
          instr.displacement)
        return fail(err, "load needs dst,[src1]");
      return pack(op, (*instr.dst << 20) | (*instr.src1 << 16));
    case Opcode::STORE:
      if (instr.dst || !reg_ok(instr.src1) || !reg_ok(instr.src2) || instr.immediate ||
          instr.displacement)
        return fail(err, "store needs [src1],src2");
      return pack(op, (*instr.src1 << 16) | (*instr.src2 << 12));
    case Opcode::BEQ:
    case Opcode::BNE:
    case Opcode::BLT:
    case Opcode::BGE:
    case Opcode::JMP:
    case Opcode::CALL: {
      if (instr.dst || instr.src1 || instr.src2 || instr.immediate || !instr.displacement)
        return fail(err, "control transfer needs displacement");
      std::int32_t d = *instr.displacement;
      if (d < kDispMin || d > kDispMax) return fail(err, "displacement out of 24-bit range");
      return pack(op, Word(d) & 0xFFFFFFu);
    }
  }
  return fail(err, "unassigned opcode");
}

namespace {

std::int32_t sext(Word v, unsigned bits) {
  Word m = 1u << (bits - 1);
  return std::int32_t((v ^ m) - m);
}

}  // namespace

std::optional<Instruction> decode(Word word, bool alignment_ok) {
  if (!alignment_ok) return std::nullopt;
  const std::uint8_t op = std::uint8_t(word >> 24);
  if (!opcode_assigned(op)) return std::nullopt;
  const Word rest = word & 0x00FFFFFFu;
  const Opcode opcode = static_cast<Opcode>(op);
  Instruction instr;
  instr.opcode = opcode;
  auto f_a = (rest >> 20) & 0xF;
  auto f_b = (rest >> 16) & 0xF;
  auto f_c = (rest >> 12) & 0xF;
  switch (opcode) {
    case Opcode::NOP:
    case Opcode::HALT:
    case Opcode::RET:
      if (rest != 0) return std::nullopt;
      return instr;
    case Opcode::ADD:
    case Opcode::SUB:
    case Opcode::AND:
    case Opcode::OR:
    case Opcode::XOR:
    case Opcode::SHL:
    case Opcode::SHR:
      if (rest & 0xFFF) return std::nullopt;
      instr.dst = f_a;
      instr.src1 = f_b;
      instr.src2 = f_c;
      return instr;
    case Opcode::CMP:
    case Opcode::STORE:
      if ((rest & 0xFFF) || f_a != 0) return std::nullopt;
      instr.src1 = f_b;
      instr.src2 = f_c;
      return instr;
    case Opcode::LDI:
      instr.dst = f_a;
      instr.immediate = sext(rest & 0xFFFFFu, 20);
      return instr;
    case Opcode::LOAD:
      if (rest & 0xFFFF) return std::nullopt;
      instr.dst = f_a;
      instr.src1 = f_b;
      return instr;
    case Opcode::BEQ:
    case Opcode::BNE:
    case Opcode::BLT:
    case Opcode::BGE:
    case Opcode::JMP:
    case Opcode::CALL:
      instr.displacement = sext(rest, 24);
      return instr;
  }
  return std::nullopt;
}

std::string render_isa_reference() {
  std::ostringstream os;
  os << "# ISA reference\n\n";
  os << "Fixed-width 32-bit instructions, " << kInstrWidth
     << " bytes each, little-endian words in memory.\n";
  os << "16 general registers r0..r15; r15 is the stack pointer (alias `sp`).\n";
  os << "All instruction addresses are multiples of " << kInstrWidth
     << " under correct execution; unaligned fetches decode as invalid.\n\n";

  os << "## Opcode table\n\n";
  os << "| code | mnemonic | kind | operands |\n|------|----------|------|----------|\n";
  auto kind_name = [](InstrKind k) {
    switch (k) {
      case InstrKind::Alu: return "alu";
      case InstrKind::Load: return "load";
      case InstrKind::Store: return "store";
      case InstrKind::Branch: return "branch";
      case InstrKind::Jump: return "jump";
      case InstrKind::Call: return "call";
      case InstrKind::Ret: return "ret";
      case InstrKind::Nop: return "nop";
      case InstrKind::Halt: return "halt";
    }
    return "?";
  };
  auto operands = [](Opcode op) {
    switch (op) {
      case Opcode::NOP:
      case Opcode::HALT:
      case Opcode::RET: return "-";
      case Opcode::CMP: return "src1, src2";
      case Opcode::LDI: return "dst, imm20 | dst, &object";
      case Opcode::LOAD: return "dst, [src1]";
      case Opcode::STORE: return "[src1], src2";
      case Opcode::BEQ:
      case Opcode::BNE:
      case Opcode::BLT:
      case Opcode::BGE:
      case Opcode::JMP:
      case Opcode::CALL: return "disp24 (bytes, label in assembly)";
      default: return "dst, src1, src2";
    }
  };
  for (const auto& e : opcode_table()) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%02X", unsigned(e.op));
    os << "| " << buf << " | " << e.mnemonic << " | " << kind_name(e.kind) << " | "
       << operands(e.op) << " |\n";
  }

  os << "\n## Bit layout (normative)\n\n";
  os << "Bits 31..24 always carry the opcode. Remaining 24 bits by format:\n\n";
  os << "| format | [23:20] | [19:16] | [15:12] | [11:0] |\n";
  os << "|--------|---------|---------|---------|--------|\n";
  os << "| alu 3-reg (add/sub/and/or/xor/shl/shr) | dst | src1 | src2 | 0 |\n";
  os << "| cmp / store | 0 | src1 | src2 | 0 |\n";
  os << "| load | dst | src1 | 0 | 0 |\n";
  os << "| ldi | dst | imm20[19:16] | imm20[15:12] | imm20[11:0] |\n";
  os << "| bcc / jmp / call | disp24[23:20] | disp24[19:16] | disp24[15:12] | disp24[11:0] |\n";
  os << "| nop / halt / ret | 0 | 0 | 0 | 0 |\n\n";
  os << "`ldi` immediates are signed 20-bit, sign-extended to 32 bits.\n";
  os << "Displacements are signed byte offsets relative to the transfer instruction itself.\n";
  os << "Unused fields must be zero; any other bit pattern is an invalid encoding.\n";
  os << "NOP is the all-zero word 0x00000000.\n\n";

  os << "## Semantics notes\n\n";
  os << "- `cmp` sets the flags eq := (a == b), lt := (a <s b); branches test them.\n";
  os << "- `shl`/`shr` use the low 5 bits of src2; `shr` is a logical shift.\n";
  os << "- `call` pushes the return address on a full-descending stack at r15;\n";
  os << "  `ret` pops it. Loads and stores are word-sized and word-aligned.\n";
  os << "- Arithmetic wraps modulo 2^32; comparisons for `lt` are signed.\n\n";

  os << "## Canonical record serialization (digest pre-image)\n\n";
  os << "Fixed 29-byte layout, in order:\n\n";
  os << "| offset | width | field |\n|--------|-------|-------|\n";
  os << "| 0 | 1 | opcode (0xFF for trap records) |\n";
  os << "| 1 | 1 | condition code (0 none, 1 eq, 2 ne, 3 lt, 4 ge) |\n";
  os << "| 2 | 1 | dst register (0xFF none) |\n";
  os << "| 3 | 1 | src1 register (0xFF none) |\n";
  os << "| 4 | 1 | src2 register (0xFF none) |\n";
  os << "| 5 | 1 | immediate tag (0 none, 1 value, 2 object ordinal) |\n";
  os << "| 6 | 4 | immediate value or object ordinal, LE |\n";
  os << "| 10 | 1 | loaded-value tag (0 none, 1 value, 3 address-masked) |\n";
  os << "| 11 | 4 | loaded value, LE (0 when masked) |\n";
  os << "| 15 | 1 | result tag (0 none, 1 value, 3 address-masked) |\n";
  os << "| 16 | 4 | result value, LE (0 when masked) |\n";
  os << "| 20 | 1 | stored-value tag (0 none, 1 value, 3 address-masked) |\n";
  os << "| 21 | 4 | stored value, LE (0 when masked) |\n";
  os << "| 25 | 1 | branch tag (0 none, 1 present) |\n";
  os << "| 26 | 1 | branch taken (0/1) |\n";
  os << "| 27 | 1 | trap tag |\n";
  os << "| 28 | 1 | trap cause |\n\n";
  os << "Records never contain program counters, effective addresses or branch\n";
  os << "displacements. Immediates produced by `ldi rX, &object` are replaced by\n";
  os << "the object's declaration ordinal (tag 2), and any value derived from an\n";
  os << "address (pointer arithmetic results, pointers moving through memory,\n";
  os << "return addresses) is masked to tag 3, so records stay layout-free.\n";
  return os.str();
}

}  // namespace divex::isa
