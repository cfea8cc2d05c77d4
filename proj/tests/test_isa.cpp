#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "divex/isa.hpp"

using namespace divex;
using isa::Instruction;
using isa::Opcode;

namespace {

// Bit-layout fixture written against the documented encoding table before the
// encoder: opcode in [31:24], fields per format. These are the normative
// words; the encoder must reproduce them bit for bit.
struct EncodingRow {
  Instruction instr;
  std::uint32_t word;
};

std::vector<EncodingRow> layout_table() {
  return {
      {isa::make_nop(), 0x00000000u},
      {isa::make_halt(), 0x01000000u},
      // add r1, r2, r3: 0x10 | dst=1 | src1=2 | src2=3 | 000
      {isa::make_alu(Opcode::ADD, 1, 2, 3), 0x10123000u},
      {isa::make_alu(Opcode::SUB, 15, 14, 13), 0x11FED000u},
      {isa::make_alu(Opcode::XOR, 0, 0, 0), 0x14000000u},
      {isa::make_alu(Opcode::SHR, 7, 8, 9), 0x16789000u},
      {isa::make_cmp(4, 5), 0x17045000u},
      // ldi r2, 1: 0x20 | dst=2 | imm20=0x00001
      {isa::make_ldi(2, 1), 0x20200001u},
      {isa::make_ldi(3, -1), 0x203FFFFFu},
      {isa::make_ldi(0, -524288), 0x20080000u},
      {isa::make_load(6, 7), 0x21670000u},
      {isa::make_store(8, 9), 0x22089000u},
      // beq +8: 0x30 | disp24=0x000008
      {isa::make_branch(Opcode::BEQ, 8), 0x30000008u},
      {isa::make_branch(Opcode::BNE, -4), 0x31FFFFFCu},
      {isa::make_branch(Opcode::BLT, 0), 0x32000000u},
      {isa::make_branch(Opcode::BGE, 4), 0x33000004u},
      {isa::make_branch(Opcode::JMP, -8388608), 0x40800000u},
      {isa::make_branch(Opcode::CALL, 8388607), 0x417FFFFFu},
      {Instruction{Opcode::RET}, 0x42000000u},
  };
}

std::uint64_t rng_state = 0x9E3779B97F4A7C15ull;
std::uint64_t rnd() {
  std::uint64_t z = (rng_state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Instruction random_instruction() {
  const auto& table = isa::opcode_table();
  while (true) {
    const auto& info = table[rnd() % table.size()];
    switch (info.kind) {
      case isa::InstrKind::Nop: return isa::make_nop();
      case isa::InstrKind::Halt: return isa::make_halt();
      case isa::InstrKind::Ret: return Instruction{Opcode::RET};
      case isa::InstrKind::Load: return isa::make_load(rnd() % 16, rnd() % 16);
      case isa::InstrKind::Store: return isa::make_store(rnd() % 16, rnd() % 16);
      case isa::InstrKind::Branch:
      case isa::InstrKind::Jump:
      case isa::InstrKind::Call: {
        std::int32_t disp = std::int32_t(rnd() % (1u << 24)) + isa::kDispMin;
        return isa::make_branch(info.op, disp);
      }
      case isa::InstrKind::Alu:
        if (info.op == Opcode::CMP) return isa::make_cmp(rnd() % 16, rnd() % 16);
        if (info.op == Opcode::LDI) {
          std::int32_t imm = std::int32_t(rnd() % (1u << 20)) + isa::kImmMin;
          return isa::make_ldi(rnd() % 16, imm);
        }
        return isa::make_alu(info.op, rnd() % 16, rnd() % 16, rnd() % 16);
    }
  }
}

}  // namespace

TEST_CASE("encoding matches the documented bit layout") {
  for (const auto& row : layout_table()) {
    auto word = isa::encode(row.instr);
    REQUIRE(word.has_value());
    CHECK(*word == row.word);
    auto back = isa::decode(row.word);
    REQUIRE(back.has_value());
    CHECK(*back == row.instr);
  }
}

TEST_CASE("nop is the designated all-zero word") {
  CHECK(*isa::encode(isa::make_nop()) == 0u);
  CHECK(isa::decode(0u)->opcode == Opcode::NOP);
}

TEST_CASE("round-trip over the well-formed instruction space") {
  for (int i = 0; i < 20000; ++i) {
    Instruction instr = random_instruction();
    auto word = isa::encode(instr);
    REQUIRE(word.has_value());
    auto back = isa::decode(*word);
    REQUIRE(back.has_value());
    CHECK(*back == instr);
  }
}

TEST_CASE("every opcode byte value is classified per the table") {
  int assigned = 0;
  for (unsigned code = 0; code < 256; ++code) {
    // zero operand bits: valid iff the opcode byte is assigned (ldi/branch
    // formats accept any operand bits, so zero is always representative)
    auto decoded = isa::decode(std::uint32_t(code) << 24);
    bool expect = isa::opcode_assigned(std::uint8_t(code));
    CHECK(decoded.has_value() == expect);
    assigned += expect;
  }
  CHECK(assigned == int(isa::opcode_table().size()));
}

TEST_CASE("exactly one NOP and one HALT opcode") {
  int nops = 0, halts = 0;
  for (const auto& e : isa::opcode_table()) {
    nops += e.kind == isa::InstrKind::Nop;
    halts += e.kind == isa::InstrKind::Halt;
  }
  CHECK(nops == 1);
  CHECK(halts == 1);
}

TEST_CASE("unaligned fetches and nonzero reserved bits decode as invalid") {
  CHECK(!isa::decode(*isa::encode(isa::make_nop()), false).has_value());
  CHECK(!isa::decode(0x00000001u).has_value());            // nop with operand bits
  CHECK(!isa::decode(0x10123001u).has_value());            // alu reserved bits
  CHECK(!isa::decode(0x21670001u).has_value());            // load reserved bits
  CHECK(!isa::decode(0x17145000u).has_value());            // cmp with dst bits
  CHECK(!isa::decode(0xFF000000u).has_value());            // unassigned opcode
}

TEST_CASE("malformed operand combinations fail to encode") {
  isa::EncodeError err;
  Instruction bad = isa::make_alu(Opcode::ADD, 1, 2, 3);
  bad.immediate = 5;
  CHECK(!isa::encode(bad, &err).has_value());
  Instruction huge = isa::make_ldi(1, 0);
  huge.immediate = isa::kImmMax + 1;
  CHECK(!isa::encode(huge).has_value());
  Instruction noops = isa::make_nop();
  noops.dst = 1;
  CHECK(!isa::encode(noops).has_value());
}

TEST_CASE("epsilon bound is the exact power of two") {
  isa::IsaConstants def;
  CHECK(isa::epsilon_bound(def).neg_exp == 52);  // 8 + 3*4 + 32

  isa::IsaConstants zero{0, 0, 0, 0};
  CHECK(isa::epsilon_bound(zero).neg_exp == 0);  // 2^0 = 1: no information

  isa::IsaConstants half{8, 4, 3, 16};
  CHECK(isa::epsilon_bound(half).neg_exp == 36);
}

TEST_CASE("epsilon bound is monotone decreasing in each field width") {
  isa::IsaConstants base;
  auto exp_of = [](isa::IsaConstants c) { return isa::epsilon_bound(c).neg_exp; };
  for (unsigned bump = 1; bump <= 8; ++bump) {
    isa::IsaConstants c = base;
    c.opcode_bits += bump;
    CHECK(exp_of(c) > exp_of(base));
    c = base;
    c.reg_field_bits += bump;
    CHECK(exp_of(c) > exp_of(base));
    c = base;
    c.value_bits += bump;
    CHECK(exp_of(c) > exp_of(base));
  }
}

TEST_CASE("isa reference renders the opcode table") {
  auto doc = isa::render_isa_reference();
  CHECK(doc.find("| 0x00 | nop |") != std::string::npos);
  CHECK(doc.find("| 0x10 | add |") != std::string::npos);
  CHECK(doc.find("Bit layout") != std::string::npos);
  CHECK(doc.find("29-byte") != std::string::npos);
}
