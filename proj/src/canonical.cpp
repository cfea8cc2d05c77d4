#include "divex/canonical.hpp"

#include <sstream>

namespace divex::canonical {

namespace {

void put32(std::uint8_t* at, std::uint32_t v) {
  for (unsigned b = 0; b < 4; ++b) at[b] = std::uint8_t(v >> (8 * b));
}

std::uint8_t reg_byte(const std::optional<unsigned>& r) {
  return r ? std::uint8_t(*r) : kNoReg;
}

}  // namespace

std::array<std::uint8_t, 29> CanonicalRecord::serialize() const {
  std::array<std::uint8_t, 29> out{};
  out[0] = opcode;
  out[1] = cond;
  out[2] = dst;
  out[3] = src1;
  out[4] = src2;
  out[5] = imm_tag;
  put32(&out[6], imm);
  out[10] = loaded_tag;
  put32(&out[11], loaded);
  out[15] = result_tag;
  put32(&out[16], result);
  out[20] = stored_tag;
  put32(&out[21], stored);
  out[25] = branch_tag;
  out[26] = taken;
  out[27] = trap_tag;
  out[28] = trap_cause;
  return out;
}

std::string CanonicalRecord::to_string() const {
  std::ostringstream os;
  if (trap_tag) {
    os << "trap(" << machine::trap_name(machine::TrapCause(trap_cause)) << ")";
    return os.str();
  }
  const isa::OpcodeInfo* info = isa::opcode_info(isa::Opcode(opcode));
  os << (info ? info->mnemonic : "?");
  if (dst != kNoReg) os << " d=r" << unsigned(dst);
  if (src1 != kNoReg) os << " a=r" << unsigned(src1);
  if (src2 != kNoReg) os << " b=r" << unsigned(src2);
  if (imm_tag == 1) os << " imm=" << std::int32_t(imm);
  if (imm_tag == 2) os << " imm=obj#" << imm;
  if (loaded_tag) os << " ld=" << loaded;
  if (result_tag) os << " res=" << result;
  if (stored_tag) os << " st=" << stored;
  if (branch_tag) os << (taken ? " taken" : " not-taken");
  return os.str();
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t record_hash(const CanonicalRecord& r) {
  auto bytes = r.serialize();
  return fnv1a(bytes.data(), bytes.size());
}

std::optional<CanonicalRecord> canonicalize(const machine::StepEvent& e) {
  if (e.trap != machine::TrapCause::None) {
    CanonicalRecord r;
    r.opcode = kTrapOpcode;
    r.trap_tag = 1;
    r.trap_cause = std::uint8_t(e.trap);
    return r;
  }
  if (e.is_transparent) return std::nullopt;

  const isa::Instruction& in = *e.instr;
  CanonicalRecord r;
  r.opcode = std::uint8_t(in.opcode);
  r.cond = std::uint8_t(in.condition());
  r.dst = reg_byte(in.dst);
  r.src1 = reg_byte(in.src1);
  r.src2 = reg_byte(in.src2);
  if (in.opcode == isa::Opcode::LDI) {
    if (e.addr_imm_ordinal) {
      // replica-specific address immediates are layout data: mask to the
      // object's declaration ordinal and drop the materialized value
      r.imm_tag = 2;
      r.imm = *e.addr_imm_ordinal;
    } else {
      r.imm_tag = 1;
      r.imm = std::uint32_t(*in.immediate);
      r.result_tag = 1;
      r.result = *e.computed_result;
    }
  } else if (e.computed_result) {
    // address-valued results (pointer arithmetic) are layout data: keep the
    // field present but drop the value (tag 3)
    r.result_tag = e.result_is_addr ? 3 : 1;
    r.result = e.result_is_addr ? 0 : *e.computed_result;
  }
  if (e.loaded_value) {
    r.loaded_tag = e.loaded_is_addr ? 3 : 1;
    r.loaded = e.loaded_is_addr ? 0 : *e.loaded_value;
  }
  if (e.stored_value) {
    r.stored_tag = e.stored_is_addr ? 3 : 1;
    r.stored = e.stored_is_addr ? 0 : *e.stored_value;
  }
  if (e.branch_taken) {
    r.branch_tag = 1;
    r.taken = *e.branch_taken ? 1 : 0;
  }
  return r;
}

std::array<std::uint8_t, 10> static_projection(const isa::Instruction& instr,
                                               std::optional<std::uint32_t> masked_ordinal) {
  std::array<std::uint8_t, 10> out{};
  out[0] = std::uint8_t(instr.opcode);
  out[1] = std::uint8_t(instr.condition());
  out[2] = reg_byte(instr.dst);
  out[3] = reg_byte(instr.src1);
  out[4] = reg_byte(instr.src2);
  if (instr.opcode == isa::Opcode::LDI) {
    if (masked_ordinal) {
      out[5] = 2;
      put32(&out[6], *masked_ordinal);
    } else {
      out[5] = 1;
      put32(&out[6], std::uint32_t(*instr.immediate));
    }
  }
  return out;
}

void CanonicalTrace::append(const CanonicalRecord& r) {
  records.push_back(r);
  auto bytes = r.serialize();
  running_digest = fnv1a(bytes.data(), bytes.size(), running_digest);
}

}  // namespace divex::canonical
