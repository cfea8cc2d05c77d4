#include "divex/machine.hpp"

#include <cassert>

namespace divex::machine {

const char* trap_name(TrapCause c) {
  switch (c) {
    case TrapCause::None: return "none";
    case TrapCause::InvalidOpcode: return "invalid-opcode";
    case TrapCause::UnalignedFetch: return "unaligned-fetch";
    case TrapCause::FetchOutOfRegion: return "fetch-out-of-region";
    case TrapCause::LoadUnaligned: return "load-unaligned";
    case TrapCause::LoadOutOfRegion: return "load-out-of-region";
    case TrapCause::StoreUnaligned: return "store-unaligned";
    case TrapCause::StoreOutOfRegion: return "store-out-of-region";
  }
  return "?";
}

std::optional<std::uint32_t> ReplicaState::read_word(std::uint32_t addr) const {
  for (const auto& r : mem)
    if (r.contains(addr) && r.contains(addr + 3)) {
      std::uint32_t off = addr - r.base;
      return std::uint32_t(r.bytes[off]) | std::uint32_t(r.bytes[off + 1]) << 8 |
             std::uint32_t(r.bytes[off + 2]) << 16 | std::uint32_t(r.bytes[off + 3]) << 24;
    }
  return std::nullopt;
}

bool ReplicaState::write_word(std::uint32_t addr, std::uint32_t value) {
  for (auto& r : mem)
    if (r.contains(addr) && r.contains(addr + 3)) {
      std::uint32_t off = addr - r.base;
      for (unsigned b = 0; b < 4; ++b) r.bytes[off + b] = std::uint8_t(value >> (8 * b));
      return true;
    }
  return false;
}

bool ReplicaState::mapped(std::uint32_t addr) const {
  for (const auto& r : mem)
    if (r.contains(addr)) return true;
  return false;
}

ReplicaState reset(const layout::ReplicaImage& img, const std::vector<layout::Region>& shared) {
  ReplicaState st;
  st.replica = img.replica;
  st.pc = img.entry_pc;
  st.regs[isa::kSpReg] = img.stack_base;
  st.set_taint(isa::kSpReg, true);

  MemRegion code;
  code.base = img.code_region.base;
  code.bytes.assign(img.code_region.size, 0);
  std::copy(img.code.begin(), img.code.end(),
            code.bytes.begin() + (img.code_base - img.code_region.base));
  st.mem.push_back(std::move(code));

  MemRegion data;
  data.base = img.data_region.base;
  data.bytes.assign(img.data_region.size, 0);
  std::copy(img.data.begin(), img.data.end(),
            data.bytes.begin() + (img.data_base - img.data_region.base));
  st.mem.push_back(std::move(data));

  MemRegion stack;
  stack.base = img.stack_base - img.stack_size;
  stack.bytes.assign(img.stack_size, 0);
  st.mem.push_back(std::move(stack));

  for (const auto& s : shared) {
    MemRegion r;
    r.base = s.base;
    r.bytes.assign(s.size, 0);
    st.mem.push_back(std::move(r));
  }
  return st;
}

namespace {

StepEvent trap_event(ReplicaState& st, StepEvent ev, TrapCause cause) {
  ev.trap = cause;
  st.trap = cause;
  st.halted = true;
  return ev;
}

}  // namespace

StepEvent step(ReplicaState& st, const layout::ReplicaImage& img) {
  assert(!st.halted);
  StepEvent ev;
  ev.replica = st.replica;
  ev.pc_before = st.pc;

  if (st.pc % isa::kInstrWidth != 0) return trap_event(st, ev, TrapCause::UnalignedFetch);
  auto word = st.read_word(st.pc);
  if (!word) return trap_event(st, ev, TrapCause::FetchOutOfRegion);
  auto decoded = isa::decode(*word);
  if (!decoded) return trap_event(st, ev, TrapCause::InvalidOpcode);

  const isa::Instruction& in = *decoded;
  ev.instr = in;
  ev.kind = in.kind();
  ev.is_transparent =
      in.opcode == isa::Opcode::NOP ||
      (in.opcode == isa::Opcode::JMP && img.stitch_addrs.count(st.pc) != 0);

  auto branch_to = [&](std::int32_t disp) { st.pc = std::uint32_t(std::int64_t(st.pc) + disp); };

  switch (in.opcode) {
    case isa::Opcode::NOP:
      st.pc += isa::kInstrWidth;
      break;
    case isa::Opcode::HALT:
      st.halted = true;
      ev.halted_normally = true;
      break;
    case isa::Opcode::ADD:
    case isa::Opcode::SUB:
    case isa::Opcode::AND:
    case isa::Opcode::OR:
    case isa::Opcode::XOR:
    case isa::Opcode::SHL:
    case isa::Opcode::SHR: {
      std::uint32_t a = st.regs[*in.src1], b = st.regs[*in.src2], r = 0;
      switch (in.opcode) {
        case isa::Opcode::ADD: r = a + b; break;
        case isa::Opcode::SUB: r = a - b; break;
        case isa::Opcode::AND: r = a & b; break;
        case isa::Opcode::OR: r = a | b; break;
        case isa::Opcode::XOR: r = a ^ b; break;
        case isa::Opcode::SHL: r = a << (b & 31); break;
        default: r = a >> (b & 31); break;
      }
      st.regs[*in.dst] = r;
      st.set_taint(*in.dst, st.tainted(*in.src1) || st.tainted(*in.src2));
      ev.computed_result = r;
      ev.result_is_addr = st.tainted(*in.dst);
      st.pc += isa::kInstrWidth;
      break;
    }
    case isa::Opcode::CMP: {
      std::uint32_t a = st.regs[*in.src1], b = st.regs[*in.src2];
      st.flag_eq = a == b;
      st.flag_lt = std::int32_t(a) < std::int32_t(b);
      ev.computed_result = (st.flag_eq ? 1u : 0u) | (st.flag_lt ? 2u : 0u);
      st.pc += isa::kInstrWidth;
      break;
    }
    case isa::Opcode::LDI: {
      std::uint32_t v = std::uint32_t(*in.immediate);
      st.regs[*in.dst] = v;
      ev.computed_result = v;
      if (auto it = img.addr_imm_sites.find(ev.pc_before); it != img.addr_imm_sites.end())
        ev.addr_imm_ordinal = it->second;
      st.set_taint(*in.dst, ev.addr_imm_ordinal.has_value());
      ev.result_is_addr = st.tainted(*in.dst);
      st.pc += isa::kInstrWidth;
      break;
    }
    case isa::Opcode::LOAD: {
      std::uint32_t ea = st.regs[*in.src1];
      ev.effective_address = ea;
      if (ea % isa::kWordSize != 0) return trap_event(st, ev, TrapCause::LoadUnaligned);
      auto v = st.read_word(ea);
      if (!v) return trap_event(st, ev, TrapCause::LoadOutOfRegion);
      st.regs[*in.dst] = *v;
      st.set_taint(*in.dst, st.mem_taint.count(ea) != 0);
      ev.loaded_value = *v;
      ev.loaded_is_addr = st.tainted(*in.dst);
      st.pc += isa::kInstrWidth;
      break;
    }
    case isa::Opcode::STORE: {
      std::uint32_t ea = st.regs[*in.src1];
      std::uint32_t v = st.regs[*in.src2];
      ev.effective_address = ea;
      if (ea % isa::kWordSize != 0) return trap_event(st, ev, TrapCause::StoreUnaligned);
      if (!st.write_word(ea, v)) return trap_event(st, ev, TrapCause::StoreOutOfRegion);
      if (st.tainted(*in.src2))
        st.mem_taint.insert(ea);
      else
        st.mem_taint.erase(ea);
      ev.stored_value = v;
      ev.stored_is_addr = st.tainted(*in.src2);
      st.pc += isa::kInstrWidth;
      break;
    }
    case isa::Opcode::BEQ:
    case isa::Opcode::BNE:
    case isa::Opcode::BLT:
    case isa::Opcode::BGE: {
      bool taken = false;
      switch (in.condition()) {
        case isa::Condition::Eq: taken = st.flag_eq; break;
        case isa::Condition::Ne: taken = !st.flag_eq; break;
        case isa::Condition::Lt: taken = st.flag_lt; break;
        case isa::Condition::Ge: taken = !st.flag_lt; break;
        default: break;
      }
      ev.branch_taken = taken;
      if (taken)
        branch_to(*in.displacement);
      else
        st.pc += isa::kInstrWidth;
      break;
    }
    case isa::Opcode::JMP:
      ev.branch_taken = true;
      branch_to(*in.displacement);
      break;
    case isa::Opcode::CALL: {
      std::uint32_t ret = st.pc + isa::kInstrWidth;
      std::uint32_t sp = st.regs[isa::kSpReg] - isa::kWordSize;
      ev.stack_address = sp;
      if (sp % isa::kWordSize != 0) return trap_event(st, ev, TrapCause::StoreUnaligned);
      if (!st.write_word(sp, ret)) return trap_event(st, ev, TrapCause::StoreOutOfRegion);
      st.regs[isa::kSpReg] = sp;
      st.mem_taint.insert(sp);  // return addresses are layout data
      ev.branch_taken = true;
      branch_to(*in.displacement);
      break;
    }
    case isa::Opcode::RET: {
      std::uint32_t sp = st.regs[isa::kSpReg];
      ev.stack_address = sp;
      if (sp % isa::kWordSize != 0) return trap_event(st, ev, TrapCause::LoadUnaligned);
      auto v = st.read_word(sp);
      if (!v) return trap_event(st, ev, TrapCause::LoadOutOfRegion);
      st.regs[isa::kSpReg] = sp + isa::kWordSize;
      st.pc = *v;
      break;
    }
  }
  return ev;
}

bool apply_mutation(ReplicaState& st, const Mutation& m) {
  switch (m.kind) {
    case Mutation::Kind::PcDelta:
      st.pc = std::uint32_t(std::int64_t(st.pc) + m.delta);
      return true;
    case Mutation::Kind::PcSet:
      st.pc = m.addr;
      return true;
    case Mutation::Kind::RegSet:
      st.regs[m.reg % isa::kNumRegs] = m.value;
      st.set_taint(m.reg % isa::kNumRegs, false);
      return true;
    case Mutation::Kind::RegBitflip:
      st.regs[m.reg % isa::kNumRegs] ^= 1u << (m.bit & 31);
      return true;
    case Mutation::Kind::RegCopy:
      st.regs[m.reg % isa::kNumRegs] = st.regs[m.src_reg % isa::kNumRegs];
      st.set_taint(m.reg % isa::kNumRegs, st.tainted(m.src_reg % isa::kNumRegs));
      return true;
    case Mutation::Kind::MemSet:
      return st.write_word(m.addr, m.value);
    case Mutation::Kind::MemBitflip: {
      auto v = st.read_word(m.addr);
      if (!v) return false;
      return st.write_word(m.addr, *v ^ (1u << (m.bit & 31)));
    }
  }
  return false;
}

}  // namespace divex::machine
