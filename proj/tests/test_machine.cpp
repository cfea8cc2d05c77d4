#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "divex/io.hpp"
#include "divex/machine.hpp"
#include "divex/program.hpp"

using namespace divex;
using machine::Mutation;
using machine::TrapCause;

namespace {

prog::LogicalProgram load(const std::string& name) {
  auto res = prog::parse(io::read_text_file(std::string(DIVEX_CORPUS_DIR) + "/" + name));
  REQUIRE(res.ok());
  return *res.program;
}

// Hand-built single image: raw words at 0x1000, no diversifier involved.
layout::ReplicaImage mini_image(const std::vector<isa::Instruction>& instrs) {
  layout::ReplicaImage img;
  img.replica = 0;
  img.code_region = {0x1000, 4096};
  img.data_region = {0x3000, 4096};
  img.stack_base = 0x5000;
  img.stack_size = 1024;
  img.code_base = 0x1000;
  img.data_base = 0x3000;
  img.entry_pc = 0x1000;
  for (std::size_t i = 0; i < instrs.size(); ++i) {
    auto word = isa::encode(instrs[i]);
    REQUIRE(word.has_value());
    for (unsigned b = 0; b < 4; ++b) img.code.push_back(std::uint8_t(*word >> (8 * b)));
  }
  return img;
}

machine::StepEvent run_until_halt(machine::ReplicaState& st, const layout::ReplicaImage& img,
                                  int max_steps = 10000) {
  machine::StepEvent last;
  for (int i = 0; i < max_steps && !st.halted; ++i) last = machine::step(st, img);
  REQUIRE(st.halted);
  return last;
}

layout::BuildResult build(const prog::LogicalProgram& p, unsigned n = 2) {
  auto cfg = layout::DiversificationConfig::defaults(n);
  auto res = layout::diversify(p, cfg);
  REQUIRE(res.ok);
  return res;
}

}  // namespace

TEST_CASE("add executes: 2 + 3 -> 5") {
  auto img = mini_image({isa::make_ldi(2, 2), isa::make_ldi(3, 3),
                         isa::make_alu(isa::Opcode::ADD, 1, 2, 3), isa::make_halt()});
  auto st = machine::reset(img, {});
  machine::step(st, img);
  machine::step(st, img);
  auto ev = machine::step(st, img);
  CHECK(*ev.computed_result == 5);
  CHECK(st.regs[1] == 5);
  CHECK(ev.kind == isa::InstrKind::Alu);
}

TEST_CASE("reset state: pc at entry, sp at stack base, registers clear") {
  auto p = load("table_walk.asm");
  auto res = build(p);
  for (const auto& img : res.images) {
    auto st = machine::reset(img, {});
    CHECK(st.pc == img.entry_pc);
    CHECK(st.regs[isa::kSpReg] == img.stack_base);
    for (unsigned r = 0; r < isa::kSpReg; ++r) CHECK(st.regs[r] == 0);
    CHECK(!st.halted);
  }
  // reset entry points differ across replicas (disjoint code regions)
  CHECK(machine::reset(res.images[0], {}).pc != machine::reset(res.images[1], {}).pc);
}

TEST_CASE("initial memory carries the declared init words") {
  auto p = load("table_walk.asm");
  auto res = build(p);
  std::vector<std::uint32_t> expect = {3, 1, 4, 1, 5, 9};
  for (const auto& img : res.images) {
    auto st = machine::reset(img, {});
    std::uint32_t base = img.phi_data.at("table");
    for (std::size_t k = 0; k < expect.size(); ++k)
      CHECK(*st.read_word(base + 4 * std::uint32_t(k)) == expect[k]);
  }
}

TEST_CASE("unaligned pc raises an invalid-fetch trap") {
  auto img = mini_image({isa::make_halt()});
  auto st = machine::reset(img, {});
  st.pc += 2;
  auto ev = machine::step(st, img);
  CHECK(ev.trap == TrapCause::UnalignedFetch);
  CHECK(st.halted);
}

TEST_CASE("fetch outside every region traps instead of aborting") {
  auto img = mini_image({isa::make_halt()});
  auto st = machine::reset(img, {});
  st.pc = 0x9000;
  CHECK(machine::step(st, img).trap == TrapCause::FetchOutOfRegion);
}

TEST_CASE("unassigned opcode bytes trap as invalid encodings") {
  auto img = mini_image({isa::make_halt()});
  auto st = machine::reset(img, {});
  st.write_word(0x1000, 0xEE000000u);
  CHECK(machine::step(st, img).trap == TrapCause::InvalidOpcode);
}

TEST_CASE("loads and stores: alignment and region checks, event fields") {
  auto img = mini_image({
      isa::make_ldi(1, 0x3000), isa::make_ldi(2, 77), isa::make_store(1, 2),
      isa::make_load(3, 1), isa::make_halt(),
  });
  auto st = machine::reset(img, {});
  machine::step(st, img);
  machine::step(st, img);
  auto stv = machine::step(st, img);
  CHECK(*stv.effective_address == 0x3000);
  CHECK(*stv.stored_value == 77);
  auto ldv = machine::step(st, img);
  CHECK(*ldv.effective_address == 0x3000);
  CHECK(*ldv.loaded_value == 77);
  CHECK(st.regs[3] == 77);

  auto st2 = machine::reset(img, {});
  st2.regs[1] = 0x3002;  // unaligned
  st2.pc = 0x1000 + 3 * 4;
  auto ev = machine::step(st2, img);
  CHECK(ev.trap == TrapCause::LoadUnaligned);
  CHECK(*ev.effective_address == 0x3002);  // attempted address still surfaces

  auto st3 = machine::reset(img, {});
  st3.regs[1] = 0;  // null pointer
  st3.pc = 0x1000 + 3 * 4;
  auto ev3 = machine::step(st3, img);
  CHECK(ev3.trap == TrapCause::LoadOutOfRegion);
  CHECK(*ev3.effective_address == 0);
}

TEST_CASE("cmp sets flags and conditional branches follow them") {
  auto img = mini_image({
      isa::make_ldi(1, 3), isa::make_ldi(2, 5), isa::make_cmp(1, 2),
      isa::make_branch(isa::Opcode::BLT, 12), isa::make_halt(),  // skipped when taken
      isa::make_halt(),
  });
  auto st = machine::reset(img, {});
  machine::step(st, img);
  machine::step(st, img);
  auto cmp = machine::step(st, img);
  CHECK(*cmp.computed_result == 2);  // lt only
  CHECK(st.flag_lt);
  CHECK(!st.flag_eq);
  auto br = machine::step(st, img);
  CHECK(*br.branch_taken);
  CHECK(st.pc == 0x1000 + 3 * 4 + 12);
}

TEST_CASE("signed comparison semantics") {
  auto img = mini_image({isa::make_ldi(1, -1), isa::make_ldi(2, 1), isa::make_cmp(1, 2),
                         isa::make_halt()});
  auto st = machine::reset(img, {});
  machine::step(st, img);
  machine::step(st, img);
  machine::step(st, img);
  CHECK(st.flag_lt);  // -1 <s 1 even though 0xFFFFFFFF >u 1
}

TEST_CASE("call pushes the return address, ret pops it") {
  auto img = mini_image({
      isa::make_branch(isa::Opcode::CALL, 8),  // to 0x1008
      isa::make_halt(),
      isa::Instruction{isa::Opcode::RET},
  });
  auto st = machine::reset(img, {});
  auto call = machine::step(st, img);
  CHECK(st.pc == 0x1008);
  CHECK(st.regs[isa::kSpReg] == img.stack_base - 4);
  CHECK(*call.stack_address == img.stack_base - 4);
  CHECK(*st.read_word(img.stack_base - 4) == 0x1004);
  auto ret = machine::step(st, img);
  CHECK(st.pc == 0x1004);
  CHECK(st.regs[isa::kSpReg] == img.stack_base);
  CHECK(*ret.stack_address == img.stack_base - 4);
  CHECK(machine::step(st, img).halted_normally);
}

TEST_CASE("overwritten return slot redirects the next ret") {
  auto img = mini_image({
      isa::make_branch(isa::Opcode::CALL, 8),
      isa::make_halt(),
      isa::Instruction{isa::Opcode::RET},
  });
  auto st = machine::reset(img, {});
  machine::step(st, img);  // call
  Mutation m;
  m.kind = Mutation::Kind::MemSet;
  m.addr = img.stack_base - 4;
  m.value = 0x1000;
  REQUIRE(machine::apply_mutation(st, m));
  machine::step(st, img);  // ret fetches the corrupted value
  CHECK(st.pc == 0x1000);
}

TEST_CASE("nop advances pc only") {
  auto img = mini_image({isa::make_nop(), isa::make_halt()});
  auto st = machine::reset(img, {});
  auto before = st.regs;
  auto ev = machine::step(st, img);
  CHECK(ev.is_transparent);
  CHECK(st.pc == 0x1004);
  CHECK(st.regs == before);
}

TEST_CASE("mutations apply atomically between steps") {
  auto img = mini_image({isa::make_halt()});
  auto st = machine::reset(img, {});

  Mutation d;
  d.kind = Mutation::Kind::PcDelta;
  d.delta = 0;
  auto pc = st.pc;
  machine::apply_mutation(st, d);
  CHECK(st.pc == pc);  // identity

  d.delta = -8;
  machine::apply_mutation(st, d);
  CHECK(st.pc == pc - 8);

  Mutation ps;
  ps.kind = Mutation::Kind::PcSet;
  ps.addr = 0x2222;
  machine::apply_mutation(st, ps);
  CHECK(st.pc == 0x2222);

  Mutation rs;
  rs.kind = Mutation::Kind::RegSet;
  rs.reg = 4;
  rs.value = 99;
  machine::apply_mutation(st, rs);
  CHECK(st.regs[4] == 99);

  Mutation rb;
  rb.kind = Mutation::Kind::RegBitflip;
  rb.reg = 4;
  rb.bit = 0;
  machine::apply_mutation(st, rb);
  CHECK(st.regs[4] == 98);

  Mutation rc;
  rc.kind = Mutation::Kind::RegCopy;
  rc.reg = 5;
  rc.src_reg = 4;
  machine::apply_mutation(st, rc);
  CHECK(st.regs[5] == 98);

  Mutation ms;
  ms.kind = Mutation::Kind::MemSet;
  ms.addr = 0x3004;
  ms.value = 0xABCD;
  REQUIRE(machine::apply_mutation(st, ms));
  CHECK(*st.read_word(0x3004) == 0xABCD);

  Mutation mb;
  mb.kind = Mutation::Kind::MemBitflip;
  mb.addr = 0x3004;
  mb.bit = 1;
  REQUIRE(machine::apply_mutation(st, mb));
  CHECK(*st.read_word(0x3004) == (0xABCDu ^ 2u));

  ms.addr = 0x100000;  // unmapped
  CHECK(!machine::apply_mutation(st, ms));
}

TEST_CASE("event streams are deterministic") {
  auto p = load("fibonacci.asm");
  auto res = build(p);
  for (const auto& img : res.images) {
    auto collect = [&]() {
      auto st = machine::reset(img, {});
      std::vector<std::pair<std::uint32_t, std::uint32_t>> stream;
      while (!st.halted) {
        auto ev = machine::step(st, img);
        stream.push_back({ev.pc_before, ev.computed_result.value_or(0)});
      }
      return stream;
    };
    CHECK(collect() == collect());
  }
}

TEST_CASE("padding changes pc trajectories but never outcomes") {
  auto p = load("loop_sum.asm");
  auto padded_cfg = layout::DiversificationConfig::defaults(2);
  auto bare_cfg = padded_cfg;
  bare_cfg.nops_enabled = false;
  bare_cfg.delta_scan_max = 0;
  auto padded = layout::diversify(p, padded_cfg);
  auto bare = layout::diversify(p, bare_cfg);
  REQUIRE(padded.ok);
  REQUIRE(bare.ok);
  auto final_state = [&](const layout::ReplicaImage& img) {
    auto st = machine::reset(img, {});
    run_until_halt(st, img);
    std::uint32_t out = *st.read_word(img.phi_data.at("out"));
    return std::pair{st.regs, out};
  };
  auto [regs_p, out_p] = final_state(padded.images[0]);
  auto [regs_b, out_b] = final_state(bare.images[0]);
  CHECK(out_p == 55);
  CHECK(out_b == 55);
  // data registers agree; address-holding registers legitimately differ
  for (unsigned r = 0; r < isa::kNumRegs; ++r)
    if (r != isa::kSpReg && r != 5) CHECK(regs_p[r] == regs_b[r]);
}

TEST_CASE("full corpus runs reach the golden data values on every replica") {
  using nlohmann::ordered_json;
  for (const auto& name : {"loop_sum", "fibonacci", "string_copy", "call_chain", "table_walk",
                           "shared_out", "frag_afx"}) {
    CAPTURE(name);
    auto p = load(std::string(name) + ".asm");
    auto res = build(p);
    auto golden = ordered_json::parse(
        io::read_text_file(std::string(DIVEX_GOLDEN_DIR) + "/" + name + ".json"));
    for (const auto& img : res.images) {
      auto st = machine::reset(img, {layout::Region{0xF000, 4}});
      run_until_halt(st, img);
      CHECK(st.trap == TrapCause::None);
      for (const auto& [obj, words] : golden.at("objects").items()) {
        std::uint32_t base = img.phi_data.at(obj);
        for (std::size_t k = 0; k < words.size(); ++k)
          CHECK(*st.read_word(base + 4 * std::uint32_t(k)) == words[k].get<std::uint32_t>());
      }
      for (const auto& [addr, value] : golden.at("shared_words").items())
        CHECK(*st.read_word(std::uint32_t(std::stoul(addr))) == value.get<std::uint32_t>());
    }
  }
}
