#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "divex/faults.hpp"
#include "divex/io.hpp"
#include "divex/monitor.hpp"
#include "divex/program.hpp"

using namespace divex;
using machine::Mutation;
using monitor::Policy;
using monitor::VerdictKind;

namespace {

prog::LogicalProgram load(const std::string& name) {
  auto res = prog::parse(io::read_text_file(std::string(DIVEX_CORPUS_DIR) + "/" + name));
  REQUIRE(res.ok());
  return *res.program;
}

struct Rig {
  prog::LogicalProgram program;
  layout::BuildResult build;
  monitor::MonitorConfig mon;
};

Rig rig(const std::string& name, unsigned n = 2, std::uint64_t seed = 0xD1CE5EEDull) {
  Rig r{load(name), {}, {}};
  auto cfg = layout::DiversificationConfig::defaults(n);
  if (n == 3) cfg.stride = 12;
  cfg.seed = seed;
  r.build = layout::diversify(r.program, cfg);
  REQUIRE(r.build.ok);
  r.mon.excluded_shared = cfg.excluded_shared;
  r.mon.max_steps_per_slice =
      layout::required_slice_step_cap(r.program, r.build.images) + 1;
  return r;
}

monitor::ScheduledMutation sched(std::uint64_t slice, unsigned replica, Mutation m) {
  return monitor::ScheduledMutation{slice, replica, m};
}

Mutation pc_delta(std::int64_t d) {
  Mutation m;
  m.kind = Mutation::Kind::PcDelta;
  m.delta = d;
  return m;
}

Mutation pc_set(std::uint32_t a) {
  Mutation m;
  m.kind = Mutation::Kind::PcSet;
  m.addr = a;
  return m;
}

Mutation reg_set(unsigned reg, std::uint32_t v) {
  Mutation m;
  m.kind = Mutation::Kind::RegSet;
  m.reg = reg;
  m.value = v;
  return m;
}

}  // namespace

TEST_CASE("fault-free corpus: no verdicts, equal traces, distinct pcs") {
  for (const auto& name : {"loop_sum.asm", "fibonacci.asm", "string_copy.asm", "call_chain.asm",
                           "table_walk.asm", "shared_out.asm", "frag_afx.asm"}) {
    CAPTURE(name);
    auto r = rig(name);
    monitor::Lockstep runner(r.build.images, r.mon);
    bool pcs_always_distinct = true;
    runner.observer = [&](const monitor::SliceOutcome& out,
                          const std::vector<machine::ReplicaState>&) {
      if (out.boundary_pcs.size() == 2 && out.boundary_pcs[0] == out.boundary_pcs[1])
        pcs_always_distinct = false;
    };
    auto rep = runner.run({});
    CHECK(rep.clean);
    CHECK(!rep.verdict.has_value());
    CHECK(rep.traces[0].records == rep.traces[1].records);
    CHECK(pcs_always_distinct);
  }
}

TEST_CASE("correlated shift beyond the separation diverges within one slice") {
  auto r = rig("loop_sum.asm");
  monitor::Lockstep runner(r.build.images, r.mon);
  std::vector<monitor::ScheduledMutation> s = {sched(5, 0, pc_delta(16)),
                                               sched(5, 1, pc_delta(16))};
  auto rep = runner.run(s);
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::SemanticDivergence);
  CHECK(rep.verdict->slice == 5);  // detected in the very next slice
}

TEST_CASE("pc collapse fires at the boundary before anything retires") {
  auto r = rig("loop_sum.asm");
  monitor::Lockstep runner(r.build.images, r.mon);
  std::uint32_t k = r.build.images[0].entry_pc;
  auto rep = runner.run({sched(3, 0, pc_set(k)), sched(3, 1, pc_set(k))});
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::StructuralPc);
  CHECK(rep.verdict->phase == monitor::Phase::Boundary);
  CHECK(rep.verdict->slice == 3);
  CHECK(rep.verdict->layer == "structural-pc");
}

TEST_CASE("pairwise-strict vs all-equal collapse policies at N=3") {
  auto r = rig("loop_sum.asm", 3);
  std::uint32_t k = r.build.images[0].entry_pc;
  // two replicas collapse, the third stays healthy
  std::vector<monitor::ScheduledMutation> s = {sched(3, 0, pc_set(k)), sched(3, 1, pc_set(k))};

  monitor::Lockstep strict(r.build.images, r.mon);
  auto rep = strict.run(s);
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::StructuralPc);

  auto lax = r.mon;
  lax.pc_policy = Policy::AllEqualCollapse;
  monitor::Lockstep collapse_only(r.build.images, lax);
  auto rep2 = collapse_only.run(s);
  REQUIRE(rep2.verdict.has_value());
  CHECK(rep2.verdict->kind != VerdictKind::StructuralPc);  // semantic catches it later

  // all three equal fires under either policy
  std::vector<monitor::ScheduledMutation> all = {sched(3, 0, pc_set(k)), sched(3, 1, pc_set(k)),
                                                 sched(3, 2, pc_set(k))};
  monitor::Lockstep both(r.build.images, lax);
  auto rep3 = both.run(all);
  REQUIRE(rep3.verdict.has_value());
  CHECK(rep3.verdict->kind == VerdictKind::StructuralPc);
}

TEST_CASE("null pointer collapses the effective addresses at the dereference") {
  auto r = rig("string_copy.asm");
  std::string err;
  auto base = faults::compute_baseline(r.build.images, r.mon, &err);
  REQUIRE(err.empty());
  // find the first load site and zero its pointer register in every replica
  std::uint64_t site = 0;
  unsigned reg = 0;
  for (std::uint64_t s = 0; s < base.slices; ++s)
    if (base.deref_reg[s]) {
      site = s;
      reg = *base.deref_reg[s];
      break;
    }
  monitor::Lockstep runner(r.build.images, r.mon);
  auto rep = runner.run({sched(site, 0, reg_set(reg, 0)), sched(site, 1, reg_set(reg, 0))});
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::StructuralAddr);
  CHECK(rep.verdict->slice == site);  // the dereference slice itself
  CHECK(rep.verdict->layer == "structural-addr");
}

TEST_CASE("identical computed value used as a pointer collapses addresses") {
  auto r = rig("string_copy.asm");
  std::string err;
  auto base = faults::compute_baseline(r.build.images, r.mon, &err);
  REQUIRE(err.empty());
  std::uint64_t site = 0;
  unsigned reg = 0;
  for (std::uint64_t s = 0; s < base.slices; ++s)
    if (base.deref_reg[s]) {
      site = s;
      reg = *base.deref_reg[s];
    }
  Mutation m;
  m.kind = Mutation::Kind::RegCopy;
  m.reg = reg;
  m.src_reg = 4;  // holds loaded data, identical across replicas
  monitor::Lockstep runner(r.build.images, r.mon);
  auto rep = runner.run({sched(site, 0, m), sched(site, 1, m)});
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::StructuralAddr);
}

TEST_CASE("legitimately shared accesses are exempt from the address layer") {
  auto r = rig("shared_out.asm");
  monitor::Lockstep runner(r.build.images, r.mon);
  auto rep = runner.run({});
  CHECK(rep.clean);  // both replicas store to the same shared word, twice
}

TEST_CASE("a replica that stops retiring stalls the slice") {
  auto r = rig("loop_sum.asm");
  const auto& img = r.build.images[0];
  // land replica 0 in the zero-filled tail: an endless transparent sled
  std::uint32_t sled = img.code_base + std::uint32_t(img.code.size()) + 64;
  monitor::Lockstep runner(r.build.images, r.mon);
  auto rep = runner.run({sched(4, 0, pc_set(sled))});
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::Stall);
  CHECK(rep.verdict->slice == 4);
}

TEST_CASE("symmetric traps are a detection, not a clean exit") {
  auto r = rig("loop_sum.asm");
  monitor::Lockstep runner(r.build.images, r.mon);
  // unaligned shift in every replica: all trap with the same cause
  auto rep = runner.run({sched(5, 0, pc_delta(2)), sched(5, 1, pc_delta(2))});
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::SemanticDivergence);
  CHECK(rep.verdict->detail.find("trap") != std::string::npos);
  CHECK(!rep.clean);
}

TEST_CASE("asymmetric halt is a semantic divergence") {
  auto r = rig("loop_sum.asm");
  std::string err;
  auto base = faults::compute_baseline(r.build.images, r.mon, &err);
  REQUIRE(err.empty());
  monitor::Lockstep runner(r.build.images, r.mon);
  // one replica re-runs earlier code at the final boundary while the other
  // retires its halt
  auto rep = runner.run({sched(base.slices - 1, 0, pc_delta(-8))});
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::SemanticDivergence);
  CHECK(rep.verdict->detail.find("halt") != std::string::npos);
}

TEST_CASE("structural layer preempts semantic comparison in the same slice") {
  auto r = rig("loop_sum.asm");
  // collapse both pcs onto replica 0's code: records would also mismatch
  // eventually, but the boundary check must win
  std::uint32_t k = r.build.images[0].entry_pc;
  monitor::Lockstep runner(r.build.images, r.mon);
  auto rep = runner.run({sched(2, 0, pc_set(k)), sched(2, 1, pc_set(k))});
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == VerdictKind::StructuralPc);
  CHECK(rep.verdict->phase == monitor::Phase::Boundary);
}

TEST_CASE("fault-free slices stay within the derived step budget") {
  for (const auto& name : {"loop_sum.asm", "call_chain.asm", "frag_afx.asm"}) {
    CAPTURE(name);
    auto r = rig(name);
    unsigned cap = layout::required_slice_step_cap(r.program, r.build.images);
    monitor::Lockstep runner(r.build.images, r.mon);
    unsigned max_steps = 0;
    runner.observer = [&](const monitor::SliceOutcome& out,
                          const std::vector<machine::ReplicaState>&) {
      for (const auto& rr : out.rep) max_steps = std::max(max_steps, rr.physical_steps);
    };
    auto rep = runner.run({});
    REQUIRE(rep.clean);
    CHECK(max_steps <= cap);
  }
}

TEST_CASE("slice budget converts runaway executions into timeouts") {
  auto r = rig("loop_sum.asm");
  r.mon.slice_budget = 200;
  monitor::Lockstep runner(r.build.images, r.mon);
  // freeze the loop step increment in both replicas: i never advances
  auto rep = runner.run({sched(6, 0, reg_set(4, 0)), sched(6, 1, reg_set(4, 0))});
  CHECK(!rep.clean);
  CHECK(!rep.verdict.has_value());
  CHECK(rep.timeout);
  CHECK(rep.slices == 200);
}

TEST_CASE("mutations naming unmapped memory abort with a schedule error") {
  auto r = rig("loop_sum.asm");
  Mutation m;
  m.kind = Mutation::Kind::MemSet;
  m.addr = 0x9999000;
  monitor::Lockstep runner(r.build.images, r.mon);
  auto rep = runner.run({sched(1, 0, m)});
  CHECK(!rep.error.empty());
  CHECK(!rep.clean);
}

TEST_CASE("register files agree at boundaries while trace prefixes agree") {
  // the temporal-coupling audit used by the acceptance suite: compare
  // non-address registers at every boundary preceding detection
  auto r = rig("loop_sum.asm");
  monitor::Lockstep runner(r.build.images, r.mon);
  bool coupled = true;
  runner.observer = [&](const monitor::SliceOutcome& out,
                        const std::vector<machine::ReplicaState>& states) {
    if (out.verdict) return;
    for (unsigned reg = 0; reg < isa::kNumRegs; ++reg) {
      if (reg == isa::kSpReg) continue;
      bool addr_reg = false;
      for (const auto& st : states) addr_reg |= st.tainted(reg);
      if (addr_reg) continue;
      for (std::size_t i = 1; i < states.size(); ++i)
        if (states[i].regs[reg] != states[0].regs[reg]) coupled = false;
    }
  };
  auto rep = runner.run({sched(9, 0, pc_delta(16)), sched(9, 1, pc_delta(16))});
  REQUIRE(rep.verdict.has_value());
  CHECK(coupled);
}

TEST_CASE("verdict kinds map onto the documented exit codes") {
  CHECK(monitor::exit_code(std::nullopt) == 0);
  CHECK(monitor::exit_code(VerdictKind::Ok) == 0);
  CHECK(monitor::exit_code(VerdictKind::SemanticDivergence) == 10);
  CHECK(monitor::exit_code(VerdictKind::StructuralPc) == 11);
  CHECK(monitor::exit_code(VerdictKind::StructuralAddr) == 12);
  CHECK(monitor::exit_code(VerdictKind::Stall) == 13);
}
