#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "divex/faults.hpp"
#include "divex/io.hpp"

using namespace divex;
using faults::CampaignSpec;
using faults::Correlation;
using faults::Family;
using machine::Mutation;

namespace {

CampaignSpec spec_for(const std::string& program, Family family) {
  CampaignSpec s;
  s.program_source = io::read_text_file(std::string(DIVEX_CORPUS_DIR) + "/" + program);
  s.div = layout::DiversificationConfig::defaults(2);
  s.family = family;
  s.samples = 64;
  s.seed = 17;
  s.workers = 2;
  return s;
}

struct Built {
  prog::LogicalProgram program;
  layout::BuildResult build;
  faults::Baseline base;
  monitor::MonitorConfig mon;
};

Built prepare(const CampaignSpec& s) {
  auto parsed = prog::parse(s.program_source);
  REQUIRE(parsed.ok());
  Built b{*parsed.program, layout::diversify(*parsed.program, s.div), {}, s.mon};
  REQUIRE(b.build.ok);
  b.mon.excluded_shared = s.div.excluded_shared;
  b.mon.max_steps_per_slice = layout::required_slice_step_cap(b.program, b.build.images) + 1;
  std::string err;
  b.base = faults::compute_baseline(b.build.images, b.mon, &err);
  REQUIRE(err.empty());
  return b;
}

}  // namespace

TEST_CASE("correlation tags are validated against the mutation set") {
  faults::Perturbation p;
  p.tag = Correlation::Fully;
  Mutation m;
  m.kind = Mutation::Kind::PcDelta;
  m.delta = 8;
  p.mutations = {{0, m}, {1, m}};
  CHECK(p.check_tag(2).empty());

  p.mutations = {{0, m}};
  CHECK(!p.check_tag(2).empty());  // fully correlated must cover every replica

  Mutation other = m;
  other.delta = 12;
  p.mutations = {{0, m}, {1, other}};
  CHECK(!p.check_tag(2).empty());  // differing parameters are not fully correlated
  p.tag = Correlation::Partial;
  CHECK(p.check_tag(2).empty());
  p.mutations = {{0, m}, {1, m}};
  CHECK(!p.check_tag(2).empty());  // identical parameters are not partial
  p.tag = Correlation::Single;
  p.mutations = {{1, m}};
  CHECK(p.check_tag(2).empty());
}

TEST_CASE("correlated sweep enumerates deterministically with exclusions accounted") {
  auto s = spec_for("loop_sum.asm", Family::CorrelatedPcSweep);
  s.exhaustive = true;
  s.delta_min = 4;
  s.delta_max = 64;
  s.site_min = 10;
  s.site_max = 19;  // ten sites
  auto b = prepare(s);
  std::uint64_t excluded = 0;
  auto ps = faults::generate(s, b.build.images, b.base, &excluded);
  // 10 sites x 61 magnitudes x 2 signs, minus the trials whose landings keep
  // every replica on one logical instruction
  CHECK(ps.size() + excluded == 10 * 61 * 2);
  CHECK(excluded > 0);
  auto ps2 = faults::generate(s, b.build.images, b.base, nullptr);
  REQUIRE(ps.size() == ps2.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CHECK(ps[i].trigger == ps2[i].trigger);
    CHECK(ps[i].describe() == ps2[i].describe());
    CHECK(ps[i].tag == Correlation::Fully);
  }
}

TEST_CASE("single-replica shift of two bytes reproduces the nop-landing scenario") {
  // one replica lands mid-word or on padding; the other retires normally:
  // canonical equivalence is impossible and detection is immediate
  auto s = spec_for("loop_sum.asm", Family::SinglePcRandom);
  auto b = prepare(s);
  faults::Perturbation p;
  p.trigger = 6;
  p.tag = Correlation::Single;
  Mutation m;
  m.kind = Mutation::Kind::PcDelta;
  m.delta = 2;
  p.mutations = {{0, m}};
  REQUIRE(p.check_tag(2).empty());
  monitor::Lockstep runner(b.build.images, b.mon);
  auto rep = runner.run({{p.trigger, 0, m}});
  REQUIRE(rep.verdict.has_value());
  CHECK(rep.verdict->kind == monitor::VerdictKind::SemanticDivergence);
  CHECK(rep.verdict->slice == 6);
}

TEST_CASE("null-pointer family zeroes the dereference register everywhere") {
  auto s = spec_for("string_copy.asm", Family::NullPointer);
  auto b = prepare(s);
  auto ps = faults::generate(s, b.build.images, b.base, nullptr);
  REQUIRE(!ps.empty());
  for (const auto& p : ps) {
    CHECK(p.tag == Correlation::Fully);
    REQUIRE(p.mutations.size() == 2);
    for (const auto& [r, m] : p.mutations) {
      CHECK(m.kind == Mutation::Kind::RegSet);
      CHECK(m.value == 0);
    }
    CHECK(b.base.deref_reg[p.trigger].has_value());
  }
}

TEST_CASE("return-address family overwrites the live slot with one constant") {
  auto s = spec_for("call_chain.asm", Family::RetAddrOverwrite);
  auto b = prepare(s);
  auto ps = faults::generate(s, b.build.images, b.base, nullptr);
  REQUIRE(!ps.empty());
  for (const auto& p : ps) {
    REQUIRE(p.mutations.size() == 2);
    CHECK(p.mutations[0].second.kind == Mutation::Kind::MemSet);
    // one constant, per-replica slot addresses
    CHECK(p.mutations[0].second.value == p.mutations[1].second.value);
    CHECK(p.mutations[0].second.addr != p.mutations[1].second.addr);
    // the constant points into some replica's code region
    bool inside = false;
    for (const auto& img : b.build.images)
      inside |= img.code_region.contains(p.mutations[0].second.value);
    CHECK(inside);
  }
}

TEST_CASE("return-address campaign detects every trial structurally at the fetch") {
  auto s = spec_for("call_chain.asm", Family::RetAddrOverwrite);
  s.samples = 100;
  auto result = faults::execute_campaign(s);
  REQUIRE(result.ok());
  CHECK(result.agg.trials == 100);
  CHECK(result.agg.detected == 100);
  CHECK(result.agg.by_verdict.at("structural-pc-violation") == 100);
}

TEST_CASE("campaign executions are reproducible byte for byte") {
  auto s = spec_for("loop_sum.asm", Family::PartialPcRandom);
  s.samples = 200;
  s.workers = 4;
  auto a = faults::execute_campaign(s);
  auto b = faults::execute_campaign(s);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(io::campaign_result_json(a).dump() == io::campaign_result_json(b).dump());
  s.seed ^= 1;
  auto c = faults::execute_campaign(s);
  CHECK(io::campaign_result_json(a).dump() != io::campaign_result_json(c).dump());
}

TEST_CASE("partial and single families stay detectable end to end") {
  for (auto family : {Family::PartialPcRandom, Family::SinglePcRandom}) {
    auto s = spec_for("table_walk.asm", family);
    s.samples = 500;
    s.workers = 4;
    auto result = faults::execute_campaign(s);
    REQUIRE(result.ok());
    CHECK(result.agg.trials == 500);
    CHECK(result.agg.undetected == 0);
    CHECK(result.agg.timeouts == 0);
  }
}

TEST_CASE("frozen campaign baseline: partial shifts on the summation loop") {
  // regression pin for the probabilistic-regime campaign: the seeded stream
  // below detected every trial with the latency profile recorded here
  auto s = spec_for("loop_sum.asm", Family::PartialPcRandom);
  s.samples = 1000;
  s.seed = 20260808;
  s.workers = 4;
  auto result = faults::execute_campaign(s);
  REQUIRE(result.ok());
  CHECK(result.agg.detected == 1000);
  CHECK(result.agg.undetected == 0);
  CHECK(result.agg.max_latency == 1);
}

TEST_CASE("data flips are single-replica and surface as loaded-value splits") {
  auto s = spec_for("table_walk.asm", Family::DataBitflip);
  s.samples = 200;
  auto b = prepare(s);
  auto ps = faults::generate(s, b.build.images, b.base, nullptr);
  REQUIRE(ps.size() == 200);
  for (const auto& p : ps) {
    CHECK(p.tag == Correlation::Single);
    CHECK(p.mutations.size() == 1);
    CHECK(p.mutations[0].second.kind == Mutation::Kind::MemBitflip);
  }
  auto result = faults::execute_campaign(s);
  REQUIRE(result.ok());
  CHECK(result.agg.detected > 0);  // flips read back before halt diverge
  for (const auto& t : result.trials)
    if (!t.undetected && !t.timeout) CHECK(t.verdict == "semantic-divergence");
}

TEST_CASE("runaway corruptions are reported as timeouts, not detections") {
  auto s = spec_for("loop_sum.asm", Family::CorrelatedPcSweep);
  auto b = prepare(s);
  monitor::MonitorConfig mon = b.mon;
  mon.slice_budget = 4 * b.base.slices;
  Mutation freeze;
  freeze.kind = Mutation::Kind::RegSet;
  freeze.reg = 4;  // the loop step register
  freeze.value = 0;
  monitor::Lockstep runner(b.build.images, mon);
  auto rep = runner.run({{6, 0, freeze}, {6, 1, freeze}});
  CHECK(rep.timeout);
}

TEST_CASE("campaign csv carries one row per trial with the documented columns") {
  auto s = spec_for("string_copy.asm", Family::NullPointer);
  s.samples = 10;
  auto result = faults::execute_campaign(s);
  REQUIRE(result.ok());
  auto csv = faults::result_csv(result);
  CHECK(csv.find("trial_id,family,correlation,delta,site,verdict,layer,latency,undetected") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);  // header + 10 rows
  CHECK(csv.find("null-pointer") != std::string::npos);
  CHECK(csv.find("structural-addr-violation") != std::string::npos);
}
