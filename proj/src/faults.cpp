#include "divex/faults.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

namespace divex::faults {

const char* correlation_name(Correlation c) {
  switch (c) {
    case Correlation::Fully: return "fully-correlated";
    case Correlation::Partial: return "partial";
    case Correlation::Single: return "single";
  }
  return "?";
}

const char* family_name(Family f) {
  switch (f) {
    case Family::CorrelatedPcSweep: return "correlated-pc-sweep";
    case Family::PartialPcRandom: return "partial-pc-random";
    case Family::SinglePcRandom: return "single-pc-random";
    case Family::RetAddrOverwrite: return "ret-addr-overwrite";
    case Family::NullPointer: return "null-pointer";
    case Family::ValueAsPointer: return "value-as-pointer";
    case Family::DataBitflip: return "data-bitflip";
  }
  return "?";
}

std::optional<Family> family_from_name(const std::string& s) {
  for (Family f : {Family::CorrelatedPcSweep, Family::PartialPcRandom, Family::SinglePcRandom,
                   Family::RetAddrOverwrite, Family::NullPointer, Family::ValueAsPointer,
                   Family::DataBitflip})
    if (s == family_name(f)) return f;
  return std::nullopt;
}

std::string Perturbation::check_tag(unsigned n) const {
  std::vector<bool> hit(n, false);
  for (const auto& [r, m] : mutations) {
    if (r >= n) return "mutation targets nonexistent replica";
    hit[r] = true;
  }
  unsigned targets = unsigned(std::count(hit.begin(), hit.end(), true));
  switch (tag) {
    case Correlation::Single:
      if (targets != 1) return "single-replica tag with multiple targets";
      break;
    case Correlation::Fully: {
      if (targets != n) return "fully-correlated tag must target every replica";
      for (const auto& [r, m] : mutations)
        if (!(m == mutations.front().second)) return "fully-correlated tag with differing mutations";
      break;
    }
    case Correlation::Partial: {
      if (targets != n) return "partial tag must target every replica";
      bool all_same = true;
      for (const auto& [r, m] : mutations)
        if (!(m == mutations.front().second)) all_same = false;
      if (all_same) return "partial tag with identical mutations";
      break;
    }
  }
  return {};
}

std::string Perturbation::describe() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& [r, m] : mutations) {
    if (!first) os << "|";
    first = false;
    os << "r" << r << ":";
    switch (m.kind) {
      case machine::Mutation::Kind::PcDelta: os << "pc+=" << m.delta; break;
      case machine::Mutation::Kind::PcSet: os << "pc=0x" << std::hex << m.addr << std::dec; break;
      case machine::Mutation::Kind::RegSet: os << "r" << m.reg << "=" << m.value; break;
      case machine::Mutation::Kind::RegBitflip: os << "r" << m.reg << "^bit" << m.bit; break;
      case machine::Mutation::Kind::RegCopy: os << "r" << m.reg << "=r" << m.src_reg; break;
      case machine::Mutation::Kind::MemSet:
        os << "[0x" << std::hex << m.addr << "]=0x" << m.value << std::dec;
        break;
      case machine::Mutation::Kind::MemBitflip:
        os << "[0x" << std::hex << m.addr << std::dec << "]^bit" << m.bit;
        break;
    }
  }
  return os.str();
}

Baseline compute_baseline(const std::vector<layout::ReplicaImage>& images,
                          const monitor::MonitorConfig& mon, std::string* error) {
  Baseline base;
  monitor::MonitorConfig cfg = mon;
  cfg.keep_traces = false;
  monitor::Lockstep runner(images, cfg);
  const std::size_t n = images.size();
  std::vector<std::vector<std::uint32_t>> ret_stacks(n);

  auto snapshot_regs = [&](const std::vector<machine::ReplicaState>& states) {
    std::vector<std::array<std::uint32_t, isa::kNumRegs>> regs;
    regs.reserve(n);
    for (const auto& st : states) regs.push_back(st.regs);
    base.regs.push_back(std::move(regs));
  };
  snapshot_regs(runner.states());  // boundary 0

  runner.observer = [&](const monitor::SliceOutcome& out,
                        const std::vector<machine::ReplicaState>& states) {
    base.boundary_pcs.push_back(out.boundary_pcs);
    // return slots live at the boundary that opened this slice (read before
    // applying this slice's call/ret effects)
    std::vector<std::optional<std::uint32_t>> slots;
    for (std::size_t r = 0; r < n; ++r)
      slots.push_back(ret_stacks[r].empty() ? std::optional<std::uint32_t>{}
                                            : std::optional<std::uint32_t>{ret_stacks[r].back()});
    base.ret_slot.push_back(std::move(slots));

    std::optional<prog::LogicalInstrId> rid;
    std::optional<unsigned> dreg;
    if (!out.rep.empty()) {
      rid = out.rep[0].retired_id;
      const auto& rec = out.rep[0].record;
      if (rec && !out.rep[0].trapped &&
          (rec->opcode == std::uint8_t(isa::Opcode::LOAD) ||
           rec->opcode == std::uint8_t(isa::Opcode::STORE)))
        dreg = rec->src1;
      for (std::size_t r = 0; r < n; ++r) {
        const auto& rs = out.rep[r];
        if (rs.record && !rs.trapped) {
          if (rs.record->opcode == std::uint8_t(isa::Opcode::CALL) && rs.stack_ea)
            ret_stacks[r].push_back(*rs.stack_ea);
          if (rs.record->opcode == std::uint8_t(isa::Opcode::RET) && !ret_stacks[r].empty())
            ret_stacks[r].pop_back();
        }
      }
    }
    base.retired_id.push_back(rid);
    base.deref_reg.push_back(dreg);
    snapshot_regs(states);  // boundary slice+1
  };

  auto rep = runner.run({});
  if (!rep.clean) {
    if (error) *error = rep.verdict ? "baseline run produced a verdict: " + rep.verdict->layer
                                    : "baseline run did not terminate cleanly";
    return base;
  }
  base.slices = rep.slices;
  return base;
}

namespace {

using layout::LandingKey;
using layout::LandingResolver;
using machine::Mutation;

struct GenCtx {
  const CampaignSpec& spec;
  const std::vector<layout::ReplicaImage>& images;
  const Baseline& base;
  std::vector<LandingResolver> resolvers;
  layout::Rng rng;
  std::uint64_t excluded = 0;

  GenCtx(const CampaignSpec& s, const std::vector<layout::ReplicaImage>& im, const Baseline& b)
      : spec(s), images(im), base(b), rng(layout::mix_seed(s.seed, 0xCA4Aull, 0, 0)) {
    for (const auto& img : im) resolvers.emplace_back(img);
  }

  std::uint64_t site_lo() const { return std::min(spec.site_min, base.slices - 1); }
  std::uint64_t site_hi() const {
    return std::min(spec.site_max, base.slices ? base.slices - 1 : 0);
  }

  // True when every replica lands on the same logical instruction: the
  // perturbed executions stay semantically identical in all replicas, which no
  // replication scheme can observe. Such draws are re-rolled and counted.
  bool equivalent_everywhere(std::uint64_t site, const std::vector<std::int64_t>& deltas) const {
    std::optional<prog::LogicalInstrId> common;
    for (std::size_t r = 0; r < images.size(); ++r) {
      std::uint32_t pend = base.boundary_pcs[site][r];
      auto key = resolvers[r].resolve(std::uint32_t(std::int64_t(pend) + deltas[r]));
      if (key.kind != LandingKey::Kind::Instr) return false;
      if (!common)
        common = key.id;
      else if (!(*common == key.id))
        return false;
    }
    return true;
  }
};

std::vector<Perturbation> gen_correlated_sweep(GenCtx& g) {
  std::vector<Perturbation> out;
  for (std::uint64_t site = g.site_lo(); site <= g.site_hi(); ++site)
    for (std::int64_t mag = g.spec.delta_min; mag <= std::int64_t(g.spec.delta_max); ++mag)
      for (int sign : {+1, -1}) {
        std::int64_t delta = sign * mag;
        // landing every replica on one logical instruction leaves all
        // continuations identical; like the zero mutation, there is nothing a
        // replica comparison could ever see, so the trial is set aside
        if (g.equivalent_everywhere(site,
                                    std::vector<std::int64_t>(g.spec.div.n_replicas, delta))) {
          ++g.excluded;
          continue;
        }
        Perturbation p;
        p.trigger = site;
        p.tag = Correlation::Fully;
        Mutation m;
        m.kind = Mutation::Kind::PcDelta;
        m.delta = delta;
        for (unsigned r = 0; r < g.spec.div.n_replicas; ++r) p.mutations.push_back({r, m});
        out.push_back(std::move(p));
      }
  return out;
}

std::vector<Perturbation> gen_pc_random(GenCtx& g, bool single) {
  std::vector<Perturbation> out;
  const unsigned n = g.spec.div.n_replicas;
  while (out.size() < g.spec.samples) {
    std::uint64_t site = g.site_lo() + g.rng.below(g.site_hi() - g.site_lo() + 1);
    std::vector<std::int64_t> deltas(n, 0);
    Perturbation p;
    p.trigger = site;
    if (single) {
      unsigned target = unsigned(g.rng.below(n));
      std::int64_t mag = 1 + std::int64_t(g.rng.below(g.spec.delta_max));
      std::int64_t d = g.rng.below(2) ? mag : -mag;
      deltas[target] = d;
      p.tag = Correlation::Single;
      Mutation m;
      m.kind = Mutation::Kind::PcDelta;
      m.delta = d;
      p.mutations.push_back({target, m});
      // a perturbed replica that still retires its intended instruction makes
      // the trial a no-op everywhere
      std::optional<prog::LogicalInstrId> intended = g.base.retired_id[site];
      auto key = g.resolvers[target].resolve(
          std::uint32_t(std::int64_t(g.base.boundary_pcs[site][target]) + d));
      if (key.kind == LandingKey::Kind::Instr && intended && key.id == *intended) {
        ++g.excluded;
        continue;
      }
    } else {
      bool all_same = true;
      for (unsigned r = 0; r < n; ++r) {
        std::int64_t mag = 1 + std::int64_t(g.rng.below(g.spec.delta_max));
        deltas[r] = g.rng.below(2) ? mag : -mag;
        if (r && deltas[r] != deltas[0]) all_same = false;
      }
      if (all_same) continue;  // that would be the fully-correlated family
      p.tag = Correlation::Partial;
      for (unsigned r = 0; r < n; ++r) {
        Mutation m;
        m.kind = Mutation::Kind::PcDelta;
        m.delta = deltas[r];
        p.mutations.push_back({r, m});
      }
      if (g.equivalent_everywhere(site, deltas)) {
        ++g.excluded;
        continue;
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Perturbation> gen_ret_addr(GenCtx& g) {
  std::vector<Perturbation> out;
  const unsigned n = g.spec.div.n_replicas;
  std::vector<std::uint64_t> sites;
  for (std::uint64_t s = g.site_lo(); s <= g.site_hi(); ++s) {
    bool all_live = true;
    for (unsigned r = 0; r < n; ++r)
      if (!g.base.ret_slot[s][r]) all_live = false;
    if (all_live) sites.push_back(s);
  }
  if (sites.empty()) return out;
  while (out.size() < g.spec.samples) {
    std::uint64_t site = sites[g.rng.below(sites.size())];
    unsigned owner = unsigned(g.rng.below(n));
    const auto& img = g.images[owner];
    std::uint32_t span = std::uint32_t(img.code.size()) / isa::kInstrWidth;
    std::uint32_t k = img.code_base + isa::kInstrWidth * std::uint32_t(g.rng.below(span));
    Perturbation p;
    p.trigger = site;
    p.tag = Correlation::Partial;  // same constant, per-replica slot addresses
    for (unsigned r = 0; r < n; ++r) {
      Mutation m;
      m.kind = Mutation::Kind::MemSet;
      m.addr = *g.base.ret_slot[site][r];
      m.value = k;
      p.mutations.push_back({r, m});
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::uint64_t> deref_sites(GenCtx& g) {
  std::vector<std::uint64_t> sites;
  for (std::uint64_t s = g.site_lo(); s <= g.site_hi(); ++s)
    if (g.base.deref_reg[s]) sites.push_back(s);
  return sites;
}

std::vector<Perturbation> gen_null_pointer(GenCtx& g) {
  std::vector<Perturbation> out;
  auto sites = deref_sites(g);
  if (sites.empty()) return out;
  for (std::uint64_t i = 0; i < g.spec.samples; ++i) {
    std::uint64_t site = sites[g.rng.below(sites.size())];
    Perturbation p;
    p.trigger = site;
    p.tag = Correlation::Fully;
    Mutation m;
    m.kind = Mutation::Kind::RegSet;
    m.reg = *g.base.deref_reg[site];
    m.value = 0;
    for (unsigned r = 0; r < g.spec.div.n_replicas; ++r) p.mutations.push_back({r, m});
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Perturbation> gen_value_as_pointer(GenCtx& g) {
  std::vector<Perturbation> out;
  auto sites = deref_sites(g);
  if (sites.empty()) return out;
  const unsigned n = g.spec.div.n_replicas;
  auto excluded_value = [&](std::uint32_t v) {
    for (const auto& r : g.spec.div.excluded_shared)
      if (r.contains(v)) return true;
    return false;
  };
  std::uint64_t guard = 0;
  while (out.size() < g.spec.samples && guard < 64 * (g.spec.samples + 1)) {
    ++guard;
    std::uint64_t site = sites[g.rng.below(sites.size())];
    unsigned preg = *g.base.deref_reg[site];
    unsigned src = unsigned(g.rng.below(isa::kSpReg));  // r0..r14
    if (src == preg) continue;
    // the copied value must be a computation result, i.e. identical across
    // replicas at this boundary, and not a legitimately shared address
    std::uint32_t v0 = g.base.regs[site][0][src];
    bool invariant = true;
    for (unsigned r = 1; r < n; ++r)
      if (g.base.regs[site][r][src] != v0) invariant = false;
    if (!invariant || excluded_value(v0)) continue;
    Perturbation p;
    p.trigger = site;
    p.tag = Correlation::Fully;
    Mutation m;
    m.kind = Mutation::Kind::RegCopy;
    m.reg = preg;
    m.src_reg = src;
    for (unsigned r = 0; r < n; ++r) p.mutations.push_back({r, m});
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Perturbation> gen_data_bitflip(GenCtx& g) {
  std::vector<Perturbation> out;
  const unsigned n = g.spec.div.n_replicas;
  struct Span {
    unsigned replica;
    std::uint32_t lo, words;
  };
  std::vector<Span> spans;
  for (unsigned r = 0; r < n; ++r)
    if (!g.images[r].data.empty())
      spans.push_back({r, g.images[r].data_base, std::uint32_t(g.images[r].data.size()) / 4});
  if (spans.empty()) return out;
  for (std::uint64_t i = 0; i < g.spec.samples; ++i) {
    const Span& sp = spans[g.rng.below(spans.size())];
    std::uint64_t site = g.site_lo() + g.rng.below(g.site_hi() - g.site_lo() + 1);
    Perturbation p;
    p.trigger = site;
    p.tag = Correlation::Single;
    Mutation m;
    m.kind = Mutation::Kind::MemBitflip;
    m.addr = sp.lo + 4 * std::uint32_t(g.rng.below(sp.words));
    m.bit = unsigned(g.rng.below(32));
    p.mutations.push_back({sp.replica, m});
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<Perturbation> generate(const CampaignSpec& spec,
                                   const std::vector<layout::ReplicaImage>& images,
                                   const Baseline& base, std::uint64_t* excluded_equivalent) {
  GenCtx g(spec, images, base);
  std::vector<Perturbation> out;
  switch (spec.family) {
    case Family::CorrelatedPcSweep: out = gen_correlated_sweep(g); break;
    case Family::PartialPcRandom: out = gen_pc_random(g, false); break;
    case Family::SinglePcRandom: out = gen_pc_random(g, true); break;
    case Family::RetAddrOverwrite: out = gen_ret_addr(g); break;
    case Family::NullPointer: out = gen_null_pointer(g); break;
    case Family::ValueAsPointer: out = gen_value_as_pointer(g); break;
    case Family::DataBitflip: out = gen_data_bitflip(g); break;
  }
  for (const auto& p : out) {
    std::string err = p.check_tag(spec.div.n_replicas);
    if (!err.empty()) throw std::logic_error("generated perturbation inconsistent: " + err);
  }
  if (excluded_equivalent) *excluded_equivalent = g.excluded;
  return out;
}

CampaignResult execute_campaign(const CampaignSpec& spec) {
  CampaignResult res;
  res.name = spec.name;
  res.family = spec.family;
  res.seed = spec.seed;

  auto parsed = prog::parse(spec.program_source);
  if (!parsed.ok()) {
    res.error = "program does not parse";
    return res;
  }
  auto build = layout::diversify(*parsed.program, spec.div);
  if (!build.ok) {
    res.error = "build failed: " + build.error;
    return res;
  }

  monitor::MonitorConfig mon = spec.mon;
  mon.excluded_shared = spec.div.excluded_shared;
  mon.keep_traces = false;
  unsigned need = layout::required_slice_step_cap(*parsed.program, build.images);
  mon.max_steps_per_slice = std::max(mon.max_steps_per_slice, need + 1);

  std::string base_err;
  Baseline base = compute_baseline(build.images, mon, &base_err);
  if (!base_err.empty() || base.slices == 0) {
    res.error = "baseline failed: " + base_err;
    return res;
  }
  res.baseline_slices = base.slices;

  std::uint64_t excluded = 0;
  auto perturbations = generate(spec, build.images, base, &excluded);
  if (perturbations.empty()) {
    res.error = "family generated no trials for this program";
    return res;
  }

  monitor::MonitorConfig trial_cfg = mon;
  trial_cfg.slice_budget = std::max<std::uint64_t>(4 * base.slices, 64);

  res.trials.resize(perturbations.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= perturbations.size()) break;
      const Perturbation& p = perturbations[i];
      monitor::Lockstep runner(build.images, trial_cfg);
      std::vector<monitor::ScheduledMutation> sched;
      for (const auto& [r, m] : p.mutations) sched.push_back({p.trigger, r, m});
      auto rep = runner.run(sched);
      TrialResult& t = res.trials[i];
      t.trial = i;
      t.family = family_name(spec.family);
      t.correlation = correlation_name(p.tag);
      t.params = p.describe();
      t.site = p.trigger;
      if (rep.verdict) {
        t.verdict = monitor::verdict_name(rep.verdict->kind);
        t.layer = rep.verdict->layer;
        std::int64_t base_lat = std::int64_t(rep.verdict->slice) - std::int64_t(p.trigger);
        t.latency = base_lat + (rep.verdict->phase == monitor::Phase::Boundary ? 0 : 1);
      } else if (rep.clean) {
        t.verdict = "clean";
        t.undetected = true;
      } else {
        t.verdict = "timeout";
        t.timeout = true;
      }
    }
  };
  unsigned nworkers = std::max(1u, spec.workers);
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < nworkers; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  auto& agg = res.agg;
  agg.trials = res.trials.size();
  agg.excluded_equivalent = excluded;
  for (const auto& t : res.trials) {
    ++agg.by_verdict[t.verdict];
    if (t.timeout)
      ++agg.timeouts;
    else if (t.undetected)
      ++agg.undetected;
    else {
      ++agg.detected;
      ++agg.latency_histogram[t.latency];
      agg.max_latency = std::max(agg.max_latency, t.latency);
    }
  }
  agg.detection_rate = agg.trials ? double(agg.detected) / double(agg.trials) : 0.0;
  return res;
}

std::string result_csv(const CampaignResult& r) {
  std::ostringstream os;
  os << "trial_id,family,correlation,delta,site,verdict,layer,latency,undetected\n";
  for (const auto& t : r.trials) {
    os << t.trial << "," << t.family << "," << t.correlation << ",\"" << t.params << "\","
       << t.site << "," << t.verdict << "," << t.layer << "," << t.latency << ","
       << (t.undetected ? 1 : 0) << "\n";
  }
  return os.str();
}

}  // namespace divex::faults
