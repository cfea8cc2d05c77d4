#include "divex/monitor.hpp"

#include <sstream>

namespace divex::monitor {

const char* verdict_name(VerdictKind k) {
  switch (k) {
    case VerdictKind::Ok: return "ok";
    case VerdictKind::SemanticDivergence: return "semantic-divergence";
    case VerdictKind::StructuralPc: return "structural-pc-violation";
    case VerdictKind::StructuralAddr: return "structural-addr-violation";
    case VerdictKind::Stall: return "stall";
  }
  return "?";
}

int exit_code(const std::optional<VerdictKind>& k) {
  if (!k || *k == VerdictKind::Ok) return 0;
  switch (*k) {
    case VerdictKind::SemanticDivergence: return 10;
    case VerdictKind::StructuralPc: return 11;
    case VerdictKind::StructuralAddr: return 12;
    case VerdictKind::Stall: return 13;
    default: return 0;
  }
}

Lockstep::Lockstep(const std::vector<layout::ReplicaImage>& images, const MonitorConfig& cfg)
    : images_(images), cfg_(cfg) {
  for (const auto& img : images_) {
    states_.push_back(machine::reset(img, cfg_.excluded_shared));
    std::map<std::uint32_t, prog::LogicalInstrId> rev;
    for (const auto& [id, addr] : img.phi_code) rev[addr] = id;
    reverse_phi_.push_back(std::move(rev));
  }
  traces_.resize(images_.size());
}

bool Lockstep::all_halted_normally() const {
  for (const auto& st : states_)
    if (!st.halted || st.trap != machine::TrapCause::None) return false;
  return true;
}

bool Lockstep::excluded(std::uint32_t addr) const {
  for (const auto& r : cfg_.excluded_shared)
    if (r.contains(addr)) return true;
  return false;
}

std::optional<Verdict> Lockstep::check_pcs(const std::vector<std::uint32_t>& pcs, Phase phase,
                                           std::uint64_t slice) const {
  const std::size_t n = pcs.size();
  if (n < 2) return std::nullopt;
  if (cfg_.pc_policy == Policy::AllEqualCollapse) {
    for (std::size_t i = 1; i < n; ++i)
      if (pcs[i] != pcs[0]) return std::nullopt;
    Verdict v;
    v.kind = VerdictKind::StructuralPc;
    v.layer = "structural-pc";
    v.phase = phase;
    v.slice = slice;
    v.witness_a = 0;
    v.witness_b = 1;
    std::ostringstream os;
    os << "all pcs equal: 0x" << std::hex << pcs[0];
    v.detail = os.str();
    return v;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (pcs[i] == pcs[j]) {
        Verdict v;
        v.kind = VerdictKind::StructuralPc;
        v.layer = "structural-pc";
        v.phase = phase;
        v.slice = slice;
        v.witness_a = unsigned(i);
        v.witness_b = unsigned(j);
        std::ostringstream os;
        os << "pc collapse at 0x" << std::hex << pcs[i];
        v.detail = os.str();
        return v;
      }
  return std::nullopt;
}

SliceOutcome Lockstep::run_slice() {
  SliceOutcome out;
  out.slice = slice_;
  const std::size_t n = states_.size();
  for (const auto& st : states_) out.boundary_pcs.push_back(st.pc);

  // Structural pre-check: a collapse is flagged before anything at the
  // corrupted pc executes.
  if (auto v = check_pcs(out.boundary_pcs, Phase::Boundary, slice_)) {
    out.verdict = v;
    ++slice_;
    return out;
  }

  out.rep.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto& st = states_[r];
    auto& rs = out.rep[r];
    while (true) {
      machine::StepEvent ev = machine::step(st, images_[r]);
      ++rs.physical_steps;
      if (ev.effective_address) rs.data_ea = ev.effective_address;
      if (ev.stack_address) rs.stack_ea = ev.stack_address;
      if (ev.trap != machine::TrapCause::None) {
        rs.trapped = true;
        rs.trap = ev.trap;
        rs.fetch_pc = ev.pc_before;
        rs.record = canonical::canonicalize(ev);
        break;
      }
      if (!ev.is_transparent) {
        rs.record = canonical::canonicalize(ev);
        rs.fetch_pc = ev.pc_before;
        rs.halted_normally = ev.halted_normally;
        if (auto it = reverse_phi_[r].find(ev.pc_before); it != reverse_phi_[r].end())
          rs.retired_id = it->second;
        break;
      }
      if (rs.physical_steps >= cfg_.max_steps_per_slice) {
        rs.stalled = true;
        rs.fetch_pc = st.pc;
        break;
      }
    }
  }

  auto mk = [&](VerdictKind kind, const char* layer, unsigned a, unsigned b, std::string detail) {
    Verdict v;
    v.kind = kind;
    v.layer = layer;
    v.phase = Phase::Slice;
    v.slice = slice_;
    v.witness_a = a;
    v.witness_b = b;
    v.detail = std::move(detail);
    return v;
  };

  // Layer 1: pc comparison at the fetch points of this slice's retirements.
  std::vector<std::uint32_t> fetch_pcs;
  for (const auto& rs : out.rep) fetch_pcs.push_back(rs.fetch_pc);
  if (auto v = check_pcs(fetch_pcs, Phase::Slice, slice_)) {
    out.verdict = v;
    ++slice_;
    return out;
  }

  // Layer 2: effective-address non-aliasing, data and stack slots alike.
  auto addr_pair_hit = [&](const std::optional<std::uint32_t>& a,
                           const std::optional<std::uint32_t>& b) {
    return a && b && *a == *b && !excluded(*a);
  };
  if (!out.verdict) {
    bool all_equal_data = true, all_equal_stack = true;
    for (std::size_t i = 0; i < n && (all_equal_data || all_equal_stack); ++i) {
      if (!out.rep[i].data_ea || (i && !addr_pair_hit(out.rep[i].data_ea, out.rep[0].data_ea)))
        all_equal_data = false;
      if (!out.rep[i].stack_ea || (i && !addr_pair_hit(out.rep[i].stack_ea, out.rep[0].stack_ea)))
        all_equal_stack = false;
    }
    for (std::size_t i = 0; i < n && !out.verdict; ++i)
      for (std::size_t j = i + 1; j < n && !out.verdict; ++j) {
        bool data_hit = addr_pair_hit(out.rep[i].data_ea, out.rep[j].data_ea);
        bool stack_hit = addr_pair_hit(out.rep[i].stack_ea, out.rep[j].stack_ea);
        if (cfg_.addr_policy == Policy::AllEqualCollapse) {
          data_hit = data_hit && all_equal_data;
          stack_hit = stack_hit && all_equal_stack;
        }
        if (data_hit || stack_hit) {
          std::ostringstream os;
          os << "effective-address collapse at 0x" << std::hex
             << (data_hit ? *out.rep[i].data_ea : *out.rep[i].stack_ea);
          out.verdict = mk(VerdictKind::StructuralAddr, "structural-addr", unsigned(i), unsigned(j),
                           os.str());
        }
      }
  }

  // Layer 3: stall (a replica burned the step budget without retiring).
  if (!out.verdict)
    for (std::size_t r = 0; r < n; ++r)
      if (out.rep[r].stalled) {
        out.verdict = mk(VerdictKind::Stall, "stall", unsigned(r), unsigned(r),
                         "no retirement within the physical step budget");
        break;
      }

  // Layer 4: semantic comparison. Correct execution never traps, so any trap
  // is itself a detection event even when every replica traps identically.
  if (!out.verdict) {
    for (std::size_t r = 0; r < n && !out.verdict; ++r)
      if (out.rep[r].trapped)
        out.verdict = mk(VerdictKind::SemanticDivergence, "semantic", unsigned(r), unsigned(r),
                         std::string("trap: ") + machine::trap_name(out.rep[r].trap));
    for (std::size_t i = 1; i < n && !out.verdict; ++i) {
      if (!(*out.rep[i].record == *out.rep[0].record))
        out.verdict = mk(VerdictKind::SemanticDivergence, "semantic", 0, unsigned(i),
                         "record mismatch: " + out.rep[0].record->to_string() + " vs " +
                             out.rep[i].record->to_string());
    }
  }

  if (cfg_.keep_traces && !out.verdict)
    for (std::size_t r = 0; r < n; ++r)
      if (out.rep[r].record && !out.rep[r].trapped) traces_[r].append(*out.rep[r].record);

  ++slice_;
  return out;
}

RunReport Lockstep::run(const std::vector<ScheduledMutation>& schedule) {
  RunReport rep;
  std::multimap<std::uint64_t, const ScheduledMutation*> by_slice;
  for (const auto& m : schedule) by_slice.insert({m.slice, &m});

  while (slice_ < cfg_.slice_budget) {
    if (all_halted_normally()) {
      rep.clean = true;
      break;
    }
    auto [lo, hi] = by_slice.equal_range(slice_);
    for (auto it = lo; it != hi; ++it) {
      const ScheduledMutation& m = *it->second;
      if (m.replica >= states_.size() || !machine::apply_mutation(states_[m.replica], m.mutation)) {
        rep.error = "mutation at slice " + std::to_string(m.slice) + " names an unmapped address";
        rep.slices = slice_;
        return rep;
      }
    }
    SliceOutcome out = run_slice();
    if (observer) observer(out, states_);
    if (out.verdict) {
      rep.verdict = out.verdict;
      break;
    }
  }
  rep.slices = slice_;
  if (!rep.clean && !rep.verdict && rep.error.empty()) rep.timeout = true;
  if (cfg_.keep_traces) rep.traces = traces_;
  return rep;
}

}  // namespace divex::monitor
