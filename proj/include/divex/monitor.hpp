#ifndef DIVEX_MONITOR_HPP
#define DIVEX_MONITOR_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "divex/canonical.hpp"
#include "divex/machine.hpp"

namespace divex::monitor {

enum class VerdictKind { Ok, SemanticDivergence, StructuralPc, StructuralAddr, Stall };
enum class Policy { PairwiseStrict, AllEqualCollapse };
enum class Phase { Boundary, Slice };  // fired before stepping vs. during the slice

const char* verdict_name(VerdictKind k);
int exit_code(const std::optional<VerdictKind>& k);

struct MonitorConfig {
  Policy pc_policy = Policy::PairwiseStrict;
  Policy addr_policy = Policy::PairwiseStrict;
  unsigned max_steps_per_slice = 16;  // >= 1 + longest fault-free transparent run
  std::vector<layout::Region> excluded_shared;
  std::uint64_t slice_budget = 1000000;
  bool keep_traces = true;
};

struct Verdict {
  VerdictKind kind = VerdictKind::Ok;
  std::string layer;  // structural-pc | structural-addr | stall | semantic
  Phase phase = Phase::Slice;
  std::uint64_t slice = 0;
  unsigned witness_a = 0, witness_b = 0;
  std::string detail;
};

struct ReplicaSliceResult {
  std::optional<canonical::CanonicalRecord> record;  // nullopt marks a stall
  bool stalled = false;
  bool trapped = false;
  machine::TrapCause trap = machine::TrapCause::None;
  std::uint32_t fetch_pc = 0;  // pc of the retired (or trapping) instruction
  std::optional<std::uint32_t> data_ea;
  std::optional<std::uint32_t> stack_ea;
  std::optional<prog::LogicalInstrId> retired_id;
  bool halted_normally = false;
  unsigned physical_steps = 0;
};

struct SliceOutcome {
  std::uint64_t slice = 0;
  std::vector<std::uint32_t> boundary_pcs;
  std::vector<ReplicaSliceResult> rep;
  std::optional<Verdict> verdict;
};

struct ScheduledMutation {
  std::uint64_t slice = 0;  // applied at the boundary entering this slice
  unsigned replica = 0;
  machine::Mutation mutation;
};

struct RunReport {
  std::optional<Verdict> verdict;
  bool clean = false;
  bool timeout = false;
  std::uint64_t slices = 0;
  std::vector<canonical::CanonicalTrace> traces;  // filled when keep_traces
  std::string error;  // schedule named an unmapped address etc.
};

// Steps N replicas one logical instruction at a time and evaluates the
// detection layers at every slice: structural pc equality, effective-address
// non-aliasing, stall, then semantic record comparison.
class Lockstep {
 public:
  Lockstep(const std::vector<layout::ReplicaImage>& images, const MonitorConfig& cfg);

  SliceOutcome run_slice();
  RunReport run(const std::vector<ScheduledMutation>& schedule);

  const std::vector<machine::ReplicaState>& states() const { return states_; }
  std::vector<machine::ReplicaState>& states() { return states_; }
  const std::vector<canonical::CanonicalTrace>& traces() const { return traces_; }
  std::uint64_t slice_index() const { return slice_; }
  bool all_halted_normally() const;

  // Called after every completed slice; used by tests to audit state coupling.
  std::function<void(const SliceOutcome&, const std::vector<machine::ReplicaState>&)> observer;

 private:
  std::optional<Verdict> check_pcs(const std::vector<std::uint32_t>& pcs, Phase phase,
                                   std::uint64_t slice) const;
  bool excluded(std::uint32_t addr) const;

  const std::vector<layout::ReplicaImage>& images_;
  MonitorConfig cfg_;
  std::vector<machine::ReplicaState> states_;
  std::vector<canonical::CanonicalTrace> traces_;
  std::vector<std::map<std::uint32_t, prog::LogicalInstrId>> reverse_phi_;
  std::uint64_t slice_ = 0;
};

}  // namespace divex::monitor

#endif
