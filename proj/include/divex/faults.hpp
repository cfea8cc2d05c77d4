#ifndef DIVEX_FAULTS_HPP
#define DIVEX_FAULTS_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "divex/layout.hpp"
#include "divex/monitor.hpp"

namespace divex::faults {

enum class Correlation { Fully, Partial, Single };
enum class Family {
  CorrelatedPcSweep,
  PartialPcRandom,
  SinglePcRandom,
  RetAddrOverwrite,
  NullPointer,
  ValueAsPointer,
  DataBitflip,
};

const char* correlation_name(Correlation c);
const char* family_name(Family f);
std::optional<Family> family_from_name(const std::string& s);

// One semantic perturbation event: trigger time, target replicas, mutations.
struct Perturbation {
  std::uint64_t trigger = 0;  // applied at the boundary entering this slice
  Correlation tag = Correlation::Fully;
  std::vector<std::pair<unsigned, machine::Mutation>> mutations;

  // Empty when the tag matches the mutation set, else a description of the
  // inconsistency.
  std::string check_tag(unsigned n_replicas) const;
  std::string describe() const;  // compact parameter rendering for CSV rows
};

struct CampaignSpec {
  std::string name = "campaign";
  std::string program_source;
  layout::DiversificationConfig div = layout::DiversificationConfig::defaults(2);
  monitor::MonitorConfig mon;
  Family family = Family::CorrelatedPcSweep;
  bool exhaustive = false;       // sweep families enumerate; others sample
  std::uint64_t samples = 1000;  // ignored when exhaustive
  std::uint32_t delta_min = 4, delta_max = 64;
  std::uint64_t site_min = 0, site_max = UINT64_MAX;  // clamped to the fault-free run
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

struct TrialResult {
  std::uint64_t trial = 0;
  std::string family;
  std::string correlation;
  std::string params;  // deltas / addresses / constants
  std::uint64_t site = 0;
  std::string verdict;  // verdict kind, "clean", or "timeout"
  std::string layer;
  std::int64_t latency = -1;  // slices retired between injection and detection
  bool undetected = false;
  bool timeout = false;
};

struct CampaignAggregates {
  std::uint64_t trials = 0, detected = 0, undetected = 0, timeouts = 0;
  std::uint64_t excluded_equivalent = 0;  // redrawn: landing preserved semantics in every replica
  double detection_rate = 0.0;
  std::map<std::int64_t, std::uint64_t> latency_histogram;
  std::int64_t max_latency = -1;
  std::map<std::string, std::uint64_t> by_verdict;
};

struct CampaignResult {
  std::string name;
  Family family = Family::CorrelatedPcSweep;
  std::uint64_t seed = 0;
  std::uint64_t baseline_slices = 0;
  std::vector<TrialResult> trials;
  CampaignAggregates agg;
  std::string error;  // build/baseline failure
  bool ok() const { return error.empty(); }
};

// Fault-free reference run metadata consumed by the generators.
struct Baseline {
  std::uint64_t slices = 0;
  std::vector<std::vector<std::uint32_t>> boundary_pcs;              // [slice][replica]
  std::vector<std::optional<prog::LogicalInstrId>> retired_id;       // per slice
  std::vector<std::optional<unsigned>> deref_reg;                    // load/store pointer register
  std::vector<std::vector<std::optional<std::uint32_t>>> ret_slot;   // live return slot at boundary
  std::vector<std::vector<std::array<std::uint32_t, isa::kNumRegs>>> regs;  // [slice][replica]
};

Baseline compute_baseline(const std::vector<layout::ReplicaImage>& images,
                          const monitor::MonitorConfig& mon, std::string* error);

std::vector<Perturbation> generate(const CampaignSpec& spec,
                                   const std::vector<layout::ReplicaImage>& images,
                                   const Baseline& base, std::uint64_t* excluded_equivalent);

CampaignResult execute_campaign(const CampaignSpec& spec);

std::string result_csv(const CampaignResult& r);

}  // namespace divex::faults

#endif
