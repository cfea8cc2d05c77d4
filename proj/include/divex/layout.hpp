#ifndef DIVEX_LAYOUT_HPP
#define DIVEX_LAYOUT_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "divex/program.hpp"

namespace divex::layout {

struct Region {
  std::uint32_t base = 0;
  std::uint32_t size = 0;
  std::uint32_t end() const { return base + size; }
  bool contains(std::uint32_t a) const { return a >= base && a < end(); }
  bool overlaps(const Region& o) const { return base < o.end() && o.base < end(); }
};

struct ReplicaRegions {
  Region code;
  Region data;
  std::uint32_t stack_base = 0;  // full-descending; stack occupies [stack_base-stack_size, stack_base)
  std::uint32_t stack_size = 0;
  Region stack_region() const { return Region{stack_base - stack_size, stack_size}; }
};

enum class NopScope { Global, Functions };

struct DiversificationConfig {
  unsigned n_replicas = 2;
  std::uint32_t stride = 8;  // l: bytes of logical code per padding window
  NopScope nop_scope = NopScope::Global;
  std::vector<std::string> nop_functions;  // used when nop_scope == Functions
  std::uint32_t l_crit = 16;               // blocks larger than this get fragmented
  std::uint64_t seed = 0xD1CE5EEDull;
  unsigned max_layout_retries = 64;
  std::uint32_t delta_scan_max = 64;  // realignment scan reach in bytes
  std::vector<ReplicaRegions> regions;
  std::vector<Region> excluded_shared;  // legitimately shared (exempt from non-aliasing)
  bool allow_overlapping_regions = false;  // negative-test escape hatch
  bool nops_enabled = true;

  std::uint32_t offset_of(unsigned r) const { return (stride / n_replicas) * r; }
  // Config invariant violations as human-readable messages; empty means valid.
  std::vector<std::string> validate() const;
  static DiversificationConfig defaults(unsigned n);
};

struct FragmentInfo {
  std::string name;  // "func.block#k"
  std::uint32_t lo = 0, hi = 0;  // emitted address range [lo, hi)
};

struct ReplicaImage {
  std::uint32_t replica = 0;
  Region code_region, data_region;
  std::uint32_t stack_base = 0, stack_size = 0;
  std::uint32_t code_base = 0;
  std::vector<std::uint8_t> code;  // emitted span starting at code_base
  std::uint32_t data_base = 0;
  std::vector<std::uint8_t> data;  // emitted span starting at data_base
  std::map<prog::LogicalInstrId, std::uint32_t> phi_code;
  std::map<std::string, std::uint32_t> phi_data;
  std::set<std::uint32_t> nop_addrs;
  std::set<std::uint32_t> stitch_addrs;  // layout-inserted jumps: fragment chains + fallthrough fixups
  std::vector<FragmentInfo> fragments;
  std::map<std::uint32_t, std::uint32_t> addr_imm_sites;  // ldi &obj site -> object ordinal
  std::uint32_t entry_pc = 0;

  bool is_transparent(std::uint32_t addr) const {
    return nop_addrs.count(addr) || stitch_addrs.count(addr);
  }
};

struct PairMetric {
  unsigned a = 0, b = 0;
  double value = 0.0;
};

struct LayoutCertificate {
  bool non_aliasing_code = false;
  bool non_aliasing_data = false;
  std::string witness;  // first violation, empty when clean
  std::vector<PairMetric> branch_complementarity;  // per replica pair
  std::uint32_t min_logical_separation = 0;  // min in-region per-instruction offset delta
  double separation_coverage = 0.0;          // fraction of (pair, instr) with delta >= l/N
  bool realignment_free = false;
  std::string realignment_witness;
  std::uint32_t scan_delta_min = 0, scan_delta_max = 0;
  unsigned attempts_used = 0;

  bool ok() const { return non_aliasing_code && non_aliasing_data && realignment_free; }
};

struct BuildResult {
  std::vector<ReplicaImage> images;
  LayoutCertificate certificate;
  bool ok = false;
  std::string error;  // set for non-certificate failures (overflow, bad config)
};

// Lays out n structurally decorrelated images of the same program and verifies
// the certificate, reseeding up to max_layout_retries times.
BuildResult diversify(const prog::LogicalProgram& p, const DiversificationConfig& cfg);

// Certificate computation alone (used by negative tests on hand-built images).
LayoutCertificate verify_certificate(const prog::LogicalProgram& p,
                                     const std::vector<ReplicaImage>& images,
                                     const DiversificationConfig& cfg);

// What retires first when execution resumes at pc: mirrors the interpreter's
// totalized fetch (NOP slide, stitch follow, trap, stall). Drives the
// certificate's realignment scan and the campaign generators.
struct LandingKey {
  enum class Kind { Instr, Trap, Stall } kind = Kind::Stall;
  prog::LogicalInstrId id;                // Instr
  std::array<std::uint8_t, 10> stat{};    // static canonical projection
  std::uint8_t trap_cause = 0;            // Trap
  bool operator==(const LandingKey&) const = default;
};

class LandingResolver {
 public:
  explicit LandingResolver(const ReplicaImage& img);
  LandingKey resolve(std::uint32_t pc, unsigned max_steps = 64, unsigned* steps_out = nullptr) const;
  std::optional<isa::Instruction> decode_at(std::uint32_t addr) const;

 private:
  const ReplicaImage& img_;
  std::map<std::uint32_t, prog::LogicalInstrId> logical_;
};

// 1 + the longest transparent run any fault-free boundary can face; the
// monitor's per-slice step budget must be at least this.
unsigned required_slice_step_cap(const prog::LogicalProgram& p,
                                 const std::vector<ReplicaImage>& images);

// --- internals exposed for unit tests ---

// Replica-staggered fragmentation cut points for a block of n instructions.
std::vector<std::size_t> fragment_cuts(std::size_t n_instrs, std::uint32_t l_crit, unsigned replica);

// Padding thresholds in logical-byte positions: the stride grid shifted by the
// replica phase (l/N)*r plus an equal count of seed-scattered positions.
std::vector<std::uint32_t> nop_thresholds(std::uint32_t logical_bytes,
                                          const DiversificationConfig& cfg, unsigned replica,
                                          unsigned attempt);

// Unit placement order: replica 0 keeps source order, replica 1 reverses it,
// higher replicas shuffle; retries reshuffle everyone.
std::vector<std::size_t> placement_order(std::size_t count, unsigned replica, unsigned attempt,
                                         std::uint64_t seed, std::uint64_t salt);

// Deterministic split-mix stream, stable across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  std::uint64_t below(std::uint64_t bound);  // [0, bound)
 private:
  std::uint64_t state_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0);

}  // namespace divex::layout

#endif
