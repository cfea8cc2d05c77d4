#ifndef DIVEX_ANALYSIS_HPP
#define DIVEX_ANALYSIS_HPP

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "divex/faults.hpp"
#include "divex/layout.hpp"

namespace divex::analysis {

using BigInt = boost::multiprecision::cpp_int;
using BigRational = boost::multiprecision::cpp_rational;

// γ, ε and the k-step undetected-execution bound, all exact rationals.
struct BoundReport {
  std::uint64_t s_count = 0;  // valid instruction entry points in the image
  std::map<prog::LogicalInstrId, std::uint64_t> c_per_instruction;
  std::uint64_t c_max = 0;
  BigRational gamma;   // c_max / s_count
  BigRational epsilon; // 2^-(b_op + n*b_reg + b_val)
  BigRational p_step;  // gamma * epsilon
  std::vector<BigRational> p_undetected;  // index k-1 holds p_step^k
  unsigned k_max = 0;
};

BoundReport compute_bounds(const layout::ReplicaImage& img, const isa::IsaConstants& constants,
                           unsigned k_max);

BigRational epsilon_rational(const isa::IsaConstants& constants);

enum class BoundStatus { Holds, Violated, UnresolvableAtSampleSize };
const char* bound_status_name(BoundStatus s);

struct ComparisonEntry {
  unsigned k = 0;
  std::uint64_t surviving = 0;  // trials still undetected after k slices
  std::uint64_t applicable = 0;
  BigRational empirical;  // surviving / applicable
  BigRational bound;
  BoundStatus status = BoundStatus::Holds;
};

struct ComparisonReport {
  std::string family;
  std::uint64_t trials = 0;
  std::uint64_t timeouts = 0;  // excluded from the comparison, reported as-is
  std::vector<ComparisonEntry> entries;
  bool any_violation = false;
  bool has_honesty_flags = false;  // at least one entry is unresolvable
};

ComparisonReport compare(const faults::CampaignResult& campaign, const BoundReport& bounds,
                         unsigned k_max);

// Exact rational -> decimal scientific string, display only.
std::string to_decimal_string(const BigRational& v, unsigned significant_digits = 6);

std::string render_bound_table(const BoundReport& b);
std::string render_comparison_table(const ComparisonReport& c);

}  // namespace divex::analysis

#endif
