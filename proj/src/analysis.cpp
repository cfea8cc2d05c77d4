#include "divex/analysis.hpp"

#include <sstream>

namespace divex::analysis {

BigRational epsilon_rational(const isa::IsaConstants& constants) {
  auto bound = isa::epsilon_bound(constants);
  BigInt den = BigInt(1) << bound.neg_exp;
  return BigRational(BigInt(1), den);
}

BoundReport compute_bounds(const layout::ReplicaImage& img, const isa::IsaConstants& constants,
                           unsigned k_max) {
  BoundReport rep;
  rep.k_max = k_max;
  layout::LandingResolver idx(img);

  // every word-aligned decodable slot in the emitted span is a valid entry
  // point, NOP padding and stitches included
  std::vector<std::pair<std::uint32_t, std::array<std::uint8_t, 10>>> slots;
  for (std::uint32_t off = 0; off + isa::kInstrWidth <= img.code.size();
       off += isa::kInstrWidth) {
    std::uint32_t addr = img.code_base + off;
    auto instr = idx.decode_at(addr);
    if (!instr) continue;
    std::optional<std::uint32_t> mask;
    if (auto m = img.addr_imm_sites.find(addr); m != img.addr_imm_sites.end()) mask = m->second;
    slots.push_back({addr, canonical::static_projection(*instr, mask)});
  }
  rep.s_count = slots.size();

  for (const auto& [id, addr] : img.phi_code) {
    auto instr = idx.decode_at(addr);
    std::optional<std::uint32_t> mask;
    if (auto m = img.addr_imm_sites.find(addr); m != img.addr_imm_sites.end()) mask = m->second;
    auto expected = canonical::static_projection(*instr, mask);
    std::uint64_t count = 0;
    for (const auto& [saddr, sp] : slots)
      if (sp == expected) ++count;
    rep.c_per_instruction[id] = count;
    rep.c_max = std::max(rep.c_max, count);
  }

  rep.epsilon = epsilon_rational(constants);
  if (rep.s_count) rep.gamma = BigRational(BigInt(rep.c_max), BigInt(rep.s_count));
  rep.p_step = rep.gamma * rep.epsilon;
  BigRational acc(1);
  for (unsigned k = 1; k <= k_max; ++k) {
    acc *= rep.p_step;
    rep.p_undetected.push_back(acc);
  }
  return rep;
}

const char* bound_status_name(BoundStatus s) {
  switch (s) {
    case BoundStatus::Holds: return "holds";
    case BoundStatus::Violated: return "violated";
    case BoundStatus::UnresolvableAtSampleSize: return "unresolvable-at-sample-size";
  }
  return "?";
}

ComparisonReport compare(const faults::CampaignResult& campaign, const BoundReport& bounds,
                         unsigned k_max) {
  ComparisonReport rep;
  rep.family = faults::family_name(campaign.family);
  rep.trials = campaign.trials.size();
  rep.timeouts = campaign.agg.timeouts;
  std::uint64_t applicable = 0;
  for (const auto& t : campaign.trials)
    if (!t.timeout) ++applicable;

  for (unsigned k = 1; k <= k_max; ++k) {
    ComparisonEntry e;
    e.k = k;
    e.applicable = applicable;
    for (const auto& t : campaign.trials) {
      if (t.timeout) continue;
      if (t.undetected || t.latency > std::int64_t(k)) ++e.surviving;
    }
    e.empirical = applicable ? BigRational(BigInt(e.surviving), BigInt(applicable)) : BigRational(0);
    e.bound = k <= bounds.p_undetected.size() ? bounds.p_undetected[k - 1] : BigRational(0);
    BigRational resolution =
        applicable ? BigRational(BigInt(1), BigInt(applicable)) : BigRational(1);
    if (e.bound < resolution) {
      // the sample cannot distinguish the bound from zero
      e.status = e.surviving == 0 ? BoundStatus::UnresolvableAtSampleSize : BoundStatus::Violated;
    } else {
      e.status = e.empirical <= e.bound ? BoundStatus::Holds : BoundStatus::Violated;
    }
    if (e.status == BoundStatus::Violated) rep.any_violation = true;
    if (e.status == BoundStatus::UnresolvableAtSampleSize) rep.has_honesty_flags = true;
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

std::string to_decimal_string(const BigRational& v, unsigned sig) {
  using boost::multiprecision::numerator;
  using boost::multiprecision::denominator;
  BigInt n = numerator(v);
  BigInt d = denominator(v);
  if (n == 0) return "0";
  std::string sign;
  if (n < 0) {
    sign = "-";
    n = -n;
  }
  int e10 = 0;
  while (n < d) {
    n *= 10;
    --e10;
  }
  while (n >= 10 * d) {
    d *= 10;
    ++e10;
  }
  std::string digits;
  for (unsigned i = 0; i < sig; ++i) {
    BigInt q = n / d;
    digits += char('0' + int(q));
    n = (n - q * d) * 10;
  }
  std::string mant = digits.substr(0, 1) + "." + digits.substr(1);
  std::ostringstream os;
  os << sign << mant << "e" << (e10 >= 0 ? "+" : "") << e10;
  return os.str();
}

std::string render_bound_table(const BoundReport& b) {
  std::ostringstream os;
  os << "|S| (entry points): " << b.s_count << "\n";
  os << "C (max equivalent class): " << b.c_max << "\n";
  os << "gamma = C/|S| = " << b.gamma << " ~ " << to_decimal_string(b.gamma) << "\n";
  os << "epsilon = " << b.epsilon << " ~ " << to_decimal_string(b.epsilon) << "\n";
  os << "p_step = gamma*epsilon ~ " << to_decimal_string(b.p_step) << "\n";
  for (unsigned k = 1; k <= b.p_undetected.size(); ++k)
    os << "P_undetected(" << k << ") <= " << to_decimal_string(b.p_undetected[k - 1]) << "\n";
  return os.str();
}

std::string render_comparison_table(const ComparisonReport& c) {
  std::ostringstream os;
  os << "family " << c.family << ", trials " << c.trials << " (timeouts excluded: " << c.timeouts
     << ")\n";
  os << "k | surviving | empirical | bound | status\n";
  for (const auto& e : c.entries)
    os << e.k << " | " << e.surviving << "/" << e.applicable << " | "
       << to_decimal_string(e.empirical) << " | " << to_decimal_string(e.bound) << " | "
       << bound_status_name(e.status) << "\n";
  return os.str();
}

}  // namespace divex::analysis
