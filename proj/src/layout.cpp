#include "divex/layout.hpp"

#include <algorithm>
#include <cassert>
#include <numeric>
#include <sstream>

#include "divex/canonical.hpp"

namespace divex::layout {

std::uint64_t Rng::next() {
  // splitmix64; stable across platforms, unlike distribution templates
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t Rng::below(std::uint64_t bound) { return bound ? next() % bound : 0; }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  Rng r(seed ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full) ^
        (c * 0x165667B19E3779F9ull));
  return r.next();
}

std::vector<std::string> DiversificationConfig::validate() const {
  std::vector<std::string> out;
  if (n_replicas < 2) out.push_back("replica count must be at least 2");
  if (n_replicas && stride % n_replicas != 0) out.push_back("stride l must be divisible by N");
  if (n_replicas && (stride / n_replicas) % isa::kInstrWidth != 0)
    out.push_back("l/N must be a multiple of the instruction width");
  if (l_crit < 2 * isa::kInstrWidth) out.push_back("l_crit must be at least 2 instruction widths");
  if (regions.size() < n_replicas) out.push_back("missing per-replica regions");
  if (delta_scan_max != 0 && n_replicas && delta_scan_max < stride / n_replicas)
    out.push_back("delta_scan_max below l/N leaves the guarantee band unchecked");
  // regions pairwise disjoint across replicas (code/data/stack), unless the
  // negative-test escape hatch is set
  if (!allow_overlapping_regions && regions.size() >= n_replicas) {
    std::vector<std::pair<std::string, Region>> all;
    for (unsigned r = 0; r < n_replicas; ++r) {
      all.push_back({"code" + std::to_string(r), regions[r].code});
      all.push_back({"data" + std::to_string(r), regions[r].data});
      all.push_back({"stack" + std::to_string(r), regions[r].stack_region()});
    }
    for (const auto& ex : excluded_shared)
      for (const auto& [name, reg] : all)
        if (reg.overlaps(ex)) out.push_back("shared region overlaps replica region " + name);
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j)
        if (all[i].second.overlaps(all[j].second))
          out.push_back("regions overlap: " + all[i].first + " and " + all[j].first);
  }
  return out;
}

DiversificationConfig DiversificationConfig::defaults(unsigned n) {
  DiversificationConfig cfg;
  cfg.n_replicas = n;
  for (unsigned r = 0; r < n; ++r) {
    ReplicaRegions rr;
    std::uint32_t base = 0x1000 + r * 0x10000;
    rr.code = Region{base, 4096};
    rr.data = Region{base + 0x2000, 4096};
    rr.stack_size = 1024;
    rr.stack_base = base + 0x4000;  // stack occupies [base+0x3C00, base+0x4000)
    cfg.regions.push_back(rr);
  }
  cfg.excluded_shared.push_back(Region{0xF000, 4});  // memory-mapped output word
  return cfg;
}

std::vector<std::size_t> fragment_cuts(std::size_t n_instrs, std::uint32_t l_crit,
                                       unsigned replica) {
  std::vector<std::size_t> cuts;
  if (n_instrs * isa::kInstrWidth <= l_crit || n_instrs < 2) return cuts;
  std::size_t m = l_crit / isa::kInstrWidth;
  m = m > 1 ? m - 1 : 1;  // leave room for the stitch jump
  std::size_t phase = m >= 2 ? replica % 2 : 0;
  for (std::size_t cut = m + phase; cut < n_instrs; cut += m) cuts.push_back(cut);
  return cuts;
}

std::vector<std::uint32_t> nop_thresholds(std::uint32_t logical_bytes,
                                          const DiversificationConfig& cfg, unsigned replica,
                                          unsigned attempt) {
  std::vector<std::uint32_t> out;
  if (!cfg.nops_enabled || logical_bytes == 0) return out;
  const std::uint32_t w = isa::kInstrWidth;
  const std::uint32_t m = cfg.stride / w;  // mean instructions between pads, per replica
  const std::uint32_t n_instrs = logical_bytes / w;
  // One NOP per replica per stride's worth of logical code, at seeded
  // positions that are one-hot across replicas: no instruction is padded in
  // two replicas at once, so a correlated pc shift always advances some
  // replica past a different instruction. Counts equalize only per horizon
  // (16 windows), far beyond the scan band; any shorter balancing period
  // would hand all replicas a common physical lattice and with it a family
  // of undetectable correlated offsets.
  const std::uint32_t horizon = 16 * m;
  const unsigned n = cfg.n_replicas;
  for (std::uint32_t lo = 0; lo < n_instrs; lo += horizon) {
    const std::uint32_t span = std::min(horizon, n_instrs - lo);
    const std::uint32_t per_replica = span / m;
    if (per_replica == 0) continue;
    std::vector<std::uint32_t> pool;
    std::vector<std::uint32_t> mine;
    // Attempt 0 anchors each replica's first pad at the canonical phase
    // offset (l/N)*r. Retries drop the anchor: the phase pattern pins the
    // following instructions at equal offsets in every replica, which is
    // itself a realignment hazard the scan will reject.
    std::set<std::uint32_t> anchors;
    const bool anchored = lo == 0 && attempt == 0;
    if (anchored) {
      for (unsigned r = 0; r < n; ++r) {
        std::uint32_t a = (cfg.offset_of(r) / w) % std::max(span, 1u);
        anchors.insert(a);
        if (r == replica) mine.push_back(a);
      }
    }
    for (std::uint32_t i = 0; i < span; ++i)
      if (!anchors.count(i)) pool.push_back(lo + i);
    Rng rng(mix_seed(cfg.seed, 0x30755107ull, lo, attempt));
    for (std::size_t i = pool.size() ? pool.size() - 1 : 0; i > 0; --i)
      std::swap(pool[i], pool[std::size_t(rng.below(i + 1))]);
    std::uint32_t want = per_replica - (anchored ? 1 : 0);
    for (std::uint32_t k = 0; k < want * n && k < pool.size(); ++k)
      if (k % n == replica) mine.push_back(pool[k]);
    for (auto idx : mine) out.push_back(idx * w);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> placement_order(std::size_t count, unsigned replica, unsigned attempt,
                                         std::uint64_t seed, std::uint64_t salt) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  if (count <= 1) return order;
  if (attempt == 0 && replica == 0) return order;
  if (attempt == 0 && replica == 1) {
    std::reverse(order.begin(), order.end());
    return order;
  }
  Rng rng(mix_seed(seed, salt, replica, attempt));
  for (std::size_t i = count - 1; i > 0; --i)
    std::swap(order[i], order[std::size_t(rng.below(i + 1))]);
  return order;
}

namespace {

constexpr std::uint32_t w = isa::kInstrWidth;

struct Slot {
  prog::LogicalInstrId id;
  const prog::ProgInstr* pi = nullptr;
};

struct Unit {
  std::uint32_t func = 0, block = 0, frag = 0;
  std::vector<Slot> instrs;
  // chain successor within the function's unit list; -1 = control never falls out
  int natural_succ = -1;
  std::uint32_t base = 0;  // assigned at placement
  std::uint32_t end = 0;
};

std::string unit_name(const prog::LogicalProgram& p, const Unit& u) {
  const auto& f = p.functions[u.func];
  std::string n = f.name + "." + f.blocks[u.block].label;
  if (u.frag) n += "#" + std::to_string(u.frag);
  return n;
}

// Splits each function into placement units: one per block fragment, chained
// in logical order. The block terminator stays in the last fragment.
std::vector<Unit> build_units(const prog::LogicalProgram& p, std::uint32_t fi,
                              const DiversificationConfig& cfg, unsigned replica) {
  const prog::Function& f = p.functions[fi];
  std::vector<Unit> units;
  std::vector<int> block_first_unit(f.blocks.size(), -1);
  for (std::uint32_t bi = 0; bi < f.blocks.size(); ++bi) {
    const prog::BasicBlock& b = f.blocks[bi];
    auto cuts = fragment_cuts(b.instrs.size(), cfg.l_crit, replica);
    std::vector<std::size_t> bounds;
    bounds.push_back(0);
    for (auto c : cuts) bounds.push_back(c);
    bounds.push_back(b.instrs.size());
    block_first_unit[bi] = int(units.size());
    for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
      Unit u;
      u.func = fi;
      u.block = bi;
      u.frag = std::uint32_t(k);
      for (std::size_t i = bounds[k]; i < bounds[k + 1]; ++i)
        u.instrs.push_back(Slot{{fi, bi, std::uint32_t(i)}, &b.instrs[i]});
      units.push_back(std::move(u));
    }
  }
  // chain: fragment k -> k+1; last fragment of a falling-through block -> next block
  for (std::uint32_t bi = 0; bi < f.blocks.size(); ++bi) {
    int first = block_first_unit[bi];
    int last = (bi + 1 < f.blocks.size()) ? block_first_unit[bi + 1] - 1 : int(units.size()) - 1;
    for (int k = first; k < last; ++k) units[k].natural_succ = k + 1;
    const prog::BasicBlock& b = f.blocks[bi];
    bool falls = b.terminator == prog::Terminator::Fallthrough ||
                 b.terminator == prog::Terminator::Branch ||
                 b.terminator == prog::Terminator::Call;
    if (falls && bi + 1 < f.blocks.size()) units[last].natural_succ = block_first_unit[bi + 1];
  }
  return units;
}

struct EmittedReplica {
  ReplicaImage img;
  std::string error;
  bool ok = true;
};

bool in_scope(const DiversificationConfig& cfg, const std::string& func_name) {
  if (!cfg.nops_enabled) return false;
  if (cfg.nop_scope == NopScope::Global) return true;
  return std::find(cfg.nop_functions.begin(), cfg.nop_functions.end(), func_name) !=
         cfg.nop_functions.end();
}

EmittedReplica emit_replica(const prog::LogicalProgram& p, const DiversificationConfig& cfg,
                            unsigned replica, unsigned attempt) {
  EmittedReplica out;
  ReplicaImage& img = out.img;
  img.replica = replica;
  const ReplicaRegions& rr = cfg.regions[replica];
  img.code_region = rr.code;
  img.data_region = rr.data;
  img.stack_base = rr.stack_base;
  img.stack_size = rr.stack_size;

  auto fail = [&](std::string msg) {
    out.ok = false;
    out.error = std::move(msg);
    return out;
  };

  // --- data placement ---
  {
    auto order = placement_order(p.data_objects.size(), replica, attempt, cfg.seed,
                                 mix_seed(cfg.seed, 0xDA7Aull, 0, 0));
    Rng gap_rng(mix_seed(cfg.seed, 0xDA7A6A9ull, replica, attempt));
    std::uint32_t cursor = rr.data.base;
    for (std::size_t oi : order) {
      const prog::DataObject& obj = p.data_objects[oi];
      cursor += std::uint32_t(gap_rng.below(4)) * isa::kWordSize;
      if (cursor + obj.size > rr.data.end())
        return fail("data region overflow placing '" + obj.name + "'");
      img.phi_data[obj.name] = cursor;
      cursor += obj.size;
    }
    img.data_base = rr.data.base;
    img.data.assign(cursor - rr.data.base, 0);
    for (const auto& obj : p.data_objects) {
      std::uint32_t at = img.phi_data[obj.name] - img.data_base;
      for (std::size_t k = 0; k < obj.init.size(); ++k) {
        std::uint32_t v = obj.init[k];
        for (unsigned byte = 0; byte < 4; ++byte)
          img.data[at + 4 * k + byte] = std::uint8_t(v >> (8 * byte));
      }
    }
  }

  // --- placement units, globally ordered ---
  std::vector<std::vector<Unit>> func_units;
  std::uint32_t scoped_logical_bytes = 0;
  for (std::uint32_t fi = 0; fi < p.functions.size(); ++fi) {
    func_units.push_back(build_units(p, fi, cfg, replica));
    if (in_scope(cfg, p.functions[fi].name))
      for (const auto& u : func_units.back())
        scoped_logical_bytes += std::uint32_t(u.instrs.size()) * w;
  }
  auto forder = placement_order(p.functions.size(), replica, attempt, cfg.seed,
                                mix_seed(cfg.seed, 0xF0ull, 1, 0));
  struct Placed {
    Unit* u = nullptr;
    bool scoped = false;
  };
  std::vector<Placed> emission;
  for (std::size_t f : forder) {
    auto uorder = placement_order(func_units[f].size(), replica, attempt, cfg.seed,
                                  mix_seed(cfg.seed, 0x0Bull, 2, f));
    bool scoped = in_scope(cfg, p.functions[f].name);
    for (std::size_t ui : uorder) emission.push_back({&func_units[f][ui], scoped});
  }

  // --- pass 1: assign addresses ---
  // Padding positions are keyed to the program-order logical byte stream, not
  // the emission order, so the per-instruction padding pattern stays aligned
  // across replicas no matter how units are permuted.
  std::map<prog::LogicalInstrId, std::uint32_t> scoped_pos;
  {
    std::uint32_t pos = 0;
    for (std::uint32_t fi = 0; fi < p.functions.size(); ++fi) {
      if (!in_scope(cfg, p.functions[fi].name)) continue;
      const prog::Function& f = p.functions[fi];
      for (std::uint32_t bi = 0; bi < f.blocks.size(); ++bi)
        for (std::uint32_t ii = 0; ii < f.blocks[bi].instrs.size(); ++ii) {
          scoped_pos[{fi, bi, ii}] = pos;
          pos += w;
        }
    }
  }
  auto thresholds = nop_thresholds(scoped_logical_bytes, cfg, replica, attempt);
  std::set<std::uint32_t> pad_at(thresholds.begin(), thresholds.end());
  Rng gap_rng(mix_seed(cfg.seed, 0x6A9ull, replica, attempt));
  std::uint32_t cursor = rr.code.base;
  struct Pending {
    std::uint32_t addr;
    const Unit* unit;
    const Slot* slot;  // null for the tail stitch
  };
  std::vector<Pending> pending;
  for (auto& pl : emission) {
    cursor += std::uint32_t(gap_rng.below(3)) * w;
    pl.u->base = cursor;
    for (const Slot& s : pl.u->instrs) {
      if (pl.scoped) {
        auto sp = scoped_pos.find(s.id);
        if (sp != scoped_pos.end() && pad_at.count(sp->second)) {
          img.nop_addrs.insert(cursor);
          cursor += w;
        }
      }
      img.phi_code[s.id] = cursor;
      pending.push_back({cursor, pl.u, &s});
      cursor += w;
    }
    if (pl.u->natural_succ >= 0) {
      img.stitch_addrs.insert(cursor);
      pending.push_back({cursor, pl.u, nullptr});
      cursor += w;
    }
    pl.u->end = cursor;
  }
  if (cursor > rr.code.end()) return fail("code region overflow");
  img.code_base = rr.code.base;
  img.code.assign(cursor - rr.code.base, 0);

  for (const auto& fu : func_units)
    for (const auto& u : fu)
      img.fragments.push_back(FragmentInfo{unit_name(p, u), u.base, u.end});

  // --- pass 2: encode instructions and patch transfers ---
  auto block_entry = [&](std::uint32_t fi, const std::string& label) -> std::optional<std::uint32_t> {
    const prog::Function& f = p.functions[fi];
    for (std::uint32_t bi = 0; bi < f.blocks.size(); ++bi)
      if (f.blocks[bi].label == label)
        for (const auto& u : func_units[fi])
          if (u.block == bi && u.frag == 0) return u.base;
    return std::nullopt;
  };
  auto func_entry = [&](const std::string& name) -> std::optional<std::uint32_t> {
    for (std::uint32_t fi = 0; fi < p.functions.size(); ++fi)
      if (p.functions[fi].name == name)
        for (const auto& u : func_units[fi])
          if (u.block == 0 && u.frag == 0) return u.base;
    return std::nullopt;
  };
  auto put_word = [&](std::uint32_t addr, isa::Word word) {
    std::uint32_t off = addr - img.code_base;
    for (unsigned b = 0; b < 4; ++b) img.code[off + b] = std::uint8_t(word >> (8 * b));
  };

  for (const Pending& pe : pending) {
    isa::Instruction instr;
    if (!pe.slot) {  // tail stitch jump to the chain successor
      const Unit& succ = func_units[pe.unit->func][std::size_t(pe.unit->natural_succ)];
      instr = isa::make_branch(isa::Opcode::JMP, std::int32_t(succ.base) - std::int32_t(pe.addr));
    } else {
      const prog::ProgInstr& pi = *pe.slot->pi;
      instr.opcode = pi.opcode;
      instr.dst = pi.dst;
      instr.src1 = pi.src1;
      instr.src2 = pi.src2;
      switch (pi.kind()) {
        case isa::InstrKind::Branch:
        case isa::InstrKind::Jump: {
          auto target = block_entry(pe.slot->id.func, *pi.target);
          if (!target) return fail("unresolved target '" + *pi.target + "'");
          instr.displacement = std::int32_t(*target) - std::int32_t(pe.addr);
          break;
        }
        case isa::InstrKind::Call: {
          auto target = func_entry(*pi.target);
          if (!target) return fail("unresolved function '" + *pi.target + "'");
          instr.displacement = std::int32_t(*target) - std::int32_t(pe.addr);
          break;
        }
        default:
          if (pi.addr_object) {
            std::uint32_t a = img.phi_data.at(*pi.addr_object);
            if (a > std::uint32_t(isa::kImmMax))
              return fail("data address does not fit the ldi immediate");
            instr.immediate = std::int32_t(a);
            img.addr_imm_sites[pe.addr] = *p.object_ordinal(*pi.addr_object);
          } else {
            instr.immediate = pi.immediate;
          }
          break;
      }
    }
    isa::EncodeError err;
    auto word = isa::encode(instr, &err);
    if (!word) return fail("encode failed at " + unit_name(p, *pe.unit) + ": " + err.message);
    put_word(pe.addr, *word);
  }

  auto entry = func_entry(p.entry);
  if (!entry) return fail("entry function has no placement");
  img.entry_pc = *entry;
  return out;
}

}  // namespace

// --- landing resolution (shared by the scan and the fault generators) ---

LandingResolver::LandingResolver(const ReplicaImage& img) : img_(img) {
  for (const auto& [id, addr] : img.phi_code) logical_[addr] = id;
}

std::optional<isa::Instruction> LandingResolver::decode_at(std::uint32_t addr) const {
  if (addr % w != 0 || !img_.code_region.contains(addr)) return std::nullopt;
  isa::Word word = 0;
  std::uint32_t off = addr - img_.code_base;
  for (unsigned b = 0; b < 4; ++b) {
    std::uint8_t byte = off + b < img_.code.size() ? img_.code[off + b] : 0;
    word |= isa::Word(byte) << (8 * b);
  }
  return isa::decode(word);
}

LandingKey LandingResolver::resolve(std::uint32_t pc, unsigned max_steps,
                                    unsigned* steps_out) const {
  LandingKey k;
  for (unsigned steps = 1; steps <= max_steps; ++steps) {
    if (steps_out) *steps_out = steps;
    if (pc % w != 0) {
      k.kind = LandingKey::Kind::Trap;
      k.trap_cause = 2;  // unaligned fetch
      return k;
    }
    if (!img_.code_region.contains(pc)) {
      k.kind = LandingKey::Kind::Trap;
      k.trap_cause = 3;  // fetch out of region
      return k;
    }
    if (auto it = logical_.find(pc); it != logical_.end()) {
      k.kind = LandingKey::Kind::Instr;
      k.id = it->second;
      auto instr = decode_at(pc);
      std::optional<std::uint32_t> mask;
      if (auto m = img_.addr_imm_sites.find(pc); m != img_.addr_imm_sites.end()) mask = m->second;
      k.stat = canonical::static_projection(*instr, mask);
      return k;
    }
    if (img_.stitch_addrs.count(pc)) {
      auto instr = decode_at(pc);
      pc = std::uint32_t(std::int64_t(pc) + *instr->displacement);
      continue;
    }
    // NOP padding, inter-unit gap zeros, or zeros beyond the emitted span:
    // all decode as NOP and slide
    auto instr = decode_at(pc);
    if (!instr || instr->opcode != isa::Opcode::NOP) {
      k.kind = LandingKey::Kind::Trap;
      k.trap_cause = 1;  // invalid opcode: landed on data-like bytes
      return k;
    }
    pc += w;
  }
  k.kind = LandingKey::Kind::Stall;
  return k;
}

namespace {

// Boundary contexts the monitor can be in when a perturbation lands: one per
// control-flow edge. pend() is the pc at the slice boundary.
struct LogicalEdge {
  enum class Kind { Entry, Seq, Taken } kind = Kind::Entry;
  prog::LogicalInstrId from;
};

std::vector<LogicalEdge> logical_edges(const prog::LogicalProgram& p) {
  std::vector<LogicalEdge> out;
  out.push_back({LogicalEdge::Kind::Entry, {}});
  for (std::uint32_t fi = 0; fi < p.functions.size(); ++fi) {
    const prog::Function& f = p.functions[fi];
    for (std::uint32_t bi = 0; bi < f.blocks.size(); ++bi) {
      const prog::BasicBlock& b = f.blocks[bi];
      for (std::uint32_t ii = 0; ii < b.instrs.size(); ++ii) {
        prog::LogicalInstrId id{fi, bi, ii};
        auto kind = b.instrs[ii].kind();
        bool has_seq = !(kind == isa::InstrKind::Jump || kind == isa::InstrKind::Ret ||
                         kind == isa::InstrKind::Halt);
        bool last_of_block = ii + 1 == b.instrs.size();
        bool block_falls = b.terminator == prog::Terminator::Fallthrough ||
                           b.terminator == prog::Terminator::Branch ||
                           b.terminator == prog::Terminator::Call;
        if (has_seq && (!last_of_block || (block_falls && bi + 1 < f.blocks.size())))
          out.push_back({LogicalEdge::Kind::Seq, id});
        if (kind == isa::InstrKind::Branch || kind == isa::InstrKind::Jump ||
            kind == isa::InstrKind::Call)
          out.push_back({LogicalEdge::Kind::Taken, id});
      }
    }
  }
  return out;
}

std::optional<std::uint32_t> edge_pend(const LogicalEdge& e, const ReplicaImage& img,
                                       const LandingResolver& idx) {
  switch (e.kind) {
    case LogicalEdge::Kind::Entry:
      return img.entry_pc;
    case LogicalEdge::Kind::Seq:
      return img.phi_code.at(e.from) + w;
    case LogicalEdge::Kind::Taken: {
      std::uint32_t at = img.phi_code.at(e.from);
      auto instr = idx.decode_at(at);
      if (!instr || !instr->displacement) return std::nullopt;
      return std::uint32_t(std::int64_t(at) + *instr->displacement);
    }
  }
  return std::nullopt;
}

}  // namespace

LayoutCertificate verify_certificate(const prog::LogicalProgram& p,
                                     const std::vector<ReplicaImage>& images,
                                     const DiversificationConfig& cfg) {
  LayoutCertificate cert;
  cert.non_aliasing_code = true;
  cert.non_aliasing_data = true;
  const unsigned n = unsigned(images.size());
  auto ids = p.all_instr_ids();

  auto note = [&](bool& flag, std::string msg) {
    flag = false;
    if (cert.witness.empty()) cert.witness = std::move(msg);
  };

  // per-id, per-byte non-aliasing of code addresses
  for (const auto& id : ids) {
    for (unsigned i = 0; i < n; ++i) {
      auto ai = images[i].phi_code.find(id);
      if (ai == images[i].phi_code.end()) {
        note(cert.non_aliasing_code, "missing mapping for " + p.id_string(id));
        continue;
      }
      if (images[i].nop_addrs.count(ai->second))
        note(cert.non_aliasing_code, "nop collides with " + p.id_string(id));
      for (unsigned j = i + 1; j < n; ++j) {
        auto aj = images[j].phi_code.find(id);
        if (aj == images[j].phi_code.end()) continue;
        std::uint32_t lo = std::max(ai->second, aj->second);
        std::uint32_t hi = std::min(ai->second + w, aj->second + w);
        if (lo < hi)
          note(cert.non_aliasing_code,
               "code aliasing for " + p.id_string(id) + " at replicas " + std::to_string(i) + "," +
                   std::to_string(j) + " addr " + std::to_string(ai->second));
      }
    }
  }

  // per-object byte-range disjointness of data addresses
  for (const auto& obj : p.data_objects) {
    for (unsigned i = 0; i < n; ++i)
      for (unsigned j = i + 1; j < n; ++j) {
        auto pi = images[i].phi_data.find(obj.name);
        auto pj = images[j].phi_data.find(obj.name);
        if (pi == images[i].phi_data.end() || pj == images[j].phi_data.end()) {
          note(cert.non_aliasing_data, "missing data mapping for " + obj.name);
          continue;
        }
        std::uint32_t lo = std::max(pi->second, pj->second);
        std::uint32_t hi = std::min(pi->second + obj.size, pj->second + obj.size);
        if (lo < hi)
          note(cert.non_aliasing_data, "data aliasing for '" + obj.name + "' at replicas " +
                                           std::to_string(i) + "," + std::to_string(j));
      }
  }

  std::vector<LandingResolver> idx;
  idx.reserve(n);
  for (const auto& img : images) idx.emplace_back(img);

  // Branch-sign complementarity per replica pair, over logical transfers.
  // Transfers whose source and target share a placement unit (unfragmented
  // self-loops) are skipped: their sign is the same under any layout.
  auto same_unit = [](const ReplicaImage& img, std::uint32_t a, std::uint32_t b) {
    for (const auto& f : img.fragments)
      if (a >= f.lo && a < f.hi) return b >= f.lo && b < f.hi;
    return false;
  };
  for (unsigned i = 0; i < n; ++i)
    for (unsigned j = i + 1; j < n; ++j) {
      std::size_t considered = 0, opposite = 0;
      for (const auto& id : ids) {
        const prog::ProgInstr* pi = p.find_instr(id);
        auto kind = pi->kind();
        if (kind != isa::InstrKind::Branch && kind != isa::InstrKind::Jump &&
            kind != isa::InstrKind::Call)
          continue;
        std::uint32_t ai = images[i].phi_code.at(id);
        std::uint32_t aj = images[j].phi_code.at(id);
        auto di = idx[i].decode_at(ai);
        auto dj = idx[j].decode_at(aj);
        if (!di || !dj || !di->displacement || !dj->displacement) continue;
        if (*di->displacement == 0 || *dj->displacement == 0) continue;
        if (same_unit(images[i], ai, std::uint32_t(ai + *di->displacement))) continue;
        ++considered;
        if ((*di->displacement < 0) != (*dj->displacement < 0)) ++opposite;
      }
      cert.branch_complementarity.push_back(
          {i, j, considered ? double(opposite) / double(considered) : 1.0});
    }

  // in-region separation metrics
  std::uint32_t min_sep = UINT32_MAX;
  std::size_t sep_total = 0, sep_good = 0;
  const std::uint32_t want_sep = cfg.stride / cfg.n_replicas;
  for (const auto& id : ids)
    for (unsigned i = 0; i < n; ++i)
      for (unsigned j = i + 1; j < n; ++j) {
        auto ai = images[i].phi_code.find(id);
        auto aj = images[j].phi_code.find(id);
        if (ai == images[i].phi_code.end() || aj == images[j].phi_code.end()) continue;
        std::int64_t oi = std::int64_t(ai->second) - images[i].code_region.base;
        std::int64_t oj = std::int64_t(aj->second) - images[j].code_region.base;
        std::uint32_t sep = std::uint32_t(oi > oj ? oi - oj : oj - oi);
        min_sep = std::min(min_sep, sep);
        ++sep_total;
        if (sep >= want_sep) ++sep_good;
      }
  cert.min_logical_separation = sep_total ? min_sep : 0;
  cert.separation_coverage = sep_total ? double(sep_good) / double(sep_total) : 1.0;

  // realignment scan over control-flow-edge boundary contexts: no correlated
  // byte offset in the guarantee band may land every replica on statically
  // indistinguishable instructions
  cert.scan_delta_min = want_sep;
  cert.scan_delta_max = cfg.delta_scan_max;
  cert.realignment_free = true;
  if (cfg.delta_scan_max >= want_sep && cert.non_aliasing_code) {
    auto edges = logical_edges(p);
    for (const auto& e : edges) {
      std::vector<std::uint32_t> pends;
      bool have = true;
      for (unsigned r = 0; r < n; ++r) {
        auto pd = edge_pend(e, images[r], idx[r]);
        if (!pd) {
          have = false;
          break;
        }
        pends.push_back(*pd);
      }
      if (!have) continue;
      for (std::int64_t mag = want_sep; mag <= std::int64_t(cfg.delta_scan_max); ++mag) {
        for (int sign : {+1, -1}) {
          std::int64_t delta = sign * mag;
          // A miss is a correlated offset that lands every replica on
          // statically indistinguishable instructions at *different* logical
          // positions: records match now and diverge only after the one-slice
          // window. Landing every replica on the same logical instruction is
          // not a miss: the continuations are identical in every replica, so
          // semantic equivalence is preserved and there is no error to
          // observe (the class the model excludes by assumption).
          LandingKey first;
          bool all_equal_instr = true;
          bool same_logical = true;
          for (unsigned r = 0; r < n && all_equal_instr; ++r) {
            auto key = idx[r].resolve(std::uint32_t(std::int64_t(pends[r]) + delta));
            if (key.kind != LandingKey::Kind::Instr) {
              all_equal_instr = false;
            } else if (r == 0) {
              first = key;
            } else {
              if (!(key.stat == first.stat)) all_equal_instr = false;
              if (!(key.id == first.id)) same_logical = false;
            }
          }
          if (all_equal_instr && same_logical) continue;
          if (all_equal_instr) {
            cert.realignment_free = false;
            if (cert.realignment_witness.empty()) {
              std::ostringstream os;
              os << "delta " << delta << " at edge from "
                 << (e.kind == LogicalEdge::Kind::Entry ? std::string("<entry>")
                                                        : p.id_string(e.from))
                 << (e.kind == LogicalEdge::Kind::Taken ? " (taken)" : "")
                 << " realigns all replicas on " << p.id_string(first.id);
              cert.realignment_witness = os.str();
            }
          }
        }
      }
    }
  }
  return cert;
}

unsigned required_slice_step_cap(const prog::LogicalProgram& p,
                                 const std::vector<ReplicaImage>& images) {
  unsigned cap = 1;
  auto edges = logical_edges(p);
  for (const auto& img : images) {
    LandingResolver idx(img);
    for (const auto& e : edges) {
      auto pd = edge_pend(e, img, idx);
      if (!pd) continue;
      unsigned steps = 0;
      auto key = idx.resolve(*pd, 4096, &steps);
      if (key.kind == LandingKey::Kind::Instr) cap = std::max(cap, steps);
    }
  }
  return cap;
}

BuildResult diversify(const prog::LogicalProgram& p, const DiversificationConfig& cfg) {
  BuildResult res;
  auto problems = cfg.validate();
  if (!problems.empty()) {
    res.error = "invalid configuration: " + problems.front();
    return res;
  }
  if (p.instr_count() == 0) {
    res.error = "program has no instructions";
    return res;
  }
  for (unsigned attempt = 0; attempt <= cfg.max_layout_retries; ++attempt) {
    std::vector<ReplicaImage> images;
    bool emitted = true;
    for (unsigned r = 0; r < cfg.n_replicas; ++r) {
      auto er = emit_replica(p, cfg, r, attempt);
      if (!er.ok) {
        res.error = er.error;
        emitted = false;
        break;
      }
      images.push_back(std::move(er.img));
    }
    if (!emitted) return res;  // structural failure; retries cannot help
    LayoutCertificate cert = verify_certificate(p, images, cfg);
    cert.attempts_used = attempt + 1;
    if (cert.ok() || attempt == cfg.max_layout_retries) {
      res.images = std::move(images);
      res.certificate = cert;
      res.ok = cert.ok();
      if (!res.ok && res.error.empty())
        res.error = "layout certificate failed: " +
                    (cert.witness.empty() ? cert.realignment_witness : cert.witness);
      return res;
    }
  }
  return res;
}

}  // namespace divex::layout
