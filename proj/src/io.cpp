#include "divex/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace divex::io {

namespace {

std::string hex_blob(const std::vector<std::uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

std::vector<std::uint8_t> from_hex(const std::string& s) {
  if (s.size() % 2) throw std::runtime_error("odd hex blob length");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return 10 + c - 'a';
    if (c >= 'A' && c <= 'F') return 10 + c - 'A';
    throw std::runtime_error("bad hex digit");
  };
  std::vector<std::uint8_t> out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::uint8_t(nib(s[2 * i]) << 4 | nib(s[2 * i + 1]));
  return out;
}

json region_json(const layout::Region& r) { return json{{"base", r.base}, {"size", r.size}}; }

layout::Region region_from(const json& j) {
  return layout::Region{j.at("base").get<std::uint32_t>(), j.at("size").get<std::uint32_t>()};
}

std::string id_key(const prog::LogicalInstrId& id) {
  return std::to_string(id.func) + "." + std::to_string(id.block) + "." + std::to_string(id.index);
}

prog::LogicalInstrId id_from_key(const std::string& s) {
  prog::LogicalInstrId id;
  std::istringstream is(s);
  char dot;
  is >> id.func >> dot >> id.block >> dot >> id.index;
  if (!is) throw std::runtime_error("bad instruction id key '" + s + "'");
  return id;
}

}  // namespace

json certificate_json(const layout::LayoutCertificate& cert) {
  json comp = json::array();
  for (const auto& pm : cert.branch_complementarity)
    comp.push_back(json{{"a", pm.a}, {"b", pm.b}, {"fraction", pm.value}});
  return json{{"non_aliasing_code", cert.non_aliasing_code},
              {"non_aliasing_data", cert.non_aliasing_data},
              {"witness", cert.witness},
              {"branch_complementarity", comp},
              {"min_logical_separation", cert.min_logical_separation},
              {"separation_coverage", cert.separation_coverage},
              {"realignment_free", cert.realignment_free},
              {"realignment_witness", cert.realignment_witness},
              {"scan_delta_min", cert.scan_delta_min},
              {"scan_delta_max", cert.scan_delta_max},
              {"attempts_used", cert.attempts_used},
              {"ok", cert.ok()}};
}

namespace {

layout::LayoutCertificate certificate_from(const json& j) {
  layout::LayoutCertificate cert;
  cert.non_aliasing_code = j.at("non_aliasing_code").get<bool>();
  cert.non_aliasing_data = j.at("non_aliasing_data").get<bool>();
  cert.witness = j.at("witness").get<std::string>();
  for (const auto& pm : j.at("branch_complementarity"))
    cert.branch_complementarity.push_back({pm.at("a").get<unsigned>(), pm.at("b").get<unsigned>(),
                                           pm.at("fraction").get<double>()});
  cert.min_logical_separation = j.at("min_logical_separation").get<std::uint32_t>();
  cert.separation_coverage = j.at("separation_coverage").get<double>();
  cert.realignment_free = j.at("realignment_free").get<bool>();
  cert.realignment_witness = j.at("realignment_witness").get<std::string>();
  cert.scan_delta_min = j.at("scan_delta_min").get<std::uint32_t>();
  cert.scan_delta_max = j.at("scan_delta_max").get<std::uint32_t>();
  cert.attempts_used = j.at("attempts_used").get<unsigned>();
  return cert;
}

json config_json(const layout::DiversificationConfig& c) {
  json regions = json::array();
  for (const auto& rr : c.regions)
    regions.push_back(json{{"code", region_json(rr.code)},
                           {"data", region_json(rr.data)},
                           {"stack_base", rr.stack_base},
                           {"stack_size", rr.stack_size}});
  json shared = json::array();
  for (const auto& r : c.excluded_shared) shared.push_back(region_json(r));
  return json{{"n_replicas", c.n_replicas},
              {"stride", c.stride},
              {"nop_scope", c.nop_scope == layout::NopScope::Global ? "global" : "functions"},
              {"nop_functions", c.nop_functions},
              {"l_crit", c.l_crit},
              {"seed", c.seed},
              {"max_layout_retries", c.max_layout_retries},
              {"delta_scan_max", c.delta_scan_max},
              {"nops_enabled", c.nops_enabled},
              {"allow_overlapping_regions", c.allow_overlapping_regions},
              {"regions", regions},
              {"excluded_shared", shared}};
}

layout::DiversificationConfig config_from(const json& j) {
  layout::DiversificationConfig c;
  c.n_replicas = j.at("n_replicas").get<unsigned>();
  c.stride = j.at("stride").get<std::uint32_t>();
  c.nop_scope = j.at("nop_scope").get<std::string>() == "global" ? layout::NopScope::Global
                                                                 : layout::NopScope::Functions;
  c.nop_functions = j.at("nop_functions").get<std::vector<std::string>>();
  c.l_crit = j.at("l_crit").get<std::uint32_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.max_layout_retries = j.at("max_layout_retries").get<unsigned>();
  c.delta_scan_max = j.at("delta_scan_max").get<std::uint32_t>();
  c.nops_enabled = j.at("nops_enabled").get<bool>();
  c.allow_overlapping_regions = j.at("allow_overlapping_regions").get<bool>();
  c.regions.clear();
  for (const auto& rr : j.at("regions"))
    c.regions.push_back(layout::ReplicaRegions{region_from(rr.at("code")),
                                               region_from(rr.at("data")),
                                               rr.at("stack_base").get<std::uint32_t>(),
                                               rr.at("stack_size").get<std::uint32_t>()});
  c.excluded_shared.clear();
  for (const auto& r : j.at("excluded_shared")) c.excluded_shared.push_back(region_from(r));
  return c;
}

}  // namespace

json container_json(const Container& c) {
  json replicas = json::array();
  for (const auto& img : c.images) {
    json phi_code = json::object();
    for (const auto& [id, addr] : img.phi_code) phi_code[id_key(id)] = addr;
    json phi_data = json::object();
    for (const auto& [name, addr] : img.phi_data) phi_data[name] = addr;
    json frags = json::array();
    for (const auto& f : img.fragments)
      frags.push_back(json{{"name", f.name}, {"lo", f.lo}, {"hi", f.hi}});
    json sites = json::object();
    for (const auto& [addr, ord] : img.addr_imm_sites) sites[std::to_string(addr)] = ord;
    replicas.push_back(json{{"id", img.replica},
                            {"code_region", region_json(img.code_region)},
                            {"data_region", region_json(img.data_region)},
                            {"stack_base", img.stack_base},
                            {"stack_size", img.stack_size},
                            {"code_base", img.code_base},
                            {"code", hex_blob(img.code)},
                            {"data_base", img.data_base},
                            {"data", hex_blob(img.data)},
                            {"entry_pc", img.entry_pc},
                            {"phi_code", phi_code},
                            {"phi_data", phi_data},
                            {"nop_addrs", img.nop_addrs},
                            {"stitch_addrs", img.stitch_addrs},
                            {"fragments", frags},
                            {"addr_imm_sites", sites}});
  }
  return json{{"format", "divex-image-container"},
              {"version", 1},
              {"derived_step_cap", c.derived_step_cap},
              {"config", config_json(c.config)},
              {"program", c.program_source},
              {"replicas", replicas},
              {"certificate", certificate_json(c.certificate)}};
}

Container container_from_json(const json& j) {
  if (j.value("format", "") != std::string("divex-image-container"))
    throw std::runtime_error("not an image container");
  Container c;
  c.derived_step_cap = j.at("derived_step_cap").get<unsigned>();
  c.config = config_from(j.at("config"));
  c.program_source = j.at("program").get<std::string>();
  for (const auto& rj : j.at("replicas")) {
    layout::ReplicaImage img;
    img.replica = rj.at("id").get<std::uint32_t>();
    img.code_region = region_from(rj.at("code_region"));
    img.data_region = region_from(rj.at("data_region"));
    img.stack_base = rj.at("stack_base").get<std::uint32_t>();
    img.stack_size = rj.at("stack_size").get<std::uint32_t>();
    img.code_base = rj.at("code_base").get<std::uint32_t>();
    img.code = from_hex(rj.at("code").get<std::string>());
    img.data_base = rj.at("data_base").get<std::uint32_t>();
    img.data = from_hex(rj.at("data").get<std::string>());
    img.entry_pc = rj.at("entry_pc").get<std::uint32_t>();
    for (const auto& [k, v] : rj.at("phi_code").items())
      img.phi_code[id_from_key(k)] = v.get<std::uint32_t>();
    for (const auto& [k, v] : rj.at("phi_data").items()) img.phi_data[k] = v.get<std::uint32_t>();
    for (const auto& a : rj.at("nop_addrs")) img.nop_addrs.insert(a.get<std::uint32_t>());
    for (const auto& a : rj.at("stitch_addrs")) img.stitch_addrs.insert(a.get<std::uint32_t>());
    for (const auto& f : rj.at("fragments"))
      img.fragments.push_back(layout::FragmentInfo{f.at("name").get<std::string>(),
                                                   f.at("lo").get<std::uint32_t>(),
                                                   f.at("hi").get<std::uint32_t>()});
    for (const auto& [k, v] : rj.at("addr_imm_sites").items())
      img.addr_imm_sites[std::uint32_t(std::stoul(k))] = v.get<std::uint32_t>();
    c.images.push_back(std::move(img));
  }
  c.certificate = certificate_from(j.at("certificate"));
  return c;
}

json verdict_json(const monitor::Verdict& v) {
  return json{{"kind", monitor::verdict_name(v.kind)},
              {"layer", v.layer},
              {"phase", v.phase == monitor::Phase::Boundary ? "boundary" : "slice"},
              {"slice", v.slice},
              {"witness", json::array({v.witness_a, v.witness_b})},
              {"detail", v.detail}};
}

json record_json(const canonical::CanonicalRecord& r) {
  json j = json::object();
  j["opcode"] = r.opcode;
  if (r.cond) j["cond"] = r.cond;
  if (r.dst != canonical::kNoReg) j["dst"] = r.dst;
  if (r.src1 != canonical::kNoReg) j["src1"] = r.src1;
  if (r.src2 != canonical::kNoReg) j["src2"] = r.src2;
  if (r.imm_tag == 1) j["imm"] = std::int32_t(r.imm);
  if (r.imm_tag == 2) j["imm_object"] = r.imm;
  if (r.loaded_tag) j["loaded"] = r.loaded;
  if (r.result_tag) j["result"] = r.result;
  if (r.stored_tag) j["stored"] = r.stored;
  if (r.branch_tag) j["taken"] = bool(r.taken);
  if (r.trap_tag) j["trap"] = machine::trap_name(machine::TrapCause(r.trap_cause));
  j["digest"] = canonical::record_hash(r);
  return j;
}

json campaign_result_json(const faults::CampaignResult& r) {
  json hist = json::object();
  for (const auto& [lat, count] : r.agg.latency_histogram) hist[std::to_string(lat)] = count;
  json verdicts = json::object();
  for (const auto& [name, count] : r.agg.by_verdict) verdicts[name] = count;
  json trials = json::array();
  for (const auto& t : r.trials)
    trials.push_back(json{{"trial", t.trial},
                          {"family", t.family},
                          {"correlation", t.correlation},
                          {"params", t.params},
                          {"site", t.site},
                          {"verdict", t.verdict},
                          {"layer", t.layer},
                          {"latency", t.latency},
                          {"undetected", t.undetected},
                          {"timeout", t.timeout}});
  return json{{"name", r.name},
              {"family", faults::family_name(r.family)},
              {"seed", r.seed},
              {"baseline_slices", r.baseline_slices},
              {"error", r.error},
              {"aggregates",
               json{{"trials", r.agg.trials},
                    {"detected", r.agg.detected},
                    {"undetected", r.agg.undetected},
                    {"timeouts", r.agg.timeouts},
                    {"excluded_equivalent", r.agg.excluded_equivalent},
                    {"detection_rate", r.agg.detection_rate},
                    {"max_latency", r.agg.max_latency},
                    {"latency_histogram", hist},
                    {"by_verdict", verdicts}}},
              {"trials", trials}};
}

faults::CampaignSpec campaign_spec_from_json(const json& j, const std::string& base_dir) {
  faults::CampaignSpec spec;
  spec.name = j.value("name", "campaign");
  if (j.contains("program_file")) {
    std::string path = j.at("program_file").get<std::string>();
    if (!path.empty() && path[0] != '/' && !base_dir.empty()) path = base_dir + "/" + path;
    spec.program_source = read_text_file(path);
  } else {
    spec.program_source = j.at("program").get<std::string>();
  }
  unsigned n = j.value("replicas", 2u);
  spec.div = layout::DiversificationConfig::defaults(n);
  if (j.contains("config")) spec.div = config_from(j.at("config"));
  spec.div.n_replicas = n;
  if (j.contains("stride")) spec.div.stride = j.at("stride").get<std::uint32_t>();
  if (j.contains("l_crit")) spec.div.l_crit = j.at("l_crit").get<std::uint32_t>();
  if (j.contains("seed")) spec.div.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("nops_enabled")) spec.div.nops_enabled = j.at("nops_enabled").get<bool>();
  if (j.contains("delta_scan_max"))
    spec.div.delta_scan_max = j.at("delta_scan_max").get<std::uint32_t>();
  if (j.contains("monitor")) {
    const auto& m = j.at("monitor");
    if (m.value("pc_policy", "pairwise-strict") == std::string("all-equal"))
      spec.mon.pc_policy = monitor::Policy::AllEqualCollapse;
    if (m.value("addr_policy", "pairwise-strict") == std::string("all-equal"))
      spec.mon.addr_policy = monitor::Policy::AllEqualCollapse;
    spec.mon.max_steps_per_slice = m.value("max_steps_per_slice", 16u);
  }
  auto fam = faults::family_from_name(j.at("family").get<std::string>());
  if (!fam) throw std::runtime_error("unknown fault family");
  spec.family = *fam;
  spec.exhaustive = j.value("exhaustive", false);
  spec.samples = j.value("samples", std::uint64_t(1000));
  spec.delta_min = j.value("delta_min", 4u);
  spec.delta_max = j.value("delta_max", 64u);
  spec.site_min = j.value("site_min", std::uint64_t(0));
  spec.site_max = j.value("site_max", std::uint64_t(UINT64_MAX));
  spec.seed = j.value("campaign_seed", j.value("seed", std::uint64_t(1)));
  spec.workers = j.value("workers", 1u);
  return spec;
}

json bound_report_json(const analysis::BoundReport& b) {
  json per = json::object();
  for (const auto& [id, c] : b.c_per_instruction) per[id_key(id)] = c;
  json pk = json::array();
  for (unsigned k = 1; k <= b.p_undetected.size(); ++k)
    pk.push_back(json{{"k", k},
                      {"exact", b.p_undetected[k - 1].str()},
                      {"decimal", analysis::to_decimal_string(b.p_undetected[k - 1])}});
  return json{{"s_count", b.s_count},
              {"c_max", b.c_max},
              {"c_per_instruction", per},
              {"gamma", b.gamma.str()},
              {"epsilon", b.epsilon.str()},
              {"p_step", b.p_step.str()},
              {"p_step_decimal", analysis::to_decimal_string(b.p_step)},
              {"p_undetected", pk}};
}

json comparison_report_json(const analysis::ComparisonReport& c) {
  json entries = json::array();
  for (const auto& e : c.entries)
    entries.push_back(json{{"k", e.k},
                           {"surviving", e.surviving},
                           {"applicable", e.applicable},
                           {"empirical", e.empirical.str()},
                           {"bound", e.bound.str()},
                           {"bound_decimal", analysis::to_decimal_string(e.bound)},
                           {"status", analysis::bound_status_name(e.status)}});
  return json{{"family", c.family},
              {"trials", c.trials},
              {"timeouts_excluded", c.timeouts},
              {"entries", entries},
              {"any_violation", c.any_violation},
              {"has_honesty_flags", c.has_honesty_flags}};
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
}

}  // namespace divex::io
