#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>

#include "divex/analysis.hpp"
#include "divex/faults.hpp"
#include "divex/io.hpp"
#include "divex/isa.hpp"
#include "divex/layout.hpp"
#include "divex/monitor.hpp"

namespace fs = std::filesystem;
using divex::io::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitCertificate = 3;

struct BuildArgs {
  std::string program_path;
  std::string out_path = "container.json";
  unsigned replicas = 2;
  std::uint32_t stride = 8;
  std::uint32_t l_crit = 16;
  std::uint64_t seed = 0xD1CE5EEDull;
  std::uint32_t delta_scan_max = 64;
  unsigned retries = 64;
  bool no_nops = false;
  std::vector<std::string> nop_functions;
};

int cmd_build(const BuildArgs& a) {
  auto source = divex::io::read_text_file(a.program_path);
  auto parsed = divex::prog::parse(source);
  for (const auto& d : parsed.diagnostics)
    std::cerr << (d.severity == divex::prog::Severity::Error ? "error" : "warning") << " ["
              << d.code << "] line " << d.loc.line << ": " << d.message << "\n";
  if (!parsed.ok()) return kExitUsage;
  auto extra = divex::prog::validate(*parsed.program);
  bool errors = false;
  for (const auto& d : extra) {
    std::cerr << (d.severity == divex::prog::Severity::Error ? "error" : "warning") << " ["
              << d.code << "] " << d.message << "\n";
    errors |= d.severity == divex::prog::Severity::Error;
  }
  if (errors) return kExitUsage;

  auto cfg = divex::layout::DiversificationConfig::defaults(a.replicas);
  cfg.stride = a.stride;
  cfg.l_crit = a.l_crit;
  cfg.seed = a.seed;
  cfg.delta_scan_max = a.delta_scan_max;
  cfg.max_layout_retries = a.retries;
  cfg.nops_enabled = !a.no_nops;
  if (!a.nop_functions.empty()) {
    cfg.nop_scope = divex::layout::NopScope::Functions;
    cfg.nop_functions = a.nop_functions;
  }

  auto build = divex::layout::diversify(*parsed.program, cfg);
  if (!build.ok && build.images.empty()) {
    std::cerr << "build failed: " << build.error << "\n";
    return kExitCertificate;
  }
  divex::io::Container c;
  c.program_source = source;
  c.config = cfg;
  c.images = build.images;
  c.certificate = build.certificate;
  c.derived_step_cap =
      divex::layout::required_slice_step_cap(*parsed.program, build.images) + 1;
  divex::io::write_text_file(a.out_path, divex::io::container_json(c).dump(2) + "\n");
  std::cout << divex::io::certificate_json(build.certificate).dump(2) << "\n";
  if (!build.ok) {
    std::cerr << "certificate failed: " << build.error << "\n";
    return kExitCertificate;
  }
  return 0;
}

divex::monitor::MonitorConfig monitor_config(const divex::io::Container& c,
                                             const std::string& pc_policy,
                                             const std::string& addr_policy,
                                             std::uint64_t budget) {
  divex::monitor::MonitorConfig mon;
  mon.pc_policy = pc_policy == "all-equal" ? divex::monitor::Policy::AllEqualCollapse
                                           : divex::monitor::Policy::PairwiseStrict;
  mon.addr_policy = addr_policy == "all-equal" ? divex::monitor::Policy::AllEqualCollapse
                                               : divex::monitor::Policy::PairwiseStrict;
  mon.excluded_shared = c.config.excluded_shared;
  mon.max_steps_per_slice = c.derived_step_cap;
  mon.slice_budget = budget;
  return mon;
}

int run_and_report(const divex::io::Container& c, const divex::monitor::MonitorConfig& mon,
                   const std::vector<divex::monitor::ScheduledMutation>& schedule,
                   const std::string& trace_dir) {
  divex::monitor::Lockstep runner(c.images, mon);
  auto rep = runner.run(schedule);
  if (!rep.error.empty()) {
    std::cerr << "error: " << rep.error << "\n";
    return kExitUsage;
  }
  if (!trace_dir.empty()) {
    fs::create_directories(trace_dir);
    for (std::size_t r = 0; r < rep.traces.size(); ++r) {
      std::ostringstream os;
      for (const auto& rec : rep.traces[r].records) os << divex::io::record_json(rec).dump() << "\n";
      divex::io::write_text_file(trace_dir + "/trace_r" + std::to_string(r) + ".jsonl", os.str());
    }
  }
  json out{{"clean", rep.clean}, {"timeout", rep.timeout}, {"slices", rep.slices}};
  if (rep.verdict) out["verdict"] = divex::io::verdict_json(*rep.verdict);
  std::cout << out.dump(2) << "\n";
  return divex::monitor::exit_code(rep.verdict ? std::optional(rep.verdict->kind) : std::nullopt);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divex: diversified N-version execution laboratory"};
  app.require_subcommand(1);

  // build
  BuildArgs ba;
  auto* build = app.add_subcommand("build", "diversify a program into an image container");
  build->add_option("-p,--program", ba.program_path, "assembly source")->required();
  build->add_option("-o,--output", ba.out_path, "container output path");
  build->add_option("-n,--replicas", ba.replicas, "replica count (>= 2)");
  build->add_option("-l,--stride", ba.stride, "padding stride in bytes");
  build->add_option("--l-crit", ba.l_crit, "fragmentation threshold in bytes");
  build->add_option("--seed", ba.seed, "layout seed");
  build->add_option("--scan-max", ba.delta_scan_max, "realignment scan reach in bytes");
  build->add_option("--retries", ba.retries, "max layout reseeds");
  build->add_flag("--no-nops", ba.no_nops, "disable padding insertion");
  build->add_option("--nop-functions", ba.nop_functions, "pad only these functions");

  // run / inject
  std::string container_path, pc_policy = "pairwise-strict", addr_policy = "pairwise-strict";
  std::string trace_dir;
  std::uint64_t budget = 1000000;
  auto add_run_opts = [&](CLI::App* cmd) {
    cmd->add_option("-c,--container", container_path, "image container")->required();
    cmd->add_option("--pc-policy", pc_policy, "pairwise-strict | all-equal");
    cmd->add_option("--addr-policy", addr_policy, "pairwise-strict | all-equal");
    cmd->add_option("--budget", budget, "slice budget");
  };
  auto* run = app.add_subcommand("run", "run the replicas in lockstep, fault-free");
  add_run_opts(run);
  run->add_option("--dump-trace", trace_dir, "write per-replica canonical traces here");

  auto* inject = app.add_subcommand("inject", "run with a single injected perturbation");
  add_run_opts(inject);
  std::uint64_t inj_slice = 0;
  std::string inj_replicas = "all";
  std::int64_t inj_delta = 0;
  std::vector<std::string> inj_pc_set, inj_reg_set, inj_reg_copy, inj_reg_flip, inj_mem_set,
      inj_mem_flip;
  inject->add_option("--slice", inj_slice, "trigger slice")->required();
  inject->add_option("--replicas", inj_replicas, "targets: all or comma-separated ids");
  inject->add_option("--delta", inj_delta, "pc delta in bytes");
  inject->add_option("--pc-set", inj_pc_set, "absolute pc value");
  inject->add_option("--reg-set", inj_reg_set, "reg,value");
  inject->add_option("--reg-copy", inj_reg_copy, "dst,src");
  inject->add_option("--reg-bitflip", inj_reg_flip, "reg,bit");
  inject->add_option("--mem-set", inj_mem_set, "addr,value");
  inject->add_option("--mem-bitflip", inj_mem_flip, "addr,bit");

  // campaign
  std::string spec_path, out_dir = ".";
  auto* campaign = app.add_subcommand("campaign", "execute a fault-injection campaign");
  campaign->add_option("-s,--spec", spec_path, "campaign spec (json)")->required();
  campaign->add_option("-o,--out", out_dir, "output directory");

  // analyze
  std::string result_path, report_path;
  unsigned k_max = 8;
  auto* analyze = app.add_subcommand("analyze", "static bounds and campaign comparison");
  analyze->add_option("-c,--container", container_path, "image container")->required();
  analyze->add_option("-r,--result", result_path, "campaign result json");
  analyze->add_option("-o,--output", report_path, "report output path");
  analyze->add_option("-K,--k-max", k_max, "bound horizon");

  // isa-doc
  std::string isa_out;
  auto* isadoc = app.add_subcommand("isa-doc", "emit the ISA reference (markdown)");
  isadoc->add_option("-o,--output", isa_out, "write to file instead of stdout");

  // report
  std::string report_in, report_md;
  auto* report = app.add_subcommand("report", "render a campaign result as markdown");
  report->add_option("-r,--result", report_in, "campaign result json")->required();
  report->add_option("-o,--output", report_md, "markdown output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (build->parsed()) return cmd_build(ba);

    if (run->parsed()) {
      auto c = divex::io::container_from_json(json::parse(divex::io::read_text_file(container_path)));
      return run_and_report(c, monitor_config(c, pc_policy, addr_policy, budget), {}, trace_dir);
    }

    if (inject->parsed()) {
      auto c = divex::io::container_from_json(json::parse(divex::io::read_text_file(container_path)));
      std::vector<unsigned> targets;
      if (inj_replicas == "all")
        for (unsigned r = 0; r < c.config.n_replicas; ++r) targets.push_back(r);
      else {
        std::istringstream is(inj_replicas);
        std::string tok;
        while (std::getline(is, tok, ',')) targets.push_back(unsigned(std::stoul(tok)));
      }
      std::vector<divex::monitor::ScheduledMutation> schedule;
      auto pair_vals = [](const std::string& s) {
        auto comma = s.find(',');
        if (comma == std::string::npos) throw std::runtime_error("expected a,b: " + s);
        return std::pair<std::uint64_t, std::uint64_t>{std::stoull(s.substr(0, comma), nullptr, 0),
                                                       std::stoull(s.substr(comma + 1), nullptr, 0)};
      };
      using MK = divex::machine::Mutation::Kind;
      auto push = [&](divex::machine::Mutation m) {
        for (unsigned r : targets) schedule.push_back({inj_slice, r, m});
      };
      if (inj_delta) {
        divex::machine::Mutation m;
        m.kind = MK::PcDelta;
        m.delta = inj_delta;
        push(m);
      }
      for (const auto& s : inj_pc_set) {
        divex::machine::Mutation m;
        m.kind = MK::PcSet;
        m.addr = std::uint32_t(std::stoull(s, nullptr, 0));
        push(m);
      }
      for (const auto& s : inj_reg_set) {
        auto [a, b] = pair_vals(s);
        divex::machine::Mutation m;
        m.kind = MK::RegSet;
        m.reg = unsigned(a);
        m.value = std::uint32_t(b);
        push(m);
      }
      for (const auto& s : inj_reg_copy) {
        auto [a, b] = pair_vals(s);
        divex::machine::Mutation m;
        m.kind = MK::RegCopy;
        m.reg = unsigned(a);
        m.src_reg = unsigned(b);
        push(m);
      }
      for (const auto& s : inj_reg_flip) {
        auto [a, b] = pair_vals(s);
        divex::machine::Mutation m;
        m.kind = MK::RegBitflip;
        m.reg = unsigned(a);
        m.bit = unsigned(b);
        push(m);
      }
      for (const auto& s : inj_mem_set) {
        auto [a, b] = pair_vals(s);
        divex::machine::Mutation m;
        m.kind = MK::MemSet;
        m.addr = std::uint32_t(a);
        m.value = std::uint32_t(b);
        push(m);
      }
      for (const auto& s : inj_mem_flip) {
        auto [a, b] = pair_vals(s);
        divex::machine::Mutation m;
        m.kind = MK::MemBitflip;
        m.addr = std::uint32_t(a);
        m.bit = unsigned(b);
        push(m);
      }
      if (schedule.empty()) {
        std::cerr << "inject: no mutation given\n";
        return kExitUsage;
      }
      return run_and_report(c, monitor_config(c, pc_policy, addr_policy, budget), schedule, "");
    }

    if (campaign->parsed()) {
      auto spec_json = json::parse(divex::io::read_text_file(spec_path));
      std::string dir = fs::path(spec_path).parent_path().string();
      auto spec = divex::io::campaign_spec_from_json(spec_json, dir);
      auto t0 = std::chrono::steady_clock::now();
      auto result = divex::faults::execute_campaign(spec);
      auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
      if (!result.ok()) {
        std::cerr << "campaign failed: " << result.error << "\n";
        return 1;
      }
      fs::create_directories(out_dir);
      divex::io::write_text_file(out_dir + "/result.json",
                                 divex::io::campaign_result_json(result).dump(2) + "\n");
      divex::io::write_text_file(out_dir + "/result.csv", divex::faults::result_csv(result));
      json meta{{"duration_ms", ms},
                {"finished_at", std::chrono::duration_cast<std::chrono::seconds>(
                                    std::chrono::system_clock::now().time_since_epoch())
                                    .count()}};
      divex::io::write_text_file(out_dir + "/result.meta.json", meta.dump(2) + "\n");
      std::cout << "trials " << result.agg.trials << ", detected " << result.agg.detected
                << ", undetected " << result.agg.undetected << ", timeouts "
                << result.agg.timeouts << ", rate " << result.agg.detection_rate << "\n";
      return 0;
    }

    if (analyze->parsed()) {
      auto c = divex::io::container_from_json(json::parse(divex::io::read_text_file(container_path)));
      auto bounds =
          divex::analysis::compute_bounds(c.images.at(0), divex::isa::IsaConstants{}, k_max);
      json out{{"bounds", divex::io::bound_report_json(bounds)}};
      std::cout << divex::analysis::render_bound_table(bounds);
      if (!result_path.empty()) {
        auto rj = json::parse(divex::io::read_text_file(result_path));
        divex::faults::CampaignResult cr;
        cr.name = rj.value("name", "");
        cr.family = *divex::faults::family_from_name(rj.at("family").get<std::string>());
        for (const auto& tj : rj.at("trials")) {
          divex::faults::TrialResult t;
          t.trial = tj.at("trial").get<std::uint64_t>();
          t.latency = tj.at("latency").get<std::int64_t>();
          t.undetected = tj.at("undetected").get<bool>();
          t.timeout = tj.at("timeout").get<bool>();
          cr.trials.push_back(t);
        }
        cr.agg.timeouts = rj.at("aggregates").at("timeouts").get<std::uint64_t>();
        auto comparison = divex::analysis::compare(cr, bounds, k_max);
        out["comparison"] = divex::io::comparison_report_json(comparison);
        std::cout << divex::analysis::render_comparison_table(comparison);
      }
      if (!report_path.empty()) divex::io::write_text_file(report_path, out.dump(2) + "\n");
      return 0;
    }

    if (isadoc->parsed()) {
      auto doc = divex::isa::render_isa_reference();
      if (isa_out.empty())
        std::cout << doc;
      else
        divex::io::write_text_file(isa_out, doc);
      return 0;
    }

    if (report->parsed()) {
      auto rj = json::parse(divex::io::read_text_file(report_in));
      std::ostringstream os;
      os << "# Campaign report: " << rj.value("name", "?") << "\n\n";
      os << "- family: " << rj.value("family", "?") << "\n";
      os << "- seed: " << rj.value("seed", std::uint64_t(0)) << "\n";
      os << "- baseline slices: " << rj.value("baseline_slices", std::uint64_t(0)) << "\n\n";
      const auto& agg = rj.at("aggregates");
      os << "| trials | detected | undetected | timeouts | rate |\n";
      os << "|--------|----------|------------|----------|------|\n";
      os << "| " << agg.at("trials") << " | " << agg.at("detected") << " | "
         << agg.at("undetected") << " | " << agg.at("timeouts") << " | "
         << agg.at("detection_rate") << " |\n\n";
      os << "## Verdicts\n\n| verdict | count |\n|---------|-------|\n";
      for (const auto& [name, count] : agg.at("by_verdict").items())
        os << "| " << name << " | " << count << " |\n";
      os << "\n## Latency histogram (slices)\n\n| latency | count |\n|---------|-------|\n";
      for (const auto& [lat, count] : agg.at("latency_histogram").items())
        os << "| " << lat << " | " << count << " |\n";
      std::string md = os.str();
      if (report_md.empty())
        std::cout << md;
      else
        divex::io::write_text_file(report_md, md);
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
