#ifndef DIVEX_IO_HPP
#define DIVEX_IO_HPP

#include <nlohmann/json.hpp>

#include <string>

#include "divex/analysis.hpp"
#include "divex/faults.hpp"
#include "divex/layout.hpp"
#include "divex/monitor.hpp"

namespace divex::io {

using json = nlohmann::ordered_json;

// Interchange container between the build and run stages: program text,
// configuration, per-replica images and the layout certificate.
struct Container {
  std::string program_source;
  layout::DiversificationConfig config;
  std::vector<layout::ReplicaImage> images;
  layout::LayoutCertificate certificate;
  unsigned derived_step_cap = 16;
};

json container_json(const Container& c);
Container container_from_json(const json& j);

json certificate_json(const layout::LayoutCertificate& cert);
json verdict_json(const monitor::Verdict& v);
json record_json(const canonical::CanonicalRecord& r);

json campaign_result_json(const faults::CampaignResult& r);
faults::CampaignSpec campaign_spec_from_json(const json& j, const std::string& base_dir);

json bound_report_json(const analysis::BoundReport& b);
json comparison_report_json(const analysis::ComparisonReport& c);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace divex::io

#endif
