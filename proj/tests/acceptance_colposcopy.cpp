// Acceptance checks that need the public colposcopy green-filter panel. The
// file is read from $SECOND_OPINION_COLPOSCOPY_CSV or <source>/data/green.csv;
// without it the binary reports SKIP and exits 77.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "second_opinion/config.hpp"
#include "second_opinion/data.hpp"
#include "second_opinion/eval.hpp"

namespace fs = std::filesystem;
using namespace second_opinion;

namespace {

double accuracy_of(const ExperimentResult& r, Policy p) {
  for (const auto& s : r.summaries)
    if (s.policy == p) return s.accuracy_overall;
  return std::nan("");
}

}  // namespace

int main() {
  const char* env = std::getenv("SECOND_OPINION_COLPOSCOPY_CSV");
  const fs::path csv = env ? fs::path(env) : fs::path(SECOND_OPINION_SOURCE_DIR) / "data" / "green.csv";
  if (!fs::exists(csv)) {
    std::cout << "SKIP  criterion 1: Table 1 reproduction -- " << csv.string() << " not found\n"
              << "SKIP  criterion 2: dataset facts -- " << csv.string() << " not found" << std::endl;
    return 77;
  }

  auto doc = read_config_file(fs::path(SECOND_OPINION_SOURCE_DIR) / "runs" / "colposcopy.json");
  doc["data"]["path"] = fs::absolute(csv).string();
  auto config = parse_run_config(doc);
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = load_panel(config.data);
  bool all = true;

  {
    const auto n_dis = disagreement_cases(ds).size();
    const double frac = static_cast<double>(n_dis) / static_cast<double>(ds.cases().size());
    const bool pass = ds.records().size() == 588 && ds.cases().size() == 98 && std::abs(frac - 0.66) <= 0.01;
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion 2: dataset facts -- " << ds.records().size()
              << " assessments, " << ds.cases().size() << " cases, disagreement fraction " << frac << std::endl;
    all &= pass;
  }

  {
    std::ostringstream detail;
    bool pass = true;
    int ordered = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      config.experiment.seed = seed;
      const auto r = run_experiment(ds, config.experiment);
      const double infl = accuracy_of(r, Policy::InfluenceAlways);
      const double indep = accuracy_of(r, Policy::IndepAlways);
      const double base = r.baseline.accuracy_overall;
      pass &= std::abs(infl - 0.72) <= 0.08 && std::abs(indep - 0.64) <= 0.08;
      ordered += infl > indep && indep > base;
      detail << " seed " << seed << ": influence " << infl << " indep " << indep << " baseline " << base << ";";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    pass &= ordered >= 4 && secs < 30.0;
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion 1: Table 1 reproduction --" << detail.str() << " ordering held in "
              << ordered << "/5; " << secs << " s" << std::endl;
    all &= pass;
  }
  return all ? 0 : 1;
}
