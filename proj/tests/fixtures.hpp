#pragma once

#include "rmf/pipeline.hpp"

// A report shaped like the published case study: the four metrics before and
// after a clean-label attack, its step counts, and a measured effort with no
// device-memory reading.
inline rmf::RiskReport case_study_report() {
  rmf::BaseMeasures base;
  base.clean_metrics = rmf::MetricsBundle{0.94, 0.96, 0.94, 0.94};
  base.attacked_metrics = rmf::MetricsBundle{0.06, 0.02, 0.02, 0.01};
  base.attack_time_s = 1037.0;
  base.resources = rmf::ResourceSummary{9.0, 2048.0, std::nullopt, 10371};
  base.steps = rmf::StepLedgerTotals{10, 6, 5};

  rmf::Provenance prov;
  prov.engine_version = "0.1.0";
  prov.seed = 7;
  prov.config = {{"seed", 7}, {"output_dir", "out"}};

  rmf::AttackSummary attack;
  attack.kind = "clean_label_backdoor";
  attack.poison_fraction = 0.5;
  attack.target_label = 0;
  attack.specificity = "targeted";
  attack.trigger = "corner_square 3x3 at bottom_right intensity 1";
  attack.poisoned_samples = 150;

  const double baseline = rmf::extent_of_damage(*base.clean_metrics);
  return rmf::build_report(base, rmf::DecisionCriteria{}, baseline, prov, attack,
                           {"gpu_unavailable: no device-memory query on this platform"});
}
