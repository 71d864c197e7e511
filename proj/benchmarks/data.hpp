#pragma once

#include <vector>

#include "sveb/simharness.hpp"

// One scenario (I) data set with m sampled areas.
inline std::vector<sveb::AreaRecord> bench_data(sveb::FamilyId family, std::size_t m) {
  sveb::sim::ScenarioConfig cfg;
  cfg.family = sveb::FamilySpec::make(family);
  cfg.sampled = m;
  cfg.seed = 5;
  return sveb::sim::gen_replicate(cfg, 0).records;
}
