// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/cost.hpp"

#include "sparselm/error.hpp"

namespace sparselm {

double energy_estimate(double chips, double watts_per_chip, double hours, double pue) {
  if (!(chips >= 0.0) || !(watts_per_chip >= 0.0) || !(hours >= 0.0)) {
    throw ConfigError("energy_estimate: chips, watts and hours must be >= 0");
  }
  if (!(pue >= 1.0)) throw ConfigError("energy_estimate: pue must be >= 1");
  return chips * watts_per_chip * hours * pue / 1e6;
}

double co2_estimate(double mwh, double tco2e_per_mwh) {
  if (!(mwh >= 0.0) || !(tco2e_per_mwh >= 0.0)) throw ConfigError("co2_estimate: inputs must be >= 0");
  return mwh * tco2e_per_mwh;
}

}  // namespace sparselm
