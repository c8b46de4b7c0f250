// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training energy and emissions arithmetic.

#pragma once

namespace sparselm {

// chips * watts_per_chip * hours * pue / 1e6, in MWh. Throws ConfigError for
// negative inputs or pue < 1.
double energy_estimate(double chips, double watts_per_chip, double hours, double pue);

// Net tCO2e for `mwh` at the given datacenter intensity.
double co2_estimate(double mwh, double tco2e_per_mwh);

}  // namespace sparselm
