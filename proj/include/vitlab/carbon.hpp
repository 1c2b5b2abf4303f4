#pragma once

#include "vitlab/common.hpp"

namespace vitlab {

// CO2 = CI * PUE * P * t  (kg per kWh, dimensionless, kW, hours -> kg).
struct CarbonParams {
  double carbon_intensity = 0.0;  // kg CO2 per kWh
  double pue = 1.0;               // power usage effectiveness, >= 1
  double power_kw = 0.0;
  double hours = 0.0;
};

inline double carbon_estimate(const CarbonParams& p) {
  if (p.carbon_intensity < 0.0 || p.power_kw < 0.0 || p.hours < 0.0) {
    throw ContractError("carbon_estimate: inputs must be nonnegative");
  }
  if (p.pue < 1.0) throw ContractError("carbon_estimate: PUE must be >= 1");
  return p.carbon_intensity * p.pue * p.power_kw * p.hours;
}

}  // namespace vitlab
