#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>

namespace evalign {

/// Fixed-point text with round-half-up (away from zero) at `decimals` places.
/// Used everywhere a number is shown to a reader so that rendered values are
/// reproducible from the computed ones.
inline std::string format_fixed(double value, int decimals) {
  std::int64_t scale = 1;
  for (int i = 0; i < decimals; ++i) scale *= 10;
  const std::int64_t scaled = std::llround(std::abs(value) * static_cast<double>(scale));
  std::string out = (value < 0 && scaled != 0) ? "-" : "";
  out += std::to_string(scaled / scale);
  if (decimals > 0) {
    char frac[32];
    std::snprintf(frac, sizeof frac, "%0*lld", decimals, static_cast<long long>(scaled % scale));
    out += '.';
    out += frac;
  }
  return out;
}

/// Probability as a percentage with two decimals: 0.8101 -> "81.01%".
inline std::string format_percent(double probability) {
  return format_fixed(probability * 100.0, 2) + "%";
}

}  // namespace evalign
