#pragma once

#include <array>
#include <string>

namespace chansr {

/// The seven co-registered rasters, in storage order.
enum class Characteristic : int {
  H = 0,      // building height, m
  PL = 1,     // path gain, dB (negative)
  RP = 2,     // multipath power ratio, dB
  LOS = 3,    // line-of-sight class, {0,1}
  DS = 4,     // RMS delay spread, ns
  PHI = 5,    // RMS azimuth angle spread, deg
  THETA = 6,  // RMS elevation angle spread, deg
};

constexpr int kNumCharacteristics = 7;
constexpr std::array<Characteristic, 6> kTargets = {
    Characteristic::PL, Characteristic::RP,  Characteristic::LOS,
    Characteristic::DS, Characteristic::PHI, Characteristic::THETA};

enum class OverflowPolicy { ToMin, ToMax, None };

/// Normal range, overflow handling and in-building sentinel for one
/// characteristic. The sentinel sits strictly below the range so it stays
/// recognizable (< -0.05) after [min,max] -> [0,1] normalization.
struct CharacteristicSpec {
  Characteristic kind;
  double min;
  double max;
  OverflowPolicy policy;

  double sentinel() const { return min - 0.1 * (max - min); }
  double normalize(double x) const { return (x - min) / (max - min); }
  double denormalize(double u) const { return min + u * (max - min); }
};

/// Normalized values below this classify as in-building.
constexpr double kSentinelThreshold = -0.05;

const std::array<CharacteristicSpec, kNumCharacteristics>& default_specs();
const CharacteristicSpec& spec_of(Characteristic c);
const char* characteristic_name(Characteristic c);

}  // namespace chansr
