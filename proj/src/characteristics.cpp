#include "chansr/characteristics.hpp"

namespace chansr {

const std::array<CharacteristicSpec, kNumCharacteristics>& default_specs() {
  static const std::array<CharacteristicSpec, kNumCharacteristics> specs = {{
      {Characteristic::H, 0.0, 80.0, OverflowPolicy::None},
      {Characteristic::PL, -160.0, -40.0, OverflowPolicy::ToMin},
      {Characteristic::RP, -30.0, 0.0, OverflowPolicy::ToMin},
      {Characteristic::LOS, 0.0, 1.0, OverflowPolicy::None},
      {Characteristic::DS, 0.0, 500.0, OverflowPolicy::ToMax},
      {Characteristic::PHI, 0.0, 120.0, OverflowPolicy::None},
      {Characteristic::THETA, 0.0, 30.0, OverflowPolicy::None},
  }};
  return specs;
}

const CharacteristicSpec& spec_of(Characteristic c) {
  return default_specs()[static_cast<int>(c)];
}

const char* characteristic_name(Characteristic c) {
  switch (c) {
    case Characteristic::H: return "h";
    case Characteristic::PL: return "PL";
    case Characteristic::RP: return "Rp";
    case Characteristic::LOS: return "LOS";
    case Characteristic::DS: return "DS";
    case Characteristic::PHI: return "phi";
    case Characteristic::THETA: return "theta";
  }
  return "?";
}

}  // namespace chansr
