#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "chansr/characteristics.hpp"

namespace chansr {

/// Surrogate propagation constants. Spatial structure (LOS correlation,
/// clutter-driven spreads) is what matters downstream, not calibration to a
/// ray tracer.
struct PropagationParams {
  double frequency_mhz = 2600.0;
  double wall_loss_db = 15.0;
  double shadow_sigma_db = 3.0;
  double ds0_ns = 40.0;
  double rx_height_m = 1.5;
  int clutter_window = 11;
  // per-characteristic clutter/NLOS slopes
  double ds_clutter = 4.0, ds_nlos = 2.0;
  double phi_base = 10.0, phi_clutter = 60.0, phi_nlos = 20.0;
  double theta_base = 3.0, theta_clutter = 12.0, theta_nlos = 6.0;
  double rp_base = -1.0, rp_clutter = -10.0, rp_nlos = -8.0;

  uint64_t hash() const;
};

struct UrbanScene {
  int grid_size = 0;
  double cell_m = 2.0;
  std::vector<int32_t> occupancy;  // building id per cell, -1 = open
  std::vector<double> building_heights;
  int tx_x = 0, tx_y = 0;
  double tx_height_m = 25.0;
  uint64_t seed = 0;
  bool coverage_shortfall = false;  // density target not reached at cap

  bool in_building(int x, int y) const {
    return occupancy[static_cast<size_t>(y) * grid_size + x] >= 0;
  }
  double building_height_at(int x, int y) const {
    int32_t id = occupancy[static_cast<size_t>(y) * grid_size + x];
    return id >= 0 ? building_heights[id] : 0.0;
  }
  double coverage() const;
};

/// One scene's seven co-registered rasters plus provenance.
struct SceneSample {
  int grid_size = 0;
  uint64_t seed = 0;
  uint32_t tx_x = 0, tx_y = 0;
  float tx_height_m = 0.f;
  uint64_t params_hash = 0;
  std::array<std::vector<float>, kNumCharacteristics> rasters;

  std::vector<float>& raster(Characteristic c) {
    return rasters[static_cast<int>(c)];
  }
  const std::vector<float>& raster(Characteristic c) const {
    return rasters[static_cast<int>(c)];
  }
};

enum class LosVerdict { Los, Nlos, InsideBuilding };

struct LosResult {
  LosVerdict verdict;
  int wall_crossings;
};

/// splitmix64-style mix; used to derive per-scene RNG streams from
/// (master_seed, index) so parallel generation is order-independent.
uint64_t mix_seed(uint64_t master, uint64_t index);

/// Rejection-samples non-overlapping axis-aligned rectangular buildings until
/// coverage >= density or an attempt cap; deterministic per seed.
UrbanScene generate_scene(uint64_t seed, int grid_size, double density);

/// Integer grid traversal of the tx -> cell segment; a crossing is an entered
/// building cell whose height exceeds the straight-line ray height there.
LosResult trace_los(const UrbanScene& scene, int x, int y,
                    double rx_height_m = 1.5);

SceneSample synthesize_characteristics(const UrbanScene& scene,
                                       const PropagationParams& params);

/// Free-space term in path-gain convention at 3-D distance d meters.
inline double free_space_gain_db(double d_m, double f_mhz) {
  return -(20.0 * std::log10(d_m) + 20.0 * std::log10(f_mhz) - 27.55);
}

}  // namespace chansr
