#include "chansr/scene.hpp"

#include <algorithm>
#include <cstring>
#include <random>
#include <stdexcept>

namespace chansr {

uint64_t mix_seed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t PropagationParams::hash() const {
  auto mixd = [](uint64_t h, double v) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    return mix_seed(h, bits);
  };
  uint64_t h = 0x43535244ULL;
  for (double v : {frequency_mhz, wall_loss_db, shadow_sigma_db, ds0_ns,
                   rx_height_m, static_cast<double>(clutter_window), ds_clutter,
                   ds_nlos, phi_base, phi_clutter, phi_nlos, theta_base,
                   theta_clutter, theta_nlos, rp_base, rp_clutter, rp_nlos})
    h = mixd(h, v);
  return h;
}

double UrbanScene::coverage() const {
  int64_t built = 0;
  for (int32_t v : occupancy)
    if (v >= 0) ++built;
  return static_cast<double>(built) / occupancy.size();
}

UrbanScene generate_scene(uint64_t seed, int grid_size, double density) {
  if (grid_size < 16)
    throw std::invalid_argument("generate_scene: grid_size must be >= 16");
  if (density < 0.0 || density >= 0.6)
    throw std::invalid_argument("generate_scene: density must be in [0, 0.6)");

  UrbanScene scene;
  scene.grid_size = grid_size;
  scene.seed = seed;
  scene.occupancy.assign(static_cast<size_t>(grid_size) * grid_size, -1);

  std::mt19937_64 rng(mix_seed(seed, 0xA11CEULL));
  const int max_side = std::max(3, grid_size / 6);
  std::uniform_int_distribution<int> side_dist(2, max_side);
  std::uniform_real_distribution<double> height_dist(6.0, 40.0);

  const int64_t total = static_cast<int64_t>(grid_size) * grid_size;
  int64_t built = 0;
  const int attempt_cap = 4000;
  int attempts = 0;
  while (built < density * total && attempts < attempt_cap) {
    ++attempts;
    const int bw = side_dist(rng);
    const int bh = side_dist(rng);
    std::uniform_int_distribution<int> xd(0, grid_size - bw);
    std::uniform_int_distribution<int> yd(0, grid_size - bh);
    const int x0 = xd(rng);
    const int y0 = yd(rng);
    bool overlap = false;
    for (int y = y0; y < y0 + bh && !overlap; ++y)
      for (int x = x0; x < x0 + bw; ++x)
        if (scene.occupancy[static_cast<size_t>(y) * grid_size + x] >= 0) {
          overlap = true;
          break;
        }
    if (overlap) continue;
    const int32_t id = static_cast<int32_t>(scene.building_heights.size());
    scene.building_heights.push_back(height_dist(rng));
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x)
        scene.occupancy[static_cast<size_t>(y) * grid_size + x] = id;
    built += static_cast<int64_t>(bw) * bh;
  }
  scene.coverage_shortfall = built < density * total;

  std::uniform_int_distribution<int> cell_dist(0, grid_size - 1);
  std::uniform_real_distribution<double> txh_dist(15.0, 35.0);
  do {
    scene.tx_x = cell_dist(rng);
    scene.tx_y = cell_dist(rng);
  } while (scene.in_building(scene.tx_x, scene.tx_y));
  scene.tx_height_m = txh_dist(rng);
  return scene;
}

LosResult trace_los(const UrbanScene& scene, int x, int y,
                    double rx_height_m) {
  const int g = scene.grid_size;
  if (x < 0 || y < 0 || x >= g || y >= g)
    throw std::invalid_argument("trace_los: cell outside grid");
  if (scene.in_building(x, y)) return {LosVerdict::InsideBuilding, 0};
  if (x == scene.tx_x && y == scene.tx_y) return {LosVerdict::Los, 0};

  // Amanatides-Woo traversal from tx cell center to target cell center.
  const double x0 = scene.tx_x + 0.5, y0 = scene.tx_y + 0.5;
  const double x1 = x + 0.5, y1 = y + 0.5;
  const double dx = x1 - x0, dy = y1 - y0;
  int cx = scene.tx_x, cy = scene.tx_y;
  const int step_x = dx > 0 ? 1 : dx < 0 ? -1 : 0;
  const int step_y = dy > 0 ? 1 : dy < 0 ? -1 : 0;
  const double inv_dx = dx != 0 ? 1.0 / dx : 0.0;
  const double inv_dy = dy != 0 ? 1.0 / dy : 0.0;
  double t_max_x = step_x != 0
                       ? ((cx + (step_x > 0 ? 1.0 : 0.0)) - x0) * inv_dx
                       : 2.0;
  double t_max_y = step_y != 0
                       ? ((cy + (step_y > 0 ? 1.0 : 0.0)) - y0) * inv_dy
                       : 2.0;
  const double t_delta_x = step_x != 0 ? std::abs(inv_dx) : 2.0;
  const double t_delta_y = step_y != 0 ? std::abs(inv_dy) : 2.0;

  int crossings = 0;
  double t_enter = 0.0;
  while (true) {
    double t_exit;
    if (t_max_x < t_max_y) {
      t_exit = std::min(t_max_x, 1.0);
    } else {
      t_exit = std::min(t_max_y, 1.0);
    }
    const bool at_target = (cx == x && cy == y);
    if (!at_target && !(cx == scene.tx_x && cy == scene.tx_y) &&
        scene.in_building(cx, cy)) {
      const double t_mid = 0.5 * (t_enter + t_exit);
      const double ray_z =
          scene.tx_height_m + (rx_height_m - scene.tx_height_m) * t_mid;
      if (scene.building_height_at(cx, cy) > ray_z) ++crossings;
    }
    if (at_target) break;
    if (t_max_x < t_max_y) {
      t_enter = t_max_x;
      t_max_x += t_delta_x;
      cx += step_x;
    } else {
      t_enter = t_max_y;
      t_max_y += t_delta_y;
      cy += step_y;
    }
    if (cx < 0 || cy < 0 || cx >= g || cy >= g) break;
  }
  return {crossings == 0 ? LosVerdict::Los : LosVerdict::Nlos, crossings};
}

namespace {

// Seed-deterministic smoothed Gaussian field with the requested sigma.
std::vector<double> shadow_field(const UrbanScene& scene, double sigma) {
  const int g = scene.grid_size;
  std::vector<double> field(static_cast<size_t>(g) * g);
  std::mt19937_64 rng(mix_seed(scene.seed, 0x5AD0ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : field) v = normal(rng);

  // Separable box blur, three passes, radius 3.
  const int radius = 3;
  std::vector<double> tmp(field.size());
  for (int pass = 0; pass < 3; ++pass) {
    for (int y = 0; y < g; ++y)
      for (int x = 0; x < g; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int d = -radius; d <= radius; ++d) {
          const int xx = x + d;
          if (xx < 0 || xx >= g) continue;
          acc += field[static_cast<size_t>(y) * g + xx];
          ++cnt;
        }
        tmp[static_cast<size_t>(y) * g + x] = acc / cnt;
      }
    for (int y = 0; y < g; ++y)
      for (int x = 0; x < g; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int d = -radius; d <= radius; ++d) {
          const int yy = y + d;
          if (yy < 0 || yy >= g) continue;
          acc += tmp[static_cast<size_t>(yy) * g + x];
          ++cnt;
        }
        field[static_cast<size_t>(y) * g + x] = acc / cnt;
      }
  }
  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= field.size();
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  var /= field.size();
  const double scale = var > 0.0 ? sigma / std::sqrt(var) : 0.0;
  for (auto& v : field) v = (v - mean) * scale;
  return field;
}

std::vector<double> clutter_field(const UrbanScene& scene, int window) {
  const int g = scene.grid_size;
  const int r = window / 2;
  std::vector<double> c(static_cast<size_t>(g) * g);
  // Summed-area table of occupancy.
  std::vector<int32_t> sat(static_cast<size_t>(g + 1) * (g + 1), 0);
  for (int y = 0; y < g; ++y)
    for (int x = 0; x < g; ++x)
      sat[static_cast<size_t>(y + 1) * (g + 1) + x + 1] =
          sat[static_cast<size_t>(y) * (g + 1) + x + 1] +
          sat[static_cast<size_t>(y + 1) * (g + 1) + x] -
          sat[static_cast<size_t>(y) * (g + 1) + x] +
          (scene.occupancy[static_cast<size_t>(y) * g + x] >= 0 ? 1 : 0);
  for (int y = 0; y < g; ++y)
    for (int x = 0; x < g; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(g - 1, x + r);
      const int y0 = std::max(0, y - r), y1 = std::min(g - 1, y + r);
      const int built = sat[static_cast<size_t>(y1 + 1) * (g + 1) + x1 + 1] -
                        sat[static_cast<size_t>(y0) * (g + 1) + x1 + 1] -
                        sat[static_cast<size_t>(y1 + 1) * (g + 1) + x0] +
                        sat[static_cast<size_t>(y0) * (g + 1) + x0];
      c[static_cast<size_t>(y) * g + x] =
          static_cast<double>(built) / ((x1 - x0 + 1) * (y1 - y0 + 1));
    }
  return c;
}

}  // namespace

SceneSample synthesize_characteristics(const UrbanScene& scene,
                                       const PropagationParams& params) {
  const int g = scene.grid_size;
  SceneSample sample;
  sample.grid_size = g;
  sample.seed = scene.seed;
  sample.tx_x = static_cast<uint32_t>(scene.tx_x);
  sample.tx_y = static_cast<uint32_t>(scene.tx_y);
  sample.tx_height_m = static_cast<float>(scene.tx_height_m);
  sample.params_hash = params.hash();
  for (auto& r : sample.rasters) r.assign(static_cast<size_t>(g) * g, 0.f);

  const auto shadow = shadow_field(scene, params.shadow_sigma_db);
  const auto clutter = clutter_field(scene, params.clutter_window);
  const auto& specs = default_specs();

  for (int y = 0; y < g; ++y) {
    for (int x = 0; x < g; ++x) {
      const size_t i = static_cast<size_t>(y) * g + x;
      sample.raster(Characteristic::H)[i] =
          static_cast<float>(scene.building_height_at(x, y));
      if (scene.in_building(x, y)) {
        for (Characteristic c : kTargets)
          sample.raster(c)[i] =
              static_cast<float>(specs[static_cast<int>(c)].sentinel());
        continue;
      }
      const LosResult los = trace_los(scene, x, y, params.rx_height_m);
      const bool nlos = los.verdict == LosVerdict::Nlos;
      const double dxm = (x - scene.tx_x) * scene.cell_m;
      const double dym = (y - scene.tx_y) * scene.cell_m;
      const double dzm = scene.tx_height_m - params.rx_height_m;
      const double d =
          std::max(std::sqrt(dxm * dxm + dym * dym + dzm * dzm), scene.cell_m);
      const double c = clutter[i];
      const double pl = free_space_gain_db(d, params.frequency_mhz) -
                        los.wall_crossings * params.wall_loss_db - shadow[i];
      sample.raster(Characteristic::PL)[i] = static_cast<float>(pl);
      sample.raster(Characteristic::LOS)[i] = nlos ? 0.f : 1.f;
      sample.raster(Characteristic::DS)[i] = static_cast<float>(
          params.ds0_ns * (1.0 + params.ds_clutter * c + (nlos ? params.ds_nlos : 0.0)));
      sample.raster(Characteristic::PHI)[i] = static_cast<float>(
          params.phi_base + params.phi_clutter * c + (nlos ? params.phi_nlos : 0.0));
      sample.raster(Characteristic::THETA)[i] = static_cast<float>(
          params.theta_base + params.theta_clutter * c + (nlos ? params.theta_nlos : 0.0));
      sample.raster(Characteristic::RP)[i] = static_cast<float>(
          params.rp_base + params.rp_clutter * c + (nlos ? params.rp_nlos : 0.0));
    }
  }
  return sample;
}

}  // namespace chansr
