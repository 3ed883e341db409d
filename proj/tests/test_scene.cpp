#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "chansr/scene.hpp"

using namespace chansr;

namespace {

UrbanScene empty_scene(int g, int tx, int ty, double txh) {
  UrbanScene s;
  s.grid_size = g;
  s.occupancy.assign(static_cast<size_t>(g) * g, -1);
  s.tx_x = tx;
  s.tx_y = ty;
  s.tx_height_m = txh;
  s.seed = 11;
  return s;
}

void add_wall(UrbanScene& s, int x, double height) {
  const int32_t id = static_cast<int32_t>(s.building_heights.size());
  s.building_heights.push_back(height);
  for (int y = 0; y < s.grid_size; ++y)
    s.occupancy[static_cast<size_t>(y) * s.grid_size + x] = id;
}

// Line-sampling LOS reference: 16 probes per crossed cell along the segment.
bool oracle_los(const UrbanScene& s, int x, int y, double rx_h) {
  const double x0 = s.tx_x + 0.5, y0 = s.tx_y + 0.5;
  const double x1 = x + 0.5, y1 = y + 0.5;
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 16)));
  for (int i = 1; i < steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int cx = static_cast<int>(x0 + (x1 - x0) * t);
    const int cy = static_cast<int>(y0 + (y1 - y0) * t);
    if (cx == s.tx_x && cy == s.tx_y) continue;
    if (cx == x && cy == y) continue;
    if (!s.in_building(cx, cy)) continue;
    const double z = s.tx_height_m + (rx_h - s.tx_height_m) * t;
    if (s.building_height_at(cx, cy) > z) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mix_seed is deterministic and spreads indices") {
  CHECK(mix_seed(7, 0) == mix_seed(7, 0));
  std::set<uint64_t> seen;
  for (uint64_t i = 0; i < 100; ++i) seen.insert(mix_seed(7, i));
  CHECK(seen.size() == 100);
  CHECK(mix_seed(7, 0) != mix_seed(8, 0));
}

TEST_CASE("generate_scene validates preconditions") {
  CHECK_THROWS_AS(generate_scene(1, 15, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(generate_scene(1, 32, 0.6), std::invalid_argument);
  CHECK_THROWS_AS(generate_scene(1, 32, -0.1), std::invalid_argument);
}

TEST_CASE("zero density means zero buildings") {
  UrbanScene s = generate_scene(3, 32, 0.0);
  CHECK(s.building_heights.empty());
  CHECK(s.coverage() == 0.0);
  CHECK_FALSE(s.coverage_shortfall);
}

TEST_CASE("same seed reproduces the scene byte for byte") {
  UrbanScene a = generate_scene(123, 48, 0.3);
  UrbanScene b = generate_scene(123, 48, 0.3);
  CHECK(a.occupancy == b.occupancy);
  CHECK(a.building_heights == b.building_heights);
  CHECK(a.tx_x == b.tx_x);
  CHECK(a.tx_y == b.tx_y);
  CHECK(a.tx_height_m == b.tx_height_m);
  CHECK(generate_scene(124, 48, 0.3).occupancy != a.occupancy);
}

TEST_CASE("scene invariants: tx placement, rectangles, height range") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    UrbanScene s = generate_scene(seed, 40, 0.3);
    CHECK_FALSE(s.in_building(s.tx_x, s.tx_y));
    CHECK(s.tx_height_m >= 15.0);
    CHECK(s.tx_height_m <= 35.0);
    for (double h : s.building_heights) {
      CHECK(h >= 6.0);
      CHECK(h <= 40.0);
    }
    // each building's occupied cells fill their bounding box exactly
    for (size_t id = 0; id < s.building_heights.size(); ++id) {
      int x0 = s.grid_size, x1 = -1, y0 = s.grid_size, y1 = -1, cells = 0;
      for (int y = 0; y < s.grid_size; ++y)
        for (int x = 0; x < s.grid_size; ++x)
          if (s.occupancy[static_cast<size_t>(y) * s.grid_size + x] ==
              static_cast<int32_t>(id)) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
            ++cells;
          }
      REQUIRE(cells > 0);
      CHECK(cells == (x1 - x0 + 1) * (y1 - y0 + 1));
    }
  }
}

TEST_CASE("mean coverage over a seed sweep lands near the target") {
  double total = 0.0;
  const int n = 100;
  for (int i = 0; i < n; ++i)
    total += generate_scene(1000 + i, 64, 0.3).coverage();
  const double mean = total / n;
  CHECK(mean >= 0.25);
  CHECK(mean <= 0.35);
}

TEST_CASE("trace_los on an empty scene is LOS everywhere") {
  UrbanScene s = empty_scene(24, 5, 7, 25.0);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      LosResult r = trace_los(s, x, y);
      CHECK(r.verdict == LosVerdict::Los);
      CHECK(r.wall_crossings == 0);
    }
  CHECK_THROWS_AS(trace_los(s, -1, 0), std::invalid_argument);
  CHECK_THROWS_AS(trace_los(s, 0, 24), std::invalid_argument);
}

TEST_CASE("a full-height wall blocks the ray") {
  UrbanScene s = empty_scene(24, 2, 12, 25.0);
  add_wall(s, 10, 500.0);
  LosResult behind = trace_los(s, 20, 12);
  CHECK(behind.verdict == LosVerdict::Nlos);
  CHECK(behind.wall_crossings >= 1);
  LosResult before = trace_los(s, 5, 12);
  CHECK(before.verdict == LosVerdict::Los);
  LosResult inside = trace_los(s, 10, 12);
  CHECK(inside.verdict == LosVerdict::InsideBuilding);
}

TEST_CASE("a short wall under the ray height does not block") {
  UrbanScene s = empty_scene(24, 2, 12, 30.0);
  add_wall(s, 10, 1.0);
  CHECK(trace_los(s, 20, 12).verdict == LosVerdict::Los);
}

TEST_CASE("trace_los agrees with a supersampled line oracle") {
  int64_t agree = 0, total = 0;
  for (uint64_t seed : {21ULL, 22ULL, 23ULL}) {
    UrbanScene s = generate_scene(seed, 48, 0.3);
    for (int y = 0; y < s.grid_size; ++y)
      for (int x = 0; x < s.grid_size; ++x) {
        if (s.in_building(x, y)) continue;
        const LosResult r = trace_los(s, x, y);
        const bool ref = oracle_los(s, x, y, 1.5);
        ++total;
        if ((r.verdict == LosVerdict::Los) == ref) ++agree;
      }
  }
  CHECK(static_cast<double>(agree) / total >= 0.99);
}

TEST_CASE("free-space term matches the textbook value at 100 m") {
  CHECK(free_space_gain_db(100.0, 2600.0) ==
        doctest::Approx(-80.75).epsilon(1e-4));
}

TEST_CASE("LOS path gain without shadowing is pure free-space") {
  UrbanScene s = empty_scene(32, 3, 3, 20.0);
  PropagationParams p;
  p.shadow_sigma_db = 0.0;
  SceneSample sample = synthesize_characteristics(s, p);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double dxm = (x - 3) * s.cell_m, dym = (y - 3) * s.cell_m;
      const double dzm = 20.0 - p.rx_height_m;
      const double d =
          std::max(std::sqrt(dxm * dxm + dym * dym + dzm * dzm), s.cell_m);
      CHECK(sample.raster(Characteristic::PL)[static_cast<size_t>(y) * 32 + x] ==
            doctest::Approx(free_space_gain_db(d, p.frequency_mhz))
                .epsilon(1e-5));
    }
}

TEST_CASE("each wall crossing costs the configured wall loss") {
  UrbanScene one = empty_scene(32, 2, 16, 25.0);
  add_wall(one, 10, 500.0);
  UrbanScene two = one;
  add_wall(two, 20, 500.0);
  PropagationParams p;
  p.shadow_sigma_db = 0.0;

  REQUIRE(trace_los(one, 28, 16).wall_crossings == 1);
  REQUIRE(trace_los(two, 28, 16).wall_crossings == 2);

  SceneSample s0 = synthesize_characteristics(empty_scene(32, 2, 16, 25.0), p);
  SceneSample s1 = synthesize_characteristics(one, p);
  SceneSample s2 = synthesize_characteristics(two, p);
  const size_t i = 16 * 32 + 28;
  const float base = s0.raster(Characteristic::PL)[i];
  CHECK(s1.raster(Characteristic::PL)[i] ==
        doctest::Approx(base - 15.0).epsilon(1e-5));
  CHECK(s2.raster(Characteristic::PL)[i] ==
        doctest::Approx(base - 30.0).epsilon(1e-5));
  // monotone: more crossings never raise the gain
  CHECK(s2.raster(Characteristic::PL)[i] < s1.raster(Characteristic::PL)[i]);
  CHECK(s1.raster(Characteristic::PL)[i] < base);
}

TEST_CASE("NLOS adds fixed offsets to the spread characteristics") {
  // identical footprints; only the wall height differs, so clutter and
  // shadowing match cell for cell and the LOS flag is the only change
  UrbanScene blocked = empty_scene(32, 2, 16, 25.0);
  add_wall(blocked, 10, 500.0);
  UrbanScene open = blocked;
  open.building_heights[0] = 0.5;
  PropagationParams p;
  SceneSample sb = synthesize_characteristics(blocked, p);
  SceneSample so = synthesize_characteristics(open, p);
  const size_t i = 16 * 32 + 28;
  REQUIRE(sb.raster(Characteristic::LOS)[i] == 0.f);
  REQUIRE(so.raster(Characteristic::LOS)[i] == 1.f);
  CHECK(sb.raster(Characteristic::DS)[i] - so.raster(Characteristic::DS)[i] ==
        doctest::Approx(2.0 * p.ds0_ns).epsilon(1e-5));
  CHECK(sb.raster(Characteristic::PHI)[i] - so.raster(Characteristic::PHI)[i] ==
        doctest::Approx(p.phi_nlos).epsilon(1e-5));
  CHECK(sb.raster(Characteristic::THETA)[i] -
            so.raster(Characteristic::THETA)[i] ==
        doctest::Approx(p.theta_nlos).epsilon(1e-5));
  CHECK(sb.raster(Characteristic::RP)[i] - so.raster(Characteristic::RP)[i] ==
        doctest::Approx(p.rp_nlos).epsilon(1e-5));
}

TEST_CASE("building cells carry sentinels, open cells stay finite") {
  UrbanScene s = generate_scene(31, 32, 0.3);
  PropagationParams p;
  SceneSample sample = synthesize_characteristics(s, p);
  const auto& specs = default_specs();
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const size_t i = static_cast<size_t>(y) * 32 + x;
      if (s.in_building(x, y)) {
        CHECK(sample.raster(Characteristic::H)[i] ==
              doctest::Approx(s.building_height_at(x, y)));
        for (Characteristic c : kTargets)
          CHECK(sample.raster(c)[i] ==
                doctest::Approx(specs[static_cast<int>(c)].sentinel()));
      } else {
        CHECK(sample.raster(Characteristic::H)[i] == 0.f);
        for (int r = 0; r < kNumCharacteristics; ++r)
          CHECK(std::isfinite(sample.rasters[r][i]));
        const float los = sample.raster(Characteristic::LOS)[i];
        CHECK((los == 0.f || los == 1.f));
      }
    }
}

TEST_CASE("synthesis is reproducible for a fixed seed") {
  UrbanScene s = generate_scene(55, 32, 0.25);
  PropagationParams p;
  SceneSample a = synthesize_characteristics(s, p);
  SceneSample b = synthesize_characteristics(s, p);
  for (int r = 0; r < kNumCharacteristics; ++r) CHECK(a.rasters[r] == b.rasters[r]);
  CHECK(a.params_hash == b.params_hash);
  PropagationParams q;
  q.wall_loss_db = 10.0;
  CHECK(synthesize_characteristics(s, q).params_hash != a.params_hash);
}
