#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "chansr/scene.hpp"

namespace chansr {

enum class Split : uint8_t { Train = 0, Val = 1, Test = 2 };

struct Dataset {
  uint32_t grid_size = 0;
  std::vector<SceneSample> samples;
  std::vector<Split> split;  // per sample; empty until assign_split

  std::vector<size_t> indices_of(Split s) const;
};

enum class DatasetErrorKind { BadMagic, BadVersion, Truncated, Io };

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

/// Native rasters are f32 and every writer stores the same cast of the
/// sentinel, so exact comparison is safe. Out-of-range measurement values
/// (for example a path gain below range minimum) are NOT sentinels; they get
/// clamped by sanitize instead.
inline bool is_sentinel_native(double v, const CharacteristicSpec& spec) {
  return static_cast<float>(v) == static_cast<float>(spec.sentinel());
}

/// Replaces out-of-range values per the spec's overflow policy. Sentinel
/// cells pass through untouched. Idempotent.
std::vector<float> sanitize(std::vector<float> map,
                            const CharacteristicSpec& spec);

/// Linear [min,max] -> [0,1]; sentinel cells map to exactly -0.1.
std::vector<double> normalize_map(const std::vector<float>& map,
                                  const CharacteristicSpec& spec);

/// Inverse of normalize_map; values below -0.05 decode to the sentinel.
std::vector<float> denormalize_map(const std::vector<double>& map,
                                   const CharacteristicSpec& spec);

/// HR -> LR. Continuous kinds: block mean excluding sentinel cells
/// (all-sentinel block -> sentinel). LOS: majority vote, tie -> NLOS.
/// h: plain block mean.
std::vector<float> downsample(const std::vector<float>& map, int grid_size,
                              int scale, const CharacteristicSpec& spec);

/// The six dihedral variants: identity, rot90 (ccw), rot180, rot270,
/// horizontal flip, vertical flip. All rasters and tx metadata transformed
/// together.
std::array<SceneSample, 6> augment(const SceneSample& sample);

/// One of the six dihedral variants (0 = identity), same ordering as augment.
SceneSample augment_one(const SceneSample& sample, int which);

/// Splits by scene with floor(ratio * n) for val/test and the remainder in
/// train; deterministic per seed. Requires at least 3 scenes.
void assign_split(Dataset& dataset, double train_ratio, double val_ratio,
                  double test_ratio, uint64_t seed);

void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

/// Generates scenes + characteristics for indices [0, count) from a master
/// seed; parallel over scenes, bitwise-deterministic for any thread count.
Dataset generate_dataset(uint64_t master_seed, int count, int grid_size,
                         double density, const PropagationParams& params);

}  // namespace chansr
