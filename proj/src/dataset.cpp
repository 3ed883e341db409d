#include "chansr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "chansr/tensor.hpp"

namespace chansr {

std::vector<size_t> Dataset::indices_of(Split s) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

std::vector<float> sanitize(std::vector<float> map,
                            const CharacteristicSpec& spec) {
  for (float& v : map) {
    if (is_sentinel_native(v, spec)) continue;
    switch (spec.policy) {
      case OverflowPolicy::ToMin:
        if (v < spec.min) v = static_cast<float>(spec.min);
        if (v > spec.max) v = static_cast<float>(spec.max);
        break;
      case OverflowPolicy::ToMax:
        if (v > spec.max) v = static_cast<float>(spec.max);
        if (v < spec.min) v = static_cast<float>(spec.min);
        break;
      case OverflowPolicy::None:
        break;
    }
  }
  return map;
}

std::vector<double> normalize_map(const std::vector<float>& map,
                                  const CharacteristicSpec& spec) {
  std::vector<double> out(map.size());
  for (size_t i = 0; i < map.size(); ++i)
    out[i] = is_sentinel_native(map[i], spec) ? -0.1 : spec.normalize(map[i]);
  return out;
}

std::vector<float> denormalize_map(const std::vector<double>& map,
                                   const CharacteristicSpec& spec) {
  std::vector<float> out(map.size());
  for (size_t i = 0; i < map.size(); ++i)
    out[i] = static_cast<float>(map[i] < kSentinelThreshold
                                    ? spec.sentinel()
                                    : spec.denormalize(map[i]));
  return out;
}

std::vector<float> downsample(const std::vector<float>& map, int grid_size,
                              int scale, const CharacteristicSpec& spec) {
  if (scale != 2 && scale != 4 && scale != 8)
    throw std::invalid_argument("downsample: scale must be 2, 4 or 8");
  if (grid_size % scale != 0)
    throw std::invalid_argument("downsample: grid " +
                                std::to_string(grid_size) +
                                " not divisible by scale " +
                                std::to_string(scale));
  const int lr = grid_size / scale;
  std::vector<float> out(static_cast<size_t>(lr) * lr);
  for (int oy = 0; oy < lr; ++oy)
    for (int ox = 0; ox < lr; ++ox) {
      if (spec.kind == Characteristic::H) {
        double acc = 0.0;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx)
            acc += map[static_cast<size_t>(oy * scale + dy) * grid_size +
                       ox * scale + dx];
        out[static_cast<size_t>(oy) * lr + ox] =
            static_cast<float>(acc / (scale * scale));
      } else if (spec.kind == Characteristic::LOS) {
        int ones = 0, zeros = 0;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx) {
            const float v = map[static_cast<size_t>(oy * scale + dy) * grid_size +
                                ox * scale + dx];
            if (is_sentinel_native(v, spec)) continue;
            (v > 0.5f ? ones : zeros)++;
          }
        out[static_cast<size_t>(oy) * lr + ox] =
            (ones + zeros == 0) ? static_cast<float>(spec.sentinel())
            : (ones > zeros)    ? 1.f
                                : 0.f;  // tie -> NLOS
      } else {
        double acc = 0.0;
        int valid = 0;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx) {
            const float v = map[static_cast<size_t>(oy * scale + dy) * grid_size +
                                ox * scale + dx];
            if (is_sentinel_native(v, spec)) continue;
            acc += v;
            ++valid;
          }
        out[static_cast<size_t>(oy) * lr + ox] =
            valid == 0 ? static_cast<float>(spec.sentinel())
                       : static_cast<float>(acc / valid);
      }
    }
  return out;
}

namespace {

// index transform: out(x', y') = in(fx(x',y'), fy(x',y'))
template <typename Fn>
std::vector<float> remap(const std::vector<float>& in, int g, Fn src) {
  std::vector<float> out(in.size());
  for (int y = 0; y < g; ++y)
    for (int x = 0; x < g; ++x) {
      auto [sx, sy] = src(x, y);
      out[static_cast<size_t>(y) * g + x] =
          in[static_cast<size_t>(sy) * g + sx];
    }
  return out;
}

SceneSample transform_sample(const SceneSample& s, int which) {
  const int g = s.grid_size;
  SceneSample out = s;
  auto apply = [&](auto src, int tx, int ty) {
    for (int r = 0; r < kNumCharacteristics; ++r)
      out.rasters[r] = remap(s.rasters[r], g, src);
    out.tx_x = static_cast<uint32_t>(tx);
    out.tx_y = static_cast<uint32_t>(ty);
  };
  const int tx = static_cast<int>(s.tx_x), ty = static_cast<int>(s.tx_y);
  switch (which) {
    case 0:
      break;  // identity
    case 1:   // rot90 ccw
      apply([g](int x, int y) { return std::pair{g - 1 - y, x}; }, ty,
            g - 1 - tx);
      break;
    case 2:  // rot180
      apply([g](int x, int y) { return std::pair{g - 1 - x, g - 1 - y}; },
            g - 1 - tx, g - 1 - ty);
      break;
    case 3:  // rot270 (cw 90)
      apply([g](int x, int y) { return std::pair{y, g - 1 - x}; }, g - 1 - ty,
            tx);
      break;
    case 4:  // horizontal flip (mirror x)
      apply([g](int x, int y) { return std::pair{g - 1 - x, y}; }, g - 1 - tx,
            ty);
      break;
    case 5:  // vertical flip
      apply([g](int x, int y) { return std::pair{x, g - 1 - y}; }, tx,
            g - 1 - ty);
      break;
  }
  return out;
}

}  // namespace

std::array<SceneSample, 6> augment(const SceneSample& sample) {
  std::array<SceneSample, 6> out;
  for (int i = 0; i < 6; ++i) out[i] = transform_sample(sample, i);
  return out;
}

SceneSample augment_one(const SceneSample& sample, int which) {
  if (which < 0 || which >= 6)
    throw std::invalid_argument("augment_one: variant index out of range");
  return transform_sample(sample, which);
}

void assign_split(Dataset& dataset, double train_ratio, double val_ratio,
                  double test_ratio, uint64_t seed) {
  const double total = train_ratio + val_ratio + test_ratio;
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("assign_split: ratios must sum to 1");
  const size_t n = dataset.samples.size();
  if (n < 3)
    throw std::invalid_argument("assign_split: fewer scenes than splits");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x51137ULL));
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(val_ratio * n));
  const size_t n_test = std::max<size_t>(1, static_cast<size_t>(test_ratio * n));
  dataset.split.assign(n, Split::Train);
  for (size_t i = 0; i < n_val; ++i) dataset.split[order[i]] = Split::Val;
  for (size_t i = n_val; i < n_val + n_test; ++i)
    dataset.split[order[i]] = Split::Test;
}

namespace {

constexpr char kMagic[4] = {'C', 'S', 'R', 'D'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_le(std::ofstream& os, T v) {
  // little-endian host assumed; bytes written as stored
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw DatasetError(DatasetErrorKind::Truncated,
                       std::string("dataset file truncated reading ") + what);
  return v;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw DatasetError(DatasetErrorKind::Io, "cannot open for write: " + path);
  os.write(kMagic, 4);
  write_le<uint16_t>(os, kVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(dataset.samples.size()));
  write_le<uint32_t>(os, dataset.grid_size);
  for (const SceneSample& s : dataset.samples) {
    write_le<uint64_t>(os, s.seed);
    write_le<uint32_t>(os, s.tx_x);
    write_le<uint32_t>(os, s.tx_y);
    write_le<float>(os, s.tx_height_m);
    for (const auto& raster : s.rasters)
      os.write(reinterpret_cast<const char*>(raster.data()),
               static_cast<std::streamsize>(raster.size() * sizeof(float)));
  }
  if (!os)
    throw DatasetError(DatasetErrorKind::Io, "write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw DatasetError(DatasetErrorKind::Io, "cannot open for read: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DatasetError(DatasetErrorKind::BadMagic,
                       "bad magic in dataset file: " + path);
  const uint16_t version = read_le<uint16_t>(is, "version");
  if (version != kVersion)
    throw DatasetError(DatasetErrorKind::BadVersion,
                       "unsupported dataset version " + std::to_string(version));
  const uint32_t count = read_le<uint32_t>(is, "sample count");
  const uint32_t grid = read_le<uint32_t>(is, "grid size");
  Dataset ds;
  ds.grid_size = grid;
  ds.samples.reserve(count);
  const size_t cells = static_cast<size_t>(grid) * grid;
  for (uint32_t i = 0; i < count; ++i) {
    SceneSample s;
    s.grid_size = static_cast<int>(grid);
    s.seed = read_le<uint64_t>(is, "seed");
    s.tx_x = read_le<uint32_t>(is, "tx_x");
    s.tx_y = read_le<uint32_t>(is, "tx_y");
    s.tx_height_m = read_le<float>(is, "tx height");
    for (auto& raster : s.rasters) {
      raster.resize(cells);
      is.read(reinterpret_cast<char*>(raster.data()),
              static_cast<std::streamsize>(cells * sizeof(float)));
      if (!is)
        throw DatasetError(DatasetErrorKind::Truncated,
                           "dataset file truncated mid-raster");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset generate_dataset(uint64_t master_seed, int count, int grid_size,
                         double density, const PropagationParams& params) {
  Dataset ds;
  ds.grid_size = static_cast<uint32_t>(grid_size);
  ds.samples.resize(count);
  parallel_for(count, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      const uint64_t scene_seed = mix_seed(master_seed, static_cast<uint64_t>(i));
      UrbanScene scene = generate_scene(scene_seed, grid_size, density);
      SceneSample sample = synthesize_characteristics(scene, params);
      const auto& specs = default_specs();
      for (int r = 0; r < kNumCharacteristics; ++r)
        sample.rasters[r] = sanitize(std::move(sample.rasters[r]), specs[r]);
      ds.samples[i] = std::move(sample);
    }
  });
  return ds;
}

}  // namespace chansr
