#include "chansr/export.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "chansr/dataset.hpp"

namespace chansr {

void write_pgm(const std::string& path, const std::vector<float>& map,
               int grid_size, const CharacteristicSpec& spec) {
  if (static_cast<int64_t>(map.size()) !=
      static_cast<int64_t>(grid_size) * grid_size)
    throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);

  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (float v : map) {
    if (is_sentinel_native(v, spec)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo <= hi)) {
    lo = 0.f;
    hi = 0.f;
  }

  std::ostringstream header;
  header.precision(9);
  header << "P5\n# min " << lo << " max " << hi << "\n"
         << grid_size << " " << grid_size << "\n65535\n";
  os << header.str();
  const double denom = hi > lo ? hi - lo : 1.0;
  for (float v : map) {
    uint16_t q = 0;
    if (!is_sentinel_native(v, spec) && hi > lo)
      q = static_cast<uint16_t>(
          std::lround((v - lo) / denom * 65535.0));
    // PGM stores 16-bit samples big-endian
    const uint8_t bytes[2] = {static_cast<uint8_t>(q >> 8),
                              static_cast<uint8_t>(q & 0xff)};
    os.write(reinterpret_cast<const char*>(bytes), 2);
  }
  if (!os) throw std::runtime_error("write_pgm: write failed: " + path);
}

void write_csv_map(const std::string& path, const std::vector<float>& map,
                   int grid_size, const CharacteristicSpec& spec) {
  if (static_cast<int64_t>(map.size()) !=
      static_cast<int64_t>(grid_size) * grid_size)
    throw std::invalid_argument("write_csv_map: size mismatch");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_csv_map: cannot open " + path);
  os.precision(9);
  for (int y = 0; y < grid_size; ++y) {
    for (int x = 0; x < grid_size; ++x) {
      if (x) os << ",";
      const float v = map[static_cast<size_t>(y) * grid_size + x];
      if (is_sentinel_native(v, spec))
        os << "NA";
      else
        os << v;
    }
    os << "\n";
  }
  if (!os) throw std::runtime_error("write_csv_map: write failed: " + path);
}

std::vector<float> read_csv_map(const std::string& path, int grid_size,
                                const CharacteristicSpec& spec) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_csv_map: cannot open " + path);
  std::vector<float> map;
  map.reserve(static_cast<size_t>(grid_size) * grid_size);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      if (cell == "NA")
        map.push_back(static_cast<float>(spec.sentinel()));
      else
        map.push_back(std::stof(cell));
    }
  }
  if (static_cast<int64_t>(map.size()) !=
      static_cast<int64_t>(grid_size) * grid_size)
    throw std::runtime_error("read_csv_map: unexpected cell count in " + path);
  return map;
}

}  // namespace chansr
