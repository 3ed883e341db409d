#pragma once

#include <string>
#include <vector>

#include "chansr/characteristics.hpp"

namespace chansr {

/// 16-bit P5 grayscale with raster min/max in a comment line so values can
/// be dequantized exactly; sentinel cells render as 0.
void write_pgm(const std::string& path, const std::vector<float>& map,
               int grid_size, const CharacteristicSpec& spec);

/// Native-unit CSV with 9 significant digits; sentinel cells as "NA".
void write_csv_map(const std::string& path, const std::vector<float>& map,
                   int grid_size, const CharacteristicSpec& spec);

/// Inverse of write_csv_map; "NA" decodes back to the sentinel.
std::vector<float> read_csv_map(const std::string& path, int grid_size,
                                const CharacteristicSpec& spec);

}  // namespace chansr
