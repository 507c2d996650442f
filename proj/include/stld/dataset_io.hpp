#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <vector>

#include "stld/synth.hpp"

namespace stld {

/// On-disk dataset directory:
///   manifest.json      ids, splits, pose latents, generator config and seed
///   rasters/<id>.f32   header of three little-endian int32 (H0, W0, channels)
///                      followed by H0*W0*channels little-endian float32
///   hidden_gt.csv      id,landmark_index,x,y for every sample
///   labels.csv         id,landmark_index,x,y for samples that carry gt
struct StoredTask {
  TaskConfig config;
  std::uint64_t seed = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

void write_raster(const std::filesystem::path& path, const Raster& image);
Raster read_raster(const std::filesystem::path& path);

void write_landmarks_csv(std::ostream& out, const std::map<int, LandmarkSet>& rows);
std::map<int, LandmarkSet> read_landmarks_csv(std::istream& in);

void save_task(const std::filesystem::path& dir, const StoredTask& task);
/// Rasters come back at float32 precision.
StoredTask load_task(const std::filesystem::path& dir);

}  // namespace stld
