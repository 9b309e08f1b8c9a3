#pragma once

#include "unirig/rig.hpp"

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace unirig {

// Meters internally; see to_millimeters() for reporting.
struct ErrorStats {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
  int count = 0;
};

ErrorStats to_millimeters(const ErrorStats& stats);

// Percentile with linear interpolation between order statistics at position
// p * (n - 1). `sorted` must be ascending and non-empty.
double percentile(std::span<const double> sorted, double p);

// Throws EmptySelection.
ErrorStats error_stats(std::span<const double> values);

// Paired per-vertex distances; `mask` (optional) marks vertices to include.
// Throws SizeMismatch, EmptySelection.
ErrorStats vertex_error_stats(const Points& a, const Points& b, std::span<const std::uint8_t> mask = {});

// Distance from each query to the nearest point on `surface`; `exclusion`
// (optional) marks queries to skip. Throws EmptyMesh, EmptySelection.
ErrorStats closest_point_error(const Points& query, const Mesh& surface, std::span<const std::uint8_t> exclusion = {});

enum class RegionKey { All = 0, Body, Hands, Feet, Head };
inline constexpr int kRegionKeyCount = 5;
std::string_view region_key_name(RegionKey key);

struct RegionBreakdown {
  // Empty where a region has no vertices.
  std::array<std::optional<ErrorStats>, kRegionKeyCount> stats;

  const std::optional<ErrorStats>& operator[](RegionKey key) const {
    return stats[static_cast<size_t>(key)];
  }
};

RegionBreakdown region_breakdown(const Points& a, const Points& b, std::span<const Region> regions);

struct Stability {
  double max_delta = 0.0;
  double mean_delta = 0.0;
  int frames = 0;
};

// Absolute differences of consecutive values. Throws TooFewFrames.
Stability temporal_stability(std::span<const double> per_frame);
// Per-frame region-mean vertex error between two sequences, then consecutive deltas (meters).
Stability temporal_stability(std::span<const Points> predicted, std::span<const Points> reference,
                             std::span<const std::uint8_t> region_mask = {});
// Geodesic steps between consecutive rotations, degrees.
Stability rotation_stability(std::span<const Mat3> rotations);

struct MachineInfo {
  std::string cpu;
  int hardware_threads = 0;
  int threads = 0;
  std::string compiler;
};

MachineInfo machine_info();

struct BenchRow {
  int batch = 0;
  double ms_per_call = 0.0; // median over repetitions
  double items_per_sec = 0.0;
  int repetitions = 0;
  bool low_confidence = false;
  std::vector<double> samples_ms;
};

struct BenchTable {
  std::string stage;
  int warmup = 0;
  std::vector<BenchRow> rows;
  MachineInfo machine;
};

// Times call(batch) `repetitions` times per batch size after `warmup` untimed
// runs. A single repetition is reported but flagged low-confidence.
BenchTable throughput_bench(const std::string& stage, const std::function<void(int batch)>& call,
                            std::span<const int> batch_sizes, int repetitions, int warmup = 1);

} // namespace unirig
