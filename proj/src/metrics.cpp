#include "unirig/metrics.hpp"

#include "unirig/error.hpp"
#include "unirig/parallel.hpp"
#include "unirig/rotation.hpp"
#include "unirig/topo_transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace unirig {

ErrorStats to_millimeters(const ErrorStats& stats) {
  return {stats.mean * 1e3, stats.median * 1e3, stats.p95 * 1e3, stats.max * 1e3, stats.count};
}

double percentile(std::span<const double> sorted, double p) {
  check(!sorted.empty(), ErrorCode::EmptySelection, "percentile of an empty set");
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

ErrorStats error_stats(std::span<const double> values) {
  check(!values.empty(), ErrorCode::EmptySelection, "no values selected");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  ErrorStats s;
  s.count = static_cast<int>(sorted.size());
  // Summing in sorted order keeps the mean independent of input order.
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  s.median = percentile(sorted, 0.5);
  s.p95 = percentile(sorted, 0.95);
  s.max = sorted.back();
  return s;
}

ErrorStats vertex_error_stats(const Points& a, const Points& b, std::span<const std::uint8_t> mask) {
  check(a.rows() == b.rows(), ErrorCode::SizeMismatch, "position arrays differ in length");
  check(mask.empty() || static_cast<Eigen::Index>(mask.size()) == a.rows(), ErrorCode::SizeMismatch,
        "mask length does not match the positions");
  std::vector<double> d;
  d.reserve(static_cast<size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (mask.empty() || mask[static_cast<size_t>(i)] != 0) {
      d.push_back((a.row(i) - b.row(i)).norm());
    }
  }
  return error_stats(d);
}

ErrorStats closest_point_error(const Points& query, const Mesh& surface, std::span<const std::uint8_t> exclusion) {
  check(exclusion.empty() || static_cast<Eigen::Index>(exclusion.size()) == query.rows(), ErrorCode::SizeMismatch,
        "exclusion mask length does not match the queries");
  const TriangleBvh bvh(surface);
  std::vector<int> selected;
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    if (exclusion.empty() || exclusion[static_cast<size_t>(i)] == 0) {
      selected.push_back(static_cast<int>(i));
    }
  }
  std::vector<double> d(selected.size());
  parallel_for(static_cast<int>(selected.size()), [&](int begin, int end) {
    for (int e = begin; e < end; ++e) {
      d[e] = bvh.closest(query.row(selected[e]).transpose()).distance;
    }
  });
  return error_stats(d);
}

std::string_view region_key_name(RegionKey key) {
  switch (key) {
    case RegionKey::All:
      return "all";
    case RegionKey::Body:
      return "body";
    case RegionKey::Hands:
      return "hands";
    case RegionKey::Feet:
      return "feet";
    case RegionKey::Head:
      return "head";
  }
  return "?";
}

RegionBreakdown region_breakdown(const Points& a, const Points& b, std::span<const Region> regions) {
  check(a.rows() == b.rows(), ErrorCode::SizeMismatch, "position arrays differ in length");
  check(regions.empty() || static_cast<Eigen::Index>(regions.size()) == a.rows(), ErrorCode::SizeMismatch,
        "region labels do not match the positions");
  std::array<std::vector<double>, kRegionKeyCount> buckets;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double d = (a.row(i) - b.row(i)).norm();
    buckets[0].push_back(d);
    if (!regions.empty()) {
      buckets[1 + static_cast<size_t>(regions[static_cast<size_t>(i)])].push_back(d);
    }
  }
  RegionBreakdown out;
  for (int r = 0; r < kRegionKeyCount; ++r) {
    if (!buckets[r].empty()) {
      out.stats[r] = error_stats(buckets[r]);
    }
  }
  return out;
}

Stability temporal_stability(std::span<const double> per_frame) {
  check(per_frame.size() >= 2, ErrorCode::TooFewFrames, "temporal stability needs at least 2 frames");
  Stability s;
  s.frames = static_cast<int>(per_frame.size());
  for (size_t f = 1; f < per_frame.size(); ++f) {
    const double d = std::abs(per_frame[f] - per_frame[f - 1]);
    s.max_delta = std::max(s.max_delta, d);
    s.mean_delta += d;
  }
  s.mean_delta /= static_cast<double>(per_frame.size() - 1);
  return s;
}

Stability temporal_stability(std::span<const Points> predicted, std::span<const Points> reference,
                             std::span<const std::uint8_t> region_mask) {
  check(predicted.size() == reference.size(), ErrorCode::SizeMismatch, "sequences differ in frame count");
  check(predicted.size() >= 2, ErrorCode::TooFewFrames, "temporal stability needs at least 2 frames");
  std::vector<double> means(predicted.size());
  for (size_t f = 0; f < predicted.size(); ++f) {
    means[f] = vertex_error_stats(predicted[f], reference[f], region_mask).mean;
  }
  return temporal_stability(means);
}

Stability rotation_stability(std::span<const Mat3> rotations) {
  check(rotations.size() >= 2, ErrorCode::TooFewFrames, "temporal stability needs at least 2 frames");
  Stability s;
  s.frames = static_cast<int>(rotations.size());
  for (size_t f = 1; f < rotations.size(); ++f) {
    const double d = geodesic_distance(rotations[f - 1], rotations[f]) * 180.0 / M_PI;
    s.max_delta = std::max(s.max_delta, d);
    s.mean_delta += d;
  }
  s.mean_delta /= static_cast<double>(rotations.size() - 1);
  return s;
}

} // namespace unirig
