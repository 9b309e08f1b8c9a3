#include "oracles.hpp"

#include "unirig/error.hpp"
#include "unirig/metrics.hpp"
#include "unirig/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

using namespace unirig;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

const SynthRig& synth() {
  static const SynthRig s = make_rig();
  return s;
}

// Linear interpolation at p * (n - 1), written out longhand.
double naive_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

TEST_CASE("identical shapes have zero error") {
  const Points& v = synth().rig.mesh.vertices;
  const ErrorStats s = vertex_error_stats(v, v);
  CHECK(s.mean == 0.0);
  CHECK(s.max == 0.0);
  CHECK(s.count == v.rows());
}

TEST_CASE("uniform 3 mm offset") {
  const Points& v = synth().rig.mesh.vertices;
  Points moved = v;
  moved.rowwise() += Vec3(0.0, 0.003, 0.0).transpose();
  const ErrorStats s = to_millimeters(vertex_error_stats(v, moved));
  CHECK(s.mean == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(s.median == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(s.p95 == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(s.max == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("median and percentiles of a known list") {
  std::vector<double> mm(10);
  std::iota(mm.begin(), mm.end(), 1.0);
  std::vector<double> m;
  for (double x : mm) {
    m.push_back(x * 1e-3);
  }
  const ErrorStats s = to_millimeters(error_stats(m));
  CHECK(s.median == doctest::Approx(5.5));
  CHECK(s.mean == doctest::Approx(5.5));
  CHECK(s.max == doctest::Approx(10.0));
  CHECK(s.p95 == doctest::Approx(9.55));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> xs(37);
  for (double& x : xs) {
    x = u(rng);
  }
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  for (double p : {0.0, 0.1, 0.5, 0.95, 1.0}) {
    CHECK(percentile(sorted, p) == doctest::Approx(naive_percentile(xs, p)).epsilon(1e-12));
  }
  CHECK(code_of([] { error_stats(std::vector<double>{}); }) == ErrorCode::EmptySelection);
}

TEST_CASE("permutation invariance and mask equivalence") {
  const Points& a = synth().rig.mesh.vertices;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.002);
  Points b = a;
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    b.row(i) += Vec3(n(rng), n(rng), n(rng)).transpose();
  }
  std::vector<int> perm(static_cast<size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Points pa(a.rows(), 3);
  Points pb(a.rows(), 3);
  for (size_t i = 0; i < perm.size(); ++i) {
    pa.row(static_cast<Eigen::Index>(i)) = a.row(perm[i]);
    pb.row(static_cast<Eigen::Index>(i)) = b.row(perm[i]);
  }
  const ErrorStats s = vertex_error_stats(a, b);
  const ErrorStats p = vertex_error_stats(pa, pb);
  CHECK(s.mean == doctest::Approx(p.mean).epsilon(1e-12));
  CHECK(s.median == p.median);
  CHECK(s.max == p.max);

  // Mask against explicit subset.
  std::vector<std::uint8_t> mask(static_cast<size_t>(a.rows()), 0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < a.rows(); i += 3) {
    mask[static_cast<size_t>(i)] = 1;
    keep.push_back(i);
  }
  Points sa(static_cast<Eigen::Index>(keep.size()), 3);
  Points sb(static_cast<Eigen::Index>(keep.size()), 3);
  for (size_t i = 0; i < keep.size(); ++i) {
    sa.row(static_cast<Eigen::Index>(i)) = a.row(keep[i]);
    sb.row(static_cast<Eigen::Index>(i)) = b.row(keep[i]);
  }
  const ErrorStats masked = vertex_error_stats(a, b, mask);
  const ErrorStats subset = vertex_error_stats(sa, sb);
  CHECK(masked.count == subset.count);
  CHECK(masked.mean == doctest::Approx(subset.mean).epsilon(1e-12));
  CHECK(masked.p95 == subset.p95);

  std::vector<std::uint8_t> none(static_cast<size_t>(a.rows()), 0);
  CHECK(code_of([&] { vertex_error_stats(a, b, none); }) == ErrorCode::EmptySelection);
  CHECK(code_of([&] { vertex_error_stats(a, b.topRows(10)); }) == ErrorCode::SizeMismatch);
}

TEST_CASE("closest point error") {
  const Mesh sphere = make_icosphere(3, 0.5);
  const ErrorStats on = closest_point_error(sphere.vertices, sphere);
  CHECK(on.max < 1e-12);

  // Vertices pushed 2 mm out along the radius: nearest surface point is the vertex.
  Points out = sphere.vertices;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) *= (0.5 + 0.002) / out.row(i).norm();
  }
  const ErrorStats s = to_millimeters(closest_point_error(out, sphere));
  CHECK(s.mean == doctest::Approx(2.0).epsilon(0.05));
  double brute = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    brute += oracle::brute_closest(out.row(i).transpose(), sphere);
  }
  CHECK(s.mean == doctest::Approx(1e3 * brute / static_cast<double>(out.rows())).epsilon(1e-9));

  std::vector<std::uint8_t> all(static_cast<size_t>(out.rows()), 1);
  CHECK(code_of([&] { closest_point_error(out, sphere, all); }) == ErrorCode::EmptySelection);
  CHECK(code_of([&] { closest_point_error(out, Mesh{}); }) == ErrorCode::EmptyMesh);
}

TEST_CASE("region breakdown") {
  SynthConfig cfg;
  cfg.fingers_per_hand = 2;
  const SynthRig rig = make_rig(cfg);
  const Points& a = rig.rig.mesh.vertices;
  Points b = a;
  std::vector<double> want_sum(kRegionCount, 0.0);
  std::vector<int> want_count(kRegionCount, 0);
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    const auto r = static_cast<size_t>(rig.rig.mesh.regions[static_cast<size_t>(i)]);
    const double d = 0.001 * static_cast<double>(r + 1);
    b(i, 0) += d;
    want_sum[r] += d;
    ++want_count[r];
  }
  const RegionBreakdown br = region_breakdown(a, b, rig.rig.mesh.regions);
  REQUIRE(br[RegionKey::All].has_value());
  CHECK(br[RegionKey::All]->count == a.rows());
  const RegionKey keys[] = {RegionKey::Body, RegionKey::Hands, RegionKey::Feet, RegionKey::Head};
  for (int r = 0; r < kRegionCount; ++r) {
    CAPTURE(r);
    if (want_count[static_cast<size_t>(r)] == 0) {
      CHECK_FALSE(br[keys[r]].has_value());
    } else {
      REQUIRE(br[keys[r]].has_value());
      CHECK(br[keys[r]]->count == want_count[static_cast<size_t>(r)]);
      CHECK(br[keys[r]]->mean ==
            doctest::Approx(want_sum[static_cast<size_t>(r)] / want_count[static_cast<size_t>(r)]).epsilon(1e-9));
    }
  }
  CHECK(want_count[static_cast<size_t>(Region::Hands)] > 0);
}

TEST_CASE("temporal and rotation stability") {
  const std::vector<double> v = {0.0, 0.001, 0.003, 0.0025};
  const Stability s = temporal_stability(v);
  CHECK(s.max_delta == doctest::Approx(0.002));
  CHECK(s.mean_delta == doctest::Approx((0.001 + 0.002 + 0.0005) / 3.0));
  CHECK(s.frames == 4);
  CHECK(code_of([] { temporal_stability(std::vector<double>{1.0}); }) == ErrorCode::TooFewFrames);

  std::vector<Mat3> path;
  for (int f = 0; f < 5; ++f) {
    path.push_back(oracle::rotation(Vec3(0, 0, 1) * (M_PI / 180.0) * 2.0 * f));
  }
  const Stability r = rotation_stability(path);
  CHECK(r.max_delta == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(r.mean_delta == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(code_of([&] { rotation_stability(std::span<const Mat3>(path.data(), 1)); }) == ErrorCode::TooFewFrames);

  const Points& rest = synth().rig.mesh.vertices;
  std::vector<Points> pred;
  std::vector<Points> ref;
  for (int f = 0; f < 3; ++f) {
    ref.push_back(rest);
    Points p = rest;
    p.col(2).array() += 0.001 * f;
    pred.push_back(p);
  }
  const Stability seq = temporal_stability(pred, ref);
  CHECK(seq.max_delta == doctest::Approx(0.001).epsilon(1e-9));
  CHECK(code_of([&] { temporal_stability(std::span<const Points>(pred.data(), 1), std::span<const Points>(ref.data(), 1)); }) ==
        ErrorCode::TooFewFrames);
}

TEST_CASE("throughput bench bookkeeping") {
  int calls = 0;
  const std::vector<int> batches = {1, 4};
  const BenchTable one = throughput_bench("noop", [&](int) { ++calls; }, batches, 1, 2);
  CHECK(calls == 2 * 2 + 2 * 1);
  REQUIRE(one.rows.size() == 2);
  for (const BenchRow& row : one.rows) {
    CHECK(row.low_confidence);
    CHECK(row.repetitions == 1);
    CHECK(row.samples_ms.size() == 1);
  }
  CHECK(one.warmup == 2);

  // Warm-up runs are slow here and must not show up in the samples.
  int seen = 0;
  const BenchTable t = throughput_bench(
      "sleepy",
      [&](int) {
        if (seen++ < 1) {
          volatile double x = 0.0;
          for (int i = 0; i < 50'000'000; ++i) {
            x = x + 1.0;
          }
        }
      },
      std::vector<int>{8}, 5, 1);
  REQUIRE(t.rows.size() == 1);
  CHECK_FALSE(t.rows[0].low_confidence);
  CHECK(t.rows[0].samples_ms.size() == 5);
  CHECK(*std::max_element(t.rows[0].samples_ms.begin(), t.rows[0].samples_ms.end()) < 5.0);
  CHECK(t.rows[0].items_per_sec > 0.0);
  CHECK(t.machine.hardware_threads >= 1);

  CHECK(code_of([&] { throughput_bench("x", [](int) {}, batches, 0); }) == ErrorCode::InvalidConfig);
}
