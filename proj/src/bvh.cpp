#include "unirig/error.hpp"
#include "unirig/parallel.hpp"
#include "unirig/topo_transfer.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <numeric>

namespace unirig {

namespace {

std::atomic<int> g_threads{0};

constexpr double kTieTolerance = 1e-12;

} // namespace

void set_thread_count(int threads) {
  g_threads = std::max(0, threads);
}

int thread_count() {
  const int t = g_threads.load();
  if (t > 0) {
    return t;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) {
    return a;
  }
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) {
    return b;
  }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    return a + (d1 / (d1 - d3)) * ab;
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) {
    return c;
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    return a + (d2 / (d2 - d6)) * ac;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

TriangleBvh::TriangleBvh(Points vertices, Faces faces, int leaf_size)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  check(faces_.rows() > 0, ErrorCode::EmptyMesh, "cannot build a BVH over a mesh with no faces");
  const int n = static_cast<int>(faces_.rows());
  centroids_.resize(static_cast<size_t>(n));
  for (int f = 0; f < n; ++f) {
    centroids_[f] = (vertices_.row(faces_(f, 0)) + vertices_.row(faces_(f, 1)) + vertices_.row(faces_(f, 2)))
                        .transpose() /
        3.0;
  }
  order_.resize(static_cast<size_t>(n));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(static_cast<size_t>(2 * n));
  build(0, n, std::max(1, leaf_size));
}

int TriangleBvh::build(int begin, int end, int leaf_size) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d centroid_box;
  for (int i = begin; i < end; ++i) {
    const int f = order_[i];
    for (int c = 0; c < 3; ++c) {
      box.extend(vertices_.row(faces_(f, c)).transpose());
    }
    centroid_box.extend(centroids_[f]);
  }
  nodes_[index].box = box;
  if (end - begin <= leaf_size) {
    nodes_[index].begin = begin;
    nodes_[index].count = end - begin;
    return index;
  }
  int axis = 0;
  centroid_box.sizes().maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double ca = centroids_[a][axis];
    const double cb = centroids_[b][axis];
    return ca < cb || (ca == cb && a < b);
  });
  const int left = build(begin, mid, leaf_size);
  const int right = build(mid, end, leaf_size);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

ClosestHit TriangleBvh::closest(const Vec3& query, const std::function<bool(int)>& accept) const {
  ClosestHit best;
  best.distance = std::numeric_limits<double>::infinity();
  std::vector<int> stack;
  stack.reserve(64);
  stack.push_back(0);
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (std::sqrt(node.box.squaredExteriorDistance(query)) > best.distance + kTieTolerance) {
      continue;
    }
    if (node.is_leaf()) {
      for (int i = node.begin; i < node.begin + node.count; ++i) {
        const int f = order_[i];
        if (accept && !accept(f)) {
          continue;
        }
        const Vec3 p = closest_point_on_triangle(query, vertices_.row(faces_(f, 0)), vertices_.row(faces_(f, 1)),
                                                 vertices_.row(faces_(f, 2)));
        const double d = (p - query).norm();
        const bool better = d < best.distance - kTieTolerance;
        const bool tie_lower = d <= best.distance + kTieTolerance && f < best.face;
        if (best.face < 0 || better || tie_lower) {
          best.face = f;
          best.distance = d;
          best.point = p;
        }
      }
      continue;
    }
    const double dl = nodes_[node.left].box.squaredExteriorDistance(query);
    const double dr = nodes_[node.right].box.squaredExteriorDistance(query);
    // Push the farther child first so the nearer one is explored first.
    if (dl <= dr) {
      stack.push_back(node.right);
      stack.push_back(node.left);
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  return best;
}

TriangleBvh build_bvh(const Mesh& mesh) {
  return TriangleBvh(mesh);
}

} // namespace unirig
