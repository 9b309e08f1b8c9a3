#include "unirig/animation.hpp"

#include "unirig/error.hpp"
#include "unirig/parallel.hpp"
#include "unirig/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <queue>

namespace unirig {

namespace {

// G_k.R = G_p.R * pre_k * R_k, G_k.t = G_p.t + G_p.R * offset_k.
// Root: G_0.R = pre_0 * R_0, G_0.t = offset_0 + root translation.
struct ChainLink {
  Mat3 pre;
  Vec3 offset;
};

std::vector<ChainLink> chain_links(std::span<const int> parents, std::span<const RigidTransform> bind,
                                   bool joint_orient) {
  std::vector<ChainLink> links(parents.size());
  for (size_t k = 0; k < parents.size(); ++k) {
    const int p = parents[k];
    if (p == kNoParent) {
      links[k].pre = joint_orient ? bind[k].rotation : Mat3::Identity();
      links[k].offset = bind[k].translation;
    } else if (joint_orient) {
      const RigidTransform local = bind[p].inverse() * bind[k];
      links[k].pre = local.rotation;
      links[k].offset = local.translation;
    } else {
      links[k].pre = Mat3::Identity();
      links[k].offset = bind[k].translation - bind[p].translation;
    }
  }
  return links;
}

std::vector<RigidTransform> state_bind(const SkeletonState& state) {
  return state.transforms();
}

} // namespace

GlobalTransforms forward_kinematics(std::span<const int> parents, std::span<const RigidTransform> bind,
                                    std::span<const Mat3> local_rotations, const Vec3& root_translation,
                                    bool joint_orient) {
  check(parents.size() == bind.size() && parents.size() == local_rotations.size(), ErrorCode::SizeMismatch,
        "pose joint count does not match the skeleton");
  const auto links = chain_links(parents, bind, joint_orient);
  GlobalTransforms out;
  out.transforms.resize(parents.size());
  for (size_t k = 0; k < parents.size(); ++k) {
    const int p = parents[k];
    auto& g = out.transforms[k];
    if (p == kNoParent) {
      g.rotation = links[k].pre * local_rotations[k];
      g.translation = links[k].offset + root_translation;
    } else {
      const auto& gp = out.transforms[static_cast<size_t>(p)];
      g.rotation = gp.rotation * links[k].pre * local_rotations[k];
      g.translation = gp.translation + gp.rotation * links[k].offset;
    }
  }
  return out;
}

GlobalTransforms forward_kinematics(const Skeleton& skeleton, const PoseFrame& pose) {
  check(pose.joint_count() == skeleton.joint_count(), ErrorCode::SizeMismatch,
        "pose has " + std::to_string(pose.joint_count()) + " joints, skeleton " +
            std::to_string(skeleton.joint_count()));
  const auto local = pose.matrices();
  return forward_kinematics(skeleton.parents, skeleton.bind, local, pose.root_translation, pose.joint_orient);
}

GlobalTransforms forward_kinematics(const Skeleton& skeleton, const SkeletonState& fitted, const PoseFrame& pose) {
  check(pose.joint_count() == skeleton.joint_count() && fitted.joint_count() == skeleton.joint_count(),
        ErrorCode::SizeMismatch, "pose, skeleton and fitted state disagree on joint count");
  const auto local = pose.matrices();
  const auto bind = state_bind(fitted);
  return forward_kinematics(skeleton.parents, bind, local, pose.root_translation, pose.joint_orient);
}

Points lbs_pose(const Points& rest_vertices, const SkinningWeights& weights, const GlobalTransforms& globals,
                std::span<const RigidTransform> bind_inverse) {
  const int n = static_cast<int>(rest_vertices.rows());
  check(weights.vertex_count() == n, ErrorCode::SizeMismatch, "weights and rest shape differ in vertex count");
  check(static_cast<size_t>(globals.joint_count()) == bind_inverse.size(), ErrorCode::SizeMismatch,
        "globals and bind inverses differ in joint count");
  std::vector<RigidTransform> skin(bind_inverse.size());
  for (size_t k = 0; k < skin.size(); ++k) {
    skin[k] = globals.transforms[k] * bind_inverse[k];
  }
  Points out(n, 3);
  parallel_for(n, [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const Vec3 v = rest_vertices.row(i).transpose();
      Vec3 acc = Vec3::Zero();
      const auto js = weights.row_joints(i);
      const auto ws = weights.row_values(i);
      for (size_t e = 0; e < js.size(); ++e) {
        check(js[e] >= 0 && static_cast<size_t>(js[e]) < skin.size(), ErrorCode::SizeMismatch,
              "weight references a missing joint");
        const auto& m = skin[static_cast<size_t>(js[e])];
        acc += ws[e] * (m.rotation * v + m.translation);
      }
      out.row(i) = acc.transpose();
    }
  });
  return out;
}

std::vector<std::vector<std::int32_t>> derive_corrective_masks(const RigAsset& rig, double geodesic_radius,
                                                               int channels, std::vector<std::string>* warnings) {
  check(geodesic_radius >= 0.0 && std::isfinite(geodesic_radius), ErrorCode::InvalidConfig,
        "geodesic radius must be finite and non-negative");
  check(channels >= 1, ErrorCode::InvalidConfig, "channel count must be positive");
  const int n = rig.vertex_count();
  const int j = rig.joint_count();
  const auto& v = rig.mesh.vertices;

  std::vector<std::vector<std::pair<int, double>>> adjacency(static_cast<size_t>(n));
  for (int f = 0; f < rig.mesh.face_count(); ++f) {
    for (int e = 0; e < 3; ++e) {
      const int a = rig.mesh.faces(f, e);
      const int b = rig.mesh.faces(f, (e + 1) % 3);
      const double len = (v.row(a) - v.row(b)).norm();
      adjacency[a].emplace_back(b, len);
      adjacency[b].emplace_back(a, len);
    }
  }

  // Component count by flood fill.
  {
    std::vector<int> comp(static_cast<size_t>(n), -1);
    int count = 0;
    for (int s = 0; s < n; ++s) {
      if (comp[s] >= 0) {
        continue;
      }
      std::vector<int> stack{s};
      comp[s] = count;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (const auto& [w, len] : adjacency[u]) {
          if (comp[w] < 0) {
            comp[w] = count;
            stack.push_back(w);
          }
        }
      }
      ++count;
    }
    if (count > 1 && warnings != nullptr) {
      warnings->push_back("DisconnectedMesh: edge graph has " + std::to_string(count) +
                          " components; masks do not cross components");
    }
  }

  std::vector<std::vector<std::int32_t>> per_joint(static_cast<size_t>(j));
  parallel_for(
      j,
      [&](int begin, int end) {
        std::vector<double> dist(static_cast<size_t>(n));
        using Item = std::pair<double, int>;
        for (int k = begin; k < end; ++k) {
          std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
          std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
          for (int i = 0; i < n; ++i) {
            if (rig.weights.weight(i, k) > 1e-3) {
              dist[i] = 0.0;
              heap.emplace(0.0, i);
            }
          }
          while (!heap.empty()) {
            const auto [d, u] = heap.top();
            heap.pop();
            if (d > dist[u]) {
              continue;
            }
            for (const auto& [w, len] : adjacency[u]) {
              const double nd = d + len;
              if (nd <= geodesic_radius && nd < dist[w]) {
                dist[w] = nd;
                heap.emplace(nd, w);
              }
            }
          }
          auto& mask = per_joint[static_cast<size_t>(k)];
          for (int i = 0; i < n; ++i) {
            if (dist[i] <= geodesic_radius) {
              mask.push_back(i);
            }
          }
        }
      },
      1);

  std::vector<std::vector<std::int32_t>> masks;
  masks.reserve(static_cast<size_t>(j * channels));
  for (int k = 0; k < j; ++k) {
    for (int c = 0; c < channels; ++c) {
      masks.push_back(per_joint[static_cast<size_t>(k)]);
    }
  }
  return masks;
}

std::vector<Mat3> corrective_inputs(const Skeleton& skeleton, std::span<const RigidTransform> bind,
                                    const PoseFrame& pose) {
  auto local = pose.matrices();
  if (!pose.joint_orient) {
    for (int k = 0; k < skeleton.joint_count(); ++k) {
      const int p = skeleton.parents[k];
      const Mat3 pre = p == kNoParent ? bind[k].rotation : Mat3(bind[p].rotation.transpose() * bind[k].rotation);
      local[k] = pre.transpose() * local[k];
    }
  }
  return local;
}

Points apply_correctives(const CorrectivesNet& net, const PoseFrame& pose) {
  check(pose.joint_count() == net.joint_count(), ErrorCode::ShapeMismatch,
        "pose joint count does not match the correctives net");
  const auto local = pose.matrices();
  return net.evaluate(local);
}

MeshPoser::MeshPoser(const RigAsset& rig, const FitConfig& fit_config) : rig_(&rig), fitter_(rig, fit_config) {}

Points MeshPoser::pose(const Points& rest_vertices, const PoseFrame& pose, const PoseOptions& options) const {
  return this->pose(rest_vertices, fitter_.fit(rest_vertices), pose, options);
}

Points MeshPoser::pose(const Points& rest_vertices, const SkeletonState& skeleton, const PoseFrame& pose,
                       const PoseOptions& options) const {
  const RigAsset& rig = *rig_;
  check(rest_vertices.rows() == rig.vertex_count(), ErrorCode::SizeMismatch,
        "rest shape vertex count does not match the rig");
  check(pose.joint_count() == rig.joint_count(), ErrorCode::SizeMismatch, "pose joint count does not match the rig");
  const auto bind = state_bind(skeleton);
  const auto local = pose.matrices();
  const auto globals =
      forward_kinematics(rig.skeleton.parents, bind, local, pose.root_translation, pose.joint_orient);
  const auto inverse = bind_inverses(bind);
  if (options.correctives && rig.correctives) {
    const auto inputs = corrective_inputs(rig.skeleton, bind, pose);
    const Points shaped = rest_vertices + rig.correctives->evaluate(inputs);
    return lbs_pose(shaped, rig.weights, globals, inverse);
  }
  return lbs_pose(rest_vertices, rig.weights, globals, inverse);
}

std::vector<Points> MeshPoser::pose_batch(const Points& rest_vertices, std::span<const PoseFrame> poses,
                                          const PoseOptions& options) const {
  const RigAsset& rig = *rig_;
  const SkeletonState skeleton = fitter_.fit(rest_vertices);
  std::vector<Points> out(poses.size());
  if (options.correctives && rig.correctives) {
    parallel_for(
        static_cast<int>(poses.size()),
        [&](int begin, int end) {
          for (int b = begin; b < end; ++b) {
            out[b] = pose(rest_vertices, skeleton, poses[b], options);
          }
        },
        1);
    return out;
  }

  const int n = rig.vertex_count();
  const int j = rig.joint_count();
  const auto batch = static_cast<Eigen::Index>(poses.size());
  if (batch == 0) {
    return out;
  }

  const auto bind = state_bind(skeleton);
  const auto inverse = bind_inverses(bind);
  for (auto& p : out) {
    p.resize(n, 3);
  }
  // Items are processed in blocks; within a block the 3x4 skinning matrices
  // are stored entry-major, (joint, entry, item), so the inner loops run over
  // contiguous items.
  constexpr Eigen::Index kBlock = 32;
  std::vector<double> a(static_cast<size_t>(j * 12 * kBlock));
  for (Eigen::Index first = 0; first < batch; first += kBlock) {
    const Eigen::Index lanes = std::min(kBlock, batch - first);
    for (Eigen::Index b = 0; b < lanes; ++b) {
      const auto& frame = poses[static_cast<size_t>(first + b)];
      check(frame.joint_count() == j, ErrorCode::SizeMismatch, "pose joint count does not match the rig");
      const auto local = frame.matrices();
      const auto globals =
          forward_kinematics(rig.skeleton.parents, bind, local, frame.root_translation, frame.joint_orient);
      for (int k = 0; k < j; ++k) {
        const RigidTransform m = globals.transforms[k] * inverse[k];
        double* dst = a.data() + k * 12 * lanes + b;
        for (int r = 0; r < 3; ++r) {
          dst[(4 * r) * lanes] = m.rotation(r, 0);
          dst[(4 * r + 1) * lanes] = m.rotation(r, 1);
          dst[(4 * r + 2) * lanes] = m.rotation(r, 2);
          dst[(4 * r + 3) * lanes] = m.translation[r];
        }
      }
    }

    parallel_for(n, [&](int begin, int end) {
      double acc[3 * kBlock];
      if (lanes == 1) {
        double* rows = out[static_cast<size_t>(first)].data();
        for (int i = begin; i < end; ++i) {
          const auto js = rig.weights.row_joints(i);
          const auto ws = rig.weights.row_values(i);
          double m[12] = {};
          for (size_t e = 0; e < js.size(); ++e) {
            const double* src = a.data() + js[e] * 12;
            for (int q = 0; q < 12; ++q) {
              m[q] += ws[e] * src[q];
            }
          }
          const double x = rest_vertices(i, 0);
          const double y = rest_vertices(i, 1);
          const double z = rest_vertices(i, 2);
          rows[3 * i] = m[0] * x + m[1] * y + m[2] * z + m[3];
          rows[3 * i + 1] = m[4] * x + m[5] * y + m[6] * z + m[7];
          rows[3 * i + 2] = m[8] * x + m[9] * y + m[10] * z + m[11];
        }
        return;
      }
      for (int i = begin; i < end; ++i) {
        std::fill(acc, acc + 3 * lanes, 0.0);
        const auto js = rig.weights.row_joints(i);
        const auto ws = rig.weights.row_values(i);
        const double x = rest_vertices(i, 0);
        const double y = rest_vertices(i, 1);
        const double z = rest_vertices(i, 2);
        for (size_t e = 0; e < js.size(); ++e) {
          const double w = ws[e];
          const double wx = w * x;
          const double wy = w * y;
          const double wz = w * z;
          const double* m = a.data() + js[e] * 12 * lanes;
          for (int r = 0; r < 3; ++r) {
            const double* c0 = m + (4 * r) * lanes;
            const double* c1 = c0 + lanes;
            const double* c2 = c1 + lanes;
            const double* c3 = c2 + lanes;
            double* dst = acc + r * lanes;
            for (Eigen::Index b = 0; b < lanes; ++b) {
              dst[b] += c0[b] * wx + c1[b] * wy + c2[b] * wz + c3[b] * w;
            }
          }
        }
        for (Eigen::Index b = 0; b < lanes; ++b) {
          double* row = out[static_cast<size_t>(first + b)].row(i).data();
          row[0] = acc[b];
          row[1] = acc[lanes + b];
          row[2] = acc[2 * lanes + b];
        }
      }
    });
  }
  return out;
}

Points pose_mesh(const RigAsset& rig, const Points& rest_vertices, const PoseFrame& pose,
                 const PoseOptions& options) {
  return MeshPoser(rig).pose(rest_vertices, pose, options);
}

PoseGradient pose_vjp(const RigAsset& rig, const SkeletonState& skeleton, const Points& rest_vertices,
                      const PoseFrame& pose6d, const Points& grad_posed, const PoseOptions& options) {
  const int n = rig.vertex_count();
  const int j = rig.joint_count();
  check(pose6d.encoding == RotationEncoding::SixD, ErrorCode::EncodingMismatch,
        "pose gradients are taken with respect to the 6D encoding");
  check(pose6d.joint_count() == j && skeleton.joint_count() == j, ErrorCode::SizeMismatch,
        "pose, skeleton and rig disagree on joint count");
  check(rest_vertices.rows() == n && grad_posed.rows() == n, ErrorCode::SizeMismatch,
        "rest shape or gradient vertex count does not match the rig");

  const auto& parents = rig.skeleton.parents;
  const auto bind = state_bind(skeleton);
  const auto inverse = bind_inverses(bind);
  const auto links = chain_links(parents, bind, pose6d.joint_orient);
  const auto local = pose6d.matrices();
  const auto globals = forward_kinematics(parents, bind, local, pose6d.root_translation, pose6d.joint_orient);

  const bool use_net = options.correctives && rig.correctives.has_value();
  Eigen::VectorXd activations;
  Points shaped = rest_vertices;
  std::vector<Mat3> net_inputs;
  if (use_net) {
    net_inputs = corrective_inputs(rig.skeleton, bind, pose6d);
    shaped += rig.correctives->evaluate(net_inputs, &activations);
  }

  std::vector<RigidTransform> skin(static_cast<size_t>(j));
  for (int k = 0; k < j; ++k) {
    skin[k] = globals.transforms[k] * inverse[k];
  }

  // Through LBS.
  std::vector<Mat3> d_skin_r(static_cast<size_t>(j), Mat3::Zero());
  std::vector<Vec3> d_skin_t(static_cast<size_t>(j), Vec3::Zero());
  PoseGradient grad;
  grad.rest_vertices = Points::Zero(n, 3);
  for (int i = 0; i < n; ++i) {
    const Vec3 g = grad_posed.row(i).transpose();
    const Vec3 v = shaped.row(i).transpose();
    const auto js = rig.weights.row_joints(i);
    const auto ws = rig.weights.row_values(i);
    Vec3 dv = Vec3::Zero();
    for (size_t e = 0; e < js.size(); ++e) {
      const int k = js[e];
      d_skin_r[k] += ws[e] * g * v.transpose();
      d_skin_t[k] += ws[e] * g;
      dv += ws[e] * skin[k].rotation.transpose() * g;
    }
    grad.rest_vertices.row(i) = dv.transpose();
  }

  // Through M_k = G_k B_k^-1 and the chain, children first.
  std::vector<Mat3> d_g_r(static_cast<size_t>(j));
  std::vector<Vec3> d_g_t(static_cast<size_t>(j));
  for (int k = 0; k < j; ++k) {
    d_g_r[k] = d_skin_r[k] * inverse[k].rotation.transpose() + d_skin_t[k] * inverse[k].translation.transpose();
    d_g_t[k] = d_skin_t[k];
  }
  std::vector<Mat3> d_local(static_cast<size_t>(j), Mat3::Zero());
  for (int k = j - 1; k >= 0; --k) {
    const int p = parents[k];
    if (p == kNoParent) {
      d_local[k] += links[k].pre.transpose() * d_g_r[k];
      grad.root_translation += d_g_t[k];
      continue;
    }
    const Mat3& gp = globals.transforms[p].rotation;
    d_local[k] += (gp * links[k].pre).transpose() * d_g_r[k];
    d_g_r[p] += d_g_r[k] * (links[k].pre * local[k]).transpose() + d_g_t[k] * links[k].offset.transpose();
    d_g_t[p] += d_g_t[k];
  }

  if (use_net) {
    const auto d_inputs = rig.correctives->backward(activations, grad.rest_vertices);
    for (int k = 0; k < j; ++k) {
      Mat3 pre = Mat3::Identity();
      if (!pose6d.joint_orient) {
        const int p = parents[k];
        pre = p == kNoParent ? bind[k].rotation : Mat3(bind[p].rotation.transpose() * bind[k].rotation);
        pre.transposeInPlace();
      }
      d_local[k] += pre.transpose() * d_inputs[k];
    }
  }

  grad.rotations.resize(j, 6);
  for (int k = 0; k < j; ++k) {
    const Vec6 x = pose6d.rotations.row(k).transpose();
    grad.rotations.row(k) = matrix_from_6d_vjp(x, d_local[k]).transpose();
  }
  return grad;
}

} // namespace unirig
