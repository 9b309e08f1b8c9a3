#include "unirig/asset_io.hpp"

#include "unirig/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace unirig {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

class BlobWriter {
 public:
  BlobWriter(fs::path dir, std::string stem) : dir_(std::move(dir)), stem_(std::move(stem)) {}

  json reals(const std::string& name, const double* data, size_t count) {
    return write(name, "f64", data, count * sizeof(double), count);
  }
  json ints(const std::string& name, const std::int32_t* data, size_t count) {
    return write(name, "i32", data, count * sizeof(std::int32_t), count);
  }

 private:
  json write(const std::string& name, const char* dtype, const void* data, size_t bytes, size_t count) {
    const std::string file = stem_ + "." + name + ".bin";
    std::ofstream out(dir_ / file, std::ios::binary | std::ios::trunc);
    check(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + (dir_ / file).string());
    if (bytes > 0) {
      out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    }
    check(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + (dir_ / file).string());
    return json{{"file", file}, {"dtype", dtype}, {"count", count}};
  }

  fs::path dir_;
  std::string stem_;
};

class BlobReader {
 public:
  BlobReader(fs::path dir, ErrorCode malformed) : dir_(std::move(dir)), malformed_(malformed) {}

  std::vector<double> reals(const json& entry, std::optional<size_t> expected = std::nullopt) const {
    const auto [file, dtype] = describe(entry, "f32");
    std::vector<char> raw = read_file(file);
    std::vector<double> out;
    if (dtype == "f64") {
      check(raw.size() % 8 == 0, malformed_, "blob " + file + " size is not a multiple of 8");
      out.resize(raw.size() / 8);
      std::memcpy(out.data(), raw.data(), raw.size());
    } else if (dtype == "f32") {
      check(raw.size() % 4 == 0, malformed_, "blob " + file + " size is not a multiple of 4");
      std::vector<float> tmp(raw.size() / 4);
      std::memcpy(tmp.data(), raw.data(), raw.size());
      out.assign(tmp.begin(), tmp.end());
    } else {
      fail(malformed_, "blob " + file + " has non-real dtype " + dtype);
    }
    check_count(entry, file, out.size(), expected);
    return out;
  }

  std::vector<std::int32_t> ints(const json& entry, std::optional<size_t> expected = std::nullopt) const {
    const auto [file, dtype] = describe(entry, "i32");
    check(dtype == "i32", malformed_, "blob " + file + " must be i32");
    std::vector<char> raw = read_file(file);
    check(raw.size() % 4 == 0, malformed_, "blob " + file + " size is not a multiple of 4");
    std::vector<std::int32_t> out(raw.size() / 4);
    std::memcpy(out.data(), raw.data(), raw.size());
    check_count(entry, file, out.size(), expected);
    return out;
  }

 private:
  std::pair<std::string, std::string> describe(const json& entry, const char* default_dtype) const {
    if (entry.is_string()) {
      return {entry.get<std::string>(), default_dtype};
    }
    check(entry.is_object() && entry.contains("file"), malformed_, "blob entry must name a file");
    return {entry.at("file").get<std::string>(), entry.value("dtype", std::string(default_dtype))};
  }

  void check_count(const json& entry, const std::string& file, size_t actual,
                   std::optional<size_t> expected) const {
    if (entry.is_object() && entry.contains("count")) {
      check(entry.at("count").get<size_t>() == actual, malformed_,
            "blob " + file + " length disagrees with its declared count");
    }
    if (expected) {
      check(*expected == actual, malformed_,
            "blob " + file + " has " + std::to_string(actual) + " values, expected " +
                std::to_string(*expected));
    }
  }

  std::vector<char> read_file(const std::string& file) const {
    std::ifstream in(dir_ / file, std::ios::binary);
    check(static_cast<bool>(in), malformed_, "missing blob " + (dir_ / file).string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  fs::path dir_;
  ErrorCode malformed_;
};

json read_json(const fs::path& path, ErrorCode malformed) {
  std::ifstream in(path);
  check(static_cast<bool>(in), malformed, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(malformed, "cannot parse " + path.string() + ": " + e.what());
  }
}

void write_json(const json& doc, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  check(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  check(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path.string());
}

fs::path parent_dir(const fs::path& path) {
  return path.has_parent_path() ? path.parent_path() : fs::path(".");
}

std::string blob_stem(const fs::path& path) {
  return path.stem().string();
}

template <typename Matrix>
Matrix to_matrix(const std::vector<double>& values, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = values[static_cast<size_t>(r * cols + c)];
    }
  }
  return m;
}

template <typename Matrix>
std::vector<double> row_major_values(const Matrix& m) {
  std::vector<double> out(static_cast<size_t>(m.rows() * m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    }
  }
  return out;
}

json write_correspondence_entry(const Correspondence& corr, BlobWriter& blobs, const std::string& prefix) {
  json entry;
  entry["source_id"] = corr.source_id;
  entry["source_vertex_count"] = corr.source_vertex_count;
  entry["canonical_vertex_count"] = corr.canonical_vertex_count();
  entry["source_faces_blob"] = blobs.ints(prefix + "source_faces", corr.source_faces.data(),
                                          static_cast<size_t>(corr.source_faces.size()));
  entry["faces_blob"] = blobs.ints(prefix + "face_index", corr.face_index.data(), corr.face_index.size());
  entry["bary_blob"] = blobs.reals(prefix + "bary", corr.bary.data(), static_cast<size_t>(corr.bary.size()));
  if (corr.has_unmatched()) {
    std::vector<std::int32_t> flags(corr.unmatched.begin(), corr.unmatched.end());
    entry["unmatched_blob"] = blobs.ints(prefix + "unmatched", flags.data(), flags.size());
    entry["rigid_offsets_blob"] = blobs.reals(prefix + "rigid_offsets", corr.rigid_offsets.data(),
                                              static_cast<size_t>(corr.rigid_offsets.size()));
  }
  return entry;
}

Correspondence read_correspondence_entry(const json& entry, const BlobReader& blobs) {
  Correspondence corr;
  corr.source_id = entry.at("source_id").get<std::string>();
  corr.source_vertex_count = entry.at("source_vertex_count").get<std::int32_t>();
  const auto n = entry.at("canonical_vertex_count").get<size_t>();
  const auto faces = blobs.ints(entry.at("source_faces_blob"));
  check(faces.size() % 3 == 0, ErrorCode::MalformedAsset, "source faces blob not a multiple of 3");
  corr.source_faces = Eigen::Map<const Faces>(faces.data(), static_cast<Eigen::Index>(faces.size() / 3), 3);
  corr.face_index = blobs.ints(entry.at("faces_blob"), n);
  const auto bary = blobs.reals(entry.at("bary_blob"), 4 * n);
  corr.bary = to_matrix<decltype(corr.bary)>(bary, static_cast<Eigen::Index>(n), 4);
  if (entry.contains("unmatched_blob")) {
    const auto flags = blobs.ints(entry.at("unmatched_blob"), n);
    corr.unmatched.assign(flags.begin(), flags.end());
    const auto offsets = blobs.reals(entry.at("rigid_offsets_blob"), 3 * n);
    corr.rigid_offsets = to_matrix<Points>(offsets, static_cast<Eigen::Index>(n), 3);
  }
  return corr;
}

} // namespace

RigAsset load_rig(const fs::path& path) {
  const json doc = read_json(path, ErrorCode::MalformedAsset);
  const BlobReader blobs(parent_dir(path), ErrorCode::MalformedAsset);
  RigAsset rig;
  try {
    check(doc.is_object(), ErrorCode::MalformedAsset, "manifest must be a JSON object");
    check(doc.contains("unit_scale") && doc.at("unit_scale").is_number(), ErrorCode::UnitMissing,
          "manifest declares no unit_scale");
    const double scale = doc.at("unit_scale").get<double>();
    check(std::isfinite(scale) && scale > 0.0, ErrorCode::ValidationFailure, "unit_scale must be positive");

    const json& mesh = doc.at("mesh");
    const auto vertices = blobs.reals(mesh.at("vertices_blob"));
    check(vertices.size() % 3 == 0, ErrorCode::MalformedAsset, "vertex blob not a multiple of 3");
    const auto n = static_cast<Eigen::Index>(vertices.size() / 3);
    rig.mesh.vertices = to_matrix<Points>(vertices, n, 3) * scale;
    const auto faces = blobs.ints(mesh.at("faces_blob"));
    check(faces.size() % 3 == 0, ErrorCode::MalformedAsset, "face blob not a multiple of 3");
    rig.mesh.faces = Eigen::Map<const Faces>(faces.data(), static_cast<Eigen::Index>(faces.size() / 3), 3);
    if (mesh.contains("regions_blob")) {
      const auto regions = blobs.ints(mesh.at("regions_blob"), static_cast<size_t>(n));
      rig.mesh.regions.reserve(regions.size());
      for (const auto r : regions) {
        rig.mesh.regions.push_back(static_cast<Region>(r));
      }
    }

    const json& skel = doc.at("skeleton");
    rig.skeleton.names = skel.at("names").get<std::vector<std::string>>();
    rig.skeleton.parents = skel.at("parents").get<std::vector<int>>();
    const size_t j = rig.skeleton.parents.size();
    const auto rotations = blobs.reals(skel.at("bind_rotations_blob"), 9 * j);
    const auto translations = blobs.reals(skel.at("bind_translations_blob"), 3 * j);
    rig.skeleton.bind.resize(j);
    for (size_t k = 0; k < j; ++k) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          rig.skeleton.bind[k].rotation(r, c) = rotations[9 * k + 3 * r + c];
        }
        rig.skeleton.bind[k].translation[r] = translations[3 * k + r] * scale;
      }
    }

    const json& weights = doc.at("weights");
    rig.weights.offsets = blobs.ints(weights.at("offsets_blob"), static_cast<size_t>(n) + 1);
    rig.weights.joints = blobs.ints(weights.at("indices_blob"));
    rig.weights.values = blobs.reals(weights.at("values_blob"), rig.weights.joints.size());

    if (doc.contains("correctives")) {
      const json& corr = doc.at("correctives");
      const int channels = corr.at("C").get<int>();
      const auto jj = static_cast<Eigen::Index>(j);
      const Eigen::Index k = jj * channels;
      const auto w1 = blobs.reals(corr.at("stage1_weights_blob"), static_cast<size_t>(k * 6 * jj));
      const auto b1 = blobs.reals(corr.at("stage1_bias_blob"), static_cast<size_t>(k));
      const auto w2 = blobs.reals(corr.at("stage2_weights_blob"), static_cast<size_t>(3 * n * k));
      const auto b2 = blobs.reals(corr.at("stage2_bias_blob"), static_cast<size_t>(3 * n));
      const auto mask_offsets = blobs.ints(corr.at("mask_offsets_blob"), static_cast<size_t>(k) + 1);
      const auto mask_indices = blobs.ints(corr.at("masks_blob"));
      std::vector<std::vector<std::int32_t>> masks(static_cast<size_t>(k));
      for (Eigen::Index a = 0; a < k; ++a) {
        const auto lo = mask_offsets[a];
        const auto hi = mask_offsets[a + 1];
        check(lo >= 0 && lo <= hi && static_cast<size_t>(hi) <= mask_indices.size(),
              ErrorCode::MalformedAsset, "mask offsets out of range");
        masks[a].assign(mask_indices.begin() + lo, mask_indices.begin() + hi);
      }
      rig.correctives.emplace(static_cast<int>(j), static_cast<int>(n), channels,
                              to_matrix<Eigen::MatrixXd>(w1, k, 6 * jj),
                              Eigen::Map<const Eigen::VectorXd>(b1.data(), k),
                              to_matrix<Eigen::MatrixXd>(w2, 3 * n, k) * scale,
                              Eigen::Map<const Eigen::VectorXd>(b2.data(), 3 * n) * scale,
                              std::move(masks));
    }

    if (doc.contains("correspondences")) {
      for (const auto& entry : doc.at("correspondences")) {
        auto corr = read_correspondence_entry(entry, blobs);
        const std::string id = corr.source_id;
        check(!rig.correspondences.contains(id), ErrorCode::ValidationFailure,
              "duplicate correspondence '" + id + "'");
        rig.correspondences.emplace(id, std::move(corr));
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedAsset, std::string("manifest structure: ") + e.what());
  }
  rig.unit_scale = doc.at("unit_scale").get<double>();
  validate_rig(rig);
  return rig;
}

void save_rig(const RigAsset& rig, const fs::path& path) {
  BlobWriter blobs(parent_dir(path), blob_stem(path));
  json doc;
  doc["format"] = "unirig-rig";
  doc["version"] = kFormatVersion;
  doc["unit_scale"] = 1.0;

  json mesh;
  mesh["vertices_blob"] = blobs.reals("vertices", rig.mesh.vertices.data(),
                                      static_cast<size_t>(rig.mesh.vertices.size()));
  mesh["faces_blob"] = blobs.ints("faces", rig.mesh.faces.data(), static_cast<size_t>(rig.mesh.faces.size()));
  if (!rig.mesh.regions.empty()) {
    std::vector<std::int32_t> regions;
    regions.reserve(rig.mesh.regions.size());
    for (const auto r : rig.mesh.regions) {
      regions.push_back(static_cast<std::int32_t>(r));
    }
    mesh["regions_blob"] = blobs.ints("regions", regions.data(), regions.size());
  }
  doc["mesh"] = mesh;

  const size_t j = rig.skeleton.bind.size();
  std::vector<double> rotations(9 * j);
  std::vector<double> translations(3 * j);
  for (size_t k = 0; k < j; ++k) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        rotations[9 * k + 3 * r + c] = rig.skeleton.bind[k].rotation(r, c);
      }
      translations[3 * k + r] = rig.skeleton.bind[k].translation[r];
    }
  }
  doc["skeleton"] = {{"names", rig.skeleton.names},
                     {"parents", rig.skeleton.parents},
                     {"bind_rotations_blob", blobs.reals("bind_rotations", rotations.data(), rotations.size())},
                     {"bind_translations_blob",
                      blobs.reals("bind_translations", translations.data(), translations.size())}};

  doc["weights"] = {
      {"offsets_blob", blobs.ints("weight_offsets", rig.weights.offsets.data(), rig.weights.offsets.size())},
      {"indices_blob", blobs.ints("weight_indices", rig.weights.joints.data(), rig.weights.joints.size())},
      {"values_blob", blobs.reals("weight_values", rig.weights.values.data(), rig.weights.values.size())}};

  if (rig.correctives) {
    const auto& net = *rig.correctives;
    const auto w1 = row_major_values(net.stage1_weights());
    const auto w2 = row_major_values(net.stage2_weights());
    std::vector<std::int32_t> mask_offsets{0};
    std::vector<std::int32_t> mask_indices;
    for (const auto& mask : net.masks()) {
      mask_indices.insert(mask_indices.end(), mask.begin(), mask.end());
      mask_offsets.push_back(static_cast<std::int32_t>(mask_indices.size()));
    }
    doc["correctives"] = {
        {"C", net.channels()},
        {"stage1_weights_blob", blobs.reals("stage1_weights", w1.data(), w1.size())},
        {"stage1_bias_blob", blobs.reals("stage1_bias", net.stage1_bias().data(),
                                         static_cast<size_t>(net.stage1_bias().size()))},
        {"stage2_weights_blob", blobs.reals("stage2_weights", w2.data(), w2.size())},
        {"stage2_bias_blob", blobs.reals("stage2_bias", net.stage2_bias().data(),
                                         static_cast<size_t>(net.stage2_bias().size()))},
        {"mask_offsets_blob", blobs.ints("mask_offsets", mask_offsets.data(), mask_offsets.size())},
        {"masks_blob", blobs.ints("masks", mask_indices.data(), mask_indices.size())}};
  }

  if (!rig.correspondences.empty()) {
    json list = json::array();
    int index = 0;
    for (const auto& [id, corr] : rig.correspondences) {
      list.push_back(write_correspondence_entry(corr, blobs, "corr" + std::to_string(index++) + "_"));
    }
    doc["correspondences"] = list;
  }
  write_json(doc, path);
}

MotionSequence load_motion(const fs::path& path, std::optional<int> expected_joint_count) {
  const json doc = read_json(path, ErrorCode::MalformedMotion);
  const BlobReader blobs(parent_dir(path), ErrorCode::MalformedMotion);
  MotionSequence motion;
  try {
    motion.fps = doc.at("fps").get<double>();
    const RotationEncoding encoding = parse_encoding(doc.at("encoding").get<std::string>());
    const int joints = doc.at("joint_count").get<int>();
    const auto frames = doc.at("frame_count").get<size_t>();
    const bool joint_orient = doc.value("joint_orient", true);
    const double scale = doc.value("unit_scale", 1.0);
    if (expected_joint_count) {
      check(*expected_joint_count == joints, ErrorCode::JointCountMismatch,
            "motion has " + std::to_string(joints) + " joints, rig has " +
                std::to_string(*expected_joint_count));
    }
    const int width = encoding_width(encoding);
    const auto rotations =
        blobs.reals(doc.at("rotations_blob"), frames * static_cast<size_t>(joints * width));
    const auto translations = blobs.reals(doc.at("translations_blob"), 3 * frames);
    const auto timestamps = blobs.reals(doc.at("timestamps_blob"), frames);
    motion.frames.resize(frames);
    for (size_t f = 0; f < frames; ++f) {
      auto& frame = motion.frames[f];
      frame.encoding = encoding;
      frame.joint_orient = joint_orient;
      frame.timestamp = timestamps[f];
      frame.root_translation =
          Vec3(translations[3 * f], translations[3 * f + 1], translations[3 * f + 2]) * scale;
      frame.rotations.resize(joints, width);
      std::copy_n(rotations.begin() + static_cast<std::ptrdiff_t>(f * joints * width), joints * width,
                  frame.rotations.data());
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedMotion, std::string("motion header: ") + e.what());
  }
  std::stable_sort(motion.frames.begin(), motion.frames.end(),
                   [](const PoseFrame& a, const PoseFrame& b) { return a.timestamp < b.timestamp; });
  return motion;
}

void save_motion(const MotionSequence& motion, const fs::path& path) {
  const int joints = motion.frames.empty() ? 0 : motion.frames.front().joint_count();
  const RotationEncoding encoding =
      motion.frames.empty() ? RotationEncoding::AxisAngle : motion.frames.front().encoding;
  const bool joint_orient = motion.frames.empty() ? true : motion.frames.front().joint_orient;
  const int width = encoding_width(encoding);
  std::vector<double> rotations;
  std::vector<double> translations;
  std::vector<double> timestamps;
  for (const auto& frame : motion.frames) {
    check(frame.joint_count() == joints, ErrorCode::JointCountMismatch,
          "motion frames disagree on joint count");
    check(frame.encoding == encoding && frame.rotations.cols() == width, ErrorCode::EncodingMismatch,
          "motion frames disagree on rotation encoding");
    check(frame.joint_orient == joint_orient, ErrorCode::MalformedMotion,
          "motion frames disagree on joint orient");
    rotations.insert(rotations.end(), frame.rotations.data(), frame.rotations.data() + frame.rotations.size());
    translations.insert(translations.end(), frame.root_translation.data(), frame.root_translation.data() + 3);
    timestamps.push_back(frame.timestamp);
  }
  BlobWriter blobs(parent_dir(path), blob_stem(path));
  json doc;
  doc["format"] = "unirig-motion";
  doc["version"] = kFormatVersion;
  doc["fps"] = motion.fps;
  doc["encoding"] = std::string(encoding_name(encoding));
  doc["joint_count"] = joints;
  doc["frame_count"] = motion.frames.size();
  doc["joint_orient"] = joint_orient;
  doc["unit_scale"] = 1.0;
  doc["rotations_blob"] = blobs.reals("rotations", rotations.data(), rotations.size());
  doc["translations_blob"] = blobs.reals("translations", translations.data(), translations.size());
  doc["timestamps_blob"] = blobs.reals("timestamps", timestamps.data(), timestamps.size());
  write_json(doc, path);
}

VertexAnimation load_vertex_animation(const fs::path& path) {
  const json doc = read_json(path, ErrorCode::MalformedAsset);
  const BlobReader blobs(parent_dir(path), ErrorCode::MalformedAsset);
  VertexAnimation anim;
  try {
    anim.fps = doc.at("fps").get<double>();
    const auto frames = doc.at("frame_count").get<size_t>();
    const auto n = doc.at("vertex_count").get<Eigen::Index>();
    const double scale = doc.value("unit_scale", 1.0);
    const auto values = blobs.reals(doc.at("positions_blob"), frames * static_cast<size_t>(3 * n));
    anim.frames.reserve(frames);
    for (size_t f = 0; f < frames; ++f) {
      anim.frames.push_back(Eigen::Map<const Points>(values.data() + f * 3 * n, n, 3) * scale);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedAsset, std::string("vertex animation header: ") + e.what());
  }
  return anim;
}

void save_vertex_animation(const VertexAnimation& animation, const fs::path& path) {
  const Eigen::Index n = animation.frames.empty() ? 0 : animation.frames.front().rows();
  std::vector<double> values;
  values.reserve(animation.frames.size() * static_cast<size_t>(3 * n));
  for (const auto& frame : animation.frames) {
    check(frame.rows() == n, ErrorCode::SizeMismatch, "vertex animation frames differ in vertex count");
    values.insert(values.end(), frame.data(), frame.data() + frame.size());
  }
  BlobWriter blobs(parent_dir(path), blob_stem(path));
  json doc;
  doc["format"] = "unirig-vertex-animation";
  doc["version"] = kFormatVersion;
  doc["fps"] = animation.fps;
  doc["frame_count"] = animation.frames.size();
  doc["vertex_count"] = n;
  doc["unit_scale"] = 1.0;
  doc["positions_blob"] = blobs.reals("positions", values.data(), values.size());
  write_json(doc, path);
}

Correspondence load_correspondence(const fs::path& path) {
  const json doc = read_json(path, ErrorCode::MalformedAsset);
  const BlobReader blobs(parent_dir(path), ErrorCode::MalformedAsset);
  Correspondence corr;
  try {
    corr = read_correspondence_entry(doc, blobs);
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedAsset, std::string("correspondence: ") + e.what());
  }
  validate_correspondence(corr);
  return corr;
}

void save_correspondence(const Correspondence& corr, const fs::path& path) {
  BlobWriter blobs(parent_dir(path), blob_stem(path));
  json doc = write_correspondence_entry(corr, blobs, "");
  doc["format"] = "unirig-correspondence";
  doc["version"] = kFormatVersion;
  write_json(doc, path);
}

} // namespace unirig
