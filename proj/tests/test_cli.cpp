#include "temp_dir.hpp"

#include "cli.hpp"
#include "unirig/asset_io.hpp"
#include "unirig/pose_inversion.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

using namespace unirig;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;

  json report() const {
    return json::parse(out);
  }
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string str(const std::filesystem::path& p) {
  return p.string();
}

// One small fixture shared by every case.
const TempDir& fixture() {
  static const TempDir dir;
  static const bool made = [] {
    const Outcome o = run({"synth", "--out", str(dir.path()), "--frames", "6"});
    REQUIRE(o.code == 0);
    return true;
  }();
  (void)made;
  return dir;
}

} // namespace

TEST_CASE("synth then invert round trips") {
  const TempDir& fx = fixture();
  TempDir dir;
  const Outcome o = run({"invert", "--rig", str(fx / "rig.json"), "--input", str(fx / "posed.json"), "--out",
                         str(dir / "inv.json"), "--mode", "analytical"});
  REQUIRE(o.code == 0);
  const json r = o.report();
  CHECK(r["command"] == "invert");
  CHECK(r["result"]["frames"] == 6);
  CHECK(r["result"]["mean_error_mm"].get<double>() < 2.0);
  CHECK(load_motion(dir / "inv.json", 12).frames.size() == 6);
}

TEST_CASE("zero motion poses to the rest shape") {
  const TempDir& fx = fixture();
  TempDir dir;
  MotionSequence still;
  for (int f = 0; f < 3; ++f) {
    PoseFrame p = PoseFrame::identity(12);
    p.timestamp = f / 30.0;
    still.frames.push_back(p);
  }
  save_motion(still, dir / "still.json");
  const Outcome o = run({"pose", "--rig", str(fx / "rig.json"), "--motion", str(dir / "still.json"), "--out",
                         str(dir / "posed.json")});
  REQUIRE(o.code == 0);
  const RigAsset rig = load_rig(fx / "rig.json");
  const VertexAnimation anim = load_vertex_animation(dir / "posed.json");
  REQUIRE(anim.frames.size() == 3);
  for (const Points& frame : anim.frames) {
    CHECK((frame - rig.mesh.vertices).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("validation failures exit with 2") {
  const TempDir& fx = fixture();
  const Outcome topo = run({"invert", "--rig", str(fx / "rig.json"), "--input", str(fx / "posed.json"),
                            "--source-topology", "nope"});
  CHECK(topo.code == cli::kExitValidation);
  CHECK(topo.err.find("UnknownTopology") != std::string::npos);
  CHECK(run({"synth", "--out", "x", "--bogus"}).code == cli::kExitValidation);
  CHECK(run({}).code == cli::kExitValidation);
  CHECK(run({"invert", "--rig", str(fx / "missing.json"), "--input", str(fx / "posed.json")}).code ==
        cli::kExitValidation);
}

TEST_CASE("short autograd run that only overshoots exits with 3") {
  const TempDir& fx = fixture();
  const Outcome o = run({"invert", "--rig", str(fx / "rig.json"), "--input", str(fx / "posed.json"), "--mode",
                         "autograd", "--iters", "5"});
  CHECK(o.code == cli::kExitNumeric);
  CHECK(o.err.find("Diverged") != std::string::npos);
}

TEST_CASE("config file overrides defaults and flags override the file") {
  const TempDir& fx = fixture();
  TempDir dir;
  {
    std::ofstream f(dir / "cfg.toml");
    f << "[invert]\nmode = \"init\"\ntau = 0.25\n";
  }
  const std::vector<std::string> base = {"--config", str(dir / "cfg.toml"), "invert", "--rig", str(fx / "rig.json"),
                                         "--input", str(fx / "posed.json")};
  const Outcome a = run(base);
  REQUIRE(a.code == 0);
  CHECK(a.report()["config"]["mode"] == "init");
  CHECK(a.report()["config"]["tau"] == 0.25);
  CHECK(a.report()["result"]["mode"] == "init");

  std::vector<std::string> flagged = base;
  flagged.insert(flagged.end(), {"--mode", "analytical"});
  const Outcome b = run(flagged);
  REQUIRE(b.code == 0);
  CHECK(b.report()["config"]["mode"] == "analytical");
  CHECK(b.report()["config_hash"] != a.report()["config_hash"]);
}

TEST_CASE("reruns and thread counts give identical outputs") {
  TempDir a;
  TempDir b;
  const Outcome s1 = run({"synth", "--out", str(a.path()), "--frames", "4", "--fingers", "1"});
  const Outcome s2 = run({"--threads", "1", "synth", "--out", str(b.path()), "--frames", "4", "--fingers", "1"});
  REQUIRE(s1.code == 0);
  REQUIRE(s2.code == 0);
  CHECK(s1.report()["result"]["posed_hash"] == s2.report()["result"]["posed_hash"]);
  CHECK(s1.report()["result"]["motion_hash"] == s2.report()["result"]["motion_hash"]);

  const std::vector<std::string> inv = {"invert", "--rig", str(a / "rig.json"), "--input", str(a / "posed.json")};
  std::vector<std::string> one = {"--threads", "1"};
  one.insert(one.end(), inv.begin(), inv.end());
  const Outcome i1 = run(inv);
  const Outcome i2 = run(inv);
  const Outcome i3 = run(one);
  REQUIRE(i1.code == 0);
  CHECK(i1.report()["result"]["motion_hash"] == i2.report()["result"]["motion_hash"]);
  CHECK(i1.report()["result"]["motion_hash"] == i3.report()["result"]["motion_hash"]);
  CHECK(i1.report()["config_hash"] == i2.report()["config_hash"]);
}

TEST_CASE("the CLI matches direct library calls") {
  const TempDir& fx = fixture();
  TempDir dir;
  const Outcome o = run({"invert", "--rig", str(fx / "rig.json"), "--input", str(fx / "posed.json"), "--out",
                         str(dir / "inv.json"), "--mode", "analytical"});
  REQUIRE(o.code == 0);
  const MotionSequence got = load_motion(dir / "inv.json", 12);
  const RigAsset rig = load_rig(fx / "rig.json");
  const VertexAnimation posed = load_vertex_animation(fx / "posed.json");
  REQUIRE(got.frames.size() == posed.frames.size());
  for (size_t f = 0; f < posed.frames.size(); ++f) {
    const InversionResult r = invert(rig, posed.frames[f], std::nullopt);
    CHECK(r.pose.rotations == got.frames[f].rotations);
    CHECK(r.pose.root_translation == got.frames[f].root_translation);
    CHECK(o.report()["result"]["per_frame"][f]["mean_error_mm"].get<double>() == doctest::Approx(r.mean_error * 1e3));
  }
}

TEST_CASE("metrics and table output") {
  const TempDir& fx = fixture();
  const Outcome o = run({"metrics", "--rig", str(fx / "rig.json"), "--predicted", str(fx / "posed.json"),
                         "--reference", str(fx / "posed.json")});
  REQUIRE(o.code == 0);
  CHECK(o.report()["result"]["temporal_stability_mm"]["max_delta"] == 0.0);
  const Outcome t = run({"--format", "table", "fit-skel", "--rig", str(fx / "rig.json")});
  CHECK(t.code == 0);
  CHECK(t.out.find("fit-skel") != std::string::npos);
}
