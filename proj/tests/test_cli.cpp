#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "idrt/synthswap.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g_binary;
fs::path g_root;

int run(const std::string& args) {
  std::string cmd = g_binary + " " + args + " > " +
                    (g_root / "stdout.txt").string() + " 2> " +
                    (g_root / "stderr.txt").string();
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string craft_args(const std::string& out, uint64_t seed) {
  std::ostringstream os;
  os << "craft --seed " << seed << " --out " << out
     << " --n 2 --train-pairs 5 --test-pairs 4 --seen-pairs 2"
     << " --train-ids 10 --test-ids 5 --ss-train 4 --ss-test 2";
  return os.str();
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("") == 2);
  CHECK(run("craft --no-such-flag 1") == 2);
  CHECK(run("definitely-not-a-subcommand") == 2);
}

TEST_CASE("craft twice produces byte-identical manifests") {
  fs::path a = g_root / "craft_a";
  fs::path b = g_root / "craft_b";
  REQUIRE(run(craft_args(a.string(), 7)) == 0);
  REQUIRE(run(craft_args(b.string(), 7)) == 0);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  // a different seed changes the dataset
  fs::path c = g_root / "craft_c";
  REQUIRE(run(craft_args(c.string(), 8)) == 0);
  CHECK(slurp(a / "manifest.json") != slurp(c / "manifest.json"));
}

TEST_CASE("missing inputs exit with code 3 and a machine category") {
  CHECK(run("train --dataset " + (g_root / "nowhere").string()) == 3);
  CHECK(run("eval --checkpoint missing.ckpt --dataset " +
            (g_root / "craft_a").string()) == 3);
  std::string err = slurp(g_root / "stderr.txt");
  CHECK(err.find("missing-input") != std::string::npos);
}

TEST_CASE("schema mismatches exit with code 4") {
  fs::path bad = g_root / "bad_schema";
  fs::copy(g_root / "craft_a", bad, fs::copy_options::recursive);
  {
    std::ifstream is(bad / "manifest.json");
    json j;
    is >> j;
    j["version"] = 99;
    std::ofstream os(bad / "manifest.json");
    os << j.dump(1);
  }
  CHECK(run("train --dataset " + bad.string() + " --epochs 1") == 4);
  std::string err = slurp(g_root / "stderr.txt");
  CHECK(err.find("schema-mismatch") != std::string::npos);
}

TEST_CASE("gradcheck passes and prints the per-layer table") {
  REQUIRE(run("gradcheck") == 0);
  std::string out = slurp(g_root / "stdout.txt");
  CHECK(out.find("mapping_aware_conv") != std::string::npos);
  CHECK(out.find("end_to_end") != std::string::npos);
  // an absurd tolerance fails with the numeric exit code
  CHECK(run("gradcheck --tol 1e-18") == 5);
}

TEST_CASE("train, resolve and retrace round the pipeline") {
  fs::path ds = g_root / "craft_a";
  fs::path td = g_root / "train_out";
  REQUIRE(run("train --dataset " + ds.string() + " --out " + td.string() +
              " --epochs 1 --batch-size 4 --base-channels 4 --seed 5") == 0);
  REQUIRE(fs::exists(td / "final.ckpt"));

  REQUIRE(run("resolve --checkpoint " + (td / "final.ckpt").string() +
              " --dataset " + ds.string() + " --limit 2") == 0);
  json rows = json::parse(slurp(g_root / "stdout.txt"));
  REQUIRE(rows.is_array());
  REQUIRE(rows.size() == 2);
  double s = 0.0;
  for (double v : rows[0]["omega"].get<std::vector<double>>()) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));

  fs::path rt = g_root / "retrace_out";
  REQUIRE(run("retrace --checkpoint " + (td / "final.ckpt").string() +
              " --dataset " + ds.string() + " --limit 2 --ppm --out " +
              rt.string()) == 0);
  long blobs = 0, ppms = 0;
  for (const auto& e : fs::directory_iterator(rt)) {
    if (e.path().extension() == ".idrt") ++blobs;
    if (e.path().extension() == ".ppm") ++ppms;
  }
  CHECK(blobs == 2);
  CHECK(ppms == 2);
}

TEST_CASE("oracle subcommand reports a high ceiling") {
  fs::path ds = g_root / "craft_a";
  REQUIRE(run("oracle --dataset " + ds.string() + " --gallery 5") == 0);
  json j = json::parse(slurp(g_root / "stdout.txt"));
  CHECK(j["oracle_t1"].get<double>() >= 95.0);
  CHECK(j.contains("chance_t1"));
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <idretrace binary>\n");
    return 1;
  }
  g_binary = argv[1];
  g_root = fs::temp_directory_path() / "idrt_cli";
  fs::remove_all(g_root);
  fs::create_directories(g_root);
  doctest::Context ctx;
  ctx.applyCommandLine(1, argv);
  int rc = ctx.run();
  fs::remove_all(g_root);
  return rc;
}
