#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "c2fpose/clustering.hpp"

using namespace c2fpose;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::path("tmp_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path dir("tmp_cli_io");
  fs::create_directories(dir);
  const std::string out_file = (dir / ("run" + std::to_string(counter) + ".out")).string();
  const std::string err_file = (dir / ("run" + std::to_string(counter) + ".err")).string();
  ++counter;
  const std::string cmd = (env.empty() ? "" : env + " ") + std::string(C2FPOSE_CLI_PATH) + " " +
                          args + " >" + out_file + " 2>" + err_file;
  const int status = std::system(cmd.c_str());
  RunResult r;
  REQUIRE(WIFEXITED(status));
  r.code = WEXITSTATUS(status);
  r.out = read_bytes(out_file);
  r.err = read_bytes(err_file);
  return r;
}

const std::string kTinyModelFlags =
    "--backbone tiny --token-dim 16 --layers 1 --heads 2 --mlp-hidden 24 --head-hidden 32";

}  // namespace

TEST_CASE("usage errors exit with code 2 and help succeeds") {
  CHECK(run_cli("").code == 2);             // missing subcommand
  CHECK(run_cli("frobnicate").code == 2);   // unknown subcommand
  CHECK(run_cli("synth --bogus 1").code == 2);

  const RunResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("synth") != std::string::npos);
  CHECK(help.out.find("bench") != std::string::npos);

  const RunResult train_help = run_cli("train --help");
  CHECK(train_help.code == 0);
  CHECK(train_help.out.find("--lr") != std::string::npos);
  CHECK(train_help.out.find("--centroids") != std::string::npos);
}

TEST_CASE("synth is byte-deterministic and honors the output-root variable") {
  TmpDir dir("cli_synth");
  const std::string base = "synth --scenes 2 --per-scene 3 --size 16 --seed 5 --out ";
  const RunResult a = run_cli(base + dir.file("a"));
  REQUIRE(a.code == 0);
  CHECK(a.out.find("6 samples") != std::string::npos);
  REQUIRE(run_cli(base + dir.file("b")).code == 0);

  CHECK(read_bytes(dir.file("a/manifest.txt")) == read_bytes(dir.file("b/manifest.txt")));
  CHECK(read_bytes(dir.file("a/scene_mapping.txt")) ==
        read_bytes(dir.file("b/scene_mapping.txt")));
  CHECK(read_bytes(dir.file("a/images/s0_i0.ppm")) == read_bytes(dir.file("b/images/s0_i0.ppm")));
  CHECK(fs::exists(dir.file("a/synth_config.txt")));

  const RunResult via_env = run_cli("synth --scenes 1 --per-scene 2 --size 16 --seed 1",
                                    "C2FPOSE_OUT_ROOT=" + dir.file("root"));
  REQUIRE(via_env.code == 0);
  CHECK(fs::exists(dir.file("root/synth/manifest.txt")));
}

TEST_CASE("cluster validates flags, snapshots its config, and lets flags win") {
  TmpDir dir("cli_cluster");
  REQUIRE(run_cli("synth --scenes 2 --per-scene 3 --size 16 --seed 5 --out " + dir.file("data"))
              .code == 0);
  const std::string manifest = dir.file("data/manifest.txt");

  const RunResult missing = run_cli("cluster --kx 2");
  CHECK(missing.code == 1);
  CHECK(missing.err.find("--manifest") != std::string::npos);

  const RunResult ok = run_cli("cluster --manifest " + manifest +
                               " --kx 2 --kq 2 --seed 7 --out " + dir.file("t/c1.txt"));
  REQUIRE(ok.code == 0);
  const auto sets = load_centroid_sets<double>(dir.file("t/c1.txt"));
  REQUIRE(sets.size() == 2);
  CHECK(sets.at(0).kx() == 2);
  CHECK(sets.at(0).kq() == 2);
  CHECK(sets.at(0).seed == 7);

  const std::string snapshot = dir.file("t/cluster_config.txt");
  REQUIRE(fs::exists(snapshot));
  const std::string text = read_bytes(snapshot);
  CHECK(text.find("kx=2") != std::string::npos);
  CHECK(text.find("seed=7") != std::string::npos);
  CHECK(text.find("config=") == std::string::npos);

  // Re-running from the snapshot reproduces the output byte for byte.
  REQUIRE(run_cli("cluster --config " + snapshot + " --out " + dir.file("t2/c2.txt")).code == 0);
  CHECK(read_bytes(dir.file("t/c1.txt")) == read_bytes(dir.file("t2/c2.txt")));

  // Command-line flags override config-file values.
  REQUIRE(run_cli("cluster --config " + snapshot + " --kx 1 --out " + dir.file("t3/c3.txt"))
              .code == 0);
  CHECK(load_centroid_sets<double>(dir.file("t3/c3.txt")).at(0).kx() == 1);

  std::ofstream(dir.file("bad.cfg")) << "bogus=1\nmanifest=" << manifest << "\n";
  const RunResult unknown = run_cli("cluster --config " + dir.file("bad.cfg"));
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("bogus") != std::string::npos);
}

TEST_CASE("train, eval, attend, and bench run end to end") {
  TmpDir dir("cli_flow");
  REQUIRE(run_cli("synth --scenes 2 --per-scene 4 --size 24 --seed 3 --out " + dir.file("data"))
              .code == 0);
  const std::string manifest = dir.file("data/manifest.txt");
  REQUIRE(run_cli("cluster --manifest " + manifest + " --kx 1 --kq 1 --seed 2 --out " +
                  dir.file("c.txt"))
              .code == 0);

  const RunResult trained = run_cli("train --manifest " + manifest + " --centroids " +
                                    dir.file("c.txt") + " --out " + dir.file("run") + " " +
                                    kTinyModelFlags +
                                    " --dropout 0 --epochs 1 --batch 8 --seed 0");
  REQUIRE(trained.code == 0);
  CHECK(trained.out.find("final checkpoint") != std::string::npos);
  const std::string checkpoint = dir.file("run/checkpoint_final.bin");
  CHECK(fs::exists(checkpoint));
  CHECK(fs::exists(dir.file("run/train_config.txt")));
  CHECK(!read_bytes(dir.file("run/train_log.txt")).empty());

  const RunResult eval_missing = run_cli("eval --manifest " + manifest);
  CHECK(eval_missing.code == 1);
  CHECK(eval_missing.err.find("--checkpoint") != std::string::npos);

  const RunResult evaluated =
      run_cli("eval --manifest " + manifest + " --centroids " + dir.file("c.txt") +
              " --checkpoint " + checkpoint + " --out " + dir.file("evald"));
  REQUIRE(evaluated.code == 0);
  const std::string report = read_bytes(dir.file("evald/eval_report.txt"));
  CHECK(report.find("accuracy scene") != std::string::npos);
  CHECK(report.find("samples 8") != std::string::npos);
  CHECK(evaluated.out.find("accuracy scene") != std::string::npos);

  // Centroids that do not match the checkpoint's recorded hash are refused.
  REQUIRE(run_cli("cluster --manifest " + manifest + " --kx 2 --kq 1 --seed 2 --out " +
                  dir.file("c_other.txt"))
              .code == 0);
  const RunResult mismatch =
      run_cli("eval --manifest " + manifest + " --centroids " + dir.file("c_other.txt") +
              " --checkpoint " + checkpoint + " --out " + dir.file("evald2"));
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("does not match") != std::string::npos);

  const RunResult attended =
      run_cli("attend --manifest " + manifest + " --centroids " + dir.file("c.txt") +
              " --checkpoint " + checkpoint + " --limit 1 --out " + dir.file("att"));
  REQUIRE(attended.code == 0);
  CHECK(fs::exists(dir.file("att/ranking.txt")));
  CHECK(fs::exists(dir.file("att/image0_encoder_x.pgm")));
  CHECK(fs::exists(dir.file("att/image0_encoder_q.pgm")));
  CHECK(fs::exists(dir.file("att/image0_decoder_s0.pgm")));
  CHECK(fs::exists(dir.file("att/image0_decoder_s1.pgm")));

  const RunResult benched = run_cli("bench --scene-counts 1,2 --trials 1 " + kTinyModelFlags +
                                    " --out " + dir.file("bench"));
  REQUIRE(benched.code == 0);
  const std::string table = read_bytes(dir.file("bench/bench.txt"));
  CHECK(table.rfind("num_scenes\tmean_forward_ms\tparam_count\tparam_bytes\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}
