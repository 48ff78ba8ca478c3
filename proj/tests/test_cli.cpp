#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcrl/checkpoint.hpp"
#include "gcrl/dataio.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "gcrl_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(GCRL_CLI_PATH) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int count_lines_starting(const fs::path& p, const std::string& prefix) {
  std::ifstream in(p);
  int n = 0;
  for (std::string l; std::getline(in, l);) n += l.starts_with(prefix);
  return n;
}

// Small synthetic corpus shared by the tests below.
const std::string kData = (kRoot / "data").string();
const std::string kSmall = "--profile desk --data-dir " + kData +
                           " --count-train 64 --count-val 8 --count-test 8 --set hidden=8 --set decoder_hidden=16"
                           " --set recon_hidden=16 --set flow_layers=2 --set flow_hidden=8";

void ensure_data() {
  static bool done = false;
  if (done) return;
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  REQUIRE(run("generate " + kSmall + " --msd 0.1,0.3,0.5,0.6 --out " + (kRoot / "gen").string()) == 0);
  done = true;
}

}  // namespace

TEST_CASE("generate: determinism, counts and the default recipe") {
  ensure_data();
  const auto a = kRoot / "a", b = kRoot / "b";
  REQUIRE(run("generate --profile desk --data-dir " + a.string() + " --msd 0.3 --seed 7 --count-train 100 --out " +
              (kRoot / "ga").string()) == 0);
  REQUIRE(run("generate --profile desk --data-dir " + b.string() + " --msd 0.3 --seed 7 --count-train 100 --out " +
              (kRoot / "gb").string()) == 0);
  for (const char* f : {"train.tsv", "val.tsv", "test.tsv"}) CHECK(slurp(a / "msd_0.3" / f) == slurp(b / "msd_0.3" / f));
  CHECK(gcrl::load_scenes(a / "msd_0.3" / "train.tsv", 0).size() == 100);
  CHECK(gcrl::load_scenes(a / "msd_0.3" / "val.tsv", 0).size() == 200);
  CHECK(fs::exists(kRoot / "ga" / "config.txt"));

  const auto all = kRoot / "all";
  REQUIRE(run("generate --data-dir " + all.string() + " --count-train 2 --count-val 1 --count-test 1 --out " +
              (kRoot / "gall").string()) == 0);
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(all)) dirs += e.is_directory();
  CHECK(dirs == 8);
}

TEST_CASE("exit codes") {
  ensure_data();
  CHECK(run("train --set bogus=1 --out " + (kRoot / "x").string()) == 2);
  CHECK(run("train --profile nope --out " + (kRoot / "x").string()) == 2);
  CHECK(run("train --config " + (kRoot / "missing.txt").string()) == 5);
  CHECK(run("eval --checkpoint " + (kRoot / "missing.ckpt").string()) == 5);
  CHECK(run("train --profile desk --data-dir " + (kRoot / "empty").string() + " --out " + (kRoot / "x").string()) == 5);
  CHECK(run("frobnicate") != 0);
}

TEST_CASE("train, rerun from the snapshot, adapt and evaluate") {
  ensure_data();
  const auto t1 = kRoot / "t1", t2 = kRoot / "t2";
  REQUIRE(run("train " + kSmall + " --epochs 2 --set val_n=3 --out " + t1.string()) == 0);
  CHECK(fs::exists(t1 / "model.ckpt"));
  CHECK(fs::exists(t1 / "config.txt"));
  CHECK(count_lines_starting(t1 / "loss.csv", "") == 3);
  CHECK(slurp(t1 / "config.txt").find("train_msd=0.1,0.3,0.5\n") != std::string::npos);

  REQUIRE(run("train --config " + (t1 / "config.txt").string() + " --out " + t2.string()) == 0);
  CHECK(slurp(t1 / "loss.csv") == slurp(t2 / "loss.csv"));
  CHECK(slurp(t1 / "model.ckpt") == slurp(t2 / "model.ckpt"));

  const auto ckpt = (t1 / "model.ckpt").string();
  const auto a0 = kRoot / "a0";
  REQUIRE(run("adapt --checkpoint " + ckpt + " --batches 0 --out " + a0.string()) == 0);
  CHECK(gcrl::load_checkpoint(a0 / "adapted.ckpt").tensors == gcrl::load_checkpoint(ckpt).tensors);

  const auto aw = kRoot / "aw";
  REQUIRE(run("adapt --checkpoint " + ckpt + " --batches 1 --scope gmm-weights-only --set adapt_epochs=2 --out " +
              aw.string()) == 0);
  CHECK(slurp(kRoot / "last.log").find("updated scalars 5,") != std::string::npos);
  const auto before = gcrl::load_checkpoint(ckpt), after = gcrl::load_checkpoint(aw / "adapted.ckpt");
  int changed = 0;
  for (const auto& [name, value] : before.tensors) {
    if (after.tensors.at(name) != value) {
      ++changed;
      CHECK(name == "prior_s.logits");
    }
  }
  CHECK(changed == 1);

  const auto ev = kRoot / "ev";
  REQUIRE(run("eval --checkpoint " + ckpt + " --best-of 5 --out " + ev.string()) == 0);
  CHECK(slurp(ev / "metrics.csv").starts_with("metric,value,env,alpha,msd,N,seed\n"));
  CHECK(count_lines_starting(ev / "metrics.csv", "ade,") == 1);
  CHECK(count_lines_starting(ev / "metrics.csv", "fde,") == 1);

  const auto t3 = kRoot / "t3";
  REQUIRE(run("train " + kSmall + " --epochs 1 --seed 4 --set val_n=3 --out " + t3.string()) == 0);
  const auto mc = kRoot / "mc";
  REQUIRE(run("eval --checkpoint " + ckpt + " --best-of 2 --mcc " + ckpt + " " + (t3 / "model.ckpt").string() +
              " --mode weak --out " + mc.string()) == 0);
  CHECK(count_lines_starting(mc / "metrics.csv", "mcc_s_weak,") == 1);
  CHECK(count_lines_starting(mc / "metrics.csv", "mcc_z_weak,") == 1);
}

TEST_CASE("alpha sweep") {
  ensure_data();
  const auto tn = kRoot / "tn";
  REQUIRE(run("train " + kSmall + " --epochs 1 --train-alpha 1,2,4,8 --set val_n=3 --out " + tn.string()) == 0);
  const auto ev = kRoot / "ev_alpha";
  REQUIRE(run("eval --checkpoint " + (tn / "model.ckpt").string() + " --best-of 3 --alpha 8,16,32,64 --out " +
              ev.string()) == 0);
  CHECK(count_lines_starting(ev / "metrics.csv", "ade,") == 4);
  CHECK(count_lines_starting(ev / "metrics.csv", "fde,") == 4);
  // A model without the noise channel cannot be swept.
  const auto t0 = kRoot / "t_plain";
  REQUIRE(run("train " + kSmall + " --epochs 1 --set val_n=2 --out " + t0.string()) == 0);
  CHECK(run("eval --checkpoint " + (t0 / "model.ckpt").string() + " --alpha 8 --out " + ev.string()) == 2);
}

TEST_CASE("a diverging run exits with the term named") {
  ensure_data();
  // Coordinates near 1e200 overflow once squared in the reconstruction term.
  const auto huge = kRoot / "huge";
  for (const char* d : {"msd_0.1", "msd_0.6"}) {
    fs::create_directories(huge / d);
    for (const char* f : {"train.tsv", "val.tsv", "test.tsv"}) {
      std::ofstream out(huge / d / f);
      for (int ped = 0; ped < 2; ++ped)
        for (int t = 0; t < 20; ++t) out << ped * 20 + t << '\t' << ped << "\t1e200\t" << 0.4 * t << '\n';
    }
  }
  const int code = run("train --profile desk --data-dir " + huge.string() +
                       " --train-msd 0.1 --epochs 1 --set val_n=2 --out " + (kRoot / "div").string());
  CHECK(code == 3);
  CHECK(slurp(kRoot / "last.log").find("loss term '") != std::string::npos);
}
