#include "doctest.h"

#include "rwm/io.hpp"
#include "rwm/report.hpp"

#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

using namespace rwm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(RWM_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Fresh working directory with a small dataset.
struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("rwm_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto r = run("--seed 4 --out " + dir.string() + " gen-data --count 48 --height 16 --width 16");
    REQUIRE(r.code == 0);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

const std::string kArch = " --widths 4,8 --strides 1,2 --init-seed 3";

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run("").code == 1);
  const auto unknown = run("bogus");
  CHECK(unknown.code == 1);
  CHECK(unknown.out.find("unknown subcommand") != std::string::npos);
  CHECK(run("train --steps nope").code == 1);
  CHECK(run("detect").code == 1);
  CHECK(run("--help").code == 0);
}

TEST_CASE("data errors exit with 2") {
  Workspace ws;
  write_file(ws.path("junk.rswt"), "not a checkpoint");
  const auto r = run("detect --model " + ws.path("junk.rswt") + " --input " + ws.path("data.rtns") + " --tensor test");
  CHECK(r.code == 2);
  CHECK(r.out.find("bad magic") != std::string::npos);
  CHECK(r.out.find("junk.rswt") != std::string::npos);
}

TEST_CASE("zero training steps write the initial model") {
  Workspace ws;
  const auto r = run("--out " + ws.path("m") + " train --steps 0 --data " + ws.path("data.rtns") + kArch);
  REQUIRE(r.code == 0);
  const auto ck = load_checkpoint(ws.path("m/model.rswt"));
  DetectorConfig c;
  c.height = c.width = 16;
  c.channel_widths = {4, 8};
  c.strides = {1, 2};
  c.seed = 3;
  const auto fresh = build_detector<Real>(c);
  const auto& a = ck.model.named_parameters();
  const auto& b = fresh.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i].value.data() == b[i].value.data()).all());
  CHECK(ck.metadata.at("steps") == "0");
  CHECK(fs::exists(ws.path("m/train.manifest.json")));
  CHECK(parse_csv(read_file(ws.path("m/train.csv"))).size() == 1);
}

TEST_CASE("train, embed and detect") {
  Workspace ws;
  const std::string data = ws.path("data.rtns");
  REQUIRE(run("--seed 1 --out " + ws.path("m") + " train --steps 120 --batch 8 --data " + data + kArch).code == 0);
  const std::string model = ws.path("m/model.rswt");
  REQUIRE(run("--seed 2 --out " + ws.path("w") + " embed --model " + model + " --input " + data +
              " --tensor test --limit 8 --epsilon 0.0784313725")
              .code == 0);
  const auto marked = run("detect --model " + model + " --input " + ws.path("w/watermarked.rtns"));
  REQUIRE(marked.code == 0);
  const auto lines = parse_csv(marked.out);
  REQUIRE(lines.size() == 8);
  int ones = 0;
  for (const auto& l : lines) ones += l.at(0) == "1";
  CHECK(ones >= 7);

  // The same seed reproduces the same bytes.
  REQUIRE(run("--seed 2 --out " + ws.path("w2") + " embed --model " + model + " --input " + data +
              " --tensor test --limit 8 --epsilon 0.0784313725")
              .code == 0);
  CHECK(read_file(ws.path("w/watermarked.rtns")) == read_file(ws.path("w2/watermarked.rtns")));

  const auto curve = run("--out " + ws.path("c") + " attack-curve --model " + model + " --input " + data +
                         " --tensor test --limit 8 --variants 2 --epsilons 0,0.05");
  REQUIRE(curve.code == 0);
  const auto rows = parse_csv(read_file(ws.path("c/attack_curve.csv")));
  CHECK(rows.size() == 3);
  CHECK(rows[0][0] == "transform");
}
