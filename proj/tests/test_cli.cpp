#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "oracles.hpp"
#include "samiro/commands.hpp"
#include "samiro/metrics.hpp"
#include "samiro/synth.hpp"
#include "support.hpp"

using namespace samiro;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome cli(std::vector<std::string> args) {
  args.insert(args.begin(), "samiro");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

// Every regular file under root, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = support::slurp(e.path());
  return files;
}

const char* kSmall =
    "[data]\nheight = 32\nwidth = 64\nlane_width = 3\ntrain_count = 12\ntest_count = 6\n"
    "[model]\noracle_widths = 6,8,12\ntarget_widths = 4,6,8\nhead_hidden = 4\n"
    "[train]\nseeds = 0,1\npretrain_steps = 10\ntrain_steps = 12\nbatch_size = 4\ngt_lane_width = 3\n";

// A small dataset pair plus an oracle checkpoint, shared by the train tests.
struct Workspace {
  support::TempDir tmp{"cli_ws"};
  fs::path cfg = tmp.path / "small.ini";
  fs::path train = tmp.path / "train", test = tmp.path / "test", oracle = tmp.path / "pre";

  Workspace() {
    support::spit(cfg, kSmall);
    REQUIRE(cli({"gen", "--config", cfg.string(), "--out", train.string()}).code == 0);
    REQUIRE(cli({"gen", "--config", cfg.string(), "--out", test.string(), "--count", "6", "--seed", "2"}).code == 0);
    REQUIRE(cli({"pretrain", "--config", cfg.string(), "--data", train.string(), "--out", oracle.string()}).code == 0);
  }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("gen is deterministic and honours --count") {
  support::TempDir tmp("cli_gen");
  const auto a = tmp.path / "a", b = tmp.path / "b", z = tmp.path / "z";
  REQUIRE(cli({"gen", "--out", a.string(), "--count", "5", "--seed", "9"}).code == 0);
  REQUIRE(cli({"gen", "--out", b.string(), "--count", "5", "--seed", "9"}).code == 0);
  CHECK(tree(a) == tree(b));
  CHECK(tree(a).count("images/0004.pgm") == 1);

  REQUIRE(cli({"gen", "--out", z.string(), "--count", "0"}).code == 0);
  CHECK(support::slurp(z / "index.txt").empty());
  CHECK(read_dataset(z).empty());
}

TEST_CASE("usage and config errors exit 1") {
  support::TempDir tmp("cli_usage");
  CHECK(cli({}).code == 1);
  CHECK(cli({"gen", "--out", tmp.path.string(), "--bogus"}).code == 1);
  CHECK(cli({"gen"}).code == 1);
  CHECK(cli({"eval", "--pred", "p", "--gt", "g", "--out", "o", "--format", "kitti"}).code == 1);

  support::spit(tmp.path / "typo.ini", "[loss]\nlamda = 0.1\n");
  const auto r = cli({"gen", "--config", (tmp.path / "typo.ini").string(), "--out", (tmp.path / "o").string()});
  CHECK(r.code == 1);
  CHECK(contains(r.err, "lamda"));

  support::spit(tmp.path / "range.ini", "[eval]\niou = 1.5\n");
  CHECK(cli({"gen", "--config", (tmp.path / "range.ini").string(), "--out", (tmp.path / "o").string()}).code == 1);
  CHECK(cli({"gradcheck", "--tolerance", "0"}).code == 1);
}

TEST_CASE("train echoes the loss settings verbatim") {
  auto& ws = workspace();
  support::TempDir tmp("cli_echo");
  support::spit(tmp.path / "c.ini", std::string(kSmall) + "[loss]\nlambda = 0.10\n");
  const auto out = tmp.path / "run";
  const auto r = cli({"train", "--config", (tmp.path / "c.ini").string(), "--data", ws.train.string(), "--oracle",
                      ws.oracle.string() + "/oracle.ckpt", "--out", out.string(), "--no-timestamp"});
  REQUIRE(r.code == 0);
  const auto rep = support::slurp(out / "report.txt");
  CHECK(contains(rep, "lambda = 0.10\n"));
  CHECK(contains(rep, "norm_mode = per_channel_spatial\n"));
  CHECK(contains(rep, "variant = samiro\n"));
  CHECK(contains(rep, "regularizer: on\n"));
  CHECK(contains(rep, "finite: yes\n"));
  CHECK(!contains(rep, "generated:"));
  CHECK(contains(r.out, "final total loss"));
  for (const char* f : {"model.ckpt", "loss.csv", "config.resolved"}) CHECK(fs::exists(out / f));
}

TEST_CASE("train without an oracle equals variant none") {
  auto& ws = workspace();
  support::TempDir tmp("cli_none");
  support::spit(tmp.path / "none.ini", std::string(kSmall) + "[loss]\nvariant = none\n");
  const auto a = tmp.path / "a", b = tmp.path / "b";
  REQUIRE(cli({"train", "--config", ws.cfg.string(), "--data", ws.train.string(), "--out", a.string()}).code == 0);
  REQUIRE(cli({"train", "--config", (tmp.path / "none.ini").string(), "--data", ws.train.string(), "--oracle",
               ws.oracle.string() + "/oracle.ckpt", "--out", b.string()})
              .code == 0);
  CHECK(support::slurp(a / "loss.csv") == support::slurp(b / "loss.csv"));
  CHECK(contains(support::slurp(a / "report.txt"), "regularizer: off (no --oracle)"));
}

TEST_CASE("--no-timestamp makes train output byte-identical") {
  auto& ws = workspace();
  support::TempDir tmp("cli_idem");
  const auto a = tmp.path / "a", b = tmp.path / "b";
  for (const auto& out : {a, b})
    REQUIRE(cli({"train", "--config", ws.cfg.string(), "--data", ws.train.string(), "--test", ws.test.string(),
                 "--oracle", ws.oracle.string() + "/oracle.ckpt", "--out", out.string(), "--no-timestamp"})
                .code == 0);
  CHECK(tree(a) == tree(b));
  CHECK(fs::exists(a / "report.csv"));
  CHECK(fs::exists(a / "pred" / "0005.lines.txt"));
}

TEST_CASE("incompatible oracle checkpoints exit 2") {
  auto& ws = workspace();
  support::TempDir tmp("cli_bad_oracle");
  // A trained target model is a checkpoint of the wrong kind.
  REQUIRE(cli({"train", "--config", ws.cfg.string(), "--data", ws.train.string(), "--out", (tmp.path / "t").string()})
              .code == 0);
  auto r = cli({"train", "--config", ws.cfg.string(), "--data", ws.train.string(), "--oracle",
                (tmp.path / "t" / "model.ckpt").string(), "--out", (tmp.path / "o").string()});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "incompatible checkpoint manifest"));

  support::spit(tmp.path / "two.ini",
                "[data]\nheight = 32\nwidth = 64\nlane_width = 3\n[model]\noracle_widths = 6,8\n"
                "target_widths = 4,6\nhead_hidden = 4\n[train]\ntrain_steps = 2\nbatch_size = 4\ngt_lane_width = 3\n");
  r = cli({"train", "--config", (tmp.path / "two.ini").string(), "--data", ws.train.string(), "--oracle",
           ws.oracle.string() + "/oracle.ckpt", "--out", (tmp.path / "o2").string()});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "oracle stages"));

  support::spit(tmp.path / "junk.ckpt", "not a checkpoint");
  r = cli({"train", "--config", ws.cfg.string(), "--data", ws.train.string(), "--oracle",
           (tmp.path / "junk.ckpt").string(), "--out", (tmp.path / "o3").string()});
  CHECK(r.code == 2);
}

TEST_CASE("eval on pred == gt gives F1 1 and echoes the defaults") {
  auto& ws = workspace();
  support::TempDir tmp("cli_eval_same");
  const auto r = cli({"eval", "--pred", (ws.test / "images").string(), "--gt", ws.test.string(), "--out",
                      tmp.path.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out == "F1 1.000000\n");
  const auto rep = support::slurp(tmp.path / "report.txt");
  CHECK(contains(rep, "iou = 0.5\n"));
  CHECK(contains(rep, "width = 30\n"));
  CHECK(contains(rep, "matching = hungarian\n"));

  const auto r2 = cli({"eval", "--pred", (ws.test / "images").string(), "--gt", ws.test.string(), "--out",
                       tmp.path.string(), "--iou", "0.7", "--width", "12"});
  REQUIRE(r2.code == 0);
  const auto rep2 = support::slurp(tmp.path / "report.txt");
  CHECK(contains(rep2, "iou = 0.7\n"));
  CHECK(contains(rep2, "width = 12\n"));
}

TEST_CASE("eval on a 20-image set matches the pixel-scan oracle") {
  support::TempDir tmp("cli_eval20");
  const auto gt = tmp.path / "gt", pred = tmp.path / "pred";
  REQUIRE(cli({"gen", "--out", gt.string(), "--count", "20", "--seed", "31"}).code == 0);

  Rng rng(77);
  long tp = 0, fp = 0, fn = 0;
  for (const auto& e : read_index(gt)) {
    const auto gts = parse_culane_lines(support::slurp(gt / "images" / (e.stem + ".lines.txt")));
    LaneList preds;
    for (const auto& lane : gts) {
      if (rng.uniform() < 0.2) continue;
      Lane moved;
      const double shift = rng.uniform(-25, 25);
      for (const auto& p : lane.points) moved.points.push_back({p.x + shift, p.y});
      preds.push_back(moved);
    }
    if (rng.uniform() < 0.3) preds.push_back(oracle::random_lane(rng, 64, 128));
    support::spit(pred / (e.stem + ".lines.txt"), format_culane_lines(preds));
    // Score what the evaluator will read back, not the in-memory lanes.
    const auto back = parse_culane_lines(support::slurp(pred / (e.stem + ".lines.txt")));

    std::vector<std::vector<double>> iou(back.size(), std::vector<double>(gts.size()));
    for (std::size_t i = 0; i < back.size(); ++i)
      for (std::size_t j = 0; j < gts.size(); ++j)
        iou[i][j] = oracle::scan_iou(oracle::scan_mask(back[i], 30, 64, 128), oracle::scan_mask(gts[j], 30, 64, 128));
    const auto best = oracle::exhaustive_assignment(iou, 0.5);
    tp += best.tp;
    fp += static_cast<long>(back.size()) - best.tp;
    fn += static_cast<long>(gts.size()) - best.tp;
  }
  REQUIRE(tp > 0);
  REQUIRE(fp + fn > 0);

  const auto out = tmp.path / "out";
  const auto r = cli({"eval", "--pred", pred.string(), "--gt", gt.string(), "--out", out.string()});
  REQUIRE(r.code == 0);
  const auto csv = support::slurp(out / "report.csv");
  const auto all = csv.substr(csv.find("\nall,") + 1);
  std::ostringstream want;
  want << "all,20," << tp << ',' << fp << ',' << fn << ',';
  CHECK(all.rfind(want.str(), 0) == 0);

  const double f1 = 2.0 * tp / (2.0 * tp + fp + fn);
  char line[32];
  std::snprintf(line, sizeof line, "F1 %.6f\n", f1);
  CHECK(r.out == line);
}

TEST_CASE("culane format walks nested directories") {
  support::TempDir tmp("cli_culane");
  const auto lanes = parse_culane_lines(support::slurp(support::fixture("two_lanes.lines.txt")));
  support::spit(tmp.path / "gt" / "drive" / "a.lines.txt", format_culane_lines(lanes));
  support::spit(tmp.path / "gt" / "drive" / "b.lines.txt", format_culane_lines(lanes));
  support::spit(tmp.path / "pred" / "drive" / "a.lines.txt", format_culane_lines(lanes));
  const auto r = cli({"eval", "--format", "culane", "--pred", (tmp.path / "pred").string(), "--gt",
                      (tmp.path / "gt").string(), "--out", (tmp.path / "out").string()});
  REQUIRE(r.code == 0);
  // b has no prediction: two misses out of four GT lanes.
  CHECK(contains(support::slurp(tmp.path / "out" / "report.csv"), "all,2,2,0,2,"));
}

TEST_CASE("tusimple eval") {
  support::TempDir tmp("cli_tus");
  TusimpleRecord a;
  a.raw_file = "clips/0/20.jpg";
  a.h_samples = {160, 170, 180, 190};
  a.lanes = {Lane{{{100, 160}, {104, 170}, {108, 180}, {112, 190}}}, Lane{{{300, 170}, {296, 180}, {292, 190}}}};
  TusimpleRecord b = a;
  b.raw_file = "clips/1/20.jpg";
  support::spit(tmp.path / "gt.json", format_tusimple_record(a) + "\n" + format_tusimple_record(b) + "\n");
  support::spit(tmp.path / "same.json", format_tusimple_record(b) + "\n\n" + format_tusimple_record(a) + "\n");

  auto r = cli({"eval", "--format", "tusimple", "--pred", (tmp.path / "same.json").string(), "--gt",
                (tmp.path / "gt.json").string(), "--out", (tmp.path / "o").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out == "accuracy 1.000000\n");

  // Second image missing from the predictions: half the points, both its lanes missed.
  support::spit(tmp.path / "half.json", format_tusimple_record(a) + "\n");
  r = cli({"eval", "--format", "tusimple", "--pred", (tmp.path / "half.json").string(), "--gt",
           (tmp.path / "gt.json").string(), "--out", (tmp.path / "o").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out == "accuracy 0.500000\n");

  support::spit(tmp.path / "bad.json", format_tusimple_record(a) + "\n{\"lanes\": [\n");
  r = cli({"eval", "--format", "tusimple", "--pred", (tmp.path / "bad.json").string(), "--gt",
           (tmp.path / "gt.json").string(), "--out", (tmp.path / "o").string()});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "bad.json:2"));
}

TEST_CASE("malformed annotations exit 2 with file and line") {
  support::TempDir tmp("cli_parse");
  const auto gt = tmp.path / "gt";
  REQUIRE(cli({"gen", "--out", gt.string(), "--count", "3", "--seed", "4"}).code == 0);
  support::spit(tmp.path / "pred" / "0001.lines.txt", "10 20 30 40\n10 20 x 40\n");
  const auto r = cli({"eval", "--pred", (tmp.path / "pred").string(), "--gt", gt.string(), "--out",
                      (tmp.path / "o").string()});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "0001.lines.txt:2"));

  CHECK(cli({"train", "--data", (tmp.path / "nowhere").string(), "--out", (tmp.path / "t").string()}).code == 2);
}

TEST_CASE("gradcheck exits 0") {
  const auto r = cli({"gradcheck"});
  CHECK(r.code == 0);
  CHECK(!r.out.empty());
}

TEST_CASE("ablate reproduces the standalone baseline run") {
  auto& ws = workspace();
  support::TempDir tmp("cli_ablate");
  std::ostringstream sink, errsink;
  CommandContext ctx{sink, errsink, false};
  AblateOptions opt;
  opt.config = ws.cfg.string();
  opt.out = tmp.path / "ab";
  opt.data = ws.train;
  opt.test = ws.test;
  AblateResult res;
  REQUIRE(cmd_ablate(opt, ctx, &res) == 0);

  REQUIRE(res.runs.size() == 8);
  const auto csv = support::slurp(opt.out / "ablate.csv");
  CHECK(csv.rfind("setting,seed_0,seed_1,mean,min,max\n", 0) == 0);
  for (const auto& s : kAblationSettings) CHECK(contains(csv, "\n" + s + ","));
  CHECK(fs::exists(opt.out / "ablate_occluded.csv"));
  for (const auto& r : res.runs) CHECK(r.finite);

  for (std::uint64_t seed : {0ULL, 1ULL}) {
    const auto out = tmp.path / ("base" + std::to_string(seed));
    REQUIRE(cli({"train", "--config", ws.cfg.string(), "--data", ws.train.string(), "--test", ws.test.string(),
                 "--seed", std::to_string(seed), "--out", out.string()})
                .code == 0);
    const auto& run = res.at("baseline", seed);
    CHECK(run.report.to_csv() == support::slurp(out / "report.csv"));
    char want[64];
    std::snprintf(want, sizeof want, "total_loss_final: %.9g\n", run.final_total);
    CHECK(contains(support::slurp(out / "report.txt"), want));
  }
}
