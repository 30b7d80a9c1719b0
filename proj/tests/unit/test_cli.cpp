#include <doctest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "evalign/checkpoint.hpp"
#include "evalign/cli.hpp"
#include "evalign/core.hpp"
#include "test_util.hpp"

using namespace evalign;
using evalign::testing::read_file;
using evalign::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "evalign");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const TempDir& d, const std::string& name) { return (d / name).string(); }

// Small synthetic manifest with a declared test split, then a checkpoint.
void prepare(const TempDir& d) {
  REQUIRE(run({"synth", "--out", p(d, "m.jsonl"), "--seed", "3", "--n-per-class", "8",
               "--n-test-per-class", "3", "--dim-image", "8", "--dim-text", "8"})
              .code == 0);
  REQUIRE(run({"train", "--manifest", p(d, "m.jsonl"), "--checkpoint", p(d, "c.json"), "--proj-dim",
               "4", "--epochs", "30", "--head-epochs", "50", "--out", p(d, "report.json")})
              .code == 0);
}

}  // namespace

TEST_CASE("usage errors exit 1 with usage text") {
  Run r = run({"frobnicate"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = run({});
  CHECK(r.code == kExitUsage);
  r = run({"train", "--epochs", "abc"});
  CHECK(r.code == kExitUsage);
  r = run({"synth"});
  CHECK(r.code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("missing or malformed input files exit 2") {
  TempDir d;
  Run r = run({"train", "--manifest", p(d, "nope.jsonl"), "--checkpoint", p(d, "c.json")});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("nope.jsonl") != std::string::npos);
  evalign::testing::write_file(d / "bad.jsonl", "{\"id\": 1}\n");
  r = run({"train", "--manifest", p(d, "bad.jsonl"), "--checkpoint", p(d, "c.json")});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("bad.jsonl:1") != std::string::npos);
}

TEST_CASE("all-zero embeddings exit 3") {
  TempDir d;
  DatasetManifest m = evalign::testing::random_manifest(8, 4, 4, 1);
  for (CaseRecord& c : m.cases) c.image_embedding.assign(4, 0.0f);
  save_manifest(d / "zero.jsonl", m);
  const Run r = run({"train", "--manifest", p(d, "zero.jsonl"), "--checkpoint", p(d, "c.json"),
                     "--proj-dim", "3", "--n-train", "6"});
  CHECK(r.code == kExitNumeric);
  CHECK(r.err.find("degenerate embedding") != std::string::npos);
}

TEST_CASE("train then evaluate writes every report and is reproducible") {
  TempDir d;
  prepare(d);
  const std::string manifest_before = read_file(d / "m.jsonl");
  const Run e1 = run({"evaluate", "--manifest", p(d, "m.jsonl"), "--checkpoint", p(d, "c.json"),
                      "--out", p(d, "eval1")});
  REQUIRE(e1.code == 0);
  for (const char* f : {"abnormality_report.csv", "dementia_report.csv", "ad_report.csv"})
    CHECK(std::filesystem::exists(d / "eval1" / f));
  for (const char* f : {"abnormality_report.json", "dementia_report.json", "ad_report.json",
                        "retrieval_analysis.json", "error_analysis.json"})
    CHECK(nlohmann::json::accept(read_file(d / "eval1" / f)));
  CHECK(read_file(d / "eval1" / "abnormality_report.csv").rfind("Method,Accuracy (%)", 0) == 0);
  std::istringstream preds(read_file(d / "eval1" / "predictions.jsonl"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(preds, line)) {
    CHECK(nlohmann::json::accept(line));
    ++rows;
  }
  CHECK(rows == 12);
  CHECK(load_checkpoint(d / "c.json").pair.dim() == 4);
  CHECK(nlohmann::json::accept(read_file(d / "report.json")));

  // Second full run into a fresh directory.
  TempDir d2;
  prepare(d2);
  CHECK(read_file(d2 / "c.json") == read_file(d / "c.json"));
  REQUIRE(run({"evaluate", "--manifest", p(d2, "m.jsonl"), "--checkpoint", p(d2, "c.json"),
               "--out", p(d2, "eval1")})
              .code == 0);
  for (const char* f : {"abnormality_report.json", "ad_report.csv", "retrieval_analysis.json",
                        "error_analysis.json", "predictions.jsonl"})
    CHECK(read_file(d2 / "eval1" / f) == read_file(d / "eval1" / f));
  CHECK(read_file(d / "m.jsonl") == manifest_before);
}

TEST_CASE("inference subcommands") {
  TempDir d;
  prepare(d);
  const std::string m = p(d, "m.jsonl"), c = p(d, "c.json");

  Run r = run({"classify", "--manifest", m, "--checkpoint", c});
  REQUIRE(r.code == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 12);
  CHECK(nlohmann::json::parse(r.out.substr(0, r.out.find('\n'))).contains("class_scores"));

  r = run({"retrieve", "--manifest", m, "--checkpoint", c, "--k", "2", "--id", "normal_0007"});
  CHECK(r.code == 0);
  CHECK(r.out.find("query normal_0007") != std::string::npos);
  r = run({"retrieve", "--manifest", m, "--checkpoint", c, "--id", "no_such_case"});
  CHECK(r.code == kExitData);
  r = run({"retrieve", "--manifest", m, "--checkpoint", c, "--k", "0"});
  CHECK(r.code == kExitUsage);

  r = run({"explain", "--manifest", m, "--checkpoint", c, "--task", "ad", "--out", p(d, "ex.jsonl")});
  CHECK(r.code == 0);
  CHECK(r.out.find("Similar reference cases:") != std::string::npos);
  CHECK(r.out.find("%") != std::string::npos);
  CHECK(nlohmann::json::accept((
      read_file(d / "ex.jsonl").substr(0, read_file(d / "ex.jsonl").find('\n')))));

  for (const char* pred : {"head", "conditional"}) {
    r = run({"predict", "--manifest", m, "--checkpoint", c, "--task", "dementia", "--predictor", pred});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("id,predicted_type,probability,prediction\n", 0) == 0);
  }
  r = run({"predict", "--manifest", m, "--checkpoint", c, "--task", "severity"});
  CHECK(r.code == kExitUsage);

  r = run({"export-embedding", "--manifest", m, "--checkpoint", c, "--out", p(d, "emb.csv")});
  CHECK(r.code == 0);
  const std::string csv = read_file(d / "emb.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 32 + 4 + 1);
}

TEST_CASE("declared split and explicit reference manifest agree") {
  TempDir d;
  prepare(d);
  const DatasetManifest all = load_manifest(d / "m.jsonl");
  const DatasetSplit s = split_dataset(all, 0, 0);
  save_manifest(d / "refs.jsonl", s.train);
  save_manifest(d / "queries.jsonl", s.test);
  const Run a = run({"retrieve", "--manifest", p(d, "m.jsonl"), "--checkpoint", p(d, "c.json")});
  const Run b = run({"retrieve", "--manifest", p(d, "queries.jsonl"), "--reference",
                     p(d, "refs.jsonl"), "--checkpoint", p(d, "c.json")});
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
}
