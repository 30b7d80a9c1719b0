#include <doctest.h>

#include <nlohmann/json.hpp>

#include "evalign/error.hpp"
#include "evalign/explanation.hpp"
#include "evalign/format.hpp"
#include "test_util.hpp"

using namespace evalign;

namespace {

RetrievalResult case_one() {
  RetrievalResult r;
  r.query_id = "case_0001";
  r.gold = r.predicted = AbnormalityType::mtl_atrophy;
  r.class_scores = {0.41, 0.8712, 0.33, 0.52};
  const double scores[] = {0.96034, 0.95897, 0.956712};
  const char* ids[] = {"ref_017", "ref_042", "ref_008"};
  for (int i = 0; i < 3; ++i) {
    Match m;
    m.id = ids[i];
    m.similarity = scores[i];
    m.type = AbnormalityType::mtl_atrophy;
    m.description = "Bilateral hippocampal volume loss.";
    r.top_k.push_back(m);
  }
  return r;
}

}  // namespace

TEST_CASE("explanation carries every score and the probability") {
  const Explanation e = generate_description(case_one(), 0.8101, Task::ad, default_templates());
  for (const char* token : {"0.9603", "0.9590", "0.9567", "81.01%", "mtl_atrophy", "ref_017",
                            "ref_042", "ref_008", "0.8712"})
    CHECK(e.rendered.find(token) != std::string::npos);
  CHECK(e.predicted_type == AbnormalityType::mtl_atrophy);
  CHECK(e.references.size() == 3);
  CHECK(e.diagnosis_statement.find("81.01%") != std::string::npos);

  const auto type_pos = e.rendered.find(e.type_description);
  const auto refs_pos = e.rendered.find("ref_017");
  const auto stmt_pos = e.rendered.find(e.diagnosis_statement);
  CHECK(type_pos < refs_pos);
  CHECK(refs_pos < stmt_pos);
}

TEST_CASE("negative prediction still states the probability") {
  const Explanation e = generate_description(case_one(), 0.1234, Task::dementia, default_templates());
  CHECK(e.diagnosis_statement.find("12.34%") != std::string::npos);
  CHECK(e.rendered.find("12.34%") != std::string::npos);
}

TEST_CASE("identity refiner returns the raw assembly") {
  const Explanation e = generate_description(case_one(), 0.8101, Task::ad, default_templates());
  CHECK(e.rendered == e.raw);
  const Explanation again = generate_description(case_one(), 0.8101, Task::ad, default_templates());
  CHECK(again.rendered == e.rendered);
  CHECK(to_json(again).dump() == to_json(e).dump());
}

TEST_CASE("validate_refined") {
  const std::string raw = "Scores 0.9603 and 0.9590. Probability 81.01%.";
  CHECK(validate_refined(raw, raw).ok);
  const RefinementCheck dropped = validate_refined(raw, "Scores 0.9590. Probability 81.01%.");
  CHECK_FALSE(dropped.ok);
  CHECK(dropped.missing == std::vector<std::string>{"0.9603"});
  CHECK(validate_refined(raw, "Probability 81.01%. Scores 0.9590 and 0.9603.").ok);
  CHECK(validate_refined("no numbers here", "something else").ok);
}

TEST_CASE("a refiner that drops a score is rejected") {
  TextRefiner lossy = [](std::string_view text) {
    std::string s(text);
    const auto at = s.find("0.9603");
    if (at != std::string::npos) s.replace(at, 6, "high");
    return s;
  };
  CHECK_THROWS_WITH_AS(generate_description(case_one(), 0.8101, Task::ad, default_templates(), lossy),
                       doctest::Contains("0.9603"), Error);

  TextRefiner polite = [](std::string_view text) { return "Summary:\n" + std::string(text); };
  const Explanation e =
      generate_description(case_one(), 0.8101, Task::ad, default_templates(), polite);
  CHECK(e.rendered != e.raw);
}

TEST_CASE("templates") {
  const TypeTemplates t = default_templates();
  CHECK(t.size() == 4);
  for (const auto& [type, text] : t) CHECK_FALSE(text.empty());

  TypeTemplates partial = t;
  partial.erase(AbnormalityType::mtl_atrophy);
  CHECK_THROWS_AS(generate_description(case_one(), 0.5, Task::ad, partial), Error);

  nlohmann::json j = {{"normal", "a"}, {"mtl_atrophy", "b"}, {"wmh", "c"}};
  CHECK_THROWS_AS(parse_templates(j), Error);
  j["other_atrophy"] = "d";
  CHECK(parse_templates(j).at(AbnormalityType::other_atrophy) == "d");

  evalign::testing::TempDir dir;
  evalign::testing::write_file(dir / "t.json", j.dump());
  CHECK(load_templates(dir / "t.json").at(AbnormalityType::wmh) == "c");
  CHECK_THROWS_AS(load_templates(dir / "missing.json"), Error);
}

TEST_CASE("rendered probability is the rounded model output") {
  evalign::Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double p = rng.uniform();
    const Explanation e = generate_description(case_one(), p, Task::ad, default_templates());
    CHECK(e.rendered.find(format_percent(p)) != std::string::npos);
  }
}
