#include "evalign/explanation.hpp"

#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evalign/diagnosis.hpp"
#include "evalign/error.hpp"
#include "evalign/format.hpp"

namespace evalign {

namespace {

constexpr const char* kDefaultTemplates =
#include "default_templates.inc"
    ;

std::vector<std::string> decimal_tokens(std::string_view text) {
  static const std::regex kDecimal(R"([0-9]+\.[0-9]+)");
  std::vector<std::string> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kDecimal); it != std::sregex_iterator();
       ++it)
    out.push_back(it->str());
  return out;
}

std::string task_positive(Task task) { return task == Task::ad ? "AD" : "dementia"; }
std::string task_negative(Task task) { return task == Task::ad ? "non-AD" : "no dementia"; }

}  // namespace

TypeTemplates parse_templates(const nlohmann::json& j) {
  if (!j.is_object()) throw_data("templates must be a JSON object");
  TypeTemplates out;
  for (AbnormalityType t : kAllAbnormalityTypes) {
    auto it = j.find(std::string(to_code(t)));
    if (it == j.end() || !it->is_string())
      throw_data("templates: missing text for '" + std::string(to_code(t)) + "'");
    out[t] = it->get<std::string>();
  }
  return out;
}

TypeTemplates default_templates() { return parse_templates(nlohmann::json::parse(kDefaultTemplates)); }

TypeTemplates load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open templates '" + path.string() + "'");
  try {
    return parse_templates(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw_data("templates '" + path.string() + "': " + e.what());
  }
}

Explanation generate_description(const RetrievalResult& result, double probability, Task task,
                                 const TypeTemplates& templates, const TextRefiner& refiner) {
  auto tmpl = templates.find(result.predicted);
  if (tmpl == templates.end())
    throw_data("no template for type '" + std::string(to_code(result.predicted)) + "'");

  Explanation e;
  e.predicted_type = result.predicted;
  e.type_description = tmpl->second;
  for (const Match& m : result.top_k) e.references.push_back({m.id, m.similarity, m.description});

  const std::string pct = format_percent(probability);
  e.diagnosis_statement =
      probability >= kDecisionThreshold
          ? "Predicted " + task_positive(task) + " with a probability of " + pct + "."
          : "Predicted " + task_negative(task) + "; probability of " + task_positive(task) +
                " is " + pct + ".";

  std::ostringstream out;
  out << "Case " << result.query_id << "\n";
  out << "Predicted abnormality: " << display_name(result.predicted) << " ("
      << to_code(result.predicted) << "), anchor similarity "
      << format_fixed(result.class_scores[index_of(result.predicted)], 4) << "\n";
  out << e.type_description << "\n";
  out << "Similar reference cases:\n";
  for (std::size_t i = 0; i < e.references.size(); ++i) {
    const auto& r = e.references[i];
    out << "  " << (i + 1) << ". " << r.id << " (similarity " << format_fixed(r.similarity, 4)
        << "): " << r.description << "\n";
  }
  out << e.diagnosis_statement << "\n";
  e.raw = out.str();

  e.rendered = refiner ? refiner(e.raw) : e.raw;
  const RefinementCheck check = validate_refined(e.raw, e.rendered);
  if (!check.ok) {
    std::string missing;
    for (const auto& t : check.missing) missing += (missing.empty() ? "" : ", ") + t;
    throw_data("refined explanation dropped numeric tokens: " + missing);
  }
  return e;
}

RefinementCheck validate_refined(std::string_view raw, std::string_view refined) {
  const auto present = decimal_tokens(refined);
  const std::set<std::string> available(present.begin(), present.end());
  RefinementCheck check;
  std::set<std::string> reported;
  for (const std::string& token : decimal_tokens(raw)) {
    if (!available.contains(token) && reported.insert(token).second) check.missing.push_back(token);
  }
  check.ok = check.missing.empty();
  return check;
}

nlohmann::json to_json(const Explanation& e) {
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& r : e.references)
    refs.push_back({{"id", r.id}, {"similarity", r.similarity}, {"description", r.description}});
  return {{"predicted_type", std::string(to_code(e.predicted_type))},
          {"type_description", e.type_description},
          {"references", refs},
          {"diagnosis_statement", e.diagnosis_statement},
          {"rendered", e.rendered}};
}

}  // namespace evalign
