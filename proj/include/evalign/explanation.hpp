#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evalign/core.hpp"
#include "evalign/retrieval.hpp"

namespace evalign {

using TypeTemplates = std::map<AbnormalityType, std::string>;

/// Templates compiled in from data/templates.json.
TypeTemplates default_templates();

/// {normal: text, mtl_atrophy: text, wmh: text, other_atrophy: text}; all four required.
TypeTemplates parse_templates(const nlohmann::json& j);
TypeTemplates load_templates(const std::filesystem::path& path);

/// Post-processing hook for the assembled text (e.g. a language model).
/// It must keep every decimal number of its input.
using TextRefiner = std::function<std::string(std::string_view)>;

inline std::string identity_refiner(std::string_view text) { return std::string(text); }

struct ExplanationReference {
  std::string id;
  double similarity = 0.0;
  std::string description;
};

struct Explanation {
  AbnormalityType predicted_type = AbnormalityType::normal;
  std::string type_description;
  std::vector<ExplanationReference> references;
  std::string diagnosis_statement;
  std::string raw;       // template assembly before refinement
  std::string rendered;  // after refinement
};

nlohmann::json to_json(const Explanation& e);

/// Assembles type description, reference list and diagnosis statement, then
/// runs the refiner. Throws Error(data) for a missing template or when the
/// refiner drops a number.
Explanation generate_description(const RetrievalResult& result, double probability, Task task,
                                 const TypeTemplates& templates,
                                 const TextRefiner& refiner = identity_refiner);

struct RefinementCheck {
  bool ok = true;
  std::vector<std::string> missing;
};

/// Every decimal token (digits '.' digits) of `raw` must also appear in `refined`.
RefinementCheck validate_refined(std::string_view raw, std::string_view refined);

}  // namespace evalign
