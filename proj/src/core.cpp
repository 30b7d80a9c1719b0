#include "evalign/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evalign/error.hpp"
#include "evalign/linalg.hpp"
#include "evalign/rng.hpp"

namespace evalign {

namespace {

constexpr std::array<std::string_view, 4> kAbnormalityCodes{"normal", "mtl_atrophy", "wmh",
                                                            "other_atrophy"};
constexpr std::array<std::string_view, 4> kAbnormalityNames{
    "Normal", "Medial Temporal Lobe Atrophy", "White Matter Hyperintensities",
    "Other Atrophy"};
constexpr std::array<std::string_view, 3> kDementiaCodes{"non_demented", "ad",
                                                         "other_dementia"};
constexpr std::array<std::string_view, 4> kModalityCodes{"description", "abnormality",
                                                         "summary", "all"};
constexpr std::array<std::string_view, 2> kTaskCodes{"dementia", "ad"};
constexpr std::array<std::string_view, 2> kSplitCodes{"train", "test"};

template <typename Enum, std::size_t N>
Enum parse_code(std::string_view code, const std::array<std::string_view, N>& codes,
                std::string_view what) {
  for (std::size_t i = 0; i < N; ++i)
    if (codes[i] == code) return static_cast<Enum>(i);
  std::string valid;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) valid += ", ";
    valid += codes[i];
  }
  throw_data("unknown " + std::string(what) + " code '" + std::string(code) +
             "' (valid: " + valid + ")");
}

std::vector<float> read_vector(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) throw_data("'" + field + "' must be an array of numbers");
  std::vector<float> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw_data("'" + field + "' must contain only numbers");
    const double v = x.get<double>();
    if (!std::isfinite(v)) throw_data("'" + field + "' contains a non-finite value");
    out.push_back(static_cast<float>(v));
  }
  return out;
}

const nlohmann::json& require_field(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw_data(std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const nlohmann::json& obj, const char* key) {
  const auto& v = require_field(obj, key);
  if (!v.is_string()) throw_data(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

CaseRecord parse_case(const nlohmann::json& obj) {
  if (!obj.is_object()) throw_data("line is not a JSON object");
  CaseRecord c;
  c.id = require_string(obj, "id");
  if (c.id.empty()) throw_data("empty case id");
  if (auto it = obj.find("split"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw_data("field 'split' must be a string");
    c.split = parse_split(it->get<std::string>());
  }
  c.abnormality = parse_abnormality(require_string(obj, "abnormality"));
  c.dementia = parse_dementia(require_string(obj, "dementia"));
  c.description = require_string(obj, "description");
  c.image_embedding = read_vector(require_field(obj, "image_embedding"), "image_embedding");
  const auto& texts = require_field(obj, "text_embeddings");
  if (!texts.is_object()) throw_data("'text_embeddings' must be an object");
  for (const auto& [key, value] : texts.items())
    c.text_embeddings[parse_modality(key)] = read_vector(value, "text_embeddings." + key);
  return c;
}

nlohmann::ordered_json vector_json(const std::vector<float>& v) {
  auto arr = nlohmann::ordered_json::array();
  for (float x : v) arr.push_back(static_cast<double>(x));
  return arr;
}

// Class means with minimum pairwise distance `separation`.
std::vector<Vec> class_means(std::size_t dim, double separation, Rng& rng) {
  std::vector<Vec> means;
  if (dim >= kNumAbnormalityTypes) {
    // Random orthonormal directions (Gram-Schmidt), scaled so that
    // ||m_a - m_b|| = separation for every pair.
    while (means.size() < kNumAbnormalityTypes) {
      Vec v(dim);
      for (double& x : v) x = rng.normal();
      for (const Vec& u : means) {
        const double p = dot(v, u);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= p * u[i];
      }
      const double n = norm(v);
      if (n < 1e-6) continue;
      for (double& x : v) x /= n;
      means.push_back(std::move(v));
    }
    for (Vec& m : means)
      for (double& x : m) x *= separation / std::sqrt(2.0);
  } else {
    // Too few dimensions for orthogonal means: square of side `separation`.
    constexpr std::array<std::array<double, 2>, 4> corners{
        {{-0.5, -0.5}, {0.5, -0.5}, {-0.5, 0.5}, {0.5, 0.5}}};
    for (const auto& c : corners) {
      Vec m(dim, 0.0);
      m[0] = c[0] * separation;
      m[1] = c[1] * separation;
      means.push_back(std::move(m));
    }
  }
  return means;
}

Vec gaussian(std::size_t dim, double sigma, Rng& rng) {
  Vec v(dim);
  for (double& x : v) x = sigma * rng.normal();
  return v;
}

std::vector<float> to_float(const Vec& v) { return {v.begin(), v.end()}; }

}  // namespace

std::string_view to_code(AbnormalityType t) { return kAbnormalityCodes.at(index_of(t)); }
std::string_view to_code(DementiaLabel d) {
  return kDementiaCodes.at(static_cast<std::size_t>(d));
}
std::string_view to_code(TextModality m) {
  return kModalityCodes.at(static_cast<std::size_t>(m));
}
std::string_view to_code(Task t) { return kTaskCodes.at(static_cast<std::size_t>(t)); }
std::string_view to_code(Split s) { return kSplitCodes.at(static_cast<std::size_t>(s)); }

std::string_view display_name(AbnormalityType t) { return kAbnormalityNames.at(index_of(t)); }

AbnormalityType parse_abnormality(std::string_view code) {
  return parse_code<AbnormalityType>(code, kAbnormalityCodes, "abnormality");
}
DementiaLabel parse_dementia(std::string_view code) {
  return parse_code<DementiaLabel>(code, kDementiaCodes, "dementia");
}
TextModality parse_modality(std::string_view code) {
  return parse_code<TextModality>(code, kModalityCodes, "modality");
}
Task parse_task(std::string_view code) { return parse_code<Task>(code, kTaskCodes, "task"); }
Split parse_split(std::string_view code) {
  return parse_code<Split>(code, kSplitCodes, "split");
}

int dementia_binary(DementiaLabel d) { return d == DementiaLabel::non_demented ? 0 : 1; }
int ad_binary(DementiaLabel d) { return d == DementiaLabel::ad ? 1 : 0; }
int binary_label(DementiaLabel d, Task task) {
  return task == Task::dementia ? dementia_binary(d) : ad_binary(d);
}

int relabel_binary(int severity_code) {
  if (severity_code < 0 || severity_code > 3)
    throw_data("severity code " + std::to_string(severity_code) + " outside 0..3");
  return severity_code == 0 ? 0 : 1;
}

const std::vector<float>& CaseRecord::text(TextModality m) const {
  auto it = text_embeddings.find(m);
  if (it == text_embeddings.end())
    throw_data("case '" + id + "' has no '" + std::string(to_code(m)) + "' text embedding");
  return it->second;
}

void validate_manifest(DatasetManifest& manifest) {
  if (manifest.cases.empty()) throw_data("empty manifest");
  std::set<std::string> ids;
  std::optional<std::size_t> image_dim;
  std::optional<std::size_t> text_dim;
  std::size_t declared = 0;
  for (const CaseRecord& c : manifest.cases) {
    if (!ids.insert(c.id).second) throw_data("duplicate case id '" + c.id + "'");
    if (c.image_embedding.empty()) throw_data("case '" + c.id + "' has an empty image embedding");
    if (!image_dim) image_dim = c.image_embedding.size();
    if (c.image_embedding.size() != *image_dim)
      throw_data("case '" + c.id + "': image embedding dimension " +
                 std::to_string(c.image_embedding.size()) + " != " + std::to_string(*image_dim));
    for (const auto& [m, t] : c.text_embeddings) {
      if (!text_dim) text_dim = t.size();
      if (t.size() != *text_dim || t.empty())
        throw_data("case '" + c.id + "': '" + std::string(to_code(m)) +
                   "' text embedding dimension " + std::to_string(t.size()) +
                   " != " + std::to_string(text_dim.value_or(0)));
    }
    for (float x : c.image_embedding)
      if (!std::isfinite(x)) throw_data("case '" + c.id + "': non-finite image embedding");
    for (const auto& [m, t] : c.text_embeddings)
      for (float x : t)
        if (!std::isfinite(x)) throw_data("case '" + c.id + "': non-finite text embedding");
    if (c.split) ++declared;
  }
  if (declared != 0 && declared != manifest.cases.size())
    throw_data("split declared on " + std::to_string(declared) + " of " +
               std::to_string(manifest.cases.size()) + " cases; declare it on all or none");
  manifest.image_dim = *image_dim;
  manifest.text_dim = text_dim.value_or(0);
}

void require_modality(const DatasetManifest& manifest, TextModality m) {
  for (const CaseRecord& c : manifest.cases)
    if (!c.text_embeddings.contains(m))
      throw_data("case '" + c.id + "' has no '" + std::string(to_code(m)) + "' text embedding");
}

DatasetManifest parse_manifest(std::istream& in, const std::string& source) {
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  bool seen_case = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      auto obj = nlohmann::json::parse(line);
      if (obj.is_object() && obj.contains("_meta")) {
        if (seen_case) throw_data("'_meta' line must precede all cases");
        const auto& meta = obj["_meta"];
        if (meta.contains("provenance")) manifest.provenance = meta["provenance"].get<std::string>();
        continue;
      }
      manifest.cases.push_back(parse_case(obj));
      seen_case = true;
    } catch (const nlohmann::json::exception& e) {
      throw_data(source + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const Error& e) {
      throw_data(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (manifest.cases.empty()) throw_data(source + ": empty manifest");
  try {
    validate_manifest(manifest);
  } catch (const Error& e) {
    throw_data(source + ": " + e.what());
  }
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open manifest '" + path.string() + "'");
  return parse_manifest(in, path.string());
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  if (!manifest.provenance.empty()) {
    nlohmann::ordered_json meta;
    meta["_meta"]["provenance"] = manifest.provenance;
    out << meta.dump() << '\n';
  }
  for (const CaseRecord& c : manifest.cases) {
    nlohmann::ordered_json j;
    j["id"] = c.id;
    if (c.split) j["split"] = std::string(to_code(*c.split));
    j["abnormality"] = std::string(to_code(c.abnormality));
    j["dementia"] = std::string(to_code(c.dementia));
    j["description"] = c.description;
    j["image_embedding"] = vector_json(c.image_embedding);
    auto texts = nlohmann::ordered_json::object();
    for (const auto& [m, t] : c.text_embeddings) texts[std::string(to_code(m))] = vector_json(t);
    j["text_embeddings"] = std::move(texts);
    out << j.dump() << '\n';
  }
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot write manifest '" + path.string() + "'");
  write_manifest(out, manifest);
}

bool has_declared_split(const DatasetManifest& manifest) {
  return !manifest.cases.empty() && manifest.cases.front().split.has_value();
}

DatasetSplit split_dataset(const DatasetManifest& manifest, std::size_t n_train,
                           std::uint64_t seed) {
  DatasetSplit out;
  out.train.image_dim = out.test.image_dim = manifest.image_dim;
  out.train.text_dim = out.test.text_dim = manifest.text_dim;
  out.train.provenance = out.test.provenance = manifest.provenance;

  if (has_declared_split(manifest)) {
    for (const CaseRecord& c : manifest.cases)
      (*c.split == Split::train ? out.train : out.test).cases.push_back(c);
    if (out.train.empty() || out.test.empty())
      throw_data("declared split leaves one side empty");
    return out;
  }

  if (n_train == 0 || n_train >= manifest.size())
    throw_usage("n_train must be in [1, " + std::to_string(manifest.size() - 1) + "], got " +
                std::to_string(n_train));
  std::vector<std::size_t> order(manifest.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<bool> in_train(manifest.size(), false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;
  // Manifest order is kept within each side.
  for (std::size_t i = 0; i < manifest.size(); ++i)
    (in_train[i] ? out.train : out.test).cases.push_back(manifest.cases[i]);
  return out;
}

DementiaMix default_dementia_mix() {
  return {{{0.80, 0.10, 0.10},    // normal
           {0.15, 0.70, 0.15},    // mtl_atrophy
           {0.30, 0.20, 0.50},    // wmh
           {0.30, 0.30, 0.40}}};  // other_atrophy
}

DatasetManifest synth_dataset(const SynthConfig& config, std::uint64_t seed) {
  if (config.n_per_class < 1) throw_usage("n_per_class must be >= 1");
  if (config.image_dim < 2 || config.text_dim < 2) throw_usage("embedding dims must be >= 2");
  if (!(config.noise_sigma >= 0.0)) throw_usage("noise_sigma must be >= 0");
  if (!(config.class_separation >= 0.0)) throw_usage("class_separation must be >= 0");
  if (config.n_test_per_class >= config.n_per_class && config.n_test_per_class != 0)
    throw_usage("n_test_per_class must be < n_per_class");
  for (const auto& row : config.dementia_mix) {
    double total = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw_usage("dementia_mix probabilities must be >= 0");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw_usage("dementia_mix rows must sum to 1");
  }

  Rng rng(seed);
  const double sigma = config.noise_sigma;
  const auto image_means = class_means(config.image_dim, config.class_separation, rng);
  const auto text_means = class_means(config.text_dim, config.class_separation, rng);
  std::array<Vec, 4> modality_offset;
  for (auto& o : modality_offset) o = gaussian(config.text_dim, 0.5 * sigma, rng);
  std::array<Vec, 3> dementia_offset;
  for (auto& o : dementia_offset) o = gaussian(config.text_dim, 0.5 * sigma, rng);

  DatasetManifest m;
  m.provenance = "synthetic seed=" + std::to_string(seed) +
                 " n_per_class=" + std::to_string(config.n_per_class);
  for (AbnormalityType type : kAllAbnormalityTypes) {
    const std::size_t c = index_of(type);
    for (std::size_t i = 0; i < config.n_per_class; ++i) {
      CaseRecord rec;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s_%04zu", std::string(to_code(type)).c_str(), i);
      rec.id = buf;
      rec.abnormality = type;
      if (config.n_test_per_class > 0)
        rec.split = i + config.n_test_per_class >= config.n_per_class ? Split::test : Split::train;

      const double u = rng.uniform();
      const auto& mix = config.dementia_mix[c];
      rec.dementia = u < mix[0]          ? DementiaLabel::non_demented
                     : u < mix[0] + mix[1] ? DementiaLabel::ad
                                           : DementiaLabel::other_dementia;
      rec.description = std::string(display_name(type)) + " pattern, synthetic case " +
                        std::to_string(i) + "; " + std::string(to_code(rec.dementia));

      Vec img = image_means[c];
      for (double& x : img) x += sigma * rng.normal();
      rec.image_embedding = to_float(img);

      const Vec& tm = text_means[c];
      const Vec& dem = dementia_offset[static_cast<std::size_t>(rec.dementia)];
      const Vec case_noise = gaussian(config.text_dim, sigma, rng);
      for (TextModality mod : kAllTextModalities) {
        const Vec& off = modality_offset[static_cast<std::size_t>(mod)];
        Vec t(config.text_dim);
        for (std::size_t d = 0; d < t.size(); ++d) {
          double v = tm[d] + off[d];
          switch (mod) {
            case TextModality::abnormality: break;
            case TextModality::summary: v += dem[d]; break;
            case TextModality::description: v += case_noise[d]; break;
            case TextModality::all: v += 0.5 * (dem[d] + case_noise[d]); break;
          }
          t[d] = v;
        }
        rec.text_embeddings[mod] = to_float(t);
      }
      m.cases.push_back(std::move(rec));
    }
  }
  validate_manifest(m);
  return m;
}

}  // namespace evalign
