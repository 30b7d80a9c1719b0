#include "evalign/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "evalign/error.hpp"

namespace evalign {

namespace {

nlohmann::json head_json(const LinearProjection& p) {
  return {{"W", p.weight.data}, {"b", p.bias}};
}

LinearProjection head_from(const nlohmann::json& j, std::size_t out_dim, std::size_t in_dim) {
  LinearProjection p{Matrix(out_dim, in_dim), j.at("b").get<Vec>()};
  p.weight.data = j.at("W").get<Vec>();
  if (p.weight.data.size() != out_dim * in_dim || p.bias.size() != out_dim)
    throw_data("checkpoint head has wrong shape");
  return p;
}

}  // namespace

const DiagnosisHead& Checkpoint::head(Task task) const {
  const auto& h = task == Task::ad ? ad_head : dementia_head;
  if (!h) throw_data("checkpoint has no '" + std::string(to_code(task)) + "' diagnosis head");
  return *h;
}

const ConditionalTable& Checkpoint::table(Task task) const {
  const auto& t = task == Task::ad ? ad_table : dementia_table;
  if (!t) throw_data("checkpoint has no '" + std::string(to_code(task)) + "' conditional table");
  return *t;
}

nlohmann::json to_json(const Checkpoint& c) {
  nlohmann::json anchors = nlohmann::json::object();
  for (AbnormalityType t : kAllAbnormalityTypes)
    if (!c.anchors[index_of(t)].empty()) anchors[std::string(to_code(t))] = c.anchors[index_of(t)];
  nlohmann::json diagnosis = nlohmann::json::object();
  if (c.dementia_head) diagnosis["dementia"] = to_json(*c.dementia_head);
  if (c.ad_head) diagnosis["ad"] = to_json(*c.ad_head);
  nlohmann::json conditional = nlohmann::json::object();
  if (c.dementia_table) conditional["dementia"] = to_json(*c.dementia_table);
  if (c.ad_table) conditional["ad"] = to_json(*c.ad_table);
  return {{"format_version", kCheckpointFormatVersion},
          {"D", c.pair.image_dim()},
          {"M", c.pair.text_dim()},
          {"P", c.pair.dim()},
          {"tau", c.train_config.tau},
          {"vision", head_json(c.pair.vision)},
          {"text", head_json(c.pair.text)},
          {"train_config", to_json(c.train_config)},
          {"anchors", anchors},
          {"diagnosis", diagnosis},
          {"conditional", conditional}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw_data("unsupported checkpoint format_version " + std::to_string(version));
    const auto d = j.at("D").get<std::size_t>();
    const auto m = j.at("M").get<std::size_t>();
    const auto p = j.at("P").get<std::size_t>();
    Checkpoint c;
    c.pair = {head_from(j.at("vision"), p, d), head_from(j.at("text"), p, m)};
    validate(c.pair);
    c.train_config = train_config_from_json(j.at("train_config"));
    c.train_config.tau = j.at("tau").get<double>();
    for (const auto& [code, values] : j.at("anchors").items()) {
      Vec a = values.get<Vec>();
      if (a.size() != m) throw_data("checkpoint anchor '" + code + "' has wrong dimension");
      c.anchors[index_of(parse_abnormality(code))] = std::move(a);
    }
    const auto& diagnosis = j.at("diagnosis");
    if (diagnosis.contains("dementia")) c.dementia_head = head_from_json(diagnosis["dementia"]);
    if (diagnosis.contains("ad")) c.ad_head = head_from_json(diagnosis["ad"]);
    for (const auto* h : {&c.dementia_head, &c.ad_head})
      if (*h && (*h)->weights.size() != 3 * p) throw_data("diagnosis head has wrong dimension");
    const auto& conditional = j.at("conditional");
    if (conditional.contains("dementia"))
      c.dementia_table = conditional_from_json(conditional["dementia"], Task::dementia);
    if (conditional.contains("ad")) c.ad_table = conditional_from_json(conditional["ad"], Task::ad);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw_data(std::string("malformed checkpoint: ") + e.what());
  }
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  return to_json(checkpoint).dump(2) + "\n";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot write checkpoint '" + path.string() + "'");
  out << serialize_checkpoint(checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw_data("checkpoint '" + path.string() + "': " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace evalign
