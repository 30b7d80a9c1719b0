#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace evalign {

// Canonical order is also the tie-break order for classification.
enum class AbnormalityType : std::uint8_t { normal = 0, mtl_atrophy, wmh, other_atrophy };

inline constexpr std::size_t kNumAbnormalityTypes = 4;
inline constexpr std::array<AbnormalityType, kNumAbnormalityTypes> kAllAbnormalityTypes{
    AbnormalityType::normal, AbnormalityType::mtl_atrophy, AbnormalityType::wmh,
    AbnormalityType::other_atrophy};

enum class DementiaLabel : std::uint8_t { non_demented = 0, ad, other_dementia };

enum class TextModality : std::uint8_t { description = 0, abnormality, summary, all };

inline constexpr std::array<TextModality, 4> kAllTextModalities{
    TextModality::description, TextModality::abnormality, TextModality::summary,
    TextModality::all};

/// Binary prediction target. Dementia: any dementia is positive. AD: only
/// Alzheimer's disease is positive.
enum class Task : std::uint8_t { dementia = 0, ad };

enum class Split : std::uint8_t { train = 0, test };

std::string_view to_code(AbnormalityType t);
std::string_view to_code(DementiaLabel d);
std::string_view to_code(TextModality m);
std::string_view to_code(Task t);
std::string_view to_code(Split s);

/// Human-readable phrase for a type ("Medial Temporal Lobe Atrophy").
std::string_view display_name(AbnormalityType t);

// Parsers throw evalign::Error(data) naming the valid codes.
AbnormalityType parse_abnormality(std::string_view code);
DementiaLabel parse_dementia(std::string_view code);
TextModality parse_modality(std::string_view code);
Task parse_task(std::string_view code);
Split parse_split(std::string_view code);

inline std::size_t index_of(AbnormalityType t) { return static_cast<std::size_t>(t); }

int dementia_binary(DementiaLabel d);
int ad_binary(DementiaLabel d);
int binary_label(DementiaLabel d, Task task);

/// Collapses a 0..3 severity code to non-demented (0) / demented (1).
int relabel_binary(int severity_code);

struct CaseRecord {
  std::string id;
  std::optional<Split> split;
  AbnormalityType abnormality = AbnormalityType::normal;
  DementiaLabel dementia = DementiaLabel::non_demented;
  std::string description;
  std::vector<float> image_embedding;
  std::map<TextModality, std::vector<float>> text_embeddings;

  const std::vector<float>& text(TextModality m) const;

  bool operator==(const CaseRecord&) const = default;
};

struct DatasetManifest {
  std::vector<CaseRecord> cases;
  std::size_t image_dim = 0;
  std::size_t text_dim = 0;
  std::string provenance;

  std::size_t size() const { return cases.size(); }
  bool empty() const { return cases.empty(); }
  bool operator==(const DatasetManifest&) const = default;
};

/// Checks every CaseRecord invariant and fills in image_dim/text_dim.
void validate_manifest(DatasetManifest& manifest);

/// Throws Error(data) when any case lacks the modality.
void require_modality(const DatasetManifest& manifest, TextModality m);

// JSON Lines. An optional first line {"_meta": {"provenance": "..."}} carries
// provenance; every other line is one case.
DatasetManifest parse_manifest(std::istream& in, const std::string& source = "<stream>");
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct DatasetSplit {
  DatasetManifest train;
  DatasetManifest test;
};

/// Seeded partition into n_train / rest. Declared `split` fields, when
/// present on every case, are used verbatim and n_train is ignored.
DatasetSplit split_dataset(const DatasetManifest& manifest, std::size_t n_train,
                           std::uint64_t seed);

bool has_declared_split(const DatasetManifest& manifest);

// Per class: probabilities of (non_demented, ad, other_dementia).
using DementiaMix = std::array<std::array<double, 3>, kNumAbnormalityTypes>;

DementiaMix default_dementia_mix();

struct SynthConfig {
  std::size_t n_per_class = 30;
  std::size_t image_dim = 32;
  std::size_t text_dim = 32;
  // Minimum pairwise distance between class means, in embedding units.
  double class_separation = 6.0;
  double noise_sigma = 1.0;
  // When > 0, the last n_test_per_class cases of every class are declared
  // split=test and the rest split=train.
  std::size_t n_test_per_class = 0;
  DementiaMix dementia_mix = default_dementia_mix();
};

/// Gaussian clusters per abnormality type; deterministic under seed.
DatasetManifest synth_dataset(const SynthConfig& config, std::uint64_t seed);

}  // namespace evalign
