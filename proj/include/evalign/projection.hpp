#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>

#include "evalign/core.hpp"
#include "evalign/linalg.hpp"

namespace evalign {

/// Affine map x -> W x + b, W stored row-major (out_dim x in_dim).
struct LinearProjection {
  Matrix weight;
  Vec bias;

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }

  Vec apply(std::span<const double> x) const;

  bool operator==(const LinearProjection&) const = default;
};

/// Vision head (D -> P) and text head (M -> P).
struct ProjectionPair {
  LinearProjection vision;
  LinearProjection text;

  std::size_t image_dim() const { return vision.in_dim(); }
  std::size_t text_dim() const { return text.in_dim(); }
  std::size_t dim() const { return vision.out_dim(); }

  bool operator==(const ProjectionPair&) const = default;
};

/// Throws Error(data) on mismatched output dims or non-finite parameters.
void validate(const ProjectionPair& pair);

Vec project_image(const ProjectionPair& pair, std::span<const double> v);
Vec project_text(const ProjectionPair& pair, std::span<const double> t);

inline constexpr double kDegenerateNorm = 1e-12;

/// Unit vector in the direction of x; throws Error(numeric) "degenerate
/// embedding" when ||x|| <= 1e-12.
Vec l2_normalize(std::span<const double> x);

/// Glorot-uniform weights in (-s, s), s = sqrt(6 / (in_dim + out_dim)); zero bias.
LinearProjection init_projection(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

/// Vision head seeded with `seed`, text head with `seed + 1`.
ProjectionPair init_projection_pair(std::size_t image_dim, std::size_t text_dim,
                                    std::size_t proj_dim, std::uint64_t seed);

// Raw (encoder-space) class anchor texts in canonical type order. An empty
// vector means the class had no cases to derive an anchor from.
using AnchorTexts = std::array<Vec, kNumAbnormalityTypes>;

// Projected, unit-normalized anchors keyed by type.
using AnchorMap = std::map<AbnormalityType, Vec>;

/// Per-class mean of the raw text embeddings under `modality`. Under the
/// `abnormality` modality every case of a class carries the same fixed phrase
/// embedding, so the mean is that embedding.
AnchorTexts class_anchor_texts(const DatasetManifest& manifest, TextModality modality);

AnchorMap project_anchors(const ProjectionPair& pair, const AnchorTexts& anchors);

}  // namespace evalign
