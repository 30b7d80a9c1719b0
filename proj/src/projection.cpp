#include "evalign/projection.hpp"

#include <cmath>
#include <string>

#include "evalign/error.hpp"
#include "evalign/rng.hpp"

namespace evalign {

Vec LinearProjection::apply(std::span<const double> x) const {
  if (x.size() != in_dim())
    throw_data("projection input has dimension " + std::to_string(x.size()) + ", expected " +
               std::to_string(in_dim()));
  Vec out(bias);
  for (std::size_t i = 0; i < out_dim(); ++i) out[i] += dot(weight.row(i), x);
  return out;
}

void validate(const ProjectionPair& pair) {
  for (const LinearProjection* p : {&pair.vision, &pair.text}) {
    if (p->out_dim() == 0 || p->in_dim() == 0) throw_data("projection with zero dimension");
    if (p->bias.size() != p->out_dim()) throw_data("projection bias size mismatch");
    if (p->weight.data.size() != p->out_dim() * p->in_dim())
      throw_data("projection weight size mismatch");
    if (!all_finite(p->weight.data) || !all_finite(p->bias))
      throw_data("projection has non-finite parameters");
  }
  if (pair.vision.out_dim() != pair.text.out_dim())
    throw_data("vision and text heads project to different dimensions");
}

Vec project_image(const ProjectionPair& pair, std::span<const double> v) {
  return pair.vision.apply(v);
}

Vec project_text(const ProjectionPair& pair, std::span<const double> t) {
  return pair.text.apply(t);
}

Vec l2_normalize(std::span<const double> x) {
  const double n = norm(x);
  if (!(n > kDegenerateNorm)) throw_numeric("degenerate embedding (norm " + std::to_string(n) + ")");
  Vec out(x.begin(), x.end());
  for (double& v : out) v /= n;
  return out;
}

LinearProjection init_projection(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  if (in_dim < 1 || out_dim < 1) throw_usage("projection dimensions must be >= 1");
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  Rng rng(seed);
  LinearProjection p{Matrix(out_dim, in_dim), Vec(out_dim, 0.0)};
  for (double& w : p.weight.data) w = rng.uniform(-bound, bound);
  return p;
}

ProjectionPair init_projection_pair(std::size_t image_dim, std::size_t text_dim,
                                    std::size_t proj_dim, std::uint64_t seed) {
  return {init_projection(image_dim, proj_dim, seed),
          init_projection(text_dim, proj_dim, seed + 1)};
}

AnchorTexts class_anchor_texts(const DatasetManifest& manifest, TextModality modality) {
  AnchorTexts sums;
  std::array<std::size_t, kNumAbnormalityTypes> counts{};
  for (const CaseRecord& c : manifest.cases) {
    const auto& t = c.text(modality);
    Vec& s = sums[index_of(c.abnormality)];
    if (s.empty()) s.assign(t.size(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) s[i] += t[i];
    ++counts[index_of(c.abnormality)];
  }
  for (std::size_t k = 0; k < kNumAbnormalityTypes; ++k)
    for (double& x : sums[k]) x /= static_cast<double>(counts[k]);
  return sums;
}

AnchorMap project_anchors(const ProjectionPair& pair, const AnchorTexts& anchors) {
  AnchorMap out;
  for (AbnormalityType t : kAllAbnormalityTypes) {
    const Vec& raw = anchors[index_of(t)];
    if (!raw.empty()) out[t] = l2_normalize(project_text(pair, raw));
  }
  return out;
}

}  // namespace evalign
