#include "evalign/trainer.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "evalign/error.hpp"
#include "evalign/rng.hpp"

namespace evalign {

namespace {

constexpr double kUnitTolerance = 1e-4;

void require_unit(std::span<const Vec> vs, const char* what) {
  for (const Vec& v : vs)
    if (std::abs(norm(v) - 1.0) > kUnitTolerance)
      throw_numeric(std::string(what) + " vector is not unit-norm");
}

const Vec& anchor_for(const AnchorTexts& anchors, AbnormalityType t) {
  const Vec& a = anchors[index_of(t)];
  if (a.empty()) throw_data("no anchor text for type '" + std::string(to_code(t)) + "'");
  return a;
}

// Backward through u = a / ||a||: returns dL/da given dL/du.
Vec normalize_backward(const Vec& unit, double input_norm, const Vec& grad_unit) {
  const double proj = dot(unit, grad_unit);
  Vec out(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i)
    out[i] = (grad_unit[i] - proj * unit[i]) / input_norm;
  return out;
}

void accumulate_affine(LinearProjection& grad, const Vec& grad_out, const Vec& input) {
  for (std::size_t r = 0; r < grad_out.size(); ++r) {
    grad.bias[r] += grad_out[r];
    auto row = grad.weight.row(r);
    for (std::size_t c = 0; c < input.size(); ++c) row[c] += grad_out[r] * input[c];
  }
}

LinearProjection zeros_like(const LinearProjection& p) {
  return {Matrix(p.out_dim(), p.in_dim()), Vec(p.out_dim(), 0.0)};
}

struct Projected {
  Vec raw;
  Vec unit;
  double norm = 0.0;
};

Projected project_normalized(const LinearProjection& head, const Vec& x) {
  Projected p;
  p.raw = head.apply(x);
  p.norm = norm(p.raw);
  p.unit = l2_normalize(p.raw);
  return p;
}

bool uses_fixed_anchor(const TrainConfig& config) {
  return config.modality == TextModality::abnormality;
}

}  // namespace

void validate(const TrainConfig& config) {
  if (!(config.tau > 0.0)) throw_usage("tau must be > 0");
  if (!(config.lr > 0.0)) throw_usage("lr must be > 0");
  if (!(config.lambda_reg >= 0.0)) throw_usage("lambda_reg must be >= 0");
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) throw_usage("momentum must be in [0, 1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"tau", c.tau},       {"lambda_reg", c.lambda_reg}, {"lr", c.lr},
          {"momentum", c.momentum}, {"epochs", c.epochs},   {"batch_size", c.batch_size},
          {"seed", c.seed},     {"modality", std::string(to_code(c.modality))}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.tau = j.at("tau").get<double>();
  c.lambda_reg = j.at("lambda_reg").get<double>();
  c.lr = j.at("lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.modality = parse_modality(j.at("modality").get<std::string>());
  return c;
}

nlohmann::json to_json(const TrainReport& r) {
  return {{"epoch_loss", r.epoch_loss},
          {"intra_class_cosine", r.intra_class_cosine},
          {"inter_class_cosine", r.inter_class_cosine},
          {"wall_seconds", r.wall_seconds}};
}

TrainingSet make_training_set(const DatasetManifest& manifest, TextModality modality) {
  require_modality(manifest, modality);
  TrainingSet set;
  set.anchors = class_anchor_texts(manifest, modality);
  set.examples.reserve(manifest.size());
  for (const CaseRecord& c : manifest.cases)
    set.examples.push_back({to_vec<float>(c.image_embedding),
                            to_vec<float>(c.text(modality)), c.abnormality});
  return set;
}

Matrix similarity_matrix(std::span<const Vec> imgs, std::span<const Vec> txts) {
  if (imgs.size() != txts.size()) throw_data("similarity_matrix: length mismatch");
  require_unit(imgs, "image");
  require_unit(txts, "text");
  Matrix s(imgs.size(), txts.size());
  for (std::size_t i = 0; i < imgs.size(); ++i)
    for (std::size_t j = 0; j < txts.size(); ++j) s(i, j) = dot(imgs[i], txts[j]);
  return s;
}

double info_nce_loss(const Matrix& similarities, double tau) {
  const std::size_t n = similarities.rows;
  if (n == 0) throw_data("info_nce_loss: empty batch");
  if (similarities.cols != n) throw_data("info_nce_loss: similarity matrix is not square");
  if (!(tau > 0.0)) throw_usage("tau must be > 0");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) row_max = std::max(row_max, similarities(i, j) / tau);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(similarities(i, j) / tau - row_max);
    const double term = std::log(sum) - (similarities(i, i) / tau - row_max);
    total += std::max(term, 0.0);
  }
  return total / static_cast<double>(n);
}

double category_regularizer(std::span<const Vec> imgs, std::span<const Vec> anchors) {
  if (imgs.size() != anchors.size()) throw_data("category_regularizer: length mismatch");
  if (imgs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < imgs.size(); ++i) total += 1.0 - dot(imgs[i], anchors[i]);
  return total / static_cast<double>(imgs.size());
}

double total_loss(std::span<const TrainExample> batch, const AnchorTexts& anchors,
                  const ProjectionPair& pair, const TrainConfig& config) {
  if (batch.empty()) throw_data("empty batch");
  std::vector<Vec> imgs, txts, pulls;
  for (const TrainExample& ex : batch) {
    imgs.push_back(l2_normalize(project_image(pair, ex.image)));
    const Vec anchor = l2_normalize(project_text(pair, anchor_for(anchors, ex.type)));
    txts.push_back(uses_fixed_anchor(config) ? anchor : l2_normalize(project_text(pair, ex.text)));
    pulls.push_back(anchor);
  }
  return info_nce_loss(similarity_matrix(imgs, txts), config.tau) +
         config.lambda_reg * category_regularizer(imgs, pulls);
}

LossGradient loss_gradient(std::span<const TrainExample> batch, const AnchorTexts& anchors,
                           const ProjectionPair& pair, const TrainConfig& config) {
  const std::size_t n = batch.size();
  if (n == 0) throw_data("empty batch");
  const bool fixed = uses_fixed_anchor(config);
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t p = pair.dim();

  // Forward.
  std::vector<Projected> img(n);
  for (std::size_t i = 0; i < n; ++i) img[i] = project_normalized(pair.vision, batch[i].image);

  std::array<std::optional<Projected>, kNumAbnormalityTypes> anchor_proj;
  for (const TrainExample& ex : batch) {
    auto& slot = anchor_proj[index_of(ex.type)];
    if (!slot) slot = project_normalized(pair.text, anchor_for(anchors, ex.type));
  }

  std::vector<Projected> case_txt;
  if (!fixed) {
    case_txt.resize(n);
    for (std::size_t j = 0; j < n; ++j) case_txt[j] = project_normalized(pair.text, batch[j].text);
  }
  auto positive = [&](std::size_t j) -> const Vec& {
    return fixed ? anchor_proj[index_of(batch[j].type)]->unit : case_txt[j].unit;
  };

  // Softmax rows of S / tau; G = dL/dS = (softmax - I) / (N tau).
  Matrix grad_s(n, n);
  double contrastive = 0.0;
  double reg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Vec logits(n);
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      logits[j] = dot(img[i].unit, positive(j)) / config.tau;
      row_max = std::max(row_max, logits[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(logits[j] - row_max);
    contrastive += std::max(std::log(sum) + row_max - logits[i], 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double prob = std::exp(logits[j] - row_max) / sum;
      grad_s(i, j) = (prob - (i == j ? 1.0 : 0.0)) * inv_n / config.tau;
    }
    reg += 1.0 - dot(img[i].unit, anchor_proj[index_of(batch[i].type)]->unit);
  }

  LossGradient out;
  out.loss = contrastive * inv_n + config.lambda_reg * reg * inv_n;
  out.grad = {zeros_like(pair.vision), zeros_like(pair.text)};

  // Backward to unit vectors.
  std::vector<Vec> grad_img(n, Vec(p, 0.0));
  std::vector<Vec> grad_pos(n, Vec(p, 0.0));
  std::array<Vec, kNumAbnormalityTypes> grad_anchor;
  for (auto& g : grad_anchor) g.assign(p, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double g = grad_s(i, j);
      const Vec& pos = positive(j);
      for (std::size_t d = 0; d < p; ++d) {
        grad_img[i][d] += g * pos[d];
        grad_pos[j][d] += g * img[i].unit[d];
      }
    }
    const Vec& anchor = anchor_proj[index_of(batch[i].type)]->unit;
    Vec& ga = grad_anchor[index_of(batch[i].type)];
    const double w = config.lambda_reg * inv_n;
    for (std::size_t d = 0; d < p; ++d) {
      grad_img[i][d] -= w * anchor[d];
      ga[d] -= w * img[i].unit[d];
    }
  }

  // Backward through normalization and the heads.
  for (std::size_t i = 0; i < n; ++i)
    accumulate_affine(out.grad.vision, normalize_backward(img[i].unit, img[i].norm, grad_img[i]),
                      batch[i].image);
  for (std::size_t j = 0; j < n; ++j) {
    if (fixed) {
      Vec& ga = grad_anchor[index_of(batch[j].type)];
      for (std::size_t d = 0; d < p; ++d) ga[d] += grad_pos[j][d];
    } else {
      accumulate_affine(out.grad.text,
                        normalize_backward(case_txt[j].unit, case_txt[j].norm, grad_pos[j]),
                        batch[j].text);
    }
  }
  for (AbnormalityType t : kAllAbnormalityTypes) {
    const auto& a = anchor_proj[index_of(t)];
    if (!a) continue;
    accumulate_affine(out.grad.text, normalize_backward(a->unit, a->norm, grad_anchor[index_of(t)]),
                      anchors[index_of(t)]);
  }
  return out;
}

ClusterCosines cluster_cosines(std::span<const Vec> unit_vectors,
                               std::span<const AbnormalityType> types) {
  if (unit_vectors.size() != types.size()) throw_data("cluster_cosines: length mismatch");
  ClusterCosines out;
  double intra = 0.0, inter = 0.0;
  for (std::size_t i = 0; i < unit_vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < unit_vectors.size(); ++j) {
      const double c = dot(unit_vectors[i], unit_vectors[j]);
      if (types[i] == types[j]) {
        intra += c;
        ++out.intra_pairs;
      } else {
        inter += c;
        ++out.inter_pairs;
      }
    }
  }
  if (out.intra_pairs) out.intra = intra / static_cast<double>(out.intra_pairs);
  if (out.inter_pairs) out.inter = inter / static_cast<double>(out.inter_pairs);
  return out;
}

TrainResult train(const DatasetManifest& dataset, ProjectionPair pair, const TrainConfig& config) {
  validate(config);
  validate(pair);
  if (dataset.empty()) throw_data("cannot train on an empty dataset");
  const auto start = std::chrono::steady_clock::now();
  TrainingSet set = make_training_set(dataset, config.modality);
  const std::size_t n = set.examples.size();
  const std::size_t batch_size =
      (config.batch_size == 0 || config.batch_size >= n) ? n : config.batch_size;

  ProjectionPair velocity{zeros_like(pair.vision), zeros_like(pair.text)};
  auto step = [&](LinearProjection& param, LinearProjection& vel, const LinearProjection& grad) {
    for (std::size_t i = 0; i < param.weight.data.size(); ++i) {
      vel.weight.data[i] = config.momentum * vel.weight.data[i] + grad.weight.data[i];
      param.weight.data[i] -= config.lr * vel.weight.data[i];
    }
    for (std::size_t i = 0; i < param.bias.size(); ++i) {
      vel.bias[i] = config.momentum * vel.bias[i] + grad.bias[i];
      param.bias[i] -= config.lr * vel.bias[i];
    }
  };

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<TrainExample> batch;

  TrainReport report;
  report.epoch_loss.reserve(config.epochs);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (batch_size < n) rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
      const std::size_t end = std::min(n, begin + batch_size);
      batch.clear();
      for (std::size_t k = begin; k < end; ++k) batch.push_back(set.examples[order[k]]);
      const LossGradient lg = loss_gradient(batch, set.anchors, pair, config);
      step(pair.vision, velocity.vision, lg.grad.vision);
      step(pair.text, velocity.text, lg.grad.text);
      epoch_loss += lg.loss;
      ++batches;
    }
    const double mean_loss = epoch_loss / static_cast<double>(batches);
    if (!std::isfinite(mean_loss)) throw_numeric("training diverged at epoch " + std::to_string(epoch));
    report.epoch_loss.push_back(mean_loss);
  }

  std::vector<Vec> units;
  std::vector<AbnormalityType> types;
  for (const TrainExample& ex : set.examples) {
    units.push_back(l2_normalize(project_image(pair, ex.image)));
    types.push_back(ex.type);
  }
  const ClusterCosines cc = cluster_cosines(units, types);
  report.intra_class_cosine = cc.intra;
  report.inter_class_cosine = cc.inter;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(pair), std::move(report)};
}

}  // namespace evalign
