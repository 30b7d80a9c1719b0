#include "evalign/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "evalign/error.hpp"
#include "evalign/pca.hpp"

namespace evalign {

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot write '" + path.string() + "'");
  out << content;
}

std::vector<std::string> abnormality_labels() {
  std::vector<std::string> out;
  for (AbnormalityType t : kAllAbnormalityTypes) out.emplace_back(to_code(t));
  return out;
}

std::vector<std::string> task_labels(Task task) {
  if (task == Task::ad) return {"Non-AD", "AD"};
  return {"Non-dementia", "Dementia"};
}

}  // namespace

Predictor parse_predictor(std::string_view code) {
  if (code == "head") return Predictor::head;
  if (code == "conditional") return Predictor::conditional;
  throw_usage("unknown predictor '" + std::string(code) + "' (valid: head, conditional)");
}

Checkpoint fit_pipeline(const DatasetManifest& train, const PipelineConfig& config,
                        TrainReport* report) {
  if (config.k < 1) throw_usage("k must be >= 1");
  ProjectionPair init = init_projection_pair(train.image_dim, train.text_dim, config.proj_dim,
                                             config.train.seed);
  TrainResult trained = evalign::train(train, std::move(init), config.train);
  if (report) *report = trained.report;

  Checkpoint ckpt;
  ckpt.pair = std::move(trained.pair);
  ckpt.train_config = config.train;
  ckpt.anchors = class_anchor_texts(train, config.train.modality);
  for (AbnormalityType t : kAllAbnormalityTypes)
    if (ckpt.anchors[index_of(t)].empty())
      throw_data("training set has no '" + std::string(to_code(t)) + "' cases to anchor");

  for (Task task : {Task::dementia, Task::ad}) {
    std::vector<std::pair<AbnormalityType, int>> pairs;
    for (const CaseRecord& c : train.cases) pairs.emplace_back(c.abnormality, binary_label(c.dementia, task));
    (task == Task::ad ? ckpt.ad_table : ckpt.dementia_table) =
        fit_conditional(pairs, config.alpha, task);
  }

  // Leave-one-out evidence: a training case must not retrieve itself.
  if (train.size() >= 2) {
    const InferenceEngine engine(ckpt, train);
    std::vector<EvidenceBundle> bundles;
    for (const CaseRecord& c : train.cases)
      bundles.push_back(engine.evidence(c, engine.retrieve(c, config.k, c.id)));
    for (Task task : {Task::dementia, Task::ad}) {
      std::vector<int> labels;
      for (const CaseRecord& c : train.cases) labels.push_back(binary_label(c.dementia, task));
      const auto pos = std::count(labels.begin(), labels.end(), 1);
      if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) continue;
      HeadTrainConfig hc = config.head;
      hc.seed = config.head.seed + static_cast<std::uint64_t>(task);
      (task == Task::ad ? ckpt.ad_head : ckpt.dementia_head) = train_head(bundles, labels, task, hc);
    }
  }
  return ckpt;
}

InferenceEngine::InferenceEngine(Checkpoint checkpoint, const DatasetManifest& references)
    : checkpoint_(std::move(checkpoint)),
      anchors_(project_anchors(checkpoint_.pair, checkpoint_.anchors)),
      index_(ReferenceIndex::build(references, checkpoint_.pair)) {
  if (references.image_dim != checkpoint_.pair.image_dim())
    throw_data("reference image dimension does not match checkpoint");
}

Vec InferenceEngine::embed(const CaseRecord& query) const {
  return l2_normalize(project_image(checkpoint_.pair, to_vec<float>(query.image_embedding)));
}

RetrievalResult InferenceEngine::retrieve(const CaseRecord& query, std::size_t k,
                                          const std::string& exclude_id) const {
  const Vec q = embed(query);
  const Classification cls = classify_abnormality(q, anchors_);
  RetrievalResult r;
  r.query_id = query.id;
  r.gold = query.abnormality;
  r.predicted = cls.predicted;
  r.class_scores = cls.scores;
  r.top_k = retrieve_top_k(q, index_, exclude_id.empty() ? k : k + 1);
  if (!exclude_id.empty()) {
    std::erase_if(r.top_k, [&](const Match& m) { return m.id == exclude_id; });
    if (r.top_k.size() > k) r.top_k.resize(k);
  }
  if (r.top_k.empty()) throw_data("no references left for query '" + query.id + "'");
  return r;
}

EvidenceBundle InferenceEngine::evidence(const CaseRecord& query, const RetrievalResult& result) const {
  std::vector<Vec> refs;
  std::vector<double> scores;
  for (const Match& m : result.top_k) {
    refs.push_back(index_[m.index].embedding);
    scores.push_back(m.similarity);
  }
  return build_evidence(embed(query), result.predicted, anchors_, refs, scores);
}

double InferenceEngine::predict(const CaseRecord& query, const RetrievalResult& result, Task task,
                                Predictor predictor) const {
  if (predictor == Predictor::conditional)
    return predict_conditional(checkpoint_.table(task), result.predicted);
  return evalign::predict(checkpoint_.head(task), evidence(query, result));
}

EvaluationReport evaluate(const InferenceEngine& engine, const DatasetManifest& test,
                          std::size_t k, Predictor predictor, std::size_t max_curve_k) {
  if (test.empty()) throw_data("evaluate: empty test set");
  if (k < 1) throw_usage("k must be >= 1");
  std::vector<const CaseRecord*> order;
  for (const CaseRecord& c : test.cases) order.push_back(&c);
  std::sort(order.begin(), order.end(),
            [](const CaseRecord* a, const CaseRecord* b) { return a->id < b->id; });

  const std::size_t curve_k = std::min(std::max(max_curve_k, k), engine.index().size());
  EvaluationReport rep;
  std::vector<RetrievalResult> long_results, results;
  std::vector<int> gold_abn, pred_abn;
  Matrix abn_scores(order.size(), kNumAbnormalityTypes);
  std::array<std::vector<int>, 2> gold_bin, pred_bin;
  std::array<std::vector<double>, 2> prob_bin;

  for (std::size_t i = 0; i < order.size(); ++i) {
    const CaseRecord& c = *order[i];
    RetrievalResult full = engine.retrieve(c, curve_k);
    RetrievalResult r = full;
    if (r.top_k.size() > k) r.top_k.resize(k);

    CaseOutcome outcome{r, 0.0, 0.0};
    for (Task task : {Task::dementia, Task::ad}) {
      const double p = engine.predict(c, r, task, predictor);
      const auto t = static_cast<std::size_t>(task);
      (task == Task::ad ? outcome.ad_probability : outcome.dementia_probability) = p;
      gold_bin[t].push_back(binary_label(c.dementia, task));
      pred_bin[t].push_back(p >= kDecisionThreshold ? 1 : 0);
      prob_bin[t].push_back(p);
    }
    gold_abn.push_back(static_cast<int>(index_of(c.abnormality)));
    pred_abn.push_back(static_cast<int>(index_of(r.predicted)));
    for (std::size_t a = 0; a < kNumAbnormalityTypes; ++a) abn_scores(i, a) = r.class_scores[a];
    long_results.push_back(std::move(full));
    results.push_back(r);
    rep.cases.push_back(std::move(outcome));
  }

  const auto labels = abnormality_labels();
  rep.abnormality = macro_metrics(gold_abn, pred_abn, abn_scores, labels);
  rep.dementia = binary_report(gold_bin[0], pred_bin[0], prob_bin[0]);
  rep.ad = binary_report(gold_bin[1], pred_bin[1], prob_bin[1]);
  for (std::size_t kk = 1; kk <= curve_k; ++kk) {
    rep.accuracy_at_k.push_back(accuracy_at_k(long_results, kk));
    rep.precision_at_k.push_back(precision_at_k(long_results, kk));
  }
  rep.similarity = similarity_split(results);

  rep.errors.stages.push_back({"abnormality_retrieval", stage_error_rates(gold_abn, pred_abn, labels)});
  rep.errors.retrieval_top1_incorrect_percent = top1_incorrect_rate(results);
  const auto dl = task_labels(Task::dementia), al = task_labels(Task::ad);
  rep.errors.stages.push_back({"dementia_prediction", stage_error_rates(gold_bin[0], pred_bin[0], dl)});
  rep.errors.stages.push_back({"ad_prediction", stage_error_rates(gold_bin[1], pred_bin[1], al)});
  return rep;
}

void write_evaluation(const EvaluationReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const MetricsReport*> panels[] = {
      {"abnormality", &report.abnormality}, {"dementia", &report.dementia}, {"ad", &report.ad}};
  for (const auto& [name, r] : panels) {
    write_file(dir / (std::string(name) + "_report.json"), to_json(*r).dump(2) + "\n");
    write_file(dir / (std::string(name) + "_report.csv"), to_csv(*r, name));
  }
  nlohmann::json retrieval = {{"accuracy_at_k", report.accuracy_at_k},
                              {"precision_at_k", report.precision_at_k},
                              {"similarity", to_json(report.similarity)}};
  write_file(dir / "retrieval_analysis.json", retrieval.dump(2) + "\n");
  write_file(dir / "error_analysis.json", to_json(report.errors).dump(2) + "\n");
  std::string lines;
  for (const CaseOutcome& c : report.cases) {
    nlohmann::json j = to_json(c.retrieval);
    j["dementia_probability"] = c.dementia_probability;
    j["ad_probability"] = c.ad_probability;
    lines += j.dump() + "\n";
  }
  write_file(dir / "predictions.jsonl", lines);
}

std::vector<EmbeddingPoint> export_embedding_space(const Checkpoint& checkpoint,
                                                   const DatasetManifest& manifest,
                                                   std::uint64_t seed) {
  std::vector<Vec> points;
  std::vector<EmbeddingPoint> rows;
  for (const CaseRecord& c : manifest.cases) {
    points.push_back(l2_normalize(project_image(checkpoint.pair, to_vec<float>(c.image_embedding))));
    rows.push_back({c.id, c.abnormality, 0.0, 0.0, false});
  }
  for (const auto& [type, anchor] : project_anchors(checkpoint.pair, checkpoint.anchors)) {
    points.push_back(anchor);
    rows.push_back({"anchor:" + std::string(to_code(type)), type, 0.0, 0.0, true});
  }
  PcaOptions opt;
  opt.seed = seed;
  const Pca2d pca = pca_2d(points, opt);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].x = pca.coordinates(i, 0);
    rows[i].y = pca.coordinates(i, 1);
  }
  return rows;
}

std::string embedding_csv(const std::vector<EmbeddingPoint>& points) {
  std::ostringstream out;
  out.precision(17);
  out << "id,type,x,y,is_anchor\n";
  for (const EmbeddingPoint& p : points)
    out << p.id << ',' << to_code(p.type) << ',' << p.x << ',' << p.y << ','
        << (p.is_anchor ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace evalign
