// One PASS/FAIL line per acceptance criterion. Exits nonzero on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "evalign/checkpoint.hpp"
#include "evalign/error.hpp"
#include "evalign/cli.hpp"
#include "evalign/explanation.hpp"
#include "evalign/format.hpp"
#include "evalign/metrics.hpp"
#include "evalign/pipeline.hpp"
#include "evalign/retrieval.hpp"
#include "evalign/trainer.hpp"
#include "test_util.hpp"

using namespace evalign;
using evalign::testing::random_unit;
using evalign::testing::random_vec;
using evalign::testing::read_file;
using evalign::testing::TempDir;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && out_.pass) out_.detail = what;
    out_.pass = out_.pass && ok;
  }
  void note(const std::string& s) {
    if (out_.pass) out_.detail = s;
  }
  Outcome result() const { return out_; }

 private:
  Outcome out_;
};

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

std::string fmt(double x, int d = 4) { return format_fixed(x, d); }

std::vector<double*> parameters(ProjectionPair& p) {
  std::vector<double*> out;
  for (LinearProjection* h : {&p.vision, &p.text}) {
    for (double& w : h->weight.data) out.push_back(&w);
    for (double& b : h->bias) out.push_back(&b);
  }
  return out;
}

Outcome gradient_correctness() {
  Check c;
  Rng rng(101);
  const double h = 1e-4;
  std::size_t coords = 0, instances = 0;
  double worst = 0.0;
  for (int inst = 0; inst < 6; ++inst, ++instances) {
    const std::size_t n = 2 + rng.index(7);
    ProjectionPair pair = init_projection_pair(6, 6, 4, 50 + inst);
    for (double* x : parameters(pair)) *x += 0.2 * rng.normal();
    AnchorTexts anchors;
    for (auto& a : anchors) a = random_vec(rng, 6);
    std::vector<TrainExample> batch;
    for (std::size_t i = 0; i < n; ++i)
      batch.push_back({random_vec(rng, 6), random_vec(rng, 6), kAllAbnormalityTypes[rng.index(4)]});
    TrainConfig cfg;
    cfg.modality = inst % 2 ? TextModality::description : TextModality::abnormality;
    cfg.lambda_reg = 0.5;
    LossGradient lg = loss_gradient(batch, anchors, pair, cfg);
    auto params = parameters(pair);
    auto grads = parameters(lg.grad);
    for (int k = 0; k < 5; ++k, ++coords) {
      const std::size_t idx = rng.index(params.size());
      const double orig = *params[idx];
      *params[idx] = orig + h;
      const double up = total_loss(batch, anchors, pair, cfg);
      *params[idx] = orig - h;
      const double down = total_loss(batch, anchors, pair, cfg);
      *params[idx] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = *grads[idx];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-2});
      worst = std::max(worst, rel);
      c.expect(rel <= 1e-4, "coordinate " + std::to_string(idx) + " fd " + std::to_string(fd) +
                                " analytic " + std::to_string(an));
    }
  }
  c.expect(coords >= 20 && instances >= 5, "too few coordinates");
  c.note(std::to_string(coords) + " coordinates over " + std::to_string(instances) +
         " instances, worst relative error " + std::to_string(worst));
  return c.result();
}

Outcome loss_fixtures() {
  Check c;
  const double one = info_nce_loss(Matrix(1, 1, 0.3), 0.07);
  const double uniform = info_nce_loss(Matrix(2, 2, 0.4), 0.07);
  Matrix eye(2, 2);
  eye(0, 0) = eye(1, 1) = 1.0;
  const double diag = info_nce_loss(eye, 1.0);
  c.expect(close(one, 0.0, 1e-9), "N=1 loss " + std::to_string(one));
  c.expect(close(uniform, std::log(2.0), 1e-9), "uniform N=2 loss " + std::to_string(uniform));
  c.expect(close(diag, std::log1p(std::exp(-1.0)), 1e-9), "diagonal loss " + std::to_string(diag));
  c.note("0, ln 2 and " + fmt(diag, 6) + " within 1e-9");
  return c.result();
}

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / pairs;
}

struct Tally {
  double acc, sens, spec, prec, f1;
};

Tally brute_binary(const std::vector<int>& gold, const std::vector<int>& pred, int positive) {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] == positive, p = pred[i] == positive;
    if (g && p) tp += 1;
    else if (!g && p) fp += 1;
    else if (g) fn += 1;
    else tn += 1;
  }
  Tally t;
  t.acc = (tp + tn) / static_cast<double>(gold.size());
  t.sens = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  t.spec = tn + fp > 0 ? tn / (tn + fp) : 0.0;
  t.prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  t.f1 = t.prec + t.sens > 0 ? 2 * t.prec * t.sens / (t.prec + t.sens) : 0.0;
  return t;
}

bool same(const BinaryMetrics& m, const Tally& t) {
  const double e = 1e-12;
  return close(m.accuracy, t.acc, e) && close(m.sensitivity, t.sens, e) &&
         close(m.specificity, t.spec, e) && close(m.precision, t.prec, e) && close(m.f1, t.f1, e);
}

Outcome metric_oracles() {
  Check c;
  Rng rng(202);
  const std::vector<std::string> labels{"a", "b", "c", "d"};
  int fixtures = 0;
  for (int trial = 0; trial < 150; ++trial, ++fixtures) {
    const std::size_t n = 4 + rng.index(47);
    const std::size_t k = 2 + rng.index(3);

    // Binary.
    std::vector<int> gold(n), pred(n);
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = static_cast<int>(rng.index(2));
      pred[i] = static_cast<int>(rng.index(2));
      score[i] = static_cast<double>(rng.index(20)) / 20.0;
    }
    gold[0] = 1;
    gold[1] = 0;
    c.expect(same(binary_metrics(confusion(gold, pred, 2)), brute_binary(gold, pred, 1)),
             "binary_metrics mismatch");
    c.expect(close(auc_roc(score, gold), brute_auc(score, gold), 1e-12), "auc mismatch");

    // Tie-free AUC invariances.
    std::vector<double> distinct(n), mono(n);
    std::vector<int> flipped(n);
    for (std::size_t i = 0; i < n; ++i) {
      distinct[i] = static_cast<double>(i) + rng.uniform(0.0, 0.5);
      mono[i] = std::exp(0.1 * distinct[i]) * 3.0 - 7.0;
      flipped[i] = 1 - gold[i];
    }
    rng.shuffle(distinct);
    for (std::size_t i = 0; i < n; ++i) mono[i] = std::exp(0.1 * distinct[i]) * 3.0 - 7.0;
    const double a = auc_roc(distinct, gold);
    std::vector<double> negated(n);
    for (std::size_t i = 0; i < n; ++i) negated[i] = -distinct[i];
    c.expect(auc_roc(mono, gold) == a, "monotone transform changed AUC");
    c.expect(close(auc_roc(distinct, flipped), 1.0 - a, 1e-12), "label flip did not give 1 - AUC");
    c.expect(close(auc_roc(negated, flipped), a, 1e-12), "negate + flip changed AUC");

    // Multi-class.
    std::vector<int> mg(n), mp(n);
    Matrix ms(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      mg[i] = static_cast<int>(rng.index(k));
      mp[i] = static_cast<int>(rng.index(k));
      for (std::size_t j = 0; j < k; ++j) ms(i, j) = rng.uniform();
    }
    const std::vector<std::string> lk(labels.begin(), labels.begin() + static_cast<long>(k));
    const MetricsReport r = macro_metrics(mg, mp, ms, lk);
    Tally mean{0, 0, 0, 0, 0};
    double auc_sum = 0;
    int auc_n = 0;
    for (std::size_t cl = 0; cl < k; ++cl) {
      const Tally t = brute_binary(mg, mp, static_cast<int>(cl));
      c.expect(same(r.per_class[cl].metrics, t), "per-class metrics mismatch");
      mean.acc += t.acc / k;
      mean.sens += t.sens / k;
      mean.spec += t.spec / k;
      mean.prec += t.prec / k;
      mean.f1 += t.f1 / k;
      std::vector<int> y(n);
      std::vector<double> s(n);
      int pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = mg[i] == static_cast<int>(cl);
        pos += y[i];
        s[i] = ms(i, cl);
      }
      if (pos > 0 && pos < static_cast<int>(n)) {
        auc_sum += brute_auc(s, y);
        ++auc_n;
      }
    }
    c.expect(close(r.accuracy, mean.acc, 1e-12) && close(r.sensitivity, mean.sens, 1e-12) &&
                 close(r.specificity, mean.spec, 1e-12) && close(r.precision, mean.prec, 1e-12) &&
                 close(r.f1, mean.f1, 1e-12),
             "macro mean mismatch");
    c.expect(auc_n == 0 || close(*r.auc_roc, auc_sum / auc_n, 1e-12), "macro AUC mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += mg[i] == mp[i];
    c.expect(close(*r.overall_accuracy, static_cast<double>(hits) / n, 1e-15), "trace/total mismatch");

    // Retrieval analytics.
    std::vector<RetrievalResult> results(n);
    const std::size_t depth = 1 + rng.index(6);
    for (auto& res : results) {
      res.gold = kAllAbnormalityTypes[rng.index(4)];
      for (std::size_t j = 0; j < depth; ++j) {
        Match m;
        m.type = kAllAbnormalityTypes[rng.index(4)];
        res.top_k.push_back(m);
      }
    }
    for (std::size_t kk = 1; kk <= depth; ++kk) {
      double any = 0, frac = 0;
      for (const auto& res : results) {
        int good = 0;
        for (std::size_t j = 0; j < kk; ++j) good += res.top_k[j].type == res.gold;
        any += good > 0;
        frac += static_cast<double>(good) / kk;
      }
      c.expect(close(accuracy_at_k(results, kk), any / n, 1e-12), "accuracy@k mismatch");
      c.expect(close(precision_at_k(results, kk), frac / n, 1e-12), "precision@k mismatch");
    }
  }
  c.note(std::to_string(fixtures) + " randomized fixtures");
  return c.result();
}

struct GapRun {
  double untrained_accuracy = 0;
  double trained_accuracy = 0;
  double trained_auc = 0;
  double separation = 0;
  std::string checkpoint_a, checkpoint_b;
};

GapRun run_gap() {
  SynthConfig sc;
  sc.n_per_class = 40;
  sc.n_test_per_class = 10;
  sc.image_dim = sc.text_dim = 32;
  sc.noise_sigma = 1.0;
  sc.class_separation = 6.0;
  const DatasetManifest all = synth_dataset(sc, 7);
  const DatasetSplit split = split_dataset(all, 0, 0);

  PipelineConfig cfg;
  cfg.proj_dim = 16;
  cfg.train.seed = 7;
  cfg.head.seed = 7;

  GapRun g;
  PipelineConfig untrained = cfg;
  untrained.train.epochs = 0;
  {
    const InferenceEngine engine(fit_pipeline(split.train, untrained), split.train);
    g.untrained_accuracy = *evaluate(engine, split.test, cfg.k, Predictor::conditional).abnormality.overall_accuracy;
  }
  const Checkpoint ckpt = fit_pipeline(split.train, cfg);
  const InferenceEngine engine(ckpt, split.train);
  const EvaluationReport rep = evaluate(engine, split.test, cfg.k, Predictor::conditional);
  g.trained_accuracy = *rep.abnormality.overall_accuracy;
  g.trained_auc = rep.abnormality.auc_roc.value_or(0.0);

  std::vector<Vec> emb;
  std::vector<AbnormalityType> types;
  for (const CaseRecord& q : split.test.cases) {
    emb.push_back(engine.embed(q));
    types.push_back(q.abnormality);
  }
  const ClusterCosines cc = cluster_cosines(emb, types);
  g.separation = cc.intra - cc.inter;
  g.checkpoint_a = serialize_checkpoint(ckpt);
  g.checkpoint_b = serialize_checkpoint(fit_pipeline(split.train, cfg));
  return g;
}

const GapRun& gap() {
  static const GapRun g = run_gap();
  return g;
}

Outcome training_gap() {
  Check c;
  const GapRun& g = gap();
  c.expect(g.untrained_accuracy <= 0.60, "untrained accuracy " + fmt(g.untrained_accuracy));
  c.expect(g.trained_accuracy >= 0.95, "trained accuracy " + fmt(g.trained_accuracy));
  c.expect(g.trained_auc >= 0.98, "trained macro AUC " + fmt(g.trained_auc));
  c.expect(g.checkpoint_a == g.checkpoint_b, "training is not deterministic");
  c.note("untrained " + format_percent(g.untrained_accuracy) + ", trained " +
         format_percent(g.trained_accuracy) + ", macro AUC " + fmt(g.trained_auc));
  return c.result();
}

Outcome embedding_separation() {
  Check c;
  const double s = gap().separation;
  c.expect(s >= 0.3, "intra - inter = " + fmt(s));
  c.note("intra - inter cosine " + fmt(s));
  return c.result();
}

int cli(const std::vector<std::string>& args) {
  std::vector<std::string> full{"evalign"};
  full.insert(full.end(), args.begin(), args.end());
  std::ostringstream out, err;
  const int code = run_cli(full, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Outcome pipeline_determinism() {
  Check c;
  TempDir a, b;
  const std::vector<std::string> files{"checkpoint.json",
                                       "eval/abnormality_report.json",
                                       "eval/abnormality_report.csv",
                                       "eval/dementia_report.json",
                                       "eval/dementia_report.csv",
                                       "eval/ad_report.json",
                                       "eval/ad_report.csv",
                                       "eval/retrieval_analysis.json",
                                       "eval/error_analysis.json",
                                       "eval/predictions.jsonl"};
  for (const TempDir* d : {&a, &b}) {
    const std::string m = (*d / "m.jsonl").string();
    const std::string ck = (*d / "checkpoint.json").string();
    c.expect(cli({"synth", "--out", m, "--seed", "11", "--n-per-class", "20", "--n-test-per-class",
                  "5", "--dim-image", "16", "--dim-text", "16"}) == 0,
             "synth failed");
    c.expect(cli({"train", "--manifest", m, "--checkpoint", ck, "--seed", "5", "--proj-dim", "8",
                  "--epochs", "80"}) == 0,
             "train failed");
    c.expect(cli({"evaluate", "--manifest", m, "--checkpoint", ck, "--out",
                  (*d / "eval").string()}) == 0,
             "evaluate failed");
  }
  for (const auto& f : files) {
    const std::string x = read_file(a / f), y = read_file(b / f);
    c.expect(!x.empty() && x == y, f + " differs between runs");
  }
  c.note(std::to_string(files.size()) + " artifacts byte-identical");
  return c.result();
}

Outcome retrieval_properties() {
  Check c;
  Rng rng(303);
  int cases = 0;
  for (int trial = 0; trial < 120; ++trial, ++cases) {
    const std::size_t n = 2 + rng.index(30), dim = 2 + rng.index(8);
    std::vector<ReferenceEntry> entries;
    for (std::size_t i = 0; i < n; ++i)
      entries.push_back({"r" + std::to_string(1000 + i), kAllAbnormalityTypes[rng.index(4)],
                         DementiaLabel::non_demented, random_unit(rng, dim), ""});
    const ReferenceIndex index(entries);

    std::vector<RetrievalResult> results;
    for (int q = 0; q < 5; ++q) {
      RetrievalResult r;
      r.gold = kAllAbnormalityTypes[rng.index(4)];
      const Vec query = random_unit(rng, dim);
      r.top_k = retrieve_top_k(query, index, n);
      for (std::size_t k = 1; k <= n; ++k) {
        const auto prefix = retrieve_top_k(query, index, k);
        bool ok = prefix.size() == k;
        for (std::size_t i = 0; ok && i < k; ++i) ok = prefix[i].id == r.top_k[i].id;
        c.expect(ok, "top-k prefix property violated");
      }
      results.push_back(r);

      AnchorMap anchors;
      for (AbnormalityType t : kAllAbnormalityTypes) anchors[t] = random_unit(rng, dim);
      Vec scaled = query;
      const double s = std::exp(rng.uniform(-4, 4));
      for (double& x : scaled) x *= s;
      c.expect(classify_abnormality(query, anchors).predicted ==
                   classify_abnormality(scaled, anchors).predicted,
               "argmax changed under positive scaling");
    }
    double prev = 0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double acc = accuracy_at_k(results, k);
      c.expect(acc >= prev, "accuracy@k decreased");
      prev = acc;
    }
  }
  c.note(std::to_string(cases) + " randomized indices");
  return c.result();
}

Outcome error_rate_table() {
  Check c;
  std::vector<RetrievalResult> results(34);
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i].gold = AbnormalityType::mtl_atrophy;
    Match m;
    m.type = i < 5 ? AbnormalityType::other_atrophy : AbnormalityType::mtl_atrophy;
    results[i].top_k.push_back(m);
  }
  const double rate = top1_incorrect_rate(results);
  c.expect(format_fixed(rate, 2) == "14.71", "rate " + std::to_string(rate));
  c.note("5 of 34 top-1 matches wrong -> " + format_fixed(rate, 2) + "%");
  return c.result();
}

Outcome explanation_faithfulness() {
  Check c;
  RetrievalResult r;
  r.query_id = "case_1";
  r.predicted = AbnormalityType::mtl_atrophy;
  r.class_scores = {0.2, 0.9, 0.1, 0.4};
  int rank = 0;
  for (double s : {0.9603, 0.9590, 0.9567}) {
    Match m;
    m.id = "ref_" + std::to_string(++rank);
    m.similarity = s;
    m.type = AbnormalityType::mtl_atrophy;
    m.description = "MTL atrophy.";
    r.top_k.push_back(m);
  }
  const Explanation e = generate_description(r, 0.8101, Task::ad, default_templates());
  for (const char* token : {"0.9603", "0.9590", "0.9567", "81.01%"})
    c.expect(e.rendered.find(token) != std::string::npos, std::string("missing ") + token);

  Rng rng(404);
  for (int i = 0; i < 100; ++i) {
    RetrievalResult rr = r;
    for (auto& m : rr.top_k) m.similarity = rng.uniform(-1, 1);
    const double p = rng.uniform();
    const Explanation ex = generate_description(rr, p, Task::dementia, default_templates());
    for (const auto& m : rr.top_k)
      c.expect(ex.rendered.find(format_fixed(m.similarity, 4)) != std::string::npos, "score missing");
    c.expect(ex.rendered.find(format_percent(p)) != std::string::npos, "probability missing");
  }

  std::string dropped = e.raw;
  dropped.replace(dropped.find("0.9603"), 6, "a high score");
  const RefinementCheck check = validate_refined(e.raw, dropped);
  c.expect(!check.ok && check.missing == std::vector<std::string>{"0.9603"},
           "dropped token not reported");
  bool threw = false;
  try {
    generate_description(r, 0.8101, Task::ad, default_templates(),
                         [&](std::string_view) { return dropped; });
  } catch (const Error&) {
    threw = true;
  }
  c.expect(threw, "lossy refiner accepted");
  c.note("scores at 4 decimals, 0.8101 -> 81.01%, lossy refinement rejected");
  return c.result();
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double budget_seconds;
  };
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradient_correctness, 5},
      {"loss fixtures", loss_fixtures, 5},
      {"metric oracles", metric_oracles, 10},
      {"untrained vs trained gap", training_gap, 60},
      {"embedding separation", embedding_separation, 60},
      {"pipeline determinism", pipeline_determinism, 120},
      {"retrieval properties", retrieval_properties, 60},
      {"error-rate table", error_rate_table, 5},
      {"explanation faithfulness", explanation_faithfulness, 5},
  };
  int failures = 0;
  for (const Criterion& cr : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > cr.budget_seconds) {
      o.pass = false;
      o.detail += " (over time budget)";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << cr.name << ": " << o.detail << " ["
              << format_fixed(secs, 2) << " s]\n";
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed") << "\n";
  return failures == 0 ? 0 : 1;
}
