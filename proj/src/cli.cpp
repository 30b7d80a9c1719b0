#include "evalign/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "evalign/error.hpp"
#include "evalign/explanation.hpp"
#include "evalign/format.hpp"
#include "evalign/pipeline.hpp"

namespace evalign {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string manifest;
  std::string reference;
  std::string checkpoint;
  std::string out;
  std::string modality = "abnormality";
  std::string task = "ad";
  std::string predictor = "conditional";
  std::string templates;
  std::string query_id;
  std::uint64_t seed = 0;
  std::size_t k = 3;
  std::optional<std::size_t> n_train;

  // synth
  SynthConfig synth;
  // train
  PipelineConfig pipeline;
};

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw_usage(std::string(flag) + " is required");
  if (!fs::exists(path)) throw_data(std::string(flag) + " '" + path + "' does not exist");
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw_data("cannot write '" + path + "'");
  f << text;
}

DatasetSplit resolve_split(const DatasetManifest& m, const Options& o) {
  const std::size_t n_train = o.n_train.value_or(std::max<std::size_t>(1, m.size() * 120 / 170));
  return split_dataset(m, n_train, o.seed);
}

// References and queries for inference commands.
struct Workload {
  DatasetManifest references;
  std::vector<CaseRecord> queries;
};

Workload load_workload(const Options& o) {
  require_file(o.manifest, "--manifest");
  DatasetManifest m = load_manifest(o.manifest);
  Workload w;
  if (!o.reference.empty()) {
    require_file(o.reference, "--reference");
    w.references = load_manifest(o.reference);
    w.queries = std::move(m.cases);
  } else {
    DatasetSplit s = resolve_split(m, o);
    w.references = std::move(s.train);
    w.queries = std::move(s.test.cases);
  }
  if (!o.query_id.empty()) {
    std::erase_if(w.queries, [&](const CaseRecord& c) { return c.id != o.query_id; });
    if (w.queries.empty()) throw_data("no query case with id '" + o.query_id + "'");
  }
  std::sort(w.queries.begin(), w.queries.end(),
            [](const CaseRecord& a, const CaseRecord& b) { return a.id < b.id; });
  return w;
}

InferenceEngine load_engine(const Options& o, const Workload& w) {
  require_file(o.checkpoint, "--checkpoint");
  return InferenceEngine(load_checkpoint(o.checkpoint), w.references);
}

void emit(const Options& o, std::ostream& out, const std::string& text) {
  if (o.out.empty())
    out << text;
  else
    write_text(o.out, text);
}

int cmd_synth(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw_usage("--out is required");
  const DatasetManifest m = synth_dataset(o.synth, o.seed);
  fs::create_directories(fs::path(o.out).parent_path().empty() ? "." : fs::path(o.out).parent_path());
  save_manifest(o.out, m);
  out << "wrote " << m.size() << " cases to " << o.out << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  require_file(o.manifest, "--manifest");
  if (o.checkpoint.empty()) throw_usage("--checkpoint (output path) is required");
  const DatasetManifest m = load_manifest(o.manifest);
  const DatasetSplit split = resolve_split(m, o);
  PipelineConfig cfg = o.pipeline;
  cfg.train.modality = parse_modality(o.modality);
  cfg.train.seed = o.seed;
  cfg.head.seed = o.seed;
  cfg.k = o.k;
  TrainReport report;
  const Checkpoint ckpt = fit_pipeline(split.train, cfg, &report);
  write_text(o.checkpoint, serialize_checkpoint(ckpt));
  if (!o.out.empty()) write_text(o.out, to_json(report).dump(2) + "\n");
  out << "trained on " << split.train.size() << " cases; loss "
      << (report.epoch_loss.empty() ? std::string("n/a")
                                    : format_fixed(report.epoch_loss.front(), 6) + " -> " +
                                          format_fixed(report.epoch_loss.back(), 6))
      << "; checkpoint " << o.checkpoint << "\n";
  return kExitOk;
}

int cmd_classify(const Options& o, std::ostream& out) {
  const Workload w = load_workload(o);
  const InferenceEngine engine = load_engine(o, w);
  std::string lines;
  for (const CaseRecord& q : w.queries) {
    const Classification c = classify_abnormality(engine.embed(q), engine.anchors());
    nlohmann::json j = {{"id", q.id}, {"predicted", std::string(to_code(c.predicted))}};
    for (AbnormalityType t : kAllAbnormalityTypes)
      j["class_scores"][std::string(to_code(t))] = c.scores[index_of(t)];
    lines += j.dump() + "\n";
  }
  emit(o, out, lines);
  return kExitOk;
}

int cmd_retrieve(const Options& o, std::ostream& out) {
  const Workload w = load_workload(o);
  const InferenceEngine engine = load_engine(o, w);
  std::ostringstream table;
  std::string json_lines;
  for (const CaseRecord& q : w.queries) {
    const RetrievalResult r = engine.retrieve(q, o.k);
    table << "query " << q.id << " predicted " << to_code(r.predicted) << "\n";
    for (std::size_t i = 0; i < r.top_k.size(); ++i)
      table << "  " << (i + 1) << "\t" << r.top_k[i].id << "\t"
            << format_fixed(r.top_k[i].similarity, 4) << "\t" << to_code(r.top_k[i].type) << "\n";
    json_lines += to_json(r).dump() + "\n";
  }
  out << table.str();
  if (!o.out.empty()) write_text(o.out, json_lines);
  return kExitOk;
}

int cmd_explain(const Options& o, std::ostream& out) {
  const Workload w = load_workload(o);
  const InferenceEngine engine = load_engine(o, w);
  const TypeTemplates templates =
      o.templates.empty() ? default_templates() : load_templates(o.templates);
  const Task task = parse_task(o.task);
  const Predictor predictor = parse_predictor(o.predictor);
  std::string text, json_lines;
  for (const CaseRecord& q : w.queries) {
    const RetrievalResult r = engine.retrieve(q, o.k);
    const double p = engine.predict(q, r, task, predictor);
    const Explanation e = generate_description(r, p, task, templates);
    text += e.rendered + "\n";
    json_lines += to_json(e).dump() + "\n";
  }
  out << text;
  if (!o.out.empty()) write_text(o.out, json_lines);
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const Workload w = load_workload(o);
  const InferenceEngine engine = load_engine(o, w);
  const Task task = parse_task(o.task);
  const Predictor predictor = parse_predictor(o.predictor);
  std::string csv = "id,predicted_type,probability,prediction\n";
  for (const CaseRecord& q : w.queries) {
    const RetrievalResult r = engine.retrieve(q, o.k);
    const double p = engine.predict(q, r, task, predictor);
    csv += q.id + "," + std::string(to_code(r.predicted)) + "," + format_fixed(p, 6) + "," +
           (p >= kDecisionThreshold ? "1" : "0") + "\n";
  }
  emit(o, out, csv);
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw_usage("--out (report directory) is required");
  const Workload w = load_workload(o);
  const InferenceEngine engine = load_engine(o, w);
  DatasetManifest test;
  test.cases = w.queries;
  validate_manifest(test);
  const EvaluationReport rep = evaluate(engine, test, o.k, parse_predictor(o.predictor));
  write_evaluation(rep, o.out);
  out << "abnormality accuracy " << format_percent(*rep.abnormality.overall_accuracy)
      << ", dementia accuracy " << format_percent(rep.dementia.accuracy) << ", AD accuracy "
      << format_percent(rep.ad.accuracy) << "; reports in " << o.out << "\n";
  return kExitOk;
}

int cmd_export(const Options& o, std::ostream& out) {
  require_file(o.manifest, "--manifest");
  require_file(o.checkpoint, "--checkpoint");
  const auto points =
      export_embedding_space(load_checkpoint(o.checkpoint), load_manifest(o.manifest), o.seed);
  emit(o, out, embedding_csv(points));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Contrastive embedding alignment, evidence retrieval and diagnosis engine",
               args.empty() ? "evalign" : args.front()};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--manifest", o.manifest, "Dataset manifest (JSON Lines)");
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON");
    sub->add_option("--seed", o.seed, "Seed for splits and initialization");
    sub->add_option("--out", o.out, "Output path");
  };
  auto add_inference = [&](CLI::App* sub) {
    add_common(sub);
    sub->add_option("--reference", o.reference,
                    "Reference manifest; when given, every --manifest case is a query");
    sub->add_option("--n-train", o.n_train, "Training-set size when the manifest declares no split");
    sub->add_option("--k", o.k, "Number of reference cases")->check(CLI::PositiveNumber);
    sub->add_option("--id", o.query_id, "Restrict to one query case");
  };
  auto add_predictor = [&](CLI::App* sub) {
    sub->add_option("--task", o.task, "dementia | ad")->check(CLI::IsMember({"dementia", "ad"}));
    sub->add_option("--predictor", o.predictor, "head | conditional")
        ->check(CLI::IsMember({"head", "conditional"}));
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic manifest");
  synth->add_option("--out", o.out, "Output manifest path");
  synth->add_option("--seed", o.seed);
  synth->add_option("--n-per-class", o.synth.n_per_class);
  synth->add_option("--n-test-per-class", o.synth.n_test_per_class,
                    "Declare the last N cases of each class as test");
  synth->add_option("--dim-image", o.synth.image_dim);
  synth->add_option("--dim-text", o.synth.text_dim);
  synth->add_option("--separation", o.synth.class_separation);
  synth->add_option("--noise", o.synth.noise_sigma);

  auto* train = app.add_subcommand("train", "Train projection heads and diagnosis models");
  add_common(train);
  train->add_option("--modality", o.modality, "description | abnormality | summary | all")
      ->check(CLI::IsMember({"description", "abnormality", "summary", "all"}));
  train->add_option("--n-train", o.n_train);
  train->add_option("--k", o.k)->check(CLI::PositiveNumber);
  train->add_option("--proj-dim", o.pipeline.proj_dim);
  train->add_option("--tau", o.pipeline.train.tau);
  train->add_option("--lambda", o.pipeline.train.lambda_reg);
  train->add_option("--lr", o.pipeline.train.lr);
  train->add_option("--momentum", o.pipeline.train.momentum);
  train->add_option("--epochs", o.pipeline.train.epochs);
  train->add_option("--batch-size", o.pipeline.train.batch_size);
  train->add_option("--alpha", o.pipeline.alpha, "Conditional-table smoothing");
  train->add_option("--head-lr", o.pipeline.head.lr);
  train->add_option("--head-epochs", o.pipeline.head.epochs);

  auto* classify = app.add_subcommand("classify", "Predict abnormality types");
  add_inference(classify);
  auto* retrieve = app.add_subcommand("retrieve", "Retrieve top-k reference cases");
  add_inference(retrieve);
  auto* explain = app.add_subcommand("explain", "Render evidence-based explanations");
  add_inference(explain);
  add_predictor(explain);
  explain->add_option("--templates", o.templates, "Per-type description templates (JSON)");
  auto* predict = app.add_subcommand("predict", "Predict dementia or AD probability");
  add_inference(predict);
  add_predictor(predict);
  auto* evaluate = app.add_subcommand("evaluate", "Run the full evaluation on the test split");
  add_inference(evaluate);
  evaluate->add_option("--predictor", o.predictor, "head | conditional")
      ->check(CLI::IsMember({"head", "conditional"}));
  auto* export_cmd = app.add_subcommand("export-embedding", "2-D PCA coordinates as CSV");
  add_common(export_cmd);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (classify->parsed()) return cmd_classify(o, out);
    if (retrieve->parsed()) return cmd_retrieve(o, out);
    if (explain->parsed()) return cmd_explain(o, out);
    if (predict->parsed()) return cmd_predict(o, out);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (export_cmd->parsed()) return cmd_export(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::usage: return kExitUsage;
      case ErrorKind::data: return kExitData;
      case ErrorKind::numeric: return kExitNumeric;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace evalign
