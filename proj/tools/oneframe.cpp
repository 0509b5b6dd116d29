#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "oneframe/checkpoint.hpp"
#include "oneframe/data.hpp"
#include "oneframe/error.hpp"
#include "oneframe/evaluation.hpp"
#include "oneframe/gradcheck.hpp"
#include "oneframe/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oneframe;

namespace {

constexpr const char* kArtifactVersion = "oneframe 0.1.0";

json default_config() {
  ModelConfig model;
  return {
      {"seed", 0},
      {"model", model},
      {"data",
       {{"train_manifest", ""},
        {"test_manifest", ""},
        {"image_size", 32},
        {"static", {{"n_train", 512}, {"n_test", 64}, {"frames_per_video", 8}, {"questions", "none"}}},
        {"temporal",
         {{"n_train", 512}, {"n_test", 64}, {"frames_per_video", 4}, {"caption", "template"}, {"one_per_pair", true}}}}},
      {"train",
       {{"objectives", {"vtc", "mlm", "vtm"}},
        {"finetune_objectives", {"retrieval-finetune"}},
        {"epochs", 1},
        {"batch_size", 16},
        {"peak_lr", 1e-4},
        {"min_lr", 1e-6},
        {"warmup_epochs", 1.0},
        {"weight_decay", 0.02},
        {"clip_norm", 1.0},
        {"augment", true},
        {"lr_scale", json::object()},
        {"temporal_lr_scale", 10.0},
        {"save_checkpoints", true}}},
      {"eval",
       {{"strategy", "concat"},
        {"t_test", 1},
        {"paragraph_mode", false},
        {"use_temporal", true},
        {"frame_counts", {1, 2, 4, 8}},
        {"strategies", {"concat", "lse", "max", "mean"}},
        {"plot", true},
        {"restrict_answers", true}}},
      {"ssv2",
       {{"annotations", ""}, {"per_template", 12}, {"frames_path", "frames/{id}.npy"}, {"default_split", "validation"}}},
      {"gradcheck", {{"step", 1e-5}, {"tolerance", 1e-4}, {"floor", 1e-5}, {"coords_per_tensor", 0}}},
  };
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

// User configs may only name keys that exist in the defaults, with matching
// types; free-form maps (lr_scale) accept any numeric entries.
void check_keys(const json& user, const json& defaults, const std::string& path) {
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    const json& d = defaults.at(key);
    if (where == "train.lr_scale") {
      if (!value.is_object()) throw ConfigError("config key 'train.lr_scale' must be an object");
      for (const auto& [prefix, factor] : value.items()) {
        if (!factor.is_number()) throw ConfigError("lr_scale '" + prefix + "' must be a number");
      }
      continue;
    }
    if (!same_kind(value, d)) throw ConfigError("config key '" + where + "' has the wrong type");
    if (d.is_object()) check_keys(value, d, where);
  }
}

json load_config(const std::string& path) {
  json config = default_config();
  if (path.empty()) return config;
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file " + path);
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!user.is_object()) throw ConfigError("config " + path + " must be a JSON object");
  check_keys(user, config, "");
  config.merge_patch(user);
  return config;
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<int> t_test;
  std::string strategy;
};

struct Run {
  std::string command;
  Flags flags;
  json config;
  std::uint64_t seed = 0;
  fs::path out;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

fs::path need_out(const Run& run) {
  if (run.flags.out.empty()) throw InputError(run.command + " requires --out");
  fs::create_directories(run.out);
  return run.out;
}

void need_checkpoint(const Run& run) {
  if (run.flags.checkpoint.empty()) throw InputError(run.command + " requires --checkpoint");
}

void write_run_meta(const Run& run) {
  json meta{{"command", run.command}, {"seed", run.seed}, {"config", run.config}, {"version", kArtifactVersion}};
  if (!run.flags.checkpoint.empty()) meta["checkpoint"] = run.flags.checkpoint;
  write_json(run.out / "run_meta.json", meta);
}

Dataset manifest_from(const json& config, const char* key) {
  const std::string path = config.at("data").at(key).get<std::string>();
  if (path.empty()) throw InputError(std::string("config data.") + key + " is not set");
  return load_manifest(path);
}

std::set<Objective> objectives_from(const json& list) {
  std::set<Objective> out;
  for (const auto& o : list) out.insert(parse_objective(o.get<std::string>()));
  if (out.empty()) throw ConfigError("objective list is empty");
  return out;
}

TrainOptions train_options(const Run& run, const json& objectives) {
  const json& t = run.config.at("train");
  TrainOptions o;
  o.objectives = objectives_from(objectives);
  o.epochs = t.at("epochs").get<int>();
  o.batch_size = t.at("batch_size").get<int>();
  o.peak_lr = t.at("peak_lr").get<double>();
  o.min_lr = t.at("min_lr").get<double>();
  o.warmup_epochs = t.at("warmup_epochs").get<double>();
  o.weight_decay = t.at("weight_decay").get<double>();
  o.clip_norm = t.at("clip_norm").get<double>();
  o.augment = t.at("augment").get<bool>();
  for (const auto& [prefix, factor] : t.at("lr_scale").items()) o.lr_scale[prefix] = factor.get<double>();
  o.save_checkpoints = t.at("save_checkpoints").get<bool>();
  o.seed = run.seed;
  o.run_dir = run.out;
  return o;
}

Tokenizer tokenizer_for(const Dataset& data) {
  std::vector<std::string> texts = synthetic_vocabulary();
  for (const auto& ex : data) {
    texts.insert(texts.end(), ex.captions.begin(), ex.captions.end());
    if (auto it = ex.meta.find("answer"); it != ex.meta.end()) texts.push_back(it->second);
  }
  return Tokenizer::from_texts(texts);
}

void train_and_save(const Run& run, Model& model, const Tokenizer& tok, const Dataset& data,
                    const TrainOptions& options) {
  if (options.objectives.contains(Objective::qa)) model.enable_decoder();
  const TrainResult result = run_training(model, data, tok, options);
  save_checkpoint(run.out / "model.ckpt", model, tok);
  const StepRecord& last = result.log.back();
  write_json(run.out / "train_summary.json",
             {{"steps", static_cast<int>(result.log.size())},
              {"final", to_json(last, options.objectives.contains(Objective::qa))},
              {"checkpoints", static_cast<int>(result.checkpoints.size())}});
  std::cout << "trained " << result.log.size() << " steps, final loss " << last.loss_total << ", checkpoint "
            << (run.out / "model.ckpt").string() << '\n';
}

int cmd_gen(const Run& run, bool temporal) {
  need_out(run);
  const json& d = run.config.at("data");
  const json& c = d.at(temporal ? "temporal" : "static");
  const int size = d.at("image_size").get<int>();
  const int frames = c.at("frames_per_video").get<int>();
  const std::uint64_t train_seed = stream_seed(run.seed, "corpus-train");
  const std::uint64_t test_seed = stream_seed(run.seed, "corpus-test");
  Dataset train, test;
  if (temporal) {
    train = generate_temporal_corpus(c.at("n_train").get<int>(), frames, train_seed, size, "train");
    test = generate_temporal_corpus(c.at("n_test").get<int>(), frames, test_seed, size, "test");
    const std::string caption = c.at("caption").get<std::string>();
    if (caption != "label") {
      train = with_meta_captions(train, caption);
      test = with_meta_captions(test, caption);
    }
    if (c.at("one_per_pair").get<bool>()) test = one_per_reversal_pair(test);
  } else {
    const std::string questions = c.at("questions").get<std::string>();
    if (questions == "none") {
      train = generate_static_corpus(c.at("n_train").get<int>(), frames, train_seed, size, "train");
      test = generate_static_corpus(c.at("n_test").get<int>(), frames, test_seed, size, "test");
    } else {
      QuestionKind kind = QuestionKind::mixed;
      if (questions == "shape") kind = QuestionKind::shape;
      else if (questions == "color") kind = QuestionKind::color;
      else if (questions != "mixed") throw ConfigError("data.static.questions must be none, shape, color or mixed");
      train = generate_qa_corpus(c.at("n_train").get<int>(), frames, train_seed, kind, size, "train");
      test = generate_qa_corpus(c.at("n_test").get<int>(), frames, test_seed, kind, size, "test");
    }
  }
  write_manifest(run.out / "train.jsonl", train);
  write_manifest(run.out / "test.jsonl", test);
  write_run_meta(run);
  std::cout << "wrote " << train.size() << " train and " << test.size() << " test videos to " << run.out.string()
            << '\n';
  return 0;
}

int cmd_build_ssv2(const Run& run) {
  need_out(run);
  const json& s = run.config.at("ssv2");
  const std::string path = s.at("annotations").get<std::string>();
  if (path.empty()) throw InputError("config ssv2.annotations is not set");
  std::ifstream in(path);
  if (!in) throw InputError("cannot read annotations " + path);
  json raw;
  try {
    raw = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
  const auto annotations = parse_ssv2_annotations(raw, s.at("default_split").get<std::string>());
  const SSv2Tasks tasks = build_ssv2_tasks(annotations, s.at("per_template").get<int>(), run.seed,
                                           s.at("frames_path").get<std::string>());
  for (const auto& [name, train, test] :
       {std::tuple{"ssv2_template", &tasks.template_train, &tasks.template_test},
        std::tuple{"ssv2_label", &tasks.label_train, &tasks.label_test}}) {
    fs::create_directories(run.out / name);
    write_manifest_records(run.out / name / "train.jsonl", *train);
    write_manifest_records(run.out / name / "test.jsonl", *test);
  }
  for (const auto& w : tasks.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& r : tasks.rejected) std::cerr << "rejected: " << r << '\n';
  write_json(run.out / "ssv2_summary.json", {{"train_videos", tasks.template_train.size()},
                                             {"test_videos", tasks.template_test.size()},
                                             {"template_queries", tasks.template_queries},
                                             {"label_queries", tasks.label_queries},
                                             {"warnings", tasks.warnings},
                                             {"rejected", tasks.rejected}});
  write_run_meta(run);
  std::cout << tasks.template_test.size() << " test videos, " << tasks.template_queries.size()
            << " template queries, " << tasks.label_queries.size() << " label queries\n";
  return 0;
}

int cmd_pretrain(const Run& run) {
  need_out(run);
  const Dataset data = manifest_from(run.config, "train_manifest");
  const TrainOptions options = train_options(run, run.config.at("train").at("objectives"));
  write_run_meta(run);
  if (!run.flags.checkpoint.empty()) {
    LoadedCheckpoint ck = load_checkpoint(run.flags.checkpoint);
    train_and_save(run, ck.model, ck.tokenizer, data, options);
    return 0;
  }
  const Tokenizer tok = tokenizer_for(data);
  ModelConfig cfg = run.config.at("model").get<ModelConfig>();
  cfg.vocab_size = tok.vocab_size();
  Model model(cfg, stream_seed(run.seed, "init"));
  train_and_save(run, model, tok, data, options);
  return 0;
}

int cmd_finetune(const Run& run, bool temporal) {
  need_checkpoint(run);
  need_out(run);
  const Dataset data = manifest_from(run.config, "train_manifest");
  const json& t = run.config.at("train");
  TrainOptions options = train_options(run, t.at(temporal ? "objectives" : "finetune_objectives"));
  LoadedCheckpoint ck = load_checkpoint(run.flags.checkpoint);
  if (temporal) {
    ck.model.enable_temporal(stream_seed(run.seed, "temporal-init"));
    options.frames_per_step = ck.model.config().temporal_train_frames;
    options.lr_scale.try_emplace("temporal", t.at("temporal_lr_scale").get<double>());
  }
  write_run_meta(run);
  train_and_save(run, ck.model, ck.tokenizer, data, options);
  return 0;
}

int eval_t_test(const Run& run) {
  return run.flags.t_test ? *run.flags.t_test : run.config.at("eval").at("t_test").get<int>();
}

int cmd_eval_retrieval(const Run& run) {
  need_checkpoint(run);
  need_out(run);
  const json& e = run.config.at("eval");
  RetrievalOptions options;
  options.strategy = parse_strategy(run.flags.strategy.empty() ? e.at("strategy").get<std::string>()
                                                               : run.flags.strategy);
  options.t_test = eval_t_test(run);
  options.paragraph_mode = e.at("paragraph_mode").get<bool>();
  options.use_temporal = e.at("use_temporal").get<bool>();
  const Dataset data = manifest_from(run.config, "test_manifest");
  const LoadedCheckpoint ck = load_checkpoint(run.flags.checkpoint);
  write_run_meta(run);
  std::vector<std::string> warnings;
  const RetrievalReport report = evaluate_retrieval(ck.model, ck.tokenizer, data, options, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  write_json(run.out / "retrieval.json", to_json(report));
  std::cout << to_json(report).dump() << '\n';
  return 0;
}

int cmd_eval_qa(const Run& run) {
  need_checkpoint(run);
  need_out(run);
  const Dataset data = manifest_from(run.config, "test_manifest");
  const LoadedCheckpoint ck = load_checkpoint(run.flags.checkpoint);
  if (!ck.model.has_decoder()) throw ConfigError("checkpoint has no answer decoder; finetune with the qa objective");
  write_run_meta(run);
  const QAReport report =
      evaluate_qa(ck.model, ck.tokenizer, data, eval_t_test(run), run.config.at("eval").at("restrict_answers").get<bool>());
  write_json(run.out / "qa.json", to_json(report));
  std::cout << "accuracy " << report.accuracy << " over " << report.n << " videos\n";
  return 0;
}

int cmd_compare(const Run& run) {
  need_checkpoint(run);
  need_out(run);
  const json& e = run.config.at("eval");
  std::vector<int> counts = e.at("frame_counts").get<std::vector<int>>();
  if (run.flags.t_test) counts = {*run.flags.t_test};
  std::vector<EnsembleStrategy> strategies;
  if (!run.flags.strategy.empty()) {
    strategies.push_back(parse_strategy(run.flags.strategy));
  } else {
    for (const auto& s : e.at("strategies")) strategies.push_back(parse_strategy(s.get<std::string>()));
  }
  const Dataset data = manifest_from(run.config, "test_manifest");
  const LoadedCheckpoint ck = load_checkpoint(run.flags.checkpoint);
  write_run_meta(run);
  const auto grid = compare_ensembles(ck.model, ck.tokenizer, data, counts, strategies, e.at("use_temporal").get<bool>());
  write_json(run.out / "ensembles.json", to_json(grid));
  if (e.at("plot").get<bool>()) {
    std::ofstream svg(run.out / "ensembles.svg");
    svg << ensemble_plot_svg(grid);
  }
  for (const auto& cell : grid) {
    std::cout << to_string(cell.strategy) << " T=" << cell.t_test << " avg_recall " << cell.report.avg_recall << '\n';
  }
  return 0;
}

int cmd_gradcheck(const Run& run) {
  const json& g = run.config.at("gradcheck");
  GradcheckOptions opt;
  opt.step = g.at("step").get<double>();
  opt.tolerance = g.at("tolerance").get<double>();
  opt.floor = g.at("floor").get<double>();
  opt.coords_per_tensor = g.at("coords_per_tensor").get<int>();
  opt.seed = run.seed;
  const GradcheckReport report = run_gradcheck_suite(gradcheck_config(), opt);
  const json j = to_json(report);
  if (!run.flags.out.empty()) {
    need_out(run);
    write_run_meta(run);
    write_json(run.out / "gradcheck.json", j);
  }
  std::cout << j.dump(2) << '\n';
  return report.passed() ? 0 : 2;
}

int dispatch(const Run& run) {
  const std::string& c = run.command;
  if (c == "gen-static") return cmd_gen(run, false);
  if (c == "gen-temporal") return cmd_gen(run, true);
  if (c == "build-ssv2") return cmd_build_ssv2(run);
  if (c == "pretrain") return cmd_pretrain(run);
  if (c == "finetune") return cmd_finetune(run, false);
  if (c == "train-temporal") return cmd_finetune(run, true);
  if (c == "eval-retrieval") return cmd_eval_retrieval(run);
  if (c == "eval-qa") return cmd_eval_qa(run);
  if (c == "compare-ensembles") return cmd_compare(run);
  if (c == "gradcheck") return cmd_gradcheck(run);
  throw InputError("unknown subcommand " + c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-frame video-language training with multi-frame ensemble inference"};
  app.footer("Default config (every field may be overridden by --config):\n" + default_config().dump(2));
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<const char*, const char*>> commands{
      {"gen-static", "Generate the static-appearance corpus (train/test manifests)"},
      {"gen-temporal", "Generate the temporal-order corpus (train/test manifests)"},
      {"build-ssv2", "Build SSv2-style template and label retrieval tasks from annotations"},
      {"pretrain", "Single-frame training with the pre-training objectives"},
      {"finetune", "Continue training a checkpoint with the fine-tuning objectives"},
      {"train-temporal", "Add the temporal encoder to a checkpoint and train on multi-frame clips"},
      {"eval-retrieval", "Text-to-video retrieval recall"},
      {"eval-qa", "Open-ended QA accuracy"},
      {"compare-ensembles", "Retrieval for every (strategy, T_test) cell"},
      {"gradcheck", "Finite-difference gradient suite"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "JSON config file");
    sub->add_option("--seed", flags.seed, "Root seed (overrides config)");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--checkpoint", flags.checkpoint, "Checkpoint to load");
    sub->add_option("--t-test", flags.t_test, "Frames used at inference")->check(CLI::PositiveNumber);
    sub->add_option("--strategy", flags.strategy, "concat | lse | max | mean");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help("", CLI::AppFormatMode::Normal);
    return 1;
  }

  Run run;
  run.command = app.get_subcommands().front()->get_name();
  run.flags = flags;
  try {
    run.config = load_config(flags.config);
    if (flags.seed) run.config["seed"] = *flags.seed;
    if (flags.t_test) run.config["eval"]["t_test"] = *flags.t_test;
    if (!flags.strategy.empty()) {
      parse_strategy(flags.strategy);
      run.config["eval"]["strategy"] = flags.strategy;
    }
    run.seed = run.config.at("seed").get<std::uint64_t>();
    run.out = flags.out;
    return dispatch(run);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 2;
  }
}
