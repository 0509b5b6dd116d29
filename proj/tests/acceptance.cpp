#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oneframe/data.hpp"
#include "oneframe/evaluation.hpp"
#include "oneframe/fusion.hpp"
#include "oneframe/gradcheck.hpp"
#include "oneframe/objectives.hpp"
#include "oneframe/temporal.hpp"
#include "oneframe/training.hpp"

using namespace oneframe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

Mat random_mat(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * uniform01(rng) - 1.0;
  return m;
}

Frame random_frame(int size, Rng& rng) {
  Frame f(size, 3);
  for (float& v : f.pixels) v = static_cast<float>(uniform01(rng));
  return f;
}

ModelConfig corpus_config(int vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.max_text_len = 8;
  return c;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  GradcheckOptions opt;
  opt.seed = 1;
  const GradcheckReport r = run_gradcheck_suite(gradcheck_config(), opt);
  const double secs = seconds_since(t0);
  std::string detail;
  double worst = 0.0;
  for (const auto& l : r.losses) {
    detail += l.loss + "=" + fmt(l.max_rel_error, 2) + " ";
    worst = std::max(worst, l.max_rel_error);
  }
  std::set<std::string> names;
  for (const auto& l : r.losses) names.insert(l.loss);
  bool covered = true;
  for (const char* n : {"vtc", "mlm", "vtm", "qa", "temporal"}) {
    covered = covered && std::any_of(names.begin(), names.end(), [&](const std::string& s) { return s.find(n) != std::string::npos; });
  }
  detail += "max " + fmt(worst, 2) + ", " + fmt(secs, 3) + " s";
  return {r.passed() && worst <= 1e-4 && covered && secs < 120.0, detail};
}

Outcome closed_forms() {
  double worst = 0.0;
  for (int n : {2, 3, 4, 8, 16}) {
    Mat same = Mat::Zero(n, 6);
    same.col(0).setOnes();
    for (double tau : {0.07, 0.5, 1.0}) {
      worst = std::max(worst, std::abs(vtc_loss_value(same, same, tau) - 2.0 * n * std::log(static_cast<double>(n))));
    }
  }
  const Mat eye = Mat::Identity(2, 2);
  const double identity_err = std::abs(vtc_loss_value(eye, eye, 1.0) - 4.0 * std::log(1.0 + std::exp(-1.0)));
  double mlm_err = 0.0;
  for (int vocab : {10, 64, 333}) {
    ag::Tape tape(false);
    const ag::Var logits = tape.constant(Mat::Zero(6, vocab));
    const std::vector<int> labels{3, -1, 7, 1, -1, 0};
    mlm_err = std::max(mlm_err, std::abs(mlm_loss(logits, labels).value()(0, 0) - std::log(static_cast<double>(vocab))));
  }
  return {worst <= 1e-6 && identity_err <= 1e-6 && mlm_err <= 1e-6,
          "symmetric " + fmt(worst, 2) + ", identity " + fmt(identity_err, 2) + ", uniform mlm " + fmt(mlm_err, 2)};
}

Outcome fusion_algebra() {
  Tokenizer tok = Tokenizer::from_texts(synthetic_vocabulary());
  ModelConfig c = corpus_config(tok.vocab_size());
  Model model(c, 21);
  Rng rng = make_rng(21, "fusion");

  double collapse = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<EncodedSequence> one{encode_frame(model, random_frame(c.image_size, rng))};
    const EncodedSequence text = encode_text(model, tok.encode(synthetic_vocabulary()[static_cast<std::size_t>(trial) % 10], c.max_text_len));
    const double early = predict_early_fusion(model, text, one);
    for (EnsembleStrategy s : {EnsembleStrategy::lse, EnsembleStrategy::max, EnsembleStrategy::mean}) {
      collapse = std::max(collapse, std::abs(predict_late_fusion(model, text, one, s) - early));
    }
  }
  const Dataset corpus = generate_static_corpus(16, 4, 22);
  const auto grid = compare_ensembles(model, tok, corpus, std::vector<int>{1}, kAllStrategies);
  for (const auto& cell : grid) collapse = std::max(collapse, std::abs(cell.report.avg_recall - grid[0].report.avg_recall));

  int sandwich_violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const int len = 1 + static_cast<int>(uniform_index(rng, 16));
    std::vector<double> v(static_cast<std::size_t>(len));
    for (double& x : v) x = 20.0 * uniform01(rng) - 10.0;
    const double mean = aggregate_scores(v, EnsembleStrategy::mean);
    const double lse = aggregate_scores(v, EnsembleStrategy::lse);
    const double mx = aggregate_scores(v, EnsembleStrategy::max);
    if (!(mean <= lse + 1e-12 && lse <= mx + 1e-12)) ++sandwich_violations;
  }

  double perm = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int frames = 2 + static_cast<int>(uniform_index(rng, 4));
    std::vector<EncodedSequence> enc;
    for (int f = 0; f < frames; ++f) enc.push_back(encode_frame(model, random_frame(c.image_size, rng)));
    const EncodedSequence text =
        encode_text(model, tok.encode(synthetic_vocabulary()[uniform_index(rng, synthetic_vocabulary().size())], c.max_text_len));
    const double base = predict_early_fusion(model, text, enc);
    std::vector<EncodedSequence> shuffled = enc;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    perm = std::max(perm, std::abs(predict_early_fusion(model, text, shuffled) - base));
  }
  return {collapse <= 1e-6 && sandwich_violations == 0 && perm <= 1e-5,
          "collapse " + fmt(collapse, 2) + ", sandwich violations " + std::to_string(sandwich_violations) +
              "/10000, permutation " + fmt(perm, 2) + " over 100 cases"};
}

// Rank by sorting: ties are ordered ahead of the ground truth.
int brute_force_rank(const Mat& scores, int row, int gt) {
  std::vector<int> order(static_cast<std::size_t>(scores.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores(row, a) != scores(row, b)) return scores(row, a) > scores(row, b);
    return a != gt && b == gt;
  });
  return static_cast<int>(std::find(order.begin(), order.end(), gt) - order.begin()) + 1;
}

Outcome metric_oracle() {
  Rng rng = make_rng(31, "metric");
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n_text = 1 + static_cast<int>(uniform_index(rng, 20));
    const int n_video = 1 + static_cast<int>(uniform_index(rng, 20));
    SimilarityMatrix sim;
    sim.scores.resize(n_text, n_video);
    // Coarse values so ties are common.
    for (Eigen::Index i = 0; i < sim.scores.size(); ++i) sim.scores.data()[i] = static_cast<double>(uniform_index(rng, 5));
    for (int i = 0; i < n_text; ++i) sim.gt.push_back({static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n_video)))});
    for (int k : {1, 5, 10, 25}) {
      int hits = 0;
      for (int i = 0; i < n_text; ++i) hits += brute_force_rank(sim.scores, i, sim.gt[static_cast<std::size_t>(i)][0]) <= k ? 1 : 0;
      if (recall_at_k(sim, k) != 100.0 * hits / n_text) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over 1000 matrices x 4 cutoffs"};
}

struct StaticRun {
  Model model;
  Tokenizer tokenizer;
  Dataset test;
  double seconds = 0.0;
};

StaticRun& static_run() {
  static StaticRun* run = [] {
    const auto t0 = Clock::now();
    const Dataset train = generate_static_corpus(512, 8, 1, 32, "train");
    Dataset test = generate_static_corpus(64, 8, 2, 32, "test");
    Tokenizer tok = Tokenizer::from_texts(synthetic_vocabulary());
    Model m(corpus_config(tok.vocab_size()), 7);
    TrainOptions o;
    o.epochs = 100;
    o.batch_size = 16;
    o.peak_lr = 5e-4;
    o.seed = 3;
    run_training(m, train, tok, o);
    auto* r = new StaticRun{std::move(m), std::move(tok), std::move(test), 0.0};
    r->seconds = seconds_since(t0);
    return r;
  }();
  return *run;
}

Outcome static_bias() {
  const auto t0 = Clock::now();
  StaticRun& run = static_run();
  RetrievalOptions ro;
  ro.strategy = EnsembleStrategy::concat;
  ro.t_test = 4;
  const RetrievalReport r = evaluate_retrieval(run.model, run.tokenizer, run.test, ro);
  const double secs = seconds_since(t0);
  return {r.r1 >= 90.0 && secs < 900.0,
          "R@1 " + fmt(r.r1) + " on " + std::to_string(r.n_video) + " test videos, " + fmt(secs, 3) + " s"};
}

Outcome temporal_limitation() {
  const auto t0 = Clock::now();
  const Dataset train = with_meta_captions(generate_temporal_corpus(512, 4, 11, 32, "train"), "template");
  Tokenizer tok = Tokenizer::from_texts(synthetic_vocabulary());
  std::vector<Dataset> splits;
  for (std::uint64_t s = 0; s < 40; ++s) {
    splits.push_back(one_per_reversal_pair(with_meta_captions(generate_temporal_corpus(64, 4, 1000 + s, 32, "test"), "template")));
  }
  auto mean_r1 = [&](const Model& m, EnsembleStrategy strategy, bool temporal) {
    double sum = 0.0;
    for (const auto& split : splits) {
      RetrievalOptions ro;
      ro.strategy = strategy;
      ro.t_test = 4;
      ro.use_temporal = temporal;
      sum += evaluate_retrieval(m, tok, split, ro).r1;
    }
    return sum / static_cast<double>(splits.size());
  };

  // Stage 1: single-frame training; this is also the single-frame baseline.
  Model single(corpus_config(tok.vocab_size()), 7);
  TrainOptions o1;
  o1.epochs = 20;
  o1.batch_size = 16;
  o1.peak_lr = 5e-4;
  o1.seed = 5;
  run_training(single, train, tok, o1);

  bool single_ok = true;
  std::string detail = "single-frame";
  for (EnsembleStrategy s : kAllStrategies) {
    const double r1 = mean_r1(single, s, false);
    single_ok = single_ok && std::abs(r1 - 25.0) <= 10.0;
    detail += " " + to_string(s) + "=" + fmt(r1);
  }

  // Stage 2: four ordered frames through the temporal encoder.
  Model temporal = single;
  temporal.enable_temporal(5);
  TrainOptions o2 = o1;
  o2.epochs = 80;
  o2.frames_per_step = 4;
  o2.lr_scale["temporal"] = 10.0;
  o2.seed = 4;
  run_training(temporal, train, tok, o2);
  const double temporal_r1 = mean_r1(temporal, EnsembleStrategy::concat, true);

  // Reversing the frames of a held-out video should move its best template.
  int changed = 0;
  int total = 0;
  const int len = temporal.config().max_text_len;
  std::vector<EncodedSequence> queries;
  for (const auto& t : motion_templates()) queries.push_back(encode_text(temporal, tok.encode(t, len)));
  for (std::size_t s = 0; s < 5; ++s) {
    for (const auto& ex : splits[s]) {
      std::vector<EncodedSequence> frames;
      for (const auto& f : ex.frames) frames.push_back(encode_frame(temporal, f));
      std::vector<EncodedSequence> reversed(frames.rbegin(), frames.rend());
      std::vector<double> fwd, bwd;
      for (const auto& q : queries) {
        fwd.push_back(predict_temporal(temporal, q, frames));
        bwd.push_back(predict_temporal(temporal, q, reversed));
      }
      changed += std::max_element(fwd.begin(), fwd.end()) - fwd.begin() != std::max_element(bwd.begin(), bwd.end()) - bwd.begin();
      ++total;
    }
  }
  const double changed_pct = 100.0 * changed / total;
  const double secs = seconds_since(t0);
  detail += "; temporal concat=" + fmt(temporal_r1) + "; reversal moves argmax on " + fmt(changed_pct) + "%; " +
            std::to_string(splits.size()) + " splits of " + std::to_string(splits[0].size()) + " videos; " +
            fmt(secs, 3) + " s";
  return {single_ok && temporal_r1 >= 80.0 && changed_pct >= 50.0 && secs < 1800.0, detail};
}

Outcome interpolation() {
  Rng rng = make_rng(41, "interp");
  bool identity = true;
  double linear = 0.0;
  double endpoints = 0.0;
  double midpoint = 0.0;
  for (int train_frames : {1, 2, 4, 8}) {
    const Mat a = random_mat(train_frames, 6, rng);
    const Mat b = random_mat(train_frames, 6, rng);
    identity = identity && (interpolate_temporal_encoding(a, train_frames).array() == a.array()).all();
    for (int test_frames : {1, 2, 3, 4, 8, 12}) {
      const Mat ia = interpolate_temporal_encoding(a, test_frames);
      const Mat ib = interpolate_temporal_encoding(b, test_frames);
      linear = std::max(linear, (interpolate_temporal_encoding(2.5 * a - 0.75 * b, test_frames) - (2.5 * ia - 0.75 * ib))
                                    .cwiseAbs()
                                    .maxCoeff());
      endpoints = std::max(endpoints, (ia.row(0) - a.row(0)).cwiseAbs().maxCoeff());
      if (test_frames > 1) endpoints = std::max(endpoints, (ia.row(test_frames - 1) - a.row(train_frames - 1)).cwiseAbs().maxCoeff());
      // Oracle: sample source coordinate i (T_train - 1) / (T_test - 1).
      for (int i = 0; i < test_frames; ++i) {
        const double x = test_frames == 1 ? 0.0 : static_cast<double>(i) * (train_frames - 1) / (test_frames - 1);
        const int lo = static_cast<int>(std::floor(x));
        const int hi = std::min(lo + 1, train_frames - 1);
        const Eigen::RowVectorXd expect = (1.0 - (x - lo)) * a.row(lo) + (x - lo) * a.row(hi);
        midpoint = std::max(midpoint, (ia.row(i) - expect).cwiseAbs().maxCoeff());
      }
    }
  }
  return {identity && linear <= 1e-12 && endpoints <= 1e-12 && midpoint <= 1e-12,
          std::string("identity ") + (identity ? "exact" : "inexact") + ", linearity " + fmt(linear, 2) + ", endpoints " +
              fmt(endpoints, 2) + ", oracle " + fmt(midpoint, 2)};
}

Outcome ensemble_trend() {
  StaticRun& run = static_run();
  const std::vector<int> counts{1, 2, 4, 8};
  const auto grid = compare_ensembles(run.model, run.tokenizer, run.test, counts, kAllStrategies);
  auto cell = [&](EnsembleStrategy s, int t) {
    for (const auto& c : grid) {
      if (c.strategy == s && c.t_test == t) return c.report.avg_recall;
    }
    throw std::runtime_error("missing cell");
  };
  bool monotone = true;
  std::string detail = "concat";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    detail += " T" + std::to_string(counts[i]) + "=" + fmt(cell(EnsembleStrategy::concat, counts[i]));
    if (i > 0) monotone = monotone && cell(EnsembleStrategy::concat, counts[i]) >= cell(EnsembleStrategy::concat, counts[i - 1]) - 2.0;
  }
  bool dominant = true;
  detail += "; at T8";
  for (EnsembleStrategy s : {EnsembleStrategy::lse, EnsembleStrategy::max, EnsembleStrategy::mean}) {
    detail += " " + to_string(s) + "=" + fmt(cell(s, 8));
    dominant = dominant && cell(EnsembleStrategy::concat, 8) >= cell(s, 8);
  }
  return {monotone && dominant, detail};
}

Outcome ssv2_builder() {
  std::ifstream in(fs::path(ONEFRAME_TEST_DATA) / "ssv2_fixture.json");
  if (!in) return {false, "fixture missing"};
  const auto annotations = parse_ssv2_annotations(nlohmann::json::parse(in), "validation");
  const SSv2Tasks tasks = build_ssv2_tasks(annotations, 12, 1);
  std::set<std::string> labels;
  for (const auto& ex : tasks.label_test) {
    std::string l = ex.meta.at("label");
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    labels.insert(l);
  }
  std::vector<SSv2Annotation> real;
  for (int t = 0; t < 174; ++t) {
    for (int v = 0; v < 13; ++v) {
      real.push_back({std::to_string(t * 1000 + v), "Action " + std::to_string(t) + " on [something]",
                      "Action " + std::to_string(t) + " on thing " + std::to_string(v), {"thing " + std::to_string(v)}, "validation"});
    }
  }
  const SSv2Tasks scaled = build_ssv2_tasks(real, 12, 2);
  const bool ok = tasks.template_test.size() == 36 && tasks.template_queries.size() == 3 &&
                  tasks.label_queries.size() == labels.size() && scaled.template_queries.size() == 174 &&
                  scaled.template_test.size() == 2088;
  return {ok, std::to_string(tasks.template_test.size()) + " test videos, " + std::to_string(tasks.template_queries.size()) +
                  " template queries, " + std::to_string(tasks.label_queries.size()) + " label queries (oracle " +
                  std::to_string(labels.size()) + "); real scale " + std::to_string(scaled.template_queries.size()) +
                  " templates -> " + std::to_string(scaled.template_test.size()) + " videos"};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + ONEFRAME_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "oneframe_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const nlohmann::json config = {
      {"seed", 9},
      {"model",
       {{"hidden_dim", 16}, {"proj_dim", 8}, {"heads", 2}, {"vision_layers", 1}, {"text_layers", 1},
        {"multimodal_layers", 1}, {"mlp_ratio", 2}, {"image_size", 16}, {"patch_size", 8}, {"max_text_len", 8}}},
      {"data",
       {{"image_size", 16},
        {"train_manifest", (root / "data" / "train.jsonl").string()},
        {"test_manifest", (root / "data" / "test.jsonl").string()},
        {"static", {{"n_train", 24}, {"n_test", 8}, {"frames_per_video", 4}}}}},
      {"train", {{"epochs", 2}, {"batch_size", 8}}},
      {"eval", {{"frame_counts", {1, 2}}}}};
  std::ofstream(root / "config.json") << config.dump(2);
  const std::string cfg = "--config \"" + (root / "config.json").string() + "\"";
  if (run_cli("gen-static " + cfg + " --out \"" + (root / "data").string() + "\"", root / "gen.log") != 0) {
    return {false, "gen-static failed"};
  }
  std::vector<std::string> files;
  for (const char* run : {"a", "b"}) {
    const fs::path out = root / run;
    if (run_cli("pretrain " + cfg + " --out \"" + (out / "train").string() + "\"", root / "train.log") != 0) {
      return {false, "pretrain failed"};
    }
    const std::string ckpt = " --checkpoint \"" + (out / "train" / "model.ckpt").string() + "\"";
    if (run_cli("eval-retrieval " + cfg + ckpt + " --t-test 2 --out \"" + (out / "eval").string() + "\"", root / "eval.log") != 0 ||
        run_cli("compare-ensembles " + cfg + ckpt + " --out \"" + (out / "grid").string() + "\"", root / "grid.log") != 0) {
      return {false, "evaluation failed"};
    }
    files.push_back(read_bytes(out / "train" / "metrics.jsonl") + read_bytes(out / "train" / "model.ckpt") +
                    read_bytes(out / "eval" / "retrieval.json") + read_bytes(out / "grid" / "ensembles.json"));
  }
  const bool same = !files[0].empty() && files[0] == files[1];
  return {same, std::string("metrics, checkpoint, retrieval and ensemble outputs ") + (same ? "identical" : "differ") +
                    " across two runs (" + std::to_string(files[0].size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradients},
      {"closed-form losses", closed_forms},
      {"fusion algebra", fusion_algebra},
      {"metric oracle", metric_oracle},
      {"static-bias reproduction", static_bias},
      {"temporal-limitation reproduction", temporal_limitation},
      {"temporal interpolation", interpolation},
      {"ensemble trend", ensemble_trend},
      {"SSv2 task builder", ssv2_builder},
      {"CLI determinism", cli_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << id << " [" << criteria[i].first << "]: " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
