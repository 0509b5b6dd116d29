#include "oneframe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "oneframe/error.hpp"
#include "oneframe/qa.hpp"
#include "oneframe/temporal.hpp"

namespace oneframe {

void SimilarityMatrix::validate() const {
  if (static_cast<Eigen::Index>(gt.size()) != scores.rows()) throw InputError("one ground-truth list per text row");
  if (!scores.allFinite()) throw InputError("similarity matrix has non-finite scores");
  for (const auto& g : gt) {
    if (g.empty()) throw InputError("text row without ground truth");
    for (int j : g) {
      if (j < 0 || j >= scores.cols()) throw InputError("ground-truth index out of range");
    }
  }
}

int gt_rank(const SimilarityMatrix& sim, int row) {
  const auto& g = sim.gt[static_cast<std::size_t>(row)];
  double best = sim.scores(row, g.front());
  for (int j : g) best = std::max(best, sim.scores(row, j));
  int ahead = 0;
  for (Eigen::Index j = 0; j < sim.scores.cols(); ++j) {
    if (std::find(g.begin(), g.end(), static_cast<int>(j)) != g.end()) continue;
    if (sim.scores(row, j) >= best) ++ahead;
  }
  return ahead + 1;
}

double recall_at_k(const SimilarityMatrix& sim, int k) {
  if (k < 1) throw InputError("recall_at_k: k must be at least 1");
  sim.validate();
  if (sim.scores.rows() == 0) throw InputError("recall_at_k: no text rows");
  k = std::min<int>(k, static_cast<int>(sim.scores.cols()));
  int hits = 0;
  for (Eigen::Index i = 0; i < sim.scores.rows(); ++i) hits += gt_rank(sim, static_cast<int>(i)) <= k ? 1 : 0;
  return 100.0 * hits / static_cast<double>(sim.scores.rows());
}

RetrievalReport make_report(const SimilarityMatrix& sim) {
  RetrievalReport r;
  r.r1 = recall_at_k(sim, 1);
  r.r5 = recall_at_k(sim, 5);
  r.r10 = recall_at_k(sim, 10);
  r.avg_recall = (r.r1 + r.r5 + r.r10) / 3.0;
  r.n_text = static_cast<int>(sim.scores.rows());
  r.n_video = static_cast<int>(sim.scores.cols());
  return r;
}

nlohmann::json to_json(const RetrievalReport& r) {
  return {{"r1", fixed_precision(r.r1)},
          {"r5", fixed_precision(r.r5)},
          {"r10", fixed_precision(r.r10)},
          {"avg_recall", fixed_precision(r.avg_recall)},
          {"n_text", r.n_text},
          {"n_video", r.n_video}};
}

RetrievalQueries build_queries(const Dataset& dataset, const Tokenizer& tokenizer, int max_text_len,
                               bool paragraph_mode) {
  RetrievalQueries q;
  std::map<std::string, int> index;
  auto add = [&](const std::string& key, TokenSequence tokens, int column) {
    auto [it, fresh] = index.try_emplace(key, static_cast<int>(q.texts.size()));
    if (fresh) {
      q.texts.push_back(key);
      q.tokens.push_back(std::move(tokens));
      q.gt.emplace_back();
    }
    auto& g = q.gt[static_cast<std::size_t>(it->second)];
    if (std::find(g.begin(), g.end(), column) == g.end()) g.push_back(column);
  };
  for (std::size_t v = 0; v < dataset.size(); ++v) {
    const VideoExample& ex = dataset[v];
    if (ex.captions.empty()) {
      q.warnings.push_back("video " + ex.video_id + " has no caption; skipped");
      continue;
    }
    const int column = static_cast<int>(q.videos.size());
    q.videos.push_back(static_cast<int>(v));
    if (paragraph_mode) {
      TokenSequence t = tokenizer.encode_paragraph(ex.captions, max_text_len);
      std::string key;
      for (std::size_t i = 0; i < ex.captions.size(); ++i) key += (i ? " [SEP] " : "") + ex.captions[i];
      add(key, std::move(t), column);
    } else {
      for (const auto& c : ex.captions) add(c, tokenizer.encode(c, max_text_len), column);
    }
  }
  return q;
}

RetrievalScorer::RetrievalScorer(const Model& model, const Dataset& dataset, const RetrievalQueries& queries)
    : model_(model), dataset_(dataset), queries_(queries) {
  if (queries.tokens.empty()) throw InputError("retrieval needs at least one query");
  ag::Tape tape(false);
  SequenceBatch t = encode_texts(model, tape, queries.tokens);
  text_states_ = t.states.value();
  text_valid_ = t.valid;
}

const EncodedSequence& RetrievalScorer::frame_encoding(int video, int frame) {
  const auto key = std::make_pair(video, frame);
  auto it = frames_.find(key);
  if (it == frames_.end()) {
    const auto& ex = dataset_[static_cast<std::size_t>(video)];
    it = frames_.emplace(key, encode_frame(model_, ex.frames[static_cast<std::size_t>(frame)])).first;
  }
  return it->second;
}

namespace {

std::vector<double> score_all_texts(const Model& model, const Mat& text_states, const std::vector<unsigned char>& valid,
                                    int n_text, const Mat& visual) {
  ag::Tape tape(false);
  const int len = static_cast<int>(text_states.rows()) / n_text;
  SequenceBatch texts{tape.constant(text_states), n_text, len, valid};
  std::vector<FusePair> pairs;
  for (int i = 0; i < n_text; ++i) pairs.push_back({i, 0, static_cast<int>(visual.rows())});
  FusedBatch out = fuse(model, tape, texts, tape.constant(visual), pairs);
  const Mat& logits = out.match_logits.value();
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

}  // namespace

const std::vector<double>& RetrievalScorer::frame_scores(int video, int frame) {
  const auto key = std::make_pair(video, frame);
  auto it = frame_scores_.find(key);
  if (it == frame_scores_.end()) {
    const int n_text = static_cast<int>(queries_.tokens.size());
    it = frame_scores_
             .emplace(key, score_all_texts(model_, text_states_, text_valid_, n_text, frame_encoding(video, frame).states))
             .first;
  }
  return it->second;
}

std::vector<double> RetrievalScorer::concat_scores(int video, const std::vector<int>& frames, bool temporal) {
  const int n_text = static_cast<int>(queries_.tokens.size());
  std::vector<EncodedSequence> parts;
  for (int f : frames) parts.push_back(frame_encoding(video, f));
  if (!temporal) return score_all_texts(model_, text_states_, text_valid_, n_text, concat_sequences(parts).states);

  ag::Tape tape(false);
  const int len = parts.front().length();
  const int count = static_cast<int>(parts.size());
  Mat stacked = concat_sequences(parts).states;
  SequenceBatch frame_batch{tape.constant(std::move(stacked)), count, len,
                            std::vector<unsigned char>(static_cast<std::size_t>(count * len), 1)};
  SequenceBatch visual = temporal_encode(model_, tape, frame_batch, 1, count);
  return score_all_texts(model_, text_states_, text_valid_, n_text, visual.states.value());
}

Mat RetrievalScorer::score_matrix(EnsembleStrategy strategy, int t_test, bool use_temporal) {
  if (t_test < 1) throw InputError("t_test must be at least 1");
  const bool temporal = use_temporal && model_.has_temporal() && strategy == EnsembleStrategy::concat;
  const int n_text = static_cast<int>(queries_.tokens.size());
  Mat scores(n_text, static_cast<Eigen::Index>(queries_.videos.size()));
  for (std::size_t c = 0; c < queries_.videos.size(); ++c) {
    const int video = queries_.videos[c];
    const int T = static_cast<int>(dataset_[static_cast<std::size_t>(video)].frames.size());
    const std::vector<int> idx = sample_inference_frames(T, t_test);
    if (strategy == EnsembleStrategy::concat) {
      const auto col = concat_scores(video, idx, temporal);
      for (int i = 0; i < n_text; ++i) scores(i, static_cast<Eigen::Index>(c)) = col[static_cast<std::size_t>(i)];
    } else {
      std::vector<double> per(idx.size());
      for (int i = 0; i < n_text; ++i) {
        for (std::size_t f = 0; f < idx.size(); ++f) per[f] = frame_scores(video, idx[f])[static_cast<std::size_t>(i)];
        scores(i, static_cast<Eigen::Index>(c)) = aggregate_scores(per, strategy);
      }
    }
  }
  return scores;
}

RetrievalReport evaluate_retrieval(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset,
                                   const RetrievalOptions& options, std::vector<std::string>* warnings) {
  RetrievalQueries q = build_queries(dataset, tokenizer, model.config().max_text_len, options.paragraph_mode);
  if (warnings != nullptr) warnings->insert(warnings->end(), q.warnings.begin(), q.warnings.end());
  if (q.videos.size() < 2) throw InputError("retrieval needs at least two videos with captions");
  RetrievalScorer scorer(model, dataset, q);
  SimilarityMatrix sim{scorer.score_matrix(options.strategy, options.t_test, options.use_temporal), q.gt};
  return make_report(sim);
}

QAReport evaluate_qa(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset, int t_test,
                     bool restrict_to_answers) {
  if (dataset.empty()) throw InputError("evaluate_qa: empty dataset");
  if (t_test < 1) throw InputError("t_test must be at least 1");
  const int max_len = model.config().max_text_len;
  std::vector<std::vector<int>> answers;
  if (restrict_to_answers) {
    std::set<std::vector<int>> seen;
    for (const auto& ex : dataset) {
      auto it = ex.meta.find("answer");
      if (it == ex.meta.end()) continue;
      std::vector<int> ids;
      for (const auto& w : Tokenizer::split_words(it->second)) ids.push_back(tokenizer.id_of(w));
      if (!ids.empty() && static_cast<int>(ids.size()) <= max_len - 2) seen.insert(ids);
    }
    answers.assign(seen.begin(), seen.end());
  }
  QAReport report;
  int correct = 0;
  for (const auto& ex : dataset) {
    auto it = ex.meta.find("answer");
    if (it == ex.meta.end()) throw InputError("video " + ex.video_id + " has no gold answer");
    if (ex.captions.empty()) throw InputError("video " + ex.video_id + " has no question");
    std::vector<EncodedSequence> frames;
    for (int f : sample_inference_frames(static_cast<int>(ex.frames.size()), t_test)) {
      frames.push_back(encode_frame(model, ex.frames[static_cast<std::size_t>(f)]));
    }
    const EncodedSequence fused = fuse_question(model, tokenizer.encode(ex.captions.front(), max_len), frames);
    const TokenSequence answer =
        restrict_to_answers && !answers.empty() ? decode_answer(model, fused, answers) : decode_answer(model, fused, max_len);
    const std::string predicted = tokenizer.decode(answer.ids);
    const std::string gold = tokenizer.decode(tokenizer.encode(it->second, max_len).ids);
    if (!predicted.empty() && predicted == gold) ++correct;
    report.predictions.push_back({ex.video_id, predicted, gold});
  }
  report.n = static_cast<int>(dataset.size());
  report.accuracy = 100.0 * correct / report.n;
  return report;
}

nlohmann::json to_json(const QAReport& r) {
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : r.predictions) preds.push_back({{"video_id", p.video_id}, {"predicted", p.predicted}, {"gold", p.gold}});
  return {{"accuracy", fixed_precision(r.accuracy)}, {"n", r.n}, {"predictions", preds}};
}

std::vector<EnsembleCell> compare_ensembles(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset,
                                            std::span<const int> frame_counts,
                                            std::span<const EnsembleStrategy> strategies, bool use_temporal) {
  if (frame_counts.empty() || strategies.empty()) throw InputError("compare_ensembles: empty grid");
  RetrievalQueries q = build_queries(dataset, tokenizer, model.config().max_text_len, false);
  if (q.videos.size() < 2) throw InputError("retrieval needs at least two videos with captions");
  RetrievalScorer scorer(model, dataset, q);
  std::vector<EnsembleCell> grid;
  for (auto s : strategies) {
    for (int t : frame_counts) {
      SimilarityMatrix sim{scorer.score_matrix(s, t, use_temporal), q.gt};
      grid.push_back({s, t, make_report(sim)});
    }
  }
  return grid;
}

nlohmann::json to_json(const std::vector<EnsembleCell>& grid) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : grid) j.push_back({{"strategy", to_string(c.strategy)}, {"t_test", c.t_test}, {"report", to_json(c.report)}});
  return j;
}

std::string ensemble_plot_svg(const std::vector<EnsembleCell>& grid) {
  const double W = 480, H = 320, left = 50, right = 110, top = 20, bottom = 40;
  std::vector<int> ts;
  std::vector<EnsembleStrategy> strategies;
  for (const auto& c : grid) {
    if (std::find(ts.begin(), ts.end(), c.t_test) == ts.end()) ts.push_back(c.t_test);
    if (std::find(strategies.begin(), strategies.end(), c.strategy) == strategies.end()) strategies.push_back(c.strategy);
  }
  std::sort(ts.begin(), ts.end());
  auto x_of = [&](int t) {
    const auto pos = std::find(ts.begin(), ts.end(), t) - ts.begin();
    return ts.size() < 2 ? left + (W - left - right) / 2
                         : left + (W - left - right) * static_cast<double>(pos) / static_cast<double>(ts.size() - 1);
  };
  auto y_of = [&](double v) { return top + (H - top - bottom) * (1.0 - v / 100.0); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << y_of(0) << "\" x2=\"" << W - right << "\" y2=\"" << y_of(0)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << y_of(0) << "\" x2=\"" << left << "\" y2=\"" << y_of(100)
      << "\" stroke=\"black\"/>\n";
  for (int v = 0; v <= 100; v += 25) {
    svg << "<text x=\"" << left - 8 << "\" y=\"" << y_of(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
        << "</text>\n";
  }
  for (int t : ts) {
    svg << "<text x=\"" << x_of(t) << "\" y=\"" << H - bottom + 16 << "\" font-size=\"11\" text-anchor=\"middle\">" << t
        << "</text>\n";
  }
  svg << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 6
      << "\" font-size=\"12\" text-anchor=\"middle\">frames at inference</text>\n";
  svg << "<text x=\"14\" y=\"" << (top + H - bottom) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << (top + H - bottom) / 2 << ")\">avg recall</text>\n";
  for (std::size_t s = 0; s < strategies.size(); ++s) {
    std::vector<std::pair<int, double>> pts;
    for (const auto& c : grid) {
      if (c.strategy == strategies[s]) pts.emplace_back(c.t_test, c.report.avg_recall);
    }
    std::sort(pts.begin(), pts.end());
    const char* color = colors[s % 4];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [t, v] : pts) svg << x_of(t) << "," << y_of(v) << " ";
    svg << "\"/>\n";
    for (const auto& [t, v] : pts) {
      svg << "<circle cx=\"" << x_of(t) << "\" cy=\"" << y_of(v) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 16.0 * static_cast<double>(s + 1);
    svg << "<text x=\"" << W - right + 10 << "\" y=\"" << ly << "\" font-size=\"12\" fill=\"" << color << "\">"
        << to_string(strategies[s]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace oneframe
