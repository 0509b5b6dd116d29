#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "oneframe/data.hpp"
#include "oneframe/fusion.hpp"
#include "oneframe/model.hpp"
#include "oneframe/tokenizer.hpp"

namespace oneframe {

// scores(i, j): text i against video j. gt[i] lists every video that counts
// as a correct answer for text i (one entry in the usual protocol).
struct SimilarityMatrix {
  Mat scores;
  std::vector<std::vector<int>> gt;

  // Throws InputError on non-finite scores or invalid/empty gt lists.
  void validate() const;
};

// 1-based rank of the best-scoring ground-truth video of row i; every other
// video scoring >= that score ranks ahead of it.
int gt_rank(const SimilarityMatrix& sim, int row);

// Percentage of rows whose ground truth ranks within the top k. k larger than
// the number of videos is treated as the number of videos.
double recall_at_k(const SimilarityMatrix& sim, int k);

struct RetrievalReport {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double avg_recall = 0.0;
  int n_text = 0;
  int n_video = 0;
};

RetrievalReport make_report(const SimilarityMatrix& sim);
nlohmann::json to_json(const RetrievalReport& r);

struct RetrievalOptions {
  EnsembleStrategy strategy = EnsembleStrategy::concat;
  int t_test = 1;
  bool paragraph_mode = false;
  // Route concat scoring through the temporal encoder when the model has one.
  bool use_temporal = true;
};

// Text queries of a dataset with their ground-truth videos. Identical query
// strings are merged into one query whose ground truth is every video that
// carries them. Videos without captions are skipped with a warning.
struct RetrievalQueries {
  std::vector<std::string> texts;
  std::vector<TokenSequence> tokens;
  std::vector<std::vector<int>> gt;
  std::vector<int> videos;  // dataset indices of the scored videos
  std::vector<std::string> warnings;
};

RetrievalQueries build_queries(const Dataset& dataset, const Tokenizer& tokenizer, int max_text_len,
                               bool paragraph_mode);

// Caches frame encodings, text encodings and per-frame scores so that many
// (strategy, T_test) cells can share work. Scores are deterministic.
class RetrievalScorer {
 public:
  RetrievalScorer(const Model& model, const Dataset& dataset, const RetrievalQueries& queries);

  // n_text x n_video score matrix for one strategy and frame count.
  Mat score_matrix(EnsembleStrategy strategy, int t_test, bool use_temporal);

 private:
  const EncodedSequence& frame_encoding(int video, int frame);
  const std::vector<double>& frame_scores(int video, int frame);
  std::vector<double> concat_scores(int video, const std::vector<int>& frames, bool temporal);

  const Model& model_;
  const Dataset& dataset_;
  const RetrievalQueries& queries_;
  Mat text_states_;
  std::vector<unsigned char> text_valid_;
  std::map<std::pair<int, int>, EncodedSequence> frames_;
  std::map<std::pair<int, int>, std::vector<double>> frame_scores_;
};

// Full text-to-video evaluation. Warnings about skipped videos are appended
// to `warnings` when given.
RetrievalReport evaluate_retrieval(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset,
                                   const RetrievalOptions& options, std::vector<std::string>* warnings = nullptr);

struct QAPrediction {
  std::string video_id;
  std::string predicted;
  std::string gold;
};

struct QAReport {
  double accuracy = 0.0;
  int n = 0;
  std::vector<QAPrediction> predictions;
};

nlohmann::json to_json(const QAReport& r);

// Exact-match accuracy of greedy answers over concatenated frames. With
// `restrict_to_answers`, decoding may only produce one of the gold answers
// present in the dataset.
QAReport evaluate_qa(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset, int t_test,
                     bool restrict_to_answers = true);

struct EnsembleCell {
  EnsembleStrategy strategy;
  int t_test = 0;
  RetrievalReport report;
};

// Every (strategy, T_test) cell scored with the same weights.
std::vector<EnsembleCell> compare_ensembles(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset,
                                            std::span<const int> frame_counts,
                                            std::span<const EnsembleStrategy> strategies,
                                            bool use_temporal = true);

nlohmann::json to_json(const std::vector<EnsembleCell>& grid);

// Line plot of average recall against T_test, one line per strategy.
std::string ensemble_plot_svg(const std::vector<EnsembleCell>& grid);

}  // namespace oneframe
