#pragma once

#include <optional>
#include <span>
#include <vector>

#include "oneframe/model.hpp"

namespace oneframe {

// Teacher-forced decoder inputs: [CLS] a1 .. ak padded, with targets
// a1 .. ak [SEP] at the matching rows and kIgnoreLabel elsewhere.
struct DecoderExample {
  TokenSequence input;
  std::vector<int> targets;
};

// `answer` holds the answer word ids without specials.
DecoderExample make_decoder_example(const std::vector<int>& answer, int length);

// Vocabulary logits at every decoder row: (count * length) x vocab.
// question.states holds fused question states; its valid mask limits the
// cross-attention keys.
ag::Var decoder_logits(const Model& model, ag::Tape& tape, const FusedBatch& question,
                       std::span<const TokenSequence> decoder_inputs);

// Mean teacher-forced cross-entropy over answer tokens.
ag::Var qa_loss(const Model& model, ag::Tape& tape, const FusedBatch& question,
                std::span<const DecoderExample> examples);

// Greedy generation from [CLS]; stops after [SEP] or `max_len` tokens.
// [PAD], [CLS], [MASK] and [UNK] are never emitted. `allowed`, when given,
// further restricts emitted ids ([SEP] stays allowed).
TokenSequence decode_answer(const Model& model, const EncodedSequence& question_fused, int max_len,
                            const std::vector<int>* allowed = nullptr);

// Greedy generation restricted to the given answer token sequences (no [SEP]
// inside them): each step may only extend a prefix of some answer, and [SEP]
// is allowed only once the prefix is a complete answer.
TokenSequence decode_answer(const Model& model, const EncodedSequence& question_fused,
                            const std::vector<std::vector<int>>& answers);

// Fused question states for a question and its frames (early fusion).
EncodedSequence fuse_question(const Model& model, const TokenSequence& question,
                              std::span<const EncodedSequence> frame_encodings);

// Index of the largest score, lowest index on ties.
int argmax_lowest_index(std::span<const double> scores);

// Early-fusion match score of every candidate against the frames; returns
// the best candidate index. Throws InputError for an empty candidate list.
int multiple_choice_predict(const Model& model, std::span<const EncodedSequence> frame_encodings,
                            std::span<const TokenSequence> candidates, std::vector<double>* scores_out = nullptr);

}  // namespace oneframe
