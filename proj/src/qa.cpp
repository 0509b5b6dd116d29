#include "oneframe/qa.hpp"

#include <algorithm>
#include <set>

#include "oneframe/error.hpp"
#include "oneframe/fusion.hpp"
#include "oneframe/objectives.hpp"

namespace oneframe {

DecoderExample make_decoder_example(const std::vector<int>& answer, int length) {
  if (static_cast<int>(answer.size()) + 1 > length) throw InputError("answer does not fit the decoder length");
  DecoderExample ex;
  ex.input.ids.assign(static_cast<std::size_t>(length), kPad);
  ex.input.mask.assign(static_cast<std::size_t>(length), 0);
  ex.targets.assign(static_cast<std::size_t>(length), kIgnoreLabel);
  ex.input.ids[0] = kCls;
  ex.input.mask[0] = 1;
  for (std::size_t i = 0; i < answer.size(); ++i) {
    ex.input.ids[i + 1] = answer[i];
    ex.input.mask[i + 1] = 1;
    ex.targets[i] = answer[i];
  }
  ex.targets[answer.size()] = kSep;
  return ex;
}

ag::Var decoder_logits(const Model& model, ag::Tape& tape, const FusedBatch& question,
                       std::span<const TokenSequence> decoder_inputs) {
  if (!model.has_decoder()) throw ConfigError("model has no answer decoder");
  const ModelConfig& cfg = model.config();
  const int count = static_cast<int>(decoder_inputs.size());
  if (count != question.count) throw InputError("decoder_logits: one question per decoder input");
  if (count == 0) throw InputError("decoder_logits: empty batch");
  const int len = static_cast<int>(decoder_inputs.front().ids.size());
  if (len < 1 || len > cfg.max_text_len) throw InputError("decoder input length out of range");

  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<unsigned char> valid;
  for (const auto& t : decoder_inputs) {
    validate_tokens(t, cfg.vocab_size);
    if (static_cast<int>(t.ids.size()) != len) throw InputError("decoder inputs differ in length");
    ids.insert(ids.end(), t.ids.begin(), t.ids.end());
    valid.insert(valid.end(), t.mask.begin(), t.mask.end());
    for (int i = 0; i < len; ++i) positions.push_back(i);
  }
  const auto& P = model.params();
  ag::Var x = ag::add(ag::gather_rows(tape.parameter(P.get("dec.token_embed")), std::move(ids)),
                      ag::gather_rows(tape.parameter(P.get("dec.pos")), std::move(positions)));
  auto self_layout = block_layout(count, len, valid, true);
  auto cross = std::make_shared<ag::AttentionLayout>();
  for (int b = 0; b < count; ++b) cross->spans.push_back({b * len, len, b * question.length, question.length});
  cross->key_valid = question.valid;
  for (int i = 0; i < cfg.multimodal_layers; ++i) {
    x = transformer_layer(model, tape, "dec.layers." + std::to_string(i), x, self_layout, &question.states, cross);
  }
  x = norm(model, tape, "dec.ln_f", x);
  ag::Var h = ag::gelu(linear(model, tape, "dec.lm.dense", x));
  h = norm(model, tape, "dec.lm.ln", h);
  return linear(model, tape, "dec.lm.decoder", h);
}

ag::Var qa_loss(const Model& model, ag::Tape& tape, const FusedBatch& question,
                std::span<const DecoderExample> examples) {
  std::vector<TokenSequence> inputs;
  std::vector<int> targets;
  for (const auto& ex : examples) {
    inputs.push_back(ex.input);
    targets.insert(targets.end(), ex.targets.begin(), ex.targets.end());
  }
  return ag::cross_entropy(decoder_logits(model, tape, question, inputs), targets);
}

TokenSequence decode_answer(const Model& model, const EncodedSequence& question_fused, int max_len,
                            const std::vector<int>* allowed) {
  if (max_len < 1) throw InputError("decode_answer: max_len must be at least 1");
  const ModelConfig& cfg = model.config();
  max_len = std::min(max_len, cfg.max_text_len - 1);
  std::vector<unsigned char> permitted(static_cast<std::size_t>(cfg.vocab_size), 1);
  if (allowed != nullptr) {
    std::fill(permitted.begin(), permitted.end(), 0);
    for (int id : *allowed) {
      if (id >= 0 && id < cfg.vocab_size) permitted[static_cast<std::size_t>(id)] = 1;
    }
    permitted[kSep] = 1;
  }
  for (int id : {kPad, kCls, kMask, kUnk}) permitted[static_cast<std::size_t>(id)] = 0;

  TokenSequence out;
  std::vector<int> prefix{kCls};
  while (static_cast<int>(out.ids.size()) < max_len) {
    ag::Tape tape(false);
    FusedBatch q{tape.constant(question_fused.states), ag::Var(), 1, question_fused.length(), question_fused.mask};
    TokenSequence input{prefix, std::vector<unsigned char>(prefix.size(), 1)};
    ag::Var logits = decoder_logits(model, tape, q, std::span<const TokenSequence>(&input, 1));
    const auto last = logits.value().row(logits.rows() - 1);
    int best = -1;
    for (int id = 0; id < cfg.vocab_size; ++id) {
      if (!permitted[static_cast<std::size_t>(id)]) continue;
      if (best < 0 || last(id) > last(best)) best = id;
    }
    out.ids.push_back(best);
    out.mask.push_back(1);
    if (best == kSep) break;
    prefix.push_back(best);
  }
  return out;
}

TokenSequence decode_answer(const Model& model, const EncodedSequence& question_fused,
                            const std::vector<std::vector<int>>& answers) {
  if (answers.empty()) throw InputError("decode_answer: no candidate answers");
  const ModelConfig& cfg = model.config();
  for (const auto& a : answers) {
    if (a.empty() || static_cast<int>(a.size()) > cfg.max_text_len - 2) throw InputError("decode_answer: bad candidate length");
    for (int id : a) {
      if (id < kFirstWord || id >= cfg.vocab_size) throw InputError("decode_answer: candidate id out of range");
    }
  }
  TokenSequence out;
  std::vector<int> prefix{kCls};
  for (;;) {
    const std::size_t pos = out.ids.size();
    std::set<int> next;
    for (const auto& a : answers) {
      if (a.size() < pos || !std::equal(out.ids.begin(), out.ids.end(), a.begin())) continue;
      next.insert(a.size() == pos ? kSep : a[pos]);
    }
    ag::Tape tape(false);
    FusedBatch q{tape.constant(question_fused.states), ag::Var(), 1, question_fused.length(), question_fused.mask};
    TokenSequence input{prefix, std::vector<unsigned char>(prefix.size(), 1)};
    ag::Var logits = decoder_logits(model, tape, q, std::span<const TokenSequence>(&input, 1));
    const auto last = logits.value().row(logits.rows() - 1);
    int best = -1;
    for (int id : next) {
      if (best < 0 || last(id) > last(best)) best = id;
    }
    out.ids.push_back(best);
    out.mask.push_back(1);
    if (best == kSep) break;
    prefix.push_back(best);
  }
  return out;
}

EncodedSequence fuse_question(const Model& model, const TokenSequence& question,
                              std::span<const EncodedSequence> frame_encodings) {
  if (frame_encodings.empty()) throw InputError("fuse_question: no frames");
  const EncodedSequence text = encode_text(model, question);
  FusedOutput fused = multimodal_fuse(model, text, concat_sequences(frame_encodings));
  return EncodedSequence{std::move(fused.states), text.mask};
}

int argmax_lowest_index(std::span<const double> scores) {
  if (scores.empty()) throw InputError("argmax of an empty list");
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

int multiple_choice_predict(const Model& model, std::span<const EncodedSequence> frame_encodings,
                            std::span<const TokenSequence> candidates, std::vector<double>* scores_out) {
  if (candidates.empty()) throw InputError("multiple_choice_predict: no candidates");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) {
    scores.push_back(predict_early_fusion(model, encode_text(model, c), frame_encodings));
  }
  const int best = argmax_lowest_index(scores);
  if (scores_out != nullptr) *scores_out = std::move(scores);
  return best;
}

}  // namespace oneframe
