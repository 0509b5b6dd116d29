#pragma once

#include <span>

#include "oneframe/model.hpp"

namespace oneframe {

// (test_frames x train_frames) weights of endpoint-aligned linear
// interpolation: output row i samples source coordinate
// i * (train_frames - 1) / (test_frames - 1); a single output row takes row 0.
Mat interpolation_matrix(int train_frames, int test_frames);

// Temporal position table resampled to `test_frames` rows.
Mat interpolate_temporal_encoding(const Mat& table, int test_frames);

// Adds each frame's temporal encoding to all of its tokens and runs the
// temporal encoder over the concatenated tokens of every video.
// `frames` holds videos * frames_per_video encodings, video-major.
// Result: one sequence of frames_per_video * L_v rows per video.
SequenceBatch temporal_encode(const Model& model, ag::Tape& tape, const SequenceBatch& frames, int videos,
                              int frames_per_video);

// Mean of the per-frame CLS rows of a temporally encoded batch (videos x D).
ag::Var temporal_pooled(ag::Tape& tape, const SequenceBatch& encoded, int frames_per_video, int frame_len);

// Match logit of the temporal model for one text and an ordered frame list.
double predict_temporal(const Model& model, const EncodedSequence& text, std::span<const EncodedSequence> frames);

}  // namespace oneframe
