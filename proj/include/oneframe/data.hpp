#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oneframe/model.hpp"
#include "oneframe/rng.hpp"

namespace oneframe {

struct VideoExample {
  std::string video_id;
  std::vector<Frame> frames;
  std::vector<std::string> captions;
  // Optional annotations: "template", "label", "object", "answer".
  std::map<std::string, std::string> meta;
  // Direction-defined clips must never be mirrored.
  bool flip_safe = true;

  bool operator==(const VideoExample&) const = default;
};

using Dataset = std::vector<VideoExample>;

// Throws InputError when an example breaks the VideoExample invariants.
void validate_example(const VideoExample& ex);

// ---- synthetic corpora --------------------------------------------------------

inline constexpr double kStaticJitter = 0.05;

const std::vector<std::string>& shape_names();
const std::vector<std::string>& color_names();
// Motion templates with a "[something]" object placeholder. Entries 2k and
// 2k + 1 are exact time reversals of each other; all four share one frame
// multiset when frames_per_video is even.
const std::vector<std::string>& motion_templates();
// Every word the generators can emit.
std::vector<std::string> synthetic_vocabulary();

// One (shape, color) per video, identical in every frame up to pixel noise
// below kStaticJitter. Caption: "<color> <shape>".
Dataset generate_static_corpus(int n_videos, int frames_per_video, std::uint64_t seed, int image_size = 32,
                               const std::string& id_prefix = "static");

// One object circling through a motion template. Videos come in pairs whose
// frames are exact reversals (meta["pair"] holds the pair index); captions
// hold the filled label.
Dataset generate_temporal_corpus(int n_videos, int frames_per_video, std::uint64_t seed, int image_size = 32,
                                 const std::string& id_prefix = "temporal");

enum class QuestionKind { shape, color, mixed };

// Static videos paired with a question caption and meta["answer"].
Dataset generate_qa_corpus(int n_videos, int frames_per_video, std::uint64_t seed, QuestionKind kind,
                           int image_size = 32, const std::string& id_prefix = "qa");

// Keeps one video of every reversal pair of a temporal corpus, alternating
// between the two members so templates stay balanced. No two kept videos
// share a frame multiset, so exact score ties between them cannot occur.
Dataset one_per_reversal_pair(const Dataset& corpus);

// Copy whose single caption is meta[key] (e.g. "template" for the template
// task). Throws InputError when a video lacks the key.
Dataset with_meta_captions(const Dataset& dataset, const std::string& key);

// ---- augmentation -------------------------------------------------------------

// Crop window in pixel coordinates plus a horizontal flip flag; one draw is
// applied to every frame of a clip.
struct Augmentation {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;
  bool flip = false;
};

// Random resized crop (area 70-100%, aspect 3:4 to 4:3) and a fair-coin
// horizontal flip when `flip_allowed`.
Augmentation sample_augmentation(int image_size, bool flip_allowed, Rng& rng);
// Bilinear resampling of the crop window back to the full frame size.
Frame apply_augmentation(const Frame& frame, const Augmentation& aug);

// ---- SSv2-style tasks -----------------------------------------------------------

struct SSv2Annotation {
  std::string id;
  std::string template_text;
  std::string label;
  std::vector<std::string> placeholders;
  std::string split;  // "train" or "validation"
};

// Label must equal the template with each bracketed placeholder replaced in
// order (case-insensitive). Returns an error description or "" when valid.
std::string check_annotation(const SSv2Annotation& a);

// Parses a JSON list in the public annotation schema. Records lacking a
// "split" field get `default_split`.
std::vector<SSv2Annotation> parse_ssv2_annotations(const nlohmann::json& j, const std::string& default_split);
nlohmann::json to_json(const std::vector<SSv2Annotation>& annotations);

// Annotations for a temporal corpus (template/label/object meta required).
std::vector<SSv2Annotation> to_ssv2_annotations(const Dataset& dataset, const std::string& split);

struct ManifestRecord {
  std::string video_id;
  std::string frames_path;
  std::vector<std::string> captions;
  std::map<std::string, std::string> meta;
  bool flip_safe = true;
};

struct SSv2Tasks {
  std::vector<ManifestRecord> template_train;
  std::vector<ManifestRecord> template_test;
  std::vector<ManifestRecord> label_train;
  std::vector<ManifestRecord> label_test;
  std::vector<std::string> template_queries;  // distinct, first-seen order
  std::vector<std::string> label_queries;     // distinct, first-seen order
  std::vector<std::string> warnings;
  std::vector<std::string> rejected;
};

// Template task: queries are templates, test set is `per_template` seeded
// draws of validation videos per template. Label task: same videos with
// their labels as queries. Training annotations pass through unchanged.
// `frames_path_pattern` may contain "{id}".
SSv2Tasks build_ssv2_tasks(const std::vector<SSv2Annotation>& annotations, int per_template, std::uint64_t seed,
                           const std::string& frames_path_pattern = "frames/{id}.npy", bool flip_safe = false);

// ---- manifests -------------------------------------------------------------------

// JSON-lines manifest, frames stored as .npy arrays (T x H x W x C, float32)
// under `frames_subdir` relative to the manifest's directory.
void write_manifest(const std::filesystem::path& path, const Dataset& dataset, const std::string& frames_subdir = "frames");
void write_manifest_records(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

// Validates the schema line by line; FormatError messages name the line or
// the missing frame file. Duplicate video ids are rejected.
Dataset load_manifest(const std::filesystem::path& path);

void save_npy(const std::filesystem::path& path, const std::vector<Frame>& frames);
std::vector<Frame> load_npy(const std::filesystem::path& path);

}  // namespace oneframe
