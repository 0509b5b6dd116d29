#include "oneframe/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>

#include "oneframe/error.hpp"
#include "oneframe/tokenizer.hpp"

namespace oneframe {

void validate_example(const VideoExample& ex) {
  if (ex.video_id.empty()) throw InputError("video example without id");
  if (ex.frames.empty()) throw InputError("video " + ex.video_id + " has no frames");
  if (ex.captions.empty()) throw InputError("video " + ex.video_id + " has no captions");
  const Frame& first = ex.frames.front();
  for (const Frame& f : ex.frames) {
    if (f.size != first.size || f.channels != first.channels ||
        f.pixels.size() != static_cast<std::size_t>(f.size * f.size * f.channels)) {
      throw InputError("video " + ex.video_id + " has frames of differing shape");
    }
    for (float v : f.pixels) {
      if (!std::isfinite(v)) throw InputError("video " + ex.video_id + " has non-finite pixels");
    }
  }
}

namespace {

struct Color {
  const char* name;
  std::array<float, 3> rgb;
};

// Every pair differs by at least 0.5 in some channel.
constexpr std::array<Color, 16> kColors{{
    {"red", {1.0f, 0.0f, 0.0f}},    {"green", {0.0f, 1.0f, 0.0f}},  {"blue", {0.0f, 0.0f, 1.0f}},
    {"yellow", {1.0f, 1.0f, 0.0f}}, {"cyan", {0.0f, 1.0f, 1.0f}},   {"magenta", {1.0f, 0.0f, 1.0f}},
    {"white", {1.0f, 1.0f, 1.0f}},  {"orange", {1.0f, 0.5f, 0.0f}}, {"purple", {0.5f, 0.0f, 1.0f}},
    {"pink", {1.0f, 0.5f, 1.0f}},   {"lime", {0.5f, 1.0f, 0.0f}},   {"teal", {0.0f, 0.5f, 0.5f}},
    {"navy", {0.0f, 0.0f, 0.5f}},   {"maroon", {0.5f, 0.0f, 0.0f}}, {"olive", {0.5f, 0.5f, 0.0f}},
    {"gray", {0.5f, 0.5f, 0.5f}},
}};

// Chosen to differ at the 8-pixel patch scale: filled, hollow, wide, tall.
constexpr std::array<const char*, 4> kShapes{"square", "ring", "bar", "column"};
constexpr float kBackground = 0.1f;

bool inside_shape(int shape, double dx, double dy, double r) {
  switch (shape) {
    case 0: return std::abs(dx) <= r && std::abs(dy) <= r;
    case 1: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.25 * r * r;
    }
    case 2: return std::abs(dx) <= r && std::abs(dy) <= r / 3.0;
    case 3: return std::abs(dx) <= r / 3.0 && std::abs(dy) <= r;
    default: return false;
  }
}

Frame render(int image_size, int shape, int color, double cx, double cy, double r) {
  Frame f(image_size, 3);
  const auto& rgb = kColors[static_cast<std::size_t>(color)].rgb;
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const bool in = inside_shape(shape, x + 0.5 - cx, y + 0.5 - cy, r);
      for (int c = 0; c < 3; ++c) f.at(y, x, c) = in ? rgb[static_cast<std::size_t>(c)] : kBackground;
    }
  }
  return f;
}

// Adds pixel noise strictly inside +-jitter/2 so any two noisy copies of one
// frame differ by less than `jitter`.
Frame add_noise(const Frame& base, double jitter, Rng& rng) {
  Frame f = base;
  const double amp = 0.48 * jitter;
  for (float& v : f.pixels) {
    const double n = (2.0 * uniform01(rng) - 1.0) * amp;
    v = static_cast<float>(std::clamp(static_cast<double>(v) + n, 0.0, 1.0));
  }
  return f;
}

std::vector<int> combo_order(std::uint64_t seed) {
  std::vector<int> order(kShapes.size() * kColors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng = make_rng(seed, "combo-order");
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(uniform_index(rng, i + 1))]);
  }
  return order;
}

std::string object_name(int combo) {
  const int shape = combo % static_cast<int>(kShapes.size());
  const int color = combo / static_cast<int>(kShapes.size());
  return std::string(kColors[static_cast<std::size_t>(color)].name) + " " + kShapes[static_cast<std::size_t>(shape)];
}

std::string make_id(const std::string& prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%05d", i);
  return prefix + buf;
}

std::string fill_template(const std::string& templ, const std::string& object) {
  const std::string placeholder = "[something]";
  std::string out = templ;
  const auto pos = out.find(placeholder);
  if (pos != std::string::npos) out.replace(pos, placeholder.size(), object);
  return out;
}

}  // namespace

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names(kShapes.begin(), kShapes.end());
  return names;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& c : kColors) out.emplace_back(c.name);
    return out;
  }();
  return names;
}

const std::vector<std::string>& motion_templates() {
  static const std::vector<std::string> templates{
      "[something] circling clockwise from the top",
      "[something] circling counterclockwise to the top",
      "[something] circling clockwise from the bottom",
      "[something] circling counterclockwise to the bottom",
  };
  return templates;
}

std::vector<std::string> synthetic_vocabulary() {
  std::vector<std::string> texts = shape_names();
  texts.insert(texts.end(), color_names().begin(), color_names().end());
  texts.insert(texts.end(), motion_templates().begin(), motion_templates().end());
  texts.emplace_back("what shape is the object");
  texts.emplace_back("what color is the object");
  return texts;
}

Dataset generate_static_corpus(int n_videos, int frames_per_video, std::uint64_t seed, int image_size,
                               const std::string& id_prefix) {
  if (n_videos < 2) throw InputError("static corpus needs at least two videos");
  if (frames_per_video < 1) throw InputError("static corpus needs at least one frame per video");
  if (image_size < 16) throw InputError("static corpus needs image_size >= 16");
  const auto order = combo_order(seed);
  const double scale = image_size / 32.0;
  Dataset out;
  out.reserve(static_cast<std::size_t>(n_videos));
  for (int i = 0; i < n_videos; ++i) {
    Rng rng = make_rng(seed, "static-video", static_cast<std::uint64_t>(i));
    const int combo = order[static_cast<std::size_t>(i) % order.size()];
    const int shape = combo % static_cast<int>(kShapes.size());
    const int color = combo / static_cast<int>(kShapes.size());
    const double r = (6.0 + 3.0 * uniform01(rng)) * scale;
    const double margin = r + 1.0;
    const double cx = margin + (image_size - 2.0 * margin) * uniform01(rng);
    const double cy = margin + (image_size - 2.0 * margin) * uniform01(rng);
    const Frame base = render(image_size, shape, color, cx, cy, r);

    VideoExample ex;
    ex.video_id = make_id(id_prefix, i);
    for (int t = 0; t < frames_per_video; ++t) ex.frames.push_back(add_noise(base, kStaticJitter, rng));
    ex.captions.push_back(object_name(combo));
    ex.meta["object"] = object_name(combo);
    out.push_back(std::move(ex));
  }
  return out;
}

Dataset generate_temporal_corpus(int n_videos, int frames_per_video, std::uint64_t seed, int image_size,
                                 const std::string& id_prefix) {
  if (n_videos < 2) throw InputError("temporal corpus needs at least two videos");
  if (frames_per_video < 2) throw InputError("temporal corpus needs at least two frames per video (order undefinable)");
  if (image_size < 16) throw InputError("temporal corpus needs image_size >= 16");
  const auto order = combo_order(seed);
  const auto& templates = motion_templates();
  const double scale = image_size / 32.0;
  Dataset out;
  out.reserve(static_cast<std::size_t>(n_videos));
  for (int pair = 0; 2 * pair < n_videos; ++pair) {
    Rng rng = make_rng(seed, "temporal-pair", static_cast<std::uint64_t>(pair));
    const int combo = order[static_cast<std::size_t>(pair) % order.size()];
    const int shape = combo % static_cast<int>(kShapes.size());
    const int color = combo / static_cast<int>(kShapes.size());
    // Pair 0 mod 2 uses templates {0, 1}; pair 1 mod 2 uses {2, 3}.
    const int forward = (pair % 2) * 2;
    const double start_deg = forward == 0 ? 0.0 : 180.0;
    const double r = (3.5 + 1.0 * uniform01(rng)) * scale;
    const double orbit = 9.0 * scale;
    const double cx = image_size / 2.0 + (uniform01(rng) - 0.5) * 2.0 * scale;
    const double cy = image_size / 2.0 + (uniform01(rng) - 0.5) * 2.0 * scale;

    std::vector<Frame> frames;
    for (int t = 0; t < frames_per_video; ++t) {
      const double deg = start_deg + 360.0 * t / frames_per_video;
      const double rad = deg * std::numbers::pi / 180.0;
      const Frame base = render(image_size, shape, color, cx + orbit * std::sin(rad), cy - orbit * std::cos(rad), r);
      frames.push_back(add_noise(base, kStaticJitter, rng));
    }

    for (int k = 0; k < 2 && 2 * pair + k < n_videos; ++k) {
      VideoExample ex;
      ex.video_id = make_id(id_prefix, 2 * pair + k);
      ex.frames = frames;
      if (k == 1) std::reverse(ex.frames.begin(), ex.frames.end());
      const std::string& templ = templates[static_cast<std::size_t>(forward + k)];
      const std::string object = object_name(combo);
      ex.meta["template"] = templ;
      ex.meta["label"] = fill_template(templ, object);
      ex.meta["object"] = object;
      ex.meta["pair"] = std::to_string(pair);
      ex.captions.push_back(ex.meta["label"]);
      ex.flip_safe = false;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

Dataset generate_qa_corpus(int n_videos, int frames_per_video, std::uint64_t seed, QuestionKind kind, int image_size,
                           const std::string& id_prefix) {
  Dataset videos = generate_static_corpus(n_videos, frames_per_video, seed, image_size, id_prefix);
  Rng rng = make_rng(seed, "qa-kind");
  for (auto& ex : videos) {
    const std::string object = ex.meta.at("object");
    const auto space = object.find(' ');
    const std::string color = object.substr(0, space);
    const std::string shape = object.substr(space + 1);
    bool ask_shape = kind == QuestionKind::shape;
    if (kind == QuestionKind::mixed) ask_shape = uniform01(rng) < 0.5;
    ex.captions = {ask_shape ? "what shape is the object" : "what color is the object"};
    ex.meta["answer"] = ask_shape ? shape : color;
  }
  return videos;
}

Dataset one_per_reversal_pair(const Dataset& corpus) {
  Dataset out;
  for (const auto& ex : corpus) {
    auto it = ex.meta.find("pair");
    if (it == ex.meta.end()) throw InputError("video " + ex.video_id + " lacks meta.pair");
    const int pair = std::stoi(it->second);
    const auto& templates = motion_templates();
    const auto t = std::find(templates.begin(), templates.end(), ex.meta.at("template")) - templates.begin();
    // Alternate the kept member so the four templates stay balanced.
    if (t % 2 == (pair / 2) % 2) out.push_back(ex);
  }
  return out;
}

Dataset with_meta_captions(const Dataset& dataset, const std::string& key) {
  Dataset out = dataset;
  for (auto& ex : out) {
    auto it = ex.meta.find(key);
    if (it == ex.meta.end()) throw InputError("video " + ex.video_id + " lacks meta." + key);
    ex.captions = {it->second};
  }
  return out;
}

Augmentation sample_augmentation(int image_size, bool flip_allowed, Rng& rng) {
  const double area = image_size * static_cast<double>(image_size);
  Augmentation aug;
  const double target = area * (0.7 + 0.3 * uniform01(rng));
  const double log_ratio = std::log(3.0 / 4.0) + (std::log(4.0 / 3.0) - std::log(3.0 / 4.0)) * uniform01(rng);
  const double ratio = std::exp(log_ratio);
  aug.width = std::min<double>(image_size, std::sqrt(target * ratio));
  aug.height = std::min<double>(image_size, std::sqrt(target / ratio));
  aug.x0 = (image_size - aug.width) * uniform01(rng);
  aug.y0 = (image_size - aug.height) * uniform01(rng);
  const bool coin = uniform01(rng) < 0.5;
  aug.flip = flip_allowed && coin;
  return aug;
}

Frame apply_augmentation(const Frame& frame, const Augmentation& aug) {
  const int n = frame.size;
  Frame out(n, frame.channels);
  auto sample = [&](double y, double x, int c) {
    y = std::clamp(y, 0.0, n - 1.0);
    x = std::clamp(x, 0.0, n - 1.0);
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, n - 1);
    const int x1 = std::min(x0 + 1, n - 1);
    const double fy = y - y0;
    const double fx = x - x0;
    return (1 - fy) * ((1 - fx) * frame.at(y0, x0, c) + fx * frame.at(y0, x1, c)) +
           fy * ((1 - fx) * frame.at(y1, x0, c) + fx * frame.at(y1, x1, c));
  };
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int src_x = aug.flip ? n - 1 - x : x;
      const double sy = aug.y0 + (y + 0.5) * aug.height / n - 0.5;
      const double sx = aug.x0 + (src_x + 0.5) * aug.width / n - 0.5;
      for (int c = 0; c < frame.channels; ++c) out.at(y, x, c) = static_cast<float>(sample(sy, sx, c));
    }
  }
  return out;
}

}  // namespace oneframe
