#include "doctest.h"
#include "helpers.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "oneframe/data.hpp"
#include "oneframe/error.hpp"

using namespace oneframe;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("oneframe_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

float max_diff(const Frame& a, const Frame& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

std::vector<SSv2Annotation> fixture() {
  std::ifstream in(fs::path(ONEFRAME_TEST_DATA) / "ssv2_fixture.json");
  REQUIRE(in);
  return parse_ssv2_annotations(nlohmann::json::parse(in), "validation");
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("static corpus shape, jitter bound and determinism") {
    const Dataset a = generate_static_corpus(64, 8, 1);
    CHECK(a.size() == 64);
    std::set<std::string> ids;
    for (const auto& ex : a) {
      CHECK_NOTHROW(validate_example(ex));
      CHECK(ex.frames.size() == 8);
      CHECK(ex.captions.size() == 1);
      CHECK(ex.captions[0] == ex.meta.at("object"));
      ids.insert(ex.video_id);
      for (const auto& f : ex.frames) {
        for (const auto& g : ex.frames) CHECK(max_diff(f, g) <= kStaticJitter);
      }
    }
    CHECK(ids.size() == 64);
    CHECK(generate_static_corpus(64, 8, 1) == a);
    CHECK(!(generate_static_corpus(64, 8, 2) == a));
    const Dataset big = generate_static_corpus(100, 1, 1);
    CHECK(big.size() == 100);
    CHECK_THROWS_AS(generate_static_corpus(1, 8, 1), InputError);
  }

  TEST_CASE("static captions name a colour and a shape") {
    const auto& shapes = shape_names();
    const auto& colors = color_names();
    for (const auto& ex : generate_static_corpus(64, 1, 3)) {
      const auto words = Tokenizer::split_words(ex.captions[0]);
      REQUIRE(words.size() == 2);
      CHECK(std::find(colors.begin(), colors.end(), words[0]) != colors.end());
      CHECK(std::find(shapes.begin(), shapes.end(), words[1]) != shapes.end());
    }
  }

  TEST_CASE("temporal corpus: reversal pairs share frames, templates are balanced") {
    const Dataset d = generate_temporal_corpus(64, 4, 5);
    CHECK(d.size() == 64);
    std::map<std::string, int> per_template;
    for (std::size_t i = 0; i < d.size(); i += 2) {
      const auto& a = d[i];
      const auto& b = d[i + 1];
      CHECK(a.meta.at("pair") == b.meta.at("pair"));
      CHECK(a.meta.at("template") != b.meta.at("template"));
      std::vector<Frame> reversed = a.frames;
      std::reverse(reversed.begin(), reversed.end());
      CHECK(reversed == b.frames);
      CHECK(!a.flip_safe);
      CHECK(!b.flip_safe);
    }
    for (const auto& ex : d) {
      ++per_template[ex.meta.at("template")];
      CHECK(ex.meta.at("label").find("[something]") == std::string::npos);
      CHECK(ex.captions[0] == ex.meta.at("label"));
    }
    CHECK(per_template.size() == 4);
    for (const auto& [t, n] : per_template) CHECK(n == 16);
    CHECK(generate_temporal_corpus(64, 4, 5) == d);
    CHECK_THROWS_AS(generate_temporal_corpus(8, 1, 5), InputError);
  }

  TEST_CASE("all four motion templates visit the same orbit positions") {
    const Dataset d = generate_temporal_corpus(8, 4, 6);
    // Object position per frame: centroid of bright pixels.
    auto centroid = [](const Frame& f) {
      double sx = 0, sy = 0, n = 0;
      for (int y = 0; y < f.size; ++y) {
        for (int x = 0; x < f.size; ++x) {
          double m = 0;
          for (int c = 0; c < 3; ++c) m = std::max(m, static_cast<double>(f.at(y, x, c)));
          if (m > 0.3) {
            sx += x;
            sy += y;
            n += 1;
          }
        }
      }
      return std::pair<double, double>{sx / n, sy / n};
    };
    std::set<std::string> templates;
    for (const auto& ex : d) {
      templates.insert(ex.meta.at("template"));
      std::vector<std::pair<double, double>> pos;
      double mx = 0, my = 0;
      for (const auto& f : ex.frames) {
        pos.push_back(centroid(f));
        mx += pos.back().first / 4;
        my += pos.back().second / 4;
      }
      // Clock angle of each frame around the orbit centre, in quarter turns.
      std::multiset<int> quarters;
      for (const auto& [x, y] : pos) {
        const double deg = std::atan2(x - mx, my - y) * 180.0 / std::numbers::pi;
        quarters.insert(static_cast<int>(std::lround((deg < 0 ? deg + 360.0 : deg) / 90.0)) % 4);
      }
      CHECK(quarters == std::multiset<int>{0, 1, 2, 3});
    }
    CHECK(templates.size() == 4);
  }

  TEST_CASE("one video per reversal pair keeps templates balanced") {
    const Dataset d = one_per_reversal_pair(generate_temporal_corpus(64, 4, 7));
    CHECK(d.size() == 32);
    std::map<std::string, int> per_template;
    std::set<std::string> pairs;
    for (const auto& ex : d) {
      ++per_template[ex.meta.at("template")];
      pairs.insert(ex.meta.at("pair"));
    }
    CHECK(pairs.size() == 32);
    for (const auto& [t, n] : per_template) CHECK(n == 8);
    const Dataset templ = with_meta_captions(d, "template");
    CHECK(templ[0].captions == std::vector<std::string>{d[0].meta.at("template")});
    CHECK_THROWS_AS(with_meta_captions(generate_static_corpus(2, 1, 1), "template"), InputError);
  }

  TEST_CASE("augmentation never flips direction-defined clips") {
    Rng rng = make_rng(8, "aug");
    int flips = 0;
    for (int i = 0; i < 500; ++i) {
      const Augmentation safe = sample_augmentation(32, true, rng);
      const Augmentation unsafe = sample_augmentation(32, false, rng);
      flips += safe.flip ? 1 : 0;
      CHECK(!unsafe.flip);
      CHECK(unsafe.width * unsafe.height >= 0.7 * 32 * 32 - 1e-9);
      CHECK(unsafe.x0 >= 0.0);
      CHECK(unsafe.y0 >= 0.0);
      CHECK(unsafe.x0 + unsafe.width <= 32.0 + 1e-9);
      CHECK(unsafe.y0 + unsafe.height <= 32.0 + 1e-9);
    }
    CHECK(flips > 200);
    CHECK(flips < 300);
  }

  TEST_CASE("identity augmentation and flips") {
    Rng rng = make_rng(9, "img");
    const Frame f = testing::random_frame(16, rng);
    const Frame same = apply_augmentation(f, Augmentation{0, 0, 16, 16, false});
    CHECK(max_diff(f, same) < 1e-6f);
    const Frame flipped = apply_augmentation(f, Augmentation{0, 0, 16, 16, true});
    CHECK(std::abs(flipped.at(3, 0, 1) - f.at(3, 15, 1)) < 1e-6f);
  }

  TEST_CASE("manifest round trip") {
    const fs::path dir = scratch_dir("roundtrip");
    Dataset d = generate_temporal_corpus(6, 4, 10);
    d[0].captions.push_back("second caption");
    write_manifest(dir / "m.jsonl", d);
    CHECK(fs::exists(dir / "frames" / (d[0].video_id + ".npy")));
    CHECK(load_manifest(dir / "m.jsonl") == d);
    const fs::path other = scratch_dir("roundtrip_static");
    const Dataset s = generate_static_corpus(5, 3, 11);
    write_manifest(other / "s.jsonl", s);
    CHECK(load_manifest(other / "s.jsonl") == s);
  }

  TEST_CASE("manifest validation names the offending line or file") {
    const fs::path dir = scratch_dir("invalid");
    const std::string inline_frames = R"("frames": {"shape": [1, 16, 16, 3], "data": )" +
                                      nlohmann::json(std::vector<float>(768, 0.5f)).dump() + "}";
    const std::string good_a = R"({"video_id": "a", "captions": ["red square"], )" + inline_frames + "}";
    const std::string good_b = R"({"video_id": "b", "captions": ["blue ring"], )" + inline_frames + "}";
    write_lines(dir / "ok.jsonl", {good_a, good_b});
    CHECK(load_manifest(dir / "ok.jsonl").size() == 2);

    write_lines(dir / "dup.jsonl", {good_a, good_b, good_a});
    try {
      load_manifest(dir / "dup.jsonl");
      FAIL("duplicate accepted");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }

    write_lines(dir / "empty_captions.jsonl",
                {R"({"video_id": "a", "captions": [], )" + inline_frames + "}"});
    CHECK_THROWS_AS(load_manifest(dir / "empty_captions.jsonl"), FormatError);

    write_lines(dir / "missing.jsonl", {R"({"video_id": "a", "captions": ["x"], "frames": "frames/nope.npy"})"});
    try {
      load_manifest(dir / "missing.jsonl");
      FAIL("missing frames accepted");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("nope.npy") != std::string::npos);
    }

    write_lines(dir / "garbage.jsonl", {good_a, "{not json"});
    try {
      load_manifest(dir / "garbage.jsonl");
      FAIL("garbage accepted");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    CHECK_THROWS_AS(load_manifest(dir / "absent.jsonl"), FormatError);
  }

  TEST_CASE("npy round trip") {
    const fs::path dir = scratch_dir("npy");
    Rng rng = make_rng(12, "npy");
    std::vector<Frame> frames{testing::random_frame(8, rng), testing::random_frame(8, rng)};
    save_npy(dir / "x.npy", frames);
    CHECK(load_npy(dir / "x.npy") == frames);
    std::ifstream in(dir / "x.npy", std::ios::binary);
    std::string magic(6, '\0');
    in.read(magic.data(), 6);
    CHECK(magic == "\x93NUMPY");
  }

  TEST_CASE("annotation checks") {
    SSv2Annotation a{"1", "Putting [something] into [something]", "Putting a pen into a cup", {"a pen", "a cup"}, "validation"};
    CHECK(check_annotation(a).empty());
    a.label = "putting A PEN into a cup";
    CHECK(check_annotation(a).empty());
    a.label = "Putting a pen onto a cup";
    CHECK(!check_annotation(a).empty());
    a.label = "Putting a pen into a cup";
    a.split = "test";
    CHECK(!check_annotation(a).empty());
  }

  TEST_CASE("SSv2 task builder on the bundled fixture") {
    const auto annotations = fixture();
    CHECK(annotations.size() == 160);
    const SSv2Tasks tasks = build_ssv2_tasks(annotations, 12, 1);
    CHECK(tasks.rejected.empty());
    CHECK(tasks.warnings.empty());
    CHECK(tasks.template_test.size() == 36);
    CHECK(tasks.label_test.size() == 36);
    CHECK(tasks.template_queries.size() == 3);
    CHECK(tasks.template_train.size() == 100);
    CHECK(tasks.label_train.size() == 100);

    std::map<std::string, int> per_template;
    std::set<std::string> labels;
    std::set<std::string> val_ids;
    for (const auto& a : annotations) {
      if (a.split == "validation") val_ids.insert(a.id);
    }
    for (std::size_t i = 0; i < tasks.template_test.size(); ++i) {
      const auto& t = tasks.template_test[i];
      const auto& l = tasks.label_test[i];
      CHECK(t.video_id == l.video_id);
      CHECK(val_ids.contains(t.video_id));
      CHECK(t.captions == std::vector<std::string>{t.meta.at("template")});
      CHECK(l.captions == std::vector<std::string>{l.meta.at("label")});
      CHECK(t.frames_path == "frames/" + t.video_id + ".npy");
      CHECK(!t.flip_safe);
      ++per_template[t.meta.at("template")];
      labels.insert(lower(l.meta.at("label")));
    }
    for (const auto& [templ, n] : per_template) CHECK(n == 12);
    CHECK(tasks.label_queries.size() == labels.size());
    CHECK(tasks.label_queries.size() < 36);

    const SSv2Tasks again = build_ssv2_tasks(annotations, 12, 1);
    CHECK(again.template_test.size() == tasks.template_test.size());
    for (std::size_t i = 0; i < tasks.template_test.size(); ++i) {
      CHECK(again.template_test[i].video_id == tasks.template_test[i].video_id);
    }
  }

  TEST_CASE("SSv2 builder: short templates, rejects, real-scale arithmetic") {
    auto annotations = fixture();
    const SSv2Tasks all = build_ssv2_tasks(annotations, 25, 2);
    CHECK(all.template_test.size() == 60);
    CHECK(all.warnings.size() == 3);

    annotations.push_back({"bad", "Lifting [something] up", "Dropping a cup", {"a cup"}, "validation"});
    const SSv2Tasks with_bad = build_ssv2_tasks(annotations, 12, 1);
    CHECK(with_bad.rejected.size() == 1);
    CHECK(with_bad.rejected[0].rfind("bad:", 0) == 0);
    CHECK(with_bad.template_test.size() == 36);

    std::vector<SSv2Annotation> real;
    for (int t = 0; t < 174; ++t) {
      const std::string templ = "Template " + std::to_string(t) + " with [something]";
      for (int v = 0; v < 14; ++v) {
        const std::string object = "object" + std::to_string(v);
        real.push_back({std::to_string(t * 100 + v), templ, "Template " + std::to_string(t) + " with " + object, {object},
                        "validation"});
      }
    }
    const SSv2Tasks scaled = build_ssv2_tasks(real, 12, 3);
    CHECK(scaled.template_queries.size() == 174);
    CHECK(scaled.template_test.size() == 174 * 12);
    CHECK(scaled.template_test.size() == 2088);
  }

  TEST_CASE("SSv2 annotation parsing") {
    const nlohmann::json raw = nlohmann::json::parse(
        R"([{"id": "7", "template": "Lifting [something] up", "label": "Lifting a cup up", "placeholders": ["a cup"]}])");
    const auto parsed = parse_ssv2_annotations(raw, "train");
    REQUIRE(parsed.size() == 1);
    CHECK(parsed[0].split == "train");
    CHECK(parsed[0].placeholders == std::vector<std::string>{"a cup"});
    CHECK(parse_ssv2_annotations(to_json(parsed), "validation")[0].split == "train");
    CHECK_THROWS_AS(parse_ssv2_annotations(nlohmann::json::parse(R"({"id": 1})"), "train"), FormatError);
    CHECK_THROWS_AS(parse_ssv2_annotations(nlohmann::json::parse(R"([{"id": "1"}])"), "train"), FormatError);
  }

  TEST_CASE("temporal corpus converts to valid SSv2 annotations") {
    const auto anns = to_ssv2_annotations(generate_temporal_corpus(8, 4, 13), "validation");
    CHECK(anns.size() == 8);
    for (const auto& a : anns) CHECK(check_annotation(a).empty());
  }

  TEST_CASE("tokenizer") {
    Tokenizer tok = Tokenizer::from_texts({"Red Square", "blue ring"});
    CHECK(tok.vocab_size() == kFirstWord + 4);
    const TokenSequence t = tok.encode("red square", 6);
    CHECK(t.ids == std::vector<int>{kCls, tok.id_of("red"), tok.id_of("square"), kSep, kPad, kPad});
    CHECK(t.mask == std::vector<unsigned char>{1, 1, 1, 1, 0, 0});
    CHECK(tok.id_of("green") == kUnk);
    CHECK(tok.encode("red square blue ring red", 4).valid_length() == 4);
    CHECK(tok.decode(t.ids) == "red square");
    CHECK(Tokenizer::from_json(tok.to_json()).words() == tok.words());
    TokenSequence bad = t;
    bad.mask = {1, 0, 1, 0, 0, 0};
    CHECK_THROWS_AS(validate_tokens(bad, tok.vocab_size()), InputError);
  }
}
