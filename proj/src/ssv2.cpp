#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "oneframe/data.hpp"
#include "oneframe/error.hpp"

namespace oneframe {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

}  // namespace

std::string check_annotation(const SSv2Annotation& a) {
  if (a.id.empty()) return "missing id";
  if (a.split != "train" && a.split != "validation") return "unknown split '" + a.split + "'";
  std::string filled;
  std::size_t used = 0;
  std::size_t pos = 0;
  const std::string& t = a.template_text;
  while (pos < t.size()) {
    const auto open = t.find('[', pos);
    if (open == std::string::npos) {
      filled += t.substr(pos);
      break;
    }
    const auto close = t.find(']', open);
    if (close == std::string::npos) return "unterminated placeholder in template";
    filled += t.substr(pos, open - pos);
    if (used >= a.placeholders.size()) return "template has more placeholders than provided";
    filled += a.placeholders[used++];
    pos = close + 1;
  }
  if (used != a.placeholders.size()) return "template has fewer placeholders than provided";
  if (lower(filled) != lower(a.label)) return "label does not match template with placeholders filled";
  return "";
}

std::vector<SSv2Annotation> parse_ssv2_annotations(const nlohmann::json& j, const std::string& default_split) {
  if (!j.is_array()) throw FormatError("annotation file must hold a JSON list");
  std::vector<SSv2Annotation> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& rec = j[i];
    if (!rec.is_object()) throw FormatError("annotation " + std::to_string(i) + " is not an object");
    SSv2Annotation a;
    try {
      a.id = rec.at("id").is_string() ? rec.at("id").get<std::string>() : rec.at("id").dump();
      a.template_text = rec.at("template").get<std::string>();
      a.label = rec.at("label").get<std::string>();
      a.placeholders = rec.value("placeholders", std::vector<std::string>{});
      a.split = rec.value("split", default_split);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("annotation " + std::to_string(i) + ": " + e.what());
    }
    out.push_back(std::move(a));
  }
  return out;
}

nlohmann::json to_json(const std::vector<SSv2Annotation>& annotations) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& a : annotations) {
    j.push_back({{"id", a.id},
                 {"template", a.template_text},
                 {"label", a.label},
                 {"placeholders", a.placeholders},
                 {"split", a.split}});
  }
  return j;
}

std::vector<SSv2Annotation> to_ssv2_annotations(const Dataset& dataset, const std::string& split) {
  std::vector<SSv2Annotation> out;
  for (const auto& ex : dataset) {
    auto get = [&](const char* key) {
      auto it = ex.meta.find(key);
      if (it == ex.meta.end()) throw InputError("video " + ex.video_id + " lacks meta." + key);
      return it->second;
    };
    out.push_back({ex.video_id, get("template"), get("label"), {get("object")}, split});
  }
  return out;
}

SSv2Tasks build_ssv2_tasks(const std::vector<SSv2Annotation>& annotations, int per_template, std::uint64_t seed,
                           const std::string& frames_path_pattern, bool flip_safe) {
  if (per_template < 1) throw InputError("per_template must be positive");
  SSv2Tasks tasks;
  auto record = [&](const SSv2Annotation& a, const std::string& caption) {
    ManifestRecord r;
    r.video_id = a.id;
    r.frames_path = replace_all(frames_path_pattern, "{id}", a.id);
    r.captions = {caption};
    r.meta = {{"template", a.template_text}, {"label", a.label}};
    r.flip_safe = flip_safe;
    return r;
  };

  std::vector<std::string> template_order;
  std::map<std::string, std::vector<const SSv2Annotation*>> by_template;
  for (const auto& a : annotations) {
    if (const auto err = check_annotation(a); !err.empty()) {
      tasks.rejected.push_back(a.id + ": " + err);
      continue;
    }
    if (a.split == "train") {
      tasks.template_train.push_back(record(a, a.template_text));
      tasks.label_train.push_back(record(a, a.label));
    } else {
      auto [it, inserted] = by_template.try_emplace(a.template_text);
      if (inserted) template_order.push_back(a.template_text);
      it->second.push_back(&a);
    }
  }

  std::set<std::string> seen_labels;
  for (const auto& templ : template_order) {
    auto videos = by_template.at(templ);
    if (static_cast<int>(videos.size()) < per_template) {
      tasks.warnings.push_back("template '" + templ + "' has only " + std::to_string(videos.size()) +
                               " validation videos; taking all");
    } else {
      // Partial Fisher-Yates with a per-template stream, then restore the
      // annotation order of the chosen videos.
      Rng rng = make_rng(seed, "ssv2-sample", hash_label(templ));
      std::vector<std::size_t> idx(videos.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      for (std::size_t i = 0; i < static_cast<std::size_t>(per_template); ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(static_cast<std::size_t>(per_template));
      std::sort(idx.begin(), idx.end());
      std::vector<const SSv2Annotation*> chosen;
      for (auto i : idx) chosen.push_back(videos[i]);
      videos = std::move(chosen);
    }
    tasks.template_queries.push_back(templ);
    for (const auto* a : videos) {
      tasks.template_test.push_back(record(*a, a->template_text));
      tasks.label_test.push_back(record(*a, a->label));
      if (seen_labels.insert(lower(a->label)).second) tasks.label_queries.push_back(a->label);
    }
  }
  return tasks;
}

}  // namespace oneframe
