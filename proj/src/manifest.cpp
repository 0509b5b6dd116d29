#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "oneframe/data.hpp"
#include "oneframe/error.hpp"

namespace fs = std::filesystem;

namespace oneframe {

void save_npy(const fs::path& path, const std::vector<Frame>& frames) {
  if (frames.empty()) throw InputError("save_npy: no frames");
  const Frame& f0 = frames.front();
  std::ostringstream header;
  header << "{'descr': '<f4', 'fortran_order': False, 'shape': (" << frames.size() << ", " << f0.size << ", "
         << f0.size << ", " << f0.channels << "), }";
  std::string h = header.str();
  // Magic (6) + version (2) + length (2) + header, padded to 64 bytes.
  const std::size_t total = 10 + h.size() + 1;
  h.append((64 - total % 64) % 64, ' ');
  h.push_back('\n');

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(h.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const Frame& f : frames) {
    if (f.size != f0.size || f.channels != f0.channels) throw InputError("save_npy: frames differ in shape");
    out.write(reinterpret_cast<const char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size() * sizeof(float)));
  }
}

std::vector<Frame> load_npy(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing frame file: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw FormatError("not an .npy file: " + path.string());
  std::size_t header_len = 0;
  if (magic[6] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::size_t>(b[3]) << 24);
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError("truncated .npy header: " + path.string());
  const bool f4 = header.find("'<f4'") != std::string::npos;
  const bool f8 = header.find("'<f8'") != std::string::npos;
  if (!f4 && !f8) throw FormatError("unsupported dtype in " + path.string());
  if (header.find("'fortran_order': True") != std::string::npos) throw FormatError("fortran order unsupported: " + path.string());
  const auto open = header.find('(');
  const auto close = header.find(')', open);
  if (open == std::string::npos || close == std::string::npos) throw FormatError("bad shape in " + path.string());
  std::vector<long> shape;
  std::stringstream dims(header.substr(open + 1, close - open - 1));
  for (std::string tok; std::getline(dims, tok, ',');) {
    if (tok.find_first_not_of(' ') != std::string::npos) shape.push_back(std::stol(tok));
  }
  if (shape.size() != 4 || shape[1] != shape[2] || shape[0] < 1) {
    throw FormatError("expected a T x H x W x C array with H == W in " + path.string());
  }
  std::vector<Frame> frames;
  for (long t = 0; t < shape[0]; ++t) {
    Frame f(static_cast<int>(shape[1]), static_cast<int>(shape[3]));
    if (f4) {
      in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size() * sizeof(float)));
    } else {
      std::vector<double> buf(f.pixels.size());
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
      for (std::size_t i = 0; i < buf.size(); ++i) f.pixels[i] = static_cast<float>(buf[i]);
    }
    if (!in) throw FormatError("truncated frame data in " + path.string());
    frames.push_back(std::move(f));
  }
  return frames;
}

namespace {

nlohmann::json record_json(const std::string& id, const nlohmann::json& frames, const std::vector<std::string>& captions,
                           const std::map<std::string, std::string>& meta, bool flip_safe) {
  nlohmann::json j{{"video_id", id}, {"frames", frames}, {"captions", captions}, {"flip_safe", flip_safe}};
  if (!meta.empty()) j["meta"] = meta;
  return j;
}

void write_lines(const fs::path& path, const std::vector<nlohmann::json>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& j : lines) out << j.dump() << '\n';
}

}  // namespace

void write_manifest(const fs::path& path, const Dataset& dataset, const std::string& frames_subdir) {
  std::vector<nlohmann::json> lines;
  const fs::path base = path.parent_path();
  for (const auto& ex : dataset) {
    validate_example(ex);
    const std::string rel = frames_subdir + "/" + ex.video_id + ".npy";
    save_npy(base / rel, ex.frames);
    lines.push_back(record_json(ex.video_id, rel, ex.captions, ex.meta, ex.flip_safe));
  }
  write_lines(path, lines);
}

void write_manifest_records(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::vector<nlohmann::json> lines;
  for (const auto& r : records) lines.push_back(record_json(r.video_id, r.frames_path, r.captions, r.meta, r.flip_safe));
  write_lines(path, lines);
}

namespace {

std::vector<Frame> inline_frames(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<int>>();
  const auto data = j.at("data").get<std::vector<float>>();
  if (shape.size() != 4 || shape[1] != shape[2] || shape[0] < 1) throw FormatError("inline frames need shape [T, H, W, C]");
  const std::size_t per = static_cast<std::size_t>(shape[1]) * shape[2] * shape[3];
  if (data.size() != per * static_cast<std::size_t>(shape[0])) throw FormatError("inline frame data size mismatch");
  std::vector<Frame> frames;
  for (int t = 0; t < shape[0]; ++t) {
    Frame f(shape[1], shape[3]);
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(t * per), data.begin() + static_cast<std::ptrdiff_t>((t + 1) * per),
              f.pixels.begin());
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace

Dataset load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  Dataset out;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + "invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw FormatError(where + "record must be an object");
    VideoExample ex;
    if (!j.contains("video_id") || !j["video_id"].is_string() || j["video_id"].get<std::string>().empty()) {
      throw FormatError(where + "missing or empty video_id");
    }
    ex.video_id = j["video_id"].get<std::string>();
    if (!ids.insert(ex.video_id).second) throw FormatError(where + "duplicate video_id '" + ex.video_id + "'");
    if (!j.contains("captions") || !j["captions"].is_array()) throw FormatError(where + "captions must be a list");
    for (const auto& c : j["captions"]) {
      if (!c.is_string()) throw FormatError(where + "captions must be strings");
      ex.captions.push_back(c.get<std::string>());
    }
    if (ex.captions.empty()) throw FormatError(where + "caption list is empty");
    if (!j.contains("frames")) throw FormatError(where + "missing frames");
    try {
      if (j["frames"].is_string()) {
        const fs::path frames_path = path.parent_path() / j["frames"].get<std::string>();
        if (!fs::exists(frames_path)) throw FormatError(where + "missing frame file " + frames_path.string());
        ex.frames = load_npy(frames_path);
      } else if (j["frames"].is_object()) {
        ex.frames = inline_frames(j["frames"]);
      } else {
        throw FormatError(where + "frames must be a path or an inline array");
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + "bad inline frames (" + e.what() + ")");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      throw FormatError(msg.rfind(where, 0) == 0 ? msg : where + msg);
    }
    if (j.contains("meta")) {
      if (!j["meta"].is_object()) throw FormatError(where + "meta must be an object");
      for (const auto& [k, v] : j["meta"].items()) {
        if (!v.is_string()) throw FormatError(where + "meta values must be strings");
        ex.meta[k] = v.get<std::string>();
      }
    }
    if (j.contains("flip_safe")) {
      if (!j["flip_safe"].is_boolean()) throw FormatError(where + "flip_safe must be a boolean");
      ex.flip_safe = j["flip_safe"].get<bool>();
    }
    try {
      validate_example(ex);
    } catch (const InputError& e) {
      throw FormatError(where + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace oneframe
