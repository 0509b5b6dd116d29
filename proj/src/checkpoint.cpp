#include "oneframe/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "oneframe/error.hpp"

namespace oneframe {

namespace {

constexpr char kMagic[4] = {'O', 'F', 'C', 'K'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const Tokenizer& tokenizer) {
  nlohmann::json header;
  header["config"] = model.config();
  header["vocabulary"] = tokenizer.to_json();
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, p] : model.params().all()) {
    params.push_back({{"name", name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"decay", p.decay},
                      {"offset", offset}});
    offset += static_cast<std::uint64_t>(p.value.size());
  }
  header["parameters"] = params;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, p] : model.params().all()) {
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = p.value;
      out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + " is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto len = read_pod<std::uint64_t>(in);
  if (!in || len > (1ULL << 32)) throw FormatError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ModelConfig cfg = header.at("config").get<ModelConfig>();
    LoadedCheckpoint ck{Model::empty(cfg), Tokenizer::from_json(header.at("vocabulary"))};
    if (ck.tokenizer.vocab_size() != cfg.vocab_size) throw FormatError("vocabulary size disagrees with the config");
    for (const auto& entry : header.at("parameters")) {
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
      in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
      if (!in) throw FormatError("truncated parameter data in " + path.string());
      ck.model.params().add(entry.at("name").get<std::string>(), Mat(rm), entry.at("decay").get<bool>());
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint header in " + path.string() + ": " + e.what());
  }
}

}  // namespace oneframe
