#include "odgen/checkpoint.hpp"

#include "odgen/text.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace odgen {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'O', 'D', 'G', 'N'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(std::string data, fs::path file) : data_(std::move(data)), file_(std::move(file)) {}

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    if (at_ + n > data_.size()) overrun();
    std::string s = data_.substr(at_, n);
    at_ += n;
    return s;
  }
  bool exhausted() const { return at_ == data_.size(); }

 private:
  unsigned char byte() {
    if (at_ >= data_.size()) overrun();
    return static_cast<unsigned char>(data_[at_++]);
  }
  [[noreturn]] void overrun() const {
    throw CheckpointError(file_.string() + ": truncated parameter archive");
  }

  std::string data_;
  fs::path file_;
  std::size_t at_ = 0;
};

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CheckpointError(file.string() + ": cannot open file");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const fs::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw CheckpointError(file.string() + ": cannot open file for writing");
  out << content;
  if (!out) throw CheckpointError(file.string() + ": write failed");
}

}  // namespace

std::string corpus_fingerprint(const std::vector<LoadedArea>& areas) {
  std::vector<const LoadedArea*> sorted;
  sorted.reserve(areas.size());
  for (const auto& a : areas) sorted.push_back(&a);
  std::sort(sorted.begin(), sorted.end(), [](const LoadedArea* a, const LoadedArea* b) {
    return a->area.area_id < b->area.area_id;
  });

  std::uint64_t hash = 0xcbf29ce484222325ULL;  // FNV-1a 64 offset basis
  const auto mix = [&hash](const std::string& s) {
    for (const char c : s) {
      hash ^= static_cast<unsigned char>(c);
      hash *= 0x100000001b3ULL;
    }
  };
  for (const LoadedArea* la : sorted) {
    mix(la->area.area_id);
    mix("|" + std::to_string(la->area.n_regions()));
    mix("|" + text::format_double(la->od.total()) + ";");
  }

  std::string hex(16, '0');
  for (int i = 15; i >= 0; --i) {
    hex[static_cast<std::size_t>(i)] = "0123456789abcdef"[hash & 0xf];
    hash >>= 4;
  }
  return hex;
}

void save_checkpoint(const fs::path& dir, const TrainedModel& trained,
                     const std::string& corpus_hash) {
  if (trained.model == nullptr) throw CheckpointError("cannot save an untrained model bundle");
  fs::create_directories(dir);

  const DiffusionTrainConfig& cfg = trained.config;
  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["model"] = {
      {"feature_dim", cfg.denoiser.feature_dim},   {"hidden_dim", cfg.denoiser.hidden_dim},
      {"n_layers", cfg.denoiser.n_layers},         {"n_heads", cfg.denoiser.n_heads},
      {"ffn_mult", cfg.denoiser.ffn_mult},         {"edge_fusion", to_string(cfg.denoiser.edge_fusion)},
  };
  manifest["schedule"] = {
      {"kind", "cosine"}, {"T", cfg.T}, {"offset", cfg.schedule_offset}};
  manifest["train"] = {{"lr", cfg.lr},
                       {"weight_decay", cfg.weight_decay},
                       {"epochs", cfg.epochs},
                       {"batch_size", cfg.batch_size},
                       {"seed", cfg.seed}};
  manifest["scaler"] = {
      {"mean", std::vector<double>(trained.scaler.mean.data(),
                                   trained.scaler.mean.data() + trained.scaler.mean.size())},
      {"std", std::vector<double>(trained.scaler.std.data(),
                                  trained.scaler.std.data() + trained.scaler.std.size())}};
  manifest["corpus_hash"] = corpus_hash;
  manifest["epoch_losses"] = trained.epoch_losses;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string bin(kMagic, sizeof(kMagic));
  put_u32(bin, kFormatVersion);
  const auto params = trained.model->params().all();
  put_u64(bin, params.size());
  for (const ad::Parameter* p : params) {
    put_u32(bin, static_cast<std::uint32_t>(p->name.size()));
    bin += p->name;
    put_u64(bin, static_cast<std::uint64_t>(p->value.rows()));
    put_u64(bin, static_cast<std::uint64_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) put_f64(bin, p->value(i, j));
  }
  write_file(dir / "params.bin", bin);
}

TrainedModel load_checkpoint(const fs::path& dir) {
  const fs::path manifest_file = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_file));
  } catch (const json::parse_error& e) {
    throw CheckpointError(manifest_file.string() + ": invalid JSON: " + e.what());
  }

  TrainedModel trained;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != kFormatVersion)
      throw CheckpointError(manifest_file.string() + ": unsupported format version");
    const json& model = manifest.at("model");
    DiffusionTrainConfig cfg;
    cfg.denoiser.feature_dim = model.at("feature_dim").get<int>();
    cfg.denoiser.hidden_dim = model.at("hidden_dim").get<int>();
    cfg.denoiser.n_layers = model.at("n_layers").get<int>();
    cfg.denoiser.n_heads = model.at("n_heads").get<int>();
    cfg.denoiser.ffn_mult = model.at("ffn_mult").get<int>();
    cfg.denoiser.edge_fusion = edge_fusion_from_string(model.at("edge_fusion").get<std::string>());
    const json& schedule = manifest.at("schedule");
    if (schedule.at("kind").get<std::string>() != "cosine")
      throw CheckpointError(manifest_file.string() + ": unsupported schedule kind");
    cfg.T = schedule.at("T").get<int>();
    cfg.schedule_offset = schedule.at("offset").get<double>();
    const json& train = manifest.at("train");
    cfg.lr = train.at("lr").get<double>();
    cfg.weight_decay = train.at("weight_decay").get<double>();
    cfg.epochs = train.at("epochs").get<int>();
    cfg.batch_size = train.at("batch_size").get<int>();
    cfg.seed = train.at("seed").get<std::uint64_t>();
    cfg.denoiser.init_seed = cfg.seed;
    cfg.validate();
    trained.config = cfg;

    const json& scaler = manifest.at("scaler");
    const auto mean = scaler.at("mean").get<std::vector<double>>();
    const auto std_vec = scaler.at("std").get<std::vector<double>>();
    if (mean.size() != std_vec.size() ||
        static_cast<int>(mean.size()) != cfg.denoiser.feature_dim)
      throw CheckpointError(manifest_file.string() + ": scaler width does not match feature_dim");
    trained.scaler.mean = Eigen::Map<const Vector>(mean.data(), static_cast<long>(mean.size()));
    trained.scaler.std =
        Eigen::Map<const Vector>(std_vec.data(), static_cast<long>(std_vec.size()));
    if ((trained.scaler.std.array() <= 0.0).any())
      throw CheckpointError(manifest_file.string() + ": scaler std must be positive");

    if (manifest.contains("epoch_losses"))
      trained.epoch_losses = manifest.at("epoch_losses").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw CheckpointError(manifest_file.string() + ": invalid manifest: " + e.what());
  }

  trained.schedule = cosine_schedule(trained.config.T, trained.config.schedule_offset);
  trained.model = std::make_unique<Denoiser>(trained.config.denoiser);

  const fs::path bin_file = dir / "params.bin";
  Reader reader(read_file(bin_file), bin_file);
  if (reader.bytes(4) != std::string(kMagic, sizeof(kMagic)))
    throw CheckpointError(bin_file.string() + ": bad magic (not a parameter archive)");
  if (reader.u32() != kFormatVersion)
    throw CheckpointError(bin_file.string() + ": unsupported archive version");
  const std::uint64_t n_tensors = reader.u64();
  if (n_tensors != trained.model->params().size())
    throw CheckpointError(bin_file.string() + ": archive holds " + std::to_string(n_tensors) +
                          " tensors but the configured model has " +
                          std::to_string(trained.model->params().size()));
  for (std::uint64_t k = 0; k < n_tensors; ++k) {
    const std::string name = reader.bytes(reader.u32());
    const std::uint64_t rows = reader.u64();
    const std::uint64_t cols = reader.u64();
    ad::Parameter* p = trained.model->params().find(name);
    if (p == nullptr)
      throw CheckpointError(bin_file.string() + ": unknown tensor '" + name + "'");
    if (rows != static_cast<std::uint64_t>(p->value.rows()) ||
        cols != static_cast<std::uint64_t>(p->value.cols()))
      throw CheckpointError(bin_file.string() + ": tensor '" + name + "' has shape " +
                            std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                            std::to_string(p->value.rows()) + "x" +
                            std::to_string(p->value.cols()));
    for (std::uint64_t i = 0; i < rows; ++i)
      for (std::uint64_t j = 0; j < cols; ++j)
        p->value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = reader.f64();
  }
  if (!reader.exhausted())
    throw CheckpointError(bin_file.string() + ": trailing bytes after the last tensor");
  return trained;
}

}  // namespace odgen
