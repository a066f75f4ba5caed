#include <bit>
#include <cstring>
#include <fstream>

#include "modalign/error.hpp"
#include "modalign/nn/train.hpp"

namespace modalign::nn {
namespace {

constexpr char kMagic[4] = {'M', 'D', 'L', 'G'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ContractError("checkpoint " + origin_ + ": truncated file");
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& trained) {
  auto model = trained.model;
  const auto params = model.parameters();
  nlohmann::json header{{"model", to_json(model.config)},
                        {"tokenizer", to_json(trained.tokenizer.config())},
                        {"vocabulary", trained.tokenizer.vocabulary()},
                        {"tensors", nlohmann::json::array()}};
  for (const auto* p : params) header["tensors"].push_back(p->name);
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (const auto* p : params) {
    put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) put_f32(out, p->value(r, c));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("cannot write checkpoint " + path.string());
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader in(std::move(data), path.string());
  if (in.bytes(4) != std::string(kMagic, sizeof kMagic)) throw ContractError("checkpoint " + path.string() + ": bad magic");
  if (const auto v = in.u32(); v != kCheckpointVersion) {
    throw ContractError("checkpoint " + path.string() + ": unsupported version " + std::to_string(v));
  }
  const auto header = nlohmann::json::parse(in.bytes(in.u32()));
  const auto tok_config = tokenizer_config_from_json(header.at("tokenizer"));
  Tokenizer tokenizer = tok_config.mode == VocabMode::learned
                            ? Tokenizer::from_vocabulary(tok_config, header.at("vocabulary").get<std::vector<std::string>>())
                            : Tokenizer(tok_config);
  TrainedModel trained{tokenizer, DownstreamModel<float>(model_config_from_json(header.at("model")), 0), {}};
  const auto params = trained.model.parameters();
  const auto& names = header.at("tensors");
  if (names.size() != params.size()) throw ContractError("checkpoint " + path.string() + ": tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (names[i].get<std::string>() != p->name) throw ContractError("checkpoint: unexpected tensor " + names[i].dump());
    const auto rows = in.u32();
    const auto cols = in.u32();
    if (rows != p->value.rows() || cols != p->value.cols()) throw ShapeError("checkpoint: shape mismatch for " + p->name);
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) p->value(r, c) = in.f32();
  }
  if (!in.done()) throw ContractError("checkpoint " + path.string() + ": trailing bytes");
  return trained;
}

}  // namespace modalign::nn
