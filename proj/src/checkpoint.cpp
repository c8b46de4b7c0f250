// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sparselm/error.hpp"

namespace sparselm {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'L', 'M', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void array(const NamedArray& a) {
    str32(a.name);
    u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) u64(d);
    for (double v : a.values) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  NamedArray array() {
    NamedArray a;
    a.name = bytes(u32());
    const std::uint32_t rank = u32();
    for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(u64());
    const std::size_t n = shape_numel(a.shape);
    need(n * 8);
    a.values.resize(n);
    for (auto& v : a.values) v = f64();
    return a;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  const nlohmann::json header = {{"model", checkpoint.config}, {"metadata", checkpoint.metadata}};
  const std::string text = header.dump();
  w.u64(text.size());
  w.bytes(text.data(), text.size());
  w.u64(checkpoint.parameters.size());
  for (const auto& p : checkpoint.parameters) w.array(p);
  w.u64(checkpoint.optimizer_step);
  w.u64(checkpoint.optimizer_slots.size());
  for (const auto& s : checkpoint.optimizer_slots) w.array(s);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw IoError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(r.bytes(r.u64()));
    c.config = header.at("model").get<ModelConfig>();
    c.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) c.parameters.push_back(r.array());
  c.optimizer_step = r.u64();
  const std::uint64_t slots = r.u64();
  for (std::uint64_t i = 0; i < slots; ++i) c.optimizer_slots.push_back(r.array());
  if (!r.done()) throw IoError("trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<NamedArray> snapshot_parameters(const Model& model) {
  std::vector<NamedArray> out;
  for (const auto& p : model.parameters()) {
    out.push_back({p.name, p.tensor.shape(),
                   std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

void restore_parameters(Model& model, std::span<const NamedArray> parameters) {
  auto params = model.parameters();
  if (params.size() != parameters.size()) {
    throw ConfigError("checkpoint has " + std::to_string(parameters.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = std::find_if(parameters.begin(), parameters.end(),
                           [&](const NamedArray& a) { return a.name == p.name; });
    if (it == parameters.end()) throw ConfigError("checkpoint is missing parameter " + p.name);
    if (it->shape != p.tensor.shape()) {
      throw ConfigError("shape mismatch for " + p.name + ": checkpoint " + shape_str(it->shape) +
                        " vs model " + shape_str(p.tensor.shape()));
    }
    std::copy(it->values.begin(), it->values.end(), p.tensor.mutable_data().begin());
  }
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  Model model = Model::build(checkpoint.config, 0);
  restore_parameters(model, checkpoint.parameters);
  return model;
}

}  // namespace sparselm
