#include "hyperadapt/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "hyperadapt/binary_io.hpp"

namespace hyperadapt {

namespace {

constexpr char kMagic[8] = {'H', 'A', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

const std::string* Checkpoint::meta(std::string_view key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelSpec& spec, const ParameterStore& params,
                                            const KeyValues& metadata) {
  io::Writer out;
  out.put_bytes(std::string_view(kMagic, sizeof kMagic));
  out.put(kVersion);
  const auto spec_kv = spec.to_kv();
  out.put(static_cast<std::uint32_t>(spec_kv.size() + metadata.size()));
  for (const auto& [k, v] : spec_kv) {
    out.put_string("model." + k);
    out.put_string(v);
  }
  for (const auto& [k, v] : metadata) {
    out.put_string("meta." + k);
    out.put_string(v);
  }
  out.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& entry : params.entries()) {
    out.put_string(entry.name);
    const Shape& shape = entry.tensor.shape();
    out.put(static_cast<std::uint32_t>(shape.size()));
    for (auto extent : shape) out.put(static_cast<std::uint64_t>(extent));
    for (double v : entry.tensor.data()) out.put_f64(v);
  }
  const auto& buf = out.buffer();
  const std::uint64_t checksum =
      fnv1a(std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
  out.put(checksum);
  return std::move(out.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8) throw CheckpointError("checkpoint is truncated");
  const auto body = bytes.first(bytes.size() - 8);
  io::Reader tail(bytes.last(8));
  const std::uint64_t stored = tail.get<std::uint64_t>();
  const std::uint64_t actual = fnv1a(std::string_view(reinterpret_cast<const char*>(body.data()), body.size()));
  if (stored != actual) throw CheckpointError("checkpoint checksum mismatch (file is corrupt)");

  try {
    io::Reader in(body);
    if (in.get_bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
      throw CheckpointError("not a checkpoint (bad magic)");
    }
    if (auto version = in.get<std::uint32_t>(); version != kVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    KeyValues spec_kv;
    const auto n_kv = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_kv; ++i) {
      std::string key = in.get_string();
      std::string value = in.get_string();
      if (key.starts_with("model.")) spec_kv.emplace_back(key.substr(6), std::move(value));
      else if (key.starts_with("meta.")) ckpt.metadata.emplace_back(key.substr(5), std::move(value));
      else throw CheckpointError("unknown header key '" + key + "'");
    }
    ckpt.spec = ModelSpec::from_kv(spec_kv);
    const auto n_params = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_params; ++i) {
      NamedArray array;
      array.name = in.get_string();
      const auto rank = in.get<std::uint32_t>();
      for (std::uint32_t r = 0; r < rank; ++r) array.shape.push_back(in.get<std::uint64_t>());
      array.values.resize(shape_numel(array.shape));
      for (auto& v : array.values) v = in.get_f64();
      ckpt.params.push_back(std::move(array));
    }
    if (in.remaining() != 0) throw CheckpointError("trailing bytes after parameter records");
    return ckpt;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const KeyValues& metadata) {
  write_file(path, encode_checkpoint(model.spec(), model.params(), metadata));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(bytes);
}

void restore_parameters(Model& model, const Checkpoint& checkpoint) {
  for (const auto& array : checkpoint.params) {
    if (!model.params().contains(array.name)) {
      throw CheckpointError("checkpoint parameter '" + array.name + "' does not exist in the model");
    }
    Tensor& t = model.params().get(array.name);
    if (t.shape() != array.shape) {
      throw CheckpointError("shape mismatch for '" + array.name + "': " + shape_str(array.shape) + " vs " +
                            shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(array.values.begin(), array.values.end(), dst.begin());
  }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& checkpoint) {
  auto model = std::make_unique<Model>(checkpoint.spec, 0);
  if (checkpoint.params.size() != model->params().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(checkpoint.params.size()) + " parameters, model has " +
                          std::to_string(model->params().size()));
  }
  restore_parameters(*model, checkpoint);
  return model;
}

}  // namespace hyperadapt
