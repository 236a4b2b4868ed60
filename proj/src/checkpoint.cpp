#include "normaug/checkpoint.hpp"

#include <bit>
#include <map>
#include <stdexcept>

#include "normaug/io.hpp"

namespace naug {

namespace {

constexpr char kMagic[4] = {'N', 'A', 'U', 'G'};

const std::vector<std::string> &model_keys() {
  static const std::vector<std::string> keys = [] {
    KeyValues kv;
    ModelConfig().write(kv);
    std::vector<std::string> out;
    for (const auto &[k, _] : kv) out.push_back(k);
    return out;
  }();
  return keys;
}

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const std::string &s) { out_ += s; }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string &in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string &in_;
  std::size_t pos_ = 0;
};

struct Array {
  Shape shape;
  std::vector<double> data;
};

}  // namespace

std::string serialize_checkpoint(Model &model, const KeyValues &meta) {
  KeyValues text = meta;
  model.config().write(text);
  Writer w;
  w.bytes(std::string(kMagic, 4));
  w.u32(kCheckpointVersion);
  const std::string block = format_key_values(text);
  w.u64(block.size());
  w.bytes(block);

  std::vector<std::pair<std::string, Array>> arrays;
  model.visit_state([&](const std::string &name, const Shape &shape, std::span<double> values) {
    arrays.push_back({name, {shape, {values.begin(), values.end()}}});
  });
  model.visit_counters([&](const std::string &name, std::size_t &count) {
    arrays.push_back({name, {{1}, {static_cast<double>(count)}}});
  });
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto &[name, array] : arrays) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(array.shape.size()));
    for (auto d : array.shape) w.u64(d);
    for (auto v : array.data) w.f64(v);
  }
  return w.take();
}

void save_checkpoint(Model &model, const KeyValues &meta, const std::filesystem::path &path) {
  write_file_atomic(path, serialize_checkpoint(model, meta));
}

LoadedCheckpoint deserialize_checkpoint(const std::string &bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) throw std::runtime_error("checkpoint: bad magic (not a NAUG file)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  KeyValues text = parse_key_values(r.bytes(r.u64()));
  KeyValues model_text;
  for (const auto &k : model_keys()) {
    auto it = text.find(k);
    if (it == text.end()) throw std::runtime_error("checkpoint: missing config key " + k);
    model_text.insert(*it);
    text.erase(it);
  }
  ConfigReader reader(model_text);
  LoadedCheckpoint out{Model(ModelConfig::read(reader), 0), std::move(text)};

  std::map<std::string, Array> arrays;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u32());
    Array a;
    a.shape.resize(r.u32());
    for (auto &d : a.shape) d = static_cast<std::size_t>(r.u64());
    a.data.resize(shape_numel(a.shape));
    for (auto &v : a.data) v = r.f64();
    if (!arrays.emplace(std::move(name), std::move(a)).second) throw std::runtime_error("checkpoint: duplicate array");
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");

  auto take = [&](const std::string &name, const Shape &shape) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + name);
    if (it->second.shape != shape) {
      throw std::runtime_error("checkpoint: array " + name + " has shape " + shape_to_string(it->second.shape) +
                               ", expected " + shape_to_string(shape));
    }
    Array a = std::move(it->second);
    arrays.erase(it);
    return a;
  };
  out.model.visit_state([&](const std::string &name, const Shape &shape, std::span<double> values) {
    const Array a = take(name, shape);
    std::copy(a.data.begin(), a.data.end(), values.begin());
  });
  out.model.visit_counters([&](const std::string &name, std::size_t &value) {
    value = static_cast<std::size_t>(take(name, {1}).data[0]);
  });
  if (!arrays.empty()) throw std::runtime_error("checkpoint: unexpected array " + arrays.begin()->first);
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path &path) {
  return deserialize_checkpoint(read_file(path));
}

Model clone_model(Model &model) { return deserialize_checkpoint(serialize_checkpoint(model, {})).model; }

}  // namespace naug
