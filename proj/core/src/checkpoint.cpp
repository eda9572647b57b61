#include "gpht/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "gpht/error.hpp"

namespace gpht {

namespace {


constexpr char kMagic[4] = {'G', 'P', 'H', 'T'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    auto p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) + " while reading " +
                        what + " (" + std::to_string(n) + " bytes needed, " +
                        std::to_string(in_.size() - pos_) + " available)");
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U le(const char* what) {
    auto b = bytes(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

std::string config_block(const Checkpoint& ckpt) {
  std::string block = "dtype=f64\n";
  for (const auto& [k, v] : ckpt.params.config.to_entries()) block += "model." + k + "=" + v + "\n";
  block += "meta.epoch=" + std::to_string(ckpt.meta.epoch) + "\n";
  block += "meta.best_val_loss=" + fmt_double(ckpt.meta.best_val_loss) + "\n";
  block += "meta.seed=" + std::to_string(ckpt.meta.seed) + "\n";
  block += "meta.sources=" + join(ckpt.meta.sources) + "\n";
  block += "meta.finetune_sources=" + join(ckpt.meta.finetune_sources) + "\n";
  return block;
}

template <typename T>
T parse_meta(const std::string& key, const std::string& text, std::size_t offset) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError("checkpoint config block near byte " + std::to_string(offset) +
                      ": bad value for " + key);
  }
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  const std::string block = config_block(ckpt);
  w.le<std::uint64_t>(block.size());
  w.bytes(block.data(), block.size());
  const auto arrays = ckpt.params.named();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& p : arrays) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(p.scope));
    w.le<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) w.f64(v);
  }
  return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) {
    throw FormatError("bad checkpoint magic at byte 0");
  }
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const auto block_len = r.le<std::uint64_t>("config length");
  const std::size_t block_offset = r.offset();
  auto block_bytes = r.bytes(block_len, "config block");
  std::string block(block_bytes.begin(), block_bytes.end());

  Checkpoint ckpt;
  ModelConfig config;
  std::istringstream lines(block);
  std::string line;
  bool saw_dtype = false;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("checkpoint config block near byte " + std::to_string(block_offset) +
                        ": malformed line '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "dtype") {
      if (value != "f64") throw FormatError("unsupported checkpoint dtype '" + value + "'");
      saw_dtype = true;
    } else if (key.rfind("model.", 0) == 0) {
      try {
        config.apply_entry(key.substr(6), value);
      } catch (const ConfigError& e) {
        throw FormatError("checkpoint config block near byte " + std::to_string(block_offset) +
                          ": " + e.what());
      }
    } else if (key == "meta.epoch") {
      ckpt.meta.epoch = parse_meta<std::size_t>(key, value, block_offset);
    } else if (key == "meta.best_val_loss") {
      ckpt.meta.best_val_loss = parse_meta<double>(key, value, block_offset);
    } else if (key == "meta.seed") {
      ckpt.meta.seed = parse_meta<std::uint64_t>(key, value, block_offset);
    } else if (key == "meta.sources") {
      ckpt.meta.sources = split_list(value);
    } else if (key == "meta.finetune_sources") {
      ckpt.meta.finetune_sources = split_list(value);
    } else {
      throw FormatError("checkpoint config block near byte " + std::to_string(block_offset) +
                        ": unknown key '" + key + "'");
    }
  }
  if (!saw_dtype) throw FormatError("checkpoint config block lacks dtype");
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }

  ckpt.params = init_model(config);
  auto expected = ckpt.params.named();
  const auto count = r.le<std::uint32_t>("array count");
  if (count != expected.size()) {
    throw FormatError("checkpoint at byte " + std::to_string(r.offset() - 4) + " lists " +
                      std::to_string(count) + " arrays, model config implies " +
                      std::to_string(expected.size()));
  }
  for (auto& param : expected) {
    const std::size_t at = r.offset();
    const auto name_len = r.le<std::uint16_t>("array name length");
    auto name_bytes = r.bytes(name_len, "array name");
    const std::string name(name_bytes.begin(), name_bytes.end());
    if (name != param.name) {
      throw FormatError("unexpected array '" + name + "' at byte " + std::to_string(at) +
                        " (expected '" + param.name + "')");
    }
    const auto scope = r.le<std::uint8_t>("scope");
    if (scope != static_cast<std::uint8_t>(param.scope)) {
      throw FormatError("array '" + name + "' has wrong scope code at byte " +
                        std::to_string(r.offset() - 1));
    }
    const auto rank = r.le<std::uint8_t>("rank");
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(r.le<std::uint32_t>("dimension"));
    if (shape != param.value.shape()) {
      throw FormatError("array '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(param.value.shape()) + " (byte " + std::to_string(at) + ")");
    }
    auto values = param.value.mutable_values();
    for (auto& v : values) v = r.f64("array values");
  }
  if (!r.done()) {
    throw FormatError("trailing bytes after last array at byte " + std::to_string(r.offset()));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw DataError("failed writing checkpoint " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

std::uint64_t checkpoint_fingerprint(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : serialize_checkpoint(ckpt)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gpht
