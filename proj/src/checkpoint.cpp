#include "relate/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "relate/errors.hpp"

namespace relate {
namespace {

constexpr std::size_t kBlock = 512;

void write_octal(char* field, std::size_t width, std::uint64_t value) {
  // width - 1 digits followed by NUL
  std::string digits(width - 1, '0');
  for (std::size_t i = width - 1; i-- > 0 && value > 0; value >>= 3) digits[i] = static_cast<char>('0' + (value & 7));
  if (value != 0) throw std::invalid_argument("tar field overflow");
  std::memcpy(field, digits.data(), width - 1);
  field[width - 1] = '\0';
}

std::uint64_t read_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  std::size_t i = 0;
  while (i < width && field[i] == ' ') ++i;
  for (; i < width && field[i] >= '0' && field[i] <= '7'; ++i) v = (v << 3) | static_cast<std::uint64_t>(field[i] - '0');
  for (; i < width; ++i)
    if (field[i] != '\0' && field[i] != ' ') throw CorruptCheckpoint("malformed numeric field in archive header");
  return v;
}

unsigned header_checksum(const char* header) {
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i) {
    const bool in_field = i >= 148 && i < 156;
    sum += in_field ? static_cast<unsigned>(' ') : static_cast<unsigned char>(header[i]);
  }
  return sum;
}

void append_entry(std::string& out, const std::string& name, std::string_view data) {
  if (name.size() >= 100) throw std::invalid_argument("tar entry name too long: " + name);
  char header[kBlock] = {};
  std::memcpy(header, name.data(), name.size());
  write_octal(header + 100, 8, 0644);
  write_octal(header + 108, 8, 0);
  write_octal(header + 116, 8, 0);
  write_octal(header + 124, 12, data.size());
  write_octal(header + 136, 12, 0);
  header[156] = '0';
  std::memcpy(header + 257, "ustar", 6);
  std::memcpy(header + 263, "00", 2);
  write_octal(header + 148, 7, header_checksum(header));
  header[155] = ' ';
  out.append(header, kBlock);
  out.append(data);
  out.append((kBlock - data.size() % kBlock) % kBlock, '\0');
}

std::string float_blob(const torch::Tensor& t) {
  const auto f = t.detach().to(torch::kCPU).to(torch::kFloat32).contiguous();
  const auto n = static_cast<std::size_t>(f.numel());
  std::string out(4 * n, '\0');
  const float* src = f.data_ptr<float>();
  for (std::size_t i = 0; i < n; ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(src[i]);
    for (int b = 0; b < 4; ++b) out[4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return out;
}

torch::Tensor tensor_from_blob(std::string_view blob, const std::vector<std::int64_t>& shape) {
  auto t = torch::empty(shape, torch::kFloat32);
  const auto n = static_cast<std::size_t>(t.numel());
  if (blob.size() != 4 * n) throw CorruptCheckpoint("tensor blob length does not match its shape");
  float* dst = t.data_ptr<float>();
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[4 * i + static_cast<std::size_t>(b)])) << (8 * b);
    dst[i] = std::bit_cast<float>(bits);
  }
  return t;
}

std::string blob_name(std::size_t i) {
  std::ostringstream s;
  s << "tensors/" << std::setw(6) << std::setfill('0') << i << ".f32";
  return s.str();
}

}  // namespace

const torch::Tensor& ModelCheckpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw CorruptCheckpoint("checkpoint has no tensor '" + name + "'");
}

bool ModelCheckpoint::has_tensor(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
}

std::string encode_checkpoint(const ModelCheckpoint& ckpt) {
  std::string out;
  append_entry(out, "VERSION", std::to_string(kCheckpointVersion) + "\n");
  append_entry(out, "config.txt", to_config_text(ckpt.model, ckpt.train));
  append_entry(out, "meta.json", ckpt.metadata.dump(2) + "\n");
  auto index = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& [name, t] = ckpt.tensors[i];
    const auto blob = float_blob(t);
    const auto offset = out.size() + kBlock;
    append_entry(out, blob_name(i), blob);
    index.push_back({{"name", name},
                     {"shape", t.sizes().vec()},
                     {"file", blob_name(i)},
                     {"offset", offset},
                     {"length", blob.size()}});
  }
  append_entry(out, "index.json", index.dump(1) + "\n");
  out.append(2 * kBlock, '\0');
  return out;
}

ModelCheckpoint decode_checkpoint(std::string_view bytes) {
  std::vector<std::pair<std::string, std::string_view>> entries;
  std::map<std::string, std::pair<std::size_t, std::string_view>> by_name;
  std::size_t pos = 0;
  bool terminated = false;
  while (pos + kBlock <= bytes.size()) {
    const char* header = bytes.data() + pos;
    if (std::all_of(header, header + kBlock, [](char c) { return c == '\0'; })) {
      // The end-of-archive marker is two zero blocks.
      terminated = pos + 2 * kBlock <= bytes.size() &&
                   std::all_of(header + kBlock, header + 2 * kBlock, [](char c) { return c == '\0'; });
      break;
    }
    if (read_octal(header + 148, 8) != header_checksum(header))
      throw CorruptCheckpoint("archive header checksum mismatch at byte " + std::to_string(pos));
    const std::string name(header, strnlen(header, 100));
    const auto size = read_octal(header + 124, 12);
    const auto data_pos = pos + kBlock;
    if (size > bytes.size() || data_pos + size > bytes.size())
      throw CorruptCheckpoint("archive entry '" + name + "' is truncated");
    by_name[name] = {data_pos, bytes.substr(data_pos, size)};
    entries.emplace_back(name, bytes.substr(data_pos, size));
    pos = data_pos + (size + kBlock - 1) / kBlock * kBlock;
  }
  if (!terminated) throw CorruptCheckpoint("archive is truncated (no end-of-archive marker)");
  if (entries.empty() || entries.front().first != "VERSION") throw CorruptCheckpoint("archive does not start with VERSION");

  int version = 0;
  try {
    version = std::stoi(std::string(entries.front().second));
  } catch (const std::exception&) {
    throw CorruptCheckpoint("unreadable VERSION entry");
  }
  if (version != kCheckpointVersion)
    throw UnsupportedVersion("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")",
                             version, kCheckpointVersion);

  auto need = [&](const std::string& name) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CorruptCheckpoint("checkpoint is missing '" + name + "'");
    return it->second;
  };

  ModelCheckpoint ckpt;
  try {
    const auto kv = parse_key_values(need("config.txt").second);
    ckpt.model = model_config_from(kv);
    ckpt.train = train_config_from(kv);
    ckpt.metadata = nlohmann::json::parse(need("meta.json").second);
    const auto index = nlohmann::json::parse(need("index.json").second);
    for (const auto& e : index) {
      const auto file = e.at("file").get<std::string>();
      const auto [offset, blob] = need(file);
      if (e.at("offset").get<std::size_t>() != offset || e.at("length").get<std::size_t>() != blob.size())
        throw CorruptCheckpoint("index entry for '" + file + "' disagrees with the archive layout");
      ckpt.tensors.emplace_back(e.at("name").get<std::string>(),
                                tensor_from_blob(blob, e.at("shape").get<std::vector<std::int64_t>>()));
    }
  } catch (const CorruptCheckpoint&) {
    throw;
  } catch (const std::exception& ex) {
    throw CorruptCheckpoint(std::string("checkpoint contents unreadable: ") + ex.what());
  }
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module,
                                                               const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters(true)) out.emplace_back(prefix + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) out.emplace_back(prefix + b.key(), b.value());
  return out;
}

void load_state(torch::nn::Module& module, const ModelCheckpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard guard;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    const auto& src = ckpt.tensor(prefix + name);
    if (src.sizes() != dst.sizes())
      throw CorruptCheckpoint("tensor '" + prefix + name + "' has the wrong shape for this configuration");
    dst.copy_(src.to(dst.dtype()));
  };
  for (auto& p : module.named_parameters(true)) copy(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) copy(b.key(), b.value());
}

}  // namespace relate
