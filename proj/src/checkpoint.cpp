#include "dgreid/checkpoint.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dgreid/errors.hpp"

namespace dgreid {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'D', 'G', 'R', 'E', 'I', 'D', 'C', 'K'};
constexpr std::size_t kDigestSize = 32;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in native little-endian order");

std::array<unsigned char, kDigestSize> sha256(const char* data, std::size_t size) {
  std::array<unsigned char, kDigestSize> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != kDigestSize) {
    throw std::runtime_error("sha256: digest computation failed");
  }
  return digest;
}

std::string to_hex(const unsigned char* bytes, std::size_t n) {
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (std::size_t i = 0; i < n; ++i) os << std::setw(2) << static_cast<int>(bytes[i]);
  return os.str();
}

template <typename T>
void append_pod(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_pod(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

nlohmann::json CheckpointMeta::to_json() const {
  return {{"backbone", backbone},
          {"feature_dim", feature_dim},
          {"embedding_dim", embedding_dim},
          {"total_identities", total_identities},
          {"stage", stage},
          {"epoch", epoch},
          {"seed", seed},
          {"extra", extra}};
}

CheckpointMeta CheckpointMeta::from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  try {
    m.backbone = j.at("backbone").get<std::string>();
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    m.total_identities = j.at("total_identities").get<std::size_t>();
    m.stage = j.at("stage").get<std::string>();
    m.epoch = j.at("epoch").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
  return m;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  nlohmann::json header = {{"meta", ckpt.meta.to_json()}, {"tensors", index}};
  const std::string header_text = header.dump();

  std::string bytes;
  bytes.reserve(64 + header_text.size() + offset * sizeof(double) + kDigestSize);
  bytes.append(kMagic, sizeof(kMagic));
  append_pod<std::uint32_t>(bytes, kCheckpointVersion);
  append_pod<std::uint64_t>(bytes, header_text.size());
  bytes.append(header_text);
  for (const auto& [name, t] : ckpt.tensors) {
    bytes.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  const auto digest = sha256(bytes.data(), bytes.size());
  bytes.append(reinterpret_cast<const char*>(digest.data()), digest.size());

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw CheckpointError("failed to write checkpoint " + path.string() +
                            " (disk full or unwritable)");
    }
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::string where = " in " + path.string();
  if (bytes.size() < sizeof(kMagic) + 12 + kDigestSize ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint (bad header)" + where);
  }
  const std::size_t body = bytes.size() - kDigestSize;
  const auto digest = sha256(bytes.data(), body);
  if (std::memcmp(digest.data(), bytes.data() + body, kDigestSize) != 0) {
    throw CheckpointError("checkpoint digest mismatch (corrupted)" + where);
  }

  std::size_t pos = sizeof(kMagic);
  const auto version = read_pod<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          where);
  }
  const auto header_len = read_pod<std::uint64_t>(bytes, pos);
  if (pos + header_len > body) throw CheckpointError("checkpoint truncated" + where);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what() + where);
  }
  pos += header_len;

  Checkpoint ckpt;
  ckpt.meta = CheckpointMeta::from_json(header.at("meta"));
  const std::size_t payload = pos;
  for (const auto& entry : header.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = shape_volume(shape);
    const std::size_t start = payload + offset * sizeof(double);
    if (start + count * sizeof(double) > body) {
      throw CheckpointError("checkpoint tensor out of bounds" + where);
    }
    Tensor t(shape);
    std::memcpy(t.data(), bytes.data() + start, count * sizeof(double));
    ckpt.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

void require_compatible(const CheckpointMeta& actual, const CheckpointMeta& expected) {
  auto fail = [&](const std::string& field, const std::string& a,
                  const std::string& e) {
    throw CheckpointError("checkpoint " + field + " mismatch: found " + a +
                          ", expected " + e);
  };
  if (!expected.backbone.empty() && actual.backbone != expected.backbone) {
    fail("backbone", actual.backbone, expected.backbone);
  }
  if (expected.feature_dim && actual.feature_dim != expected.feature_dim) {
    fail("feature_dim", std::to_string(actual.feature_dim),
         std::to_string(expected.feature_dim));
  }
  if (expected.embedding_dim && actual.embedding_dim != expected.embedding_dim) {
    fail("embedding_dim", std::to_string(actual.embedding_dim),
         std::to_string(expected.embedding_dim));
  }
  if (expected.total_identities &&
      actual.total_identities != expected.total_identities) {
    fail("total_identities", std::to_string(actual.total_identities),
         std::to_string(expected.total_identities));
  }
  if (!expected.stage.empty() && actual.stage != expected.stage) {
    fail("stage", actual.stage, expected.stage);
  }
}

std::string sha256_hex(const std::string& bytes) {
  const auto d = sha256(bytes.data(), bytes.size());
  return to_hex(d.data(), d.size());
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

NamedTensors with_prefix(const NamedTensors& tensors, const std::string& prefix) {
  NamedTensors out;
  for (const auto& [name, t] : tensors) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), t);
  }
  return out;
}

void merge_prefixed(NamedTensors& into, const NamedTensors& from,
                    const std::string& prefix) {
  for (const auto& [name, t] : from) into.insert_or_assign(prefix + name, t);
}

}  // namespace dgreid
