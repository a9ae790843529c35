#include "assembly/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace assembly {

namespace {

void dump_into(const nlohmann::ordered_json& j, std::string& out) {
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += nlohmann::ordered_json(it.key()).dump();
        out += ':';
        dump_into(it.value(), out);
      }
      out += '}';
      break;
    }
    case nlohmann::json::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        first = false;
        dump_into(v, out);
      }
      out += ']';
      break;
    }
    case nlohmann::json::value_t::number_float: {
      double v = j.get<double>();
      if (v == 0.0) v = 0.0;  // no "-0.000000"
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", v);
      if (std::strcmp(buf, "-0.000000") == 0) std::strcpy(buf, "0.000000");
      out += buf;
      break;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump_fixed(const nlohmann::ordered_json& j) {
  std::string out;
  dump_into(j, out);
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace {

static_assert(std::endian::native == std::endian::little, "blobs are written in native order");

template <typename T>
void write_blob(const std::filesystem::path& path, std::span<const T> data) {
  write_text(path, std::string_view(reinterpret_cast<const char*>(data.data()), data.size_bytes()));
}

template <typename T>
std::vector<T> read_blob(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() % sizeof(T) != 0) throw std::runtime_error("truncated blob " + path.string());
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void write_sidecar(const std::filesystem::path& path, std::string_view dtype,
                   const std::vector<int>& shape, const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["dtype"] = dtype;
  j["byte_order"] = "little";
  j["shape"] = shape;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text(path.string() + ".json", dump_fixed(j) + "\n");
}

}  // namespace

void write_f32_blob(const std::filesystem::path& path, std::span<const float> data) {
  write_blob(path, data);
}
void write_u8_blob(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  write_blob(path, data);
}
std::vector<float> read_f32_blob(const std::filesystem::path& path) { return read_blob<float>(path); }
std::vector<std::uint8_t> read_u8_blob(const std::filesystem::path& path) {
  return read_blob<std::uint8_t>(path);
}

void write_tensor(const std::filesystem::path& path, std::span<const float> data,
                  const std::vector<int>& shape, const nlohmann::ordered_json& extra) {
  write_f32_blob(path, data);
  write_sidecar(path, "float32", shape, extra);
}

void write_tensor(const std::filesystem::path& path, std::span<const std::uint8_t> data,
                  const std::vector<int>& shape, const nlohmann::ordered_json& extra) {
  write_u8_blob(path, data);
  write_sidecar(path, "uint8", shape, extra);
}

}  // namespace assembly
