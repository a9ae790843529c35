#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace assembly {

/// Compact JSON with every floating-point number printed as %.6f, so that
/// artifacts are byte-stable across runs.
std::string dump_fixed(const nlohmann::ordered_json& j);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Derives an independent stream seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

void write_f32_blob(const std::filesystem::path& path, std::span<const float> data);
void write_u8_blob(const std::filesystem::path& path, std::span<const std::uint8_t> data);
std::vector<float> read_f32_blob(const std::filesystem::path& path);
std::vector<std::uint8_t> read_u8_blob(const std::filesystem::path& path);

/// Writes `blob` plus a `<blob>.json` sidecar describing it.
void write_tensor(const std::filesystem::path& path, std::span<const float> data,
                  const std::vector<int>& shape, const nlohmann::ordered_json& extra);
void write_tensor(const std::filesystem::path& path, std::span<const std::uint8_t> data,
                  const std::vector<int>& shape, const nlohmann::ordered_json& extra);

inline constexpr int kSchemaVersion = 1;

}  // namespace assembly
