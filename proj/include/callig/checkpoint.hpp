#pragma once

// Policy checkpoint container:
//   "CALLIGCK" | u32 schema | u64 n + canonical JSON header (model config,
//   fingerprint, seed, step, rng state, run config text) | u64 count | per parameter:
//   u32 name length, name, u32 rank, u64 extents..., float64 values.
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "callig/fsutil.hpp"
#include "callig/model.hpp"

namespace callig {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'L', 'L', 'I', 'G', 'C', 'K'};

struct PolicyCheckpoint {
  ModelConfig model;
  ParameterSet params;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string rng_state;
  std::string run_config;  // canonical configuration text, if known
};

inline std::string serialize_checkpoint(const PolicyCheckpoint& ck) {
  nlohmann::json header{{"model", to_json(ck.model)},
                        {"fingerprint", model_fingerprint(ck.model)},
                        {"seed", ck.seed},
                        {"step", ck.step},
                        {"rng_state", ck.rng_state},
                        {"run_config", ck.run_config}};
  const std::string header_text = header.dump();
  std::string out;
  append_bytes(out, kCheckpointMagic, sizeof kCheckpointMagic);
  append_pod(out, kCheckpointSchemaVersion);
  append_pod(out, static_cast<std::uint64_t>(header_text.size()));
  out += header_text;
  append_pod(out, static_cast<std::uint64_t>(ck.params.size()));
  for (const auto& [name, t] : ck.params.entries()) {
    append_pod(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    append_pod(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) append_pod(out, static_cast<std::uint64_t>(e));
    append_bytes(out, t.values().data(), t.numel() * sizeof(double));
  }
  return out;
}

// Parses and validates a checkpoint. When `expected` is given its fingerprint
// must match the stored model configuration.
inline PolicyCheckpoint deserialize_checkpoint(const std::string& bytes, const std::string& source,
                                               const std::optional<ModelConfig>& expected = std::nullopt) {
  ByteReader in(bytes, source);
  char magic[8];
  in.raw(magic, sizeof magic);
  if (std::string(magic, 8) != std::string(kCheckpointMagic, 8)) throw IoError(source + " is not a checkpoint");
  if (in.pod<std::uint32_t>() != kCheckpointSchemaVersion) throw ConfigError(source + ": unsupported checkpoint schema");
  const auto header_len = in.pod<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.string(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(source + ": malformed checkpoint header: " + e.what());
  }
  PolicyCheckpoint ck;
  ck.model = model_config_from_json(header.at("model"));
  const std::string fingerprint = model_fingerprint(ck.model);
  if (header.at("fingerprint").get<std::string>() != fingerprint) {
    throw ConfigError(source + ": checkpoint config fingerprint mismatch");
  }
  if (expected && model_fingerprint(*expected) != fingerprint) {
    throw ConfigError(source + ": checkpoint was trained with a different model configuration");
  }
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.step = header.at("step").get<std::uint64_t>();
  ck.rng_state = header.at("rng_state").get<std::string>();
  ck.run_config = header.value("run_config", std::string());

  const auto count = in.pod<std::uint64_t>();
  const auto layout = parameter_layout(ck.model);
  if (count != layout.size()) throw ConfigError(source + ": parameter count does not match model layout");
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = in.string(in.pod<std::uint32_t>());
    Shape shape(in.pod<std::uint32_t>());
    for (auto& e : shape) e = static_cast<std::size_t>(in.pod<std::uint64_t>());
    if (name != layout[k].name || shape != layout[k].shape) {
      throw ConfigError(source + ": unexpected parameter " + name + " " + shape_str(shape));
    }
    std::vector<double> values(shape_numel(shape));
    in.raw(values.data(), values.size() * sizeof(double));
    ck.params.add(name, Tensor(shape, std::move(values)));
  }
  if (!in.done()) throw IoError(source + ": trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const PolicyCheckpoint& ck, const fs::path& path) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

inline PolicyCheckpoint load_checkpoint(const fs::path& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  return deserialize_checkpoint(read_file(path), path.string(), expected);
}

inline PolicyModel model_from_checkpoint(const PolicyCheckpoint& ck) { return PolicyModel(ck.model, ck.params.clone()); }

}  // namespace callig
