#pragma once

// On-disk demonstration datasets.
//
//   <dir>/manifest.json
//   <dir>/demo_0000/poses.bin        T x 7 little-endian float64 (t1 t2 t3 w x y z)
//   <dir>/demo_0000/pen.bin          T bytes (1 = pen down)
//   <dir>/demo_0000/frame_0000.png   16-bit observation frames
//   <dir>/demo_0000/final.png        16-bit final canvas

#include <bit>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "callig/fsutil.hpp"
#include "callig/image.hpp"
#include "callig/rng.hpp"
#include "callig/sim.hpp"

namespace callig {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr int kDatasetSchemaVersion = 1;

inline nlohmann::json to_json(const SimConfig& c) {
  return {{"image_channels", c.image_channels},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"footprint_radius_px", c.footprint_radius_px},
          {"travel_height", c.travel_height},
          {"contact_threshold", c.contact_threshold},
          {"lift_steps", c.lift_steps},
          {"descend_steps", c.descend_steps},
          {"travel_step", c.travel_step},
          {"hold_steps", c.hold_steps},
          {"marker_length", c.marker_length},
          {"marker_half_width_px", c.marker_half_width_px},
          {"cue_radius_px", c.cue_radius_px},
          {"style_jitter", c.style_jitter}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  c.image_channels = j.at("image_channels").get<std::size_t>();
  c.image_height = j.at("image_height").get<std::size_t>();
  c.image_width = j.at("image_width").get<std::size_t>();
  c.footprint_radius_px = j.at("footprint_radius_px").get<double>();
  c.travel_height = j.at("travel_height").get<double>();
  c.contact_threshold = j.at("contact_threshold").get<double>();
  c.lift_steps = j.at("lift_steps").get<std::size_t>();
  c.descend_steps = j.at("descend_steps").get<std::size_t>();
  c.travel_step = j.at("travel_step").get<double>();
  c.hold_steps = j.at("hold_steps").get<std::size_t>();
  c.marker_length = j.at("marker_length").get<double>();
  c.marker_half_width_px = j.at("marker_half_width_px").get<double>();
  c.cue_radius_px = j.at("cue_radius_px").get<double>();
  c.style_jitter = j.at("style_jitter").get<double>();
  c.validate();
  return c;
}

inline std::string sim_fingerprint(const SimConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

struct Dataset {
  SimConfig sim;
  std::vector<Demonstration> demos;
};

namespace detail {

inline std::string demo_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "demo_%04zu", i);
  return buf;
}

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.png", i);
  return buf;
}

inline Image canvas_image(const Canvas& c) {
  Image img(1, c.height, c.width);
  img.data = c.data;
  return img;
}

}  // namespace detail

// Writes the dataset into `dir`, replacing any previous content atomically.
inline void write_dataset(const Dataset& ds, const fs::path& dir) {
  StagedDirectory stage(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["image_shape"] = {ds.sim.image_channels, ds.sim.image_height, ds.sim.image_width};
  manifest["sim"] = to_json(ds.sim);
  manifest["config_fingerprint"] = sim_fingerprint(ds.sim);
  manifest["demos"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.demos.size(); ++i) {
    const auto& demo = ds.demos[i];
    const fs::path sub = stage.path() / detail::demo_dir_name(i);
    fs::create_directories(sub);
    std::string poses;
    for (const auto& obs : demo.observations) {
      for (double v : obs.pose.to_array()) append_pod(poses, v);
    }
    write_file_atomic(sub / "poses.bin", poses);
    write_file_atomic(sub / "pen.bin", std::string(demo.pen_down.begin(), demo.pen_down.end()));
    for (std::size_t t = 0; t < demo.observations.size(); ++t) write_png16(sub / detail::frame_name(t), demo.observations[t].image);
    write_png16(sub / "final.png", detail::canvas_image(demo.final_canvas));
    manifest["demos"].push_back({{"name", detail::demo_dir_name(i)},
                                 {"template", demo.template_id},
                                 {"seed", demo.style_seed},
                                 {"steps", demo.observations.size()}});
  }
  write_file_atomic(stage.path() / "manifest.json", manifest.dump(2) + "\n");
  stage.commit();
}

inline Dataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("schema_version", -1) != kDatasetSchemaVersion) {
    throw ConfigError("unsupported dataset schema version in " + dir.string());
  }
  Dataset ds;
  ds.sim = sim_config_from_json(manifest.at("sim"));
  if (manifest.at("config_fingerprint").get<std::string>() != sim_fingerprint(ds.sim)) {
    throw ConfigError("dataset fingerprint mismatch in " + dir.string());
  }
  for (const auto& entry : manifest.at("demos")) {
    const fs::path sub = dir / entry.at("name").get<std::string>();
    const auto steps = entry.at("steps").get<std::size_t>();
    Demonstration demo;
    demo.template_id = entry.at("template").get<std::string>();
    demo.style_seed = entry.at("seed").get<std::uint64_t>();

    const std::string pose_bytes = read_file(sub / "poses.bin");
    const std::string pen_bytes = read_file(sub / "pen.bin");
    if (pose_bytes.size() != steps * 7 * sizeof(double) || pen_bytes.size() != steps) {
      throw IoError("record size mismatch in " + sub.string());
    }
    ByteReader reader(pose_bytes, (sub / "poses.bin").string());
    for (std::size_t t = 0; t < steps; ++t) {
      PoseState pose;
      for (auto& v : pose.translation) v = reader.pod<double>();
      pose.rotation.w = reader.pod<double>();
      pose.rotation.x = reader.pod<double>();
      pose.rotation.y = reader.pod<double>();
      pose.rotation.z = reader.pod<double>();
      pose.pen_down = pen_bytes[t] != 0;
      Image frame = read_png(sub / detail::frame_name(t));
      if (frame.channels != ds.sim.image_channels || frame.height != ds.sim.image_height ||
          frame.width != ds.sim.image_width) {
        throw IoError("frame shape mismatch in " + sub.string());
      }
      demo.observations.push_back({std::move(frame), pose});
      demo.pen_down.push_back(static_cast<std::uint8_t>(pen_bytes[t]));
    }
    const Image final_img = read_png(sub / "final.png");
    demo.final_canvas = Canvas(final_img.height, final_img.width);
    demo.final_canvas.data = final_img.data;
    ds.demos.push_back(std::move(demo));
  }
  return ds;
}

// `count` demonstrations per template. Demo k (counting across templates in
// order) uses style seed derive_seed(seed, k).
inline Dataset generate_dataset(const std::vector<std::string>& templates, std::size_t count, std::uint64_t seed,
                                double jitter, const SimConfig& sim) {
  if (templates.empty()) throw ConfigError("generate: no templates given");
  if (count < 1) throw ConfigError("generate: count must be >= 1");
  Dataset ds{sim, {}};
  std::uint64_t k = 0;
  for (const auto& id : templates) {
    const CharacterTemplate tpl = find_template(id);
    for (std::size_t i = 0; i < count; ++i) ds.demos.push_back(generate_demonstration(tpl, derive_seed(seed, k++), jitter, sim));
  }
  return ds;
}

}  // namespace callig
