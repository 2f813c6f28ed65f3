#pragma once

// Episode records, scripted-expert demo generation and the on-disk demo
// dataset (one blob file per episode plus index.json with CRC-32 checksums).

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "geodp/env/planar_env.hpp"
#include "geodp/numerics/blob.hpp"

namespace geodp::env {

inline const std::string kEpisodeMagic = "geodp-episode";
inline constexpr int kDatasetFormatVersion = 1;

// Observation t is the one the agent saw before taking action t.
struct EpisodeRecord {
  Task task = Task::reach;
  std::uint64_t seed = 0;
  bool success = false;
  Tensor<float> images;    // [T, V, 3, H, W]
  Tensor<double> proprio;  // [T, 5]
  Tensor<double> actions;  // [T, 4]

  std::size_t steps() const { return actions.empty() ? 0 : actions.dim(0); }
};

class EpisodeRecorder {
 public:
  EpisodeRecorder(Task task, std::uint64_t seed) : task_(task), seed_(seed) {}

  void record(const Observation& obs, const Action& action) {
    if (frame_shape_.empty()) frame_shape_ = obs.images.shape();
    require(obs.images.shape() == frame_shape_, ErrorKind::shape, "recorder: frame shape changed");
    images_.insert(images_.end(), obs.images.values().begin(), obs.images.values().end());
    proprio_.insert(proprio_.end(), obs.proprio.begin(), obs.proprio.end());
    const auto a = action.to_array();
    actions_.insert(actions_.end(), a.begin(), a.end());
    ++steps_;
  }

  EpisodeRecord finish(bool success) && {
    EpisodeRecord r;
    r.task = task_;
    r.seed = seed_;
    r.success = success;
    Shape img{steps_};
    img.insert(img.end(), frame_shape_.begin(), frame_shape_.end());
    if (frame_shape_.empty()) img = {0, 0, 3, 0, 0};
    r.images = Tensor<float>(img, std::move(images_));
    r.proprio = Tensor<double>({steps_, kProprioDim}, std::move(proprio_));
    r.actions = Tensor<double>({steps_, kActionDim}, std::move(actions_));
    return r;
  }

 private:
  Task task_;
  std::uint64_t seed_;
  std::size_t steps_ = 0;
  Shape frame_shape_;
  std::vector<float> images_;
  std::vector<double> proprio_;
  std::vector<double> actions_;
};

// Runs the scripted expert for one episode.
inline EpisodeRecord expert_episode(Task task, std::uint64_t seed, const EnvConfig& config) {
  PlanarEnv env(config);
  Observation obs = env.reset(task, seed);
  EpisodeRecorder rec(task, seed);
  bool done = false, success = false;
  while (!done) {
    const Action a = clamp_action(expert_action(env.state()));
    rec.record(obs, a);
    auto r = env.step(a);
    obs = std::move(r.observation);
    done = r.done;
    success = r.success;
  }
  return std::move(rec).finish(success);
}

inline std::uint64_t demo_seed(std::uint64_t base_seed, std::size_t attempt) {
  return derive_seed(base_seed, "demo") + attempt;
}

// Keeps only successful expert episodes, trying up to 10n seeds.
inline std::vector<EpisodeRecord> generate_demos(Task task, std::size_t n, std::uint64_t seed,
                                                 const EnvConfig& config) {
  require(n > 0, ErrorKind::config, "gen-demos: episode count must be positive");
  std::vector<EpisodeRecord> out;
  for (std::size_t attempt = 0; attempt < 10 * n && out.size() < n; ++attempt) {
    auto ep = expert_episode(task, demo_seed(seed, attempt), config);
    if (ep.success) out.push_back(std::move(ep));
  }
  require(out.size() == n, ErrorKind::coherence,
          "expert reached only " + std::to_string(out.size()) + "/" + std::to_string(n) + " successes on " +
              std::string(task_name(task)) + " within " + std::to_string(10 * n) + " attempts");
  return out;
}

inline BlobFile episode_blob(const EpisodeRecord& ep) {
  BlobFile b;
  b.meta = {{"task", task_name(ep.task)},
            {"seed", ep.seed},
            {"success", ep.success},
            {"steps", ep.steps()}};
  b.put("images", ep.images);
  b.put("proprio", ep.proprio);
  b.put("actions", ep.actions);
  return b;
}

inline EpisodeRecord episode_from_blob(const BlobFile& b) {
  EpisodeRecord ep;
  ep.task = parse_task(b.meta.at("task").get<std::string>());
  ep.seed = b.meta.at("seed").get<std::uint64_t>();
  ep.success = b.meta.at("success").get<bool>();
  ep.images = b.get<float>("images");
  ep.proprio = b.get<double>("proprio");
  ep.actions = b.get<double>("actions");
  const std::size_t t = b.meta.at("steps").get<std::size_t>();
  require(ep.images.rank() == 5 && ep.images.dim(0) == t && ep.proprio.shape() == Shape{t, kProprioDim} &&
              ep.actions.shape() == Shape{t, kActionDim},
          ErrorKind::io, "episode arrays disagree with header step count");
  return ep;
}

inline std::string episode_filename(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode_%04zu.bin", i);
  return buf;
}

inline void save_dataset(const std::filesystem::path& dir, const std::vector<EpisodeRecord>& episodes,
                         const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  nlohmann::json index = {{"format_version", kDatasetFormatVersion}, {"meta", extra}};
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const std::string bytes = episode_blob(episodes[i]).serialize(kEpisodeMagic);
    const std::string name = episode_filename(i);
    write_file(dir / name, bytes);
    list.push_back({{"file", name},
                    {"task", task_name(episodes[i].task)},
                    {"seed", episodes[i].seed},
                    {"steps", episodes[i].steps()},
                    {"bytes", bytes.size()},
                    {"crc32", crc32_bytes(bytes)}});
  }
  index["episodes"] = list;
  write_file(dir / "index.json", index.dump(2) + "\n");
}

inline std::vector<EpisodeRecord> load_dataset(const std::filesystem::path& dir) {
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file(dir / "index.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, (dir / "index.json").string() + ": " + e.what());
  }
  require(index.value("format_version", -1) == kDatasetFormatVersion, ErrorKind::io,
          "unsupported dataset format in " + dir.string());
  std::vector<EpisodeRecord> out;
  for (const auto& e : index.at("episodes")) {
    const auto path = dir / e.at("file").get<std::string>();
    const std::string bytes = read_file(path);
    require(crc32_bytes(bytes) == e.at("crc32").get<std::uint32_t>() && bytes.size() == e.at("bytes").get<std::size_t>(),
            ErrorKind::io, "checksum mismatch for " + path.string());
    out.push_back(episode_from_blob(BlobFile::parse(bytes, kEpisodeMagic, path.string())));
  }
  require(!out.empty(), ErrorKind::io, "dataset " + dir.string() + " has no episodes");
  return out;
}

}  // namespace geodp::env
