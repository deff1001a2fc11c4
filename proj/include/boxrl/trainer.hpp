#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "boxrl/error.hpp"
#include "boxrl/grpo.hpp"
#include "boxrl/io.hpp"
#include "boxrl/similarity.hpp"
#include "boxrl/similarity_client.hpp"

namespace boxrl {

struct ProviderConfig {
  std::string kind = "synthetic";  // synthetic | tcp | process
  std::string host = "127.0.0.1";
  int port = 0;
  std::vector<std::string> command;
  int timeout_ms = 10'000;
};

inline ProviderConfig provider_config_from_json(const ojson& j) {
  io_detail::check_known_keys(j, {"kind", "host", "port", "command", "timeout_ms"},
                              "provider config");
  ProviderConfig cfg;
  io_detail::read_field(j, "kind", cfg.kind, "provider config");
  io_detail::read_field(j, "host", cfg.host, "provider config");
  io_detail::read_field(j, "port", cfg.port, "provider config");
  io_detail::read_field(j, "command", cfg.command, "provider config");
  io_detail::read_field(j, "timeout_ms", cfg.timeout_ms, "provider config");
  if (cfg.kind != "synthetic" && cfg.kind != "tcp" && cfg.kind != "process")
    throw ConfigError("provider config: field \"kind\" must be synthetic, tcp, or process");
  return cfg;
}

inline std::unique_ptr<SimilarityProvider> make_provider(const ProviderConfig& cfg) {
  if (cfg.kind == "synthetic") return std::make_unique<SyntheticSimilarity>();
  const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);
  if (cfg.kind == "tcp")
    return std::make_unique<ExternalSimilarity>(connect_tcp(cfg.host, cfg.port, timeout),
                                                timeout);
  return std::make_unique<ExternalSimilarity>(spawn_process(cfg.command), timeout);
}

// Single-owner guard on an output directory.
class OutDirLock {
 public:
  explicit OutDirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw ConfigError("output directory is locked (remove " + path_.string() +
                        " if no run is active)");
    ::close(fd);
  }

  OutDirLock(const OutDirLock&) = delete;
  OutDirLock& operator=(const OutDirLock&) = delete;

  ~OutDirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::string regime = "grpo";  // grpo | sft
  int checkpoint_every = 500;
  std::optional<std::filesystem::path> resume;
};

// Full training run: fresh or resumed, writing log.jsonl (one header line,
// then one StepRecord per step) and checkpoint.json every checkpoint_every
// steps and at completion. Identical seed and config give byte-identical
// logs; resuming from a checkpoint continues bit-exactly.
inline TrainState run_training(const std::vector<GroundingSample>& dataset,
                               const TrainConfig& cfg, SimilarityProvider& provider,
                               const RunOptions& options) {
  cfg.validate();
  if (options.regime != "grpo" && options.regime != "sft")
    throw ConfigError("regime must be grpo or sft");
  if (options.checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (dataset.empty()) throw DataError("training dataset is empty");

  SlotSpec spec = SlotSpec::defaults(cfg.bins);

  OutDirLock lock(options.out_dir);

  TrainState state;
  if (options.resume) {
    LoadedCheckpoint loaded = load_checkpoint(*options.resume);
    if (loaded.cfg_hash != config_hash(cfg))
      throw ConfigError("checkpoint was written under a different configuration (cfg_hash " +
                        loaded.cfg_hash + " != " + config_hash(cfg) + ")");
    if (loaded.bins != cfg.bins ||
        loaded.template_count != static_cast<int>(spec.templates.size()))
      throw ConfigError("checkpoint policy shape does not match configuration");
    state = std::move(loaded.state);
    for (const auto& s : dataset)
      if (!state.current.has(s.id)) throw UnknownSampleError(s.id);
  } else {
    std::vector<std::string> ids;
    for (const auto& s : dataset) ids.push_back(s.id);
    state.current = PolicyParams::uniform(spec, ids);
    state.old = state.current;
    state.ref = state.current;
    state.rng = Rng(cfg.seed);
  }

  const auto log_path = options.out_dir / "log.jsonl";
  const auto ckpt_path = options.out_dir / "checkpoint.json";
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());

  ojson header;
  header["format_version"] = kLogFormatVersion;
  header["regime"] = options.regime;
  header["dataset_size"] = dataset.size();
  header["config"] = train_config_to_json(cfg);
  log << header.dump() << "\n";

  while (state.step < cfg.steps) {
    const GroundingSample& sample =
        dataset[static_cast<std::size_t>(state.step) % dataset.size()];
    const StepRecord rec = options.regime == "sft"
                               ? sft_step(state, sample, spec, cfg)
                               : train_step(state, sample, provider, spec, cfg);
    log << step_record_to_json(rec).dump() << "\n";
    log.flush();
    if (!log) throw IoError("write failed: " + log_path.string());
    if (state.step % options.checkpoint_every == 0)
      save_checkpoint(ckpt_path, state, cfg, spec);
  }
  save_checkpoint(ckpt_path, state, cfg, spec);
  return state;
}

}  // namespace boxrl
