// Command-line surface: dataset generation, training, evaluation, and
// offline reward inspection over the JSON/JSONL formats described in the
// README.

#include <signal.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "boxrl/eval.hpp"
#include "boxrl/grpo.hpp"
#include "boxrl/io.hpp"
#include "boxrl/rewards.hpp"
#include "boxrl/synth.hpp"
#include "boxrl/trainer.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitProvider = 4;
constexpr int kExitNumeric = 5;

struct TrainCli {
  std::string dataset;
  std::string out_dir;
  std::string config_file;
  std::string resume;
  std::string regime = "grpo";
  std::int64_t steps = 0;
  int group_size = 0;
  double beta = 0.0;
  double eps = 0.0;
  int k_refresh = 0;
  std::uint64_t seed = 0;
};

boxrl::ojson load_config_or_empty(const std::string& path) {
  if (path.empty()) return boxrl::ojson::object();
  return boxrl::io_detail::load_json_file(path, "config");
}

boxrl::ProviderConfig provider_from(const boxrl::ojson& cfg_json) {
  if (!cfg_json.contains("provider")) return boxrl::ProviderConfig{};
  return boxrl::provider_config_from_json(cfg_json.at("provider"));
}

int cmd_gen_synthetic(const std::string& out_path, const std::string& config_file,
                      const CLI::App& cmd, boxrl::SynthConfig cfg) {
  boxrl::apply_synth_config_json(load_config_or_empty(config_file), cfg);
  // flag overrides land after the file
  if (cmd.count("--num-samples")) cfg.num_samples = cmd.get_option("--num-samples")->as<int>();
  if (cmd.count("--width")) cfg.width = cmd.get_option("--width")->as<int>();
  if (cmd.count("--height")) cfg.height = cmd.get_option("--height")->as<int>();
  if (cmd.count("--distractor-rate"))
    cfg.distractor_rate = cmd.get_option("--distractor-rate")->as<double>();
  if (cmd.count("--seed")) cfg.seed = cmd.get_option("--seed")->as<std::uint64_t>();
  cfg.validate();
  boxrl::save_dataset(out_path, boxrl::generate_dataset(cfg));
  return 0;
}

int cmd_train(const TrainCli& args, const CLI::App& cmd) {
  const boxrl::ojson cfg_json = load_config_or_empty(args.config_file);
  boxrl::TrainConfig cfg;
  boxrl::apply_train_config_json(cfg_json, cfg);
  if (cmd.count("--steps")) cfg.steps = args.steps;
  if (cmd.count("--group-size")) cfg.group_size = args.group_size;
  if (cmd.count("--beta")) cfg.beta = args.beta;
  if (cmd.count("--eps")) cfg.eps = args.eps;
  if (cmd.count("--k-refresh")) cfg.refresh_interval = args.k_refresh;
  if (cmd.count("--seed")) cfg.seed = args.seed;
  cfg.validate();

  const auto dataset = boxrl::load_dataset(args.dataset);
  const auto provider = boxrl::make_provider(provider_from(cfg_json));

  boxrl::RunOptions options;
  options.out_dir = args.out_dir;
  options.regime = args.regime;
  if (!args.resume.empty()) options.resume = args.resume;
  boxrl::run_training(dataset, cfg, *provider, options);
  return 0;
}

int cmd_eval(const std::string& dataset_path, const std::string& checkpoint_path) {
  const auto dataset = boxrl::load_dataset(dataset_path);
  const boxrl::LoadedCheckpoint loaded = boxrl::load_checkpoint(checkpoint_path);
  boxrl::SlotSpec spec = boxrl::SlotSpec::defaults(loaded.bins);
  if (static_cast<int>(spec.templates.size()) != loaded.template_count)
    throw boxrl::DataError("checkpoint template count does not match this build");
  const boxrl::EvalReport report =
      boxrl::evaluate_policy(loaded.state.current, spec, dataset);
  std::cout << boxrl::report_to_json(report).dump() << "\n";
  return 0;
}

int cmd_reward(const std::string& completions_path, const std::string& dataset_path,
               const std::string& config_file) {
  const auto dataset = boxrl::load_dataset(dataset_path);
  std::map<std::string, const boxrl::GroundingSample*> by_id;
  for (const auto& s : dataset) by_id[s.id] = &s;

  const auto provider = boxrl::make_provider(provider_from(load_config_or_empty(config_file)));

  std::ifstream in(completions_path);
  if (!in) throw boxrl::IoError("cannot open completions file: " + completions_path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const boxrl::ojson j =
        boxrl::io_detail::parse_json(line, "completions line " + std::to_string(line_no));
    std::string id, text;
    try {
      id = j.at("id").get<std::string>();
      text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw boxrl::DataError("completions line " + std::to_string(line_no) +
                             " must be {\"id\",\"text\"}: " + e.what());
    }
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw boxrl::UnknownSampleError(id);
    const boxrl::RewardBreakdown b = boxrl::total_reward(text, *it->second, *provider);
    if (b.total != b.format + b.spatial + b.semantic)
      throw boxrl::NumericError("reward total does not equal the component sum");
    boxrl::ojson out;
    out["id"] = id;
    out["format"] = b.format;
    out["spatial"] = b.spatial;
    out["semantic"] = b.semantic;
    out["total"] = b.total;
    std::cout << out.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  ::signal(SIGPIPE, SIG_IGN);

  CLI::App app{"desk-scale box-grounding policy trainer"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic grounding dataset");
  std::string gen_out, gen_config;
  boxrl::SynthConfig synth_defaults;
  gen->add_option("--out", gen_out, "output dataset (JSONL)")->required();
  gen->add_option("--config", gen_config, "synth config JSON file");
  gen->add_option("--num-samples", synth_defaults.num_samples, "samples to generate");
  gen->add_option("--width", synth_defaults.width, "scene width");
  gen->add_option("--height", synth_defaults.height, "scene height");
  gen->add_option("--distractor-rate", synth_defaults.distractor_rate,
                  "same-class distractor probability");
  gen->add_option("--seed", synth_defaults.seed, "generator seed");

  // train
  auto* train = app.add_subcommand("train", "optimize a policy on a dataset");
  TrainCli train_args;
  train->add_option("dataset", train_args.dataset, "dataset JSONL")->required();
  train->add_option("out-dir", train_args.out_dir, "output directory")->required();
  train->add_option("--config", train_args.config_file, "train config JSON file");
  train->add_option("--steps", train_args.steps, "training steps");
  train->add_option("--group-size", train_args.group_size, "completions per group (G)");
  train->add_option("--beta", train_args.beta, "KL penalty coefficient");
  train->add_option("--eps", train_args.eps, "ratio clipping half-width");
  train->add_option("--k-refresh", train_args.k_refresh, "old-policy refresh interval");
  train->add_option("--seed", train_args.seed, "run seed");
  train->add_option("--regime", train_args.regime, "grpo|sft")
      ->check(CLI::IsMember({"grpo", "sft"}));
  train->add_option("--resume", train_args.resume, "checkpoint to resume from");

  // eval
  auto* eval = app.add_subcommand("eval", "greedy-decode metrics for a checkpoint");
  std::string eval_dataset, eval_checkpoint;
  eval->add_option("dataset", eval_dataset, "dataset JSONL")->required();
  eval->add_option("checkpoint", eval_checkpoint, "checkpoint JSON")->required();

  // reward
  auto* reward = app.add_subcommand("reward", "grade a file of completions");
  std::string reward_completions, reward_dataset, reward_config;
  reward->add_option("completions", reward_completions, "JSONL of {\"id\",\"text\"}")
      ->required();
  reward->add_option("dataset", reward_dataset, "dataset JSONL")->required();
  reward->add_option("--config", reward_config, "config JSON (provider selection)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_synthetic(gen_out, gen_config, *gen, synth_defaults);
    if (train->parsed()) return cmd_train(train_args, *train);
    if (eval->parsed()) return cmd_eval(eval_dataset, eval_checkpoint);
    if (reward->parsed()) return cmd_reward(reward_completions, reward_dataset, reward_config);
  } catch (const boxrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const boxrl::ProviderError& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return kExitProvider;
  } catch (const boxrl::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const boxrl::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
