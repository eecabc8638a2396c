// Command line front end: train / evaluate / serve / bench / plot / config.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 threshold miss (for CI gating on evaluate/bench).

#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <thread>

#include <CLI11.hpp>

#include "guiderl/config.hpp"
#include "guiderl/mentor.hpp"
#include "guiderl/plot.hpp"
#include "guiderl/trainer.hpp"
#include "guiderl/transport.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitThreshold = 3;

volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }

guiderl::RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  if (path.empty()) {
    return guiderl::RunConfig::with_overrides(guiderl::RunConfig{}, sets);
  }
  return guiderl::RunConfig::load_file(path, sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guiderl: mentor-guided actor-critic driving at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "run configuration file (JSON)");
    cmd->add_option("--set", overrides, "override a config field, e.g. --set env.v_max=5");
  };

  // train
  auto* train_cmd = app.add_subcommand("train", "run training to total_steps");
  add_common(train_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  std::string ckpt_path, eval_out;
  uint64_t eval_seed = 1;
  double min_driving_score = -1.0, min_success_rate = -1.0;
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--out", eval_out, "output directory for metrics files");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");
  eval_cmd->add_option("--min-driving-score", min_driving_score,
                       "exit 3 when the mean driving score is below this");
  eval_cmd->add_option("--min-success-rate", min_success_rate,
                       "exit 3 when the success rate is below this");
  add_common(eval_cmd);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "run the standalone inference server");
  int serve_port = 7601;
  serve_cmd->add_option("--port", serve_port, "TCP port (0 picks an ephemeral port)");
  add_common(serve_cmd);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "latency/throughput measurements");
  double min_ratio = -1.0;
  bench_cmd->add_option("--min-rollout-ratio", min_ratio,
                        "exit 3 when with-inference rollout throughput falls below this "
                        "fraction of the no-inference baseline");
  add_common(bench_cmd);

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "emit figures from a run directory");
  std::string run_dir;
  int smooth_window = 51;
  plot_cmd->add_option("run_dir", run_dir, "run directory with train.csv")->required();
  plot_cmd->add_option("--window", smooth_window, "moving-average window (1 = raw)");

  // config init
  auto* config_cmd = app.add_subcommand("config", "configuration utilities");
  auto* config_init = config_cmd->add_subcommand("init", "write the default config");
  std::string config_out = "guiderl.json";
  config_init->add_option("-o,--output", config_out, "output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      guiderl::RunConfig cfg;
      try {
        cfg = load_config(config_path, overrides);
      } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
      }
      auto summaries = guiderl::train(cfg);
      for (const auto& s : summaries) {
        std::cout << "run " << s.run_dir << ": " << s.steps << " steps, " << s.episodes
                  << " episodes, availability " << s.availability << "\n";
      }
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      guiderl::RunConfig cfg;
      try {
        cfg = load_config(config_path, overrides);
      } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
      }
      auto agg = guiderl::evaluate_checkpoint(ckpt_path, cfg, eval_seed, eval_out);
      std::cout << agg.to_table();
      if (min_driving_score >= 0 && agg.driving_score_mean < min_driving_score) {
        std::cerr << "threshold miss: driving score " << agg.driving_score_mean << " < "
                  << min_driving_score << "\n";
        return kExitThreshold;
      }
      if (min_success_rate >= 0 && agg.success_rate < min_success_rate) {
        std::cerr << "threshold miss: success rate " << agg.success_rate << " < "
                  << min_success_rate << "\n";
        return kExitThreshold;
      }
      return kExitOk;
    }

    if (serve_cmd->parsed()) {
      guiderl::RunConfig cfg;
      try {
        cfg = load_config(config_path, overrides);
        if (!cfg.mentor_enabled()) {
          // A bare server still serves action requests.
          cfg.guidance.vmr_enabled = true;
        }
      } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
      }
      guiderl::MentorConfig mc = cfg.mentor;
      mc.provide_action = true;
      mc.provide_score = cfg.shaping.enabled;
      guiderl::ExpertParams ep;
      ep.v_max = cfg.env.v_max;
      ep.wheelbase = cfg.env.wheelbase;
      ep.max_steer_rad = cfg.env.max_steer_rad;
      ep.min_lookahead = cfg.env.min_lookahead;
      ep.lookahead_gain = cfg.env.lookahead_gain;
      guiderl::ScoringAssets assets;
      if (mc.provide_score) assets = guiderl::build_scoring_assets(cfg.shaping, mc.seed);
      auto model = std::make_shared<guiderl::MockMentor>(mc, ep, assets);
      guiderl::SocketServer server(cfg.batcher, model, serve_port);
      server.start();
      std::cout << "serving on 127.0.0.1:" << server.port() << " (ctrl-c to stop)\n";
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      auto st = server.stats();
      std::cout << "served " << st.responses << " responses in " << st.batches_formed
                << " batches\n";
      return kExitOk;
    }

    if (bench_cmd->parsed()) {
      guiderl::RunConfig cfg;
      try {
        cfg = load_config(config_path, overrides);
      } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
      }
      auto rep = guiderl::bench(cfg, /*write_csv=*/true);
      std::cout << rep.to_table();
      if (min_ratio >= 0 && rep.rollout_fps_infer < min_ratio * rep.rollout_fps_plain) {
        std::cerr << "threshold miss: rollout ratio "
                  << rep.rollout_fps_infer / rep.rollout_fps_plain << " < " << min_ratio << "\n";
        return kExitThreshold;
      }
      return kExitOk;
    }

    if (plot_cmd->parsed()) {
      if (!std::filesystem::exists(run_dir + "/train.csv")) {
        std::cerr << "config error: no train.csv under " << run_dir << "\n";
        return kExitConfig;
      }
      int n = guiderl::emit_run_plots(run_dir, smooth_window);
      std::cout << "wrote " << n << " figures to " << run_dir << "\n";
      return kExitOk;
    }

    if (config_init->parsed()) {
      guiderl::RunConfig cfg;
      cfg.save_file(config_out);
      std::cout << "wrote defaults to " << config_out << "\n";
      return kExitOk;
    }
    if (config_cmd->parsed()) {
      std::cerr << "config: expected a subcommand (init)\n";
      return kExitConfig;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
