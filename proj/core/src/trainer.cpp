#include "guiderl/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "guiderl/env.hpp"
#include "guiderl/learner.hpp"
#include "guiderl/plot.hpp"
#include "guiderl/transport.hpp"

namespace guiderl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double steady_now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

const std::vector<std::string> kTrainColumns = {
    "step",        "episodes",     "ep_return",   "reward_step",  "route_m_step",
    "td_loss",     "critic_loss",  "actor_loss",  "base_loss",    "vmr_loss",
    "awag_loss",   "lambda_vmr",   "iota_awag",   "awag_scale",   "gate_fraction",
    "mean_weight", "noise",        "availability", "mask_fraction", "r_raw_step",
    "r_vlm_step",  "buffer_margin", "guidance_horizon"};

struct PendingTransition {
  AugmentedTransition t;
  double r_env = 0.0;
  int64_t enqueue_sweep = 0;
  bool waiting_score = false;
  std::optional<double> r_raw;
};

struct EnvSlot {
  std::unique_ptr<KineticEnv> env;
  Observation obs;
  int64_t steps = 0;  // per-env step index; the request/attachment key
  double ep_return = 0.0;
  int ep_steps = 0;
  double ep_speed_sum = 0.0;
  InfractionCounts ep_infr;
  int episodes = 0;
  double last_progress = 0.0;
  std::deque<PendingTransition> pending;
};

// Shared margin ring mirroring the replay buffer's residency window.
class MarginRing {
 public:
  explicit MarginRing(size_t capacity) : capacity_(std::max<size_t>(capacity, 1)) {}
  void push(double v) {
    values_.push_back(v);
    sum_ += v;
    if (values_.size() > capacity_) {
      sum_ -= values_.front();
      values_.pop_front();
    }
  }
  double mean() const {
    return values_.empty() ? 0.0 : sum_ / static_cast<double>(values_.size());
  }
  bool empty() const { return values_.empty(); }

 private:
  size_t capacity_;
  std::deque<double> values_;
  double sum_ = 0.0;
};

json stats_to_json(const BatcherStats& b, const ReplayStats& r) {
  return json{{"batcher",
               {{"submitted", b.submitted},
                {"accepted", b.accepted},
                {"rejected", b.rejected},
                {"evicted", b.evicted},
                {"batches_formed", b.batches_formed},
                {"timeouts_fired", b.timeouts_fired},
                {"mean_wait_s", b.mean_wait_s()},
                {"responses", b.responses},
                {"responses_ok", b.responses_ok},
                {"delivered", b.delivered},
                {"duplicates_suppressed", b.duplicates_suppressed},
                {"dropped_late", b.dropped_late},
                {"availability", b.availability()}}},
              {"replay",
               {{"pushed", r.pushed},
                {"evicted", r.evicted},
                {"attached", r.attached},
                {"dropped_unknown", r.dropped_unknown},
                {"dropped_stale", r.dropped_stale},
                {"duplicates", r.duplicates}}}};
}

void write_manifest(const std::string& run_dir, const RunConfig& cfg, uint64_t seed,
                    const std::string& status, const std::string& error,
                    const TrainSummary* summary) {
  json m;
  m["version"] = kVersionString;
  m["seed"] = seed;
  m["status"] = status;
  if (!error.empty()) m["error"] = error;
  m["config"] = json::parse(cfg.to_json_string());
  if (summary) {
    m["steps"] = summary->steps;
    m["episodes"] = summary->episodes;
    m["availability"] = summary->availability;
    m["mask_fraction"] = summary->mask_fraction;
    m["counters"] = stats_to_json(summary->batcher, summary->replay);
  }
  std::ofstream out(run_dir + "/manifest.json");
  out << m.dump(2) << "\n";
}

struct MentorSetup {
  std::shared_ptr<MockMentor> model;
  ScoringAssets assets;  // only populated when scores are requested
};

MentorSetup make_mentor(const RunConfig& cfg, uint64_t seed) {
  MentorSetup setup;
  MentorConfig mc = cfg.mentor;
  mc.seed = Rng::mix(mc.seed, seed);
  mc.provide_action = cfg.want_action_feedback();
  mc.provide_score = cfg.want_score_feedback();
  ExpertParams ep;
  ep.v_max = cfg.env.v_max;
  ep.wheelbase = cfg.env.wheelbase;
  ep.max_steer_rad = cfg.env.max_steer_rad;
  ep.min_lookahead = cfg.env.min_lookahead;
  ep.lookahead_gain = cfg.env.lookahead_gain;
  if (mc.provide_score) {
    // Scoring assets are shared and keyed by the mentor seed from the config
    // (not the run seed) so every seed of a sweep scores identically.
    setup.assets = build_scoring_assets(cfg.shaping, cfg.mentor.seed);
  }
  setup.model = std::make_shared<MockMentor>(mc, ep, setup.assets);
  return setup;
}

// Everything both train modes share.
struct RunContext {
  RunConfig cfg;
  uint64_t seed = 0;
  std::string run_dir;
  RouteSpec route;
  FeatureSpec spec;
  std::unique_ptr<Learner> learner;
  std::unique_ptr<ReplayBuffer> replay;
  MentorSetup mentor;
  RmsFilter rms{1e-4};
  std::unique_ptr<MarginRing> margin_ring;
  int64_t horizon = 0;
};

RunContext make_context(const RunConfig& cfg_in, uint64_t seed) {
  RunContext ctx;
  ctx.cfg = cfg_in;
  ctx.seed = seed;
  ctx.cfg.learner.total_steps = ctx.cfg.total_steps;
  if (ctx.cfg.guidance.horizon_steps <= 0) {
    ctx.cfg.guidance.horizon_steps = std::max<int64_t>(1, ctx.cfg.total_steps / 2);
  }
  ctx.horizon = ctx.cfg.guidance.horizon_steps;
  ctx.run_dir = ctx.cfg.out_dir + "/seed_" + std::to_string(seed);
  fs::create_directories(ctx.run_dir);
  ctx.route = build_route(ctx.cfg.route);
  ctx.route.validate();
  ctx.spec = FeatureSpec{ctx.cfg.env.grid_c, ctx.cfg.env.grid_h, ctx.cfg.env.grid_w, kStateDim};
  ctx.learner = std::make_unique<Learner>(ctx.cfg.learner, ctx.cfg.guidance, ctx.spec,
                                          Rng::mix(seed, 0x6d6f64ULL));
  size_t capacity = static_cast<size_t>(ctx.cfg.replay_capacity);
  ctx.replay = std::make_unique<ReplayBuffer>(capacity, ctx.cfg.replay_staleness_horizon);
  ctx.rms = RmsFilter(ctx.cfg.shaping.eps_rms);
  ctx.margin_ring = std::make_unique<MarginRing>(capacity);
  if (ctx.cfg.mentor_enabled() && ctx.cfg.transport == "inproc") {
    ctx.mentor = make_mentor(ctx.cfg, seed);
  }
  return ctx;
}

// Routes one polled response into the pending window or the replay buffer.
void route_response(RunContext& ctx, EnvSlot& slot, const InferenceResponse& resp) {
  for (auto& p : slot.pending) {
    if (p.t.step_idx != resp.step_idx) continue;
    if (resp.result.mask == 1) {
      if (resp.result.action && p.t.mask == 0) {
        p.t.vlm_feedback = resp.result.action->clamped();
        p.t.mask = 1;
      }
      if (resp.result.score) {
        p.r_raw = *resp.result.score;
        p.waiting_score = false;
      }
    } else {
      p.waiting_score = false;  // explicit unavailability: stop waiting
    }
    return;
  }
  // Not pending anymore: late attachment through the replay buffer.
  if (resp.result.mask == 1 && resp.result.action) {
    ctx.replay->attach_feedback(resp.env_id, resp.step_idx, *resp.result.action);
  }
}

struct FlushOut {
  double r_raw_sum = 0.0;
  double r_vlm_sum = 0.0;
  int scored = 0;
  int flushed = 0;
};

// Pushes every pending transition that is ready (score arrived, grace
// expired, or nothing to wait for).
void flush_pending(RunContext& ctx, EnvSlot& slot, int64_t sweep, int grace, FlushOut& out) {
  while (!slot.pending.empty()) {
    PendingTransition& p = slot.pending.front();
    bool expired = sweep - p.enqueue_sweep >= grace;
    if (p.waiting_score && !expired) break;
    double r_final = p.r_env;
    if (p.r_raw) {
      ShapedReward sr =
          normalize_and_shape(*p.r_raw, p.r_env, ctx.rms, ctx.cfg.shaping.lambda_shape);
      r_final = sr.r_final;
      ctx.margin_ring->push(*p.r_raw);
      out.r_raw_sum += *p.r_raw;
      out.r_vlm_sum += sr.r_vlm;
      out.scored++;
    }
    p.t.reward = r_final;
    ctx.replay->push(std::move(p.t));
    slot.pending.pop_front();
    out.flushed++;
  }
}

TrainSummary train_deterministic(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  TrainSummary summary;
  summary.run_dir = ctx.run_dir;

  std::unique_ptr<InferenceService> service;
  if (ctx.mentor.model) {
    service = std::make_unique<InferenceService>(cfg.batcher, ctx.mentor.model,
                                                 InferenceService::Mode::kSynchronous);
  }

  Rng run_rng(Rng::mix(ctx.seed, 0x72756eULL));
  std::vector<EnvSlot> slots(static_cast<size_t>(cfg.n_envs));
  for (int e = 0; e < cfg.n_envs; ++e) {
    slots[e].env = std::make_unique<KineticEnv>(cfg.env);
    slots[e].obs = slots[e].env->reset(Rng::mix(ctx.seed, 1000 + e), ctx.route, false);
  }

  CsvWriter train_csv;
  train_csv.open(ctx.run_dir + "/train.csv", kTrainColumns);
  CsvWriter ep_csv;
  ep_csv.open(ctx.run_dir + "/episodes.csv",
              {"step", "env", "episode", "ep_return", "route_completion", "steps", "event",
               "mean_speed", "distance_m"});

  const bool wants_mentor = ctx.mentor.model != nullptr;
  const bool want_action = cfg.want_action_feedback();
  const bool want_score = cfg.want_score_feedback();
  const int grace = want_score ? cfg.pending_grace_steps : 0;

  int64_t global_step = 0;
  int64_t sweep = 0;
  int64_t updates = 0;
  int64_t steps_since_update = 0;
  double last_ep_return = 0.0;
  UpdateStats last_update;

  // Per-log-window accumulators.
  double acc_reward = 0.0, acc_route = 0.0;
  int64_t acc_steps = 0;
  FlushOut acc_flush;

  while (global_step < cfg.total_steps) {
    double vnow = static_cast<double>(sweep) * cfg.step_wall_s;
    for (int e = 0; e < cfg.n_envs && global_step < cfg.total_steps; ++e) {
      EnvSlot& slot = slots[static_cast<size_t>(e)];
      Observation obs = slot.obs;
      Action2D action;
      if (global_step < cfg.learning_starts) {
        action = Action2D{run_rng.uniform(-1, 1), run_rng.uniform(-1, 1)};
      } else {
        action = ctx.learner->act(obs, cfg.learner.exploration_noise(global_step));
      }
      double pre_speed = slot.env->ego().speed;
      auto res = slot.env->step(action);
      ++global_step;
      ++steps_since_update;
      ++slot.steps;
      slot.ep_return += res.reward;
      slot.ep_steps += 1;
      slot.ep_speed_sum += slot.env->ego().speed;
      slot.ep_infr += res.info.infractions;
      acc_reward += res.reward;
      acc_route += res.info.route_progress_m - slot.last_progress;
      slot.last_progress = res.info.route_progress_m;
      acc_steps += 1;

      if (wants_mentor) {
        PromptMeta eta;
        eta.speed = pre_speed;
        eta.command = res.info.command;
        eta.red_light_state = obs.state_vec[8] > 0.5 ? 1 : 0;
        eta.stop_sign_state = obs.state_vec[9] > 0.5 ? 1 : 0;
        eta.context = Context{res.info.command, discretize_speed(pre_speed)};
        eta.executed = discretize_action2d(action);
        eta.want_action = want_action;
        eta.want_score = want_score;
        InferenceRequest req;
        req.env_id = e;
        req.step_idx = slot.steps;
        req.payload = build_prompt(obs, eta);
        service->submit(std::move(req));
      }

      PendingTransition p;
      p.t.obs = std::move(obs);
      p.t.action = action.clamped();
      p.t.next_obs = res.obs;
      p.t.done = res.done ? 1 : 0;
      p.t.env_id = e;
      p.t.step_idx = slot.steps;
      p.r_env = res.reward;
      p.enqueue_sweep = sweep;
      p.waiting_score = want_score;
      slot.pending.push_back(std::move(p));

      if (res.done) {
        EpisodeRecord rec;
        rec.episode_return = slot.ep_return;
        rec.route_completion = res.info.route_completion;
        rec.event = res.event;
        rec.infractions = slot.ep_infr;
        rec.steps = slot.ep_steps;
        rec.mean_speed = slot.ep_steps > 0 ? slot.ep_speed_sum / slot.ep_steps : 0.0;
        rec.distance_m = res.info.route_progress_m;
        ep_csv.row({static_cast<double>(global_step), static_cast<double>(e),
                    static_cast<double>(slot.episodes), rec.episode_return, rec.route_completion,
                    static_cast<double>(rec.steps), static_cast<double>(res.event),
                    rec.mean_speed, rec.distance_m});
        summary.episode_returns.emplace_back(global_step, slot.ep_return);
        last_ep_return = slot.ep_return;
        summary.episodes++;
        slot.episodes++;

        bool soft = slot.ep_return < cfg.soft_reset_return_threshold &&
                    run_rng.uniform() < cfg.soft_reset_prob;
        slot.obs = slot.env->reset(Rng::mix(ctx.seed, 1000 + e + 7919 * slot.episodes),
                                   ctx.route, soft);
        slot.ep_return = 0.0;
        slot.ep_steps = 0;
        slot.ep_speed_sum = 0.0;
        slot.ep_infr = InfractionCounts{};
        slot.last_progress = 0.0;
      } else {
        slot.obs = res.obs;
      }
    }

    if (service) {
      service->pump(vnow + cfg.step_wall_s);
      for (int e = 0; e < cfg.n_envs; ++e) {
        for (const auto& resp : service->poll(e)) {
          route_response(ctx, slots[static_cast<size_t>(e)], resp);
        }
      }
    }
    for (int e = 0; e < cfg.n_envs; ++e) {
      flush_pending(ctx, slots[static_cast<size_t>(e)], sweep, grace, acc_flush);
    }

    while (global_step >= cfg.learning_starts && steps_since_update >= cfg.update_every &&
           ctx.replay->size() >= static_cast<size_t>(cfg.learner.batch_size)) {
      SampledBatch batch =
          ctx.replay->sample(cfg.learner.batch_size, Rng::mix(ctx.seed, 0xba7c4 + updates));
      TransitionBatch tb = ctx.learner->pack(batch);
      last_update = ctx.learner->update(tb, global_step);
      ++updates;
      steps_since_update -= cfg.update_every;
    }

    ++sweep;
    if (sweep % cfg.log_every == 0) {
      double steps_d = static_cast<double>(std::max<int64_t>(acc_steps, 1));
      double avail = service ? service->stats().availability() : 1.0;
      train_csv.row({static_cast<double>(global_step), static_cast<double>(summary.episodes),
                     last_ep_return, acc_reward / steps_d, acc_route / steps_d,
                     last_update.td_loss,
                     last_update.critic_total, last_update.actor_total, last_update.base_loss,
                     last_update.guidance.vmr_loss, last_update.guidance.awag_loss,
                     last_update.guidance.lambda_vmr, last_update.guidance.iota_awag,
                     last_update.awag_scale, last_update.guidance.gate_fraction,
                     last_update.guidance.mean_weight,
                     cfg.learner.exploration_noise(global_step), avail,
                     ctx.replay->mask_fraction(),
                     acc_flush.scored > 0 ? acc_flush.r_raw_sum / acc_flush.scored : 0.0,
                     acc_flush.scored > 0 ? acc_flush.r_vlm_sum / acc_flush.scored : 0.0,
                     ctx.margin_ring->mean(), static_cast<double>(ctx.horizon)});
      if (want_score) {
        summary.margin_trace.emplace_back(global_step, ctx.margin_ring->mean());
      }
      acc_reward = 0.0;
      acc_route = 0.0;
      acc_steps = 0;
      acc_flush = FlushOut{};
    }
  }

  // Final flush: anything still pending is pushed with what it has.
  for (int e = 0; e < cfg.n_envs; ++e) {
    FlushOut fo;
    flush_pending(ctx, slots[static_cast<size_t>(e)], sweep + cfg.pending_grace_steps + 1, 0, fo);
  }

  ctx.learner->save(ctx.run_dir + "/ckpt_final.bin");
  train_csv.close();
  ep_csv.close();

  summary.steps = global_step;
  if (service) {
    summary.batcher = service->stats();
    summary.availability = summary.batcher.availability();
  }
  summary.replay = ctx.replay->stats();
  summary.mask_fraction = ctx.replay->mask_fraction();
  return summary;
}

// Threaded rollout/learner split; used for throughput runs. Not bitwise
// reproducible.
TrainSummary train_threaded(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  TrainSummary summary;
  summary.run_dir = ctx.run_dir;

  std::unique_ptr<InferenceService> inproc;
  std::unique_ptr<SocketClient> socket_client;
  InferenceChannel* channel = nullptr;
  if (cfg.transport == "socket" && cfg.mentor_enabled()) {
    socket_client = std::make_unique<SocketClient>(cfg.socket_host, cfg.socket_port);
    channel = socket_client.get();
  } else if (ctx.mentor.model) {
    inproc = std::make_unique<InferenceService>(cfg.batcher, ctx.mentor.model,
                                                InferenceService::Mode::kThreaded);
    inproc->start();
    channel = inproc.get();
  }

  std::mutex shared_mu;  // guards rms, margin ring, episode records, csv data
  std::atomic<int64_t> global_step{0};
  std::atomic<bool> stop{false};

  // Actor snapshot published by value.
  struct Snapshot {
    std::mutex mu;
    std::vector<nn::Mat> values;
    std::atomic<uint64_t> version{0};
  } snapshot;
  auto publish = [&] {
    std::lock_guard<std::mutex> lock(snapshot.mu);
    snapshot.values.clear();
    for (auto* p : ctx.learner->policy().params()) snapshot.values.push_back(p->value);
    snapshot.version.fetch_add(1);
  };
  publish();

  CsvWriter train_csv;
  train_csv.open(ctx.run_dir + "/train.csv", kTrainColumns);
  CsvWriter ep_csv;
  ep_csv.open(ctx.run_dir + "/episodes.csv",
              {"step", "env", "episode", "ep_return", "route_completion", "steps", "event",
               "mean_speed", "distance_m"});

  const bool want_action = cfg.want_action_feedback();
  const bool want_score = cfg.want_score_feedback();
  const int grace = want_score ? cfg.pending_grace_steps : 0;

  std::vector<std::thread> workers;
  for (int e = 0; e < cfg.n_envs; ++e) {
    workers.emplace_back([&, e] {
      EnvSlot slot;
      slot.env = std::make_unique<KineticEnv>(cfg.env);
      slot.obs = slot.env->reset(Rng::mix(ctx.seed, 1000 + e), ctx.route, false);
      Rng wrng(Rng::mix(ctx.seed, 0x776f726bULL + e));
      PolicyNet local(ctx.spec, cfg.learner.net, cfg.learner.stochastic, wrng);
      uint64_t local_version = 0;
      int64_t sweep = 0;
      while (!stop.load(std::memory_order_relaxed)) {
        int64_t step = global_step.fetch_add(1);
        if (step >= cfg.total_steps) break;
        if (snapshot.version.load() != local_version) {
          std::lock_guard<std::mutex> lock(snapshot.mu);
          auto params = local.params();
          for (size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot.values[i];
          local_version = snapshot.version.load();
        }
        Observation obs = slot.obs;
        Action2D action;
        if (step < cfg.learning_starts) {
          action = Action2D{wrng.uniform(-1, 1), wrng.uniform(-1, 1)};
        } else {
          Features f = pack_features(obs, ctx.spec);
          PolicyNet::Output out = local.forward(f);
          double noise = cfg.learner.exploration_noise(step);
          for (int j = 0; j < 2; ++j) {
            double v = std::tanh(out.mean(0, j));
            if (cfg.learner.stochastic && noise > 0) {
              v = std::tanh(out.mean(0, j) + std::exp(out.log_std(0, j)) * wrng.normal());
            } else if (noise > 0) {
              v = clamp(v + noise * wrng.normal(), -1.0, 1.0);
            }
            (j == 0 ? action.longitudinal : action.steer) = v;
          }
        }
        double pre_speed = slot.env->ego().speed;
        auto res = slot.env->step(action);
        ++slot.steps;
        slot.ep_return += res.reward;
        slot.ep_steps += 1;
        slot.ep_speed_sum += slot.env->ego().speed;
        slot.ep_infr += res.info.infractions;

        if (channel) {
          PromptMeta eta;
          eta.speed = pre_speed;
          eta.command = res.info.command;
          eta.red_light_state = obs.state_vec[8] > 0.5 ? 1 : 0;
          eta.stop_sign_state = obs.state_vec[9] > 0.5 ? 1 : 0;
          eta.context = Context{res.info.command, discretize_speed(pre_speed)};
          eta.executed = discretize_action2d(action);
          eta.want_action = want_action;
          eta.want_score = want_score;
          InferenceRequest req;
          req.env_id = e;
          req.step_idx = slot.steps;
          req.payload = build_prompt(obs, eta);
          channel->submit(std::move(req));
        }

        PendingTransition p;
        p.t.obs = std::move(obs);
        p.t.action = action.clamped();
        p.t.next_obs = res.obs;
        p.t.done = res.done ? 1 : 0;
        p.t.env_id = e;
        p.t.step_idx = slot.steps;
        p.r_env = res.reward;
        p.enqueue_sweep = sweep;
        p.waiting_score = want_score;
        slot.pending.push_back(std::move(p));

        if (channel) {
          for (const auto& resp : channel->poll(e)) route_response(ctx, slot, resp);
        }
        {
          std::lock_guard<std::mutex> lock(shared_mu);
          FlushOut fo;
          flush_pending(ctx, slot, sweep, grace, fo);
          if (res.done) {
            ep_csv.row({static_cast<double>(step), static_cast<double>(e),
                        static_cast<double>(slot.episodes), slot.ep_return,
                        res.info.route_completion, static_cast<double>(slot.ep_steps),
                        static_cast<double>(res.event),
                        slot.ep_steps ? slot.ep_speed_sum / slot.ep_steps : 0.0,
                        res.info.route_progress_m});
            summary.episode_returns.emplace_back(step, slot.ep_return);
            summary.episodes++;
          }
        }
        if (res.done) {
          bool soft = slot.ep_return < cfg.soft_reset_return_threshold &&
                      wrng.uniform() < cfg.soft_reset_prob;
          slot.episodes++;
          slot.obs = slot.env->reset(Rng::mix(ctx.seed, 1000 + e + 7919 * slot.episodes),
                                     ctx.route, soft);
          slot.ep_return = 0.0;
          slot.ep_steps = 0;
          slot.ep_speed_sum = 0.0;
          slot.ep_infr = InfractionCounts{};
        } else {
          slot.obs = res.obs;
        }
        ++sweep;
      }
      // Drain pending before exiting.
      std::lock_guard<std::mutex> lock(shared_mu);
      FlushOut fo;
      flush_pending(ctx, slot, sweep + cfg.pending_grace_steps + 1, 0, fo);
    });
  }

  int64_t updates = 0;
  UpdateStats last_update;
  while (global_step.load() < cfg.total_steps) {
    int64_t step = global_step.load();
    if (step >= cfg.learning_starts &&
        ctx.replay->size() >= static_cast<size_t>(cfg.learner.batch_size)) {
      SampledBatch batch =
          ctx.replay->sample(cfg.learner.batch_size, Rng::mix(ctx.seed, 0xbb7c4 + updates));
      TransitionBatch tb = ctx.learner->pack(batch);
      last_update = ctx.learner->update(tb, step);
      ++updates;
      if (updates % std::max(1, cfg.snapshot_every_updates) == 0) publish();
      if (updates % std::max(1, cfg.log_every) == 0) {
        std::lock_guard<std::mutex> lock(shared_mu);
        double avail = channel ? channel->stats().availability() : 1.0;
        double last_ret =
            summary.episode_returns.empty() ? 0.0 : summary.episode_returns.back().second;
        train_csv.row({static_cast<double>(step), static_cast<double>(summary.episodes),
                       last_ret, 0.0, 0.0, last_update.td_loss, last_update.critic_total,
                       last_update.actor_total, last_update.base_loss,
                       last_update.guidance.vmr_loss, last_update.guidance.awag_loss,
                       last_update.guidance.lambda_vmr, last_update.guidance.iota_awag,
                       last_update.awag_scale, last_update.guidance.gate_fraction,
                       last_update.guidance.mean_weight, cfg.learner.exploration_noise(step),
                       avail, ctx.replay->mask_fraction(), 0.0, 0.0, ctx.margin_ring->mean(),
                       static_cast<double>(ctx.horizon)});
        if (want_score) summary.margin_trace.emplace_back(step, ctx.margin_ring->mean());
      }
    } else {
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
  stop = true;
  for (auto& w : workers) w.join();
  if (inproc) inproc->shutdown();
  if (socket_client) socket_client->close();

  ctx.learner->save(ctx.run_dir + "/ckpt_final.bin");
  train_csv.close();
  ep_csv.close();

  summary.steps = global_step.load();
  if (channel) {
    summary.batcher = channel->stats();
    summary.availability = summary.batcher.availability();
  }
  summary.replay = ctx.replay->stats();
  summary.mask_fraction = ctx.replay->mask_fraction();
  return summary;
}

}  // namespace

TrainSummary train_run(const RunConfig& cfg, uint64_t seed) {
  cfg.validate();
  RunContext ctx = make_context(cfg, seed);
  ctx.cfg.save_file(ctx.run_dir + "/config.json");

  if (ctx.cfg.total_steps == 0) {
    TrainSummary summary;
    summary.run_dir = ctx.run_dir;
    write_manifest(ctx.run_dir, ctx.cfg, seed, "ok", "", &summary);
    // Degenerate budget: manifest only.
    fs::remove(ctx.run_dir + "/config.json");
    return summary;
  }

  try {
    TrainSummary summary =
        ctx.cfg.deterministic ? train_deterministic(ctx) : train_threaded(ctx);
    int64_t params = ctx.learner->parameter_count();
    std::cerr << "train: " << summary.steps << " steps, " << summary.episodes << " episodes, "
              << params << " learner parameters, availability "
              << summary.availability << "\n";
    write_manifest(ctx.run_dir, ctx.cfg, seed, "ok", "", &summary);
    return summary;
  } catch (const std::exception& e) {
    write_manifest(ctx.run_dir, ctx.cfg, seed, "failed", e.what(), nullptr);
    throw;
  }
}

std::vector<TrainSummary> train(const RunConfig& cfg) {
  std::vector<TrainSummary> out;
  for (uint64_t seed : cfg.seeds) out.push_back(train_run(cfg, seed));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

AggregateMetrics evaluate_checkpoint(const std::string& checkpoint_path, const RunConfig& cfg,
                                     uint64_t seed, const std::string& out_dir) {
  RunConfig ecfg = cfg;
  ecfg.learner.total_steps = cfg.total_steps;
  FeatureSpec spec{ecfg.env.grid_c, ecfg.env.grid_h, ecfg.env.grid_w, kStateDim};
  Learner learner(ecfg.learner, ecfg.guidance, spec, Rng::mix(seed, 0x6576ULL));
  learner.load(checkpoint_path);

  EnvConfig env_cfg = ecfg.env;
  env_cfg.evaluation_mode = true;
  RouteSpec route = build_route(ecfg.route);
  if (route.loop) {
    // Open the circuit so route_completed can fire at the final waypoint.
    route.loop = false;
    route.commands.resize(route.waypoints.size() - 1);
  }
  route.validate();

  std::vector<EpisodeRecord> episodes;
  KineticEnv env(env_cfg);
  for (int ep = 0; ep < ecfg.eval_episodes; ++ep) {
    Observation obs = env.reset(Rng::mix(seed, 0xe0 + ep), route, false);
    EpisodeRecord rec;
    double speed_sum = 0.0;
    while (!env.episode_done()) {
      Action2D a = learner.act(obs, 0.0);
      auto res = env.step(a);
      obs = res.obs;
      rec.episode_return += res.reward;
      rec.steps += 1;
      speed_sum += env.ego().speed;
      rec.infractions += res.info.infractions;
      rec.route_completion = res.info.route_completion;
      rec.event = res.event;
      rec.distance_m = res.info.route_progress_m;
    }
    rec.mean_speed = rec.steps > 0 ? speed_sum / rec.steps : 0.0;
    episodes.push_back(rec);
  }

  AggregateMetrics agg = AggregateMetrics::compute(episodes, ecfg.infractions);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream mj(out_dir + "/metrics.json");
    mj << agg.to_json_string();
    CsvWriter csv;
    csv.open(out_dir + "/eval_episodes.csv",
             {"episode", "ep_return", "route_completion", "driving_score", "steps", "event",
              "mean_speed", "distance_m"});
    for (size_t i = 0; i < episodes.size(); ++i) {
      const auto& ep = episodes[i];
      csv.row({static_cast<double>(i), ep.episode_return, ep.route_completion,
               driving_score(ep, ecfg.infractions), static_cast<double>(ep.steps),
               static_cast<double>(ep.event), ep.mean_speed, ep.distance_m});
    }
    csv.close();
  }
  return agg;
}

EpisodeRecord run_expert_episode(const RunConfig& cfg, const RouteSpec& route, uint64_t seed,
                                 bool evaluation_mode) {
  EnvConfig env_cfg = cfg.env;
  env_cfg.evaluation_mode = evaluation_mode;
  KineticEnv env(env_cfg);
  ExpertParams params;
  params.v_max = env_cfg.v_max;
  params.wheelbase = env_cfg.wheelbase;
  params.max_steer_rad = env_cfg.max_steer_rad;
  params.min_lookahead = env_cfg.min_lookahead;
  params.lookahead_gain = env_cfg.lookahead_gain;

  Observation obs = env.reset(seed, route, false);
  EpisodeRecord rec;
  double speed_sum = 0.0;
  while (!env.episode_done()) {
    Action2D a = map_3d_to_2d(expert_action(obs, params));
    auto res = env.step(a);
    obs = res.obs;
    rec.episode_return += res.reward;
    rec.steps += 1;
    speed_sum += env.ego().speed;
    rec.infractions += res.info.infractions;
    rec.route_completion = res.info.route_completion;
    rec.event = res.event;
    rec.distance_m = res.info.route_progress_m;
  }
  rec.mean_speed = rec.steps > 0 ? speed_sum / rec.steps : 0.0;
  return rec;
}

// ---------------------------------------------------------------------------
// Bench

std::string BenchReport::to_table() const {
  char buf[768];
  std::snprintf(buf, sizeof(buf),
                "policy forward            %10.1f steps/s\n"
                "mentor round trip         %10.1f req/s\n"
                "round trip latency mean   %10.4f s\n"
                "round trip latency p95    %10.4f s\n"
                "max batch size            %10d\n"
                "rollout (no inference)    %10.1f steps/s\n"
                "rollout (with inference)  %10.1f steps/s\n"
                "throughput ratio          %10.3f\n",
                policy_forward_fps, mentor_roundtrip_fps, roundtrip_latency_mean_s,
                roundtrip_latency_p95_s, max_batch_size, rollout_fps_plain, rollout_fps_infer,
                rollout_fps_plain > 0 ? rollout_fps_infer / rollout_fps_plain : 0.0);
  return buf;
}

BenchReport bench(const RunConfig& cfg, bool write_csv) {
  BenchReport rep;
  RouteSpec route = build_route(cfg.route);
  FeatureSpec spec{cfg.env.grid_c, cfg.env.grid_h, cfg.env.grid_w, kStateDim};

  // (a) policy-only inference throughput.
  {
    Learner learner(cfg.learner, GuidanceConfig{}, spec, 42);
    KineticEnv env(cfg.env);
    Observation obs = env.reset(7, route, false);
    for (int i = 0; i < 50; ++i) learner.act(obs, 0.0);
    const int n = 2000;
    double t0 = steady_now_s();
    for (int i = 0; i < n; ++i) learner.act(obs, 0.0);
    double dt = steady_now_s() - t0;
    rep.policy_forward_fps = n / std::max(dt, 1e-9);
  }

  // (b) batcher round trip under synthetic load.
  {
    RunConfig mcfg = cfg;
    mcfg.guidance.vmr_enabled = true;  // force an action-serving mentor
    MentorSetup mentor = make_mentor(mcfg, 99);
    InferenceService service(cfg.batcher, mentor.model, InferenceService::Mode::kThreaded);
    service.start();
    KineticEnv env(cfg.env);
    Observation obs = env.reset(7, route, false);
    PromptMeta eta;
    eta.want_action = true;
    eta.want_score = false;
    std::string payload = build_prompt(obs, eta);
    const int n_req = 512;
    std::vector<double> latencies;
    latencies.reserve(n_req);
    double t0 = steady_now_s();
    int received = 0;
    int submitted = 0;
    while (received < n_req && steady_now_s() - t0 < 30.0) {
      if (submitted < n_req) {
        InferenceRequest req;
        req.env_id = 0;
        req.step_idx = submitted + 1;
        req.payload = payload;
        service.submit(std::move(req));
        ++submitted;
      }
      for (const auto& resp : service.poll(0)) {
        latencies.push_back(resp.service_time);
        ++received;
      }
      std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
    double dt = steady_now_s() - t0;
    service.shutdown();
    rep.mentor_roundtrip_fps = received / std::max(dt, 1e-9);
    if (!latencies.empty()) {
      std::sort(latencies.begin(), latencies.end());
      double sum = 0;
      for (double v : latencies) sum += v;
      rep.roundtrip_latency_mean_s = sum / latencies.size();
      rep.roundtrip_latency_p95_s = latencies[static_cast<size_t>(0.95 * (latencies.size() - 1))];
    }
    rep.batcher = service.stats();
    for (size_t i = 0; i < rep.batcher.size_histogram.size(); ++i) {
      if (rep.batcher.size_histogram[i] > 0) rep.max_batch_size = static_cast<int>(i);
    }
  }

  // (c) rollout throughput with/without the service attached.
  {
    const int n_steps = 4000;
    auto rollout = [&](InferenceService* service) {
      KineticEnv env(cfg.env);
      Observation obs = env.reset(11, route, false);
      Rng rng(3);
      double t0 = steady_now_s();
      for (int i = 0; i < n_steps; ++i) {
        Action2D a{0.4 + 0.1 * rng.uniform(), 0.05 * rng.normal()};
        if (env.episode_done()) obs = env.reset(11 + i, route, false);
        auto res = env.step(a);
        if (service) {
          PromptMeta eta;
          eta.command = res.info.command;
          eta.context = Context{res.info.command, discretize_speed(env.ego().speed)};
          eta.executed = discretize_action2d(a);
          InferenceRequest req;
          req.env_id = 0;
          req.step_idx = i + 1;
          req.payload = build_prompt(obs, eta);
          service->submit(std::move(req));
          service->poll(0);
        }
        obs = res.obs;
      }
      return n_steps / std::max(steady_now_s() - t0, 1e-9);
    };
    rep.rollout_fps_plain = rollout(nullptr);
    RunConfig mcfg = cfg;
    mcfg.guidance.vmr_enabled = true;
    MentorSetup mentor = make_mentor(mcfg, 123);
    InferenceService service(cfg.batcher, mentor.model, InferenceService::Mode::kThreaded);
    service.start();
    rep.rollout_fps_infer = rollout(&service);
    service.shutdown();
  }

  if (write_csv) {
    fs::create_directories(cfg.out_dir);
    CsvWriter csv;
    csv.open(cfg.out_dir + "/bench.csv",
             {"policy_forward_fps", "mentor_roundtrip_fps", "rt_latency_mean_s",
              "rt_latency_p95_s", "max_batch_size", "rollout_fps_plain", "rollout_fps_infer"});
    csv.row({rep.policy_forward_fps, rep.mentor_roundtrip_fps, rep.roundtrip_latency_mean_s,
             rep.roundtrip_latency_p95_s, static_cast<double>(rep.max_batch_size),
             rep.rollout_fps_plain, rep.rollout_fps_infer});
    csv.close();
  }
  return rep;
}

}  // namespace guiderl
