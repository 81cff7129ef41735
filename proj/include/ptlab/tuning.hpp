#pragma once

#include <chrono>
#include <optional>
#include <vector>

#include "ptlab/autograd.hpp"
#include "ptlab/forward.hpp"
#include "ptlab/model.hpp"
#include "ptlab/optim.hpp"
#include "ptlab/prompt.hpp"
#include "ptlab/tasks.hpp"

namespace ptlab {

struct TuneConfig {
  double learning_rate = 0.001;
  int batch_size = 16;
  int max_steps = 2000;
  int eval_every = 100;
  int patience_window = 300;
  std::uint64_t seed = 0;
  int jobs = 0;

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("tune: learning_rate must be positive");
    if (batch_size <= 0) throw ConfigError("tune: batch_size must be positive");
    if (eval_every <= 0 || patience_window % eval_every != 0)
      throw ConfigError("tune: eval_every must divide patience_window");
    if (max_steps < eval_every) throw ConfigError("tune: max_steps must be >= eval_every");
  }
};

struct Checkpoint {
  long step = 0;
  double train_loss = 0.0;
  double dev_score = 0.0;
  double wall_ms = 0.0;  // reporting only; never part of deterministic output
};

struct TrainCurve {
  std::vector<Checkpoint> points;
  std::optional<long> convergence_step;

  double final_dev_score() const { return points.empty() ? 0.0 : points.back().dev_score; }
  double dev_at(long step) const {
    for (const auto& p : points)
      if (p.step == step) return p.dev_score;
    throw StateError("curve: no checkpoint at step " + std::to_string(step));
  }
};

// Earliest checkpoint step t whose full patience window (t, t+patience] shows
// no training-loss drop and no dev-score rise; the final step when no window
// certifies. "Stops increasing" is non-strict: a flat window converges.
inline long detect_convergence(const TrainCurve& curve, int patience_window) {
  const auto& pts = curve.points;
  if (pts.size() < 2) throw StateError("detect_convergence: need at least 2 checkpoints");
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const long t = pts[i].step;
    bool window_complete = false;
    bool certified = true;
    for (std::size_t j = i + 1; j < pts.size() && pts[j].step <= t + patience_window; ++j) {
      if (pts[j].train_loss < pts[i].train_loss || pts[j].dev_score > pts[i].dev_score) {
        certified = false;
        break;
      }
      if (pts[j].step == t + patience_window) window_complete = true;
    }
    if (certified && window_complete) return t;
  }
  return pts.back().step;
}

struct TuneResult {
  SoftPrompt prompt;
  TrainCurve curve;
};

// Prompt tuning against a frozen backbone: cross-entropy of the gold label
// token (classification) or gold sequence (generation) at the decode
// position, AdamW on the prompt matrix only. Checkpoints land every
// eval_every steps; training stops early once the patience rule certifies a
// convergence step (the recorded curve then ends at t + patience_window).
inline TuneResult tune(const ModelHandle& model, const Task& task, const SoftPrompt& init,
                       const TuneConfig& cfg) {
  cfg.validate();
  if (!model.frozen()) throw StateError("tune: model must be frozen");
  check_prompt_compat(model, init);
  if (task.is_generation() && model.spec().family != ModelFamily::encoder_decoder)
    throw StateError("tune: generation tasks need an encoder-decoder model");
  if (task.train.empty()) throw StateError("tune: task has no training split");

  Tensor prompt = init.tensor(/*requires_grad=*/true);
  AdamWConfig ocfg;
  ocfg.learning_rate = cfg.learning_rate;
  AdamW opt(ocfg);
  opt.add_param("prompt", prompt);

  Rng data_rng = Rng(cfg.seed).fork("tune/data/" + task.spec.name);
  const bool mlm = model.spec().family == ModelFamily::masked_lm;
  const int bos = model.spec().vocab.bos();
  const int eos = model.spec().vocab.eos();
  const int B = cfg.batch_size;
  const auto t0 = std::chrono::steady_clock::now();

  auto wall_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  };
  auto current_prompt = [&](Provenance prov) {
    return SoftPrompt::from_tensor(prompt, std::move(prov));
  };
  auto dev_score = [&] {
    return evaluate(model, current_prompt({}), task, "dev", cfg.jobs);
  };

  // loss of one example through the frozen backbone, gradients collected
  // into the sink so batch examples can run on worker threads
  auto example_loss = [&](const Example& ex, GradMap& sink) {
    Tape t;
    Tensor loss;
    if (mlm) {
      Tensor states = masked_lm_prompt_states(t, model, &prompt, ex.tokens, nullptr);
      Tensor logits = lm_logits(t, model, states);
      Tensor row = t.reshape(t.take_row(logits, 0), {1, logits.cols()});
      const int target = task.spec.label_tokens[static_cast<std::size_t>(ex.label)];
      loss = t.cross_entropy(row, std::span<const int>(&target, 1));
    } else {
      std::vector<int> dec_in = {bos};
      std::vector<int> targets;
      if (task.is_generation()) {
        dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end());
        targets = ex.target;
        targets.push_back(eos);
      } else {
        targets = {task.spec.label_tokens[static_cast<std::size_t>(ex.label)]};
      }
      Tensor states = encdec_prompt_states(t, model, &prompt, ex.tokens, dec_in, nullptr);
      loss = t.cross_entropy(lm_logits(t, model, states), targets);
    }
    const double raw = loss.value();
    Tensor scaled = t.scale(loss, 1.0 / B);
    t.backward_collect(scaled, sink);
    return raw;
  };

  TrainCurve curve;
  // step-0 checkpoint: pre-update loss on the first batch plus dev score,
  // so warm starts that are already comparable are visible at step 0
  std::vector<const Example*> first_batch;
  {
    Rng peek = data_rng;  // copy; the real stream is consumed inside the loop
    for (int b = 0; b < B; ++b)
      first_batch.push_back(
          &task.train[static_cast<std::size_t>(peek.uniform_int(0, static_cast<int>(task.train.size()) - 1))]);
    std::vector<GradMap> sinks(static_cast<std::size_t>(B));
    std::vector<double> losses(static_cast<std::size_t>(B), 0.0);
    parallel_for(B, cfg.jobs, [&](int b) {
      losses[static_cast<std::size_t>(b)] =
          example_loss(*first_batch[static_cast<std::size_t>(b)], sinks[static_cast<std::size_t>(b)]);
    });
    double mean = 0.0;
    for (double v : losses) mean += v;
    curve.points.push_back({0, mean / B, dev_score(), wall_ms()});
  }

  double loss_accum = 0.0;
  int loss_count = 0;
  long step = 0;
  while (step < cfg.max_steps) {
    ++step;
    std::vector<const Example*> batch;
    batch.reserve(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
      batch.push_back(&task.train[static_cast<std::size_t>(
          data_rng.uniform_int(0, static_cast<int>(task.train.size()) - 1))]);
    std::vector<GradMap> sinks(static_cast<std::size_t>(B));
    std::vector<double> losses(static_cast<std::size_t>(B), 0.0);
    try {
      parallel_for(B, cfg.jobs, [&](int b) {
        losses[static_cast<std::size_t>(b)] =
            example_loss(*batch[static_cast<std::size_t>(b)], sinks[static_cast<std::size_t>(b)]);
      });
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("tune: non-finite loss at step " + std::to_string(step) + " (" +
                           e.what() + ")");
    }
    accumulate_sinks(prompt, sinks);
    opt.step();
    opt.zero_grad();
    for (double v : losses) loss_accum += v;
    loss_count += B;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      curve.points.push_back({step, loss_accum / loss_count, dev_score(), wall_ms()});
      loss_accum = 0.0;
      loss_count = 0;
      // early stop as soon as some window certifies; the certified step
      // cannot change once its window is complete
      const long conv = detect_convergence(curve, cfg.patience_window);
      if (conv < curve.points.back().step &&
          conv + cfg.patience_window <= curve.points.back().step) {
        curve.convergence_step = conv;
        break;
      }
    }
  }
  if (!curve.convergence_step)
    curve.convergence_step = detect_convergence(curve, cfg.patience_window);

  Provenance prov;
  prov.kind = Provenance::Kind::trained;
  prov.task = task.spec.name;
  prov.model = model.parameter_digest();
  prov.seed = cfg.seed;
  return {current_prompt(std::move(prov)), std::move(curve)};
}

}  // namespace ptlab
