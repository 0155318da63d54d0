#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "skipgru/model.hpp"

namespace skipgru {

struct StepResult {
  std::uint64_t step = 0;  // optimiser step count after the update
  double loss = 0.0;       // mean triple loss before the update
  double grad_norm = 0.0;  // pre-clip global norm
  bool clipped = false;
};

/// Worker count from SKIPGRU_THREADS, else hardware concurrency (>= 1).
std::size_t worker_count();

/// Mean-loss gradient over the batch (reduced in a fixed order, so results do
/// not depend on the worker count), clipped at config.clip_threshold, then
/// one Adam update. Throws NumericError if the loss is not finite; the model
/// is left untouched in that case.
StepResult train_step(SkipThoughtModel& model, std::span<const SentenceTriple* const> batch,
                      AdamState& opt, std::size_t workers = 1);

AdamState make_optimizer(const SkipThoughtModel& model);

/// Drives train_step over a triple set. The batch for global step s is a
/// pure function of (seed, s), so a run resumed from a checkpoint replays
/// exactly the batches an uninterrupted run would have seen.
class Trainer {
 public:
  Trainer(SkipThoughtModel& model, AdamState& opt, const std::vector<SentenceTriple>& triples);

  std::vector<const SentenceTriple*> batch_for_step(std::uint64_t step) const;
  StepResult step();
  /// Runs until opt.step reaches target_step; the callback sees every step.
  void run_until(std::uint64_t target_step, const std::function<void(const StepResult&)>& on_step = {});

  void set_workers(std::size_t n) { workers_ = n == 0 ? 1 : n; }

 private:
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;

  SkipThoughtModel& model_;
  AdamState& opt_;
  const std::vector<SentenceTriple>& triples_;
  std::size_t workers_ = 1;
};

struct Checkpoint {
  SkipThoughtModel model;
  AdamState opt;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned little-endian binary: magic, version, config, vocabulary,
/// parameters, optimiser state, trailing FNV-1a checksum.
std::vector<std::uint8_t> serialize_checkpoint(const SkipThoughtModel& model, const AdamState& opt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const SkipThoughtModel& model, const AdamState& opt,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace skipgru
