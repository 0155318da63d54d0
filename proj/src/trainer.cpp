#include "skipgru/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <string>
#include <thread>

#include "skipgru/binary_io.hpp"
#include "skipgru/error.hpp"
#include "skipgru/rng.hpp"

namespace skipgru {

namespace {

// Triples per reduction leaf. Fixed so the summation order never depends on
// how many workers run.
constexpr std::size_t kChunk = 8;

void add_into(SkipThoughtParams& dst, const SkipThoughtParams& src) {
  auto d = dst.refs();
  auto s = src.refs();
  for (std::size_t i = 0; i < d.size(); ++i) axpy(1.0, s[i]->data(), d[i]->data());
}

}  // namespace

std::size_t worker_count() {
  if (const char* env = std::getenv("SKIPGRU_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

AdamState make_optimizer(const SkipThoughtModel& model) {
  return AdamState::for_params(model.params.refs(), model.config.adam);
}

StepResult train_step(SkipThoughtModel& model, std::span<const SentenceTriple* const> batch,
                      AdamState& opt, std::size_t workers) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<SkipThoughtParams> chunk_grads;
  chunk_grads.reserve(n_chunks);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    chunk_grads.push_back(SkipThoughtParams::zeros_like(model.params));
  }
  std::vector<double> chunk_loss(n_chunks, 0.0);

  auto work = [&](std::size_t c) {
    const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      chunk_loss[c] += triple_loss_grad(model.params, *batch[i], chunk_grads[c]);
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, n_chunks);
  if (workers == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) work(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t c = next++; c < n_chunks; c = next++) work(c);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  SkipThoughtParams& grads = chunk_grads.front();
  double loss = chunk_loss.front();
  for (std::size_t c = 1; c < n_chunks; ++c) {
    add_into(grads, chunk_grads[c]);
    loss += chunk_loss[c];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  loss *= inv;
  if (!std::isfinite(loss)) {
    throw NumericError("train_step: non-finite loss at step " + std::to_string(opt.step + 1));
  }
  ParamRefs grad_refs = grads.refs();
  for (Matrix* g : grad_refs)
    for (double& v : g->data()) v *= inv;

  const ClipResult clip = clip_gradients(grad_refs, model.config.clip_threshold);
  if (!std::isfinite(clip.norm)) {
    throw NumericError("train_step: non-finite gradient norm at step " + std::to_string(opt.step + 1));
  }
  adam_step(model.params.refs(), as_const(grad_refs), opt);
  return StepResult{opt.step, loss, clip.norm, clip.clipped};
}

Trainer::Trainer(SkipThoughtModel& model, AdamState& opt, const std::vector<SentenceTriple>& triples)
    : model_(model), opt_(opt), triples_(triples) {
  if (triples_.empty()) throw InputError("trainer: no training triples");
  const std::size_t vocab = model_.vocab.size();
  for (const auto& t : triples_) {
    for (const IdSequence* s : {&t.prev, &t.curr, &t.next}) {
      if (s->empty() || s->back() != Vocabulary::kEos) {
        throw InputError("trainer: sentence not terminated by eos");
      }
      for (TokenId id : *s)
        if (id >= vocab) throw RangeError("trainer: token id outside the vocabulary");
    }
  }
}

std::vector<std::size_t> Trainer::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(triples_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(model_.config.seed).split(0x5eed0000ULL + epoch);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

std::vector<const SentenceTriple*> Trainer::batch_for_step(std::uint64_t step) const {
  const std::size_t n = triples_.size();
  const std::size_t bs = std::min(model_.config.batch_size, n);
  const std::uint64_t per_epoch = (n + bs - 1) / bs;
  const auto order = epoch_order(step / per_epoch);
  const std::size_t begin = static_cast<std::size_t>(step % per_epoch) * bs;
  const std::size_t end = std::min(n, begin + bs);
  std::vector<const SentenceTriple*> batch;
  batch.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) batch.push_back(&triples_[order[i]]);
  return batch;
}

StepResult Trainer::step() {
  const auto batch = batch_for_step(opt_.step);
  return train_step(model_, batch, opt_, workers_);
}

void Trainer::run_until(std::uint64_t target_step,
                        const std::function<void(const StepResult&)>& on_step) {
  while (opt_.step < target_step) {
    const StepResult r = step();
    if (on_step) on_step(r);
  }
}

// --- checkpoint ------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "SKGRUCKP";

void write_config(ByteWriter& w, const TrainConfig& c) {
  w.u8(c.mode == EncoderMode::kBi ? 1 : 0);
  w.u64(c.embed_dim);
  w.u64(c.hidden_dim);
  w.u64(c.vocab_size);
  w.u64(c.batch_size);
  w.f64(c.clip_threshold);
  w.f64(c.adam.alpha);
  w.f64(c.adam.beta1);
  w.f64(c.adam.beta2);
  w.f64(c.adam.epsilon);
  w.u64(c.max_steps);
  w.u64(c.seed);
  w.u64(c.checkpoint_every);
  w.u64(c.max_tokens);
}

TrainConfig read_config(ByteReader& r) {
  TrainConfig c;
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw LoadError("checkpoint: unknown encoder mode");
  c.mode = mode == 1 ? EncoderMode::kBi : EncoderMode::kUni;
  c.embed_dim = r.u64();
  c.hidden_dim = r.u64();
  c.vocab_size = r.u64();
  c.batch_size = r.u64();
  c.clip_threshold = r.f64();
  c.adam.alpha = r.f64();
  c.adam.beta1 = r.f64();
  c.adam.beta2 = r.f64();
  c.adam.epsilon = r.f64();
  c.max_steps = r.u64();
  c.seed = r.u64();
  c.checkpoint_every = r.u64();
  c.max_tokens = r.u64();
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const SkipThoughtModel& model, const AdamState& opt) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  write_config(w, model.config);
  w.u64(model.vocab.size());
  for (const auto& t : model.vocab.tokens()) w.str(t);
  const ConstParamRefs params = model.params.refs();
  w.u64(params.size());
  for (const Matrix* p : params) w.matrix(*p);
  w.u64(opt.step);
  w.u64(opt.m.size());
  for (const auto& m : opt.m) w.matrix(m);
  for (const auto& v : opt.v) w.matrix(v);
  append_checksum(w);
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() + 4 + 8) throw LoadError("checkpoint: file too short");
  ByteReader r(checked_body(bytes, "checkpoint"));
  if (r.bytes(kMagic.size()) != kMagic) throw LoadError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint: unsupported format version " + std::to_string(version));
  }
  TrainConfig config = read_config(r);
  const std::uint64_t vocab_n = r.u64();
  if (vocab_n < 2 || vocab_n > r.remaining()) throw LoadError("checkpoint: bad vocabulary size");
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < vocab_n; ++i) tokens.push_back(r.str());
  if (vocab_n != config.vocab_size) throw LoadError("checkpoint: vocabulary size disagrees with config");
  if (tokens[0] != kEosToken || tokens[1] != kUnkToken) throw LoadError("checkpoint: reserved tokens missing");
  Vocabulary vocab = Vocabulary::from_tokens({tokens.begin() + 2, tokens.end()});

  // Build a correctly shaped skeleton, then overwrite every tensor.
  SkipThoughtModel model;
  model.vocab = std::move(vocab);
  model.config = config;
  {
    model.params.encoder.mode = config.mode;
    model.params.encoder.embedding = Matrix(config.vocab_size, config.embed_dim);
    model.params.encoder.forward = GruParams::zeros(config.hidden_dim, config.embed_dim);
    if (config.mode == EncoderMode::kBi) {
      model.params.encoder.backward = GruParams::zeros(config.hidden_dim, config.embed_dim);
    }
    const std::size_t enc_dim = model.params.encoder.output_dim();
    ConditionalGruParams dec{GruParams::zeros(config.hidden_dim, config.embed_dim),
                             Matrix(config.hidden_dim, enc_dim), Matrix(config.hidden_dim, enc_dim),
                             Matrix(config.hidden_dim, enc_dim), Matrix(1, config.embed_dim)};
    model.params.decoders = DecoderPair{dec, dec, Matrix(config.vocab_size, config.hidden_dim)};
  }
  ParamRefs params = model.params.refs();
  if (r.u64() != params.size()) throw LoadError("checkpoint: parameter count mismatch");
  for (Matrix* p : params) {
    Matrix m = r.matrix();
    if (!m.same_shape(*p)) throw LoadError("checkpoint: parameter shape mismatch");
    *p = std::move(m);
  }
  AdamState opt;
  opt.config = config.adam;
  opt.step = r.u64();
  const std::uint64_t n_state = r.u64();
  if (n_state != params.size()) throw LoadError("checkpoint: optimiser state size mismatch");
  for (std::uint64_t i = 0; i < n_state; ++i) opt.m.push_back(r.matrix());
  for (std::uint64_t i = 0; i < n_state; ++i) opt.v.push_back(r.matrix());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!opt.m[i].same_shape(*params[i]) || !opt.v[i].same_shape(*params[i])) {
      throw LoadError("checkpoint: optimiser state shape mismatch");
    }
  }
  if (r.remaining() != 0) throw LoadError("checkpoint: trailing bytes");
  return Checkpoint{std::move(model), std::move(opt)};
}

void save_checkpoint(const SkipThoughtModel& model, const AdamState& opt,
                     const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(model, opt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace skipgru
