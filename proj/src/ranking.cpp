#include "skipgru/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "skipgru/error.hpp"
#include "skipgru/rng.hpp"

namespace skipgru {

RankingModel RankingModel::init(std::size_t embed_dim, std::size_t image_dim, std::size_t sentence_dim,
                                double alpha, std::size_t k, std::uint64_t seed) {
  if (embed_dim == 0) throw ConfigError("ranking: embed_dim must be positive");
  if (!(alpha > 0.0)) throw ConfigError("ranking: margin must be positive");
  const Rng base(seed);
  return RankingModel{uniform_init(embed_dim, image_dim, -0.1, 0.1, base.split(0).engine()()),
                      uniform_init(embed_dim, sentence_dim, -0.1, 0.1, base.split(1).engine()()), alpha, k};
}

RankingModel RankingModel::zeros_like(const RankingModel& o) {
  return RankingModel{Matrix::zeros_like(o.u), Matrix::zeros_like(o.v), o.alpha, o.k};
}

namespace {

struct Embedded {
  Vector e;
  double norm = 0.0;
};

Embedded embed(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw ShapeError("ranking: input dimension does not match the model");
  Embedded out{matvec(m, x), 0.0};
  out.norm = norm2(out.e);
  if (!(out.norm > 0.0)) throw NumericError("ranking: zero-norm embedding, score undefined");
  return out;
}

double cos_of(const Embedded& a, const Embedded& b) { return dot(a.e, b.e) / (a.norm * b.norm); }

// d cos(a, b) / da, scaled and added into g.
void add_cos_grad(const Embedded& a, const Embedded& b, double scale, std::span<double> g) {
  const double c = cos_of(a, b);
  const double inv = 1.0 / (a.norm * b.norm);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * (b.e[i] * inv - c * a.e[i] / (a.norm * a.norm));
}

}  // namespace

double pair_score(std::span<const double> image, std::span<const double> sentence, const RankingModel& model) {
  return cos_of(embed(model.u, image), embed(model.v, sentence));
}

Contrastives sample_contrastives(std::size_t batch_size, std::size_t k, std::uint64_t seed) {
  if (batch_size <= k) {
    throw ConfigError("ranking: batch of " + std::to_string(batch_size) + " cannot supply " + std::to_string(k) +
                      " contrastive terms");
  }
  Rng rng(seed);
  Contrastives c;
  std::vector<std::size_t> pool;
  auto draw = [&](std::size_t i) {
    pool.clear();
    for (std::size_t j = 0; j < batch_size; ++j)
      if (j != i) pool.push_back(j);
    for (std::size_t t = 0; t < k; ++t) std::swap(pool[t], pool[t + rng.index(pool.size() - t)]);
    return std::vector<std::size_t>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  };
  for (std::size_t i = 0; i < batch_size; ++i) {
    c.sentences.push_back(draw(i));
    c.images.push_back(draw(i));
  }
  return c;
}

double ranking_loss(const Matrix& images, const Matrix& sentences, const RankingModel& model,
                    const Contrastives& contrastives, RankingModel* grads) {
  const std::size_t n = images.rows();
  if (sentences.rows() != n) throw ShapeError("ranking_loss: images and sentences are not row-aligned");
  if (contrastives.sentences.size() != n || contrastives.images.size() != n) {
    throw ShapeError("ranking_loss: contrastive sample does not match the batch");
  }
  std::vector<Embedded> a, b;
  for (std::size_t i = 0; i < n; ++i) {
    a.push_back(embed(model.u, images.row(i)));
    b.push_back(embed(model.v, sentences.row(i)));
  }
  const std::size_t d = model.embed_dim();
  std::vector<Vector> ga, gb;
  if (grads) {
    ga.assign(n, Vector(d, 0.0));
    gb.assign(n, Vector(d, 0.0));
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = cos_of(a[i], b[i]);
    for (std::size_t j : contrastives.sentences[i]) {
      const double h = model.alpha - pos + cos_of(a[i], b[j]);
      if (h <= 0.0) continue;
      loss += h;
      if (!grads) continue;
      add_cos_grad(a[i], b[i], -1.0, ga[i]);
      add_cos_grad(b[i], a[i], -1.0, gb[i]);
      add_cos_grad(a[i], b[j], 1.0, ga[i]);
      add_cos_grad(b[j], a[i], 1.0, gb[j]);
    }
    for (std::size_t j : contrastives.images[i]) {
      const double h = model.alpha - pos + cos_of(a[j], b[i]);
      if (h <= 0.0) continue;
      loss += h;
      if (!grads) continue;
      add_cos_grad(a[i], b[i], -1.0, ga[i]);
      add_cos_grad(b[i], a[i], -1.0, gb[i]);
      add_cos_grad(a[j], b[i], 1.0, ga[j]);
      add_cos_grad(b[i], a[j], 1.0, gb[i]);
    }
  }
  if (grads) {
    for (std::size_t i = 0; i < n; ++i) {
      add_outer(grads->u, ga[i], images.row(i));
      add_outer(grads->v, gb[i], sentences.row(i));
    }
  }
  return loss;
}

double ranking_loss(const Matrix& images, const Matrix& sentences, const RankingModel& model,
                    std::uint64_t contrastive_seed, RankingModel* grads) {
  return ranking_loss(images, sentences, model, sample_contrastives(images.rows(), model.k, contrastive_seed),
                      grads);
}

namespace {

double median(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? static_cast<double>(v[m]) : 0.5 * static_cast<double>(v[m - 1] + v[m]);
}

RetrievalResult summarise(std::vector<std::size_t> ranks, const std::vector<std::size_t>& ks) {
  RetrievalResult r;
  for (std::size_t k : ks) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t x) { return x <= k; });
    r.recall_at[k] = 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
  }
  r.median_rank = median(ranks);
  r.ranks = std::move(ranks);
  return r;
}

}  // namespace

RetrievalReport evaluate_retrieval(const Matrix& scores, const std::vector<std::size_t>& owner,
                                   const std::vector<std::size_t>& ks) {
  const std::size_t n_img = scores.rows(), n_cap = scores.cols();
  if (owner.size() != n_cap) throw ShapeError("evaluate_retrieval: owner list does not match captions");
  if (n_img == 0 || n_cap == 0) throw InputError("evaluate_retrieval: empty score matrix");
  std::vector<std::vector<std::size_t>> truth(n_img);
  for (std::size_t c = 0; c < n_cap; ++c) {
    if (owner[c] >= n_img) throw RangeError("evaluate_retrieval: caption owner out of range");
    truth[owner[c]].push_back(c);
  }
  std::vector<std::size_t> ann, search;
  for (std::size_t i = 0; i < n_img; ++i) {
    if (truth[i].empty()) throw InputError("evaluate_retrieval: image " + std::to_string(i) + " has no caption");
    const auto row = scores.row(i);
    std::size_t best = n_cap;
    for (std::size_t c : truth[i]) {
      const auto higher = std::count_if(row.begin(), row.end(), [&](double s) { return s > row[c]; });
      best = std::min(best, static_cast<std::size_t>(higher) + 1);
    }
    ann.push_back(best);
  }
  for (std::size_t c = 0; c < n_cap; ++c) {
    const double target = scores(owner[c], c);
    std::size_t higher = 0;
    for (std::size_t i = 0; i < n_img; ++i) higher += scores(i, c) > target ? 1 : 0;
    search.push_back(higher + 1);
  }
  return RetrievalReport{summarise(std::move(ann), ks), summarise(std::move(search), ks)};
}

Matrix score_matrix(const Matrix& images, const Matrix& captions, const RankingModel& model) {
  std::vector<Embedded> a, b;
  for (std::size_t i = 0; i < images.rows(); ++i) a.push_back(embed(model.u, images.row(i)));
  for (std::size_t c = 0; c < captions.rows(); ++c) b.push_back(embed(model.v, captions.row(c)));
  Matrix s(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t c = 0; c < b.size(); ++c) s(i, c) = cos_of(a[i], b[c]);
  return s;
}

RetrievalReport evaluate_retrieval(const Matrix& images, const Matrix& captions, const RankingModel& model,
                                   const std::vector<std::size_t>& owner, const std::vector<std::size_t>& ks) {
  return evaluate_retrieval(score_matrix(images, captions, model), owner, ks);
}

RankerResult train_ranker(const Matrix& images, const Matrix& sentences, const Matrix& dev_images,
                          const Matrix& dev_captions, const std::vector<std::size_t>& dev_owner, RankingModel model,
                          const RankerConfig& config) {
  const std::size_t n = images.rows();
  if (sentences.rows() != n) throw ShapeError("train_ranker: images and sentences are not row-aligned");
  if (dev_images.rows() == 0 || dev_captions.rows() == 0) throw InputError("train_ranker: empty dev set");
  const std::size_t bs = std::min(config.batch_size, n);
  if (bs <= model.k) throw ConfigError("train_ranker: batches must hold more pairs than contrastive terms");

  auto dev_score = [&](const RankingModel& m) {
    return evaluate_retrieval(dev_images, dev_captions, m, dev_owner).mean_r1();
  };
  RankerResult result{model, 0, {{0, 0.0, dev_score(model)}}};
  double best = result.history.front().dev_mean_r1;

  ParamRefs params = model.refs();
  AdamState opt = AdamState::for_params(as_const(params), config.adam);
  const Rng base(config.seed);
  std::vector<std::size_t> order(n);
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = base.split(epoch);
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      if (end - start <= model.k) break;
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix bx = select_rows(images, rows), by = select_rows(sentences, rows);
      RankingModel grads = RankingModel::zeros_like(model);
      const double loss = ranking_loss(bx, by, model, base.split(0x9a110000ULL + step++).engine()(), &grads);
      if (!std::isfinite(loss)) throw NumericError("train_ranker: non-finite loss in epoch " + std::to_string(epoch));
      loss_sum += loss;
      pairs += rows.size();
      const double inv = 1.0 / static_cast<double>(rows.size());
      for (Matrix* g : grads.refs())
        for (double& v : g->data()) v *= inv;
      adam_step(params, grads.refs(), opt);
    }
    const double r1 = dev_score(model);
    result.history.push_back({epoch, pairs ? loss_sum / static_cast<double>(pairs) : 0.0, r1});
    if (r1 > best) {
      best = r1;
      result.best = model;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace skipgru
