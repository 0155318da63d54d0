#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "skipgru/numerics.hpp"

namespace skipgru {

/// Linear maps of images (U) and sentences (V) into a joint space scored by
/// cosine similarity.
struct RankingModel {
  Matrix u;  // embed x image_dim
  Matrix v;  // embed x sentence_dim
  double alpha = 0.2;
  std::size_t k = 50;  // contrastive terms per positive and direction

  static RankingModel init(std::size_t embed_dim, std::size_t image_dim, std::size_t sentence_dim, double alpha,
                           std::size_t k, std::uint64_t seed);
  static RankingModel zeros_like(const RankingModel& other);
  std::size_t embed_dim() const { return u.rows(); }

  ParamRefs refs() { return {&u, &v}; }
  ConstParamRefs refs() const { return {&u, &v}; }
};

/// cos(U x, V y). NumericError when either embedding has zero norm.
double pair_score(std::span<const double> image, std::span<const double> sentence, const RankingModel& model);

/// For positive i: k sentence indices and k image indices drawn uniformly
/// without replacement from the batch, excluding i.
struct Contrastives {
  std::vector<std::vector<std::size_t>> sentences;
  std::vector<std::vector<std::size_t>> images;
};

Contrastives sample_contrastives(std::size_t batch_size, std::size_t k, std::uint64_t seed);

/// Sum over positives of both hinge directions:
///   max(0, alpha - s(x_i, y_i) + s(x_i, y_k)) + max(0, alpha - s(x_i, y_i) + s(x_k, y_i)).
/// images and sentences are row-aligned positives. Gradients accumulate
/// into grads when non-null.
double ranking_loss(const Matrix& images, const Matrix& sentences, const RankingModel& model,
                    const Contrastives& contrastives, RankingModel* grads = nullptr);
/// Samples the contrastive terms from contrastive_seed; ConfigError unless
/// the batch holds more than model.k pairs.
double ranking_loss(const Matrix& images, const Matrix& sentences, const RankingModel& model,
                    std::uint64_t contrastive_seed, RankingModel* grads = nullptr);

struct RetrievalResult {
  std::map<std::size_t, double> recall_at;  // K -> percentage
  double median_rank = 0.0;
  std::vector<std::size_t> ranks;  // best ground-truth rank per query, 1-based
};

struct RetrievalReport {
  RetrievalResult annotation;  // images query captions
  RetrievalResult search;      // captions query images
  double mean_r1() const { return 0.5 * (annotation.recall_at.at(1) + search.recall_at.at(1)); }
};

/// scores(i, c) scores image i against caption c; owner[c] is the image
/// caption c describes. A result's rank is 1 + the number of strictly
/// higher-scored candidates.
RetrievalReport evaluate_retrieval(const Matrix& scores, const std::vector<std::size_t>& owner,
                                   const std::vector<std::size_t>& ks = {1, 5, 10});

/// Cosine score matrix between all images and captions under the model.
Matrix score_matrix(const Matrix& images, const Matrix& captions, const RankingModel& model);

/// evaluate_retrieval on score_matrix(images, captions, model).
RetrievalReport evaluate_retrieval(const Matrix& images, const Matrix& captions, const RankingModel& model,
                                   const std::vector<std::size_t>& owner,
                                   const std::vector<std::size_t>& ks = {1, 5, 10});

struct RankerConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 128;
  AdamConfig adam;
  std::uint64_t seed = 1234;
};

struct RankerEpoch {
  std::size_t epoch = 0;  // 0 is the initial model
  double mean_loss = 0.0;
  double dev_mean_r1 = 0.0;
};

struct RankerResult {
  RankingModel best;
  std::size_t best_epoch = 0;
  std::vector<RankerEpoch> history;
};

/// Adam on ranking_loss over shuffled minibatches of the row-aligned
/// (image, caption) pairs; contrastives are resampled every step. After each
/// epoch the dev set is scored and the snapshot with the best mean R@1 over
/// both directions is kept. Batches of at most model.k pairs are skipped.
RankerResult train_ranker(const Matrix& images, const Matrix& sentences, const Matrix& dev_images,
                          const Matrix& dev_captions, const std::vector<std::size_t>& dev_owner, RankingModel model,
                          const RankerConfig& config);

}  // namespace skipgru
