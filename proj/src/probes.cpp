#include "skipgru/probes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "skipgru/error.hpp"
#include "skipgru/rng.hpp"

namespace skipgru {

Vector pair_features(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("pair_features: vectors differ in dimension");
  const std::size_t d = u.size();
  Vector out(2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = u[i] * v[i];
    out[d + i] = std::abs(u[i] - v[i]);
  }
  return out;
}

Vector score_to_distribution(double y) {
  if (!(y >= 1.0 && y <= 5.0)) throw InputError("score_to_distribution: score outside [1, 5]");
  Vector p(kScoreLevels, 0.0);
  const double fl = std::floor(y);
  const auto i = static_cast<std::size_t>(fl);  // 1-based level
  if (i == kScoreLevels) {
    p[kScoreLevels - 1] = 1.0;
    return p;
  }
  p[i - 1] = fl - y + 1.0;
  p[i] = y - fl;
  return p;
}

double distribution_to_score(std::span<const double> p) {
  if (p.size() != kScoreLevels) throw InputError("distribution_to_score: expected 5 probabilities");
  double sum = 0.0, score = 0.0;
  for (std::size_t i = 0; i < kScoreLevels; ++i) {
    if (!(p[i] >= 0.0)) throw InputError("distribution_to_score: negative or non-finite probability");
    sum += p[i];
    score += static_cast<double>(i + 1) * p[i];
  }
  if (std::abs(sum - 1.0) > 1e-6) throw InputError("distribution_to_score: probabilities do not sum to 1");
  return score;
}

namespace {

// Stable log-softmax in place.
void log_softmax(std::span<double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - top);
  const double lse = top + std::log(sum);
  for (double& v : z) v -= lse;
}

}  // namespace

Vector ProbeModel::predict_proba(std::span<const double> x) const {
  if (x.size() != features()) throw ShapeError("probe: feature dimension mismatch");
  Vector z = bias;
  matvec_add(weights, x, z);
  log_softmax(z);
  for (double& v : z) v = std::exp(v);
  return z;
}

std::size_t ProbeModel::predict(std::span<const double> x) const {
  const Vector p = predict_proba(x);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

Matrix one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Matrix t(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw RangeError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    t(i, labels[i]) = 1.0;
  }
  return t;
}

double logreg_objective(const Matrix& x, const Matrix& targets, const Matrix& w, std::span<const double> b,
                        double l2, Matrix* grad_w, Vector* grad_b) {
  const std::size_t n = x.rows(), c = w.rows();
  if (targets.rows() != n || targets.cols() != c || w.cols() != x.cols() || b.size() != c) {
    throw ShapeError("logreg: inconsistent shapes");
  }
  if (grad_w) *grad_w = Matrix::zeros_like(w);
  if (grad_b) grad_b->assign(c, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  Vector z(c);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(b.begin(), b.end(), z.begin());
    matvec_add(w, x.row(i), z);
    log_softmax(z);
    for (std::size_t k = 0; k < c; ++k) {
      const double t = targets(i, k);
      if (t != 0.0) loss -= t * z[k];
    }
    if (grad_w || grad_b) {
      // d/dz of the row loss is softmax(z) * sum(t) - t.
      double tsum = 0.0;
      for (std::size_t k = 0; k < c; ++k) tsum += targets(i, k);
      for (std::size_t k = 0; k < c; ++k) z[k] = (std::exp(z[k]) * tsum - targets(i, k)) * inv_n;
      if (grad_w) add_outer(*grad_w, z, x.row(i));
      if (grad_b) axpy(1.0, z, *grad_b);
    }
  }
  loss *= inv_n;
  const auto wd = w.data();
  loss += 0.5 * l2 * dot(wd, wd);
  if (grad_w) axpy(l2, wd, grad_w->data());
  return loss;
}

ProbeModel fit_logreg(const Matrix& x, const Matrix& targets, double l2, const LbfgsOptions& options) {
  if (x.rows() == 0) throw InputError("fit_logreg: no examples");
  if (targets.rows() != x.rows()) throw ShapeError("fit_logreg: targets do not match examples");
  if (targets.cols() < 2) throw ConfigError("fit_logreg: need at least two classes");
  if (!(l2 >= 0.0)) throw ConfigError("fit_logreg: l2 must be non-negative");
  if (!x.all_finite() || !targets.all_finite()) throw InputError("fit_logreg: non-finite input");
  const std::size_t c = targets.cols(), f = x.cols(), nw = c * f;

  Matrix w(c, f), gw;
  Vector gb;
  auto objective = [&](std::span<const double> theta, std::span<double> grad) {
    std::copy_n(theta.begin(), nw, w.data().begin());
    const double value = logreg_objective(x, targets, w, theta.subspan(nw), l2, &gw, &gb);
    std::copy(gw.data().begin(), gw.data().end(), grad.begin());
    std::copy(gb.begin(), gb.end(), grad.begin() + static_cast<std::ptrdiff_t>(nw));
    return value;
  };
  const LbfgsResult res = minimize_lbfgs(objective, Vector(nw + c, 0.0), options);
  ProbeModel model;
  model.weights = Matrix(c, f);
  std::copy_n(res.x.begin(), nw, model.weights.data().begin());
  model.bias.assign(res.x.begin() + static_cast<std::ptrdiff_t>(nw), res.x.end());
  model.l2 = l2;
  model.iterations = res.iterations;
  model.grad_norm = res.grad_norm;
  return model;
}

ProbeModel fit_logreg(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes, double l2,
                      const LbfgsOptions& options) {
  return fit_logreg(x, one_hot(labels, classes), l2, options);
}

ProbeModel fit_relatedness(const Matrix& features, std::span<const double> gold, double l2) {
  if (gold.size() != features.rows()) throw ShapeError("fit_relatedness: gold count does not match features");
  Matrix targets(gold.size(), kScoreLevels);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const Vector p = score_to_distribution(gold[i]);
    std::copy(p.begin(), p.end(), targets.row(i).begin());
  }
  return fit_logreg(features, targets, l2);
}

double predict_relatedness(const ProbeModel& model, std::span<const double> features) {
  if (model.classes() != kScoreLevels) throw ConfigError("predict_relatedness: probe is not a 5-level readout");
  Vector p = model.predict_proba(features);
  // Renormalise away rounding so the distribution check cannot trip.
  const double sum = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= sum;
  return distribution_to_score(p);
}

std::vector<double> default_l2_grid() { return {1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2}; }

std::vector<std::size_t> stratified_folds(const std::vector<std::size_t>& strata, std::size_t folds,
                                          std::uint64_t seed) {
  if (folds < 2) throw ConfigError("cross-validation needs at least two folds");
  std::size_t n_strata = 0;
  for (std::size_t s : strata) n_strata = std::max(n_strata, s + 1);
  std::vector<std::vector<std::size_t>> members(n_strata);
  for (std::size_t i = 0; i < strata.size(); ++i) members[strata[i]].push_back(i);
  std::vector<std::size_t> fold(strata.size());
  const Rng base(seed);
  std::size_t next = 0;
  for (std::size_t s = 0; s < n_strata; ++s) {
    auto& m = members[s];
    if (m.empty()) continue;
    if (m.size() < folds) {
      throw InputError("cross-validation: class " + std::to_string(s) + " has " + std::to_string(m.size()) +
                       " examples, fewer than " + std::to_string(folds) + " folds");
    }
    Rng rng = base.split(s);
    rng.shuffle(std::span(m));
    for (std::size_t i : m) fold[i] = next++ % folds;
  }
  return fold;
}

CvResult cross_validate(const std::vector<std::size_t>& strata, std::size_t folds, const std::vector<double>& grid,
                        std::uint64_t seed, const FoldScorer& scorer) {
  if (grid.empty()) throw ConfigError("cross-validation: empty l2 grid");
  CvResult result;
  result.folds = stratified_folds(strata, folds, seed);
  std::vector<std::vector<std::size_t>> train(folds), test(folds);
  for (std::size_t i = 0; i < result.folds.size(); ++i) {
    for (std::size_t f = 0; f < folds; ++f) (result.folds[i] == f ? test[f] : train[f]).push_back(i);
  }
  std::size_t best = 0;
  std::vector<std::vector<double>> per_fold(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t f = 0; f < folds; ++f) per_fold[g].push_back(scorer(train[f], test[f], grid[g]));
    result.grid_scores.push_back(std::accumulate(per_fold[g].begin(), per_fold[g].end(), 0.0) /
                                 static_cast<double>(folds));
    if (result.grid_scores[g] > result.grid_scores[best]) best = g;
  }
  result.best_l2 = grid[best];
  result.fold_scores = per_fold[best];
  return result;
}

namespace {

template <typename T>
std::vector<T> select(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

double holdout_accuracy(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes,
                        const std::vector<std::size_t>& train, const std::vector<std::size_t>& test, double l2) {
  const ProbeModel model = fit_logreg(select_rows(x, train), select(labels, train), classes, l2);
  std::size_t correct = 0;
  for (std::size_t i : test) correct += model.predict(x.row(i)) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

void check_labels(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes) {
  if (labels.size() != x.rows()) throw ShapeError("cross-validation: label count does not match features");
  for (std::size_t l : labels)
    if (l >= classes) throw RangeError("cross-validation: label out of range");
}

}  // namespace

CvResult cross_validate(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes,
                        std::size_t folds, const std::vector<double>& grid, std::uint64_t seed) {
  check_labels(x, labels, classes);
  return cross_validate(labels, folds, grid, seed,
                        [&](const auto& train, const auto& test, double l2) {
                          return holdout_accuracy(x, labels, classes, train, test, l2);
                        });
}

NestedCvResult nested_cross_validate(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes,
                                     std::size_t outer_folds, std::size_t inner_folds,
                                     const std::vector<double>& grid, std::uint64_t seed) {
  check_labels(x, labels, classes);
  const auto outer = stratified_folds(labels, outer_folds, seed);
  const Rng base(seed);
  NestedCvResult result;
  for (std::size_t f = 0; f < outer_folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < outer.size(); ++i) (outer[i] == f ? test : train).push_back(i);
    const Matrix x_train = select_rows(x, train);
    const auto y_train = select(labels, train);
    const auto inner = cross_validate(x_train, y_train, classes, inner_folds, grid, base.split(f + 1).engine()());
    result.chosen_l2.push_back(inner.best_l2);
    result.fold_accuracy.push_back(holdout_accuracy(x, labels, classes, train, test, inner.best_l2));
  }
  result.mean_accuracy = std::accumulate(result.fold_accuracy.begin(), result.fold_accuracy.end(), 0.0) /
                         static_cast<double>(outer_folds);
  return result;
}

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_points) {
  if (a.size() != b.size()) throw ShapeError("metric: inputs differ in length");
  if (a.size() < min_points) throw InputError("metric: too few points");
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, 2);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw NumericError("correlation undefined: zero variance input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, 2);
  return pearson(average_ranks(a), average_ranks(b));
}

double mse(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold) {
  if (pred.size() != gold.size()) throw ShapeError("accuracy: inputs differ in length");
  if (pred.empty()) throw InputError("accuracy: no predictions");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold, std::size_t positive) {
  if (pred.size() != gold.size()) throw ShapeError("f1: inputs differ in length");
  if (pred.empty()) throw InputError("f1: no predictions");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive, g = gold[i] == positive;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp == 0.0) return 0.0;
  const double precision = tp / (tp + fp), recall = tp / (tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

template <typename T>
T parse_field(const std::string& text, const std::filesystem::path& path, std::size_t line_no) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw InputError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" + text + "'");
  }
  return v;
}

std::ifstream open_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return in;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::vector<PairExample> read_pair_dataset(const std::filesystem::path& path) {
  auto in = open_dataset(path);
  std::string line;
  std::vector<PairExample> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line_no == 1 || line.empty()) continue;  // header
    const auto f = split_tabs(line);
    if (f.size() != 3) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    out.push_back({f[0], f[1], parse_field<double>(f[2], path, line_no)});
  }
  if (out.empty()) throw InputError("dataset " + path.string() + " has no examples");
  return out;
}

std::vector<LabeledSentence> read_classification_dataset(const std::filesystem::path& path) {
  auto in = open_dataset(path);
  std::string line;
  std::vector<LabeledSentence> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected 'label<TAB>sentence'");
    }
    out.push_back({parse_field<std::size_t>(line.substr(0, tab), path, line_no), line.substr(tab + 1)});
  }
  if (out.empty()) throw InputError("dataset " + path.string() + " has no examples");
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows, bool header) {
  if (header) out << "task,variant,metric,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.10g", r.value);
    out << r.task << ',' << r.variant << ',' << r.metric << ',' << buf << '\n';
  }
}

}  // namespace skipgru
