// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wid/data.hpp"
#include "wid/models.hpp"

namespace wid {

// ---------------------------------------------------------------------------

struct TrainConfig {
  std::int64_t batch_size = 16;
  int epochs = 50;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double lr_decay_factor = 0.5;
  int lr_decay_every = 10;  // epochs
  std::uint64_t seed = 1;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (!(lr_decay_factor > 0 && lr_decay_factor < 1))
      throw ConfigError("lr_decay_factor must be in (0,1)");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ConfigError("adam betas must be in [0,1)");
    if (!(eps > 0)) throw ConfigError("adam eps must be positive");
  }

  // Piecewise-constant schedule: halved at the start of epochs 11, 21, 31, 41
  // (factor applied once per completed decay period; epoch is 1-based).
  double lr_at(int epoch) const {
    const int k = (epoch - 1) / lr_decay_every;
    return lr * std::pow(lr_decay_factor, k);
  }
};

// ---------------------------------------------------------------------------
// Adam with bias correction; weight decay enters as a classic L2 gradient
// term (g += wd * p), not the decoupled variant.

template <typename T>
class Adam {
 public:
  explicit Adam(TrainConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  void step(std::vector<Tensor<T>>& params, double lr) {
    if (slots_.empty()) {
      for (auto& p : params)
        slots_.push_back({std::vector<T>(static_cast<std::size_t>(p.numel()), T(0)),
                          std::vector<T>(static_cast<std::size_t>(p.numel()), T(0))});
    }
    if (slots_.size() != params.size())
      throw DimensionError("Adam: parameter count changed between steps");
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, t_));
    const T alpha = static_cast<T>(lr), wd = static_cast<T>(cfg_.weight_decay);
    const T eps = static_cast<T>(cfg_.eps);

    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params[i];
      if (slots_[i].m.size() != static_cast<std::size_t>(p.numel()))
        throw DimensionError("Adam: parameter size changed between steps");
      const T* g0 = p.has_grad() ? p.grad() : nullptr;
      T* v = p.data();
      T* m = slots_[i].m.data();
      T* s = slots_[i].v.data();
      for (std::size_t j = 0; j < slots_[i].m.size(); ++j) {
        const T g = (g0 ? g0[j] : T(0)) + wd * v[j];
        m[j] = b1 * m[j] + (T(1) - b1) * g;
        s[j] = b2 * s[j] + (T(1) - b2) * g * g;
        const T mhat = m[j] / bc1;
        const T vhat = s[j] / bc2;
        v[j] -= alpha * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    std::vector<T> m, v;
  };
  TrainConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Top-k rank under the deterministic tie rule: equal probabilities are ranked
// by index, lower index first. Hit at k iff rank < k.

template <typename P>
int topk_rank(const std::vector<P>& probs, std::int64_t true_idx) {
  if (true_idx < 0 || true_idx >= static_cast<std::int64_t>(probs.size()))
    throw ValueError("topk_rank: class index out of range");
  const P pt = probs[static_cast<std::size_t>(true_idx)];
  int rank = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > pt) ++rank;
    else if (probs[j] == pt && static_cast<std::int64_t>(j) < true_idx) ++rank;
  }
  return rank;
}

// ---------------------------------------------------------------------------

struct EvalReport {
  std::string level;  // "word" | "page"
  std::int64_t n_samples = 0;
  double top1 = 0.0, top5 = 0.0;
  std::map<int, double> per_writer_top1;       // writer id -> top-1 fraction
  std::map<int, std::map<int, int>> confusion; // true id -> predicted id -> count
  std::vector<std::string> warnings;

  // Deterministic key=value rendering; doubles at full precision so equal
  // reports compare equal as text.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "level=" << level << "\n";
    os << "n_samples=" << n_samples << "\n";
    os << "top1=" << top1 << "\n";
    os << "top5=" << top5 << "\n";
    for (const auto& [w, acc] : per_writer_top1) os << "writer." << w << ".top1=" << acc << "\n";
    for (const auto& [t, row] : confusion)
      for (const auto& [p, n] : row) os << "confusion." << t << "." << p << "=" << n << "\n";
    for (const auto& w : warnings) os << "warning=" << w << "\n";
    return os.str();
  }
};

namespace detail {

// Probability rows for a batch, straight from head logits (mean of softmaxed
// heads); plain arithmetic on forward values, no graph involvement.
template <typename T>
std::vector<std::vector<double>> head_prob_rows(const std::vector<Tensor<T>>& heads) {
  const std::int64_t N = heads.at(0).dim(0), C = heads.at(0).dim(1);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(N),
                                        std::vector<double>(static_cast<std::size_t>(C), 0.0));
  for (const auto& h : heads) {
    const T* v = h.data();
    for (std::int64_t n = 0; n < N; ++n) {
      double mx = -1e300;
      for (std::int64_t c = 0; c < C; ++c)
        mx = std::max(mx, static_cast<double>(v[n * C + c]));
      double sum = 0.0;
      std::vector<double> e(static_cast<std::size_t>(C));
      for (std::int64_t c = 0; c < C; ++c) {
        e[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(v[n * C + c]) - mx);
        sum += e[static_cast<std::size_t>(c)];
      }
      for (std::int64_t c = 0; c < C; ++c)
        rows[static_cast<std::size_t>(n)][static_cast<std::size_t>(c)] +=
            e[static_cast<std::size_t>(c)] / sum;
    }
  }
  const double scale = 1.0 / static_cast<double>(heads.size());
  for (auto& r : rows)
    for (auto& p : r) p *= scale;
  return rows;
}

// Eval-mode probability rows for an index subset, batched.
template <typename T>
std::vector<std::vector<double>> probs_for_indices(Network<T>& net, const WordDataset<T>& ds,
                                                   const std::vector<std::size_t>& indices,
                                                   std::int64_t batch_size) {
  std::vector<std::vector<double>> all;
  all.reserve(indices.size());
  NoGradGuard ng;
  for (std::size_t start = 0; start < indices.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                         indices.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor<T> x = stack_words(ds.images, chunk);
    auto rows = head_prob_rows(net.forward_heads(x, /*training=*/false));
    for (auto& r : rows) all.push_back(std::move(r));
  }
  return all;
}

inline void score_samples(const std::vector<std::vector<double>>& probs,
                          const std::vector<int>& writer_of_sample,
                          const std::vector<std::int64_t>& class_of_sample,
                          const std::vector<int>& writer_of_class, EvalReport& rep) {
  std::map<int, std::array<std::int64_t, 2>> per_writer;  // writer -> {hits, total}
  std::int64_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int rank = topk_rank(probs[i], class_of_sample[i]);
    const bool h1 = rank < 1;
    hit1 += h1;
    hit5 += rank < 5;
    auto& pw = per_writer[writer_of_sample[i]];
    pw[0] += h1;
    pw[1] += 1;
    std::size_t pred = 0;
    for (std::size_t c = 1; c < probs[i].size(); ++c)
      if (probs[i][c] > probs[i][pred]) pred = c;  // first max wins ties
    rep.confusion[writer_of_sample[i]][writer_of_class[pred]] += 1;
  }
  rep.n_samples = static_cast<std::int64_t>(probs.size());
  rep.top1 = rep.n_samples ? static_cast<double>(hit1) / static_cast<double>(rep.n_samples) : 0.0;
  rep.top5 = rep.n_samples ? static_cast<double>(hit5) / static_cast<double>(rep.n_samples) : 0.0;
  for (const auto& [w, ht] : per_writer)
    rep.per_writer_top1[w] = static_cast<double>(ht[0]) / static_cast<double>(ht[1]);
}

}  // namespace detail

// Word-level evaluation over a record subset. Pure observer: no parameter or
// running-statistic changes, identical reports on repeated calls.
template <typename T>
EvalReport evaluate_word_level(Network<T>& net, const WordDataset<T>& ds,
                               const std::vector<std::size_t>& indices,
                               std::int64_t batch_size = 16) {
  EvalReport rep;
  rep.level = "word";
  const auto probs = detail::probs_for_indices(net, ds, indices, batch_size);
  std::vector<int> writer_of_sample;
  std::vector<std::int64_t> class_of_sample;
  for (std::size_t i : indices) {
    writer_of_sample.push_back(ds.records[i].writer_id);
    class_of_sample.push_back(ds.labels[i]);
  }
  detail::score_samples(probs, writer_of_sample, class_of_sample, ds.writer_ids, rep);
  return rep;
}

// Page-level evaluation: the page's probability vector is the arithmetic mean
// of its word probability vectors; Top-k on that mean with the same tie rule.
template <typename T>
EvalReport evaluate_page_level(Network<T>& net, const WordDataset<T>& ds,
                               const std::vector<std::size_t>& indices,
                               std::int64_t batch_size = 16) {
  EvalReport rep;
  rep.level = "page";
  const auto word_probs = detail::probs_for_indices(net, ds, indices, batch_size);

  std::map<std::string, std::vector<std::size_t>> pages;  // page_id -> positions in `indices`
  for (std::size_t pos = 0; pos < indices.size(); ++pos)
    pages[ds.records[indices[pos]].page_id].push_back(pos);

  std::vector<std::vector<double>> page_probs;
  std::vector<int> page_writer;
  std::vector<std::int64_t> page_class;
  for (const auto& [page_id, members] : pages) {
    if (members.empty()) {  // cannot arise from grouping; kept as a guard
      rep.warnings.push_back("page '" + page_id + "' has no words; skipped");
      continue;
    }
    const std::size_t first = indices[members[0]];
    for (std::size_t pos : members)
      if (ds.records[indices[pos]].writer_id != ds.records[first].writer_id)
        throw ValueError("page '" + page_id + "' contains words from multiple writers");

    std::vector<double> mean(word_probs[members[0]].size(), 0.0);
    for (std::size_t pos : members)
      for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += word_probs[pos][c];
    for (auto& v : mean) v /= static_cast<double>(members.size());
    page_probs.push_back(std::move(mean));
    page_writer.push_back(ds.records[first].writer_id);
    page_class.push_back(ds.labels[first]);
  }
  detail::score_samples(page_probs, page_writer, page_class, ds.writer_ids, rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Training loop. Deterministic end to end: batch order is a pure function of
// (seed, epoch), and all kernels are single-threaded with fixed reduction
// order, so a rerun reproduces losses and parameters bit for bit.

struct EpochLog {
  int epoch = 0;          // 1-based
  double mean_loss = 0.0; // sample-weighted mean over the epoch
  double lr = 0.0;
  double train_top1 = 0.0;
};

template <typename T>
class Trainer {
 public:
  Trainer(Network<T>& net, const WordDataset<T>& data, TrainConfig cfg)
      : net_(net), data_(data), cfg_(cfg), opt_(cfg) {
    cfg_.validate();
    if (data_.train_indices.empty()) throw ValueError("training split is empty");
    if (net_.config().num_writers != data_.num_classes())
      throw ConfigError("network expects " + std::to_string(net_.config().num_writers) +
                        " writers, dataset has " + std::to_string(data_.num_classes()));
    net_.visit_params([&](const std::string&, Tensor<T>& t) { params_.push_back(t); });
  }

  // Runs up to cfg.epochs epochs; `on_epoch` (optional) may return true to
  // stop early. Returns one log row per completed epoch.
  std::vector<EpochLog> run(const std::function<bool(const EpochLog&)>& on_epoch = {}) {
    std::vector<EpochLog> logs;
    const auto& train = data_.train_indices;
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      const double lr = cfg_.lr_at(epoch);
      const auto batches = iterate_batches(train.size(), cfg_.batch_size, cfg_.seed,
                                           static_cast<std::uint64_t>(epoch));
      double loss_sum = 0.0;
      std::int64_t hits = 0, seen = 0;
      int batch_no = 0;
      for (const auto& batch : batches) {
        ++batch_no;
        std::vector<std::size_t> rec;
        std::vector<std::int64_t> labels;
        for (std::size_t k : batch) {
          rec.push_back(train[k]);
          labels.push_back(data_.labels[train[k]]);
        }
        const Tensor<T> x = stack_words(data_.images, rec);
        auto heads = net_.forward_heads(x, /*training=*/true);
        Tensor<T> loss = multi_head_loss(heads, labels);
        const double loss_val = static_cast<double>(loss.item());
        if (!std::isfinite(loss_val))
          throw TrainAbort("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + ", lr " + std::to_string(lr));
        for (auto& p : params_) p.zero_grad();
        loss.backward();
        opt_.step(params_, lr);

        loss_sum += loss_val * static_cast<double>(batch.size());
        const auto rows = detail::head_prob_rows(heads);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          std::size_t pred = 0;
          for (std::size_t c = 1; c < rows[i].size(); ++c)
            if (rows[i][c] > rows[i][pred]) pred = c;
          hits += static_cast<std::int64_t>(pred) == labels[i];
        }
        seen += static_cast<std::int64_t>(batch.size());
      }
      EpochLog log;
      log.epoch = epoch;
      log.mean_loss = loss_sum / static_cast<double>(seen);
      log.lr = lr;
      log.train_top1 = static_cast<double>(hits) / static_cast<double>(seen);
      logs.push_back(log);
      if (on_epoch && on_epoch(log)) break;
    }
    return logs;
  }

  std::vector<Tensor<T>>& params() { return params_; }

 private:
  Network<T>& net_;
  const WordDataset<T>& data_;
  TrainConfig cfg_;
  Adam<T> opt_;
  std::vector<Tensor<T>> params_;
};

}  // namespace wid
