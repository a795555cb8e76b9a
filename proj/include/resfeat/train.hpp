#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "resfeat/autodiff.hpp"
#include "resfeat/checkpoint.hpp"
#include "resfeat/data.hpp"
#include "resfeat/exec.hpp"
#include "resfeat/network.hpp"
#include "resfeat/random.hpp"

namespace resfeat {

struct TrainConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;  // 1e-3 for the 34-layer models
  int batch_size = 128;
  int lr_step = 30;
  double lr_factor = 0.1;
  int epochs = 60;
  std::uint64_t seed = 1;
  bool deterministic = true;   // single-threaded, no prefetch
  int subset = 0;              // > 0: train on the first N samples
  int prefetch = 2;            // bounded-buffer depth when not deterministic
  double stop_at_test_top1 = -1.0;  // early stop once reached (disabled when < 0)
  std::string out_dir;         // metrics/checkpoints land here when set

  void validate() const {
    if (lr0 <= 0 || lr_factor <= 0 || batch_size < 1 || lr_step < 1 || epochs < 0)
      throw ConfigError("TrainConfig: rates and counts must be positive");
  }
};

// Piecewise-constant schedule: lr0 * lr_factor^floor(epoch / lr_step).
inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("lr_at: epoch must be >= 0");
  return cfg.lr0 * std::pow(cfg.lr_factor, epoch / cfg.lr_step);
}

struct MetricsRow {
  int epoch = 0;
  double lr = 0, train_loss = 0, train_top1 = 0, test_top1 = 0, wall_seconds = 0;
};

inline const char* metrics_csv_header() {
  return "epoch,lr,train_loss,train_top1,test_top1,wall_seconds";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.train_top1 << ','
     << r.test_top1 << ',' << r.wall_seconds;
  return os.str();
}

// --- SGD with momentum and decoupled-from-BN weight decay ---------------------

// v <- mu*v + (g + lambda*w); w <- w - lr*v
template <typename T>
void sgd_update(std::span<T> w, std::span<const T> g, std::vector<T>& v, T lr, T mu, T lambda) {
  if (w.size() != g.size()) throw ShapeError("sgd_update: weight/gradient size mismatch");
  if (v.size() != w.size()) v.assign(w.size(), T(0));
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = mu * v[i] + (g[i] + lambda * w[i]);
    w[i] -= lr * v[i];
  }
}

// Velocity buffers are keyed by parameter buffer, so a shared kernel has a
// single velocity and receives a single update per step regardless of how
// many sites use it.
template <typename T>
class SgdOptimizer {
 public:
  void step(ParamStore<T>& store, T lr, T momentum, T weight_decay) {
    for (auto& k : store.kernels()) {
      sgd_update<T>(k->values, k->values_grad, vel_[k->values.data()], lr, momentum, weight_decay);
      if (k->has_bias()) sgd_update<T>(k->bias, k->bias_grad, vel_[k->bias.data()], lr, momentum, T(0));
    }
    for (auto& b : store.bns()) {  // never decayed
      sgd_update<T>(b->gamma, b->gamma_grad, vel_[b->gamma.data()], lr, momentum, T(0));
      sgd_update<T>(b->beta, b->beta_grad, vel_[b->beta.data()], lr, momentum, T(0));
    }
    for (auto& d : store.denses()) {
      sgd_update<T>(d->weights, d->weights_grad, vel_[d->weights.data()], lr, momentum, weight_decay);
      sgd_update<T>(d->bias, d->bias_grad, vel_[d->bias.data()], lr, momentum, T(0));
    }
  }

 private:
  std::map<const void*, std::vector<T>> vel_;
};

// --- loss ---------------------------------------------------------------------

template <typename T>
struct LossResult {
  double loss = 0;          // mean cross entropy over the batch
  Tensor4<T> dlogits;       // (softmax - onehot) / N
  int correct = 0;
};

template <typename T>
LossResult<T> cross_entropy(const Tensor4<T>& logits, const std::vector<int>& labels) {
  const int N = logits.n, K = logits.c;
  if (static_cast<int>(labels.size()) != N)
    throw ShapeError("cross_entropy: label count != batch size");
  LossResult<T> res;
  res.dlogits = zeros_like(logits);
  double total = 0;
  for (int i = 0; i < N; ++i) {
    const T* row = logits.data.data() + static_cast<std::size_t>(i) * K;
    T* drow = res.dlogits.data.data() + static_cast<std::size_t>(i) * K;
    const int y = labels[i];
    if (y < 0 || y >= K) throw ShapeError("cross_entropy: label out of range");
    T mx = row[0];
    int arg = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > mx) {
        mx = row[k];
        arg = k;
      }
    if (arg == y) ++res.correct;
    double denom = 0;
    for (int k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k] - mx));
    total += -(static_cast<double>(row[y] - mx) - std::log(denom));
    for (int k = 0; k < K; ++k) {
      const double p = std::exp(static_cast<double>(row[k] - mx)) / denom;
      drow[k] = static_cast<T>((p - (k == y ? 1.0 : 0.0)) / N);
    }
  }
  res.loss = total / N;
  return res;
}

// --- initialization -----------------------------------------------------------

// Fan-based scaled normal init for conv/linear; BN gamma=1, beta=0. Shared
// kernels are stored once and therefore drawn once.
template <typename T>
void init_model(Model<T>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& k : m.store.kernels()) he_init(*k, rng);
  for (auto& d : m.store.denses()) he_init(*d, rng);
}

// --- evaluation -----------------------------------------------------------------

inline int env_thread_cap() {
  if (const char* s = std::getenv("RESFEAT_THREADS")) {
    const int v = std::atoi(s);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

// TOP-1 accuracy in percent. Read-only on the model; shards across threads
// (each thread counts its own contiguous range, results are summed, so the
// metric is thread-count invariant).
template <typename T>
double evaluate(Model<T>& m, const Dataset& ds, const NormStats& stats, int batch_size = 256,
                int threads = 0) {
  if (ds.n == 0) throw StateError("evaluate: empty dataset");
  m.set_train(false);
  if (threads <= 0) threads = env_thread_cap();
  threads = std::min<int>(threads, std::max(1, ds.n / std::max(1, batch_size)));
  threads = std::max(1, threads);

  std::vector<int> idx(ds.n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<long> correct(threads, 0);

  auto run_range = [&](int tid, int from, int to) {
    for (int at = from; at < to; at += batch_size) {
      const int count = std::min(batch_size, to - at);
      Batch b = make_batch(ds, idx, at, count);
      normalize_batch(b, stats);
      Tensor4<T> imgs(b.images.n, b.images.c, b.images.h, b.images.w);
      for (std::size_t i = 0; i < imgs.data.size(); ++i)
        imgs.data[i] = static_cast<T>(b.images.data[i]);
      Tensor4<T> logits = forward(m, imgs);
      for (int i = 0; i < count; ++i) {
        const T* row = logits.data.data() + static_cast<std::size_t>(i) * logits.c;
        int arg = 0;
        for (int k = 1; k < logits.c; ++k)
          if (row[k] > row[arg]) arg = k;
        if (arg == b.labels[i]) ++correct[tid];
      }
    }
  };

  if (threads == 1) {
    run_range(0, 0, ds.n);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (ds.n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int from = t * chunk, to = std::min(ds.n, from + chunk);
      if (from >= to) break;
      pool.emplace_back(run_range, t, from, to);
    }
    for (auto& th : pool) th.join();
  }
  long total = 0;
  for (long c : correct) total += c;
  return 100.0 * static_cast<double>(total) / ds.n;
}

// --- training loop ----------------------------------------------------------------

struct TrainResult {
  std::vector<MetricsRow> metrics;
  std::string final_checkpoint;  // empty when out_dir unset
  std::vector<double> step_losses;  // per-optimizer-step training loss
};

// SGD training per the reference recipe. Deterministic mode pins everything
// to one thread and a fixed RNG stream, which makes repeated runs
// bit-identical (checkpoints byte-for-byte).
inline TrainResult train(Model<float>& m, const Dataset& train_ds, const Dataset* test_ds,
                         const NormStats& stats, const TrainConfig& cfg) {
  cfg.validate();
  const Dataset& full = train_ds;
  Dataset limited;
  const Dataset* data = &full;
  if (cfg.subset > 0 && cfg.subset < full.n) {
    limited = subset_dataset(full, cfg.subset);
    data = &limited;
  }

  AugmentConfig aug = default_augment(
      m.spec.stem == StemKind::SmallImage ? DatasetKind::MnistIdx : DatasetKind::Cifar10Bin, stats);

  init_model(m, cfg.seed);
  SgdOptimizer<float> opt;
  TrainResult out;

  const bool save = !cfg.out_dir.empty();
  std::ofstream csv;
  if (save) {
    std::filesystem::create_directories(cfg.out_dir);
    csv.open(cfg.out_dir + "/metrics.csv", std::ios::trunc);
    csv << metrics_csv_header() << "\n";
    csv.flush();
  }

  std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ull);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    m.set_train(true);

    BatchIterator it(*data, cfg.batch_size, /*shuffle=*/true, rng(), &aug, nullptr,
                     cfg.deterministic ? 0 : cfg.prefetch);
    double loss_sum = 0;
    long correct = 0, seen = 0;
    int steps = 0;
    while (auto b = it.next()) {
      Tape<float> tape;
      TapeExec<float> ex(tape);
      m.store.zero_grad();
      auto in = tape.leaf(std::move(b->images));
      auto logits = model_forward(m, ex, in);
      auto loss = cross_entropy(*logits.v, b->labels);
      if (!std::isfinite(loss.loss)) {
        if (save) save_checkpoint(m, cfg.out_dir + "/diag-nan.rft1");
        throw StateError("training aborted: loss is not finite at epoch " +
                         std::to_string(epoch) + " step " + std::to_string(steps) +
                         (save ? " (diagnostic checkpoint written)" : ""));
      }
      tape.backward(logits, loss.dlogits);
      opt.step(m.store, static_cast<float>(lr), static_cast<float>(cfg.momentum),
               static_cast<float>(cfg.weight_decay));
      loss_sum += loss.loss;
      out.step_losses.push_back(loss.loss);
      correct += loss.correct;
      seen += static_cast<long>(b->labels.size());
      ++steps;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = steps ? loss_sum / steps : 0.0;
    row.train_top1 = seen ? 100.0 * correct / seen : 0.0;
    row.test_top1 = test_ds ? evaluate(m, *test_ds, stats, cfg.batch_size,
                                       cfg.deterministic ? 1 : 0)
                            : std::nan("");
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.metrics.push_back(row);
    if (save) {
      csv << metrics_csv_row(row) << "\n";
      csv.flush();
      if ((epoch + 1) % cfg.lr_step == 0 && epoch + 1 < cfg.epochs)
        save_checkpoint(m, cfg.out_dir + "/ckpt-epoch" + std::to_string(epoch + 1) + ".rft1");
    }
    if (cfg.stop_at_test_top1 > 0 && row.test_top1 >= cfg.stop_at_test_top1) break;
  }

  if (save) {
    out.final_checkpoint = cfg.out_dir + "/model.rft1";
    save_checkpoint(m, out.final_checkpoint);
  }
  return out;
}

}  // namespace resfeat
