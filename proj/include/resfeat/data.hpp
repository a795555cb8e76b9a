#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "resfeat/error.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

enum class DatasetKind { MnistIdx, Cifar10Bin, Cifar100Bin, Synthetic };
enum class Split { Train, Test };

struct DatasetSource {
  DatasetKind kind = DatasetKind::Synthetic;
  std::string root;
  Split split = Split::Train;
};

// Images kept as raw bytes (planar CHW per sample); batches convert to
// float in [0,1] on assembly.
struct Dataset {
  int n = 0, c = 0, h = 0, w = 0;
  int num_classes = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  std::size_t sample_bytes() const { return static_cast<std::size_t>(c) * h * w; }
};

struct Batch {
  Tensor4<float> images;
  std::vector<int> labels;
};

namespace data_detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

inline std::uint32_t be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

}  // namespace data_detail

// --- MNIST (IDX, big-endian) -------------------------------------------------

// Image files carry magic 2051, label files 2049. File sizes must match the
// header arithmetic exactly before any payload is accepted.
inline Dataset load_mnist(const DatasetSource& src) {
  const std::string base = src.split == Split::Train ? "train" : "t10k";
  const std::string ipath = src.root + "/" + base + "-images-idx3-ubyte";
  const std::string lpath = src.root + "/" + base + "-labels-idx1-ubyte";
  auto ibytes = data_detail::read_file(ipath);
  auto lbytes = data_detail::read_file(lpath);

  if (ibytes.size() < 16) throw IoError(ipath + ": truncated IDX header");
  if (lbytes.size() < 8) throw IoError(lpath + ": truncated IDX header");
  const std::uint32_t imagic = data_detail::be32(ibytes.data());
  const std::uint32_t lmagic = data_detail::be32(lbytes.data());
  if (imagic != 2051)
    throw IoError(ipath + ": image magic mismatch, want 2051 got " + std::to_string(imagic));
  if (lmagic != 2049)
    throw IoError(lpath + ": label magic mismatch, want 2049 got " + std::to_string(lmagic));
  const std::uint32_t n = data_detail::be32(ibytes.data() + 4);
  const std::uint32_t rows = data_detail::be32(ibytes.data() + 8);
  const std::uint32_t cols = data_detail::be32(ibytes.data() + 12);
  const std::uint32_t ln = data_detail::be32(lbytes.data() + 4);
  if (n != ln)
    throw IoError("MNIST count mismatch: " + std::to_string(n) + " images vs " +
                  std::to_string(ln) + " labels");
  if (ibytes.size() != 16 + static_cast<std::size_t>(n) * rows * cols)
    throw IoError(ipath + ": size inconsistent with header arithmetic");
  if (lbytes.size() != 8 + static_cast<std::size_t>(ln))
    throw IoError(lpath + ": size inconsistent with header arithmetic");

  Dataset ds;
  ds.n = static_cast<int>(n);
  ds.c = 1;
  ds.h = static_cast<int>(rows);
  ds.w = static_cast<int>(cols);
  ds.num_classes = 10;
  ds.pixels.assign(ibytes.begin() + 16, ibytes.end());
  ds.labels.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const int lab = lbytes[8 + i];
    if (lab > 9) throw IoError(lpath + ": label out of range");
    ds.labels.push_back(lab);
  }
  return ds;
}

// --- CIFAR-10 / CIFAR-100 (binary) -------------------------------------------

// CIFAR-10 records are 3073 bytes (label + RGB planes); CIFAR-100 records are
// 3074 (coarse + fine label, the fine one is used).
inline Dataset load_cifar(const DatasetSource& src) {
  const bool c100 = src.kind == DatasetKind::Cifar100Bin;
  const std::size_t record = c100 ? 3074 : 3073;
  const int label_bytes = c100 ? 2 : 1;
  const int num_classes = c100 ? 100 : 10;

  std::vector<std::string> files;
  if (c100) {
    files.push_back(src.root + (src.split == Split::Train ? "/train.bin" : "/test.bin"));
  } else if (src.split == Split::Train) {
    for (int i = 1; i <= 5; ++i)
      files.push_back(src.root + "/data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back(src.root + "/test_batch.bin");
  }

  Dataset ds;
  ds.c = 3;
  ds.h = 32;
  ds.w = 32;
  ds.num_classes = num_classes;
  for (const auto& path : files) {
    auto bytes = data_detail::read_file(path);
    if (bytes.empty() || bytes.size() % record != 0)
      throw IoError(path + ": size " + std::to_string(bytes.size()) +
                    " is not a multiple of the record length " + std::to_string(record));
    const std::size_t count = bytes.size() / record;
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint8_t* rec = bytes.data() + i * record;
      const int lab = rec[label_bytes - 1];  // fine label for CIFAR-100
      if (lab >= num_classes) throw IoError(path + ": label out of range");
      ds.labels.push_back(lab);
      ds.pixels.insert(ds.pixels.end(), rec + label_bytes, rec + record);
    }
    ds.n += static_cast<int>(count);
  }
  return ds;
}

inline Dataset load_dataset(const DatasetSource& src) {
  switch (src.kind) {
    case DatasetKind::MnistIdx: return load_mnist(src);
    case DatasetKind::Cifar10Bin:
    case DatasetKind::Cifar100Bin: return load_cifar(src);
    case DatasetKind::Synthetic: throw ConfigError("synthetic datasets are built, not loaded");
  }
  throw ConfigError("unknown dataset kind");
}

// Writes records in the CIFAR binary layout (round-trip fixture).
inline void write_cifar_file(const std::string& path, const Dataset& ds, bool c100) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  for (int i = 0; i < ds.n; ++i) {
    if (c100) f.put(static_cast<char>(0));  // coarse label, unused
    f.put(static_cast<char>(ds.labels[i]));
    f.write(reinterpret_cast<const char*>(ds.pixels.data() + ds.sample_bytes() * i),
            static_cast<std::streamsize>(ds.sample_bytes()));
  }
}

// --- normalization & augmentation --------------------------------------------

// Per-channel statistics computed once from the training split (on the [0,1]
// scale) and reused verbatim for the test split; provenance records where
// they came from.
struct NormStats {
  std::vector<float> mean, stdev;
  std::string provenance;
};

inline NormStats compute_norm_stats(const Dataset& train) {
  NormStats st;
  st.mean.assign(train.c, 0.f);
  st.stdev.assign(train.c, 0.f);
  const std::size_t plane = static_cast<std::size_t>(train.h) * train.w;
  std::vector<double> sum(train.c, 0), sumsq(train.c, 0);
  for (int i = 0; i < train.n; ++i) {
    const std::uint8_t* px = train.pixels.data() + train.sample_bytes() * i;
    for (int ch = 0; ch < train.c; ++ch) {
      const std::uint8_t* p = px + plane * ch;
      for (std::size_t j = 0; j < plane; ++j) {
        const double v = p[j] / 255.0;
        sum[ch] += v;
        sumsq[ch] += v * v;
      }
    }
  }
  const double m = static_cast<double>(train.n) * plane;
  for (int ch = 0; ch < train.c; ++ch) {
    const double mean = sum[ch] / m;
    const double var = std::max(sumsq[ch] / m - mean * mean, 1e-12);
    st.mean[ch] = static_cast<float>(mean);
    st.stdev[ch] = static_cast<float>(std::sqrt(var));
  }
  st.provenance = "computed-from:train-split";
  return st;
}

struct AugmentConfig {
  int pad = 4;
  bool random_crop = true;
  bool horizontal_flip = true;
  NormStats norm;
};

inline AugmentConfig default_augment(DatasetKind kind, const NormStats& stats) {
  AugmentConfig cfg;
  cfg.norm = stats;
  if (kind == DatasetKind::MnistIdx) {  // normalization only
    cfg.random_crop = false;
    cfg.horizontal_flip = false;
    cfg.pad = 0;
  }
  return cfg;
}

inline void normalize_batch(Batch& b, const NormStats& st) {
  const std::size_t plane = static_cast<std::size_t>(b.images.h) * b.images.w;
  for (int i = 0; i < b.images.n; ++i)
    for (int ch = 0; ch < b.images.c; ++ch) {
      float* p = b.images.data.data() + (static_cast<std::size_t>(i) * b.images.c + ch) * plane;
      const float mu = st.mean[ch], sd = st.stdev[ch];
      for (std::size_t j = 0; j < plane; ++j) p[j] = (p[j] - mu) / sd;
    }
}

template <typename T>
Tensor4<T> flip_horizontal(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch)
      for (int r = 0; r < x.h; ++r)
        for (int col = 0; col < x.w; ++col) y.at(i, ch, r, x.w - 1 - col) = x.at(i, ch, r, col);
  return y;
}

// Training augmentation: zero-pad, random crop back to the native size,
// random horizontal flip with probability 1/2, then per-channel
// normalization. Labels ride along untouched.
template <typename Rng>
void augment_batch(Batch& b, const AugmentConfig& cfg, Rng& rng) {
  const int H = b.images.h, W = b.images.w;
  if (cfg.random_crop || cfg.horizontal_flip) {
    std::uniform_int_distribution<int> off(0, 2 * cfg.pad);
    std::bernoulli_distribution coin(0.5);
    Tensor4<float> out(b.images.n, b.images.c, H, W);
    for (int i = 0; i < b.images.n; ++i) {
      const int oy = cfg.random_crop ? off(rng) : cfg.pad;
      const int ox = cfg.random_crop ? off(rng) : cfg.pad;
      const bool flip = cfg.horizontal_flip && coin(rng);
      for (int ch = 0; ch < b.images.c; ++ch)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const int sy = y + oy - cfg.pad;
            const int sx = x + ox - cfg.pad;
            float v = 0.f;
            if (sy >= 0 && sy < H && sx >= 0 && sx < W) v = b.images.at(i, ch, sy, sx);
            out.at(i, ch, y, flip ? W - 1 - x : x) = v;
          }
    }
    b.images = std::move(out);
  }
  normalize_batch(b, cfg.norm);
}

// Raw [0,1] batch for the given sample indices.
inline Batch make_batch(const Dataset& ds, const std::vector<int>& idx, int from, int count) {
  Batch b{Tensor4<float>(count, ds.c, ds.h, ds.w), {}};
  b.labels.resize(count);
  const std::size_t sbytes = ds.sample_bytes();
  for (int i = 0; i < count; ++i) {
    const int s = idx[from + i];
    b.labels[i] = ds.labels[s];
    const std::uint8_t* px = ds.pixels.data() + sbytes * s;
    float* dst = b.images.data.data() + sbytes * i;
    for (std::size_t j = 0; j < sbytes; ++j) dst[j] = px[j] * (1.f / 255.f);
  }
  return b;
}

// --- synthetic fixtures --------------------------------------------------------

// The Appendix construction: zero except a single 1 at the 1-based (y, x).
template <typename T>
Tensor4<T> one_pixel(int h, int w, int y1 = 2, int x1 = 2) {
  Tensor4<T> r(1, 1, h, w);
  r.at(0, 0, y1 - 1, x1 - 1) = T(1);
  return r;
}

// Deterministic labeled dataset: one random base pattern per class plus
// bounded pixel noise. Learnable by a small network in a few steps.
inline Dataset synthetic_classification(int n, int classes, int c, int h, int w,
                                        std::uint64_t seed) {
  Dataset ds;
  ds.n = n;
  ds.c = c;
  ds.h = h;
  ds.w = w;
  ds.num_classes = classes;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(0, 255);
  std::uniform_int_distribution<int> noise(-20, 20);
  const std::size_t sbytes = ds.sample_bytes();
  std::vector<std::uint8_t> base(static_cast<std::size_t>(classes) * sbytes);
  for (auto& v : base) v = static_cast<std::uint8_t>(px(rng));
  ds.pixels.resize(static_cast<std::size_t>(n) * sbytes);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const int k = i % classes;
    ds.labels[i] = k;
    const std::uint8_t* bp = base.data() + sbytes * k;
    std::uint8_t* dst = ds.pixels.data() + sbytes * i;
    for (std::size_t j = 0; j < sbytes; ++j)
      dst[j] = static_cast<std::uint8_t>(std::clamp(static_cast<int>(bp[j]) + noise(rng), 0, 255));
  }
  return ds;
}

inline Dataset subset_dataset(const Dataset& ds, int count) {
  Dataset out = ds;
  out.n = std::min(count, ds.n);
  out.pixels.assign(ds.pixels.begin(),
                    ds.pixels.begin() + static_cast<std::ptrdiff_t>(out.sample_bytes() * out.n));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + out.n);
  return out;
}

// --- batch iteration -----------------------------------------------------------

// Sequential batch producer with an optional bounded prefetch thread.
// The augmentation RNG is owned by the producer, so the emitted sequence is
// the same with or without prefetching; depth 0 disables the thread.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, int batch_size, bool shuffle, std::uint64_t seed,
                const AugmentConfig* aug, const NormStats* norm_only, int prefetch_depth = 0)
      : ds_(ds), batch_(batch_size), aug_(aug), norm_(norm_only), rng_(seed) {
    idx_.resize(ds.n);
    std::iota(idx_.begin(), idx_.end(), 0);
    if (shuffle) std::shuffle(idx_.begin(), idx_.end(), rng_);
    if (prefetch_depth > 0) {
      depth_ = prefetch_depth;
      worker_ = std::thread([this] { this->produce(); });
    }
  }

  ~BatchIterator() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  std::optional<Batch> next() {
    if (!worker_.joinable()) {
      if (pos_ >= ds_.n) return std::nullopt;
      return produce_one();
    }
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [this] { return !queue_.empty() || done_; });
    if (queue_.empty()) return std::nullopt;
    Batch b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  Batch produce_one() {
    const int count = std::min(batch_, ds_.n - pos_);
    Batch b = make_batch(ds_, idx_, pos_, count);
    pos_ += count;
    if (aug_)
      augment_batch(b, *aug_, rng_);
    else if (norm_)
      normalize_batch(b, *norm_);
    return b;
  }

  void produce() {
    while (true) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || static_cast<int>(queue_.size()) < depth_; });
        if (stop_) return;
      }
      if (pos_ >= ds_.n) break;
      Batch b = produce_one();
      {
        std::lock_guard<std::mutex> lk(mu_);
        queue_.push_back(std::move(b));
      }
      cv_.notify_all();
    }
    {
      std::lock_guard<std::mutex> lk(mu_);
      done_ = true;
    }
    cv_.notify_all();
  }

  const Dataset& ds_;
  int batch_;
  const AugmentConfig* aug_;
  const NormStats* norm_;
  std::mt19937_64 rng_;
  std::vector<int> idx_;
  int pos_ = 0;

  int depth_ = 0;
  std::thread worker_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Batch> queue_;
  bool stop_ = false;
  bool done_ = false;
};

}  // namespace resfeat
