#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

#include "resfeat/data.hpp"
#include "resfeat/random.hpp"

using namespace resfeat;

namespace {

namespace fs = std::filesystem;

void put_be32(std::ofstream& f, std::uint32_t v) {
  f.put(static_cast<char>((v >> 24) & 0xff));
  f.put(static_cast<char>((v >> 16) & 0xff));
  f.put(static_cast<char>((v >> 8) & 0xff));
  f.put(static_cast<char>(v & 0xff));
}

// Minimal IDX writer used as the fixture generator for the parser tests.
void write_idx_images(const fs::path& p, const std::vector<std::uint8_t>& px, int n, int rows,
                      int cols, std::uint32_t magic = 2051) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  put_be32(f, magic);
  put_be32(f, static_cast<std::uint32_t>(n));
  put_be32(f, static_cast<std::uint32_t>(rows));
  put_be32(f, static_cast<std::uint32_t>(cols));
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_idx_labels(const fs::path& p, const std::vector<std::uint8_t>& labels,
                      std::uint32_t magic = 2049) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  put_be32(f, magic);
  put_be32(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()),
          static_cast<std::streamsize>(labels.size()));
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("resfeat-data-" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("MNIST IDX parsing, magics and size arithmetic") {
  TempDir tmp;
  const int n = 7, rows = 28, cols = 28;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(n) * rows * cols);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i % 251);
  std::vector<std::uint8_t> labels = {5, 0, 4, 1, 9, 2, 1};

  write_idx_images(tmp.path / "train-images-idx3-ubyte", px, n, rows, cols);
  write_idx_labels(tmp.path / "train-labels-idx1-ubyte", labels);

  DatasetSource src{DatasetKind::MnistIdx, tmp.path.string(), Split::Train};
  Dataset ds = load_mnist(src);
  REQUIRE(ds.n == n);
  REQUIRE(ds.c == 1);
  REQUIRE(ds.h == 28);
  REQUIRE(ds.w == 28);
  REQUIRE(ds.labels[0] == 5);
  REQUIRE(ds.pixels == px);

  // Pixels scale into [0,1] at batch assembly.
  std::vector<int> idx{0, 1};
  Batch b = make_batch(ds, idx, 0, 2);
  REQUIRE(b.images.at(0, 0, 0, 1) == Catch::Approx(px[1] / 255.0f));

  SECTION("image magic mismatch is rejected") {
    write_idx_images(tmp.path / "train-images-idx3-ubyte", px, n, rows, cols, 2052);
    REQUIRE_THROWS_WITH(load_mnist(src), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("label magic mismatch is rejected") {
    write_idx_labels(tmp.path / "train-labels-idx1-ubyte", labels, 123);
    REQUIRE_THROWS_WITH(load_mnist(src), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("truncated image payload is rejected before parsing") {
    std::vector<std::uint8_t> short_px(px.begin(), px.end() - 10);
    write_idx_images(tmp.path / "train-images-idx3-ubyte", short_px, n, rows, cols);
    REQUIRE_THROWS_WITH(load_mnist(src), Catch::Matchers::ContainsSubstring("size"));
  }
  SECTION("image/label count mismatch is rejected") {
    write_idx_labels(tmp.path / "train-labels-idx1-ubyte", {1, 2, 3});
    REQUIRE_THROWS_WITH(load_mnist(src), Catch::Matchers::ContainsSubstring("count"));
  }
  SECTION("missing file") {
    DatasetSource test_src{DatasetKind::MnistIdx, tmp.path.string(), Split::Test};
    REQUIRE_THROWS_AS(load_mnist(test_src), IoError);
  }
}

TEST_CASE("CIFAR binary record arithmetic and round trip") {
  TempDir tmp;
  Dataset ds = synthetic_classification(20, 10, 3, 32, 32, 5);

  SECTION("CIFAR-10 round trip is bit-identical") {
    // Write 5 train batches of 4 records each plus a test batch.
    for (int b = 1; b <= 5; ++b) {
      Dataset part = ds;
      part.n = 4;
      part.pixels.assign(ds.pixels.begin() + (b - 1) * 4 * 3072,
                         ds.pixels.begin() + b * 4 * 3072);
      part.labels.assign(ds.labels.begin() + (b - 1) * 4, ds.labels.begin() + b * 4);
      write_cifar_file((tmp.path / ("data_batch_" + std::to_string(b) + ".bin")).string(), part,
                       false);
    }
    REQUIRE(fs::file_size(tmp.path / "data_batch_1.bin") == 4u * 3073u);

    Dataset back = load_cifar({DatasetKind::Cifar10Bin, tmp.path.string(), Split::Train});
    REQUIRE(back.n == 20);
    REQUIRE(back.pixels == ds.pixels);
    REQUIRE(back.labels == ds.labels);
  }

  SECTION("CIFAR-100 record length is 3074 and the fine label is used") {
    Dataset d100 = synthetic_classification(6, 100, 3, 32, 32, 6);
    write_cifar_file((tmp.path / "train.bin").string(), d100, true);
    REQUIRE(fs::file_size(tmp.path / "train.bin") == 6u * 3074u);
    Dataset back = load_cifar({DatasetKind::Cifar100Bin, tmp.path.string(), Split::Train});
    REQUIRE(back.labels == d100.labels);
    REQUIRE(back.pixels == d100.pixels);
  }

  SECTION("a size that is not a multiple of the record length is rejected") {
    std::ofstream f(tmp.path / "test_batch.bin", std::ios::binary);
    std::vector<char> junk(3073 * 2 + 17, 1);
    f.write(junk.data(), static_cast<std::streamsize>(junk.size()));
    f.close();
    REQUIRE_THROWS_WITH(load_cifar({DatasetKind::Cifar10Bin, tmp.path.string(), Split::Test}),
                        Catch::Matchers::ContainsSubstring("record length"));
  }

  SECTION("out-of-range labels are rejected") {
    Dataset bad = synthetic_classification(2, 10, 3, 32, 32, 7);
    bad.labels[1] = 99;
    write_cifar_file((tmp.path / "test_batch.bin").string(), bad, false);
    REQUIRE_THROWS_WITH(load_cifar({DatasetKind::Cifar10Bin, tmp.path.string(), Split::Test}),
                        Catch::Matchers::ContainsSubstring("label"));
  }
}

TEST_CASE("horizontal flip is an involution") {
  std::mt19937_64 rng(8);
  auto x = random_tensor<float>(2, 3, 5, 7, rng);
  REQUIRE(max_abs_diff(flip_horizontal(flip_horizontal(x)), x) == 0.0f);
}

TEST_CASE("centered crop offset is the identity") {
  std::mt19937_64 rng(9);
  Dataset ds = synthetic_classification(4, 2, 3, 8, 8, 10);
  std::vector<int> idx{0, 1, 2, 3};
  Batch b = make_batch(ds, idx, 0, 4);
  Batch original = b;

  AugmentConfig cfg;
  cfg.pad = 4;
  cfg.random_crop = false;     // forces the centered (pad,pad) offset
  cfg.horizontal_flip = false;
  cfg.norm.mean = {0, 0, 0};
  cfg.norm.stdev = {1, 1, 1};
  augment_batch(b, cfg, rng);
  REQUIRE(max_abs_diff(b.images, original.images) == 0.0f);
}

TEST_CASE("normalization makes the training channels zero-mean, unit-std") {
  Dataset ds = synthetic_classification(64, 4, 3, 8, 8, 11);
  NormStats st = compute_norm_stats(ds);
  REQUIRE(st.provenance == "computed-from:train-split");

  std::vector<int> idx(ds.n);
  std::iota(idx.begin(), idx.end(), 0);
  Batch b = make_batch(ds, idx, 0, ds.n);
  normalize_batch(b, st);
  const std::size_t plane = 64;
  for (int ch = 0; ch < 3; ++ch) {
    double mean = 0, var = 0;
    for (int i = 0; i < ds.n; ++i)
      for (std::size_t j = 0; j < plane; ++j) mean += b.images.data[(i * 3 + ch) * plane + j];
    mean /= ds.n * plane;
    for (int i = 0; i < ds.n; ++i)
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = b.images.data[(i * 3 + ch) * plane + j] - mean;
        var += d * d;
      }
    var /= ds.n * plane;
    REQUIRE(std::abs(mean) < 1e-4);
    REQUIRE(var == Catch::Approx(1.0).margin(1e-3));
  }
}

TEST_CASE("augmentation preserves label alignment") {
  // Tag each image with a constant intensity equal to its label; the mean
  // intensity survives flips, so any misalignment would be visible.
  Dataset ds;
  ds.n = 12;
  ds.c = 1;
  ds.h = 6;
  ds.w = 6;
  ds.num_classes = 12;
  for (int i = 0; i < ds.n; ++i) {
    ds.labels.push_back(i);
    ds.pixels.insert(ds.pixels.end(), 36, static_cast<std::uint8_t>(i * 20));
  }
  AugmentConfig cfg;
  cfg.pad = 0;
  cfg.random_crop = false;
  cfg.horizontal_flip = true;
  cfg.norm.mean = {0};
  cfg.norm.stdev = {1};

  std::mt19937_64 rng(123);
  BatchIterator it(ds, 4, /*shuffle=*/true, 55, &cfg, nullptr);
  int seen = 0;
  while (auto b = it.next()) {
    for (int i = 0; i < b->images.n; ++i) {
      const float v = b->images.at(i, 0, 0, 0) * 255.f;
      REQUIRE(static_cast<int>(std::lround(v / 20.f)) == b->labels[i]);
      ++seen;
    }
  }
  REQUIRE(seen == 12);
}

TEST_CASE("synthetic fixtures are deterministic") {
  auto a = synthetic_classification(32, 4, 3, 8, 8, 77);
  auto b = synthetic_classification(32, 4, 3, 8, 8, 77);
  REQUIRE(a.pixels == b.pixels);
  REQUIRE(a.labels == b.labels);

  auto px = one_pixel<double>(4, 4);
  REQUIRE(px.at(0, 0, 1, 1) == 1.0);
  REQUIRE(l2_norm(px) == 1.0);
}

TEST_CASE("prefetching iterator yields the same batches as the synchronous one") {
  Dataset ds = synthetic_classification(50, 5, 3, 8, 8, 13);
  NormStats st = compute_norm_stats(ds);
  AugmentConfig cfg = default_augment(DatasetKind::Cifar10Bin, st);

  auto collect = [&](int depth) {
    BatchIterator it(ds, 16, true, 99, &cfg, nullptr, depth);
    std::vector<Batch> out;
    while (auto b = it.next()) out.push_back(std::move(*b));
    return out;
  };
  auto sync = collect(0);
  auto pre = collect(2);
  REQUIRE(sync.size() == pre.size());
  for (std::size_t i = 0; i < sync.size(); ++i) {
    REQUIRE(sync[i].labels == pre[i].labels);
    REQUIRE(sync[i].images.data == pre[i].images.data);
  }
}

TEST_CASE("subset_dataset keeps the leading samples") {
  Dataset ds = synthetic_classification(20, 4, 1, 4, 4, 14);
  Dataset sub = subset_dataset(ds, 8);
  REQUIRE(sub.n == 8);
  REQUIRE(std::equal(sub.pixels.begin(), sub.pixels.end(), ds.pixels.begin()));
  REQUIRE(std::equal(sub.labels.begin(), sub.labels.end(), ds.labels.begin()));
}
