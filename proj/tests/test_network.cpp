#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "resfeat/checkpoint.hpp"
#include "resfeat/config.hpp"
#include "resfeat/network.hpp"
#include "resfeat/random.hpp"
#include "resfeat/train.hpp"

using namespace resfeat;

TEST_CASE("single-level smoke spec forwards to class scores") {
  NetworkSpec s;
  s.family = Family::PreAct;
  s.levels = 1;
  s.nu = {1};
  s.channels = {4};
  s.num_classes = 10;
  auto m = build<float>(s);
  init_model(m, 1);
  Tensor4<float> x(1, 3, 8, 8, 0.3f);
  auto y = forward(m, x);
  REQUIRE(y.n == 1);
  REQUIRE(y.c == 10);
  REQUIRE(y.h == 1);
  REQUIRE(y.w == 1);
}

TEST_CASE("parameter counts match the closed-form arithmetic") {
  // Unshared CIFAR-10 ResNet18: stem + 4 levels (first block of levels 2..4
  // being the pooling transition) + head, BN affine params included.
  const std::size_t conv = 3 * 64 * 9                                       // stem
                           + 2 * (2 * 64 * 64 * 9)                          // level 1 blocks
                           + (64 * 128 + 64 * 128 * 9 + 128 * 128 * 9)      // pool into level 2
                           + 128 * 128 * 9 * 2                              // level 2 block
                           + (128 * 256 + 128 * 256 * 9 + 256 * 256 * 9)    // pool into level 3
                           + 256 * 256 * 9 * 2                              // level 3 block
                           + (256 * 512 + 256 * 512 * 9 + 512 * 512 * 9)    // pool into level 4
                           + 512 * 512 * 9 * 2;                             // level 4 block
  const std::size_t bn = 2 * (64                                            // stem bn
                              + 4 * 64                                      // level 1
                              + 3 * 128 + 2 * 128                           // level 2 (pool has 3)
                              + 3 * 256 + 2 * 256 + 3 * 512 + 2 * 512);
  const std::size_t head = 512 * 10 + 10;
  const auto summary = count_params(build<float>(preset_spec("resnet18-Ali-Bli-cifar10")));
  REQUIRE(summary.conv_weights == conv);
  REQUIRE(summary.bn_weights == bn);
  REQUIRE(summary.head_weights == head);
  REQUIRE(summary.total == 11173962u);

  // A-sharing removes exactly one level-width A kernel per level.
  const auto shared = count_params(build<float>(preset_spec("resnet18-Al-Bli-cifar10")));
  const std::size_t a_saving = 9 * (64ull * 64 + 128ull * 128 + 256ull * 256 + 512ull * 512);
  REQUIRE(shared.conv_weights == conv - a_saving);
}

TEST_CASE("table rows that the sharing arithmetic reproduces") {
  auto count = [](const char* preset) {
    return count_params(build<float>(preset_spec(preset))).total;
  };
  REQUIRE(matches_printed(count("resnet18-Ali-Bli-cifar10"), "11M"));
  REQUIRE(matches_printed(count("resnet18-Al-Bli-cifar100"), "8.1M"));
  REQUIRE(matches_printed(count("resnet18-Ali-Bli-mnist"), "11M"));
  REQUIRE(matches_printed(count("resnet18-Al-Bli-mnist"), "8.0M"));
  REQUIRE(matches_printed(count("resnet18-Ali-Bli-imagenet"), "11.7M"));
  REQUIRE(matches_printed(count("resnet18-Al-Bli-imagenet"), "8.6M"));
  REQUIRE(matches_printed(count("resnet34-Ali-Bli-cifar100"), "21M"));
  REQUIRE(matches_printed(count("resnet34-Al-Bli-cifar100"), "13M"));
  REQUIRE(matches_printed(count("preact-resnet18-Ali-Bli-cifar100"), "11M"));
  REQUIRE(matches_printed(count("preact-resnet18-Al-Bli-cifar100"), "8.1M"));
}

TEST_CASE("count_params invariant: PerLevel < PerLayer by the exact kernel sum") {
  for (const char* depth : {"resnet18", "resnet34"}) {
    const auto full =
        count_params(build<float>(preset_spec(std::string(depth) + "-Ali-Bli-cifar10")));
    const auto shared =
        count_params(build<float>(preset_spec(std::string(depth) + "-Al-Bli-cifar10")));
    NetworkSpec s = preset_spec(std::string(depth) + "-Ali-Bli-cifar10");
    std::size_t expected = 0;
    for (int l = 1; l <= s.levels; ++l) {
      const std::size_t ksize = 9ull * s.channels[l - 1] * s.channels[l - 1];
      expected += static_cast<std::size_t>(s.nu[l - 1] - 1) * ksize;
    }
    // BN inventories differ slightly between the pooling styles; compare the
    // conv part, which the invariant is about.
    REQUIRE(full.conv_weights - shared.conv_weights == expected);
    REQUIRE(shared.total < full.total);
  }
}

TEST_CASE("zero input through a bias-free BN-off preact model yields the head bias") {
  NetworkSpec s = preset_spec("preact-resnet18-Ali-Bli-cifar10-desk");
  s.bn = false;
  auto m = build<float>(s);
  init_model(m, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> bd(-2.f, 2.f);
  for (auto& b : m.head->bias) b = bd(rng);
  Tensor4<float> zero(2, 3, 16, 16);
  auto y = forward(m, zero);
  for (int i = 0; i < y.n; ++i)
    for (int k = 0; k < y.c; ++k)
      REQUIRE(y.data[static_cast<std::size_t>(i) * y.c + k] == m.head->bias[k]);
}

TEST_CASE("eval-mode forward is bit-identical across calls") {
  auto m = build<float>(preset_spec("resnet18-Ali-Bli-cifar10-desk"));
  init_model(m, 7);
  m.set_train(false);
  std::mt19937_64 rng(8);
  auto x = random_tensor<float>(2, 3, 16, 16, rng);
  auto y1 = forward(m, x);
  auto y2 = forward(m, x);
  REQUIRE(y1.data == y2.data);
}

TEST_CASE("FB model with all-zero B kernels keeps u at zero") {
  NetworkSpec s = preset_spec("fb-resnet18-cifar10-desk");
  s.bn = false;
  auto m = build<float>(s);
  init_model(m, 5);
  for (auto& lv : m.fb_levels)
    for (auto& step : lv.steps)
      std::fill(step.B.kernel->values.begin(), step.B.kernel->values.end(), 0.f);
  // u^{1,0} = 0 and every correction is B(...) = 0, so the head sees GAP(0).
  std::mt19937_64 rng(6);
  auto x = random_tensor<float>(2, 3, 16, 16, rng);
  auto y = forward(m, x);
  for (int i = 0; i < y.n; ++i)
    for (int k = 0; k < y.c; ++k)
      REQUIRE(y.data[static_cast<std::size_t>(i) * y.c + k] == m.head->bias[k]);
}

TEST_CASE("scheme sweep: 16 specs in table order, all build") {
  auto specs = scheme_sweep_specs({8, 16, 32, 64});
  REQUIRE(specs.size() == 16);
  // Fourth row of the first A-group is the linear-A + sandwich-B winner.
  REQUIRE(specs[3].a_form == SchemeForm::ConvOnly);
  REQUIRE(specs[3].b_form == SchemeForm::Sandwich);
  for (const auto& s : specs) {
    REQUIRE(validate(s).empty());
    auto m = build<float>(s);
    init_model(m, 11);
    Tensor4<float> x(1, 3, 16, 16, 0.1f);
    auto y = forward(m, x);
    REQUIRE(y.c == s.num_classes);
  }
}

TEST_CASE("model equivalence: unshared preact with equal-by-level A equals the shared model") {
  NetworkSpec shared_spec = preset_spec("preact-resnet18-Al-Bli-cifar10-desk");
  shared_spec.bn = false;
  NetworkSpec layered_spec = preset_spec("preact-resnet18-Ali-Bli-cifar10-desk");
  layered_spec.bn = false;
  // Same pooling structure so the graphs are congruent.
  layered_spec.pooling = PoolingVariant::PreActPool;

  auto shared = build<float>(shared_spec);
  auto layered = build<float>(layered_spec);
  init_model(shared, 21);

  std::map<std::string, const KernelParam<float>*> by_name;
  for (const auto& k : shared.store.kernels()) by_name[k->name] = k.get();
  for (auto& k : layered.store.kernels()) {
    std::string src = k->name;
    // level{l}.block{i}.A and level{l}.pool.A0 both alias level{l}.A.
    if (auto pos = src.find(".block"); pos != std::string::npos && src.ends_with(".A"))
      src = src.substr(0, pos) + ".A";
    if (auto pos = src.find(".pool.A0"); pos != std::string::npos)
      src = src.substr(0, pos) + ".A";
    REQUIRE(by_name.count(src));
    k->values = by_name[src]->values;
  }
  for (const auto& d : shared.store.denses()) layered.store.denses()[0]->weights = d->weights;
  layered.store.denses()[0]->bias = shared.store.denses()[0]->bias;

  std::mt19937_64 rng(22);
  auto x = random_tensor<float>(2, 3, 16, 16, rng);
  auto y1 = forward(shared, x);
  auto y2 = forward(layered, x);
  REQUIRE(max_abs_diff(y1, y2) == 0.0f);
}

TEST_CASE("invalid specs are rejected with the violated rule") {
  NetworkSpec s = preset_spec("fb-resnet18-cifar10");
  s.pooling = PoolingVariant::PreActPool;
  REQUIRE_THROWS_WITH(build<float>(s), Catch::Matchers::ContainsSubstring("FBPool"));

  s = preset_spec("resnet18-Ali-Bli-cifar10");
  s.pooling = PoolingVariant::AppendixPool;
  REQUIRE_THROWS_WITH(build<float>(s), Catch::Matchers::ContainsSubstring("PerLevel"));

  s = preset_spec("resnet18-Ali-Bli-cifar10");
  s.nu = {2, 2};
  REQUIRE_THROWS_WITH(build<float>(s), Catch::Matchers::ContainsSubstring("len(nu)"));

  s = preset_spec("fb-resnet18-cifar10");
  s.sharing.b = Sharing::PerLevel;
  REQUIRE_THROWS_WITH(build<float>(s), Catch::Matchers::ContainsSubstring("PerLayer"));

  REQUIRE_THROWS_AS(preset_spec("resnet19-Al-Bli-cifar10"), ConfigError);
}

TEST_CASE("checkpoint round trip preserves weights and serializes shared kernels once") {
  NetworkSpec s = preset_spec("preact-resnet18-Al-Bl-cifar10-desk");
  auto m = build<float>(s);
  init_model(m, 31);
  const auto path = std::filesystem::temp_directory_path() / "resfeat-ckpt-test.rft1";
  save_checkpoint(m, path.string());

  auto m2 = build<float>(s);
  load_checkpoint(m2, path.string());
  std::mt19937_64 rng(32);
  auto x = random_tensor<float>(2, 3, 16, 16, rng);
  m.set_train(false);
  m2.set_train(false);
  REQUIRE(forward(m, x).data == forward(m2, x).data);

  // Entry census: kernels (no biases) + 4 per BN + head W and b, each once.
  std::ifstream f(path, std::ios::binary);
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  auto entries = parse_checkpoint(blob);
  const std::size_t expected =
      m.store.kernels().size() + 4 * m.store.bns().size() + 2 * m.store.denses().size();
  REQUIRE(entries.size() == expected);
  for (const auto& k : m.store.kernels()) REQUIRE(entries.count(k->name) == 1);

  // Corrupted magic is refused.
  blob[0] = 'X';
  REQUIRE_THROWS_AS(parse_checkpoint(blob), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("spec config round trip") {
  NetworkSpec s = preset_spec("fb-resnet18-cifar100-desk");
  s.a_form = SchemeForm::ActAfterConv;
  s.b_form = SchemeForm::ConvAfterAct;
  std::stringstream ss(spec_to_kv(s));
  NetworkSpec r = spec_from_kv(parse_kv(ss));
  REQUIRE(r.family == s.family);
  REQUIRE(r.nu == s.nu);
  REQUIRE(r.channels == s.channels);
  REQUIRE(r.a_form == s.a_form);
  REQUIRE(r.b_form == s.b_form);
  REQUIRE(r.num_classes == 100);
  REQUIRE(r.pooling == PoolingVariant::FBPool);
}

TEST_CASE("LargeImage stem counts and runs") {
  auto m = build<float>(preset_spec("resnet18-Ali-Bli-imagenet"));
  REQUIRE(count_params(m).total == 11689512u);  // reference implementation count
  init_model(m, 41);
  Tensor4<float> x(1, 3, 64, 64, 0.2f);
  auto y = forward(m, x);
  REQUIRE(y.c == 1000);
}
