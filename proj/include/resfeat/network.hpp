#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "resfeat/blocks.hpp"
#include "resfeat/error.hpp"
#include "resfeat/exec.hpp"
#include "resfeat/params.hpp"
#include "resfeat/scheme.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

enum class Family { PreAct, Classic, FeatureBased };

enum class StemKind {
  Cifar,       // sigma(theta0 * f), 3x3 stride 1, 3 input channels
  SmallImage,  // same, 1 input channel (MNIST)
  LargeImage,  // sigma(theta0 * f) then 3x3/2 max pool, 7x7 stride-2 stem
};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::PreAct: return "preact";
    case Family::Classic: return "classic";
    case Family::FeatureBased: return "fb";
  }
  return "?";
}

// Full architecture description. nu follows the reference-code convention:
// nu[l] blocks per level, the first block of levels 2..J being the
// pooling/restriction transition into that level.
struct NetworkSpec {
  Family family = Family::PreAct;
  int levels = 4;
  std::vector<int> nu{2, 2, 2, 2};
  std::vector<int> channels{64, 128, 256, 512};
  SharingPolicy sharing;
  PoolingVariant pooling = PoolingVariant::PreActPool;
  SchemeForm a_form = SchemeForm::ConvOnly;  // FeatureBased only
  SchemeForm b_form = SchemeForm::Sandwich;  // FeatureBased only
  StemKind stem = StemKind::Cifar;
  int num_classes = 10;
  bool bn = true;
  std::string name = "custom";

  int input_channels() const { return stem == StemKind::SmallImage ? 1 : 3; }
  // In-level iteration count (pooling transitions consume one nu slot).
  int level_blocks(int level1based) const {
    return level1based == 1 ? nu[0] : nu[level1based - 1] - 1;
  }
};

inline BlockVariant spec_block_variant(const NetworkSpec& s) {
  if (s.family == Family::FeatureBased) return BlockVariant::FeatureBased;
  const bool shared_a = s.sharing.a == Sharing::PerLevel;
  if (s.family == Family::PreAct)
    return shared_a ? BlockVariant::ModifiedPreAct : BlockVariant::PreAct;
  return shared_a ? BlockVariant::ModifiedClassic : BlockVariant::Classic;
}

inline std::vector<std::string> validate(const NetworkSpec& s) {
  std::vector<std::string> bad;
  if (s.levels < 1) bad.push_back("levels (J) must be >= 1");
  if (static_cast<int>(s.nu.size()) != s.levels) bad.push_back("len(nu) must equal J");
  if (static_cast<int>(s.channels.size()) != s.levels) bad.push_back("len(channels) must equal J");
  for (std::size_t i = 0; i < s.nu.size(); ++i)
    if (s.nu[i] < 1) bad.push_back("nu[" + std::to_string(i) + "] must be >= 1");
  for (std::size_t i = 0; i < s.channels.size(); ++i)
    if (s.channels[i] < 1) bad.push_back("channels[" + std::to_string(i) + "] must be >= 1");
  if (s.num_classes < 2) bad.push_back("num_classes must be >= 2");
  if (s.family == Family::FeatureBased) {
    if (s.pooling != PoolingVariant::FBPool)
      bad.push_back("FeatureBased family requires FBPool pooling");
    if (s.sharing.b != Sharing::PerLayer)
      bad.push_back("FeatureBased family indexes B^{l,i} by layer; b_sharing must be PerLayer");
    if (s.sharing.a != Sharing::PerLevel)
      bad.push_back("FeatureBased family has one data-feature mapping per level; a_sharing must be PerLevel");
  } else {
    if (s.pooling == PoolingVariant::FBPool)
      bad.push_back("FBPool carries a (u, f) pair and fits only the FeatureBased family");
    if (s.pooling == PoolingVariant::AppendixPool && s.sharing.a != Sharing::PerLevel)
      bad.push_back("AppendixPool ties the pooling kernel to the level-wide A, which exists only "
                    "under PerLevel A-sharing");
  }
  return bad;
}

// --- built model ------------------------------------------------------------

template <typename T>
class Model {
 public:
  struct ResBlock {
    KernelParam<T>* A = nullptr;
    KernelParam<T>* B = nullptr;
    BatchNormState<T>* bn1 = nullptr;
    BatchNormState<T>* bn2 = nullptr;
  };
  struct ResPool {
    KernelParam<T>* R = nullptr;
    KernelParam<T>* B0 = nullptr;
    KernelParam<T>* Aprime = nullptr;
    BatchNormState<T>* bn1 = nullptr;
    BatchNormState<T>* bn2 = nullptr;
    BatchNormState<T>* bnR = nullptr;
  };
  struct ResLevel {
    KernelParam<T>* sharedA = nullptr;  // set under PerLevel A-sharing
    std::optional<ResPool> pool;        // transition entering this level
    std::vector<ResBlock> blocks;
  };

  struct FbStep {
    SchemeOp<T> A;  // the level mapping with this use site's BN slots
    SchemeOp<T> B;
  };
  struct FbPoolT {
    KernelParam<T>* Pi = nullptr;
    KernelParam<T>* R = nullptr;
    SchemeOp<T> A_src;
    SchemeOp<T> A_dst;
  };
  struct FbLevel {
    KernelParam<T>* A = nullptr;
    std::optional<FbPoolT> pool;
    std::vector<FbStep> steps;
  };

  NetworkSpec spec;
  ParamStore<T> store;
  KernelParam<T>* stem_kernel = nullptr;
  BatchNormState<T>* stem_bn = nullptr;
  std::vector<ResLevel> res_levels;
  std::vector<FbLevel> fb_levels;
  DenseParam<T>* head = nullptr;

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  void set_train(bool train) { store.set_train_mode(train); }

  // Which A/B kernels layer i of level l references under the sharing policy
  // (both 1-based, in-level blocks only).
  std::pair<const KernelParam<T>*, const KernelParam<T>*> block_kernels(int level, int layer) const {
    if (spec.family == Family::FeatureBased) {
      if (level < 1 || level > static_cast<int>(fb_levels.size()))
        throw ConfigError("block_kernels: level out of range");
      const auto& lv = fb_levels[level - 1];
      if (layer < 1 || layer > static_cast<int>(lv.steps.size()))
        throw ConfigError("block_kernels: layer out of range");
      return {lv.A, lv.steps[layer - 1].B.kernel};
    }
    if (level < 1 || level > static_cast<int>(res_levels.size()))
      throw ConfigError("block_kernels: level out of range");
    const auto& lv = res_levels[level - 1];
    if (layer < 1 || layer > static_cast<int>(lv.blocks.size()))
      throw ConfigError("block_kernels: layer out of range");
    return {lv.blocks[layer - 1].A, lv.blocks[layer - 1].B};
  }
};

namespace detail {

template <typename T>
SchemeBn<T> make_scheme_bns(ParamStore<T>& store, SchemeForm form, const std::string& prefix,
                            int c_in, int c_out, bool bn) {
  SchemeBn<T> slots;
  if (!bn) return slots;
  const bool inner = form == SchemeForm::ConvAfterAct || form == SchemeForm::Sandwich;
  const bool outer = form == SchemeForm::ActAfterConv || form == SchemeForm::Sandwich;
  if (inner) slots.pre = &store.add_bn(prefix + ".bn_pre", c_in);
  if (outer) slots.post = &store.add_bn(prefix + ".bn_post", c_out);
  return slots;
}

}  // namespace detail

template <typename T>
Model<T> build(const NetworkSpec& spec) {
  {
    auto bad = validate(spec);
    if (!bad.empty()) {
      std::string msg = "invalid NetworkSpec '" + spec.name + "':";
      for (const auto& b : bad) msg += "\n  - " + b;
      throw ConfigError(msg);
    }
  }
  Model<T> m;
  m.spec = spec;
  auto& st = m.store;

  const int stem_k = spec.stem == StemKind::LargeImage ? 7 : 3;
  const int stem_stride = spec.stem == StemKind::LargeImage ? 2 : 1;
  m.stem_kernel = &st.add_kernel("stem.conv", spec.channels[0], spec.input_channels(), stem_k,
                                 stem_stride);
  if (spec.bn) m.stem_bn = &st.add_bn("stem.bn", spec.channels[0]);

  const bool preact_style = spec.family != Family::Classic;

  if (spec.family == Family::FeatureBased) {
    m.fb_levels.resize(spec.levels);
    for (int l = 1; l <= spec.levels; ++l) {
      auto& lv = m.fb_levels[l - 1];
      const int c = spec.channels[l - 1];
      const std::string lp = "level" + std::to_string(l);
      lv.A = &st.add_kernel(lp + ".A", c, c, 3, 1);
    }
    for (int l = 1; l <= spec.levels; ++l) {
      auto& lv = m.fb_levels[l - 1];
      const int c = spec.channels[l - 1];
      const std::string lp = "level" + std::to_string(l);
      if (l > 1) {
        const int cp = spec.channels[l - 2];
        typename Model<T>::FbPoolT pool;
        pool.Pi = &st.add_kernel(lp + ".pool.Pi", c, cp, 3, 2);
        pool.R = &st.add_kernel(lp + ".pool.R", c, cp, 3, 2);
        pool.A_src = {spec.a_form, m.fb_levels[l - 2].A,
                      detail::make_scheme_bns(st, spec.a_form, lp + ".pool.Asrc", cp, cp, spec.bn)};
        pool.A_dst = {spec.a_form, lv.A,
                      detail::make_scheme_bns(st, spec.a_form, lp + ".pool.Adst", c, c, spec.bn)};
        lv.pool = pool;
      }
      const int steps = spec.level_blocks(l);
      for (int i = 1; i <= steps; ++i) {
        const std::string bp = lp + ".block" + std::to_string(i);
        typename Model<T>::FbStep step;
        step.B.form = spec.b_form;
        step.B.kernel = &st.add_kernel(bp + ".B", c, c, 3, 1);
        step.B.bn = detail::make_scheme_bns(st, spec.b_form, bp + ".B", c, c, spec.bn);
        step.A.form = spec.a_form;
        step.A.kernel = lv.A;
        step.A.bn = detail::make_scheme_bns(st, spec.a_form, bp + ".A", c, c, spec.bn);
        lv.steps.push_back(step);
      }
    }
  } else {
    m.res_levels.resize(spec.levels);
    for (int l = 1; l <= spec.levels; ++l) {
      auto& lv = m.res_levels[l - 1];
      const int c = spec.channels[l - 1];
      const std::string lp = "level" + std::to_string(l);
      if (spec.sharing.a == Sharing::PerLevel) lv.sharedA = &st.add_kernel(lp + ".A", c, c, 3, 1);

      if (l > 1) {
        const int cp = spec.channels[l - 2];
        typename Model<T>::ResPool pool;
        pool.R = &st.add_kernel(lp + ".pool.R", c, cp, 1, 2);
        pool.B0 = &st.add_kernel(lp + ".pool.B0", c, cp, 3, 2);
        if (spec.pooling == PoolingVariant::AppendixPool)
          pool.Aprime = lv.sharedA;  // tilde-A^{l+1} = A^{l+1}
        else
          pool.Aprime = &st.add_kernel(lp + ".pool.A0", c, c, 3, 1);
        if (spec.bn) {
          if (spec.pooling == PoolingVariant::ClassicPool) {
            pool.bn1 = &st.add_bn(lp + ".pool.bn1", c);
            pool.bn2 = &st.add_bn(lp + ".pool.bn2", c);
            pool.bnR = &st.add_bn(lp + ".pool.bnR", c);
          } else {
            pool.bn1 = &st.add_bn(lp + ".pool.bn1", cp);
            pool.bn2 = &st.add_bn(lp + ".pool.bn2", c);
          }
        }
        lv.pool = pool;
      }

      KernelParam<T>* sharedB = nullptr;
      if (spec.sharing.b == Sharing::PerLevel && spec.level_blocks(l) > 0)
        sharedB = &st.add_kernel(lp + ".B", c, c, 3, 1);
      for (int i = 1; i <= spec.level_blocks(l); ++i) {
        const std::string bp = lp + ".block" + std::to_string(i);
        typename Model<T>::ResBlock blk;
        blk.A = lv.sharedA ? lv.sharedA : &st.add_kernel(bp + ".A", c, c, 3, 1);
        blk.B = sharedB ? sharedB : &st.add_kernel(bp + ".B", c, c, 3, 1);
        if (spec.bn) {
          blk.bn1 = &st.add_bn(bp + ".bn1", c);
          blk.bn2 = &st.add_bn(bp + ".bn2", c);
        }
        lv.blocks.push_back(blk);
      }
      (void)preact_style;
    }
  }

  m.head = &st.add_dense("head", spec.num_classes, spec.channels.back());
  return m;
}

// Forward pass shared by the numeric and tape execution contexts.
template <class Ex, typename T>
typename Ex::Value model_forward(Model<T>& m, Ex& ex, const typename Ex::Value& input) {
  using V = typename Ex::Value;
  const auto& spec = m.spec;

  V x = ex.conv(*m.stem_kernel, input);
  x = ex.bn(m.stem_bn, x);
  x = ex.relu(x);
  if (spec.stem == StemKind::LargeImage) x = ex.max_pool(x);

  if (spec.family == Family::FeatureBased) {
    const auto& in_t = Ex::tensor_of(x);
    V u = ex.zeros(in_t.n, in_t.c, in_t.h, in_t.w);
    V f = x;
    for (auto& lv : m.fb_levels) {
      if (lv.pool) {
        auto uf = fb_pool(ex, u, f, *lv.pool->Pi, *lv.pool->R, lv.pool->A_src, lv.pool->A_dst);
        u = uf.first;
        f = uf.second;
      }
      for (auto& step : lv.steps) u = feature_step(ex, u, f, step.A, step.B);
    }
    return ex.linear(*m.head, ex.global_avg_pool(u));
  }

  const bool classic = spec.family == Family::Classic;
  for (auto& lv : m.res_levels) {
    if (lv.pool) {
      auto& p = *lv.pool;
      x = classic ? classic_pool(ex, x, *p.R, *p.B0, *p.Aprime, p.bn1, p.bn2, p.bnR)
                  : preact_pool(ex, x, *p.R, *p.B0, *p.Aprime, p.bn1, p.bn2);
    }
    for (auto& blk : lv.blocks)
      x = classic ? classic_block(ex, x, *blk.A, *blk.B, blk.bn1, blk.bn2)
                  : preact_block(ex, x, *blk.A, *blk.B, blk.bn1, blk.bn2);
  }
  return ex.linear(*m.head, ex.global_avg_pool(x));
}

// Deterministic-in-eval numeric forward; in train mode the only mutation is
// the BN running statistics.
template <typename T>
Tensor4<T> forward(Model<T>& m, const Tensor4<T>& batch) {
  NumericExec<T> ex;
  return model_forward(m, ex, batch);
}

// --- parameter counting -----------------------------------------------------

struct KernelInfo {
  std::string name;
  std::string shape;
  std::size_t weights = 0;
  int use_sites = 0;
};

struct ModelSummary {
  std::size_t total = 0;
  std::size_t conv_weights = 0;
  std::size_t bn_weights = 0;
  std::size_t head_weights = 0;
  std::vector<std::pair<std::string, std::size_t>> sections;
  std::vector<KernelInfo> kernels;
};

namespace detail {

inline std::string section_of(const std::string& name) {
  auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace detail

template <typename T>
ModelSummary count_params(const Model<T>& m) {
  ModelSummary s;
  std::map<const KernelParam<T>*, int> uses;
  auto use = [&uses](const KernelParam<T>* k) {
    if (k) ++uses[k];
  };
  use(m.stem_kernel);
  for (const auto& lv : m.res_levels) {
    if (lv.pool) {
      use(lv.pool->R);
      use(lv.pool->B0);
      use(lv.pool->Aprime);
    }
    for (const auto& b : lv.blocks) {
      use(b.A);
      use(b.B);
    }
  }
  for (const auto& lv : m.fb_levels) {
    if (lv.pool) {
      use(lv.pool->Pi);
      use(lv.pool->R);
      use(lv.pool->A_src.kernel);
      use(lv.pool->A_dst.kernel);
    }
    for (const auto& st : lv.steps) {
      use(st.A.kernel);
      use(st.B.kernel);
    }
  }

  std::map<std::string, std::size_t> sections;
  for (const auto& k : m.store.kernels()) {
    s.conv_weights += k->weight_count();
    sections[detail::section_of(k->name)] += k->weight_count();
    std::ostringstream shape;
    shape << k->c_out << "x" << k->c_in << "x" << k->kh << "x" << k->kw << "/s" << k->stride;
    s.kernels.push_back({k->name, shape.str(), k->weight_count(), uses[k.get()]});
  }
  for (const auto& b : m.store.bns()) {
    s.bn_weights += b->weight_count();
    sections[detail::section_of(b->name)] += b->weight_count();
  }
  for (const auto& d : m.store.denses()) {
    s.head_weights += d->weight_count();
    sections[detail::section_of(d->name)] += d->weight_count();
  }
  s.total = s.conv_weights + s.bn_weights + s.head_weights;
  s.sections.assign(sections.begin(), sections.end());
  return s;
}

// Formats a count the way the reference tables print them, e.g. 11173962
// with 0 decimals -> "11M", 8086692 with 1 decimal -> "8.1M".
inline std::string format_params_m(std::size_t count, int decimals) {
  std::ostringstream out;
  const double millions = static_cast<double>(count) / 1e6;
  out.setf(std::ios::fixed);
  out.precision(decimals);
  out << millions << "M";
  return out.str();
}

// Compares a count against a printed value like "8.1M" or "11M" at that
// value's own precision. Returns true when the rounded count matches.
inline bool matches_printed(std::size_t count, const std::string& printed) {
  std::string p = printed;
  if (!p.empty() && (p.back() == 'M' || p.back() == 'm')) p.pop_back();
  const auto dot = p.find('.');
  const int decimals = dot == std::string::npos ? 0 : static_cast<int>(p.size() - dot - 1);
  const double want = std::stod(p);
  const double scale = std::pow(10.0, decimals);
  const long long got = std::llround(static_cast<double>(count) / 1e6 * scale);
  return got == std::llround(want * scale);
}

// --- preset registry ---------------------------------------------------------

// Preset names look like:
//   [preact-]resnet{18,34}-{Ali,Al}-{Bli,Bl}-{mnist,cifar10,cifar100,imagenet}[-desk]
//   fb-resnet18-{cifar10,cifar100,mnist}[-desk]
// "-desk" switches to the reduced widths [16,32,64,128].
inline NetworkSpec preset_spec(const std::string& name) {
  std::vector<std::string> tok;
  {
    std::string cur;
    for (char ch : name) {
      if (ch == '-') {
        tok.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    tok.push_back(cur);
  }
  NetworkSpec s;
  s.name = name;
  std::size_t i = 0;
  bool fb = false;
  if (i < tok.size() && tok[i] == "preact") {
    s.family = Family::PreAct;
    ++i;
  } else if (i < tok.size() && tok[i] == "fb") {
    fb = true;
    s.family = Family::FeatureBased;
    ++i;
  } else {
    s.family = Family::Classic;
  }
  if (i >= tok.size() || (tok[i] != "resnet18" && tok[i] != "resnet34"))
    throw ConfigError("unknown preset '" + name + "': expected resnet18 or resnet34 backbone");
  const bool is34 = tok[i] == "resnet34";
  s.levels = 4;
  s.nu = is34 ? std::vector<int>{3, 4, 6, 3} : std::vector<int>{2, 2, 2, 2};
  s.channels = {64, 128, 256, 512};
  ++i;

  if (fb) {
    s.sharing = {Sharing::PerLevel, Sharing::PerLayer};
    s.pooling = PoolingVariant::FBPool;
  } else {
    if (i >= tok.size() || (tok[i] != "Ali" && tok[i] != "Al"))
      throw ConfigError("unknown preset '" + name + "': expected A-sharing token Ali or Al");
    s.sharing.a = tok[i] == "Al" ? Sharing::PerLevel : Sharing::PerLayer;
    ++i;
    if (i >= tok.size() || (tok[i] != "Bli" && tok[i] != "Bl"))
      throw ConfigError("unknown preset '" + name + "': expected B-sharing token Bli or Bl");
    s.sharing.b = tok[i] == "Bl" ? Sharing::PerLevel : Sharing::PerLayer;
    ++i;
    if (s.sharing.a == Sharing::PerLevel)
      s.pooling = PoolingVariant::AppendixPool;
    else
      s.pooling = s.family == Family::Classic ? PoolingVariant::ClassicPool
                                              : PoolingVariant::PreActPool;
  }

  if (i >= tok.size()) throw ConfigError("unknown preset '" + name + "': missing dataset token");
  const std::string& ds = tok[i];
  if (ds == "mnist") {
    s.stem = StemKind::SmallImage;
    s.num_classes = 10;
  } else if (ds == "cifar10") {
    s.stem = StemKind::Cifar;
    s.num_classes = 10;
  } else if (ds == "cifar100") {
    s.stem = StemKind::Cifar;
    s.num_classes = 100;
  } else if (ds == "imagenet") {
    s.stem = StemKind::LargeImage;
    s.num_classes = 1000;
  } else {
    throw ConfigError("unknown preset '" + name + "': dataset '" + ds + "'");
  }
  ++i;
  if (i < tok.size() && tok[i] == "desk") {
    s.channels = {16, 32, 64, 128};
    ++i;
  }
  if (i != tok.size()) throw ConfigError("unknown preset '" + name + "': trailing tokens");
  return s;
}

// The 16 A/B scheme combinations of the comparison sweep, in the reference
// table's row order (B cycles K*, s(K*), K*s, s(K*s) within each A group).
inline std::vector<NetworkSpec> scheme_sweep_specs(const std::vector<int>& channels = {64, 128, 256,
                                                                                       512},
                                                   int num_classes = 10) {
  const SchemeForm a_order[4] = {SchemeForm::ConvOnly, SchemeForm::ConvAfterAct,
                                 SchemeForm::ActAfterConv, SchemeForm::Sandwich};
  const SchemeForm b_order[4] = {SchemeForm::ConvOnly, SchemeForm::ActAfterConv,
                                 SchemeForm::ConvAfterAct, SchemeForm::Sandwich};
  std::vector<NetworkSpec> out;
  for (SchemeForm a : a_order)
    for (SchemeForm b : b_order) {
      NetworkSpec s;
      s.family = Family::FeatureBased;
      s.levels = 4;
      s.nu = {2, 2, 2, 2};
      s.channels = channels;
      s.sharing = {Sharing::PerLevel, Sharing::PerLayer};
      s.pooling = PoolingVariant::FBPool;
      s.a_form = a;
      s.b_form = b;
      s.stem = StemKind::Cifar;
      s.num_classes = num_classes;
      s.name = std::string("fb-resnet18-A_") + scheme_form_id(a) + "-B_" + scheme_form_id(b);
      out.push_back(std::move(s));
    }
  return out;
}

}  // namespace resfeat
