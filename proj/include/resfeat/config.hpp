#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "resfeat/error.hpp"
#include "resfeat/network.hpp"
#include "resfeat/train.hpp"

namespace resfeat {

// Flat key=value text config; '#' starts a comment. Keys mirror the
// NetworkSpec / TrainConfig field names. A "preset=" key seeds the spec
// from the registry before the remaining keys are overlaid.

using KvMap = std::map<std::string, std::string>;

inline KvMap parse_kv(std::istream& in) {
  KvMap kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!key.empty()) kv[key] = val;
  }
  return kv;
}

inline KvMap read_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  return parse_kv(f);
}

namespace cfg_detail {

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

inline std::string join_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline SchemeForm parse_form(const std::string& s) {
  if (s == "conv") return SchemeForm::ConvOnly;
  if (s == "conv_act") return SchemeForm::ConvAfterAct;
  if (s == "act_conv") return SchemeForm::ActAfterConv;
  if (s == "sandwich") return SchemeForm::Sandwich;
  throw ConfigError("unknown scheme form '" + s + "' (conv|conv_act|act_conv|sandwich)");
}

inline bool parse_bool(const std::string& s) {
  if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
  if (s == "off" || s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected boolean, got '" + s + "'");
}

}  // namespace cfg_detail

inline NetworkSpec spec_from_kv(const KvMap& kv) {
  NetworkSpec s;
  if (auto it = kv.find("preset"); it != kv.end()) s = preset_spec(it->second);
  for (const auto& [key, val] : kv) {
    if (key == "preset") continue;
    if (key == "name") s.name = val;
    else if (key == "family") {
      if (val == "preact") s.family = Family::PreAct;
      else if (val == "classic") s.family = Family::Classic;
      else if (val == "fb") s.family = Family::FeatureBased;
      else throw ConfigError("unknown family '" + val + "'");
    } else if (key == "levels") s.levels = std::stoi(val);
    else if (key == "nu") s.nu = cfg_detail::parse_int_list(val);
    else if (key == "channels") s.channels = cfg_detail::parse_int_list(val);
    else if (key == "a_sharing") s.sharing.a = val == "per_level" ? Sharing::PerLevel : Sharing::PerLayer;
    else if (key == "b_sharing") s.sharing.b = val == "per_level" ? Sharing::PerLevel : Sharing::PerLayer;
    else if (key == "pooling") {
      if (val == "preact") s.pooling = PoolingVariant::PreActPool;
      else if (val == "classic") s.pooling = PoolingVariant::ClassicPool;
      else if (val == "fb") s.pooling = PoolingVariant::FBPool;
      else if (val == "appendix") s.pooling = PoolingVariant::AppendixPool;
      else throw ConfigError("unknown pooling '" + val + "'");
    } else if (key == "a_form") s.a_form = cfg_detail::parse_form(val);
    else if (key == "b_form") s.b_form = cfg_detail::parse_form(val);
    else if (key == "stem") {
      if (val == "cifar") s.stem = StemKind::Cifar;
      else if (val == "small") s.stem = StemKind::SmallImage;
      else if (val == "large") s.stem = StemKind::LargeImage;
      else throw ConfigError("unknown stem '" + val + "'");
    } else if (key == "num_classes") s.num_classes = std::stoi(val);
    else if (key == "bn") s.bn = cfg_detail::parse_bool(val);
    else throw ConfigError("unknown NetworkSpec key '" + key + "'");
  }
  return s;
}

inline std::string spec_to_kv(const NetworkSpec& s) {
  std::ostringstream o;
  o << "name=" << s.name << "\n";
  o << "family=" << family_name(s.family) << "\n";
  o << "levels=" << s.levels << "\n";
  o << "nu=" << cfg_detail::join_int_list(s.nu) << "\n";
  o << "channels=" << cfg_detail::join_int_list(s.channels) << "\n";
  o << "a_sharing=" << (s.sharing.a == Sharing::PerLevel ? "per_level" : "per_layer") << "\n";
  o << "b_sharing=" << (s.sharing.b == Sharing::PerLevel ? "per_level" : "per_layer") << "\n";
  switch (s.pooling) {
    case PoolingVariant::PreActPool: o << "pooling=preact\n"; break;
    case PoolingVariant::ClassicPool: o << "pooling=classic\n"; break;
    case PoolingVariant::FBPool: o << "pooling=fb\n"; break;
    case PoolingVariant::AppendixPool: o << "pooling=appendix\n"; break;
  }
  o << "a_form=" << scheme_form_id(s.a_form) << "\n";
  o << "b_form=" << scheme_form_id(s.b_form) << "\n";
  o << "stem="
    << (s.stem == StemKind::Cifar ? "cifar" : s.stem == StemKind::SmallImage ? "small" : "large")
    << "\n";
  o << "num_classes=" << s.num_classes << "\n";
  o << "bn=" << (s.bn ? "on" : "off") << "\n";
  return o.str();
}

inline void write_spec_file(const NetworkSpec& s, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write spec file: " + path);
  f << spec_to_kv(s);
}

// Accepts either a preset name or a path to a key=value spec file.
inline NetworkSpec resolve_spec(const std::string& name_or_path) {
  if (std::ifstream probe(name_or_path); probe.good()) return spec_from_kv(read_kv_file(name_or_path));
  return preset_spec(name_or_path);
}

inline TrainConfig train_config_from_kv(const KvMap& kv, TrainConfig cfg = {}) {
  for (const auto& [key, val] : kv) {
    if (key == "lr0") cfg.lr0 = std::stod(val);
    else if (key == "momentum") cfg.momentum = std::stod(val);
    else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
    else if (key == "batch_size") cfg.batch_size = std::stoi(val);
    else if (key == "lr_step") cfg.lr_step = std::stoi(val);
    else if (key == "lr_factor") cfg.lr_factor = std::stod(val);
    else if (key == "epochs") cfg.epochs = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "deterministic") cfg.deterministic = cfg_detail::parse_bool(val);
    else if (key == "subset") cfg.subset = std::stoi(val);
    else if (key == "prefetch") cfg.prefetch = std::stoi(val);
    else if (key == "stop_at_test_top1") cfg.stop_at_test_top1 = std::stod(val);
    else continue;  // unknown keys may belong to the spec section
  }
  return cfg;
}

}  // namespace resfeat
