// Command-line surface for the data-feature-mapping residual network library:
// training, evaluation, parameter counting, the desk-scale verification
// suites and the 16-scheme comparison sweep.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "resfeat/gradcheck.hpp"
#include "resfeat/reports.hpp"
#include "resfeat/resfeat.hpp"

namespace {

using namespace resfeat;

struct DataArgs {
  std::string dir;
  std::string dataset = "auto";  // mnist | cifar10 | cifar100 | synthetic | auto
};

DatasetKind dataset_kind_for(const NetworkSpec& spec, const std::string& requested) {
  if (requested == "mnist") return DatasetKind::MnistIdx;
  if (requested == "cifar10") return DatasetKind::Cifar10Bin;
  if (requested == "cifar100") return DatasetKind::Cifar100Bin;
  if (requested == "synthetic") return DatasetKind::Synthetic;
  if (requested != "auto") throw ConfigError("unknown dataset '" + requested + "'");
  if (spec.stem == StemKind::SmallImage) return DatasetKind::MnistIdx;
  if (spec.stem == StemKind::Cifar)
    return spec.num_classes == 100 ? DatasetKind::Cifar100Bin : DatasetKind::Cifar10Bin;
  throw ConfigError("cannot infer a dataset for the LargeImage stem; pass --dataset");
}

std::string dataset_subdir(DatasetKind k) {
  switch (k) {
    case DatasetKind::MnistIdx: return "mnist";
    case DatasetKind::Cifar10Bin: return "cifar10";
    case DatasetKind::Cifar100Bin: return "cifar100";
    case DatasetKind::Synthetic: return "synthetic";
  }
  return "";
}

struct LoadedData {
  Dataset train, test;
  NormStats stats;
};

LoadedData load_data(const DataArgs& args, const NetworkSpec& spec) {
  const DatasetKind kind = dataset_kind_for(spec, args.dataset);
  LoadedData out;
  if (kind == DatasetKind::Synthetic) {
    const int c = spec.input_channels();
    out.train = synthetic_classification(2048, spec.num_classes, c, 32, 32, 99);
    out.test = synthetic_classification(512, spec.num_classes, c, 32, 32, 100);
  } else {
    std::string root = args.dir;
    const std::string sub = root + "/" + dataset_subdir(kind);
    if (std::filesystem::exists(sub)) root = sub;
    out.train = load_dataset({kind, root, Split::Train});
    out.test = load_dataset({kind, root, Split::Test});
  }
  out.stats = compute_norm_stats(out.train);
  return out;
}

TrainConfig default_train_config(const NetworkSpec& spec, DatasetKind kind) {
  TrainConfig cfg;
  int depth_blocks = 0;
  for (int v : spec.nu) depth_blocks += v;
  cfg.weight_decay = depth_blocks > 8 ? 1e-3 : 1e-4;  // 34-layer type vs 18-layer type
  cfg.epochs = kind == DatasetKind::MnistIdx ? 60 : 120;
  cfg.batch_size = 128;
  return cfg;
}

int cmd_count_params(const std::string& spec_arg, const std::string& expect, bool as_json) {
  NetworkSpec spec = resolve_spec(spec_arg);
  auto model = build<float>(spec);
  auto summary = count_params(model);
  if (as_json) {
    std::cout << to_json(summary).dump(2) << "\n";
  } else {
    std::printf("model: %s\n", spec.name.c_str());
    std::printf("%-28s %-18s %12s %5s\n", "kernel", "shape", "weights", "uses");
    for (const auto& k : summary.kernels)
      std::printf("%-28s %-18s %12zu %5d%s\n", k.name.c_str(), k.shape.c_str(), k.weights,
                  k.use_sites, k.use_sites > 1 ? "  (shared)" : "");
    std::printf("conv weights:  %zu\n", summary.conv_weights);
    std::printf("bn weights:    %zu\n", summary.bn_weights);
    std::printf("head weights:  %zu\n", summary.head_weights);
    std::printf("total:         %zu  (%s at table precision, %s fine)\n", summary.total,
                format_params_m(summary.total, 0).c_str(),
                format_params_m(summary.total, 1).c_str());
  }
  if (!expect.empty()) {
    if (!matches_printed(summary.total, expect)) {
      std::fprintf(stderr, "expectation FAILED: computed %zu does not round to %s\n",
                   summary.total, expect.c_str());
      return 1;
    }
    std::printf("expectation ok: %zu rounds to %s\n", summary.total, expect.c_str());
  }
  return 0;
}

void write_json_report(const std::string& path, const nlohmann::json& j) {
  if (path.empty()) return;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write report: " + path);
  f << j.dump(2) << "\n";
}

int cmd_verify_theorem1(int trials, double tol, std::uint64_t seed, const std::string& json_path) {
  auto all = theorem1_trials(trials, tol, seed);
  nlohmann::json jt = nlohmann::json::array();
  double worst = 0;
  bool pass = true;
  for (std::size_t t = 0; t < all.size(); ++t) {
    const auto& tr = all[t];
    worst = std::max(worst, tr.report.max_abs_gap);
    pass = pass && tr.report.pass;
    auto j = to_json(tr.report);
    j["trial"] = t;
    j["channels"] = tr.channels;
    j["grid"] = tr.grid;
    jt.push_back(j);
    std::printf("trial %2zu: c=%d grid=%2d nu=%2d gap=%.3e invertible=%d cond=%.3f %s\n", t,
                tr.channels, tr.grid, tr.nu, tr.report.max_abs_gap, tr.report.invertible,
                tr.report.condition, tr.report.pass ? "ok" : "FAIL");
  }
  std::printf("theorem1: %d trials, max gap %.3e, tolerance %.1e -> %s\n", trials, worst, tol,
              pass ? "PASS" : "FAIL");
  write_json_report(json_path, {{"suite", "theorem1"}, {"seed", seed}, {"tolerance", tol},
                                {"max_gap", worst}, {"pass", pass}, {"trials", jt}});
  return pass ? 0 : 2;
}

int cmd_verify_constraint(int trials, std::uint64_t seed, const std::string& json_path) {
  auto s = constraint_trials(trials, seed);
  const bool pass = s.nonnegative && s.monotone;
  std::printf("constraint: %d randomized runs, min entry ever seen = %.1f, monotone = %s -> %s\n",
              s.trials, s.worst_min_entry, s.monotone ? "yes" : "NO", pass ? "PASS" : "FAIL");
  write_json_report(json_path, {{"suite", "constraint"}, {"seed", seed}, {"trials", s.trials},
                                {"worst_min_entry", s.worst_min_entry},
                                {"monotone", s.monotone}, {"pass", pass}});
  return pass ? 0 : 2;
}

int cmd_verify_richardson(int trials, std::uint64_t seed, const std::string& json_path) {
  auto all = richardson_trials(trials, seed);
  nlohmann::json jt = nlohmann::json::array();
  int conv_ok = 0, div_ok = 0;
  for (std::size_t t = 0; t < all.size(); ++t) {
    const auto& tr = all[t];
    if (tr.convergent.monotone) ++conv_ok;
    if (!tr.divergent.monotone) ++div_ok;
    jt.push_back({{"trial", t},
                  {"lambda_max", tr.lambda_max},
                  {"omega", tr.omega},
                  {"convergent", to_json(tr.convergent)},
                  {"divergent", to_json(tr.divergent)}});
    std::printf(
        "trial %2zu: lambda_max=%.3f conv(last=%.2e monotone=%d) div(last=%.2e monotone=%d)\n", t,
        tr.lambda_max, tr.convergent.residual_norms.back(), tr.convergent.monotone,
        tr.divergent.residual_norms.back(), tr.divergent.monotone);
  }
  const bool pass = conv_ok == trials && div_ok == trials;
  std::printf("richardson: convergent %d/%d, divergence detected %d/%d -> %s\n", conv_ok, trials,
              div_ok, trials, pass ? "PASS" : "FAIL");
  write_json_report(json_path, {{"suite", "richardson"}, {"seed", seed}, {"trials", jt},
                                {"convergent_ok", conv_ok}, {"divergent_ok", div_ok},
                                {"pass", pass}});
  return pass ? 0 : 2;
}

int cmd_verify_pixel(int grid, const std::string& json_path) {
  auto rep = pixel_experiment(grid);
  std::printf("pixel (grid %d): S(r)==0: %s; learned stride-2 path entry=%.3f (max %.3f); "
              "restrict-then-conv max=%.3e over %d random kernel pairs -> %s\n",
              rep.grid, rep.subsample_is_zero ? "yes" : "NO", rep.learned_path_entry,
              rep.learned_path_max_abs, rep.restrict_path_max_abs, rep.restrict_path_trials,
              rep.pass ? "PASS" : "FAIL");
  write_json_report(json_path, to_json(rep));
  return rep.pass ? 0 : 2;
}

int cmd_gradcheck(int depth, int composites, double tol, std::uint64_t seed) {
  auto sum = run_gradcheck_suite(composites, depth, 1e-5, tol, seed, [](const GradCheckResult& r) {
    std::printf("  %-42s checked=%5zu max_rel_err=%.3e %s\n", r.what.c_str(), r.checked,
                r.max_rel_err, r.pass ? "ok" : "FAIL");
  });
  std::printf("gradcheck: %d checks, max relative error %.3e, tolerance %.1e -> %s\n", sum.checks,
              sum.max_rel_err, tol, sum.pass ? "PASS" : "FAIL");
  return sum.pass ? 0 : 2;
}

int cmd_train(const std::string& spec_arg, const DataArgs& data_args, const std::string& out_dir,
              const std::string& config_file, const KvMap& overrides) {
  NetworkSpec spec = resolve_spec(spec_arg);
  KvMap kv;
  if (!config_file.empty()) kv = read_kv_file(config_file);
  for (const auto& [k, v] : overrides) kv[k] = v;

  const DatasetKind kind = dataset_kind_for(spec, data_args.dataset);
  TrainConfig cfg = default_train_config(spec, kind);
  cfg = train_config_from_kv(kv, cfg);
  cfg.out_dir = out_dir;

  LoadedData data = load_data(data_args, spec);
  auto model = build<float>(spec);
  std::printf("training %s: %d train / %d test samples, %d epochs, batch %d, lr0 %.3g, wd %.1e\n",
              spec.name.c_str(), cfg.subset > 0 ? std::min(cfg.subset, data.train.n) : data.train.n,
              data.test.n, cfg.epochs, cfg.batch_size, cfg.lr0, cfg.weight_decay);
  auto result = train(model, data.train, &data.test, data.stats, cfg);
  if (!out_dir.empty()) write_spec_file(spec, out_dir + "/model.spec");
  for (const auto& r : result.metrics)
    std::printf("epoch %3d lr %.4g loss %.4f train %.2f%% test %.2f%% (%.1fs)\n", r.epoch, r.lr,
                r.train_loss, r.train_top1, r.test_top1, r.wall_seconds);
  if (!result.metrics.empty())
    std::printf("final test top-1: %.2f%%\n", result.metrics.back().test_top1);
  return 0;
}

int cmd_eval(const std::string& ckpt, const DataArgs& data_args, std::string spec_arg) {
  if (spec_arg.empty()) {
    const auto sibling = std::filesystem::path(ckpt).parent_path() / "model.spec";
    if (!std::filesystem::exists(sibling))
      throw ConfigError("no --spec given and no model.spec next to the checkpoint");
    spec_arg = sibling.string();
  }
  NetworkSpec spec = resolve_spec(spec_arg);
  auto model = build<float>(spec);
  load_checkpoint(model, ckpt);
  LoadedData data = load_data(data_args, spec);
  const double top1 = evaluate(model, data.test, data.stats);
  std::printf("test top-1: %.4f%%\n", top1);
  return 0;
}

int cmd_sweep(const DataArgs& data_args, int epochs, int subset, const std::string& csv_path,
              bool full_width, std::uint64_t seed) {
  const std::vector<int> widths =
      full_width ? std::vector<int>{64, 128, 256, 512} : std::vector<int>{16, 32, 64, 128};
  auto specs = scheme_sweep_specs(widths, 10);

  Dataset train_full, test;
  NormStats stats;
  if (data_args.dataset == "synthetic") {
    train_full = synthetic_classification(subset > 0 ? subset : 2048, 10, 3, 32, 32, 99);
    test = synthetic_classification(512, 10, 3, 32, 32, 100);
  } else {
    std::string root = data_args.dir;
    if (std::filesystem::exists(root + "/cifar10")) root += "/cifar10";
    train_full = load_dataset({DatasetKind::Cifar10Bin, root, Split::Train});
    test = load_dataset({DatasetKind::Cifar10Bin, root, Split::Test});
  }
  stats = compute_norm_stats(train_full);

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path, std::ios::trunc);
    csv << "row,a_form,b_form,params,epochs,first_step_loss,final_epoch_loss,loss_decreased,"
           "train_top1,test_top1\n";
  }
  bool all_ok = true;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto model = build<float>(specs[i]);
    const auto params = count_params(model).total;
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 128;
    cfg.weight_decay = 1e-4;
    cfg.seed = seed + i;
    cfg.subset = subset;
    auto res = train(model, train_full, &test, stats, cfg);
    const double first = res.step_losses.empty() ? 0 : res.step_losses.front();
    double tail = 0;
    if (!res.step_losses.empty()) {
      const std::size_t tail_from = res.step_losses.size() - std::max<std::size_t>(1, res.step_losses.size() / 4);
      for (std::size_t j = tail_from; j < res.step_losses.size(); ++j) tail += res.step_losses[j];
      tail /= static_cast<double>(res.step_losses.size() - tail_from);
    }
    const bool decreased = tail < first;
    all_ok = all_ok && decreased;
    const auto& last = res.metrics.back();
    std::printf("%2zu  A=%-7s B=%-7s params=%8zu first=%.4f tail=%.4f %s train=%.2f test=%.2f\n",
                i + 1, scheme_form_id(specs[i].a_form), scheme_form_id(specs[i].b_form), params,
                first, tail, decreased ? "ok" : "NO-DECREASE", last.train_top1, last.test_top1);
    if (csv.is_open())
      csv << i + 1 << ',' << scheme_form_id(specs[i].a_form) << ','
          << scheme_form_id(specs[i].b_form) << ',' << params << ',' << epochs << ',' << first
          << ',' << tail << ',' << (decreased ? 1 : 0) << ',' << last.train_top1 << ','
          << last.test_top1 << "\n";
  }
  std::printf("sweep: 16 scheme combinations, all built and %s\n",
              all_ok ? "improved over the first step (PASS)" : "some failed to improve (FAIL)");
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ResNet blocks as iterative solvers for the constrained data-feature mapping"};
  app.require_subcommand(1);

  // train
  auto* tr = app.add_subcommand("train", "train a model from a spec (preset name or file)");
  std::string tr_spec, tr_out = "out", tr_config;
  DataArgs tr_data;
  KvMap tr_over;
  tr->add_option("--spec", tr_spec, "preset name or spec file")->required();
  tr->add_option("--data", tr_data.dir, "dataset root directory");
  tr->add_option("--dataset", tr_data.dataset, "mnist|cifar10|cifar100|synthetic|auto");
  tr->add_option("--out", tr_out, "output directory (metrics, checkpoints)");
  tr->add_option("--config", tr_config, "key=value training config file");
  std::map<std::string, std::string> tr_cli;
  tr->add_option("--epochs", tr_cli["epochs"]);
  tr->add_option("--batch-size", tr_cli["batch_size"]);
  tr->add_option("--lr", tr_cli["lr0"]);
  tr->add_option("--weight-decay", tr_cli["weight_decay"]);
  tr->add_option("--seed", tr_cli["seed"]);
  tr->add_option("--subset", tr_cli["subset"]);
  tr->add_option("--deterministic", tr_cli["deterministic"]);
  tr->add_option("--stop-at", tr_cli["stop_at_test_top1"]);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_spec;
  DataArgs ev_data;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data.dir);
  ev->add_option("--dataset", ev_data.dataset);
  ev->add_option("--spec", ev_spec, "override the model.spec next to the checkpoint");

  // count-params
  auto* cp = app.add_subcommand("count-params", "print the parameter inventory");
  std::string cp_spec, cp_expect;
  bool cp_json = false;
  cp->add_option("--spec", cp_spec)->required();
  cp->add_option("--expect", cp_expect, "verify the rounded total, e.g. 8.1M (nonzero exit on mismatch)");
  cp->add_flag("--json", cp_json);

  // verify
  auto* vf = app.add_subcommand("verify", "run a numerical verification suite");
  std::string vf_suite, vf_json;
  int vf_trials = 25;
  double vf_tol = 1e-10;
  int vf_grid = 8;
  std::uint64_t vf_seed = 2024;
  vf->add_option("suite", vf_suite, "theorem1|constraint|richardson|pixel")->required();
  vf->add_option("--trials", vf_trials);
  vf->add_option("--tol", vf_tol);
  vf->add_option("--grid", vf_grid);
  vf->add_option("--seed", vf_seed);
  vf->add_option("--json", vf_json, "write the JSON report here");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every operator");
  int gc_depth = 6, gc_composites = 20;
  double gc_tol = 1e-4;
  std::uint64_t gc_seed = 7;
  gc->add_option("--depth", gc_depth);
  gc->add_option("--composites", gc_composites);
  gc->add_option("--tol", gc_tol);
  gc->add_option("--seed", gc_seed);

  // sweep
  auto* sw = app.add_subcommand("sweep", "scheme-combination sweep");
  std::string sw_what, sw_csv = "table1.csv";
  DataArgs sw_data;
  int sw_epochs = 1, sw_subset = 2048;
  bool sw_full = false;
  std::uint64_t sw_seed = 11;
  sw->add_option("what", sw_what, "table1")->required();
  sw->add_option("--data", sw_data.dir);
  sw->add_option("--dataset", sw_data.dataset);
  sw->add_option("--epochs", sw_epochs);
  sw->add_option("--subset", sw_subset);
  sw->add_option("--out", sw_csv);
  sw->add_flag("--full-width", sw_full, "use the full [64,128,256,512] widths");
  sw->add_option("--seed", sw_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tr) {
      KvMap over;
      for (const auto& [k, v] : tr_cli)
        if (!v.empty()) over[k] = v;
      return cmd_train(tr_spec, tr_data, tr_out, tr_config, over);
    }
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_spec);
    if (*cp) return cmd_count_params(cp_spec, cp_expect, cp_json);
    if (*vf) {
      if (vf_suite == "theorem1") return cmd_verify_theorem1(vf_trials, vf_tol, vf_seed, vf_json);
      if (vf_suite == "constraint")
        return cmd_verify_constraint(vf_trials == 25 ? 1000 : vf_trials, vf_seed, vf_json);
      if (vf_suite == "richardson")
        return cmd_verify_richardson(vf_trials == 25 ? 10 : vf_trials, vf_seed, vf_json);
      if (vf_suite == "pixel") return cmd_verify_pixel(vf_grid, vf_json);
      std::fprintf(stderr, "unknown verify suite '%s'\n", vf_suite.c_str());
      return 1;
    }
    if (*gc) return cmd_gradcheck(gc_depth, gc_composites, gc_tol, gc_seed);
    if (*sw) {
      if (sw_what != "table1") {
        std::fprintf(stderr, "unknown sweep '%s'\n", sw_what.c_str());
        return 1;
      }
      return cmd_sweep(sw_data, sw_epochs, sw_subset, sw_csv, sw_full, sw_seed);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
