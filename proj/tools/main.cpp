// SPDX-License-Identifier: Apache-2.0
// seaformer: parameter/MAC reports, attention scaling sweeps, gradient and
// oracle checks, model forwards and a distillation demo.
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "seaformer/analysis.hpp"
#include "seaformer/backbone.hpp"
#include "seaformer/checks.hpp"
#include "seaformer/distill.hpp"
#include "seaformer/errors.hpp"
#include "seaformer/stn_io.hpp"
#include "seaformer/tape.hpp"

namespace {

using namespace seaformer;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::uint64_t seed = 42;
  std::string out;
  bool json = false;
};

struct ModelArgs {
  std::string variant = "B";
  std::string task = "seg";
  std::size_t classes = 0;  // 0: 150 for seg, 1000 for cls

  Task parsed_task() const { return parse_task(task); }
  std::size_t num_classes() const {
    if (classes != 0) return classes;
    return parsed_task() == Task::kSeg ? 150 : 1000;
  }
  VariantSpec spec() const {
    if (variant.size() > 5 && variant.substr(variant.size() - 5) == ".json") {
      std::ifstream in(variant);
      if (!in) throw ConfigError("cannot open variant file " + variant);
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw ConfigError("variant file " + variant + ": " + e.what());
      }
      return j.get<VariantSpec>();
    }
    return variant_spec(variant);
  }
};

void add_model_args(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--variant", m.variant, "T, S, B, L or a variant.json path")
      ->capture_default_str();
  cmd->add_option("--task", m.task, "seg or cls")->capture_default_str();
  cmd->add_option("--classes", m.classes, "output classes (default 150 seg, 1000 cls)");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("invalid size '" + item + "'");
    }
  }
  return out;
}

// ---- commands ---------------------------------------------------------------

int cmd_params(const Globals& g, const ModelArgs& m, std::ostream& out) {
  auto model = build_model<float>(m.spec(), m.num_classes(), m.parsed_task(), g.seed);
  const auto counts = param_breakdown(model);
  if (g.json) {
    out << json{{"variant", model.spec.name},
                {"task", m.task},
                {"classes", m.num_classes()},
                {"params", counts}}
               .dump(2)
        << '\n';
    return kExitOk;
  }
  out << "variant " << model.spec.name << "  task " << m.task << "  classes " << m.num_classes()
      << '\n';
  for (const auto& [name, n] : counts) {
    if (name != "total") out << std::left << std::setw(12) << name << std::right << std::setw(12) << n << '\n';
  }
  out << std::left << std::setw(12) << "total" << std::right << std::setw(12) << counts.at("total")
      << "  (" << fmt_double(static_cast<double>(counts.at("total")) / 1e6) << "M)\n";
  return kExitOk;
}

int cmd_flops(const Globals& g, const ModelArgs& m, std::size_t hw, std::ostream& out) {
  const auto model = build_model<float>(m.spec(), m.num_classes(), m.parsed_task(), g.seed);
  const auto macs = mac_breakdown(model, hw, hw);
  const std::uint64_t total = macs.at("total");
  if (g.json) {
    out << json{{"variant", model.spec.name}, {"task", m.task},       {"hw", hw},
                {"macs", macs},               {"flops", 2 * total}}
               .dump(2)
        << '\n';
    return kExitOk;
  }
  out << "variant " << model.spec.name << "  task " << m.task << "  input " << hw << "x" << hw
      << '\n';
  for (const auto& [name, n] : macs) {
    if (name != "total") out << std::left << std::setw(12) << name << std::right << std::setw(14) << n << '\n';
  }
  out << std::left << std::setw(12) << "total" << std::right << std::setw(14) << total << "  ("
      << fmt_double(static_cast<double>(total) / 1e9) << "G MACs, "
      << fmt_double(2.0 * static_cast<double>(total) / 1e9) << "G FLOPs)\n";
  return kExitOk;
}

int cmd_bench_scaling(const Globals& g, const std::string& attn, const std::string& sizes_arg,
                      std::size_t channels, bool timed, std::ostream& out) {
  const auto sizes = parse_sizes(sizes_arg);
  if (sizes.size() < 3) throw UsageError("bench-scaling needs at least 3 sizes");
  const auto& kinds = attention_kinds();
  if (std::find(kinds.begin(), kinds.end(), attn) == kinds.end()) {
    throw UsageError("unknown attention kind '" + attn + "' (valid: sea, global, window, axial)");
  }
  const CostReport report = attention_scaling(attn, sizes, channels, g.seed, timed);
  if (g.json) {
    out << report.summary().dump(2) << '\n';
    return kExitOk;
  }
  const ScalingFit fit = report.fit();
  out << report.csv() << "# slope=" << fmt_double(fit.slope)
      << " intercept=" << fmt_double(fit.intercept) << " residual=" << fmt_double(fit.residual)
      << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Globals& g, const std::string& scope_arg, std::size_t seeds,
                  double threshold, std::ostream& out) {
  GradScope scope;
  try {
    scope = parse_grad_scope(scope_arg);
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  if (threshold <= 0) threshold = default_threshold(scope);
  bool pass = true;
  json reports = json::array();
  for (std::size_t i = 0; i < seeds; ++i) {
    const std::uint64_t seed = g.seed + i;
    const GradCheckReport r = run_gradcheck(scope, seed, threshold);
    pass = pass && r.pass();
    if (g.json) {
      json j = r;
      j["seed"] = seed;
      reports.push_back(std::move(j));
      continue;
    }
    out << "scope " << to_string(scope) << "  seed " << seed << "  threshold "
        << fmt_double(threshold) << '\n';
    out << std::left << std::setw(44) << "input" << std::right << std::setw(9) << "checked"
        << std::setw(7) << "kinks" << std::setw(14) << "max_rel_err" << "  result\n";
    for (const auto& e : r.entries) {
      out << std::left << std::setw(44) << e.name << std::right << std::setw(9) << e.checked
          << std::setw(7) << e.kinks << std::setw(14) << fmt_double(e.max_rel_error) << "  "
          << (e.pass ? "ok" : "FAIL") << '\n';
    }
    out << "max_rel_error " << fmt_double(r.max_rel_error()) << "  " << (r.pass() ? "PASS" : "FAIL")
        << "\n\n";
  }
  if (g.json) out << json{{"pass", pass}, {"runs", std::move(reports)}}.dump(2) << '\n';
  return pass ? kExitOk : kExitCheckFailed;
}

int cmd_forward(const Globals& g, const ModelArgs& m, const std::string& input,
                const std::string& output, const std::string& weights, std::ostream& out) {
  const Tensor<float> x = read_stn(input);
  if (x.rank() != 3 || x.dim(0) != 3) {
    throw InputError("input must be 3 x H x W, got " + shape_to_string(x.shape()));
  }
  auto model = build_model<float>(m.spec(), m.num_classes(), m.parsed_task(), g.seed);
  if (!weights.empty()) {
    load_bundle<float>(weights, [&](const ParamVisitor<float>& v) { model.visit("", v); });
  }
  const Tensor<float> y = model.task == Task::kSeg ? seg_forward(model, x) : cls_forward(model, x);
  write_stn(output, y);
  std::ostringstream hex;
  hex << "0x" << std::hex << std::setw(16) << std::setfill('0') << checksum(y);
  if (g.json) {
    out << json{{"shape", y.shape()}, {"checksum", hex.str()}, {"output", output}}.dump(2) << '\n';
  } else {
    out << "shape " << shape_to_string(y.shape()) << "  checksum " << hex.str() << '\n';
  }
  return kExitOk;
}

LabelMap random_labels(std::size_t h, std::size_t w, std::size_t classes, Rng& rng) {
  LabelMap labels{h, w, {}};
  labels.values.reserve(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    labels.values.push_back(static_cast<std::int32_t>(rng.below(classes)));
  }
  return labels;
}

int cmd_distill_demo(const Globals& g, const ModelArgs& m, std::size_t hw,
                     const std::string& losses, const std::string& upsample, std::ostream& out) {
  if (hw == 0 || hw % 128 != 0) {
    throw UsageError("distill-demo needs --hw divisible by 128, got " + std::to_string(hw));
  }
  DistillConfig cfg;
  cfg.upsample = parse_upsample_kind(upsample);
  set_losses(cfg, losses);
  const VariantSpec spec = m.spec();
  const std::size_t classes = m.num_classes();
  const auto teacher = build_model<double>(spec, classes, Task::kSeg, g.seed);
  const auto student = build_model<double>(spec, classes, Task::kSeg, g.seed + 1);
  const auto head = make_distill_head<double>(spec, cfg.upsample, g.seed + 2);
  Rng rng(g.seed + 3);
  const Tensor<double> x = uniform_tensor<double>({3, hw, hw}, -1.0, 1.0, rng);
  const LabelMap labels = random_labels(hw / 8, hw / 8, classes, rng);

  const auto run = distill_step(teacher, student, head, x, labels, cfg);
  DistillConfig self_cfg = cfg;
  self_cfg.same_resolution = true;
  const auto self = distill_step(teacher, teacher, head, x, labels, self_cfg);

  json enabled = json::array();
  if (cfg.use_cls) enabled.push_back("cls");
  if (cfg.use_cross) enabled.push_back("cross");
  if (cfg.use_feat) enabled.push_back("feat");
  if (cfg.use_out) enabled.push_back("out");
  out << json{{"variant", spec.name},
              {"hw", hw},
              {"classes", classes},
              {"upsample", to_string(cfg.upsample)},
              {"losses", enabled},
              {"report", run.report},
              {"self_distillation", self.report}}
             .dump(2)
      << '\n';
  return kExitOk;
}

int cmd_oracle_check(const Globals& g, std::ostream& out) {
  const auto results = run_oracle_checks(g.seed);
  bool pass = true;
  json rows = json::array();
  for (const auto& r : results) {
    pass = pass && r.pass;
    rows.push_back({{"name", r.name}, {"value", r.value}, {"tolerance", r.tolerance}, {"pass", r.pass}});
  }
  if (g.json) {
    out << json{{"pass", pass}, {"checks", rows}}.dump(2) << '\n';
  } else {
    for (const auto& r : results) {
      out << std::left << std::setw(34) << r.name << std::right << std::setw(14)
          << fmt_double(r.value) << "  tol " << std::setw(8) << fmt_double(r.tolerance) << "  "
          << (r.pass ? "PASS" : "FAIL") << '\n';
    }
  }
  return pass ? kExitOk : kExitCheckFailed;
}

// ---- --config merging -------------------------------------------------------

// Turns {"key": value} into ["--key", "value"] pairs. Arrays are joined with
// commas; true booleans become bare flags.
std::vector<std::string> config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!joined.empty()) joined += ',';
        joined += v.is_string() ? v.get<std::string>() : v.dump();
      }
      args.push_back(flag);
      args.push_back(joined);
    } else {
      args.push_back(flag);
      args.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  return args;
}

// Inserts config-file arguments right after the subcommand so that flags
// given on the command line come later and win.
std::vector<std::string> merge_config(std::vector<std::string> args,
                                      const std::vector<std::string>& commands) {
  std::string config;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") config = args[i + 1];
  }
  for (const auto& a : args) {
    if (a.rfind("--config=", 0) == 0) config = a.substr(9);
  }
  if (config.empty()) return args;
  const auto extra = config_args(config);
  auto it = std::find_first_of(args.begin() + 1, args.end(), commands.begin(), commands.end());
  if (it == args.end()) return args;
  args.insert(it + 1, extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SeaFormer reference tool: reports, sweeps and checks"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.fallthrough();

  Globals g;
  std::string config;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--out", g.out, "write the report to this file instead of stdout");
  app.add_flag("--json", g.json, "JSON output");
  app.add_option("--config", config, "JSON object of flag values; explicit flags win");

  ModelArgs model_args;
  auto* params = app.add_subcommand("params", "trainable parameter counts per stage");
  add_model_args(params, model_args);

  std::size_t hw = 512;
  auto* flops = app.add_subcommand("flops", "MACs per stage for one forward");
  add_model_args(flops, model_args);
  flops->add_option("--hw", hw, "input height and width")->capture_default_str();

  std::string attn = "sea", sizes = "16,32,64,128";
  std::size_t channels = 64;
  bool timed = false;
  auto* bench = app.add_subcommand("bench-scaling", "attention MACs vs input size, log-log fit");
  bench->add_option("--attn", attn, "sea, global, window or axial")->capture_default_str();
  bench->add_option("--sizes", sizes, "comma-separated H=W sizes")->capture_default_str();
  bench->add_option("--channels", channels, "channels")->capture_default_str();
  bench->add_flag("--time", timed, "also measure wall time (min of 3 runs)");

  std::string scope = "ops";
  std::size_t seeds = 1;
  double threshold = 0;
  std::string fault;
  auto* grad = app.add_subcommand("gradcheck", "tape gradients vs central differences");
  grad->add_option("--scope", scope, "ops, sea, layer or distill")->capture_default_str();
  grad->add_option("--seeds", seeds, "number of consecutive seeds")->capture_default_str();
  grad->add_option("--threshold", threshold, "max relative error (default per scope)");
#ifdef SEAFORMER_FAULT_INJECTION
  grad->add_option("--inject-vjp-fault", fault, "negate the VJP of this op (test builds)");
#endif

  std::string input, output, weights;
  auto* forward = app.add_subcommand("forward", "run a model on a .stn image");
  add_model_args(forward, model_args);
  forward->add_option("input", input, "3 x H x W .stn input")->required();
  forward->add_option("output", output, ".stn file for the logits")->required();
  forward->add_option("--weights", weights, "parameter bundle directory");

  std::size_t demo_hw = 128;
  std::string losses = "cls,cross,feat,out", upsample = "mobilenet";
  ModelArgs demo_args;
  demo_args.variant = "T";
  auto* demo = app.add_subcommand("distill-demo", "teacher/student distillation losses");
  demo->add_option("--variant", demo_args.variant, "T, S, B, L or a variant.json path")
      ->capture_default_str();
  demo->add_option("--hw", demo_hw, "teacher input size (multiple of 128)")->capture_default_str();
  demo->add_option("--classes", demo_args.classes, "classes (default 150)");
  demo->add_option("--losses", losses, "enabled terms from cls,cross,feat,out")
      ->capture_default_str();
  demo->add_option("--upsample", upsample, "bilinear, mobilenet or conv")->capture_default_str();

  auto* oracle = app.add_subcommand("oracle-check", "structural equivalence checks");

  const std::vector<std::string> names = {"params",  "flops",        "bench-scaling", "gradcheck",
                                          "forward", "distill-demo", "oracle-check"};

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = merge_config(std::move(args), names);
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  std::ostringstream buffer;
  int rc = kExitOk;
  try {
#ifdef SEAFORMER_FAULT_INJECTION
    if (!fault.empty()) set_vjp_fault(fault);
#endif
    if (*params) {
      rc = cmd_params(g, model_args, buffer);
    } else if (*flops) {
      rc = cmd_flops(g, model_args, hw, buffer);
    } else if (*bench) {
      rc = cmd_bench_scaling(g, attn, sizes, channels, timed, buffer);
    } else if (*grad) {
      rc = cmd_gradcheck(g, scope, seeds, threshold, buffer);
    } else if (*forward) {
      rc = cmd_forward(g, model_args, input, output, weights, buffer);
    } else if (*demo) {
      rc = cmd_distill_demo(g, demo_args, demo_hw, losses, upsample, buffer);
    } else if (*oracle) {
      rc = cmd_oracle_check(g, buffer);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const std::invalid_argument& e) {
    // ConfigError, ArgumentError, InsufficientDataError: bad flag values.
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }

  if (g.out.empty()) {
    std::cout << buffer.str();
  } else {
    std::ofstream f(g.out, std::ios::binary);
    if (!f) {
      std::cerr << "error: cannot write " << g.out << '\n';
      return kExitUsage;
    }
    f << buffer.str();
  }
  return rc;
}
