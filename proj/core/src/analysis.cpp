// SPDX-License-Identifier: Apache-2.0
#include "seaformer/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seaformer/errors.hpp"
#include "seaformer/nn.hpp"
#include "seaformer/tape.hpp"

namespace seaformer {

MacTally tally_macs(const std::function<void()>& fn) {
  MacRecorder rec;
  fn();
  return rec.tally();
}

std::uint64_t count_macs(const std::function<void()>& fn) { return tally_macs(fn).total; }

ScalingFit fit_scaling(const std::vector<std::pair<double, double>>& area_mac) {
  if (area_mac.size() < 3) {
    throw InsufficientDataError("scaling fit needs at least 3 rows, got " +
                                std::to_string(area_mac.size()));
  }
  const double n = static_cast<double>(area_mac.size());
  double sx = 0, sy = 0;
  std::vector<double> xs, ys;
  for (const auto& [area, mac] : area_mac) {
    if (!(area > 0) || !(mac > 0)) throw ArgumentError("scaling fit needs positive areas and MACs");
    xs.push_back(std::log(area));
    ys.push_back(std::log(mac));
    sx += xs.back();
    sy += ys.back();
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0) throw InsufficientDataError("scaling fit needs at least two distinct areas");
  ScalingFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / n);
  return fit;
}

ScalingFit CostReport::fit() const {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    pts.emplace_back(static_cast<double>(r.h * r.w), static_cast<double>(r.macs));
  }
  return fit_scaling(pts);
}

std::string CostReport::csv() const {
  std::ostringstream os;
  os << "label,h,w,c,macs,wall_ns\n";
  for (const auto& r : rows) {
    os << r.label << ',' << r.h << ',' << r.w << ',' << r.c << ',' << r.macs << ',' << r.wall_ns
       << '\n';
  }
  return os.str();
}

nlohmann::json CostReport::summary() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  j["timing"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"label", r.label}, {"h", r.h}, {"w", r.w}, {"c", r.c}, {"macs", r.macs}});
    j["timing"].push_back({{"label", r.label}, {"h", r.h}, {"w", r.w}, {"wall_ns", r.wall_ns}});
  }
  if (rows.size() >= 3) {
    const ScalingFit f = fit();
    j["fit"] = {{"slope", f.slope}, {"intercept", f.intercept}, {"residual", f.residual}};
  }
  return j;
}

Tensor<double> numerical_gradient(const std::function<double(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, double rel_step) {
  Tensor<double> probe = x.detached();
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    const double h = rel_step * (1.0 + std::abs(orig));
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw OracleError("numerical_gradient: non-finite function value when perturbing element " +
                        std::to_string(i));
    }
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

Tensor<double> numerical_gradient(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, const Tensor<double>& cotangent,
                                  double rel_step) {
  Tensor<double> probe = x.detached();
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    const double h = rel_step * (1.0 + std::abs(orig));
    probe[i] = orig + h;
    const Tensor<double> fp = f(probe);
    probe[i] = orig - h;
    const Tensor<double> fm = f(probe);
    probe[i] = orig;
    if (fp.shape() != cotangent.shape() || fm.shape() != cotangent.shape()) {
      throw DimensionError("numerical_gradient: output " + shape_to_string(fp.shape()) +
                           " does not match cotangent " + shape_to_string(cotangent.shape()));
    }
    long double acc = 0;
    for (std::size_t j = 0; j < fp.numel(); ++j) {
      if (!std::isfinite(fp[j]) || !std::isfinite(fm[j])) {
        throw OracleError("numerical_gradient: non-finite function value when perturbing element " +
                          std::to_string(i));
      }
      acc += static_cast<long double>(cotangent[j]) * (fp[j] - fm[j]);
    }
    g[i] = static_cast<double>(acc / (2 * static_cast<long double>(h)));
  }
  return g;
}

TimingStats time_kernel(const std::function<void()>& fn, std::size_t warmup, std::size_t iters) {
  if (iters < 3) throw ArgumentError("time_kernel needs at least 3 iterations");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<std::int64_t> ns;
  ns.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ns.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
  }
  std::sort(ns.begin(), ns.end());
  TimingStats s;
  s.iters = iters;
  s.min_ns = ns.front();
  s.median_ns = ns.size() % 2 ? ns[ns.size() / 2] : (ns[ns.size() / 2 - 1] + ns[ns.size() / 2]) / 2;
  return s;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

bool GradCheckReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

void GradCheckReport::merge(const GradCheckReport& other) {
  entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

void to_json(nlohmann::json& j, const GradCheckReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"name", e.name},
                       {"checked", e.checked},
                       {"kinks", e.kinks},
                       {"max_rel_error", e.max_rel_error},
                       {"argmax", e.argmax},
                       {"analytic", e.analytic},
                       {"numeric", e.numeric},
                       {"pass", e.pass}});
  }
  j = nlohmann::json{{"label", r.label},
                     {"threshold", r.threshold},
                     {"max_rel_error", r.max_rel_error()},
                     {"pass", r.pass()},
                     {"entries", std::move(entries)}};
}

GradCheckReport gradcheck(const std::string& label, const std::vector<GradInput>& inputs,
                          const std::function<Tensor<double>()>& forward,
                          const GradCheckOptions& options) {
  GradCheckReport report;
  report.label = label;
  report.threshold = options.threshold;

  // Analytic pass.
  std::vector<Tensor<double>> analytic;
  Tensor<double> cot;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    for (const auto& in : inputs) *in.value = tape.watch(*in.value);
    const Tensor<double> out = forward();
    Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
    cot = uniform_tensor<double>(out.shape(), -options.loss_scale, options.loss_scale, rng);
    const auto grads = backward(tape, out, cot);
    for (const auto& in : inputs) {
      analytic.push_back(grad_of(grads, *in.value));
      *in.value = in.value->detached();
    }
  }

  std::vector<std::uint32_t> base_sig;
  {
    BranchRecorder br;
    forward();
    base_sig = br.signature();
  }
  auto eval = [&](std::vector<std::uint32_t>& sig) {
    BranchRecorder br;
    Tensor<double> out = forward();
    sig = br.signature();
    return out;
  };

  std::vector<std::uint32_t> sig_p, sig_m;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& x = *inputs[k].value;
    GradCheckEntry entry;
    entry.name = inputs[k].name;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double orig = x[i];
      double h = options.rel_step * (1.0 + std::abs(orig));
      bool smooth = false;
      long double numeric = 0;
      for (std::size_t attempt = 0; attempt <= options.kink_halvings; ++attempt, h /= 2) {
        x[i] = orig + h;
        const Tensor<double> op = eval(sig_p);
        x[i] = orig - h;
        const Tensor<double> om = eval(sig_m);
        x[i] = orig;
        if (sig_p != base_sig || sig_m != base_sig) continue;
        // Per-output differences first: outputs that do not depend on x[i]
        // cancel exactly instead of adding rounding noise.
        numeric = 0;
        for (std::size_t j = 0; j < op.numel(); ++j) {
          const double d = op[j] - om[j];
          if (d != 0) numeric += static_cast<long double>(cot[j]) * d;
        }
        numeric /= 2 * static_cast<long double>(h);
        smooth = true;
        break;
      }
      if (!smooth) {
        ++entry.kinks;
        continue;
      }
      const double n = static_cast<double>(numeric);
      if (!std::isfinite(n)) {
        throw OracleError("gradcheck " + label + ": non-finite difference at " + entry.name + "[" +
                          std::to_string(i) + "]");
      }
      const double a = analytic[k][i];
      const double err = relative_error(a, n);
      ++entry.checked;
      if (entry.checked == 1 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.argmax = i;
        entry.analytic = a;
        entry.numeric = n;
      }
    }
    entry.pass = entry.max_rel_error < options.threshold;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

void randomize_params(const std::function<void(const ParamVisitor<double>&)>& visit,
                      std::uint64_t seed, bool keep_weights) {
  Rng rng(seed);
  visit([&](const std::string&, ParamRole role, Tensor<double>& t) {
    double lo = -0.5, hi = 0.5;
    switch (role) {
      case ParamRole::kWeight:
        if (keep_weights) return;
        break;
      case ParamRole::kBnGamma:
      case ParamRole::kBnRunningVar:
        lo = 0.5;
        hi = 1.5;
        break;
      default:
        break;
    }
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  });
}

}  // namespace seaformer
