#include "mortfc/mcs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "mortfc/rng.hpp"

namespace mortfc {

namespace {

constexpr double kTiny = 1e-300;
constexpr double kInf = std::numeric_limits<double>::infinity();

void validate_panel(const LossPanel& panel) {
  if (panel.n_models() < 1) throw std::invalid_argument("mcs: empty panel");
  for (int m = 0; m < panel.n_models(); ++m)
    for (int o = 0; o < panel.n_origins(); ++o) {
      const double l = panel.losses(m, o);
      if (!std::isfinite(l))
        throw std::invalid_argument("mcs: missing loss for model " +
                                    std::to_string(panel.model_labels[m]) + " at origin " +
                                    std::to_string(panel.origin_years[o]));
      if (l < 0.0)
        throw std::invalid_argument("mcs: negative loss for model " +
                                    std::to_string(panel.model_labels[m]));
    }
}

// Studentized value with the deterministic-dominance convention for
// zero-variance differentials.
double studentize(double dbar, double var) {
  if (var > kTiny) return dbar / std::sqrt(var);
  if (std::abs(dbar) <= 1e-14) return 0.0;
  return dbar > 0.0 ? kInf : -kInf;
}

// t statistic of the slope in y_t = a + b x_t.
double lag_regression_t(std::span<const double> series, int lag) {
  const int n = static_cast<int>(series.size()) - lag;
  if (n < 3) return 0.0;
  double mx = 0.0, my = 0.0;
  for (int t = 0; t < n; ++t) {
    mx += series[t];
    my += series[t + lag];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int t = 0; t < n; ++t) {
    sxx += (series[t] - mx) * (series[t] - mx);
    sxy += (series[t] - mx) * (series[t + lag] - my);
  }
  if (sxx <= kTiny) return 0.0;
  const double b = sxy / sxx;
  const double a = my - b * mx;
  double rss = 0.0;
  for (int t = 0; t < n; ++t) {
    const double r = series[t + lag] - a - b * series[t];
    rss += r * r;
  }
  const double s2 = rss / std::max(1, n - 2);
  if (s2 <= kTiny) return b == 0.0 ? 0.0 : kInf;
  return b / std::sqrt(s2 / sxx);
}

}  // namespace

std::string to_string(McsStatistic s) { return s == McsStatistic::t_max ? "T_max" : "T_R"; }

double McsResult::p_value_of(int label) const {
  for (const auto& [l, p] : mcs_p_values)
    if (l == label) return p;
  throw std::out_of_range("mcs: unknown model label " + std::to_string(label));
}

LossDifferentials loss_differentials(const LossPanel& panel, std::span<const int> members) {
  validate_panel(panel);
  if (members.size() < 2) throw std::invalid_argument("loss_differentials: need >= 2 members");
  LossDifferentials out;
  out.members.assign(members.begin(), members.end());
  const int m = static_cast<int>(members.size());
  const int N = panel.n_origins();
  std::vector<int> rows(m);
  for (int i = 0; i < m; ++i) rows[i] = panel.row_of(members[i]);

  out.pairwise.assign(m, Eigen::MatrixXd::Zero(m, N));
  out.relative.resize(m, N);
  for (int r = 0; r < m; ++r)
    for (int x = 0; x < m; ++x)
      out.pairwise[r].row(x) = panel.losses.row(rows[r]) - panel.losses.row(rows[x]);
  for (int r = 0; r < m; ++r) {
    Eigen::RowVectorXd rel = Eigen::RowVectorXd::Zero(N);
    for (int x = 0; x < m; ++x) rel += out.pairwise[r].row(x);
    out.relative.row(r) = rel / static_cast<double>(m);
  }
  return out;
}

int auto_block_length(const LossPanel& panel, std::span<const int> members) {
  const int N = panel.n_origins();
  if (N < 5) throw std::invalid_argument("auto_block_length: need at least 5 periods");
  const int p_max = std::min(10, N / 3);
  int best = 1;
  for (std::size_t a = 0; a < members.size(); ++a) {
    for (std::size_t b = a + 1; b < members.size(); ++b) {
      std::vector<double> d(N);
      const int ra = panel.row_of(members[a]);
      const int rb = panel.row_of(members[b]);
      for (int o = 0; o < N; ++o) d[o] = panel.losses(ra, o) - panel.losses(rb, o);
      int run = 0;
      for (int lag = 1; lag <= p_max; ++lag) {
        if (std::abs(lag_regression_t(d, lag)) > 1.96)
          run = lag;
        else
          break;
      }
      best = std::max(best, run);
    }
  }
  return best;
}

McsResult run_mcs(const LossPanel& panel, const McsConfig& config) {
  validate_panel(panel);
  if (config.n_bootstrap < 100) throw std::invalid_argument("mcs: n_bootstrap must be >= 100");
  if (!(config.confidence > 0.0 && config.confidence < 1.0))
    throw std::invalid_argument("mcs: confidence must be in (0,1)");

  McsResult result;
  result.config = config;
  const int M0 = panel.n_models();
  const int N = panel.n_origins();

  if (M0 == 1) {
    result.superior_set = {panel.model_labels[0]};
    result.mcs_p_values = {{panel.model_labels[0], 1.0}};
    result.block_length_used = config.block_length.value_or(1);
    return result;
  }
  if (N < 5) throw std::invalid_argument("mcs: need at least 5 periods");

  const int L = config.block_length.value_or(auto_block_length(panel, panel.model_labels));
  if (L < 1) throw std::invalid_argument("mcs: block length must be >= 1");
  result.block_length_used = L;

  const int B = config.n_bootstrap;
  // Per-model time means and their moving-blocks bootstrap counterparts.
  Eigen::VectorXd meanl(M0);
  for (int r = 0; r < M0; ++r) meanl(r) = panel.losses.row(r).mean();

  Eigen::MatrixXd bmeanl(B, M0);
  const int n_blocks = (N + L - 1) / L;
  const int n_threads = std::max(1, config.n_threads);
  auto resample_range = [&](int b_lo, int b_hi) {
    std::vector<int> idx(N);
    for (int b = b_lo; b < b_hi; ++b) {
      RngStream rng(config.seed, static_cast<std::uint64_t>(b));
      int at = 0;
      for (int blk = 0; blk < n_blocks && at < N; ++blk) {
        const int start = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(N)));
        for (int o = 0; o < L && at < N; ++o) idx[at++] = (start + o) % N;
      }
      for (int r = 0; r < M0; ++r) {
        double s = 0.0;
        for (int o = 0; o < N; ++o) s += panel.losses(r, idx[o]);
        bmeanl(b, r) = s / N;
      }
    }
  };
  if (n_threads == 1) {
    resample_range(0, B);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (B + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const int lo = t * chunk;
      const int hi = std::min(B, lo + chunk);
      if (lo < hi) pool.emplace_back(resample_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  // Pairwise bootstrap variances are member-set independent.
  Eigen::MatrixXd var_pair = Eigen::MatrixXd::Zero(M0, M0);
  for (int r = 0; r < M0; ++r) {
    for (int x = r + 1; x < M0; ++x) {
      const double dbar = meanl(r) - meanl(x);
      double acc = 0.0;
      for (int b = 0; b < B; ++b) {
        const double dev = (bmeanl(b, r) - bmeanl(b, x)) - dbar;
        acc += dev * dev;
      }
      var_pair(r, x) = var_pair(x, r) = acc / B;
    }
  }

  std::vector<int> current(M0);
  for (int r = 0; r < M0; ++r) current[r] = r;

  double running_pmax = 0.0;
  const double threshold = 1.0 - config.confidence;
  std::vector<std::pair<int, double>> pvals;

  while (true) {
    const int m = static_cast<int>(current.size());
    if (m == 1) {
      result.superior_set = {panel.model_labels[current[0]]};
      pvals.emplace_back(panel.model_labels[current[0]], 1.0);
      break;
    }

    // Relative quantities over the current set.
    double avg_mean = 0.0;
    for (int r : current) avg_mean += meanl(r);
    avg_mean /= m;
    Eigen::VectorXd davg(B);
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int r : current) s += bmeanl(b, r);
      davg(b) = s / m;
    }

    std::vector<double> dbar_rel(m), var_rel(m), t_rel(m);
    for (int i = 0; i < m; ++i) {
      const int r = current[i];
      dbar_rel[i] = meanl(r) - avg_mean;
      double acc = 0.0;
      for (int b = 0; b < B; ++b) {
        const double dev = (bmeanl(b, r) - davg(b)) - dbar_rel[i];
        acc += dev * dev;
      }
      var_rel[i] = acc / B;
      t_rel[i] = studentize(dbar_rel[i], var_rel[i]);
    }

    Eigen::MatrixXd t_pair(m, m);
    for (int i = 0; i < m; ++i) {
      t_pair(i, i) = 0.0;
      for (int j = i + 1; j < m; ++j) {
        const double t = studentize(meanl(current[i]) - meanl(current[j]),
                                    var_pair(current[i], current[j]));
        t_pair(i, j) = t;
        t_pair(j, i) = -t;
      }
    }

    double T_obs = -kInf;
    if (config.statistic == McsStatistic::t_max) {
      for (int i = 0; i < m; ++i) T_obs = std::max(T_obs, t_rel[i]);
    } else {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) T_obs = std::max(T_obs, std::abs(t_pair(i, j)));
    }

    // Recentered bootstrap null distribution of the max statistic.
    int count_ge = 0;
    for (int b = 0; b < B; ++b) {
      double Tb = -kInf;
      if (config.statistic == McsStatistic::t_max) {
        for (int i = 0; i < m; ++i) {
          const int r = current[i];
          const double dev = (bmeanl(b, r) - davg(b)) - dbar_rel[i];
          Tb = std::max(Tb, var_rel[i] > kTiny ? dev / std::sqrt(var_rel[i]) : 0.0);
        }
      } else {
        for (int i = 0; i < m; ++i) {
          for (int j = i + 1; j < m; ++j) {
            const double dbar = meanl(current[i]) - meanl(current[j]);
            const double dev = (bmeanl(b, current[i]) - bmeanl(b, current[j])) - dbar;
            const double v = var_pair(current[i], current[j]);
            Tb = std::max(Tb, v > kTiny ? std::abs(dev) / std::sqrt(v) : 0.0);
          }
        }
      }
      if (Tb >= T_obs) ++count_ge;
    }
    const double p = static_cast<double>(count_ge) / B;

    if (p >= threshold) {
      // EPA accepted: the current set is the superior set.
      const double accepted = std::max(p, running_pmax);
      for (int i = 0; i < m; ++i) {
        result.superior_set.push_back(panel.model_labels[current[i]]);
        pvals.emplace_back(panel.model_labels[current[i]], accepted);
      }
      std::sort(result.superior_set.begin(), result.superior_set.end());
      break;
    }

    // Reject: remove the model picked by the elimination rule matched to the
    // statistic; ties break on the lowest label.
    int worst = -1;
    double worst_val = -kInf;
    for (int i = 0; i < m; ++i) {
      double val;
      if (config.statistic == McsStatistic::t_max) {
        val = t_rel[i];
      } else {
        val = -kInf;
        for (int j = 0; j < m; ++j)
          if (j != i) val = std::max(val, t_pair(i, j));
      }
      if (worst < 0 || val > worst_val ||
          (val == worst_val &&
           panel.model_labels[current[i]] < panel.model_labels[current[worst]])) {
        worst = i;
        worst_val = val;
      }
    }

    running_pmax = std::max(running_pmax, p);
    result.trace.push_back({panel.model_labels[current[worst]], T_obs, worst_val, p});
    pvals.emplace_back(panel.model_labels[current[worst]], running_pmax);
    current.erase(current.begin() + worst);
  }

  std::sort(pvals.begin(), pvals.end());
  result.mcs_p_values = pvals;
  return result;
}

nlohmann::json mcs_result_to_json(const McsResult& result) {
  nlohmann::json j;
  j["superior_set"] = result.superior_set;
  j["block_length"] = result.block_length_used;
  j["config"] = {{"statistic", to_string(result.config.statistic)},
                 {"confidence", result.config.confidence},
                 {"n_bootstrap", result.config.n_bootstrap},
                 {"seed", result.config.seed}};
  for (const auto& step : result.trace)
    j["trace"].push_back({{"eliminated", step.eliminated_label},
                          {"statistic", step.statistic},
                          {"elimination_value", step.elimination_value},
                          {"p_value", step.p_value}});
  if (result.trace.empty()) j["trace"] = nlohmann::json::array();
  for (const auto& [label, p] : result.mcs_p_values)
    j["mcs_p_values"].push_back({{"model", label}, {"p_value", p}});
  return j;
}

McsResult mcs_result_from_json(const nlohmann::json& j) {
  McsResult r;
  r.superior_set = j.at("superior_set").get<std::vector<int>>();
  r.block_length_used = j.at("block_length").get<int>();
  const auto& cfg = j.at("config");
  r.config.statistic =
      cfg.at("statistic").get<std::string>() == "T_max" ? McsStatistic::t_max : McsStatistic::t_r;
  r.config.confidence = cfg.at("confidence").get<double>();
  r.config.n_bootstrap = cfg.at("n_bootstrap").get<int>();
  r.config.seed = cfg.at("seed").get<std::uint64_t>();
  for (const auto& step : j.at("trace"))
    r.trace.push_back({step.at("eliminated").get<int>(), step.at("statistic").get<double>(),
                       step.at("elimination_value").get<double>(),
                       step.at("p_value").get<double>()});
  for (const auto& pv : j.at("mcs_p_values"))
    r.mcs_p_values.emplace_back(pv.at("model").get<int>(), pv.at("p_value").get<double>());
  return r;
}

void write_mcs_pvalues_csv(const McsResult& result, std::ostream& out) {
  out << "model,mcs_p_value\n";
  for (const auto& [label, p] : result.mcs_p_values)
    out << label << ',' << format_double(p) << '\n';
}

}  // namespace mortfc
