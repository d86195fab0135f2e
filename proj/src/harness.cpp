#include "polymhe/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

namespace polymhe {

namespace {

std::string fmt17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// order-stable compensated accumulation
struct Neumaier {
  double s = 0.0, c = 0.0;
  void add(double x) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  double value() const { return s + c; }
};

char branch_char(ArrivalBranch b) {
  switch (b) {
    case ArrivalBranch::forgetting: return 'F';
    case ArrivalBranch::contraction: return 'C';
    case ArrivalBranch::skipped: return 'S';
  }
  return '?';
}

}  // namespace

// ---------------------------------------------------------------- overrides

Scenario apply_overrides(Scenario s, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, raw] : kv) {
    try {
      if (key == "N" || key == "horizon") {
        s.mhe.horizon = std::stoi(raw);
      } else if (key == "l_max") {
        s.mhe.l_max = std::stoi(raw);
      } else if (key == "epsilon_stop") {
        s.mhe.epsilon_stop = std::stod(raw);
      } else if (key == "epsilon_bound") {
        s.mhe.epsilon_bound = std::stod(raw);
      } else if (key == "use_bound_stop") {
        s.mhe.use_bound_stop = std::stoi(raw) != 0;
      } else if (key == "per_step_alpha") {
        s.mhe.per_step_alpha = std::stoi(raw) != 0;
      } else if (key == "s_w") {
        s.noise.s_w = std::stod(raw);
      } else if (key == "s_v") {
        s.noise.s_v = std::stod(raw);
      } else if (key == "seed") {
        s.noise.seed = std::stoull(raw);
      } else if (key == "T" || key == "run_length") {
        s.run_length = std::stoi(raw);
      } else if (key == "trials") {
        s.trials = std::stoi(raw);
      } else if (key == "sigma_x") {
        s.sigma_x = std::stod(raw);
      } else if (key == "c_x") {
        s.c_x = std::stod(raw);
      } else if (key == "lambda_x") {
        s.lambda_x = std::stod(raw);
      } else if (key == "sigma_alpha") {
        s.sigma_alpha = std::stod(raw);
      } else if (key == "c_alpha") {
        s.c_alpha = std::stod(raw);
      } else if (key == "lambda_alpha") {
        s.lambda_alpha = std::stod(raw);
      } else if (key == "fixed_prior_kappa") {
        s.fixed_prior_kappa = std::stod(raw);
      } else if (key == "fie_window_cap") {
        s.fie_window_cap = std::stoi(raw);
      } else if (key == "p1_init") {
        s.p1_init = std::stod(raw);
      } else if (key == "p2") {
        s.p2 = std::stod(raw);
      } else if (key == "p1_schedule_span") {
        s.p1_schedule_span = std::stoi(raw);
      } else {
        throw std::invalid_argument("unknown override key: " + key);
      }
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("override " + key + ": bad value '" + raw + "'");
    }
  }
  if (s.mhe.horizon < 1 || s.run_length < 1 || s.trials < 1) {
    throw std::invalid_argument("override: N, T and trials must be >= 1");
  }
  return s;
}

// --------------------------------------------------------------- estimators

AdaptiveMheEstimator::AdaptiveMheEstimator(const Scenario& s)
    : model_(s.model), weights_(s.weights), config_(s.mhe), buffer_(s.make_buffer()) {}

Vector AdaptiveMheEstimator::update(const Vector& y) {
  last_ = step(buffer_, model_, weights_, config_, y);
  buffer_ = last_.buffer;
  return last_.estimate.x_hat.back();
}

namespace {

// Streaming Kalman filter; the first measurement updates the prior directly.
class KalmanEstimator : public StateEstimator {
 public:
  KalmanEstimator(std::string name, Matrix A, Matrix C, const Scenario& s)
      : name_(std::move(name)), A_(std::move(A)), C_(std::move(C)) {
    const int n = static_cast<int>(s.x0_prior.size());
    state_.x_hat = s.x0_prior;
    state_.P = s.lambda_x * Matrix::Identity(n, n);
    Q_ = s.noise.s_w * s.noise.s_w * Matrix::Identity(n, n);
    state_.R = s.noise.s_v * s.noise.s_v *
               Matrix::Identity(s.model.output_dim(), s.model.output_dim());
  }

  Vector update(const Vector& y) override {
    state_.Q = first_ ? Matrix::Zero(Q_.rows(), Q_.cols()) : Q_;
    const Matrix A = first_ ? Matrix::Identity(A_.rows(), A_.cols()) : A_;
    state_ = kf_step(state_, A, C_, y).state;
    first_ = false;
    return state_.x_hat;
  }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Matrix A_, C_;
  Matrix Q_;
  KalmanState state_;
  bool first_ = true;
};

// EKF over the nonlinear benchmark plant; `track_schedule` selects the true
// time-varying p1 path, otherwise p1 stays frozen at its initial value.
class EkfEstimator : public StateEstimator {
 public:
  EkfEstimator(std::string name, const Scenario& s, bool track_schedule)
      : name_(std::move(name)), p2_(s.p2) {
    const int span = s.p1_schedule_span < 0 ? s.run_length : s.p1_schedule_span;
    p1_path_ = p1_schedule(s.p1_init, s.run_length, span);
    track_ = track_schedule;
    state_.x_hat = s.x0_prior;
    state_.P = s.lambda_x * Matrix::Identity(2, 2);
    Q_ = s.noise.s_w * s.noise.s_w * Matrix::Identity(2, 2);
    state_.R = s.noise.s_v * s.noise.s_v * Matrix::Identity(1, 1);
    C_ = nonlinear_output_matrix();
  }

  Vector update(const Vector& y) override {
    const double p1 = track_ ? p1_path_[std::min<size_t>(k_ > 0 ? k_ - 1 : 0,
                                                         p1_path_.size() - 1)]
                             : p1_path_[0];
    auto f = [&](const Vector& x) { return nonlinear_dynamics(x, p1, p2_); };
    auto J = [&](const Vector& x) { return nonlinear_jacobian(x, p1, p2_); };
    std::function<Vector(const Vector&)> f_id = [](const Vector& x) { return x; };
    std::function<Matrix(const Vector&)> J_id = [](const Vector& x) {
      return Matrix::Identity(x.size(), x.size()).eval();
    };
    state_.Q = k_ == 0 ? Matrix::Zero(2, 2) : Q_;
    state_ = k_ == 0 ? ekf_step(state_, f_id, J_id, C_, y).state
                     : ekf_step(state_, f, J, C_, y).state;
    ++k_;
    return state_.x_hat;
  }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  double p2_;
  std::vector<double> p1_path_;
  bool track_ = false;
  Matrix C_, Q_;
  KalmanState state_;
  size_t k_ = 0;
};

}  // namespace

std::vector<std::string> available_estimators(const Scenario& s) {
  if (s.kind == PlantKind::linear_polytopic) {
    return {"mhe-adaptive", "mhe-fixed-prior", "fie", "kf-true", "kf-nominal"};
  }
  return {"mhe-adaptive", "mhe-fixed-prior", "fie", "ekf-true", "ekf-nominal"};
}

std::unique_ptr<StateEstimator> make_estimator(const std::string& name,
                                               const Scenario& s) {
  const bool linear = s.kind == PlantKind::linear_polytopic;
  if (name == "mhe-adaptive") {
    return std::make_unique<AdaptiveMheEstimator>(s);
  }
  if (name == "mhe-fixed-prior") {
    const BlendedModel nominal = blend(s.model, SimplexWeights(s.alpha_nominal));
    const double L = std::pow(s.fixed_prior_kappa, s.mhe.horizon);
    return std::make_unique<FixedPriorMhe>(nominal.A, nominal.C, s.x0_prior, L,
                                           s.weights, s.mhe.horizon, s.mhe.qp);
  }
  if (name == "fie") {
    FullInformationEstimator::ModelCallback cb;
    if (linear) {
      const BlendedModel truth = blend(s.model, SimplexWeights(s.alpha_true));
      cb = [A = truth.A](int, const Vector& x, Matrix* Ao, Vector* co) {
        *Ao = A;
        *co = Vector::Zero(x.size());
      };
    } else {
      const int span = s.p1_schedule_span < 0 ? s.run_length : s.p1_schedule_span;
      auto p1 = p1_schedule(s.p1_init, s.run_length, span);
      cb = [p1, p2 = s.p2](int k, const Vector& x, Matrix* Ao, Vector* co) {
        const double p = p1[std::min<size_t>(std::max(k, 0), p1.size() - 1)];
        *Ao = nonlinear_jacobian(x, p, p2);
        *co = nonlinear_dynamics(x, p, p2) - *Ao * x;
      };
    }
    const Matrix C = linear ? blend(s.model, SimplexWeights(s.alpha_true)).C
                            : nonlinear_output_matrix();
    return std::make_unique<FullInformationEstimator>(
        C, s.x0_prior, s.lambda_x, s.weights, cb, s.fie_window_cap, s.mhe.qp);
  }
  if (linear && name == "kf-true") {
    const BlendedModel m = blend(s.model, SimplexWeights(s.alpha_true));
    return std::make_unique<KalmanEstimator>(name, m.A, m.C, s);
  }
  if (linear && name == "kf-nominal") {
    const BlendedModel m = blend(s.model, SimplexWeights(s.alpha_nominal));
    return std::make_unique<KalmanEstimator>(name, m.A, m.C, s);
  }
  if (!linear && name == "ekf-true") {
    return std::make_unique<EkfEstimator>(name, s, true);
  }
  if (!linear && name == "ekf-nominal") {
    return std::make_unique<EkfEstimator>(name, s, false);
  }
  throw std::invalid_argument("unknown estimator '" + name + "' for scenario " +
                              s.name);
}

// -------------------------------------------------------------- trial loops

namespace {

struct TrialScore {
  Vector mse;
  bool diverged = false;
};

constexpr double kDivergenceNorm = 1e6;

TrialScore score_estimator(const Scenario& s, const std::string& name,
                           const Trajectory& truth,
                           std::vector<std::string>* diag_rows) {
  TrialScore out;
  const int n = static_cast<int>(s.x0_true.size());
  out.mse = Vector::Zero(n);
  std::unique_ptr<StateEstimator> est = make_estimator(name, s);
  auto* adaptive = dynamic_cast<AdaptiveMheEstimator*>(est.get());
  Vector sse = Vector::Zero(n);
  int count = 0;
  try {
    for (int k = 0; k <= s.run_length; ++k) {
      const Vector xh = est->update(truth.outputs[k]);
      if (!xh.allFinite() || xh.norm() > kDivergenceNorm) {
        out.diverged = true;
        return out;
      }
      if (k >= s.mhe.horizon) {
        const Vector e = xh - truth.states[k];
        sse += e.cwiseProduct(e);
        ++count;
      }
      if (diag_rows && adaptive) {
        const StepResult& r = adaptive->last();
        std::ostringstream row;
        row << k << ',' << r.report.l_used << ',' << r.report.l_bound << ',';
        for (size_t i = 0; i < r.report.costs_x.size(); ++i) {
          row << (i ? "|" : "") << fmt17(r.report.costs_x[i]);
        }
        row << ',';
        for (int i = 0; i < r.estimate.alpha_hat.size(); ++i) {
          row << (i ? "|" : "") << fmt17(r.estimate.alpha_hat(i));
        }
        row << ',' << fmt17(r.diagnostics.trace_Px) << ','
            << fmt17(r.diagnostics.trace_Palpha) << ','
            << fmt17(r.diagnostics.theta_x) << ',' << branch_char(r.diagnostics.branch_x)
            << ',' << fmt17(r.diagnostics.theta_alpha) << ','
            << branch_char(r.diagnostics.branch_alpha);
        diag_rows->push_back(row.str());
      }
    }
  } catch (const std::runtime_error&) {
    out.diverged = true;
    return out;
  }
  if (count > 0) out.mse = sse / count;
  return out;
}

Scenario configured_scenario(const RunConfig& cfg) {
  Scenario s = apply_overrides(load_scenario(cfg.scenario), cfg.overrides);
  if (cfg.trials > 0) s.trials = cfg.trials;
  if (cfg.seed) s.noise.seed = *cfg.seed;
  return s;
}

void write_file(const std::string& dir, const std::string& name,
                const std::string& content) {
  std::filesystem::create_directories(dir);
  std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary);
  f << content;
}

MseTable run_table(const Scenario& s, const std::vector<std::string>& names,
                   int jobs, std::vector<std::string>* diag_rows) {
  const int trials = s.trials;
  const int n_est = static_cast<int>(names.size());
  std::vector<std::vector<TrialScore>> scores(
      n_est, std::vector<TrialScore>(trials));

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int t = next.fetch_add(1); t < trials; t = next.fetch_add(1)) {
      const Trajectory truth = s.simulate_truth(t);
      for (int e = 0; e < n_est; ++e) {
        scores[e][t] =
            score_estimator(s, names[e], truth,
                            (t == 0 && diag_rows && names[e] == "mhe-adaptive")
                                ? diag_rows
                                : nullptr);
      }
    }
  };
  const int n_threads = std::max(1, std::min(jobs, trials));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  MseTable table;
  table.state_dim = static_cast<int>(s.x0_true.size());
  table.trials = trials;
  for (int e = 0; e < n_est; ++e) {
    MseEntry entry;
    entry.estimator = names[e];
    entry.mse = Vector::Zero(table.state_dim);
    entry.ci95 = Vector::Zero(table.state_dim);
    for (int c = 0; c < table.state_dim; ++c) {
      Neumaier mean_acc;
      int used = 0;
      for (int t = 0; t < trials; ++t) {
        if (scores[e][t].diverged) continue;
        mean_acc.add(scores[e][t].mse(c));
        ++used;
      }
      const double mean = used ? mean_acc.value() / used : 0.0;
      Neumaier var_acc;
      for (int t = 0; t < trials; ++t) {
        if (scores[e][t].diverged) continue;
        const double d = scores[e][t].mse(c) - mean;
        var_acc.add(d * d);
      }
      entry.mse(c) = mean;
      entry.ci95(c) =
          used > 1 ? 1.96 * std::sqrt(var_acc.value() / (used - 1) / used) : 0.0;
      entry.trials_used = used;
    }
    entry.diverged = trials - entry.trials_used;
    table.entries.push_back(std::move(entry));
  }
  return table;
}

}  // namespace

MseTable run_trials(const RunConfig& cfg) {
  Scenario s = configured_scenario(cfg);
  std::vector<std::string> names =
      cfg.estimators.empty() ? available_estimators(s) : cfg.estimators;
  for (const auto& n : names) (void)make_estimator(n, s);  // validate early

  std::vector<std::string> diag_rows;
  MseTable table = run_table(s, names, cfg.jobs,
                             cfg.out_dir.empty() ? nullptr : &diag_rows);
  if (!cfg.out_dir.empty()) {
    write_file(cfg.out_dir, "mse_table.csv", to_csv(table));
    std::string diag =
        "k,l_used,l_bound,psi_x,alpha_hat,trace_Px,trace_Palpha,theta_x,branch_x,"
        "theta_alpha,branch_alpha\n";
    for (const auto& row : diag_rows) diag += row + "\n";
    write_file(cfg.out_dir, "diagnostics.csv", diag);
  }
  return table;
}

SweepResult sweep_l_N(const RunConfig& cfg, const std::vector<int>& l_values,
                      const std::vector<int>& N_values) {
  const Scenario base = configured_scenario(cfg);
  SweepResult result;
  result.state_dim = static_cast<int>(base.x0_true.size());
  for (int N : N_values) {
    for (int l : l_values) {
      Scenario s = base;
      s.mhe.horizon = N;
      s.mhe.l_max = l;
      s.mhe.epsilon_stop = 1e-300;  // run all l iterations
      s.mhe.use_bound_stop = false;
      const MseTable t = run_table(s, {"mhe-adaptive"}, cfg.jobs, nullptr);
      SweepRow row;
      row.l = l;
      row.N = N;
      row.mse = t.entries[0].mse;
      result.rows.push_back(std::move(row));
    }
  }
  if (!cfg.out_dir.empty()) {
    write_file(cfg.out_dir, "sweep_l_N.csv", to_csv(result));
  }
  return result;
}

TraceResult trace_alpha(const RunConfig& cfg,
                        const std::vector<double>& noise_levels) {
  const Scenario base = configured_scenario(cfg);
  TraceResult result;
  result.q = base.model.vertex_count();
  result.has_params = base.kind == PlantKind::nonlinear_sine;
  for (double s_w : noise_levels) {
    Scenario s = base;
    s.noise.s_w = s_w;
    const Trajectory truth = s.simulate_truth(0);
    AdaptiveMheEstimator est(s);
    for (int k = 0; k <= s.run_length; ++k) {
      est.update(truth.outputs[k]);
      TraceRow row;
      row.s_w = s_w;
      row.k = k;
      row.alpha = est.last().estimate.alpha_hat;
      if (result.has_params) {
        // implied parameters: fit x1 + bbar*x2 ~ p1*x1 + p2*x2 over the window
        double bbar = 0.0;
        for (int i = 0; i < result.q; ++i) {
          bbar += row.alpha(i) * s.model.vertex_A(i)(1, 1);
        }
        const auto& xs = est.last().estimate.x_hat;
        Matrix R(static_cast<int>(xs.size()), 2);
        Vector tgt(static_cast<int>(xs.size()));
        for (size_t j = 0; j < xs.size(); ++j) {
          R(static_cast<int>(j), 0) = xs[j](0);
          R(static_cast<int>(j), 1) = xs[j](1);
          tgt(static_cast<int>(j)) = xs[j](0) + bbar * xs[j](1);
        }
        const Matrix G = R.transpose() * R + 1e-12 * Matrix::Identity(2, 2);
        const Vector p = G.ldlt().solve(R.transpose() * tgt);
        row.p1_hat = p(0);
        row.p2_hat = p(1);
      }
      result.rows.push_back(std::move(row));
    }
  }
  if (!cfg.out_dir.empty()) {
    write_file(cfg.out_dir, "alpha_trace.csv", to_csv(result));
  }
  return result;
}

// ---------------------------------------------------------------------- csv

std::string to_csv(const MseTable& t) {
  std::string out = "estimator,component,mse,ci95,trials_used,diverged\n";
  for (const auto& e : t.entries) {
    for (int c = 0; c < t.state_dim; ++c) {
      out += e.estimator + "," + std::to_string(c) + "," + fmt17(e.mse(c)) + "," +
             fmt17(e.ci95(c)) + "," + std::to_string(e.trials_used) + "," +
             std::to_string(e.diverged) + "\n";
    }
  }
  return out;
}

MseTable mse_table_from_csv(const std::string& text) {
  MseTable t;
  const auto lines = csv_lines(text);
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    if (f.size() != 6) throw std::runtime_error("mse csv: bad row " + lines[i]);
    const int comp = std::stoi(f[1]);
    t.state_dim = std::max(t.state_dim, comp + 1);
    if (t.entries.empty() || t.entries.back().estimator != f[0]) {
      t.entries.push_back({f[0], Vector::Zero(comp + 1), Vector::Zero(comp + 1),
                           std::stoi(f[4]), std::stoi(f[5])});
    }
    auto& e = t.entries.back();
    if (e.mse.size() < comp + 1) {
      e.mse.conservativeResize(comp + 1);
      e.ci95.conservativeResize(comp + 1);
    }
    e.mse(comp) = std::stod(f[2]);
    e.ci95(comp) = std::stod(f[3]);
  }
  for (auto& e : t.entries) {
    if (e.mse.size() != t.state_dim) {
      throw std::runtime_error("mse csv: ragged components");
    }
    t.trials = e.trials_used + e.diverged;
  }
  return t;
}

std::string to_csv(const SweepResult& r) {
  std::string out = "l,N";
  for (int c = 0; c < r.state_dim; ++c) out += ",mse_x" + std::to_string(c);
  out += "\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.l) + "," + std::to_string(row.N);
    for (int c = 0; c < r.state_dim; ++c) out += "," + fmt17(row.mse(c));
    out += "\n";
  }
  return out;
}

SweepResult sweep_from_csv(const std::string& text) {
  SweepResult r;
  const auto lines = csv_lines(text);
  if (lines.empty()) return r;
  r.state_dim = static_cast<int>(split(lines[0], ',').size()) - 2;
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    SweepRow row;
    row.l = std::stoi(f[0]);
    row.N = std::stoi(f[1]);
    row.mse = Vector::Zero(r.state_dim);
    for (int c = 0; c < r.state_dim; ++c) row.mse(c) = std::stod(f[2 + c]);
    r.rows.push_back(std::move(row));
  }
  return r;
}

std::string to_csv(const TraceResult& t) {
  std::string out = "s_w,k";
  for (int i = 0; i < t.q; ++i) out += ",alpha_" + std::to_string(i + 1);
  if (t.has_params) out += ",p1_hat,p2_hat";
  out += "\n";
  for (const auto& row : t.rows) {
    out += fmt17(row.s_w) + "," + std::to_string(row.k);
    for (int i = 0; i < t.q; ++i) out += "," + fmt17(row.alpha(i));
    if (t.has_params) out += "," + fmt17(row.p1_hat) + "," + fmt17(row.p2_hat);
    out += "\n";
  }
  return out;
}

TraceResult trace_from_csv(const std::string& text) {
  TraceResult t;
  const auto lines = csv_lines(text);
  if (lines.empty()) return t;
  const auto header = split(lines[0], ',');
  t.has_params = header.back() == "p2_hat";
  t.q = static_cast<int>(header.size()) - 2 - (t.has_params ? 2 : 0);
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    TraceRow row;
    row.s_w = std::stod(f[0]);
    row.k = std::stoi(f[1]);
    row.alpha = Vector::Zero(t.q);
    for (int c = 0; c < t.q; ++c) row.alpha(c) = std::stod(f[2 + c]);
    if (t.has_params) {
      row.p1_hat = std::stod(f[2 + t.q]);
      row.p2_hat = std::stod(f[3 + t.q]);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ----------------------------------------------------------------- validate

int validate_scenario(const RunConfig& cfg, std::ostream& log) {
  const Scenario s = configured_scenario(cfg);
  int failures = 0;
  auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    log << (ok ? "[ok]   " : "[FAIL] ") << name;
    if (!detail.empty()) log << " (" << detail << ")";
    log << "\n";
    if (!ok) ++failures;
  };

  const CounterRng rng(s.noise.seed + 17);
  const int q = s.model.vertex_count();

  {  // blend linearity
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      Vector a(q), b(q);
      for (int i = 0; i < q; ++i) {
        a(i) = std::abs(rng.normal(rep, 0, i)) + 0.05;
        b(i) = std::abs(rng.normal(rep, 1, i)) + 0.05;
      }
      a /= a.sum();
      b /= b.sum();
      const double lam = rng.uniform(rep, 2, 0);
      const SimplexWeights mix(Vector(lam * a + (1 - lam) * b));
      const BlendedModel bm = blend(s.model, mix);
      const BlendedModel ba = blend(s.model, SimplexWeights(a));
      const BlendedModel bb = blend(s.model, SimplexWeights(b));
      worst = std::max(worst,
                       (bm.A - (lam * ba.A + (1 - lam) * bb.A)).cwiseAbs().maxCoeff());
      worst = std::max(worst,
                       (bm.C - (lam * ba.C + (1 - lam) * bb.C)).cwiseAbs().maxCoeff());
    }
    check("blend linearity", worst <= 1e-12, "max dev " + fmt17(worst));
  }

  {  // measurement equation and determinism
    const Trajectory t1 = s.simulate_truth(0);
    const Trajectory t2 = s.simulate_truth(0);
    double worst = 0.0;
    bool same = true;
    for (int k = 0; k <= s.run_length; ++k) {
      Vector yk;
      if (s.kind == PlantKind::linear_polytopic) {
        const BlendedModel m = blend(s.model, SimplexWeights(s.alpha_true));
        yk = m.C * t1.states[k] + t1.v[k];
      } else {
        yk = nonlinear_output_matrix() * t1.states[k] + t1.v[k];
      }
      worst = std::max(worst, (t1.outputs[k] - yk).cwiseAbs().maxCoeff());
      same = same && t1.outputs[k] == t2.outputs[k] && t1.states[k] == t2.states[k];
    }
    check("measurement equation residual <= 1e-12", worst <= 1e-12,
          "max " + fmt17(worst));
    check("simulation determinism", same, "");
  }

  if (s.kind == PlantKind::linear_polytopic) {  // constant-alpha equivalence
    const SimplexWeights a(s.alpha_true);
    const Trajectory t1 = simulate(s.model, {a}, s.x0_true, s.noise, 20, 3);
    const Trajectory t2 =
        simulate(s.model, std::vector<SimplexWeights>(20, a), s.x0_true, s.noise, 20, 3);
    bool same = true;
    for (int k = 0; k <= 20; ++k) same = same && t1.states[k] == t2.states[k];
    check("constant-alpha path equivalence", same, "");
  }

  {  // serialization round-trip
    const std::string text = serialize_scenario(s);
    const Scenario back = parse_scenario_string(text);
    check("scenario round-trip", serialize_scenario(back) == text, "");
    log << "[info] scenario checksum " << std::hex << scenario_checksum(s)
        << std::dec << "\n";
  }

  {  // short estimator run: simplex preservation, cost monotonicity, P bounds
    Scenario sr = s;
    sr.run_length = std::min(s.run_length, 30);
    const Trajectory truth = sr.simulate_truth(1);
    AdaptiveMheEstimator est(sr);
    bool simplex_ok = true, monotone_ok = true, trace_ok = true;
    const double tr0_x = sr.lambda_x * sr.x0_prior.size();
    const double tr0_a = sr.lambda_alpha * q;
    for (int k = 0; k <= sr.run_length; ++k) {
      est.update(truth.outputs[k]);
      const auto& r = est.last();
      const Vector& al = r.estimate.alpha_hat;
      simplex_ok = simplex_ok && std::abs(al.sum() - 1.0) <= 1e-9 &&
                   al.minCoeff() >= -1e-12;
      for (size_t i = 1; i < r.report.costs_x.size(); ++i) {
        monotone_ok = monotone_ok &&
                      r.report.costs_x[i] <= r.report.costs_x[i - 1] + 1e-9;
        monotone_ok = monotone_ok &&
                      r.report.costs_alpha[i] <= r.report.costs_alpha[i - 1] + 1e-9;
      }
      trace_ok = trace_ok &&
                 r.diagnostics.trace_Px <=
                     std::max(tr0_x, sr.c_x * sr.x0_prior.size()) + 1e-9 &&
                 r.diagnostics.trace_Palpha <=
                     std::max(tr0_a, sr.c_alpha * q) + 1e-9;
    }
    check("estimated mixing weights stay on the simplex", simplex_ok, "");
    check("dual cost sequences non-increasing", monotone_ok, "");
    check("prior weight traces bounded", trace_ok, "");
  }

  if (s.kind == PlantKind::nonlinear_sine) {
    // best-fit polytope mismatch along the noiseless trajectory (informational)
    Scenario sn = s;
    sn.noise.s_w = 0;
    sn.noise.s_v = 0;
    const Trajectory t = sn.simulate_truth(0);
    double worst = 0.0;
    Neumaier mean;
    const int upto = std::min(20, sn.run_length - 1);
    for (int k = 0; k < upto; ++k) {
      WindowBuffer wb = WindowBuffer::initial(1, sn.x0_prior, sn.alpha_prior, 1, 1,
                                              1e6, 1, 1, 1e6);
      wb.measurements = {t.outputs[k], t.outputs[k + 1]};
      const AlphaSolution a = solve_alpha_window(
          wb, sn.model, {t.states[k], t.states[k + 1]}, sn.weights);
      double res = 0.0;
      for (const auto& d : a.d_hat) res = std::max(res, d.norm());
      worst = std::max(worst, res);
      mean.add(res);
    }
    log << "[info] polytope mismatch along noiseless trajectory: mean "
        << fmt17(mean.value() / std::max(1, upto)) << " max " << fmt17(worst)
        << "\n";
  }

  return failures;
}

}  // namespace polymhe
