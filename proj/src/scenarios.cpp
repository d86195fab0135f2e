#include "polymhe/scenarios.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "polymhe/rng.hpp"

namespace polymhe {

namespace {

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

Matrix row2(double a, double b) {
  Matrix m(1, 2);
  m << a, b;
  return m;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  int i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

WindowBuffer Scenario::make_buffer() const {
  return WindowBuffer::initial(mhe.horizon, x0_prior, alpha_prior, sigma_x, c_x,
                               lambda_x, sigma_alpha, c_alpha, lambda_alpha);
}

Trajectory Scenario::simulate_truth(std::uint64_t trial) const {
  if (kind == PlantKind::linear_polytopic) {
    return simulate(model, {SimplexWeights(alpha_true)}, x0_true, noise,
                    run_length, trial);
  }
  const int span = p1_schedule_span < 0 ? run_length : p1_schedule_span;
  return simulate_nonlinear(x0_true, p2, noise, run_length, p1_init, span, trial);
}

Scenario example1() {
  Scenario s;
  s.name = "example1";
  s.kind = PlantKind::linear_polytopic;
  s.model = PolytopicModel(
      {mat2(0, 0.72, 1, 0.28), mat2(0, -0.59, 1, 1.57), mat2(0, -0.35, 1, 1.26)},
      {row2(-1.46, -1.29), row2(-4.84, -2.90), row2(-0.09, -0.03)});
  s.alpha_true = vec({0.22, 0.76, 0.02});
  s.alpha_nominal = vec({0.41, 0.22, 0.37});
  s.alpha_prior = s.alpha_nominal;
  s.x0_true = vec({1.0, 1.0});
  s.x0_prior = vec({0.0, 0.0});
  s.noise = {0.1, 0.05, 0};
  s.weights = StageCostWeights::diagonal(vec({0.1, 0.1}), vec({5.0}), 3);
  s.mhe.horizon = 8;
  s.sigma_x = 1e-4;
  s.c_x = 5.0;
  s.lambda_x = 10.0;  // P0^{-1} = 0.1 I
  s.sigma_alpha = 1e-4;
  s.c_alpha = 5.0;
  s.lambda_alpha = 10.0;
  s.run_length = 150;
  s.trials = 100;
  return s;
}

Scenario example2() {
  Scenario s;
  s.name = "example2";
  s.kind = PlantKind::nonlinear_sine;
  s.model = PolytopicModel(
      {mat2(0, 1.30, 1, -1.52), mat2(0, -2.44, 1, 0.66), mat2(0, 1.31, 1, 2.81)},
      {row2(0.5, 0.5), row2(0.5, 0.5), row2(0.5, 0.5)});
  s.alpha_true = Vector();  // the plant is the nonlinear system itself
  s.alpha_nominal = vec({1.0 / 3, 1.0 / 3, 1.0 / 3});
  s.alpha_prior = s.alpha_nominal;
  s.p1_init = 1.0;
  s.p2 = 0.05;
  s.x0_true = vec({0.5, 0.3});
  s.x0_prior = vec({0.0, 0.0});
  s.noise = {0.1, 0.05, 0};
  s.weights = StageCostWeights::diagonal(vec({1e3, 5e3}), vec({5e2}), 3);
  s.mhe.horizon = 8;
  s.sigma_x = 1.0;
  s.c_x = 1.0;
  s.lambda_x = 10.0;
  s.sigma_alpha = 1.0;
  s.c_alpha = 1.0;
  s.lambda_alpha = 10.0;
  s.run_length = 200;
  s.trials = 100;
  return s;
}

namespace {

bool observable(const Matrix& A, const Matrix& C) {
  const int n = static_cast<int>(A.rows());
  Matrix obs(C.rows() * n, n);
  Matrix CA = C;
  for (int i = 0; i < n; ++i) {
    obs.middleRows(i * C.rows(), C.rows()) = CA;
    CA = CA * A;
  }
  Eigen::JacobiSVD<Matrix> svd(obs);
  return svd.singularValues().minCoeff() > 1e-6;
}

}  // namespace

Scenario random_scenario(std::uint64_t seed, int q, int n_x,
                         double stability_margin) {
  if (q < 2) throw std::invalid_argument("random_scenario: q must be >= 2");
  if (stability_margin <= 0.0 || stability_margin >= 1.0) {
    throw std::invalid_argument("random_scenario: margin must be in (0,1)");
  }
  const CounterRng rng(seed);
  for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
    std::uint64_t draw = 0;
    auto next = [&] { return rng.normal(attempt, 0, draw++); };

    std::vector<Matrix> As(q), Cs(q);
    for (int i = 0; i < q; ++i) {
      Matrix A(n_x, n_x);
      for (int r = 0; r < n_x; ++r)
        for (int c = 0; c < n_x; ++c) A(r, c) = next();
      // spectral norm <= margin for every vertex bounds every blend too
      const double nrm = A.jacobiSvd().singularValues()(0);
      As[i] = A * (stability_margin / std::max(nrm, 1e-12));
      Matrix C(1, n_x);
      for (int c = 0; c < n_x; ++c) C(0, c) = next();
      Cs[i] = C;
    }
    Vector alpha(q);
    for (int i = 0; i < q; ++i) alpha(i) = std::abs(next()) + 0.1;
    alpha /= alpha.sum();

    PolytopicModel model(As, Cs);
    const SimplexWeights true_alpha(alpha);
    bool ok = true;
    for (int i = 0; i < q && ok; ++i) {
      ok = observable(As[i], Cs[i]);
    }
    if (ok) {
      const BlendedModel m = blend(model, true_alpha);
      ok = observable(m.A, m.C);
    }
    if (!ok) continue;

    Scenario s;
    s.name = "random-" + std::to_string(seed);
    s.kind = PlantKind::linear_polytopic;
    s.model = model;
    s.alpha_true = alpha;
    s.alpha_nominal = Vector::Constant(q, 1.0 / q);
    s.alpha_prior = s.alpha_nominal;
    Vector x0(n_x);
    for (int c = 0; c < n_x; ++c) x0(c) = next();
    s.x0_true = x0;
    s.x0_prior = Vector::Zero(n_x);
    s.noise = {0.05, 0.02, seed};
    s.weights = StageCostWeights::diagonal(Vector::Constant(n_x, 1.0),
                                           Vector::Constant(1, 5.0), q);
    s.mhe.horizon = 6;
    s.run_length = 60;
    s.trials = 10;
    return s;
  }
  throw std::runtime_error("random_scenario: rejection budget exhausted");
}

std::string serialize_scenario(const Scenario& s) {
  std::ostringstream os;
  os << "# polymhe scenario\n";
  os << "name " << s.name << "\n";
  os << "kind " << (s.kind == PlantKind::linear_polytopic ? "linear" : "nonlinear")
     << "\n";
  os << "run_length " << s.run_length << "\n";
  os << "trials " << s.trials << "\n";
  os << "horizon " << s.mhe.horizon << "\n";
  os << "l_max " << s.mhe.l_max << "\n";
  os << "epsilon_stop " << fmt(s.mhe.epsilon_stop) << "\n";
  os << "epsilon_bound " << fmt(s.mhe.epsilon_bound) << "\n";
  os << "use_bound_stop " << (s.mhe.use_bound_stop ? 1 : 0) << "\n";
  os << "per_step_alpha " << (s.mhe.per_step_alpha ? 1 : 0) << "\n";
  os << "s_w " << fmt(s.noise.s_w) << "\n";
  os << "s_v " << fmt(s.noise.s_v) << "\n";
  os << "seed " << s.noise.seed << "\n";
  os << "sigma_x " << fmt(s.sigma_x) << "\n";
  os << "c_x " << fmt(s.c_x) << "\n";
  os << "lambda_x " << fmt(s.lambda_x) << "\n";
  os << "sigma_alpha " << fmt(s.sigma_alpha) << "\n";
  os << "c_alpha " << fmt(s.c_alpha) << "\n";
  os << "lambda_alpha " << fmt(s.lambda_alpha) << "\n";
  os << "fixed_prior_kappa " << fmt(s.fixed_prior_kappa) << "\n";
  os << "fie_window_cap " << s.fie_window_cap << "\n";
  os << "p1_init " << fmt(s.p1_init) << "\n";
  os << "p2 " << fmt(s.p2) << "\n";
  os << "p1_schedule_span " << s.p1_schedule_span << "\n";

  auto put_vector = [&](const std::string& name, const Vector& v) {
    os << "vector " << name << " " << v.size() << "\n";
    for (int i = 0; i < v.size(); ++i) os << (i ? " " : "") << fmt(v(i));
    os << "\n";
  };
  auto put_matrix = [&](const std::string& name, const Matrix& m) {
    os << "matrix " << name << " " << m.rows() << " " << m.cols() << "\n";
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) os << (c ? " " : "") << fmt(m(r, c));
      os << "\n";
    }
  };

  put_vector("x0_true", s.x0_true);
  put_vector("x0_prior", s.x0_prior);
  if (s.alpha_true.size()) put_vector("alpha_true", s.alpha_true);
  put_vector("alpha_prior", s.alpha_prior);
  put_vector("alpha_nominal", s.alpha_nominal);
  for (int i = 0; i < s.model.vertex_count(); ++i) {
    put_matrix("A" + std::to_string(i + 1), s.model.vertex_A(i));
  }
  for (int i = 0; i < s.model.vertex_count(); ++i) {
    put_matrix("C" + std::to_string(i + 1), s.model.vertex_C(i));
  }
  put_matrix("Qinv", s.weights.Qinv);
  put_matrix("Rinv", s.weights.Rinv);
  put_matrix("Dinv", s.weights.Dinv);
  put_matrix("Qalpha_inv", s.weights.Qalpha_inv);
  return os.str();
}

Scenario parse_scenario(std::istream& in) {
  std::map<std::string, std::string> scalars;
  std::map<std::string, Vector> vectors;
  std::map<std::string, Matrix> matrices;

  std::string line;
  auto next_number = [&](std::istringstream& ls, std::istream& stream) {
    double x;
    while (!(ls >> x)) {
      std::string l2;
      if (!std::getline(stream, l2)) {
        throw std::runtime_error("scenario parse: unexpected end of numbers");
      }
      ls.clear();
      ls.str(l2);
    }
    return x;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "vector") {
      std::string name;
      int len;
      ls >> name >> len;
      Vector v(len);
      std::istringstream nums("");
      for (int i = 0; i < len; ++i) v(i) = next_number(nums, in);
      vectors[name] = v;
    } else if (key == "matrix") {
      std::string name;
      int rows, cols;
      ls >> name >> rows >> cols;
      Matrix m(rows, cols);
      std::istringstream nums("");
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = next_number(nums, in);
      matrices[name] = m;
    } else {
      std::string value;
      std::getline(ls, value);
      const auto pos = value.find_first_not_of(' ');
      scalars[key] = pos == std::string::npos ? "" : value.substr(pos);
    }
  }

  auto want = [&](const std::string& k) {
    auto it = scalars.find(k);
    if (it == scalars.end()) throw std::runtime_error("scenario parse: missing key " + k);
    return it->second;
  };
  auto as_double = [&](const std::string& k) { return std::stod(want(k)); };
  auto as_int = [&](const std::string& k) { return std::stoi(want(k)); };

  Scenario s;
  s.name = want("name");
  const std::string kind = want("kind");
  if (kind == "linear") {
    s.kind = PlantKind::linear_polytopic;
  } else if (kind == "nonlinear") {
    s.kind = PlantKind::nonlinear_sine;
  } else {
    throw std::runtime_error("scenario parse: unknown kind " + kind);
  }
  s.run_length = as_int("run_length");
  s.trials = as_int("trials");
  s.mhe.horizon = as_int("horizon");
  s.mhe.l_max = as_int("l_max");
  s.mhe.epsilon_stop = as_double("epsilon_stop");
  s.mhe.epsilon_bound = as_double("epsilon_bound");
  s.mhe.use_bound_stop = as_int("use_bound_stop") != 0;
  s.mhe.per_step_alpha = as_int("per_step_alpha") != 0;
  s.noise.s_w = as_double("s_w");
  s.noise.s_v = as_double("s_v");
  s.noise.seed = std::stoull(want("seed"));
  s.sigma_x = as_double("sigma_x");
  s.c_x = as_double("c_x");
  s.lambda_x = as_double("lambda_x");
  s.sigma_alpha = as_double("sigma_alpha");
  s.c_alpha = as_double("c_alpha");
  s.lambda_alpha = as_double("lambda_alpha");
  s.fixed_prior_kappa = as_double("fixed_prior_kappa");
  s.fie_window_cap = as_int("fie_window_cap");
  s.p1_init = as_double("p1_init");
  s.p2 = as_double("p2");
  s.p1_schedule_span = as_int("p1_schedule_span");

  auto want_vec = [&](const std::string& k) {
    auto it = vectors.find(k);
    if (it == vectors.end()) throw std::runtime_error("scenario parse: missing vector " + k);
    return it->second;
  };
  s.x0_true = want_vec("x0_true");
  s.x0_prior = want_vec("x0_prior");
  if (vectors.count("alpha_true")) s.alpha_true = vectors["alpha_true"];
  s.alpha_prior = want_vec("alpha_prior");
  s.alpha_nominal = want_vec("alpha_nominal");

  std::vector<Matrix> As, Cs;
  for (int i = 1;; ++i) {
    auto a = matrices.find("A" + std::to_string(i));
    auto c = matrices.find("C" + std::to_string(i));
    if (a == matrices.end() || c == matrices.end()) break;
    As.push_back(a->second);
    Cs.push_back(c->second);
  }
  if (As.empty()) throw std::runtime_error("scenario parse: no vertex matrices");
  s.model = PolytopicModel(As, Cs);
  s.weights.Qinv = matrices.at("Qinv");
  s.weights.Rinv = matrices.at("Rinv");
  s.weights.Dinv = matrices.at("Dinv");
  s.weights.Qalpha_inv = matrices.at("Qalpha_inv");
  return s;
}

Scenario parse_scenario_string(const std::string& text) {
  std::istringstream ss(text);
  return parse_scenario(ss);
}

Scenario load_scenario(const std::string& name_or_path) {
  if (name_or_path == "example1") return example1();
  if (name_or_path == "example2") return example2();
  std::ifstream f(name_or_path);
  if (!f) throw std::runtime_error("cannot open scenario file: " + name_or_path);
  return parse_scenario(f);
}

void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write scenario file: " + path);
  f << serialize_scenario(s);
}

std::uint64_t scenario_checksum(const Scenario& s) {
  const std::string text = serialize_scenario(s);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace polymhe
