#include "shom/coeff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace shom {

struct CoefficientField::Impl {
  int d = 0;
  TensorFn tensor;
  ScalarFn scalar;  // empty unless scalar-identity structure
  bool constant = false;
  bool symmetric = true;
  Tensor4 constant_value;
  Info info;
  double mean_viscosity = 1.0;
};

namespace {

double radical_inverse(int base, long index) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

std::vector<double> symmetric_part_extremes(const Tensor4& a, std::vector<double>* vmin, std::vector<double>* vmax,
                                            double* lo, double* hi) {
  const int p = a.pairs();
  Eigen::MatrixXd m(p, p);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c) m(r, c) = 0.5 * (a.m(r, c) + a.m(c, r));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  *lo = es.eigenvalues()(0);
  *hi = es.eigenvalues()(p - 1);
  if (vmin) vmin->assign(es.eigenvectors().col(0).data(), es.eigenvectors().col(0).data() + p);
  if (vmax) vmax->assign(es.eigenvectors().col(p - 1).data(), es.eigenvectors().col(p - 1).data() + p);
  return {};
}

double compute_mean_viscosity(const CoefficientField& f) {
  const int d = f.dim();
  const int m = d == 2 ? 64 : 16;
  double s = 0.0;
  long cnt = 0;
  double y[3] = {0, 0, 0};
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < (d == 3 ? m : 1); ++k) {
        y[0] = (i + 0.5) / m;
        y[1] = (j + 0.5) / m;
        y[2] = (k + 0.5) / m;
        s += f.viscosity(y);
        ++cnt;
      }
  return s / static_cast<double>(cnt);
}

void require_dim(int d) {
  if (d != 2 && d != 3) throw ConfigError("dimension must be 2 or 3, got " + std::to_string(d));
}

}  // namespace

std::vector<double> cell_samples(int d, int count) {
  static constexpr int kBases[3] = {2, 3, 5};
  std::vector<double> pts(static_cast<std::size_t>(d) * count);
  for (int n = 0; n < count; ++n)
    for (int a = 0; a < d; ++a) pts[static_cast<std::size_t>(n) * d + a] = radical_inverse(kBases[a], n);
  return pts;
}

CoefficientField CoefficientField::from_tensor_fn(int d, TensorFn fn, Info info, bool symmetric) {
  require_dim(d);
  auto impl = std::make_shared<Impl>();
  impl->d = d;
  impl->tensor = std::move(fn);
  impl->symmetric = symmetric;
  impl->info = std::move(info);
  CoefficientField f;
  f.impl_ = impl;
  impl->mean_viscosity = compute_mean_viscosity(f);
  return f;
}

CoefficientField CoefficientField::from_scalar_fn(int d, ScalarFn fn, Info info) {
  require_dim(d);
  auto impl = std::make_shared<Impl>();
  impl->d = d;
  impl->scalar = fn;
  impl->tensor = [d, fn](const double* y, Tensor4& out) { out = Tensor4::identity(d, fn(y)); };
  impl->symmetric = true;
  impl->info = std::move(info);
  CoefficientField f;
  f.impl_ = impl;
  impl->mean_viscosity = compute_mean_viscosity(f);
  return f;
}

CoefficientField CoefficientField::constant(const Tensor4& a, Info info) {
  const int d = a.dim();
  require_dim(d);
  auto impl = std::make_shared<Impl>();
  impl->d = d;
  impl->constant = true;
  impl->constant_value = a;
  impl->tensor = [a](const double*, Tensor4& out) { out = a; };
  bool sym = true;
  for (int r = 0; r < a.pairs(); ++r)
    for (int c = 0; c < a.pairs(); ++c) sym = sym && a.m(r, c) == a.m(c, r);
  impl->symmetric = sym;
  // identity structure admits the scalar fast path
  const double c0 = a.m(0, 0);
  bool scalar_like = true;
  const Tensor4 id = Tensor4::identity(d, c0);
  for (int r = 0; r < a.pairs(); ++r)
    for (int c = 0; c < a.pairs(); ++c) scalar_like = scalar_like && a.m(r, c) == id.m(r, c);
  if (scalar_like) impl->scalar = [c0](const double*) { return c0; };
  double lo = 0, hi = 0;
  symmetric_part_extremes(a, nullptr, nullptr, &lo, &hi);
  info.bounds = {lo, hi};
  impl->info = std::move(info);
  impl->mean_viscosity = 0.0;
  for (int r = 0; r < a.pairs(); ++r) impl->mean_viscosity += a.m(r, r);
  impl->mean_viscosity /= a.pairs();
  CoefficientField f;
  f.impl_ = impl;
  return f;
}

int CoefficientField::dim() const { return impl_->d; }
const CoefficientField::Info& CoefficientField::info() const { return impl_->info; }

double CoefficientField::mu() const {
  const auto& b = impl_->info.bounds;
  return std::min(b.lo, b.hi > 0 ? 1.0 / b.hi : 0.0);
}

void CoefficientField::eval(const double* y, Tensor4& out) const { impl_->tensor(y, out); }

Tensor4 CoefficientField::operator()(std::span<const double> y) const {
  Tensor4 t(impl_->d);
  impl_->tensor(y.data(), t);
  return t;
}

bool CoefficientField::is_scalar() const { return static_cast<bool>(impl_->scalar); }
double CoefficientField::scalar(const double* y) const { return impl_->scalar(y); }
bool CoefficientField::is_constant() const { return impl_->constant; }
bool CoefficientField::is_symmetric() const { return impl_->symmetric; }
const Tensor4& CoefficientField::constant_value() const { return impl_->constant_value; }

CoefficientField CoefficientField::transposed() const {
  if (impl_->symmetric) return *this;
  Info info = impl_->info;
  info.family += "*";
  if (impl_->constant) return constant(impl_->constant_value.transposed(), info);
  auto fn = impl_->tensor;
  return from_tensor_fn(
      impl_->d,
      [fn](const double* y, Tensor4& out) {
        Tensor4 t(out.dim());
        fn(y, t);
        out = t.transposed();
      },
      info, false);
}

double CoefficientField::viscosity(const double* y) const {
  if (impl_->scalar) return impl_->scalar(y);
  Tensor4 t(impl_->d);
  impl_->tensor(y, t);
  double s = 0.0;
  for (int r = 0; r < t.pairs(); ++r) s += t.m(r, r);
  return s / t.pairs();
}

double CoefficientField::mean_viscosity() const { return impl_->mean_viscosity; }

// ---------------------------------------------------------------------------

ElasticityTensor::ElasticityTensor(int d, TensorFn fn, double mu, std::string family)
    : d_(d), fn_(std::move(fn)), mu_(mu), family_(std::move(family)) {
  require_dim(d);
  if (!(mu > 0)) throw MalformedTensorError("elasticity constant mu must be positive");
}

ElasticityTensor ElasticityTensor::isotropic(int d, double lambda, double shear) {
  return isotropic_trig(d, lambda, shear, 0.0);
}

ElasticityTensor ElasticityTensor::isotropic_trig(int d, double lambda, double shear, double rho) {
  if (!(shear > 0) || lambda < 0 || rho < 0 || rho >= 1)
    throw MalformedTensorError("isotropic elasticity needs shear > 0, lambda >= 0, 0 <= rho < 1");
  auto fn = [d, lambda, shear, rho](const double* y, Tensor4& out) {
    double s = 1.0;
    for (int a = 0; a < d; ++a) s *= std::cos(2.0 * kPi * y[a]);
    const double g = shear * (1.0 + rho * s);
    out = Tensor4(d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int al = 0; al < d; ++al)
          for (int be = 0; be < d; ++be)
            out(i, j, al, be) = lambda * kron(i, al) * kron(j, be) +
                                g * (kron(i, j) * kron(al, be) + kron(i, be) * kron(j, al));
  };
  // On symmetric xi: lambda (tr xi)^2 + 2G |xi|^2 in [2G_min, d lambda + 2G_max] |xi|^2
  const double lo = 2.0 * shear * (1.0 - rho);
  const double hi = d * lambda + 2.0 * shear * (1.0 + rho);
  return ElasticityTensor(d, fn, std::min(lo, 1.0 / hi), "elastic-isotropic");
}

double elasticity_symmetry_defect(const ElasticityTensor& b, int samples) {
  const int d = b.dim();
  const auto pts = cell_samples(d, samples);
  double defect = 0.0;
  Tensor4 t(d);
  for (int n = 0; n < samples; ++n) {
    b.eval(&pts[static_cast<std::size_t>(n) * d], t);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int al = 0; al < d; ++al)
          for (int be = 0; be < d; ++be) {
            defect = std::max(defect, std::abs(t(i, j, al, be) - t(j, i, be, al)));
            defect = std::max(defect, std::abs(t(i, j, al, be) - t(al, j, i, be)));
          }
  }
  return defect;
}

CoefficientField elasticity_reduce(const ElasticityTensor& b) {
  const double scale = std::max(1.0, 1.0 / b.mu());
  if (elasticity_symmetry_defect(b, 64) > 1e-12 * scale)
    throw MalformedTensorError("tensor violates b_ij^ab = b_ji^ba = b_aj^ib");
  const int d = b.dim();
  const double mu = b.mu();
  auto fn = [b, d, mu](const double* y, Tensor4& out) {
    b.eval(y, out);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int al = 0; al < d; ++al)
          for (int be = 0; be < d; ++be)
            out(i, j, al, be) += 0.5 * mu * kron(i, al) * kron(j, be) - 0.5 * mu * kron(i, be) * kron(j, al);
  };
  CoefficientField::Info info;
  info.family = "elasticity-reduced(" + b.family() + ")";
  info.params = {{"mu", mu}};
  CoefficientField tmp = CoefficientField::from_tensor_fn(d, fn, info, true);
  info.bounds = check_ellipticity(tmp, 256);
  return CoefficientField::from_tensor_fn(d, fn, info, true);
}

// ---------------------------------------------------------------------------

EllipticityBounds check_ellipticity(const CoefficientField& a, int samples) {
  if (samples < 1) throw PreconditionError("check_ellipticity needs samples >= 1");
  const int d = a.dim();
  const int p = d * d;
  const auto pts = cell_samples(d, samples);
  std::mt19937_64 rng(kEllipticitySeed);
  std::normal_distribution<double> normal;

  EllipticityBounds out{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  std::vector<double> witness_y, witness_xi;
  Tensor4 t(d);
  std::vector<double> xi(static_cast<std::size_t>(p));
  auto consider = [&](const double* y, const std::vector<double>& v) {
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    if (nrm == 0.0) return;
    const double q = t.contract(v.data(), v.data()) / nrm;
    if (q < out.lo) {
      out.lo = q;
      witness_y.assign(y, y + d);
      witness_xi = v;
    }
    out.hi = std::max(out.hi, q);
  };
  std::vector<double> vmin, vmax;
  for (int n = 0; n < samples; ++n) {
    const double* y = &pts[static_cast<std::size_t>(n) * d];
    a.eval(y, t);
    double lo = 0, hi = 0;
    symmetric_part_extremes(t, &vmin, &vmax, &lo, &hi);
    consider(y, vmin);
    consider(y, vmax);
    for (int k = 0; k < p; ++k) {
      std::fill(xi.begin(), xi.end(), 0.0);
      xi[static_cast<std::size_t>(k)] = 1.0;
      consider(y, xi);
    }
    for (auto& x : xi) x = normal(rng);
    consider(y, xi);
  }
  if (!(out.lo > 0.0)) {
    std::ostringstream os;
    os << "ellipticity violated: a xi.xi / |xi|^2 = " << out.lo << " at y = (";
    for (std::size_t k = 0; k < witness_y.size(); ++k) os << (k ? ", " : "") << witness_y[k];
    os << ")";
    throw EllipticityError(os.str(), witness_y, witness_xi, out.lo);
  }
  return out;
}

double periodicity_defect(const CoefficientField& a, int samples) {
  const int d = a.dim();
  const auto pts = cell_samples(d, samples);
  Tensor4 t0(d), t1(d);
  double defect = 0.0;
  const int shifts[3][3] = {{1, 0, 0}, {-2, 3, 1}, {5, -1, -4}};
  for (int n = 0; n < samples; ++n) {
    const double* y = &pts[static_cast<std::size_t>(n) * d];
    a.eval(y, t0);
    for (const auto& z : shifts) {
      double ys[3];
      for (int k = 0; k < d; ++k) ys[k] = y[k] + z[k];
      a.eval(ys, t1);
      t1 -= t0;
      defect = std::max(defect, t1.max_abs());
    }
  }
  return defect;
}

// ---------------------------------------------------------------------------

namespace {

CoefficientField make_constant(const nlohmann::json& params, int d) {
  CoefficientField::Info info;
  info.family = "constant";
  info.params = params;
  info.holder_exponent = 1.0;
  info.holder_seminorm = 0.0;
  Tensor4 a(d);
  if (params.contains("tensor")) {
    const auto& v = params.at("tensor");
    if (!v.is_array() || v.size() != static_cast<std::size_t>(d * d * d * d))
      throw ConfigError("constant family: 'tensor' must hold d^4 entries ordered (i, j, alpha, beta)");
    std::size_t k = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int al = 0; al < d; ++al)
          for (int be = 0; be < d; ++be) a(i, j, al, be) = v[k++].get<double>();
  } else {
    a = Tensor4::identity(d, params.value("scale", 1.0));
  }
  double lo = 0, hi = 0;
  std::vector<double> vmin;
  symmetric_part_extremes(a, &vmin, nullptr, &lo, &hi);
  if (!(lo > 0)) {
    throw EllipticityError("constant tensor is not positive definite (min eigenvalue " + std::to_string(lo) + ")",
                           std::vector<double>(static_cast<std::size_t>(d), 0.0), vmin, lo);
  }
  return CoefficientField::constant(a, info);
}

struct TrigTerm {
  double amp = 1.0;
  std::array<int, 3> k{1, 1, 1};
  std::array<double, 3> phase{0, 0, 0};
};

CoefficientField make_trig(const nlohmann::json& params, int d) {
  const double rho = params.value("rho", 0.5);
  std::vector<TrigTerm> terms;
  if (params.contains("terms")) {
    for (const auto& jt : params.at("terms")) {
      TrigTerm t;
      t.amp = jt.value("amp", 1.0);
      if (jt.contains("k"))
        for (int a = 0; a < d; ++a) t.k[a] = jt.at("k").at(a).get<int>();
      if (jt.contains("phase"))
        for (int a = 0; a < d; ++a) t.phase[a] = jt.at("phase").at(a).get<double>();
      terms.push_back(t);
    }
  } else {
    terms.push_back(TrigTerm{});
  }
  double amp_sum = 0.0;
  for (const auto& t : terms) amp_sum += std::abs(t.amp);
  if (amp_sum > 1.0 + 1e-14) throw ConfigError("trig family: sum of |amp| must not exceed 1");
  auto s = [terms, d](const double* y) {
    double v = 0.0;
    for (const auto& t : terms) {
      double p = t.amp;
      for (int a = 0; a < d; ++a)
        if (t.k[a] != 0 || t.phase[a] != 0.0) p *= std::cos(2.0 * kPi * t.k[a] * y[a] + t.phase[a]);
      v += p;
    }
    return v;
  };
  if (rho < 0) throw ConfigError("trig family: rho must be >= 0");
  if (rho * amp_sum >= 1.0) {
    // locate the first sample where 1 + rho s <= 0
    const auto pts = cell_samples(d, 4096);
    for (int n = 0; n < 4096; ++n) {
      const double* y = &pts[static_cast<std::size_t>(n) * d];
      const double v = 1.0 + rho * s(y);
      if (v <= 0.0) {
        throw EllipticityError("trig family not elliptic: 1 + rho s(y) = " + std::to_string(v),
                               std::vector<double>(y, y + d), {}, v);
      }
    }
    throw EllipticityError("trig family not elliptic: rho * sum|amp| >= 1", {}, {}, 1.0 - rho * amp_sum);
  }
  CoefficientField::Info info;
  info.family = "trig";
  info.params = params;
  info.params["rho"] = rho;
  info.bounds = {1.0 - rho * amp_sum, 1.0 + rho * amp_sum};
  double kmax = 0.0;
  for (const auto& t : terms) {
    double kk = 0.0;
    for (int a = 0; a < d; ++a) kk += static_cast<double>(t.k[a]) * t.k[a];
    kmax = std::max(kmax, std::abs(t.amp) * std::sqrt(kk));
  }
  info.holder_exponent = 1.0;
  info.holder_seminorm = 2.0 * kPi * rho * kmax * std::max(1, static_cast<int>(terms.size()));
  const double skew = params.value("skew", 0.0);
  if (skew != 0.0) {
    // kappa sin(2 pi y_0) delta_ab (e_01 - e_10)_ij: antisymmetric under (i, a) <-> (j, b),
    // so the symmetric part and the ellipticity window are unchanged
    info.params["skew"] = skew;
    auto fn = [d, rho, skew, s](const double* y, Tensor4& out) {
      out = Tensor4::identity(d, 1.0 + rho * s(y));
      const double c = skew * std::sin(2.0 * kPi * y[0]);
      for (int al = 0; al < d; ++al) {
        out(0, 1, al, al) += c;
        out(1, 0, al, al) -= c;
      }
    };
    info.holder_seminorm += 2.0 * kPi * std::abs(skew);
    return CoefficientField::from_tensor_fn(d, fn, info, false);
  }
  if (rho == 0.0) return CoefficientField::constant(Tensor4::identity(d), info);
  return CoefficientField::from_scalar_fn(d, [rho, s](const double* y) { return 1.0 + rho * s(y); }, info);
}

CoefficientField make_checkerboard(const nlohmann::json& params, int d) {
  const double c1 = params.value("c_inclusion", 2.0);
  const double c2 = params.value("c_matrix", 1.0);
  const double kappa = params.value("sharpness", 4.0);
  if (!(c1 > 0) || !(c2 > 0)) {
    throw EllipticityError("smoothed-checkerboard needs positive phase values", std::vector<double>(d, 0.25), {},
                           std::min(c1, c2));
  }
  if (!(kappa > 0)) throw ConfigError("smoothed-checkerboard: sharpness must be positive");
  const double norm = std::tanh(kappa);
  auto c = [=](const double* y) {
    double p = 1.0;
    for (int a = 0; a < d; ++a) p *= std::sin(2.0 * kPi * y[a]);
    return 0.5 * (c1 + c2) + 0.5 * (c1 - c2) * std::tanh(kappa * p) / norm;
  };
  CoefficientField::Info info;
  info.family = "smoothed-checkerboard";
  info.params = params;
  info.bounds = {std::min(c1, c2), std::max(c1, c2)};
  info.holder_exponent = 1.0;
  info.holder_seminorm = std::abs(c1 - c2) * kappa * 2.0 * kPi * std::sqrt(static_cast<double>(d)) / norm;
  return CoefficientField::from_scalar_fn(d, c, info);
}

}  // namespace

CoefficientField make_coefficient(const std::string& family, const nlohmann::json& raw, int d) {
  require_dim(d);
  if (!raw.is_null() && !raw.is_object()) throw ConfigError("coefficient params must be an object");
  const nlohmann::json params = raw.is_null() ? nlohmann::json::object() : raw;
  if (family == "constant") return make_constant(params, d);
  if (family == "trig") return make_trig(params, d);
  if (family == "smoothed-checkerboard") return make_checkerboard(params, d);
  if (family == "elastic-isotropic") {
    const auto b = ElasticityTensor::isotropic_trig(d, params.value("lambda", 1.0), params.value("shear", 0.5),
                                                    params.value("rho", 0.0));
    return elasticity_reduce(b);
  }
  throw ConfigError("unknown coefficient family '" + family + "'");
}

CoefficientField coefficient_from_config(const nlohmann::json& cfg) {
  if (!cfg.contains("family")) throw ConfigError("coefficient config needs a 'family' key");
  const int d = cfg.value("dim", 2);
  return make_coefficient(cfg.at("family").get<std::string>(), cfg.value("params", nlohmann::json::object()), d);
}

CoefficientField coefficient_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return coefficient_from_config(j.contains("coefficient") ? j.at("coefficient") : j);
}

}  // namespace shom
