#include "cplrnn/model.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <limits>
#include <string>

namespace cplrnn {

void ModelParams::validate() const {
  if (M <= 0 || P < 0 || P > M || N < 1 || N > M)
    throw Error(ErrorCode::bad_config, "need 0 <= P <= M, 1 <= N <= M");
  if (P >= 31) throw Error(ErrorCode::bad_config, "P too large for region masks");
  if (A.size() != M || h.size() != M || W.rows() != M || W.cols() != M)
    throw Error(ErrorCode::bad_config, "parameter shapes do not match M");
  if (!A.allFinite() || !W.allFinite() || !h.allFinite())
    throw Error(ErrorCode::bad_config, "non-finite parameter entries");
}

ModelParams init_params(int M, int P, int N, std::mt19937_64& rng) {
  ModelParams p;
  p.M = M;
  p.P = P;
  p.N = N;
  std::uniform_real_distribution<double> ua(-0.1, 0.0);
  std::normal_distribution<double> nw(0.0, 1.0 / std::sqrt((double)M));
  p.A.resize(M);
  for (int i = 0; i < M; ++i) p.A(i) = ua(rng);
  p.W.resize(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j) p.W(i, j) = nw(rng);
  p.h = VectorXd::Zero(M);
  p.validate();
  return p;
}

RegionIndex region_of(const ModelParams& p, const VectorXd& z) {
  RegionIndex r = 0;
  for (int i = 0; i < p.P; ++i)
    if (z(p.M - p.P + i) > 0.0) r |= (RegionIndex(1) << i);
  return r;
}

VectorXd activation(const ModelParams& p, const VectorXd& z) {
  VectorXd a = z;
  for (int i = p.M - p.P; i < p.M; ++i)
    if (a(i) < 0.0) a(i) = 0.0;
  return a;
}

MatrixXd region_matrix(const ModelParams& p, RegionIndex region) {
  MatrixXd Wo = p.W;
  for (int i = 0; i < p.P; ++i)
    if (!(region & (RegionIndex(1) << i))) Wo.col(p.M - p.P + i).setZero();
  Wo.diagonal() += p.A;
  return Wo;
}

VectorXd vector_field(const ModelParams& p, const VectorXd& z) {
  return p.A.cwiseProduct(z) + p.W * activation(p, z) + p.h;
}

VectorXd field_in_region(const RegionEigen& eig, const VectorXd& z) {
  return eig.Womega * z + eig.h;
}

std::shared_ptr<const RegionEigen> build_region_eigen(const ModelParams& par,
                                                      RegionIndex region) {
  auto eg = std::make_shared<RegionEigen>();
  const int M = par.M;
  eg->region = region;
  eg->P = par.P;
  eg->Womega = region_matrix(par, region);
  eg->h = par.h;
  eg->W_lu.compute(eg->Womega);
  if (!(eg->W_lu.rcond() > 1e-12))
    throw Error(ErrorCode::singular_region_matrix,
                "region " + std::to_string(region) +
                    ": matrix condition estimate past 1e12");
  eg->p_part = eg->W_lu.solve(par.h);

  Eigen::EigenSolver<MatrixXd> es(eg->Womega, true);
  if (es.info() != Eigen::Success)
    throw Error(ErrorCode::near_defective, "region " + std::to_string(region) +
                                               ": eigensolver did not converge");
  VectorXcd lam = es.eigenvalues();
  MatrixXcd U = es.eigenvectors();

  // Match conjugate pairs and average so symmetry is exact rather than
  // trusted from the solver.  Real-Schur output puts partners adjacent, but
  // the search below tolerates any order.
  eg->partner.assign(M, -1);
  std::vector<char> used(M, 0);
  for (int i = 0; i < M; ++i) {
    if (used[i]) continue;
    if (lam(i).imag() == 0.0) {
      used[i] = 1;
      eg->real_terms.push_back(i);
      U.col(i) = U.col(i).real().cast<std::complex<double>>();
      continue;
    }
    int j_best = -1;
    double d_best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < M; ++j) {
      if (j == i || used[j]) continue;
      double d = std::abs(std::conj(lam(i)) - lam(j));
      if (d < d_best) {
        d_best = d;
        j_best = j;
      }
    }
    if (j_best < 0 || d_best > 1e-8 * (1.0 + std::abs(lam(i))))
      throw Error(ErrorCode::near_defective,
                  "region " + std::to_string(region) +
                      ": unpaired complex eigenvalue in a real matrix");
    std::complex<double> lp = 0.5 * (lam(i) + std::conj(lam(j_best)));
    VectorXcd up = 0.5 * (U.col(i) + U.col(j_best).conjugate());
    if (lp.imag() < 0.0) {
      lp = std::conj(lp);
      up = up.conjugate();
    }
    lam(i) = lp;
    U.col(i) = up;
    lam(j_best) = std::conj(lp);
    U.col(j_best) = up.conjugate();
    used[i] = used[j_best] = 1;
    eg->pair_terms.push_back(i);
    eg->partner[i] = j_best;
    eg->partner[j_best] = i;
  }
  eg->lambda = lam;
  eg->U = U;

  eg->spectral_radius = 0.0;
  for (int i = 0; i < M; ++i)
    eg->spectral_radius = std::max(eg->spectral_radius, std::abs(lam(i)));
  eg->min_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < M; ++i)
    for (int j = i + 1; j < M; ++j)
      eg->min_gap = std::min(eg->min_gap, std::abs(lam(i) - lam(j)));
  if (M > 1 && !(eg->min_gap >= 1e-8 * eg->spectral_radius) )
    throw Error(ErrorCode::near_defective,
                "region " + std::to_string(region) +
                    ": eigenvalue gap under 1e-8 * radius");

  eg->U_lu.compute(U);
  if (!(eg->U_lu.rcond() > 1e-12))
    throw Error(ErrorCode::near_defective,
                "region " + std::to_string(region) +
                    ": eigenvector basis ill-conditioned");
  return eg;
}

std::shared_ptr<const RegionEigen> SolutionCache::get(const ModelParams& p,
                                                      RegionIndex r) {
  std::lock_guard<std::mutex> lock(mu_);
  if (version_ != p.version) {
    map_.clear();
    version_ = p.version;
  }
  auto it = map_.find(r);
  if (it != map_.end()) return it->second;
  auto eg = build_region_eigen(p, r);
  map_[r] = eg;
  return eg;
}

void SolutionCache::clear() {
  std::lock_guard<std::mutex> lock(mu_);
  map_.clear();
  version_ = ~0ull;
}

static RegionSolution make_solution(std::shared_ptr<const RegionEigen> eig,
                                    const VectorXd& z0) {
  RegionSolution sol;
  sol.eig = std::move(eig);
  sol.z0 = z0;
  VectorXcd c = sol.eig->U_lu.solve((z0 + sol.eig->p_part).cast<std::complex<double>>());
  // enforce the conjugate structure of the coefficients as well
  for (int i : sol.eig->real_terms) c(i) = std::complex<double>(c(i).real(), 0.0);
  for (int i : sol.eig->pair_terms) {
    int j = sol.eig->partner[i];
    std::complex<double> avg = 0.5 * (c(i) + std::conj(c(j)));
    c(i) = avg;
    c(j) = std::conj(avg);
  }
  sol.c = c;
  sol.ctilde = sol.eig->U * c.asDiagonal();
  return sol;
}

RegionSolution region_solution(const ModelParams& p, const VectorXd& z0,
                               SolutionCache* cache) {
  return region_solution_in(p, region_of(p, z0), z0, cache);
}

RegionSolution region_solution_in(const ModelParams& p, RegionIndex region,
                                  const VectorXd& z0, SolutionCache* cache) {
  auto eig = cache ? cache->get(p, region) : build_region_eigen(p, region);
  return make_solution(std::move(eig), z0);
}

VectorXd eval_point(const RegionSolution& sol, double t) {
  const int M = sol.M();
  VectorXcd w(M);
  for (int l = 0; l < M; ++l) w(l) = sol.c(l) * std::exp(sol.eig->lambda(l) * t);
  VectorXcd zc = sol.eig->U * w;
  VectorXd out(M);
  for (int i = 0; i < M; ++i) {
    double re = zc(i).real() - sol.eig->p_part(i);
    double im = zc(i).imag();
    if (std::isfinite(re) && !(std::fabs(im) < 1e-6 * (1.0 + std::fabs(re))))
      throw Error(ErrorCode::imaginary_residue, "conjugate symmetry violated");
    out(i) = re;
  }
  return out;
}

VectorXd eval_time_derivative(const RegionSolution& sol, double t) {
  const int M = sol.M();
  VectorXcd w(M);
  for (int l = 0; l < M; ++l)
    w(l) = sol.c(l) * sol.eig->lambda(l) * std::exp(sol.eig->lambda(l) * t);
  return (sol.eig->U * w).real();
}

void eval_dim_both(const RegionSolution& sol, int dim, double t, double* f,
                   double* fdot) {
  const RegionEigen& eg = *sol.eig;
  double v = -eg.p_part(dim);
  double vd = 0.0;
  for (int l : eg.real_terms) {
    double al = eg.lambda(l).real();
    double a = sol.ctilde(dim, l).real();
    double E = std::exp(al * t);
    v += a * E;
    vd += al * a * E;
  }
  for (int l : eg.pair_terms) {
    double al = eg.lambda(l).real();
    double be = eg.lambda(l).imag();
    double a = sol.ctilde(dim, l).real();
    double b = sol.ctilde(dim, l).imag();
    double E = 2.0 * std::exp(al * t);
    double C = std::cos(be * t);
    double S = std::sin(be * t);
    v += E * (a * C - b * S);
    vd += E * ((al * a - be * b) * C - (al * b + be * a) * S);
  }
  *f = v;
  *fdot = vd;
}

double eval_dim(const RegionSolution& sol, int dim, double t) {
  const RegionEigen& eg = *sol.eig;
  double v = -eg.p_part(dim);
  for (int l : eg.real_terms)
    v += sol.ctilde(dim, l).real() * std::exp(eg.lambda(l).real() * t);
  for (int l : eg.pair_terms) {
    double al = eg.lambda(l).real();
    double be = eg.lambda(l).imag();
    double a = sol.ctilde(dim, l).real();
    double b = sol.ctilde(dim, l).imag();
    double E = 2.0 * std::exp(al * t);
    v += E * (a * std::cos(be * t) - b * std::sin(be * t));
  }
  return v;
}

double eval_dim_derivative(const RegionSolution& sol, int dim, double t) {
  double f, fd;
  eval_dim_both(sol, dim, t, &f, &fd);
  return fd;
}

double dim_scale(const RegionSolution& sol, int dim, double t) {
  const RegionEigen& eg = *sol.eig;
  double s = std::fabs(eg.p_part(dim));
  for (int l : eg.real_terms)
    s += std::fabs(sol.ctilde(dim, l).real()) * std::exp(eg.lambda(l).real() * t);
  for (int l : eg.pair_terms)
    s += 2.0 * std::abs(sol.ctilde(dim, l)) * std::exp(eg.lambda(l).real() * t);
  return s;
}

ModelParams perturb_for_diagonalizability(const ModelParams& p,
                                          std::mt19937_64& rng,
                                          double magnitude) {
  ModelParams q = p;
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd G(p.M, p.M);
  for (int i = 0; i < p.M; ++i)
    for (int j = 0; j < p.M; ++j) G(i, j) = g(rng);
  double gn = G.norm();
  if (gn > 0.0) G /= gn;
  double wn = p.W.norm();
  q.W += magnitude * (wn > 0.0 ? wn : 1.0) * G;
  q.version = p.version + 1;
  return q;
}

}  // namespace cplrnn
