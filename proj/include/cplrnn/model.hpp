#pragma once

#include <Eigen/Dense>
#include <Eigen/LU>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <unordered_map>
#include <vector>

#include "cplrnn/errors.hpp"

namespace cplrnn {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// Piecewise-linear continuous-time latent model
//   dz/dt = diag(A) z + W relu_tail(z) + h
// where relu_tail applies max(0, .) to the last P of the M coordinates and the
// first N coordinates are the read-out.  A is stored as its diagonal.
struct ModelParams {
  int M = 0;
  int P = 0;
  int N = 0;
  VectorXd A;   // length M, diagonal of the linear part
  MatrixXd W;   // M x M
  VectorXd h;   // length M
  // bumped by the optimizer after each update; keys the solution caches
  std::uint64_t version = 0;

  void validate() const;
};

ModelParams init_params(int M, int P, int N, std::mt19937_64& rng);

// Activation-sign mask over the P rectified coordinates: bit i set means
// coordinate M-P+i is strictly positive (zero counts as the off side).
using RegionIndex = std::uint32_t;

RegionIndex region_of(const ModelParams& p, const VectorXd& z);

// relu_tail(z): identity on the first M-P coordinates, max(0,.) on the rest
VectorXd activation(const ModelParams& p, const VectorXd& z);

// diag(A) + W * D_region, the dynamics matrix while the sign mask holds
MatrixXd region_matrix(const ModelParams& p, RegionIndex region);

// dz/dt at z, via the activation (region-independent form)
VectorXd vector_field(const ModelParams& p, const VectorXd& z);

// Per-region quantities that depend only on the parameters, not the entry
// state: eigensystem of the region matrix, its LU, and the particular
// solution offset p_part solving W_region * p_part = h (so the equilibrium
// offset is htilde = -p_part).  Conjugate eigenpairs are matched and averaged
// so exact symmetry holds; terms lists index the real eigenvalues and one
// representative (positive imaginary part) per conjugate pair.
struct RegionEigen {
  RegionIndex region = 0;
  int P = 0;  // number of rectified coordinates (the last P of M)
  MatrixXd Womega;
  VectorXd h;
  VectorXd p_part;
  Eigen::PartialPivLU<MatrixXd> W_lu;
  VectorXcd lambda;
  MatrixXcd U;
  Eigen::PartialPivLU<MatrixXcd> U_lu;
  std::vector<int> real_terms;
  std::vector<int> pair_terms;
  std::vector<int> partner;  // conjugate partner index, -1 for real terms
  double spectral_radius = 0.0;
  double min_gap = 0.0;
  bool perturbed = false;  // built from a diagonalizability perturbation
};

// dz/dt = Womega z + h, valid on the region's closure
VectorXd field_in_region(const RegionEigen& eig, const VectorXd& z);

// Analytic flow inside one region from entry state z0 (segment-local time):
//   z(t) = sum_l ctilde(:,l) exp(lambda_l t) - p_part
// with ctilde = U diag(c), U c = z0 + p_part.
struct RegionSolution {
  std::shared_ptr<const RegionEigen> eig;
  VectorXd z0;
  VectorXcd c;
  MatrixXcd ctilde;

  int M() const { return (int)z0.size(); }
  const VectorXd& htilde_neg() const { return eig->p_part; }  // -htilde
};

// Thread-safe per-region eigensystem cache, invalidated when the parameter
// version moves.  Recomputation is idempotent; last writer wins.
class SolutionCache {
 public:
  std::shared_ptr<const RegionEigen> get(const ModelParams& p, RegionIndex r);
  void clear();

 private:
  std::mutex mu_;
  std::uint64_t version_ = ~0ull;
  std::unordered_map<RegionIndex, std::shared_ptr<const RegionEigen>> map_;
};

// Build the eigensystem for one region; throws SINGULAR_REGION_MATRIX when
// the region matrix condition estimate passes 1e12 and NEAR_DEFECTIVE when
// the minimum eigenvalue gap falls under 1e-8 * spectral radius.
std::shared_ptr<const RegionEigen> build_region_eigen(const ModelParams& p,
                                                      RegionIndex region);

RegionSolution region_solution(const ModelParams& p, const VectorXd& z0,
                               SolutionCache* cache = nullptr);
// Entry states sitting exactly on a boundary need the region pinned by the
// caller (the sign mask of z0 alone would pick the closed negative side).
RegionSolution region_solution_in(const ModelParams& p, RegionIndex region,
                                  const VectorXd& z0,
                                  SolutionCache* cache = nullptr);

// z(t) of the segment solution; the imaginary residue of the conjugate sum
// must stay under 1e-6 * (1 + |result|) componentwise (IMAGINARY_RESIDUE).
VectorXd eval_point(const RegionSolution& sol, double t);

// d z(t) / dt, the eigenvalue-weighted series (the constant term drops)
VectorXd eval_time_derivative(const RegionSolution& sol, double t);

// single-coordinate evaluations for the root refinement loops
double eval_dim(const RegionSolution& sol, int dim, double t);
double eval_dim_derivative(const RegionSolution& sol, int dim, double t);
void eval_dim_both(const RegionSolution& sol, int dim, double t, double* f,
                   double* fdot);

// natural magnitude of the dim-th coordinate series near time t (sum of term
// magnitudes, cancellation-aware), used to put residual tolerances on a
// scale-aware footing
double dim_scale(const RegionSolution& sol, int dim, double t);

// Random symmetric-free perturbation of W (relative to its Frobenius norm)
// used to retry a NEAR_DEFECTIVE region; bumps the version.
ModelParams perturb_for_diagonalizability(const ModelParams& p,
                                          std::mt19937_64& rng,
                                          double magnitude = 1e-7);

}  // namespace cplrnn
