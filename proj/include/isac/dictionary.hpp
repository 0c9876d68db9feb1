#pragma once

#include <array>
#include <memory>
#include <utility>
#include <vector>

#include "isac/forward_model.hpp"
#include "isac/geometry.hpp"

namespace isac {

struct GridConfig {
  Region region;
  double resolution = 10.0;
};

/// Column-major H x W grid: q = col * H + row; vertical neighbors q -+ 1, horizontal q -+ H.
struct PositionGrid {
  int H = 0;
  int W = 0;
  Region region;
  double resolution = 0.0;
  std::vector<Position2D> points;  // initial (uniform) positions

  int size() const { return H * W; }
  int index(int row, int col) const { return col * H + row; }
  int row(int q) const { return q % H; }
  int col(int q) const { return q / H; }
  /// The box of cell q; dynamic grid points stay inside it.
  Region cell(int q) const;
  /// Cell containing p, or -1 when p is outside the region.
  int locate(Position2D p) const;
};

struct AngleDelayConfig {
  int U = 16;
  int V = 8;
  double tau_min = 0.0;
  double tau_max = 0.0;
};

struct AngleDelayGrid {
  std::vector<double> angles;  // sin-uniform on [-1, 1]
  std::vector<double> delays;
  int U() const { return static_cast<int>(angles.size()); }
  int V() const { return static_cast<int>(delays.size()); }
  int size() const { return U() * V(); }
};

std::pair<PositionGrid, AngleDelayGrid> build_grids(const GridConfig& grid,
                                                    const AngleDelayConfig& ad);

struct SensingParams {
  std::vector<Position2D> r;
  Position2D p_u;
  double tau_o = 0.0;
};

/// Index map of the joint coefficient vector [x0r, xr(Q), x0c, xc(Q), xmb(UV)].
struct Layout {
  int Q = 0;
  int UV = 0;

  int radar_size() const { return Q + 1; }
  int comm_size() const { return Q + UV + 1; }
  int total() const { return radar_size() + comm_size(); }
  int radar_echo() const { return 0; }
  int radar_grid(int q) const { return 1 + q; }
  int comm_los() const { return Q + 1; }
  int comm_grid(int q) const { return Q + 2 + q; }
  int comm_mb(int j) const { return 2 * Q + 2 + j; }
};

class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  virtual Index rows() const = 0;
  virtual Index cols() const = 0;
  virtual VecC apply(const VecC& x) const = 0;
  virtual VecC adjoint(const VecC& r) const = 0;
  virtual MatC to_dense() const;
};

class DenseOperator final : public LinearOperator {
 public:
  explicit DenseOperator(MatC m) : m_(std::move(m)) {}
  Index rows() const override { return m_.rows(); }
  Index cols() const override { return m_.cols(); }
  VecC apply(const VecC& x) const override { return m_ * x; }
  VecC adjoint(const VecC& r) const override { return m_.adjoint() * r; }
  MatC to_dense() const override { return m_; }
  const MatC& matrix() const { return m_; }

 private:
  MatC m_;
};

/// Implicit (diag(u) Dbar) kron Abar; column v*U + u, row n*M + m.
class KroneckerOperator final : public LinearOperator {
 public:
  KroneckerOperator(MatC abar, MatC dbar, VecC u);
  Index rows() const override { return abar_.rows() * dbar_.rows(); }
  Index cols() const override { return abar_.cols() * dbar_.cols(); }
  VecC apply(const VecC& x) const override;
  VecC adjoint(const VecC& r) const override;
  MatC to_dense() const override;
  /// Squared norm of every column, same order as apply().
  VecR column_sq_norms() const;

 private:
  MatC abar_;  // M x U
  MatC dbar_;  // Nu x V
  VecC u_;
};

/// Horizontal concatenation [A1 A2 ...].
class StackedOperator final : public LinearOperator {
 public:
  explicit StackedOperator(std::vector<std::shared_ptr<const LinearOperator>> parts);
  Index rows() const override { return rows_; }
  Index cols() const override { return cols_; }
  VecC apply(const VecC& x) const override;
  VecC adjoint(const VecC& r) const override;

 private:
  std::vector<std::shared_ptr<const LinearOperator>> parts_;
  Index rows_ = 0;
  Index cols_ = 0;
};

struct MeasurementBlock {
  std::shared_ptr<const LinearOperator> op;
  Index offset = 0;  // first coefficient of this block in the joint vector
  double T = 0.0;    // scalar bound, T_b I >= Phi_b^H Phi_b
};

/// Block-diagonal joint measurement with per-block bounds.
class MeasurementModel {
 public:
  MeasurementModel() = default;
  explicit MeasurementModel(std::vector<std::shared_ptr<const LinearOperator>> blocks);
  static MeasurementModel from_dense(const std::vector<MatC>& blocks);

  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  const MeasurementBlock& block(int b) const { return blocks_[b]; }
  Index cols() const { return cols_; }
  Index block_size(int b) const { return blocks_[b].op->cols(); }
  double T(int b) const { return blocks_[b].T; }
  void set_T(int b, double t) { blocks_[b].T = t; }
  /// Per-coefficient diagonal of the bound matrix.
  VecR T_diag() const;
  int block_of(Index i) const;

  VecC apply(int b, const VecC& x_b) const { return blocks_[b].op->apply(x_b); }
  VecC adjoint(int b, const VecC& r_b) const { return blocks_[b].op->adjoint(r_b); }
  MatC dense(int b) const { return blocks_[b].op->to_dense(); }
  MatC dense_joint() const;

 private:
  std::vector<MeasurementBlock> blocks_;
  Index cols_ = 0;
};

struct PowerIterationResult {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

PowerIterationResult power_iteration_lambda_max(const LinearOperator& op, double tol = 1e-8,
                                                int max_iter = 500);

/// Sets T_b = lambda_max(Phi_b^H Phi_b) per block (slightly inflated so the bound holds
/// despite finite convergence). When iteration stalls, small blocks use a dense eigensolve
/// and larger ones fall back to ||Phi_b||_F^2.
void compute_T(MeasurementModel& model);

enum class AssemblyMode { Dense, Implicit };

struct ColumnJacobian {
  VecC value;
  std::vector<VecC> d;  // one derivative per parameter, order documented per builder call
};

/// Builds measurement columns and their parameter derivatives.
class ModelBuilder {
 public:
  ModelBuilder(ArrayConfig array, OfdmConfig ofdm, PilotSet pilots, Position2D bs,
               PositionGrid grid, AngleDelayGrid ad);

  const ArrayConfig& array() const { return array_; }
  const OfdmConfig& ofdm() const { return ofdm_; }
  const PilotSet& pilots() const { return pilots_; }
  const PositionGrid& grid() const { return grid_; }
  const AngleDelayGrid& angle_delay() const { return ad_; }
  Position2D bs() const { return bs_; }
  Layout layout() const { return {grid_.size(), ad_.size()}; }
  Index radar_rows() const;
  Index comm_rows() const;

  VecC radar_column(Position2D p) const;
  /// d: [d/dx, d/dy]
  ColumnJacobian radar_column_jac(Position2D p) const;
  VecC comm_los_column(Position2D pu, double tau_o) const;
  /// d: [d/dpu.x, d/dpu.y, d/dtau_o]
  ColumnJacobian comm_los_column_jac(Position2D pu, double tau_o) const;
  VecC comm_scatter_column(Position2D r, Position2D pu, double tau_o) const;
  /// d: [d/dr.x, d/dr.y, d/dpu.x, d/dpu.y, d/dtau_o]
  ColumnJacobian comm_scatter_column_jac(Position2D r, Position2D pu, double tau_o) const;

  /// Columns that depend on the sensing parameters.
  MatC radar_matrix(const SensingParams& th) const;
  MatC comm_param_matrix(const SensingParams& th) const;  // [los, grid]
  std::shared_ptr<const KroneckerOperator> multibounce_operator() const { return mb_; }

  MeasurementModel assemble(const SensingParams& th,
                            AssemblyMode mode = AssemblyMode::Dense) const;
  SensingParams initial_params(Position2D pu, double tau_o) const;

 private:
  ArrayConfig array_;
  OfdmConfig ofdm_;
  PilotSet pilots_;
  Position2D bs_;
  PositionGrid grid_;
  AngleDelayGrid ad_;
  std::shared_ptr<const KroneckerOperator> mb_;
  MatC mb_dense_;
};

/// Free-function form of ModelBuilder::assemble followed by compute_T.
MeasurementModel assemble_measurement(const ModelBuilder& builder, const SensingParams& th,
                                      AssemblyMode mode = AssemblyMode::Dense);

/// The sparse coefficient vector of an on-grid scene (positions must coincide with params).
VecC scene_coefficients(const Scene& scene, const ModelBuilder& builder, const SensingParams& th,
                        double tol = 1e-9);

}  // namespace isac
