#include "isac/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

namespace isac {

namespace {

int cells_along(double extent, double res) {
  const double k = extent / res;
  const double r = std::round(k);
  if (r < 1 || std::abs(k - r) > 1e-9 * std::max(1.0, k))
    throw ConfigError("region extent is not a multiple of the grid resolution");
  return static_cast<int>(r);
}

}  // namespace

Region PositionGrid::cell(int q) const {
  const double x0 = region.x_min + col(q) * resolution;
  const double y0 = region.y_min + row(q) * resolution;
  return {x0, x0 + resolution, y0, y0 + resolution};
}

int PositionGrid::locate(Position2D p) const {
  if (!region.contains(p)) return -1;
  const int c = std::min(W - 1, static_cast<int>((p.x - region.x_min) / resolution));
  const int r = std::min(H - 1, static_cast<int>((p.y - region.y_min) / resolution));
  return index(r, c);
}

std::pair<PositionGrid, AngleDelayGrid> build_grids(const GridConfig& g,
                                                    const AngleDelayConfig& ad) {
  g.region.validate();
  if (!(g.resolution > 0)) throw ConfigError("grid resolution must be positive");
  if (ad.U < 1 || ad.V < 1) throw ConfigError("angle/delay grid sizes must be positive");
  if (ad.tau_max < ad.tau_min) throw ConfigError("delay grid range is reversed");
  PositionGrid pg;
  pg.H = cells_along(g.region.height(), g.resolution);
  pg.W = cells_along(g.region.width(), g.resolution);
  pg.region = g.region;
  pg.resolution = g.resolution;
  pg.points.resize(pg.size());
  for (int c = 0; c < pg.W; ++c)
    for (int r = 0; r < pg.H; ++r)
      pg.points[pg.index(r, c)] = {g.region.x_min + (c + 0.5) * g.resolution,
                                   g.region.y_min + (r + 0.5) * g.resolution};
  AngleDelayGrid adg;
  for (int u = 0; u < ad.U; ++u) {
    // bin midpoints: sin = -1 and sin = +1 alias for a half-wavelength array
    const double s = -1.0 + (2.0 * u + 1.0) / ad.U;
    adg.angles.push_back(std::asin(s));
  }
  for (int v = 0; v < ad.V; ++v) {
    const double t = ad.V == 1 ? 0.5 * (ad.tau_min + ad.tau_max)
                               : ad.tau_min + (ad.tau_max - ad.tau_min) * v / (ad.V - 1);
    adg.delays.push_back(t);
  }
  return {std::move(pg), std::move(adg)};
}

MatC LinearOperator::to_dense() const {
  MatC m(rows(), cols());
  VecC e = VecC::Zero(cols());
  for (Index j = 0; j < cols(); ++j) {
    e[j] = 1.0;
    m.col(j) = apply(e);
    e[j] = 0.0;
  }
  return m;
}

KroneckerOperator::KroneckerOperator(MatC abar, MatC dbar, VecC u)
    : abar_(std::move(abar)), dbar_(std::move(dbar)), u_(std::move(u)) {
  if (u_.size() != dbar_.rows()) throw ConfigError("kronecker operator: pilot length mismatch");
}

VecC KroneckerOperator::apply(const VecC& x) const {
  if (x.size() != cols()) throw ConfigError("kronecker operator: input size mismatch");
  Eigen::Map<const MatC> X(x.data(), abar_.cols(), dbar_.cols());
  MatC Y = abar_ * X * dbar_.transpose();
  for (Index i = 0; i < Y.cols(); ++i) Y.col(i) *= u_[i];
  return Eigen::Map<const VecC>(Y.data(), Y.size());
}

VecC KroneckerOperator::adjoint(const VecC& r) const {
  if (r.size() != rows()) throw ConfigError("kronecker operator: input size mismatch");
  MatC R = Eigen::Map<const MatC>(r.data(), abar_.rows(), dbar_.rows());
  for (Index i = 0; i < R.cols(); ++i) R.col(i) *= std::conj(u_[i]);
  MatC X = abar_.adjoint() * R * dbar_.conjugate();
  return Eigen::Map<const VecC>(X.data(), X.size());
}

MatC KroneckerOperator::to_dense() const {
  const Index M = abar_.rows();
  const Index U = abar_.cols();
  MatC m(rows(), cols());
  for (Index v = 0; v < dbar_.cols(); ++v)
    for (Index u = 0; u < U; ++u)
      for (Index n = 0; n < dbar_.rows(); ++n)
        m.block(n * M, v * U + u, M, 1) = (u_[n] * dbar_(n, v)) * abar_.col(u);
  return m;
}

VecR KroneckerOperator::column_sq_norms() const {
  VecR out(cols());
  const Index U = abar_.cols();
  for (Index v = 0; v < dbar_.cols(); ++v) {
    const double dn = u_.cwiseProduct(dbar_.col(v)).squaredNorm();
    for (Index u = 0; u < U; ++u) out[v * U + u] = abar_.col(u).squaredNorm() * dn;
  }
  return out;
}

StackedOperator::StackedOperator(std::vector<std::shared_ptr<const LinearOperator>> parts)
    : parts_(std::move(parts)) {
  if (parts_.empty()) throw ConfigError("stacked operator needs at least one part");
  rows_ = parts_.front()->rows();
  for (const auto& p : parts_) {
    if (p->rows() != rows_) throw ConfigError("stacked operator: row mismatch");
    cols_ += p->cols();
  }
}

VecC StackedOperator::apply(const VecC& x) const {
  VecC y = VecC::Zero(rows_);
  Index off = 0;
  for (const auto& p : parts_) {
    y += p->apply(x.segment(off, p->cols()));
    off += p->cols();
  }
  return y;
}

VecC StackedOperator::adjoint(const VecC& r) const {
  VecC x(cols_);
  Index off = 0;
  for (const auto& p : parts_) {
    x.segment(off, p->cols()) = p->adjoint(r);
    off += p->cols();
  }
  return x;
}

MeasurementModel::MeasurementModel(std::vector<std::shared_ptr<const LinearOperator>> blocks) {
  for (auto& op : blocks) {
    if (!op) throw ConfigError("null measurement block");
    blocks_.push_back({op, cols_, 0.0});
    cols_ += op->cols();
  }
}

MeasurementModel MeasurementModel::from_dense(const std::vector<MatC>& blocks) {
  std::vector<std::shared_ptr<const LinearOperator>> ops;
  for (const auto& b : blocks) ops.push_back(std::make_shared<DenseOperator>(b));
  MeasurementModel m(std::move(ops));
  compute_T(m);
  return m;
}

VecR MeasurementModel::T_diag() const {
  VecR t(cols_);
  for (const auto& b : blocks_) t.segment(b.offset, b.op->cols()).setConstant(b.T);
  return t;
}

int MeasurementModel::block_of(Index i) const {
  for (int b = 0; b < num_blocks(); ++b)
    if (i >= blocks_[b].offset && i < blocks_[b].offset + blocks_[b].op->cols()) return b;
  throw DomainError("coefficient index outside the model");
}

MatC MeasurementModel::dense_joint() const {
  Index rows = 0;
  for (const auto& b : blocks_) rows += b.op->rows();
  MatC m = MatC::Zero(rows, cols_);
  Index r0 = 0;
  for (const auto& b : blocks_) {
    m.block(r0, b.offset, b.op->rows(), b.op->cols()) = b.op->to_dense();
    r0 += b.op->rows();
  }
  return m;
}

PowerIterationResult power_iteration_lambda_max(const LinearOperator& op, double tol,
                                                int max_iter) {
  PowerIterationResult res;
  const Index n = op.cols();
  if (n == 0) return res;
  // fixed pseudo-random start keeps the result deterministic
  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> g;
  VecC v(n);
  for (Index i = 0; i < n; ++i) {
    const double re = g(rng);
    const double im = g(rng);
    v[i] = cd(re, im);
  }
  v.normalize();
  double lambda = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    VecC w = op.adjoint(op.apply(v));
    const double next = std::real(v.dot(w));
    const double nw = w.norm();
    res.iterations = it;
    if (nw == 0.0) {
      res.value = 0.0;
      res.converged = true;
      return res;
    }
    v = w / nw;
    if (it > 1 && std::abs(next - lambda) <= tol * std::abs(next)) {
      res.value = next;
      res.converged = true;
      return res;
    }
    lambda = next;
  }
  res.value = lambda;
  return res;
}

namespace {
constexpr Index kDenseEigenCap = 4000;
}  // namespace

void compute_T(MeasurementModel& model) {
  for (int b = 0; b < model.num_blocks(); ++b) {
    const auto& op = *model.block(b).op;
    const PowerIterationResult pi = power_iteration_lambda_max(op);
    if (pi.converged) {
      model.set_T(b, pi.value * (1.0 + 1e-6));
    } else if (op.cols() <= kDenseEigenCap) {
      // small gap between the top eigenvalues: an exact eigensolve is still cheap
      const MatC phi = op.to_dense();
      const MatC G = phi.adjoint() * phi;
      Eigen::SelfAdjointEigenSolver<MatC> es(G, Eigen::EigenvaluesOnly);
      model.set_T(b, es.eigenvalues().maxCoeff() * (1.0 + 1e-6));
    } else {
      const double fro = op.to_dense().squaredNorm();
      std::cerr << "warning: power iteration did not converge for block " << b
                << ", using Frobenius bound\n";
      model.set_T(b, fro);
    }
  }
}

ModelBuilder::ModelBuilder(ArrayConfig array, OfdmConfig ofdm, PilotSet pilots, Position2D bs,
                           PositionGrid grid, AngleDelayGrid ad)
    : array_(array),
      ofdm_(std::move(ofdm)),
      pilots_(std::move(pilots)),
      bs_(bs),
      grid_(std::move(grid)),
      ad_(std::move(ad)) {
  array_.validate();
  ofdm_.validate();
  const int M = array_.num_antennas;
  const auto nb = static_cast<Index>(ofdm_.radar_pilots.size());
  const auto nu = static_cast<Index>(ofdm_.comm_pilots.size());
  if (pilots_.downlink.rows() != M || pilots_.downlink.cols() != nb || pilots_.uplink.size() != nu)
    throw ConfigError("pilot set does not match array/OFDM configuration");
  if (grid_.size() < 1) throw ConfigError("empty position grid");
  MatC abar(M, ad_.U());
  for (int u = 0; u < ad_.U(); ++u) abar.col(u) = steering_vector(array_, ad_.angles[u]);
  MatC dbar(nu, ad_.V());
  for (int v = 0; v < ad_.V(); ++v) dbar.col(v) = delay_vector(ofdm_, ad_.delays[v], ofdm_.comm_pilots);
  mb_ = std::make_shared<KroneckerOperator>(std::move(abar), std::move(dbar), pilots_.uplink);
  mb_dense_ = mb_->to_dense();
}

Index ModelBuilder::radar_rows() const {
  return array_.num_antennas * static_cast<Index>(ofdm_.radar_pilots.size());
}

Index ModelBuilder::comm_rows() const {
  return array_.num_antennas * static_cast<Index>(ofdm_.comm_pilots.size());
}

namespace {

double omega(const OfdmConfig& o, int n) { return -2.0 * kPi * n * o.subcarrier_spacing; }

}  // namespace

VecC ModelBuilder::radar_column(Position2D p) const {
  const int M = array_.num_antennas;
  const VecC a = steering_vector(array_, aoa(bs_, p));
  const double tau = radar_round_trip_delay(bs_, p, ofdm_.speed_of_light);
  VecC col(radar_rows());
  for (Index i = 0; i < pilots_.downlink.cols(); ++i) {
    const cd g = pilots_.downlink.col(i).cwiseProduct(a).sum();  // v^T a
    const cd ph = std::polar(1.0, omega(ofdm_, ofdm_.radar_pilots[i]) * tau);
    col.segment(i * M, M) = (g * ph) * a;
  }
  return col;
}

ColumnJacobian ModelBuilder::radar_column_jac(Position2D p) const {
  const int M = array_.num_antennas;
  const double theta = aoa(bs_, p);
  const VecC a = steering_vector(array_, theta);
  const VecC da = steering_derivative(array_, theta);
  const double c = ofdm_.speed_of_light;
  const double dist = distance(bs_, p);
  if (dist == 0.0) throw DomainError("grid point coincides with the base station");
  const double tau = 2.0 * dist / c;
  const auto [dth_dx, dth_dy] = aoa_gradient(bs_, p);
  const double dtau_dx = 2.0 * (p.x - bs_.x) / (dist * c);
  const double dtau_dy = 2.0 * (p.y - bs_.y) / (dist * c);
  ColumnJacobian J;
  J.value.resize(radar_rows());
  J.d.assign(2, VecC(radar_rows()));
  for (Index i = 0; i < pilots_.downlink.cols(); ++i) {
    const double w = omega(ofdm_, ofdm_.radar_pilots[i]);
    const auto v = pilots_.downlink.col(i);
    const cd g = v.cwiseProduct(a).sum();
    const cd dg = v.cwiseProduct(da).sum();
    const cd ph = std::polar(1.0, w * tau);
    const VecC val = (g * ph) * a;
    const VecC dtheta = ph * (dg * a + g * da);
    const VecC dtau = cd(0.0, w) * val;
    J.value.segment(i * M, M) = val;
    J.d[0].segment(i * M, M) = dth_dx * dtheta + dtau_dx * dtau;
    J.d[1].segment(i * M, M) = dth_dy * dtheta + dtau_dy * dtau;
  }
  return J;
}

VecC ModelBuilder::comm_los_column(Position2D pu, double tau_o) const {
  const int M = array_.num_antennas;
  const VecC a = steering_vector(array_, aoa(bs_, pu));
  VecC col(comm_rows());
  for (Index i = 0; i < pilots_.uplink.size(); ++i)
    col.segment(i * M, M) =
        (pilots_.uplink[i] * std::polar(1.0, omega(ofdm_, ofdm_.comm_pilots[i]) * tau_o)) * a;
  return col;
}

ColumnJacobian ModelBuilder::comm_los_column_jac(Position2D pu, double tau_o) const {
  const int M = array_.num_antennas;
  const double theta = aoa(bs_, pu);
  const VecC a = steering_vector(array_, theta);
  const VecC da = steering_derivative(array_, theta);
  const auto [dth_dx, dth_dy] = aoa_gradient(bs_, pu);
  ColumnJacobian J;
  J.value.resize(comm_rows());
  J.d.assign(3, VecC(comm_rows()));
  for (Index i = 0; i < pilots_.uplink.size(); ++i) {
    const double w = omega(ofdm_, ofdm_.comm_pilots[i]);
    const cd s = pilots_.uplink[i] * std::polar(1.0, w * tau_o);
    J.value.segment(i * M, M) = s * a;
    J.d[0].segment(i * M, M) = (s * dth_dx) * da;
    J.d[1].segment(i * M, M) = (s * dth_dy) * da;
    J.d[2].segment(i * M, M) = (s * cd(0.0, w)) * a;
  }
  return J;
}

VecC ModelBuilder::comm_scatter_column(Position2D r, Position2D pu, double tau_o) const {
  const int M = array_.num_antennas;
  const VecC a = steering_vector(array_, aoa(bs_, r));
  const double tau = single_bounce_relative_delay(bs_, r, pu, ofdm_.speed_of_light) + tau_o;
  VecC col(comm_rows());
  for (Index i = 0; i < pilots_.uplink.size(); ++i)
    col.segment(i * M, M) =
        (pilots_.uplink[i] * std::polar(1.0, omega(ofdm_, ofdm_.comm_pilots[i]) * tau)) * a;
  return col;
}

ColumnJacobian ModelBuilder::comm_scatter_column_jac(Position2D r, Position2D pu,
                                                     double tau_o) const {
  const int M = array_.num_antennas;
  const double c = ofdm_.speed_of_light;
  const double theta = aoa(bs_, r);
  const VecC a = steering_vector(array_, theta);
  const VecC da = steering_derivative(array_, theta);
  const auto [dth_dx, dth_dy] = aoa_gradient(bs_, r);
  const double d_br = distance(bs_, r);
  const double d_ur = distance(pu, r);
  const double d_bu = distance(bs_, pu);
  if (d_br == 0.0 || d_ur == 0.0 || d_bu == 0.0)
    throw DomainError("scatterer grid point coincides with the base station or user");
  const double tau = single_bounce_relative_delay(bs_, r, pu, c) + tau_o;
  // partial derivatives of the relative delay
  const double dr_x = ((r.x - bs_.x) / d_br + (r.x - pu.x) / d_ur) / c;
  const double dr_y = ((r.y - bs_.y) / d_br + (r.y - pu.y) / d_ur) / c;
  const double dp_x = ((pu.x - r.x) / d_ur - (pu.x - bs_.x) / d_bu) / c;
  const double dp_y = ((pu.y - r.y) / d_ur - (pu.y - bs_.y) / d_bu) / c;
  ColumnJacobian J;
  J.value.resize(comm_rows());
  J.d.assign(5, VecC(comm_rows()));
  for (Index i = 0; i < pilots_.uplink.size(); ++i) {
    const double w = omega(ofdm_, ofdm_.comm_pilots[i]);
    const cd s = pilots_.uplink[i] * std::polar(1.0, w * tau);
    const VecC val = s * a;
    const VecC dtau = cd(0.0, w) * val;
    const VecC dtheta = s * da;
    J.value.segment(i * M, M) = val;
    J.d[0].segment(i * M, M) = dth_dx * dtheta + dr_x * dtau;
    J.d[1].segment(i * M, M) = dth_dy * dtheta + dr_y * dtau;
    J.d[2].segment(i * M, M) = dp_x * dtau;
    J.d[3].segment(i * M, M) = dp_y * dtau;
    J.d[4].segment(i * M, M) = dtau;
  }
  return J;
}

MatC ModelBuilder::radar_matrix(const SensingParams& th) const {
  const int Q = grid_.size();
  if (static_cast<int>(th.r.size()) != Q) throw ConfigError("grid parameter count mismatch");
  MatC m(radar_rows(), Q + 1);
  m.col(0) = radar_column(th.p_u);
  for (int q = 0; q < Q; ++q) m.col(q + 1) = radar_column(th.r[q]);
  return m;
}

MatC ModelBuilder::comm_param_matrix(const SensingParams& th) const {
  const int Q = grid_.size();
  if (static_cast<int>(th.r.size()) != Q) throw ConfigError("grid parameter count mismatch");
  MatC m(comm_rows(), Q + 1);
  m.col(0) = comm_los_column(th.p_u, th.tau_o);
  for (int q = 0; q < Q; ++q) m.col(q + 1) = comm_scatter_column(th.r[q], th.p_u, th.tau_o);
  return m;
}

MeasurementModel ModelBuilder::assemble(const SensingParams& th, AssemblyMode mode) const {
  auto radar = std::make_shared<DenseOperator>(radar_matrix(th));
  MatC cp = comm_param_matrix(th);
  std::shared_ptr<const LinearOperator> comm;
  if (mode == AssemblyMode::Dense) {
    MatC full(comm_rows(), cp.cols() + mb_dense_.cols());
    full << cp, mb_dense_;
    comm = std::make_shared<DenseOperator>(std::move(full));
  } else {
    comm = std::make_shared<StackedOperator>(std::vector<std::shared_ptr<const LinearOperator>>{
        std::make_shared<DenseOperator>(std::move(cp)), mb_});
  }
  return MeasurementModel({radar, comm});
}

SensingParams ModelBuilder::initial_params(Position2D pu, double tau_o) const {
  return {grid_.points, pu, tau_o};
}

MeasurementModel assemble_measurement(const ModelBuilder& builder, const SensingParams& th,
                                      AssemblyMode mode) {
  MeasurementModel m = builder.assemble(th, mode);
  compute_T(m);
  return m;
}

VecC scene_coefficients(const Scene& scene, const ModelBuilder& builder, const SensingParams& th,
                        double tol) {
  const Layout lay = builder.layout();
  VecC x = VecC::Zero(lay.total());
  auto grid_index = [&](Position2D p) {
    for (int q = 0; q < lay.Q; ++q)
      if (distance(th.r[q], p) <= tol) return q;
    throw DomainError("scene position is not on the grid");
  };
  if (distance(scene.user, th.p_u) > tol || std::abs(scene.tau_o - th.tau_o) > 1e-15)
    throw DomainError("scene user/offset differ from the sensing parameters");
  x[lay.radar_echo()] = scene.user_echo_gain;
  for (const auto& t : scene.targets) x[lay.radar_grid(grid_index(t.pos))] += t.gain;
  x[lay.comm_los()] = scene.los_gain;
  for (const auto& s : scene.scatterers) x[lay.comm_grid(grid_index(s.pos))] += s.gain;
  const auto& ad = builder.angle_delay();
  for (const auto& mb : scene.multibounce) {
    int uu = -1;
    int vv = -1;
    for (int u = 0; u < ad.U(); ++u)
      if (std::abs(std::sin(ad.angles[u]) - std::sin(mb.aoa)) <= 1e-12) uu = u;
    for (int v = 0; v < ad.V(); ++v)
      if (std::abs(ad.delays[v] - (mb.delay + scene.tau_o)) <= 1e-15) vv = v;
    if (uu < 0 || vv < 0) throw DomainError("multi-bounce path is not on the angle/delay grid");
    x[lay.comm_mb(vv * ad.U() + uu)] += mb.gain;
  }
  return x;
}

}  // namespace isac
