#include "isac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace isac {

DetectionRates compute_detection(const VecR& q_support, const std::vector<int>& truth_cells) {
  const int Q = static_cast<int>(q_support.size());
  std::set<int> truth;
  for (int q : truth_cells) {
    if (q < 0 || q >= Q) throw ConfigError("truth cell index outside the grid");
    truth.insert(q);
  }
  DetectionRates d;
  d.num_true = static_cast<int>(truth.size());
  d.num_empty = Q - d.num_true;
  for (int q = 0; q < Q; ++q) {
    const bool det = q_support[q] > 0.5;
    if (truth.count(q)) {
      if (!det) ++d.misses;
    } else if (det) {
      ++d.false_alarms;
    }
  }
  d.miss_rate = d.num_true ? static_cast<double>(d.misses) / d.num_true : 0.0;
  d.false_alarm_rate = d.num_empty ? static_cast<double>(d.false_alarms) / d.num_empty : 0.0;
  return d;
}

std::vector<int> min_cost_assignment(const MatR& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw ConfigError("assignment needs rows <= cols");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // potentials and augmenting paths, 1-based with a sentinel column 0
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

RmseResult compute_rmse(const std::vector<Position2D>& estimated,
                        const std::vector<Position2D>& truth, double gate) {
  RmseResult r;
  r.rmse = std::numeric_limits<double>::quiet_NaN();
  if (estimated.empty() || truth.empty()) return r;
  const bool t_rows = truth.size() <= estimated.size();
  const auto& rows = t_rows ? truth : estimated;
  const auto& cols = t_rows ? estimated : truth;
  const double gate2 = gate * gate;
  // an unmatched pair costs more than any set of gated pairs
  const double big = gate2 * (static_cast<double>(rows.size()) + 1.0);
  MatR cost(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double d2 = std::pow(distance(rows[i], cols[j]), 2);
      cost(i, j) = d2 <= gate2 ? d2 : big;
    }
  const std::vector<int> a = min_cost_assignment(cost);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (cost(i, a[i]) < big) {
      sum += cost(i, a[i]);
      ++r.matched;
    }
  }
  if (r.matched) r.rmse = std::sqrt(sum / r.matched);
  return r;
}

double compute_nmse(const VecC& h_hat, const VecC& h_true) {
  if (h_hat.size() != h_true.size()) throw ConfigError("nmse: length mismatch");
  const double n = h_true.squaredNorm();
  if (!(n > 0)) throw DomainError("nmse: reference channel has zero norm");
  return (h_hat - h_true).squaredNorm() / n;
}

double to_db(double nmse) { return 10.0 * std::log10(nmse); }

void MetricsRecord::validate() const {
  auto rate = [](double p) { return std::isnan(p) || (p >= 0.0 && p <= 1.0); };
  if (!rate(miss_rate) || !rate(false_alarm_rate)) throw NumericError("rate outside [0,1]");
  if (nmse_radar < 0 || nmse_comm < 0) throw NumericError("negative NMSE");
}

MetricsRecord evaluate(const EstimateResult& est, const Scene& scene, const ModelBuilder& builder,
                       const Observation& noiseless) {
  const Layout lay = builder.layout();
  const PositionGrid& grid = builder.grid();
  MetricsRecord m;
  m.variant = est.variant;
  m.overlap = scene.overlap;
  m.iterations = est.iterations;
  m.converged = est.converged;
  m.runtime_per_iteration = est.iterations ? est.seconds / est.iterations : est.seconds;

  // detection is scored on the radar supports only
  std::vector<int> tcells;
  std::vector<Position2D> tpos, spos;
  for (const auto& t : scene.targets) {
    tpos.push_back(t.pos);
    if (int q = grid.locate(t.pos); q >= 0) tcells.push_back(q);
  }
  for (const auto& s : scene.scatterers) spos.push_back(s.pos);
  const VecR qr = est.q_s.segment(lay.radar_grid(0), lay.Q);
  const VecR qc = est.q_s.segment(lay.comm_grid(0), lay.Q);
  const DetectionRates dr = compute_detection(qr, tcells);
  m.miss_rate = dr.miss_rate;
  m.false_alarm_rate = dr.false_alarm_rate;

  std::vector<Position2D> er, ec;
  for (int q = 0; q < lay.Q; ++q) {
    if (qr[q] > 0.5) er.push_back(est.theta.r[q]);
    if (qc[q] > 0.5) ec.push_back(est.theta.r[q]);
  }
  m.rmse_target = compute_rmse(er, tpos).rmse;
  m.rmse_scatterer = compute_rmse(ec, spos).rmse;

  const MeasurementModel model = builder.assemble(est.theta, AssemblyMode::Dense);
  const VecC hr = model.apply(0, est.x.head(lay.radar_size()));
  const VecC hc = model.apply(1, est.x.segment(lay.comm_los(), lay.comm_size()));
  m.nmse_radar = noiseless.y_r.squaredNorm() > 0 ? compute_nmse(hr, noiseless.y_r)
                                                 : std::numeric_limits<double>::quiet_NaN();
  m.nmse_comm = compute_nmse(hc, noiseless.y_c);
  return m;
}

}  // namespace isac
