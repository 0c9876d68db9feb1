#include "isac/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace isac {

double distance(Position2D a, Position2D b) { return std::hypot(a.x - b.x, a.y - b.y); }

Position2D Region::clamp(Position2D p) const {
  return {std::clamp(p.x, x_min, x_max), std::clamp(p.y, y_min, y_max)};
}

void Region::validate() const {
  if (!(x_max > x_min) || !(y_max > y_min)) throw ConfigError("region box is empty");
}

void ArrayConfig::validate() const {
  if (num_antennas < 1) throw ConfigError("array needs at least one antenna");
}

namespace {

void check_pilots(const std::vector<int>& set, int n, const char* name) {
  if (set.empty()) throw ConfigError(std::string(name) + " pilot set is empty");
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i] < 0 || set[i] >= n)
      throw ConfigError(std::string(name) + " pilot index out of range");
    if (i > 0 && set[i] <= set[i - 1])
      throw ConfigError(std::string(name) + " pilot set must be strictly ascending");
  }
}

}  // namespace

void OfdmConfig::validate() const {
  if (num_subcarriers < 1) throw ConfigError("need at least one subcarrier");
  if (!(subcarrier_spacing > 0)) throw ConfigError("subcarrier spacing must be positive");
  if (!(speed_of_light > 0)) throw ConfigError("speed of light must be positive");
  check_pilots(radar_pilots, num_subcarriers, "radar");
  check_pilots(comm_pilots, num_subcarriers, "comm");
}

double aoa(Position2D ref, Position2D p) {
  const double dx = p.x - ref.x;
  const double dy = p.y - ref.y;
  if (dx == 0.0 && dy == 0.0) throw DomainError("aoa: coincident points");
  if (dx == 0.0) return dy > 0 ? kPi / 2 : -kPi / 2;
  const double base = std::atan(dy / dx);
  return dx < 0 ? base + kPi : base;
}

std::pair<double, double> aoa_gradient(Position2D ref, Position2D p) {
  const double dx = p.x - ref.x;
  const double dy = p.y - ref.y;
  const double d2 = dx * dx + dy * dy;
  if (d2 == 0.0) throw DomainError("aoa gradient: coincident points");
  return {-dy / d2, dx / d2};
}

double radar_round_trip_delay(Position2D bs, Position2D p, double c) {
  return 2.0 * distance(bs, p) / c;
}

double single_bounce_relative_delay(Position2D bs, Position2D scatterer, Position2D user,
                                    double c) {
  const double excess = distance(bs, scatterer) + distance(user, scatterer) - distance(bs, user);
  // rounding can push a collinear point a hair below zero
  return std::max(excess, 0.0) / c;
}

VecC steering_vector(const ArrayConfig& cfg, double theta) {
  cfg.validate();
  const int m = cfg.num_antennas;
  const double s = std::sin(theta);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  VecC a(m);
  for (int i = 0; i < m; ++i) a[i] = std::polar(scale, kPi * i * s);
  return a;
}

VecC steering_derivative(const ArrayConfig& cfg, double theta) {
  VecC a = steering_vector(cfg, theta);
  const double c = std::cos(theta);
  for (Index i = 0; i < a.size(); ++i) a[i] *= cd(0.0, kPi * static_cast<double>(i) * c);
  return a;
}

VecC delay_vector(const OfdmConfig& cfg, double tau, std::span<const int> subcarriers) {
  std::vector<int> idx(subcarriers.begin(), subcarriers.end());
  std::sort(idx.begin(), idx.end());
  VecC d(static_cast<Index>(idx.size()));
  const double w = -2.0 * kPi * cfg.subcarrier_spacing * tau;
  for (std::size_t i = 0; i < idx.size(); ++i)
    d[static_cast<Index>(i)] = std::polar(1.0, w * idx[i]);
  return d;
}

}  // namespace isac
