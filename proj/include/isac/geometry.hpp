#pragma once

#include <span>
#include <vector>

#include "isac/common.hpp"

namespace isac {

struct Position2D {
  double x = 0.0;
  double y = 0.0;

  friend Position2D operator+(Position2D a, Position2D b) { return {a.x + b.x, a.y + b.y}; }
  friend Position2D operator-(Position2D a, Position2D b) { return {a.x - b.x, a.y - b.y}; }
  friend bool operator==(const Position2D&, const Position2D&) = default;
};

double distance(Position2D a, Position2D b);

/// Axis-aligned box in meters.
struct Region {
  double x_min = -50.0;
  double x_max = 50.0;
  double y_min = -50.0;
  double y_max = 50.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  Position2D center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
  bool contains(Position2D p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
  Position2D clamp(Position2D p) const;
  void validate() const;
};

/// Uniform linear array with half-wavelength spacing.
struct ArrayConfig {
  int num_antennas = 1;

  void validate() const;
};

struct OfdmConfig {
  int num_subcarriers = 1;
  double subcarrier_spacing = 30e3;  // Hz
  double carrier_freq = 3.5e9;       // Hz
  std::vector<int> radar_pilots;     // ascending subcarrier indices
  std::vector<int> comm_pilots;
  double speed_of_light = kSpeedOfLight;

  double bandwidth() const { return num_subcarriers * subcarrier_spacing; }
  void validate() const;
};

/// Angle of p seen from ref, measured anticlockwise from +x, in (-pi/2, 3pi/2).
double aoa(Position2D ref, Position2D p);

/// Partial derivatives of aoa(ref, p) with respect to p.x and p.y.
std::pair<double, double> aoa_gradient(Position2D ref, Position2D p);

double radar_round_trip_delay(Position2D bs, Position2D p, double c = kSpeedOfLight);

/// Excess delay of the bs -> scatterer -> user path over the direct path.
double single_bounce_relative_delay(Position2D bs, Position2D scatterer, Position2D user,
                                    double c = kSpeedOfLight);

VecC steering_vector(const ArrayConfig& cfg, double theta);

/// d a(theta) / d theta.
VecC steering_derivative(const ArrayConfig& cfg, double theta);

/// Entries exp(-j 2 pi n f0 tau) over the given subcarriers, in ascending order.
VecC delay_vector(const OfdmConfig& cfg, double tau, std::span<const int> subcarriers);

}  // namespace isac
