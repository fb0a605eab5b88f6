// UTM forward/inverse projection on the WGS-84 ellipsoid.
//
// Transverse Mercator evaluated with 6th-order Krueger series, good to
// well under a millimeter inside a zone. Scale 0.9996, false easting
// 500 km, false northing 10000 km on the southern hemisphere. Altitude
// passes through untouched.

#pragma once

#include <cmath>
#include <stdexcept>

namespace railfuse {

struct UtmPoint {
  double easting = 0.0;    // m
  double northing = 0.0;   // m
  int zone = 0;            // 1..60
  bool north = true;
  double altitude = 0.0;   // m, pass-through
};

namespace wgs84 {
inline constexpr double kA = 6378137.0;
inline constexpr double kF = 1.0 / 298.257223563;
inline constexpr double kK0 = 0.9996;
inline constexpr double kFalseEasting = 500000.0;
inline constexpr double kFalseNorthingSouth = 10000000.0;
}  // namespace wgs84

namespace detail {

struct KruegerCoeffs {
  double rect_radius;  // rectifying radius A
  double alpha[6];
  double beta[6];
  double n;
};

inline const KruegerCoeffs& krueger_coeffs() {
  static const KruegerCoeffs c = [] {
    KruegerCoeffs k{};
    const double n = wgs84::kF / (2.0 - wgs84::kF);
    const double n2 = n * n, n3 = n2 * n, n4 = n3 * n, n5 = n4 * n, n6 = n5 * n;
    k.n = n;
    k.rect_radius = wgs84::kA / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    k.alpha[0] = n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0 + 7891.0 * n6 / 37800.0;
    k.alpha[1] = 13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0 - 1983433.0 * n6 / 1935360.0;
    k.alpha[2] = 61.0 * n3 / 240.0 - 103.0 * n4 / 140.0 + 15061.0 * n5 / 26880.0 + 167603.0 * n6 / 181440.0;
    k.alpha[3] = 49561.0 * n4 / 161280.0 - 179.0 * n5 / 168.0 + 6601661.0 * n6 / 7257600.0;
    k.alpha[4] = 34729.0 * n5 / 80640.0 - 3418889.0 * n6 / 1995840.0;
    k.alpha[5] = 212378941.0 * n6 / 319334400.0;
    k.beta[0] = n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0 + 96199.0 * n6 / 604800.0;
    k.beta[1] = n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0 - 1118711.0 * n6 / 3870720.0;
    k.beta[2] = 17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0;
    k.beta[3] = 4397.0 * n4 / 161280.0 - 11.0 * n5 / 504.0 - 830251.0 * n6 / 7257600.0;
    k.beta[4] = 4583.0 * n5 / 161280.0 - 108847.0 * n6 / 3991680.0;
    k.beta[5] = 20648693.0 * n6 / 638668800.0;
    return k;
  }();
  return c;
}

}  // namespace detail

inline int utm_zone_for(double lon_deg) {
  double lon = lon_deg;
  while (lon >= 180.0) lon -= 360.0;
  while (lon < -180.0) lon += 360.0;
  int zone = static_cast<int>(std::floor((lon + 180.0) / 6.0)) + 1;
  if (zone > 60) zone = 60;
  return zone;
}

// forced_zone pins the zone (estimator keeps the zone of the first fix
// for a whole run); 0 means derive from longitude.
inline UtmPoint utm_from_wgs84(double lat_deg, double lon_deg, double altitude = 0.0,
                               int forced_zone = 0) {
  if (!(lat_deg > -80.0 && lat_deg < 84.0)) {
    throw std::domain_error("utm_from_wgs84: latitude outside (-80, 84)");
  }
  if (!(lon_deg >= -180.0 && lon_deg < 180.0)) {
    throw std::domain_error("utm_from_wgs84: longitude outside [-180, 180)");
  }
  const auto& k = detail::krueger_coeffs();
  const int zone = forced_zone > 0 ? forced_zone : utm_zone_for(lon_deg);
  const double lon0 = (zone * 6.0 - 183.0) * M_PI / 180.0;

  const double phi = lat_deg * M_PI / 180.0;
  const double lam = lon_deg * M_PI / 180.0 - lon0;

  const double e = std::sqrt(wgs84::kF * (2.0 - wgs84::kF));
  const double sphi = std::sin(phi);
  // conformal latitude
  const double t = std::sinh(std::atanh(sphi) - e * std::atanh(e * sphi));
  const double xip = std::atan2(t, std::cos(lam));
  const double etap = std::asinh(std::sin(lam) / std::hypot(t, std::cos(lam)));

  double xi = xip, eta = etap;
  for (int j = 0; j < 6; ++j) {
    xi += k.alpha[j] * std::sin(2.0 * (j + 1) * xip) * std::cosh(2.0 * (j + 1) * etap);
    eta += k.alpha[j] * std::cos(2.0 * (j + 1) * xip) * std::sinh(2.0 * (j + 1) * etap);
  }

  UtmPoint p;
  p.zone = zone;
  p.north = lat_deg >= 0.0;
  p.easting = wgs84::kFalseEasting + wgs84::kK0 * k.rect_radius * eta;
  p.northing = wgs84::kK0 * k.rect_radius * xi + (p.north ? 0.0 : wgs84::kFalseNorthingSouth);
  p.altitude = altitude;
  return p;
}

// Inverse projection; returns (lat_deg, lon_deg).
inline std::pair<double, double> wgs84_from_utm(const UtmPoint& p) {
  if (p.zone < 1 || p.zone > 60) throw std::domain_error("wgs84_from_utm: bad zone");
  const auto& k = detail::krueger_coeffs();
  const double lon0 = (p.zone * 6.0 - 183.0) * M_PI / 180.0;
  const double x = p.easting - wgs84::kFalseEasting;
  const double y = p.northing - (p.north ? 0.0 : wgs84::kFalseNorthingSouth);

  const double xi = y / (wgs84::kK0 * k.rect_radius);
  const double eta = x / (wgs84::kK0 * k.rect_radius);
  double xip = xi, etap = eta;
  for (int j = 0; j < 6; ++j) {
    xip -= k.beta[j] * std::sin(2.0 * (j + 1) * xi) * std::cosh(2.0 * (j + 1) * eta);
    etap -= k.beta[j] * std::cos(2.0 * (j + 1) * xi) * std::sinh(2.0 * (j + 1) * eta);
  }

  const double e = std::sqrt(wgs84::kF * (2.0 - wgs84::kF));
  const double tau_p = std::sin(xip) / std::hypot(std::sinh(etap), std::cos(xip));
  const double lam = std::atan2(std::sinh(etap), std::cos(xip));

  // invert the conformal-latitude map by fixed point on sin(phi)
  const double chi = std::atan(tau_p);
  double sphi = std::sin(chi);
  for (int i = 0; i < 25; ++i) {
    sphi = std::tanh(std::atanh(std::sin(chi)) + e * std::atanh(e * sphi));
  }
  const double phi = std::asin(sphi);
  return { phi * 180.0 / M_PI, (lam + lon0) * 180.0 / M_PI };
}

}  // namespace railfuse
