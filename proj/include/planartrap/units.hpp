#pragma once

// Physical constants (CODATA 2018) and the small vector aliases shared by
// every module. Everything is SI unless a name says otherwise.

#include <cmath>
#include <complex>
#include <numbers>

#include <Eigen/Dense>

namespace planartrap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using CVec3 = Eigen::Vector3cd;
using CMat3 = Eigen::Matrix3cd;
using Complex = std::complex<double>;

namespace constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline constexpr double elementary_charge = 1.602176634e-19;    // C
inline constexpr double atomic_mass_unit = 1.66053906660e-27;   // kg
inline constexpr double electron_mass = 9.1093837015e-31;       // kg
inline constexpr double vacuum_permittivity = 8.8541878128e-12; // F/m
inline constexpr double boltzmann = 1.380649e-23;               // J/K
inline constexpr double boltzmann_mev_per_k = 8.617333262e-2;   // meV/K
inline constexpr double hbar = 1.054571817e-34;                 // J s

/// Mass of a singly ionised 40Ca atom (neutral atomic mass minus one electron).
inline constexpr double ca40_ion_mass = 39.962590863 * atomic_mass_unit - electron_mass;

}  // namespace constants

/// Amplitude ratio for a power offset in dB (power scales as amplitude squared).
inline double db_to_amplitude_ratio(double db) { return std::pow(10.0, db / 20.0); }

inline double amplitude_ratio_to_db(double ratio) { return 20.0 * std::log10(ratio); }

inline double ev_from_joule(double j) { return j / constants::elementary_charge; }

}  // namespace planartrap
