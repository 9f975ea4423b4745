#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace snnrtrl {

// splitmix64 finaliser; also used to derive per-trial seeds from (seed, index).
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// ||a - b||_inf / max(||a||_inf, ||b||_inf, 1e-30)
double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& data);

// Ordinary least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace snnrtrl
