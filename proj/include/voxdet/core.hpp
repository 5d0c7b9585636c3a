#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace voxdet {

// Row-major dense matrices throughout: rows are samples (pixels, voxels, ray
// points), so per-row gathers and scatters touch contiguous memory.
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

using MatXd = MatX<double>;
using MatXf = MatX<float>;
using VecXd = VecX<double>;
using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;
using MatXi = Eigen::MatrixXi;
using VecXi = Eigen::VectorXi;

struct ContractViolation : std::runtime_error {
  explicit ContractViolation(const std::string& what) : std::runtime_error(what) {}
};

#define VOXDET_REQUIRE(cond, msg) \
  do {                            \
    if (!(cond)) throw ::voxdet::ContractViolation(msg); \
  } while (0)

// 64-bit FNV-1a, used to derive independent seeds from stream names.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Named RNG stream. Streams with different names are independent for any
// base seed, so e.g. reseeding ray sampling cannot perturb scene generation.
// Distribution mapping is hand-rolled on top of mt19937_64 so sequences are
// identical across standard libraries.
class Rng {
 public:
  Rng(std::uint64_t seed, const std::string& stream)
      : engine_(seed * 0x9E3779B97F4A7C15ull ^ fnv1a64(stream)) {}

  std::uint64_t bits() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t index(std::uint64_t n) {
    // modulo bias is negligible for n << 2^64 (desk-scale counts)
    return engine_() % n;
  }

 private:
  std::mt19937_64 engine_;
};

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace voxdet
