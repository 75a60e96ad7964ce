#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmshape {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Random engine used everywhere a component takes "an rng". Fixed so that
/// checkpoints can serialize its state.
using Rng = std::mt19937_64;

// Error categories. Callers that only care about failure catch std::exception.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Observed image, row-major, intensities in [0,1].
struct GrayImage {
  int width = 0;
  int height = 0;
  Vector data;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), data(Vector::Zero(Eigen::Index(w) * h)) {}
  GrayImage(int w, int h, Vector values) : width(w), height(h), data(std::move(values)) {
    if (w < 1 || h < 1 || data.size() != Eigen::Index(w) * h)
      throw DimensionError("GrayImage: data length does not match width*height");
  }

  std::size_t size() const { return std::size_t(data.size()); }
  double& operator()(int r, int c) { return data[Eigen::Index(r) * width + c]; }
  double operator()(int r, int c) const { return data[Eigen::Index(r) * width + c]; }
};

/// Segmenting curve as a 0/1 mask (1 = object), row-major.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), data(std::size_t(w) * h, 0) {}
  BinaryMask(int w, int h, std::vector<std::uint8_t> values)
      : width(w), height(h), data(std::move(values)) {
    if (w < 1 || h < 1 || data.size() != std::size_t(w) * h)
      throw DimensionError("BinaryMask: data length does not match width*height");
    for (auto v : data)
      if (v > 1) throw DimensionError("BinaryMask: values must be 0 or 1");
  }

  std::size_t size() const { return data.size(); }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
  std::uint8_t& operator()(int r, int c) { return data[std::size_t(r) * width + c]; }
  std::uint8_t operator()(int r, int c) const { return data[std::size_t(r) * width + c]; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Level-set embedding: > 0 strictly inside the object, <= 0 outside.
struct LevelSet {
  int width = 0;
  int height = 0;
  Vector data;

  LevelSet() = default;
  LevelSet(int w, int h, Vector values) : width(w), height(h), data(std::move(values)) {
    if (w < 1 || h < 1 || data.size() != Eigen::Index(w) * h)
      throw DimensionError("LevelSet: data length does not match width*height");
  }

  std::size_t size() const { return std::size_t(data.size()); }
};

namespace detail {
template <class T>
int width_of(const T& t) {
  if constexpr (requires { t.width(); }) return t.width(); else return t.width;
}
template <class T>
int height_of(const T& t) {
  if constexpr (requires { t.height(); }) return t.height(); else return t.height;
}
}  // namespace detail

template <class A, class B>
void require_same_shape(const A& a, const B& b, const char* where) {
  const int aw = detail::width_of(a), ah = detail::height_of(a);
  const int bw = detail::width_of(b), bh = detail::height_of(b);
  if (aw != bw || ah != bh)
    throw DimensionError(std::string(where) + ": dimension mismatch (" + std::to_string(aw) + "x" +
                         std::to_string(ah) + " vs " + std::to_string(bw) + "x" + std::to_string(bh) + ")");
}

}  // namespace pmshape
