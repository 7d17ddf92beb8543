#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rfedit {

struct GridShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  bool operator==(const GridShape&) const = default;
  std::string str() const;
};

/// Dense channels x height x width tensor in double precision, channel-major.
/// Carries the ODE state, velocities, and images (pixel range [-1, 1]).
class LatentGrid {
 public:
  LatentGrid() = default;
  explicit LatentGrid(GridShape shape, double fill = 0.0);
  LatentGrid(GridShape shape, std::vector<double> data);

  static LatentGrid scalar(double v) { return LatentGrid({1, 1, 1}, v); }

  const GridShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> channel(int c) const {
    return std::span<const double>(data_).subspan(c * shape_.plane(), shape_.plane());
  }

  bool all_finite() const;

  LatentGrid& operator+=(const LatentGrid& o);
  LatentGrid& operator-=(const LatentGrid& o);
  LatentGrid& operator*=(double s);

  /// this += s * o
  LatentGrid& add_scaled(const LatentGrid& o, double s);

  double squared_norm() const;
  /// Root-mean-square of the entries.
  double rms() const;

  bool operator==(const LatentGrid& o) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  GridShape shape_{};
  std::vector<double> data_;
};

LatentGrid operator+(LatentGrid a, const LatentGrid& b);
LatentGrid operator-(LatentGrid a, const LatentGrid& b);
LatentGrid operator*(double s, LatentGrid a);

/// Throws ShapeError naming `what` when shapes differ.
void require_same_shape(const LatentGrid& a, const LatentGrid& b, const char* what);

}  // namespace rfedit
