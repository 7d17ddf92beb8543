#include "rfedit/latent_grid.hpp"

#include <cmath>

#include "rfedit/error.hpp"

namespace rfedit {

std::string GridShape::str() const {
  return "(" + std::to_string(channels) + ", " + std::to_string(height) + ", " +
         std::to_string(width) + ")";
}

LatentGrid::LatentGrid(GridShape shape, double fill) : shape_(shape), data_(shape.size(), fill) {
  if (shape.channels <= 0 || shape.height <= 0 || shape.width <= 0)
    throw ShapeError("LatentGrid: non-positive shape " + shape.str());
}

LatentGrid::LatentGrid(GridShape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape.size())
    throw ShapeError("LatentGrid: " + std::to_string(data_.size()) +
                     " values do not fill shape " + shape.str());
}

bool LatentGrid::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

LatentGrid& LatentGrid::operator+=(const LatentGrid& o) {
  require_same_shape(*this, o, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

LatentGrid& LatentGrid::operator-=(const LatentGrid& o) {
  require_same_shape(*this, o, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

LatentGrid& LatentGrid::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

LatentGrid& LatentGrid::add_scaled(const LatentGrid& o, double s) {
  require_same_shape(*this, o, "add_scaled");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  return *this;
}

double LatentGrid::squared_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return acc;
}

double LatentGrid::rms() const {
  return data_.empty() ? 0.0 : std::sqrt(squared_norm() / static_cast<double>(data_.size()));
}

LatentGrid operator+(LatentGrid a, const LatentGrid& b) { return a += b; }
LatentGrid operator-(LatentGrid a, const LatentGrid& b) { return a -= b; }
LatentGrid operator*(double s, LatentGrid a) { return a *= s; }

void require_same_shape(const LatentGrid& a, const LatentGrid& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
}

}  // namespace rfedit
