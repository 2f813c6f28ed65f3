#pragma once

// Per-dimension affine map of dataset ranges onto [-1, 1]:
// y = (x - mid) / halfspan. Constant dimensions get halfspan 1 and map to 0.

#include <algorithm>
#include <vector>

#include "geodp/numerics/blob.hpp"

namespace geodp::policy {

class Normalizer {
 public:
  bool fitted() const noexcept { return !mid_.empty(); }
  std::size_t dim() const noexcept { return mid_.size(); }
  const std::vector<double>& mid() const noexcept { return mid_; }
  const std::vector<double>& halfspan() const noexcept { return half_; }

  // rows: [N, d] samples (any leading shape; the last axis is the feature).
  static Normalizer fit(const Tensor<double>& rows) {
    require(rows.rank() >= 1 && rows.size() > 0, ErrorKind::usage, "normalizer: no data to fit");
    const std::size_t d = rows.shape().back(), n = rows.size() / d;
    std::vector<double> lo(d, rows[0]), hi(d, rows[0]);
    for (std::size_t j = 0; j < d; ++j) lo[j] = hi[j] = rows[j];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        lo[j] = std::min(lo[j], rows[i * d + j]);
        hi[j] = std::max(hi[j], rows[i * d + j]);
      }
    return from_range(lo, hi);
  }

  static Normalizer from_range(const std::vector<double>& lo, const std::vector<double>& hi) {
    require(lo.size() == hi.size() && !lo.empty(), ErrorKind::shape, "normalizer: range size mismatch");
    Normalizer n;
    for (std::size_t j = 0; j < lo.size(); ++j) {
      n.mid_.push_back(0.5 * (lo[j] + hi[j]));
      const double h = 0.5 * (hi[j] - lo[j]);
      n.half_.push_back(h > 1e-12 ? h : 1.0);
    }
    return n;
  }

  template <class T>
  Tensor<T> normalize(const Tensor<double>& x) const {
    check(x);
    Tensor<T> out(x.shape());
    const std::size_t d = dim();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>((x[i] - mid_[i % d]) / half_[i % d]);
    return out;
  }

  // Inverse map; inputs are clamped to [-1, 1] first.
  template <class T>
  Tensor<double> denormalize(const Tensor<T>& y) const {
    check(y);
    Tensor<double> out(y.shape());
    const std::size_t d = dim();
    for (std::size_t i = 0; i < y.size(); ++i)
      out[i] = std::clamp(static_cast<double>(y[i]), -1.0, 1.0) * half_[i % d] + mid_[i % d];
    return out;
  }

  void save(BlobFile& blob, const std::string& prefix) const {
    require(fitted(), ErrorKind::usage, "normalizer: saving unfitted stats");
    blob.put(prefix + "mid", Tensor<double>({dim()}, mid_));
    blob.put(prefix + "halfspan", Tensor<double>({dim()}, half_));
  }

  static Normalizer load(const BlobFile& blob, const std::string& prefix) {
    Normalizer n;
    n.mid_ = blob.get<double>(prefix + "mid").storage();
    n.half_ = blob.get<double>(prefix + "halfspan").storage();
    require(n.mid_.size() == n.half_.size(), ErrorKind::io, "normalizer: corrupt stats");
    return n;
  }

 private:
  template <class T>
  void check(const Tensor<T>& x) const {
    require(fitted(), ErrorKind::usage, "normalizer: stats have not been fitted");
    require(x.rank() >= 1 && x.shape().back() == dim(), ErrorKind::shape,
            "normalizer: expected trailing dim " + std::to_string(dim()) + ", got " + to_string(x.shape()));
  }

  std::vector<double> mid_, half_;
};

}  // namespace geodp::policy
