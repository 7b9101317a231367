#include "fourier.hpp"

#include <cmath>
#include <cstring>
#include <mutex>

#include "shom/common.hpp"
#include "shom/mac.hpp"

namespace shom::detail {

Fourier::Fourier(int d, int n) : d_(d), n_(n) {
  std::array<int, 3> dims{1, 1, 1}, sdims{1, 1, 1};
  for (int a = 0; a < d; ++a) dims[a] = sdims[a] = n;
  sdims[d - 1] = n / 2 + 1;
  real_size_ = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  spec_size_ = static_cast<std::size_t>(sdims[0]) * sdims[1] * sdims[2];
  {
    std::lock_guard<std::mutex> lock(mac::fftw_planner_mutex());
    double* r = fftw_alloc_real(real_size_);
    fftw_complex* c = fftw_alloc_complex(spec_size_);
    fwd_ = fftw_plan_dft_r2c(d, dims.data(), r, c, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_c2r(d, dims.data(), c, r, FFTW_ESTIMATE);
    fftw_free(r);
    fftw_free(c);
  }
  wave_.resize(spec_size_);
  kint_.resize(spec_size_);
  k2_.resize(spec_size_);
  nyq_.resize(spec_size_);
  std::size_t q = 0;
  for (int i0 = 0; i0 < sdims[0]; ++i0)
    for (int i1 = 0; i1 < sdims[1]; ++i1)
      for (int i2 = 0; i2 < sdims[2]; ++i2, ++q) {
        const int ii[3] = {i0, i1, i2};
        bool ny = false;
        double s = 0.0;
        for (int a = 0; a < 3; ++a) {
          int k = 0;
          if (a < d) {
            k = (a == d - 1 || ii[a] <= n / 2) ? ii[a] : ii[a] - n;
            if (ii[a] == n / 2) ny = true;
          }
          kint_[q][a] = k;
          wave_[q][a] = 2.0 * kPi * k;
          s += wave_[q][a] * wave_[q][a];
        }
        k2_[q] = s;
        nyq_[q] = ny ? 1 : 0;
      }
}

Fourier::~Fourier() {
  std::lock_guard<std::mutex> lock(mac::fftw_planner_mutex());
  fftw_destroy_plan(fwd_);
  fftw_destroy_plan(bwd_);
}

void Fourier::forward(const double* x, cd* c) const {
  double* r = fftw_alloc_real(real_size_);
  std::memcpy(r, x, real_size_ * sizeof(double));
  fftw_execute_dft_r2c(fwd_, r, reinterpret_cast<fftw_complex*>(c));
  fftw_free(r);
  const double s = 1.0 / static_cast<double>(real_size_);
  for (std::size_t q = 0; q < spec_size_; ++q) c[q] = nyq_[q] ? cd(0.0, 0.0) : c[q] * s;
}

void Fourier::inverse(const cd* c, double* x) const {
  fftw_complex* tmp = fftw_alloc_complex(spec_size_);
  std::memcpy(tmp, c, spec_size_ * sizeof(fftw_complex));
  for (std::size_t q = 0; q < spec_size_; ++q)
    if (nyq_[q]) tmp[q][0] = tmp[q][1] = 0.0;
  double* r = fftw_alloc_real(real_size_);
  fftw_execute_dft_c2r(bwd_, tmp, r);
  std::memcpy(x, r, real_size_ * sizeof(double));
  fftw_free(r);
  fftw_free(tmp);
}

std::vector<std::size_t> Fourier::embed_into(int m) const {
  std::vector<std::size_t> map(spec_size_, 0);
  std::array<int, 3> sd{1, 1, 1};
  for (int a = 0; a < d_; ++a) sd[a] = m;
  sd[d_ - 1] = m / 2 + 1;
  for (std::size_t q = 0; q < spec_size_; ++q) {
    std::array<int, 3> ii{0, 0, 0};
    for (int a = 0; a < d_; ++a) {
      const int k = kint_[q][a];
      ii[a] = k >= 0 ? k : m + k;
    }
    map[q] = (static_cast<std::size_t>(ii[0]) * sd[1] + ii[1]) * sd[2] + ii[2];
  }
  return map;
}

long Fourier::index_of(const std::array<int, 3>& k) const {
  std::array<int, 3> sd{1, 1, 1};
  for (int a = 0; a < d_; ++a) sd[a] = n_;
  sd[d_ - 1] = n_ / 2 + 1;
  std::array<int, 3> ii{0, 0, 0};
  for (int a = 0; a < d_; ++a) {
    if (2 * std::abs(k[a]) >= n_) return -1;
    if (a == d_ - 1) {
      if (k[a] < 0) return -1;
      ii[a] = k[a];
    } else {
      ii[a] = k[a] >= 0 ? k[a] : n_ + k[a];
    }
  }
  return static_cast<long>((static_cast<std::size_t>(ii[0]) * sd[1] + ii[1]) * sd[2] + ii[2]);
}

}  // namespace shom::detail
