#pragma once

// Real-to-complex transforms on the n^d torus grid with normalised
// coefficients: forward gives c_k = n^-d sum x e^{-2 pi i k.y}, inverse sums the
// series back. Half-spectrum ordering follows FFTW (last axis halved).

#include <fftw3.h>

#include <array>
#include <complex>
#include <cstdint>
#include <vector>

namespace shom::detail {

using cd = std::complex<double>;

class Fourier {
 public:
  Fourier(int d, int n);
  ~Fourier();
  Fourier(const Fourier&) = delete;
  Fourier& operator=(const Fourier&) = delete;

  int dim() const { return d_; }
  int n() const { return n_; }
  std::size_t real_size() const { return real_size_; }
  std::size_t spec_size() const { return spec_size_; }

  void forward(const double* x, cd* c) const;
  void inverse(const cd* c, double* x) const;

  /// 2 pi k_a for half-spectrum index q.
  const std::array<double, 3>& wave(std::size_t q) const { return wave_[q]; }
  const std::array<int, 3>& k(std::size_t q) const { return kint_[q]; }
  double k2(std::size_t q) const { return k2_[q]; }
  /// Nyquist modes along any axis are dropped.
  bool nyquist(std::size_t q) const { return nyq_[q] != 0; }
  /// Index of the same wavenumber in the spectrum of an m^d grid (m > n).
  std::vector<std::size_t> embed_into(int m) const;
  /// Index of wavenumber k in this spectrum, or -1 if k lies outside or in the conjugate half.
  long index_of(const std::array<int, 3>& k) const;

 private:
  int d_, n_;
  std::size_t real_size_ = 0, spec_size_ = 0;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
  std::vector<std::array<double, 3>> wave_;
  std::vector<std::array<int, 3>> kint_;
  std::vector<double> k2_;
  std::vector<std::uint8_t> nyq_;
};

}  // namespace shom::detail
