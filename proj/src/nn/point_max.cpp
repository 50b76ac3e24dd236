#include "grasp/nn/point_max.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>

#include "grasp/parallel.hpp"

#if defined(__AMX_TILE__) && defined(__AMX_BF16__) && defined(__AVX512F__) && defined(__linux__)
#define GRASP_HAVE_TILES 1
#include <cpuid.h>
#include <immintrin.h>
#include <sys/syscall.h>
#include <unistd.h>
#elif defined(__AVX512F__)
#include <immintrin.h>
#endif

// Selection works in two steps. A coarse product (bf16 tiles, or the plain
// scalar-type GEMM) gives scores s~ with |s~ - s| <= c |x| |w| + a |w|. Any
// point whose upper bound s~ + e reaches the best lower bound max(s~ - e) is
// a candidate, and candidates are rescored in double.
//
// The tile pass splits both operands into bf16 high and low parts and sums
// x_hi.w_hi + x_hi.w_lo + x_lo.w_hi as one product over a tripled depth; the
// dropped x_lo.w_lo and the residuals past the low parts stay below 4 u^2
// relative, u = 2^-8.

namespace grasp::nn {
namespace {

constexpr std::size_t kEigenRows = 256;

std::atomic<bool>& tiles_enabled() {
  static std::atomic<bool> enabled{true};
  return enabled;
}

template <typename S>
struct Candidate {
  std::uint32_t feature;
  std::uint32_t point;
  S upper;
};

// Updates per-feature lower bounds with `rows` score rows and records rows
// whose upper bound reaches the running lower bound.
template <typename S>
void scan_rows(const S* scores, std::size_t ld, std::size_t rows, std::size_t p0,
               const S* point_err, const S* feature_norm, std::size_t nf, S* lower,
               std::vector<Candidate<S>>& out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = scores + r * ld;
    const S e = point_err[p0 + r];
    const auto p = static_cast<std::uint32_t>(p0 + r);
    std::size_t f = 0;
#if defined(__AVX512F__)
    if constexpr (std::is_same_v<S, float>) {
      const __m512 ev = _mm512_set1_ps(e);
      for (; f + 16 <= nf; f += 16) {
        const __m512 s = _mm512_loadu_ps(row + f);
        const __m512 en = _mm512_mul_ps(ev, _mm512_loadu_ps(feature_norm + f));
        __m512 lo = _mm512_max_ps(_mm512_loadu_ps(lower + f), _mm512_sub_ps(s, en));
        _mm512_storeu_ps(lower + f, lo);
        const __m512 hi = _mm512_add_ps(s, en);
        __mmask16 hit = _mm512_cmp_ps_mask(hi, lo, _CMP_GE_OQ);
        while (hit) {
          const int lane = __builtin_ctz(hit);
          hit &= static_cast<__mmask16>(hit - 1);
          out.push_back({static_cast<std::uint32_t>(f + lane), p, row[f + lane] + e * feature_norm[f + lane]});
        }
      }
    }
#endif
    for (; f < nf; ++f) {
      const S en = e * feature_norm[f];
      lower[f] = std::max(lower[f], row[f] - en);
      const S hi = row[f] + en;
      if (hi >= lower[f]) out.push_back({static_cast<std::uint32_t>(f), p, hi});
    }
  }
}

template <typename T>
struct Problem {
  const Tensor<T>& input;
  std::size_t batch;
  std::size_t points;
  std::size_t in;
  std::size_t out;
  std::vector<T> feature_norm;          // |w_f|
  std::vector<double> weight_t;         // out x in, for rescoring
  double bound;                         // c in |s~ - s| <= c |x| |w|
};

// Error constant of a length-k dot product accumulated in precision `unit`
// from inputs rounded to precision `input_unit`, plus slack for forming the
// bounds themselves.
double bound_constant(std::size_t k, double split_error, double unit) {
  const double kd = static_cast<double>(k);
  return (split_error + 2.0 * 1.03 * kd * unit + 16.0 * unit) * 1.001;
}

// Covers bf16 conversions flushing subnormals to zero.
constexpr double kAbsoluteSlack = 1e-30;

// Double-precision score with a fixed summation order; both backends share
// it, so their selections agree.
template <typename T>
double exact_score(const T* x, const double* w, std::size_t d) {
  std::size_t k = 0;
  double s = 0.0;
#if defined(__AVX512F__)
  __m512d acc0 = _mm512_setzero_pd();
  __m512d acc1 = _mm512_setzero_pd();
  auto widen = [](const T* p) {
    if constexpr (std::is_same_v<T, float>) {
      return _mm512_cvtps_pd(_mm256_loadu_ps(p));
    } else {
      return _mm512_loadu_pd(p);
    }
  };
  for (; k + 16 <= d; k += 16) {
    acc0 = _mm512_fmadd_pd(widen(x + k), _mm512_loadu_pd(w + k), acc0);
    acc1 = _mm512_fmadd_pd(widen(x + k + 8), _mm512_loadu_pd(w + k + 8), acc1);
  }
  s = _mm512_reduce_add_pd(_mm512_add_pd(acc0, acc1));
#endif
  for (; k < d; ++k) s += static_cast<double>(x[k]) * w[k];
  return s;
}

template <typename T>
void finish(const Problem<T>& pr, std::size_t b, const std::vector<T>& lower,
                                  const std::vector<Candidate<T>>& cands,
                                  std::uint32_t* result) {
  const std::size_t d = pr.in;
  std::vector<double> best(pr.out, -std::numeric_limits<double>::infinity());
  std::vector<bool> found(pr.out, false);
  std::fill(result, result + pr.out, 0u);
  const T* x = pr.input.data() + b * pr.points * d;
  for (const auto& c : cands) {
    if (!(c.upper >= lower[c.feature])) continue;
    const T* xp = x + static_cast<std::size_t>(c.point) * d;
    const double* w = pr.weight_t.data() + static_cast<std::size_t>(c.feature) * d;
    const double s = exact_score(xp, w, d);
    // Candidates arrive in increasing point order, so '>' keeps the lowest index.
    if (!found[c.feature] || s > best[c.feature]) {
      best[c.feature] = s;
      result[c.feature] = c.point;
      found[c.feature] = true;
    }
  }
}

template <typename T>
std::vector<T> point_errors(const Problem<T>& pr, std::size_t b) {
  const std::size_t d = pr.in;
  const T* x = pr.input.data() + b * pr.points * d;
  const ConstMatMap<T> rows(x, static_cast<Eigen::Index>(pr.points), static_cast<Eigen::Index>(d));
  const Eigen::Matrix<T, Eigen::Dynamic, 1> n2 = rows.rowwise().squaredNorm();
  // Inflated for the rounding of the squared norm itself.
  const double scale =
      pr.bound * (1.0 + 2.0 * static_cast<double>(d + 2) * std::numeric_limits<T>::epsilon());
  std::vector<T> err(pr.points);
  for (std::size_t p = 0; p < pr.points; ++p) {
    err[p] = static_cast<T>(
        scale * std::sqrt(static_cast<double>(n2[static_cast<Eigen::Index>(p)])) +
        kAbsoluteSlack);
  }
  return err;
}

template <typename T>
void eigen_cloud(const Problem<T>& pr, const MatrixRM<T>& weight, std::size_t b,
                 std::uint32_t* result) {
  const auto x = ConstMatMap<T>(pr.input.data() + b * pr.points * pr.in,
                                static_cast<Eigen::Index>(pr.points),
                                static_cast<Eigen::Index>(pr.in));
  const std::vector<T> err = point_errors(pr, b);
  std::vector<T> lower(pr.out, -std::numeric_limits<T>::infinity());
  std::vector<Candidate<T>> cands;
  MatrixRM<T> z(static_cast<Eigen::Index>(std::min(kEigenRows, pr.points)),
                static_cast<Eigen::Index>(pr.out));
  for (std::size_t r0 = 0; r0 < pr.points; r0 += kEigenRows) {
    const std::size_t rows = std::min(kEigenRows, pr.points - r0);
    const auto n = static_cast<Eigen::Index>(rows);
    z.topRows(n).noalias() = x.middleRows(static_cast<Eigen::Index>(r0), n) * weight;
    scan_rows<T>(z.data(), pr.out, rows, r0, err.data(), pr.feature_norm.data(), pr.out,
                 lower.data(), cands);
  }
  finish(pr, b, lower, cands, result);
}

#ifdef GRASP_HAVE_TILES

struct TileConfig {
  std::uint8_t palette = 1;
  std::uint8_t start_row = 0;
  std::uint8_t reserved[14] = {};
  std::uint16_t colsb[16] = {};
  std::uint8_t rows[16] = {};
};

bool probe_tiles() {
  unsigned a = 0, b = 0, c = 0, d = 0;
  if (!__get_cpuid_count(7, 0, &a, &b, &c, &d)) return false;
  const bool tile = (d >> 24) & 1u;
  const bool bf16 = (d >> 22) & 1u;
  if (!tile || !bf16) return false;
  constexpr long kReqPerm = 0x1023;   // ARCH_REQ_XCOMP_PERM
  constexpr long kTileData = 18;      // XFEATURE_XTILEDATA
  return syscall(SYS_arch_prctl, kReqPerm, kTileData) == 0;
}

bool tiles_usable() {
  static const bool usable = probe_tiles();
  return usable;
}

std::uint16_t to_bf16(float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, sizeof u);
  if ((u & 0x7f800000u) == 0) u &= 0x80000000u;  // subnormals flush, as in hardware
  u += 0x7fffu + ((u >> 16) & 1u);  // round to nearest even
  return static_cast<std::uint16_t>(u >> 16);
}

float from_bf16(std::uint16_t h) {
  const std::uint32_t u = static_cast<std::uint32_t>(h) << 16;
  float v;
  std::memcpy(&v, &u, sizeof v);
  return v;
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

// Weight stacked as [w_hi; w_lo; w_hi] over depth 3 kp, zero padded, in
// panels of 16 columns; a panel holds depth pairs as rows of 16 x 2 values,
// so tile rows are contiguous.
std::size_t panel_offset(std::size_t k, std::size_t f, std::size_t depth) {
  return ((f / 16) * (depth / 2) + k / 2) * 32 + (f % 16) * 2 + k % 2;
}

std::vector<std::uint16_t> pack_weight(const MatrixRM<float>& w, std::size_t kp, std::size_t fp) {
  const std::size_t depth = 3 * kp;
  std::vector<std::uint16_t> packed(depth * fp, 0);
  auto put = [&](std::size_t k, std::size_t f, std::uint16_t v) {
    packed[panel_offset(k, f, depth)] = v;
  };
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    for (Eigen::Index f = 0; f < w.cols(); ++f) {
      const float v = w(k, f);
      const std::uint16_t hi = to_bf16(v);
      const std::uint16_t lo = to_bf16(v - from_bf16(hi));
      const auto kk = static_cast<std::size_t>(k);
      const auto ff = static_cast<std::size_t>(f);
      put(kk, ff, hi);
      put(kp + kk, ff, lo);
      put(2 * kp + kk, ff, hi);
    }
  }
  return packed;
}

void tile_cloud(const Problem<float>& pr, const std::vector<std::uint16_t>& packed_w,
                std::size_t kp, std::size_t fp, std::size_t b, std::uint32_t* result) {
  const std::size_t np = round_up(pr.points, 32);
  const std::size_t depth = 3 * kp;  // [x_hi, x_hi, x_lo] per row
  const float* x = pr.input.data() + b * pr.points * pr.in;
  std::vector<std::uint16_t> a(np * depth, 0);
  for (std::size_t p = 0; p < pr.points; ++p) {
    const float* src = x + p * pr.in;
    std::uint16_t* dst = a.data() + p * depth;
    std::size_t k = 0;
#if defined(__AVX512BF16__)
    for (; k + 32 <= pr.in; k += 32) {
      const __m512 v0 = _mm512_loadu_ps(src + k);
      const __m512 v1 = _mm512_loadu_ps(src + k + 16);
      const __m512bh hi = _mm512_cvtne2ps_pbh(v1, v0);
      const __m512i hi_bits = reinterpret_cast<const __m512i&>(hi);
      // bf16 back to float is a 16-bit shift of each half.
      const __m512 h0 = _mm512_castsi512_ps(
          _mm512_slli_epi32(_mm512_cvtepu16_epi32(_mm512_castsi512_si256(hi_bits)), 16));
      const __m512 h1 = _mm512_castsi512_ps(
          _mm512_slli_epi32(_mm512_cvtepu16_epi32(_mm512_extracti64x4_epi64(hi_bits, 1)), 16));
      const __m512bh lo = _mm512_cvtne2ps_pbh(_mm512_sub_ps(v1, h1), _mm512_sub_ps(v0, h0));
      _mm512_storeu_si512(dst + k, hi_bits);
      _mm512_storeu_si512(dst + kp + k, hi_bits);
      _mm512_storeu_si512(dst + 2 * kp + k, reinterpret_cast<const __m512i&>(lo));
    }
#endif
    for (; k < pr.in; ++k) {
      const std::uint16_t hi = to_bf16(src[k]);
      dst[k] = hi;
      dst[kp + k] = hi;
      dst[2 * kp + k] = to_bf16(src[k] - from_bf16(hi));
    }
  }
  const std::vector<float> err = point_errors(pr, b);
  std::vector<float> lower(pr.out, -std::numeric_limits<float>::infinity());
  std::vector<Candidate<float>> cands;
  // Padded so the 16 rows of a stored tile do not alias in cache.
  const std::size_t ld = fp + 16;
  std::vector<float> scores(32 * ld);

  TileConfig cfg;
  for (int t = 0; t < 8; ++t) {
    cfg.rows[t] = 16;
    cfg.colsb[t] = 64;
  }
  _tile_loadconfig(&cfg);
  const std::size_t a_stride = depth * 2;
  const std::size_t b_stride = 64;
  const std::size_t c_stride = ld * 4;
  for (std::size_t r0 = 0; r0 < np; r0 += 32) {
    for (std::size_t f0 = 0; f0 < fp; f0 += 32) {
      _tile_zero(0);
      _tile_zero(1);
      _tile_zero(2);
      _tile_zero(3);
      for (std::size_t k0 = 0; k0 < depth; k0 += 32) {
        _tile_loadd(4, a.data() + r0 * depth + k0, a_stride);
        _tile_loadd(5, a.data() + (r0 + 16) * depth + k0, a_stride);
        _tile_loadd(6, packed_w.data() + panel_offset(k0, f0, depth), b_stride);
        _tile_loadd(7, packed_w.data() + panel_offset(k0, f0 + 16, depth), b_stride);
        _tile_dpbf16ps(0, 4, 6);
        _tile_dpbf16ps(1, 4, 7);
        _tile_dpbf16ps(2, 5, 6);
        _tile_dpbf16ps(3, 5, 7);
      }
      _tile_stored(0, scores.data() + f0, c_stride);
      _tile_stored(1, scores.data() + f0 + 16, c_stride);
      _tile_stored(2, scores.data() + 16 * ld + f0, c_stride);
      _tile_stored(3, scores.data() + 16 * ld + f0 + 16, c_stride);
    }
    const std::size_t rows = std::min<std::size_t>(32, pr.points - r0);
    scan_rows<float>(scores.data(), ld, rows, r0, err.data(), pr.feature_norm.data(), pr.out,
                     lower.data(), cands);
  }
  _tile_release();
  finish(pr, b, lower, cands, result);
}

#endif

template <typename T>
Problem<T> make_problem(const Tensor<T>& input, const MatrixRM<T>& weight, double bound) {
  Problem<T> pr{input, input.dim(0), input.dim(1), input.dim(2),
                static_cast<std::size_t>(weight.cols()), {}, {}, bound};
  pr.feature_norm.resize(pr.out);
  pr.weight_t.resize(pr.out * pr.in);
  for (std::size_t f = 0; f < pr.out; ++f) {
    double n2 = 0.0;
    for (std::size_t k = 0; k < pr.in; ++k) {
      const double w = weight(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
      pr.weight_t[f * pr.in + k] = w;
      n2 += w * w;
    }
    // Rounded up a hair so the float copy never undershoots.
    pr.feature_norm[f] = static_cast<T>(std::sqrt(n2) * (1.0 + 1e-6));
  }
  return pr;
}

}  // namespace

bool tile_backend_available() {
#ifdef GRASP_HAVE_TILES
  return tiles_usable();
#else
  return false;
#endif
}

void set_tile_backend_enabled(bool enabled) { tiles_enabled().store(enabled); }

template <typename T>
std::vector<std::uint32_t> argmax_points(const Tensor<T>& input, const MatrixRM<T>& weight) {
  if (input.rank() != 3 || static_cast<Eigen::Index>(input.dim(2)) != weight.rows() ||
      input.dim(1) == 0) {
    throw Error(Errc::ShapeMismatch, "argmax_points: input " + shape_string(input.shape()) +
                                         " vs weight rows " + std::to_string(weight.rows()));
  }
  const std::size_t nb = input.dim(0);
  const std::size_t nf = static_cast<std::size_t>(weight.cols());
  std::vector<std::uint32_t> selected(nb * nf, 0);
  constexpr double unit = std::numeric_limits<T>::epsilon() / 2;

#ifdef GRASP_HAVE_TILES
  if constexpr (std::is_same_v<T, float>) {
    if (tiles_enabled().load() && tiles_usable()) {
      const std::size_t kp = round_up(input.dim(2), 32);
      const std::size_t fp = round_up(nf, 32);
      constexpr double u = 0x1p-8;
      const auto pr = make_problem(input, weight, bound_constant(3 * kp, 4.0 * u * u, unit));
      const auto packed = pack_weight(weight, kp, fp);
      parallel_for(nb, [&](std::size_t b) {
        tile_cloud(pr, packed, kp, fp, b, selected.data() + b * nf);
      });
      return selected;
    }
  }
#endif
  const auto pr = make_problem(input, weight, bound_constant(input.dim(2), 0.0, unit));
  parallel_for(nb, [&](std::size_t b) {
    eigen_cloud(pr, weight, b, selected.data() + b * nf);
  });
  return selected;
}

template std::vector<std::uint32_t> argmax_points(const Tensor<float>&, const MatrixRM<float>&);
template std::vector<std::uint32_t> argmax_points(const Tensor<double>&, const MatrixRM<double>&);

}  // namespace grasp::nn
