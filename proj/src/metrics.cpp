#include "fluvinv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "fluvinv/random.hpp"

namespace fluvinv {

double mae(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size())
    throw std::invalid_argument("mae: length mismatch (" + std::to_string(y.size()) + " vs " +
                                std::to_string(y_hat.size()) + ")");
  if (y.empty()) throw std::invalid_argument("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

Summary summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summary: empty input");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

ErrorReport error_report(std::span<const ModelGrid> samples, const WellDataset& wells, const ModelGrid& truth) {
  if (samples.empty()) throw std::invalid_argument("error report: no samples");
  const GridGeometry& g = truth.geometry;
  if (wells.geometry.shape() != g.shape())
    throw std::invalid_argument("error report: well grid " + shape_str(wells.geometry.shape()) +
                                " does not match truth " + shape_str(g.shape()));
  const auto cells = wells.cell_indices();
  const Tensor observed = wells.values();
  ErrorReport rep;
  std::vector<double> inv, gc, gd;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ModelGrid& s = samples[i];
    if (s.coarse_fraction.shape() != g.shape() || s.depo_time.shape() != g.shape())
      throw std::invalid_argument("error report: sample " + std::to_string(i) + " has extents " +
                                  shape_str(s.coarse_fraction.shape()) + ", truth " + shape_str(g.shape()));
    std::vector<double> at_wells(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) at_wells[k] = s.coarse_fraction[static_cast<std::size_t>(cells[k])];
    SampleErrors e;
    e.inversion = mae(observed.data(), at_wells);
    e.gen_coarse = mae(truth.coarse_fraction.data(), s.coarse_fraction.data());
    e.gen_depo = mae(truth.depo_time.data(), s.depo_time.data());
    rep.samples.push_back(e);
    inv.push_back(e.inversion);
    gc.push_back(e.gen_coarse);
    gd.push_back(e.gen_depo);
  }
  rep.inversion = summarize(inv);
  rep.gen_coarse = summarize(gc);
  rep.gen_depo = summarize(gd);
  return rep;
}

std::vector<ErrorRow> error_rows(const ErrorReport& report, const std::string& case_id, int wells, bool seismic,
                                 const std::string& method) {
  std::vector<ErrorRow> rows;
  for (std::size_t i = 0; i < report.samples.size(); ++i)
    rows.push_back({case_id, wells, seismic, method, static_cast<int>(i), report.samples[i]});
  return rows;
}

void write_error_csv(std::ostream& out, std::span<const ErrorRow> rows, bool header) {
  if (header) out << "case,wells,seismic,method,sample,inv_err,gen_err_frac,gen_err_time\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g", r.errors.inversion, r.errors.gen_coarse, r.errors.gen_depo);
    out << r.case_id << ',' << r.wells << ',' << (r.seismic ? 1 : 0) << ',' << r.method << ',' << r.sample << ','
        << buf << '\n';
  }
}

std::vector<ErrorRow> read_error_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "case,wells,seismic,method,sample,inv_err,gen_err_frac,gen_err_time")
    throw std::runtime_error("error csv: unexpected header '" + line + "'");
  std::vector<ErrorRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw std::runtime_error("error csv line " + std::to_string(lineno) + ": expected 8 fields");
    try {
      ErrorRow r;
      r.case_id = f[0];
      r.wells = std::stoi(f[1]);
      r.seismic = std::stoi(f[2]) != 0;
      r.method = f[3];
      r.sample = std::stoi(f[4]);
      r.errors = {std::stod(f[5]), std::stod(f[6]), std::stod(f[7])};
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error("error csv line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

EnsembleStats ensemble_stats(std::span<const ModelGrid> samples) {
  if (samples.size() < 2) throw std::invalid_argument("ensemble stats: need >= 2 samples");
  const Shape shape = samples[0].coarse_fraction.shape();
  for (const auto& s : samples)
    if (s.coarse_fraction.shape() != shape || s.depo_time.shape() != shape)
      throw std::invalid_argument("ensemble stats: samples differ in extents");
  EnsembleStats st{Tensor(shape), Tensor(shape), Tensor(shape), Tensor(shape)};
  const double n = static_cast<double>(samples.size());
  const std::size_t cells = samples[0].coarse_fraction.size();
  for (std::size_t c = 0; c < cells; ++c) {
    double mc = 0.0, md = 0.0;
    for (const auto& s : samples) {
      mc += s.coarse_fraction[c];
      md += s.depo_time[c];
    }
    mc /= n;
    md /= n;
    double vc = 0.0, vd = 0.0;
    for (const auto& s : samples) {
      vc += (s.coarse_fraction[c] - mc) * (s.coarse_fraction[c] - mc);
      vd += (s.depo_time[c] - md) * (s.depo_time[c] - md);
    }
    st.coarse_mean[c] = mc;
    st.depo_mean[c] = md;
    st.coarse_std[c] = std::sqrt(vc / n);
    st.depo_std[c] = std::sqrt(vd / n);
  }
  return st;
}

// ------------------------------------------------------------------ pyramid

namespace {

std::int64_t mirror(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

// Separable 5-tap binomial blur with mirrored borders.
Tensor blur(const Tensor& img) {
  static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  const std::int64_t h = img.extent(0), w = img.extent(1);
  Tensor tmp({h, w}), out({h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int t = -2; t <= 2; ++t) s += k[t + 2] * img[static_cast<std::size_t>(y * w + mirror(x + t, w))];
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int t = -2; t <= 2; ++t) s += k[t + 2] * tmp[static_cast<std::size_t>(mirror(y + t, h) * w + x)];
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  return out;
}

Tensor downsample(const Tensor& img) {
  const Tensor b = blur(img);
  const std::int64_t h = img.extent(0), w = img.extent(1), h2 = (h + 1) / 2, w2 = (w + 1) / 2;
  Tensor out({h2, w2});
  for (std::int64_t y = 0; y < h2; ++y)
    for (std::int64_t x = 0; x < w2; ++x) out[static_cast<std::size_t>(y * w2 + x)] = b[static_cast<std::size_t>(2 * y * w + 2 * x)];
  return out;
}

Tensor upsample(const Tensor& img, std::int64_t h, std::int64_t w) {
  Tensor z({h, w});
  const std::int64_t hs = img.extent(0), ws = img.extent(1);
  for (std::int64_t y = 0; y < hs && 2 * y < h; ++y)
    for (std::int64_t x = 0; x < ws && 2 * x < w; ++x)
      z[static_cast<std::size_t>(2 * y * w + 2 * x)] = 4.0 * img[static_cast<std::size_t>(y * ws + x)];
  return blur(z);
}

}  // namespace

int max_pyramid_levels(std::int64_t h, std::int64_t w, int patch) {
  int levels = 0;
  while (h >= patch && w >= patch) {
    ++levels;
    if (h == 1 && w == 1) break;
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return levels;
}

std::vector<Tensor> laplacian_pyramid(const Tensor& image, int levels) {
  if (image.rank() != 2) throw std::invalid_argument("pyramid: expected a [h, w] image");
  if (levels < 1) throw std::invalid_argument("pyramid: need >= 1 level");
  std::vector<Tensor> out;
  Tensor cur = image;
  for (int l = 0; l + 1 < levels; ++l) {
    Tensor next = downsample(cur);
    const Tensor up = upsample(next, cur.extent(0), cur.extent(1));
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] -= up[i];
    out.push_back(std::move(cur));
    cur = std::move(next);
  }
  out.push_back(std::move(cur));
  return out;
}

Tensor collapse_pyramid(const std::vector<Tensor>& pyramid) {
  if (pyramid.empty()) throw std::invalid_argument("pyramid: empty");
  Tensor cur = pyramid.back();
  for (std::size_t l = pyramid.size() - 1; l-- > 0;) {
    Tensor up = upsample(cur, pyramid[l].extent(0), pyramid[l].extent(1));
    for (std::size_t i = 0; i < up.size(); ++i) up[i] += pyramid[l][i];
    cur = std::move(up);
  }
  return cur;
}

// ---------------------------------------------------------------------- SWD

void SwdConfig::validate() const {
  if (levels < 1 || patch < 1 || patches_per_sample < 1 || projections < 1 || repetitions < 1)
    throw std::invalid_argument("swd: levels, patch, patches, projections and repetitions must be >= 1");
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  // Integral of |F_a - F_b| over the merged support.
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(a[0], b[0]), total = 0.0;
  while (i < a.size() || j < b.size()) {
    const double x = j >= b.size() || (i < a.size() && a[i] <= b[j]) ? a[i] : b[j];
    total += (x - prev) * std::abs(double(i) / na - double(j) / nb);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    prev = x;
  }
  return total;
}

namespace {

Tensor slice_of(const Tensor& cube, std::int64_t z) {
  const std::int64_t h = cube.extent(1), w = cube.extent(2);
  Tensor s({h, w});
  std::copy_n(cube.data().begin() + z * h * w, h * w, s.storage().begin());
  return s;
}

// Patch descriptors of one level and repetition for one sample set.
std::vector<std::vector<double>> descriptors(std::span<const ModelGrid> set, const SwdConfig& cfg, int level,
                                             int rep) {
  std::vector<std::vector<double>> out;
  const int p = cfg.patch;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const ModelGrid& g = set[i];
    const std::int64_t nz = g.coarse_fraction.extent(0);
    std::map<std::int64_t, std::vector<std::vector<Tensor>>> cache;  // slice -> channel -> pyramid
    Rng rng(cfg.seed, {stream::swd, static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(rep), i});
    for (int k = 0; k < cfg.patches_per_sample; ++k) {
      const std::int64_t z = rng.index(nz);
      auto it = cache.find(z);
      if (it == cache.end()) {
        std::vector<std::vector<Tensor>> ch{laplacian_pyramid(slice_of(g.coarse_fraction, z), cfg.levels)};
        if (cfg.use_depo) ch.push_back(laplacian_pyramid(slice_of(g.depo_time, z), cfg.levels));
        it = cache.emplace(z, std::move(ch)).first;
      }
      const Tensor& first = it->second[0][static_cast<std::size_t>(level)];
      const std::int64_t h = first.extent(0), w = first.extent(1);
      const std::int64_t y0 = rng.index(h - p + 1), x0 = rng.index(w - p + 1);
      std::vector<double> d;
      d.reserve(it->second.size() * p * p);
      for (const auto& ch : it->second) {
        const Tensor& img = ch[static_cast<std::size_t>(level)];
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x) d.push_back(img[static_cast<std::size_t>((y0 + y) * w + x0 + x)]);
      }
      out.push_back(std::move(d));
    }
  }
  return out;
}

}  // namespace

SwdResult swd_multiscale(std::span<const ModelGrid> a, std::span<const ModelGrid> b, const SwdConfig& cfg) {
  cfg.validate();
  if (a.empty() || b.empty()) throw std::invalid_argument("swd: both sample sets must be non-empty");
  const Shape shape = a[0].coarse_fraction.shape();
  for (auto set : {a, b})
    for (const auto& g : set)
      if (g.coarse_fraction.shape() != shape || g.depo_time.shape() != shape)
        throw std::invalid_argument("swd: samples differ in extents");
  const int feasible = max_pyramid_levels(shape[1], shape[2], cfg.patch);
  if (cfg.levels > feasible)
    throw std::invalid_argument("swd: " + std::to_string(cfg.levels) + " pyramid levels do not fit " +
                                std::to_string(shape[1]) + "x" + std::to_string(shape[2]) + " slices with " +
                                std::to_string(cfg.patch) + "-cell patches; at most " + std::to_string(feasible));
  const int jobs = cfg.levels * cfg.repetitions;
  std::vector<double> value(static_cast<std::size_t>(jobs));
#pragma omp parallel for schedule(dynamic, 1)
  for (int job = 0; job < jobs; ++job) {
    const int level = job / cfg.repetitions, rep = job % cfg.repetitions;
    auto da = descriptors(a, cfg, level, rep);
    auto db = descriptors(b, cfg, level, rep);
    const std::size_t dim = da[0].size(), per_channel = static_cast<std::size_t>(cfg.patch * cfg.patch);
    if (cfg.normalize) {
      // Per-channel statistics pooled over both sets keep the metric symmetric.
      for (std::size_t c = 0; c * per_channel < dim; ++c) {
        double s = 0.0, s2 = 0.0, n = 0.0;
        for (auto* set : {&da, &db})
          for (const auto& d : *set)
            for (std::size_t k = c * per_channel; k < (c + 1) * per_channel; ++k) {
              s += d[k];
              s2 += d[k] * d[k];
              n += 1.0;
            }
        const double mean = s / n, sd = std::sqrt(std::max(s2 / n - mean * mean, 0.0));
        const double scale = sd > 1e-12 ? 1.0 / sd : 1.0;
        for (auto* set : {&da, &db})
          for (auto& d : *set)
            for (std::size_t k = c * per_channel; k < (c + 1) * per_channel; ++k) d[k] = (d[k] - mean) * scale;
      }
    }
    Rng rng(cfg.seed, {stream::swd, static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(rep),
                       std::uint64_t{1} << 40});
    double total = 0.0;
    std::vector<double> pa(da.size()), pb(db.size());
    for (int k = 0; k < cfg.projections; ++k) {
      std::vector<double> dir = rng.normal_vector(dim);
      double n2 = 0.0;
      for (double v : dir) n2 += v * v;
      const double inv = 1.0 / std::sqrt(n2);
      for (double& v : dir) v *= inv;
      for (std::size_t i = 0; i < da.size(); ++i) pa[i] = std::inner_product(dir.begin(), dir.end(), da[i].begin(), 0.0);
      for (std::size_t i = 0; i < db.size(); ++i) pb[i] = std::inner_product(dir.begin(), dir.end(), db[i].begin(), 0.0);
      total += wasserstein1(pa, pb);
    }
    value[static_cast<std::size_t>(job)] = total / cfg.projections;
  }
  SwdResult res;
  res.per_level.assign(static_cast<std::size_t>(cfg.levels), 0.0);
  for (int job = 0; job < jobs; ++job) res.per_level[static_cast<std::size_t>(job / cfg.repetitions)] += value[job] / cfg.repetitions;
  res.distance = std::accumulate(res.per_level.begin(), res.per_level.end(), 0.0) / cfg.levels;
  return res;
}

// -------------------------------------------------------------- eigen / MDS

SymmetricEigen jacobi_eigen(std::vector<std::vector<double>> a, double tol, int max_sweeps) {
  const std::size_t n = a.size();
  for (const auto& row : a)
    if (row.size() != n) throw std::invalid_argument("jacobi: matrix is not square");
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  double scale = 0.0;
  for (const auto& row : a)
    for (double x : row) scale += x * x;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off <= tol * tol * scale || off == 0.0) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i][i] > a[j][j]; });
  SymmetricEigen e;
  for (std::size_t k : order) {
    e.values.push_back(a[k][k]);
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = v[i][k];
    e.vectors.push_back(std::move(col));
  }
  return e;
}

MdsResult classical_mds(const std::vector<std::vector<double>>& d, int dim) {
  const std::size_t n = d.size();
  if (dim < 1) throw std::invalid_argument("mds: dimension must be >= 1");
  if (n < 2) throw std::invalid_argument("mds: need >= 2 points");
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i].size() != n) throw std::invalid_argument("mds: distance matrix is not square");
    for (std::size_t j = 0; j < n; ++j) {
      const double x = d[i][j];
      if (!std::isfinite(x) || x < 0.0)
        throw std::invalid_argument("mds: entry (" + std::to_string(i) + ", " + std::to_string(j) +
                                    ") is negative or non-finite");
      if (std::abs(x - d[j][i]) > 1e-12 * std::max(1.0, std::abs(x)))
        throw std::invalid_argument("mds: matrix is not symmetric at (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ")");
    }
    if (d[i][i] > 1e-12) throw std::invalid_argument("mds: non-zero diagonal at " + std::to_string(i));
  }
  // B = -1/2 J D^2 J
  std::vector<std::vector<double>> b(n, std::vector<double>(n));
  std::vector<double> row(n, 0.0);
  double all = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      row[i] += d[i][j] * d[i][j] / double(n);
      all += d[i][j] * d[i][j] / double(n * n);
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) b[i][j] = -0.5 * (d[i][j] * d[i][j] - row[i] - row[j] + all);
  const SymmetricEigen e = jacobi_eigen(std::move(b));
  MdsResult r;
  r.coords.assign(n, std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  for (int k = 0; k < dim && static_cast<std::size_t>(k) < n; ++k) {
    double lambda = e.values[k];
    r.eigenvalues.push_back(lambda);
    if (lambda < 0.0) {
      // Tiny negative values are rounding noise of a rank-deficient B.
      if (lambda < -1e-9 * std::max(1.0, std::abs(e.values[0])))
        r.warnings.push_back("mds: eigenvalue " + std::to_string(k) + " is negative (" + std::to_string(lambda) +
                             "), clamped to 0; distances are not Euclidean");
      lambda = 0.0;
    }
    const double s = std::sqrt(lambda);
    for (std::size_t i = 0; i < n; ++i) r.coords[i][k] = e.vectors[k][i] * s;
  }
  return r;
}

LatentVector mean_latent(std::span<const LatentVector> latents) {
  if (latents.empty()) throw std::invalid_argument("mean latent: no latents");
  LatentVector m{std::vector<double>(latents[0].size(), 0.0)};
  for (const auto& z : latents) {
    if (z.size() != m.size()) throw std::invalid_argument("mean latent: latents differ in size");
    for (std::size_t i = 0; i < z.size(); ++i) m[i] += z[i] / double(latents.size());
  }
  return m;
}

std::pair<std::vector<double>, std::vector<double>> pca_directions(std::span<const LatentVector> latents) {
  if (latents.size() < 3) throw std::invalid_argument("pca: need >= 3 latents");
  const LatentVector m = mean_latent(latents);
  const std::size_t d = m.size();
  if (d < 2) throw std::invalid_argument("pca: latent dimension must be >= 2");
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& z : latents)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += (z[i] - m[i]) * (z[j] - m[j]) / double(latents.size() - 1);
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += cov[i][i];
  if (!(trace > 0.0)) throw std::invalid_argument("pca: latents have zero variance");
  SymmetricEigen e = jacobi_eigen(std::move(cov));
  auto fix = [](std::vector<double> v) {
    std::size_t k = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (std::abs(v[i]) > std::abs(v[k])) k = i;
    if (v[k] < 0)
      for (double& x : v) x = -x;
    return v;
  };
  return {fix(e.vectors[0]), fix(e.vectors[1])};
}

// ---------------------------------------------------------------- landscape

double well_mae_at(const Generator& gen, const WellDataset& wells, const LatentVector& z, Precision precision) {
  const ModelGrid g = gen.generate(z, gen.default_labels(), precision);
  const auto cells = wells.cell_indices();
  std::vector<double> at(cells.size());
  for (std::size_t k = 0; k < cells.size(); ++k) at[k] = g.coarse_fraction[static_cast<std::size_t>(cells[k])];
  return mae(wells.values().data(), at);
}

LandscapeGrid error_landscape(const Generator& gen, const WellDataset& wells, const LatentVector& center,
                              std::span<const double> dir1, std::span<const double> dir2,
                              const LandscapeConfig& cfg) {
  const std::size_t d = center.size();
  if (dir1.size() != d || dir2.size() != d) throw std::invalid_argument("landscape: direction size mismatch");
  if (cfg.resolution < 1 || !(cfg.hi >= cfg.lo)) throw std::invalid_argument("landscape: bad range or resolution");
  double n1 = 0, n2 = 0, dot = 0;
  for (std::size_t i = 0; i < d; ++i) {
    n1 += dir1[i] * dir1[i];
    n2 += dir2[i] * dir2[i];
    dot += dir1[i] * dir2[i];
  }
  if (std::abs(n1 - 1) > 1e-8 || std::abs(n2 - 1) > 1e-8 || std::abs(dot) > 1e-8)
    throw std::invalid_argument("landscape: directions are not orthonormal");
  if (wells.geometry.shape() != gen.geometry().shape())
    throw std::invalid_argument("landscape: well grid does not match generator output");
  LandscapeGrid grid;
  grid.center = center;
  grid.dir1.assign(dir1.begin(), dir1.end());
  grid.dir2.assign(dir2.begin(), dir2.end());
  const int r = cfg.resolution;
  for (int i = 0; i < r; ++i)
    grid.coords.push_back(r == 1 ? cfg.lo : cfg.lo + (cfg.hi - cfg.lo) * double(i) / double(r - 1));
  grid.values.assign(static_cast<std::size_t>(r) * r, std::numeric_limits<double>::quiet_NaN());
#pragma omp parallel for schedule(dynamic, 8)
  for (int node = 0; node < r * r; ++node) {
    const double a = grid.coords[node / r], b = grid.coords[node % r];
    LatentVector z = center;
    for (std::size_t i = 0; i < d; ++i) z[i] = center[i] + a * dir1[i] + b * dir2[i];
    try {
      grid.values[static_cast<std::size_t>(node)] = well_mae_at(gen, wells, z, cfg.precision);
    } catch (const std::exception&) {
      // left as NaN
    }
  }
  return grid;
}

void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid) {
  out << "a,b,well_mae\n";
  char buf[96];
  const std::size_t r = grid.coords.size();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", grid.coords[i], grid.coords[j], grid.values[i * r + j]);
      out << buf;
    }
}

void write_mds_csv(std::ostream& out, const MdsResult& mds, std::span<const std::string> labels) {
  if (!labels.empty() && labels.size() != mds.coords.size())
    throw std::invalid_argument("mds csv: label count does not match point count");
  out << "index";
  if (!labels.empty()) out << ",label";
  const std::size_t dim = mds.coords.empty() ? 0 : mds.coords[0].size();
  for (std::size_t k = 0; k < dim; ++k) out << ",x" << k + 1;
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < mds.coords.size(); ++i) {
    out << i;
    if (!labels.empty()) out << ',' << labels[i];
    for (double v : mds.coords[i]) {
      std::snprintf(buf, sizeof buf, ",%.12g", v);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace fluvinv
