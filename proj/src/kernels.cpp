#include "fluvinv/kernels.hpp"

#include <algorithm>

#include <omp.h>

namespace fluvinv::kernels {

int max_threads() { return omp_in_parallel() ? 1 : omp_get_max_threads(); }

namespace {

struct Range {
  std::int64_t lo, hi;
};

// Output positions o in [0, n) whose source o + shift lies in [0, n).
Range valid_range(std::int64_t n, std::int64_t shift) {
  return {std::max<std::int64_t>(0, -shift), std::min<std::int64_t>(n, n - shift)};
}

}  // namespace

void conv3d_forward_reference(const ConvGeometry& g, std::span<const double> in,
                              std::span<const double> w, std::span<const double> bias,
                              std::span<double> out) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t vol = g.volume();
  for (std::int64_t co = 0; co < g.cout; ++co)
    for (std::int64_t z = 0; z < g.nz; ++z)
      for (std::int64_t y = 0; y < g.ny; ++y)
        for (std::int64_t x = 0; x < g.nx; ++x) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::int64_t ci = 0; ci < g.cin; ++ci)
            for (std::int64_t a = 0; a < g.kz; ++a) {
              const std::int64_t zi = z + a - pz;
              if (zi < 0 || zi >= g.nz) continue;
              for (std::int64_t b = 0; b < g.ky; ++b) {
                const std::int64_t yi = y + b - py;
                if (yi < 0 || yi >= g.ny) continue;
                for (std::int64_t c = 0; c < g.kx; ++c) {
                  const std::int64_t xi = x + c - px;
                  if (xi < 0 || xi >= g.nx) continue;
                  acc += w[(((co * g.cin + ci) * g.kz + a) * g.ky + b) * g.kx + c] *
                         in[ci * vol + (zi * g.ny + yi) * g.nx + xi];
                }
              }
            }
          out[co * vol + (z * g.ny + y) * g.nx + x] = acc;
        }
}

void conv3d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t vol = g.volume();
#pragma omp parallel for schedule(static) if (max_threads() > 1 && g.cout > 1)
  for (std::int64_t co = 0; co < g.cout; ++co) {
    double* dst_c = out.data() + co * vol;
    std::fill(dst_c, dst_c + vol, bias.empty() ? 0.0 : bias[co]);
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
      const double* src_c = in.data() + ci * vol;
      for (std::int64_t a = 0; a < g.kz; ++a) {
        const Range rz = valid_range(g.nz, a - pz);
        for (std::int64_t b = 0; b < g.ky; ++b) {
          const Range ry = valid_range(g.ny, b - py);
          for (std::int64_t c = 0; c < g.kx; ++c) {
            const Range rx = valid_range(g.nx, c - px);
            const double wv = w[(((co * g.cin + ci) * g.kz + a) * g.ky + b) * g.kx + c];
            if (g.ky == 1 && g.kx == 1) {
              if (rz.hi <= rz.lo) continue;
              const std::int64_t plane = g.ny * g.nx;
              double* dst = dst_c + rz.lo * plane;
              const double* src = src_c + (rz.lo + a - pz) * plane;
              for (std::int64_t i = 0, n = (rz.hi - rz.lo) * plane; i < n; ++i) dst[i] += wv * src[i];
              continue;
            }
            for (std::int64_t z = rz.lo; z < rz.hi; ++z)
              for (std::int64_t y = ry.lo; y < ry.hi; ++y) {
                double* dst = dst_c + (z * g.ny + y) * g.nx;
                const double* src = src_c + ((z + a - pz) * g.ny + (y + b - py)) * g.nx;
                for (std::int64_t x = rx.lo; x < rx.hi; ++x) dst[x] += wv * src[x + c - px];
              }
          }
        }
      }
    }
  }
}

void conv3d_backward_input_reference(const ConvGeometry& g, std::span<const double> grad_out,
                                     std::span<const double> w, std::span<double> grad_in) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t vol = g.volume();
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t zi = 0; zi < g.nz; ++zi)
      for (std::int64_t yi = 0; yi < g.ny; ++yi)
        for (std::int64_t xi = 0; xi < g.nx; ++xi) {
          double acc = 0.0;
          for (std::int64_t co = 0; co < g.cout; ++co)
            for (std::int64_t a = 0; a < g.kz; ++a) {
              const std::int64_t z = zi - a + pz;
              if (z < 0 || z >= g.nz) continue;
              for (std::int64_t b = 0; b < g.ky; ++b) {
                const std::int64_t y = yi - b + py;
                if (y < 0 || y >= g.ny) continue;
                for (std::int64_t c = 0; c < g.kx; ++c) {
                  const std::int64_t x = xi - c + px;
                  if (x < 0 || x >= g.nx) continue;
                  acc += w[(((co * g.cin + ci) * g.kz + a) * g.ky + b) * g.kx + c] *
                         grad_out[co * vol + (z * g.ny + y) * g.nx + x];
                }
              }
            }
          grad_in[ci * vol + (zi * g.ny + yi) * g.nx + xi] = acc;
        }
}

void conv3d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> w, std::span<double> grad_in) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t vol = g.volume();
#pragma omp parallel for schedule(static) if (max_threads() > 1 && g.cin > 1)
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    double* dst_c = grad_in.data() + ci * vol;
    std::fill(dst_c, dst_c + vol, 0.0);
    for (std::int64_t co = 0; co < g.cout; ++co) {
      const double* src_c = grad_out.data() + co * vol;
      for (std::int64_t a = 0; a < g.kz; ++a) {
        const Range rz = valid_range(g.nz, pz - a);
        for (std::int64_t b = 0; b < g.ky; ++b) {
          const Range ry = valid_range(g.ny, py - b);
          for (std::int64_t c = 0; c < g.kx; ++c) {
            const Range rx = valid_range(g.nx, px - c);
            const double wv = w[(((co * g.cin + ci) * g.kz + a) * g.ky + b) * g.kx + c];
            if (g.ky == 1 && g.kx == 1) {
              if (rz.hi <= rz.lo) continue;
              const std::int64_t plane = g.ny * g.nx;
              double* dst = dst_c + rz.lo * plane;
              const double* src = src_c + (rz.lo - a + pz) * plane;
              for (std::int64_t i = 0, n = (rz.hi - rz.lo) * plane; i < n; ++i) dst[i] += wv * src[i];
              continue;
            }
            for (std::int64_t zi = rz.lo; zi < rz.hi; ++zi)
              for (std::int64_t yi = ry.lo; yi < ry.hi; ++yi) {
                double* dst = dst_c + (zi * g.ny + yi) * g.nx;
                const double* src = src_c + ((zi - a + pz) * g.ny + (yi - b + py)) * g.nx;
                for (std::int64_t xi = rx.lo; xi < rx.hi; ++xi) dst[xi] += wv * src[xi + px - c];
              }
          }
        }
      }
    }
  }
}

void conv3d_backward_weight_reference(const ConvGeometry& g, std::span<const double> in,
                                      std::span<const double> grad_out,
                                      std::span<double> grad_w) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t vol = g.volume();
  for (std::int64_t co = 0; co < g.cout; ++co)
    for (std::int64_t ci = 0; ci < g.cin; ++ci)
      for (std::int64_t a = 0; a < g.kz; ++a)
        for (std::int64_t b = 0; b < g.ky; ++b)
          for (std::int64_t c = 0; c < g.kx; ++c) {
            double acc = 0.0;
            for (std::int64_t z = 0; z < g.nz; ++z) {
              const std::int64_t zi = z + a - pz;
              if (zi < 0 || zi >= g.nz) continue;
              for (std::int64_t y = 0; y < g.ny; ++y) {
                const std::int64_t yi = y + b - py;
                if (yi < 0 || yi >= g.ny) continue;
                for (std::int64_t x = 0; x < g.nx; ++x) {
                  const std::int64_t xi = x + c - px;
                  if (xi < 0 || xi >= g.nx) continue;
                  acc += grad_out[co * vol + (z * g.ny + y) * g.nx + x] *
                         in[ci * vol + (zi * g.ny + yi) * g.nx + xi];
                }
              }
            }
            grad_w[(((co * g.cin + ci) * g.kz + a) * g.ky + b) * g.kx + c] = acc;
          }
}

void conv3d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_w) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t vol = g.volume();
#pragma omp parallel for schedule(static) if (max_threads() > 1 && g.cout > 1)
  for (std::int64_t co = 0; co < g.cout; ++co) {
    const double* go = grad_out.data() + co * vol;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
      const double* src_c = in.data() + ci * vol;
      for (std::int64_t a = 0; a < g.kz; ++a) {
        const Range rz = valid_range(g.nz, a - pz);
        for (std::int64_t b = 0; b < g.ky; ++b) {
          const Range ry = valid_range(g.ny, b - py);
          for (std::int64_t c = 0; c < g.kx; ++c) {
            const Range rx = valid_range(g.nx, c - px);
            double acc = 0.0;
            for (std::int64_t z = rz.lo; z < rz.hi; ++z)
              for (std::int64_t y = ry.lo; y < ry.hi; ++y) {
                const double* gv = go + (z * g.ny + y) * g.nx;
                const double* src = src_c + ((z + a - pz) * g.ny + (y + b - py)) * g.nx;
                for (std::int64_t x = rx.lo; x < rx.hi; ++x) acc += gv[x] * src[x + c - px];
              }
            grad_w[(((co * g.cin + ci) * g.kz + a) * g.ky + b) * g.kx + c] = acc;
          }
        }
      }
    }
  }
}

void conv_transpose3d_forward(const ConvGeometry& g, std::span<const double> in,
                              std::span<const double> w, std::span<const double> bias,
                              std::span<double> out) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t oz = 2 * g.nz, oy = 2 * g.ny, ox = 2 * g.nx;
  const std::int64_t vin = g.volume(), vout = oz * oy * ox;
  for (std::int64_t co = 0; co < g.cout; ++co)
    std::fill(out.begin() + co * vout, out.begin() + (co + 1) * vout,
              bias.empty() ? 0.0 : bias[co]);
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t co = 0; co < g.cout; ++co)
      for (std::int64_t a = 0; a < g.kz; ++a)
        for (std::int64_t b = 0; b < g.ky; ++b)
          for (std::int64_t c = 0; c < g.kx; ++c) {
            const double wv = w[(((ci * g.cout + co) * g.kz + a) * g.ky + b) * g.kx + c];
            for (std::int64_t z = 0; z < g.nz; ++z) {
              const std::int64_t zo = 2 * z + a - pz;
              if (zo < 0 || zo >= oz) continue;
              for (std::int64_t y = 0; y < g.ny; ++y) {
                const std::int64_t yo = 2 * y + b - py;
                if (yo < 0 || yo >= oy) continue;
                for (std::int64_t x = 0; x < g.nx; ++x) {
                  const std::int64_t xo = 2 * x + c - px;
                  if (xo < 0 || xo >= ox) continue;
                  out[co * vout + (zo * oy + yo) * ox + xo] +=
                      wv * in[ci * vin + (z * g.ny + y) * g.nx + x];
                }
              }
            }
          }
}

void conv_transpose3d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                                     std::span<const double> w, std::span<double> grad_in) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t oz = 2 * g.nz, oy = 2 * g.ny, ox = 2 * g.nx;
  const std::int64_t vin = g.volume(), vout = oz * oy * ox;
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t z = 0; z < g.nz; ++z)
      for (std::int64_t y = 0; y < g.ny; ++y)
        for (std::int64_t x = 0; x < g.nx; ++x) {
          double acc = 0.0;
          for (std::int64_t co = 0; co < g.cout; ++co)
            for (std::int64_t a = 0; a < g.kz; ++a) {
              const std::int64_t zo = 2 * z + a - pz;
              if (zo < 0 || zo >= oz) continue;
              for (std::int64_t b = 0; b < g.ky; ++b) {
                const std::int64_t yo = 2 * y + b - py;
                if (yo < 0 || yo >= oy) continue;
                for (std::int64_t c = 0; c < g.kx; ++c) {
                  const std::int64_t xo = 2 * x + c - px;
                  if (xo < 0 || xo >= ox) continue;
                  acc += w[(((ci * g.cout + co) * g.kz + a) * g.ky + b) * g.kx + c] *
                         grad_out[co * vout + (zo * oy + yo) * ox + xo];
                }
              }
            }
          grad_in[ci * vin + (z * g.ny + y) * g.nx + x] = acc;
        }
}

void conv_transpose3d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                                      std::span<const double> grad_out,
                                      std::span<double> grad_w) {
  const std::int64_t pz = (g.kz - 1) / 2, py = (g.ky - 1) / 2, px = (g.kx - 1) / 2;
  const std::int64_t oz = 2 * g.nz, oy = 2 * g.ny, ox = 2 * g.nx;
  const std::int64_t vin = g.volume(), vout = oz * oy * ox;
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t co = 0; co < g.cout; ++co)
      for (std::int64_t a = 0; a < g.kz; ++a)
        for (std::int64_t b = 0; b < g.ky; ++b)
          for (std::int64_t c = 0; c < g.kx; ++c) {
            double acc = 0.0;
            for (std::int64_t z = 0; z < g.nz; ++z) {
              const std::int64_t zo = 2 * z + a - pz;
              if (zo < 0 || zo >= oz) continue;
              for (std::int64_t y = 0; y < g.ny; ++y) {
                const std::int64_t yo = 2 * y + b - py;
                if (yo < 0 || yo >= oy) continue;
                for (std::int64_t x = 0; x < g.nx; ++x) {
                  const std::int64_t xo = 2 * x + c - px;
                  if (xo < 0 || xo >= ox) continue;
                  acc += in[ci * vin + (z * g.ny + y) * g.nx + x] *
                         grad_out[co * vout + (zo * oy + yo) * ox + xo];
                }
              }
            }
            grad_w[(((ci * g.cout + co) * g.kz + a) * g.ky + b) * g.kx + c] = acc;
          }
}

}  // namespace fluvinv::kernels
