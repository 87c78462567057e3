#pragma once

#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sparseagg::kernels {

// Worker cap for the parallel kernels. 1 (the default) runs everything on the
// calling thread. Every kernel below partitions work over independent output
// elements and keeps a fixed reduction order inside each element, so results
// are bit-identical for any thread count.
inline int& thread_count_ref() {
    static int n = 1;
    return n;
}
inline int thread_count() { return thread_count_ref(); }
inline void set_thread_count(int n) { thread_count_ref() = n < 1 ? 1 : n; }

#if defined(_OPENMP)
#define SPARSEAGG_PRAGMA(x) _Pragma(#x)
#define SPARSEAGG_PARALLEL_FOR                                                              \
    SPARSEAGG_PRAGMA(omp parallel for schedule(static) num_threads(kernels::thread_count()) \
                         if (kernels::thread_count() > 1))
#else
#define SPARSEAGG_PARALLEL_FOR
#endif

// ---------------------------------------------------------------------------
// Production kernels (OpenMP over output rows/points).
// ---------------------------------------------------------------------------

// out[m,n] = sum_k a[m,k] * b[k,n]
template <typename S>
void matmul(const S* a, const S* b, S* out, int m, int k, int n) {
    SPARSEAGG_PARALLEL_FOR
    for (int i = 0; i < m; ++i) {
        S* orow = out + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] = S(0);
        const S* arow = a + static_cast<std::int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            const S* brow = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[m,n] = sum_k a[m,k] * b[n,k]
template <typename S>
void matmul_nt(const S* a, const S* b, S* out, int m, int k, int n) {
    SPARSEAGG_PARALLEL_FOR
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<std::int64_t>(i) * k;
        S* orow = out + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* brow = b + static_cast<std::int64_t>(j) * k;
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] = acc;
        }
    }
}

// out[m,n] = sum_k a[k,m] * b[k,n]
template <typename S>
void matmul_tn(const S* a, const S* b, S* out, int k, int m, int n) {
    SPARSEAGG_PARALLEL_FOR
    for (int i = 0; i < m; ++i) {
        S* orow = out + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] = S(0);
        for (int p = 0; p < k; ++p) {
            const S av = a[static_cast<std::int64_t>(p) * m + i];
            const S* brow = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

template <typename S>
void add_bias_rows(S* out, const S* bias, int rows, int cols) {
    SPARSEAGG_PARALLEL_FOR
    for (int i = 0; i < rows; ++i) {
        S* orow = out + static_cast<std::int64_t>(i) * cols;
        for (int j = 0; j < cols; ++j) orow[j] += bias[j];
    }
}

// Bilinear interpolation of `p` points on one H x W x C map. Cell centers sit
// at integer coordinates; neighbors outside [0,W-1]x[0,H-1] contribute zero.
// uv[2*i] = u (columns), uv[2*i+1] = v (rows). valid[i] == 0 zeroes the output.
template <typename S>
void bilinear_gather(const S* map, int h, int w, int c, const S* uv,
                     const unsigned char* valid, int p, S* out) {
    SPARSEAGG_PARALLEL_FOR
    for (int i = 0; i < p; ++i) {
        S* orow = out + static_cast<std::int64_t>(i) * c;
        for (int j = 0; j < c; ++j) orow[j] = S(0);
        if (valid && !valid[i]) continue;
        const S u = uv[2 * i], v = uv[2 * i + 1];
        const int u0 = static_cast<int>(std::floor(static_cast<double>(u)));
        const int v0 = static_cast<int>(std::floor(static_cast<double>(v)));
        const S du = u - static_cast<S>(u0), dv = v - static_cast<S>(v0);
        const S wgt[4] = {(S(1) - du) * (S(1) - dv), du * (S(1) - dv),
                          (S(1) - du) * dv, du * dv};
        const int uu[4] = {u0, u0 + 1, u0, u0 + 1};
        const int vv[4] = {v0, v0, v0 + 1, v0 + 1};
        for (int q = 0; q < 4; ++q) {
            if (uu[q] < 0 || uu[q] >= w || vv[q] < 0 || vv[q] >= h) continue;
            const S* cell = map + (static_cast<std::int64_t>(vv[q]) * w + uu[q]) * c;
            const S wq = wgt[q];
            for (int j = 0; j < c; ++j) orow[j] += wq * cell[j];
        }
    }
}

// Scatter-add of output gradients back into the map gradient. Points can hit
// the same cell, so this stays serial.
template <typename S>
void bilinear_scatter_map(const S* uv, const unsigned char* valid, const S* gout,
                          int p, int h, int w, int c, S* gmap) {
    for (int i = 0; i < p; ++i) {
        if (valid && !valid[i]) continue;
        const S* grow = gout + static_cast<std::int64_t>(i) * c;
        const S u = uv[2 * i], v = uv[2 * i + 1];
        const int u0 = static_cast<int>(std::floor(static_cast<double>(u)));
        const int v0 = static_cast<int>(std::floor(static_cast<double>(v)));
        const S du = u - static_cast<S>(u0), dv = v - static_cast<S>(v0);
        const S wgt[4] = {(S(1) - du) * (S(1) - dv), du * (S(1) - dv),
                          (S(1) - du) * dv, du * dv};
        const int uu[4] = {u0, u0 + 1, u0, u0 + 1};
        const int vv[4] = {v0, v0, v0 + 1, v0 + 1};
        for (int q = 0; q < 4; ++q) {
            if (uu[q] < 0 || uu[q] >= w || vv[q] < 0 || vv[q] >= h) continue;
            S* cell = gmap + (static_cast<std::int64_t>(vv[q]) * w + uu[q]) * c;
            const S wq = wgt[q];
            for (int j = 0; j < c; ++j) cell[j] += wq * grow[j];
        }
    }
}

// Gradient of the bilinear sample with respect to the (u, v) coordinates.
template <typename S>
void bilinear_coord_grad(const S* map, int h, int w, int c, const S* uv,
                         const unsigned char* valid, const S* gout, int p, S* guv) {
    SPARSEAGG_PARALLEL_FOR
    for (int i = 0; i < p; ++i) {
        guv[2 * i] = S(0);
        guv[2 * i + 1] = S(0);
        if (valid && !valid[i]) continue;
        const S u = uv[2 * i], v = uv[2 * i + 1];
        const int u0 = static_cast<int>(std::floor(static_cast<double>(u)));
        const int v0 = static_cast<int>(std::floor(static_cast<double>(v)));
        const S du = u - static_cast<S>(u0), dv = v - static_cast<S>(v0);
        // d(weight)/du and d(weight)/dv per corner, same corner order as gather.
        const S dwu[4] = {-(S(1) - dv), (S(1) - dv), -dv, dv};
        const S dwv[4] = {-(S(1) - du), -du, (S(1) - du), du};
        const int uu[4] = {u0, u0 + 1, u0, u0 + 1};
        const int vv[4] = {v0, v0, v0 + 1, v0 + 1};
        const S* grow = gout + static_cast<std::int64_t>(i) * c;
        S gu = S(0), gv = S(0);
        for (int q = 0; q < 4; ++q) {
            if (uu[q] < 0 || uu[q] >= w || vv[q] < 0 || vv[q] >= h) continue;
            const S* cell = map + (static_cast<std::int64_t>(vv[q]) * w + uu[q]) * c;
            S dot = S(0);
            for (int j = 0; j < c; ++j) dot += cell[j] * grow[j];
            gu += dwu[q] * dot;
            gv += dwv[q] * dot;
        }
        guv[2 * i] = gu;
        guv[2 * i + 1] = gv;
    }
}

// Grouped view/scale aggregation. Layouts:
//   f   [rows, frames, ns, c]   sampled features, rows = instances * points
//   wgt [rows, ns, g]           per-(row, group) mixing weights over ns
//   out [rows, frames, c]       out[r,t,ch] = sum_ns wgt[r,ns,group(ch)] * f[r,t,ns,ch]
// with group(ch) = ch / (c / g).
template <typename S>
void group_weight_sum(const S* f, const S* wgt, S* out, int rows, int frames,
                      int ns, int c, int g) {
    const int cg = c / g;
    SPARSEAGG_PARALLEL_FOR
    for (int r = 0; r < rows; ++r) {
        const S* fr = f + static_cast<std::int64_t>(r) * frames * ns * c;
        const S* wr = wgt + static_cast<std::int64_t>(r) * ns * g;
        S* orow = out + static_cast<std::int64_t>(r) * frames * c;
        for (int t = 0; t < frames; ++t) {
            S* ot = orow + static_cast<std::int64_t>(t) * c;
            for (int ch = 0; ch < c; ++ch) ot[ch] = S(0);
            const S* ft = fr + static_cast<std::int64_t>(t) * ns * c;
            for (int s = 0; s < ns; ++s) {
                const S* fs = ft + static_cast<std::int64_t>(s) * c;
                const S* ws = wr + static_cast<std::int64_t>(s) * g;
                for (int ch = 0; ch < c; ++ch) ot[ch] += ws[ch / cg] * fs[ch];
            }
        }
    }
}

template <typename S>
void group_weight_sum_grad_f(const S* wgt, const S* gout, S* gf, int rows,
                             int frames, int ns, int c, int g) {
    const int cg = c / g;
    SPARSEAGG_PARALLEL_FOR
    for (int r = 0; r < rows; ++r) {
        const S* wr = wgt + static_cast<std::int64_t>(r) * ns * g;
        const S* gr = gout + static_cast<std::int64_t>(r) * frames * c;
        S* gfr = gf + static_cast<std::int64_t>(r) * frames * ns * c;
        for (int t = 0; t < frames; ++t) {
            const S* gt = gr + static_cast<std::int64_t>(t) * c;
            S* gft = gfr + static_cast<std::int64_t>(t) * ns * c;
            for (int s = 0; s < ns; ++s) {
                const S* ws = wr + static_cast<std::int64_t>(s) * g;
                S* gfs = gft + static_cast<std::int64_t>(s) * c;
                for (int ch = 0; ch < c; ++ch) gfs[ch] += ws[ch / cg] * gt[ch];
            }
        }
    }
}

template <typename S>
void group_weight_sum_grad_w(const S* f, const S* gout, S* gw, int rows,
                             int frames, int ns, int c, int g) {
    const int cg = c / g;
    SPARSEAGG_PARALLEL_FOR
    for (int r = 0; r < rows; ++r) {
        const S* fr = f + static_cast<std::int64_t>(r) * frames * ns * c;
        const S* gr = gout + static_cast<std::int64_t>(r) * frames * c;
        S* gwr = gw + static_cast<std::int64_t>(r) * ns * g;
        for (int s = 0; s < ns; ++s) {
            for (int gi = 0; gi < g; ++gi) {
                S acc = S(0);
                for (int t = 0; t < frames; ++t) {
                    const S* ft = fr + (static_cast<std::int64_t>(t) * ns + s) * c;
                    const S* gt = gr + static_cast<std::int64_t>(t) * c;
                    for (int ch = gi * cg; ch < (gi + 1) * cg; ++ch) acc += ft[ch] * gt[ch];
                }
                gwr[static_cast<std::int64_t>(s) * g + gi] += acc;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Serial reference implementations. Plain loops, no pragmas; the tests compare
// them against the parallel kernels above and the benchmark times both.
// ---------------------------------------------------------------------------
namespace ref {

template <typename S>
void matmul(const S* a, const S* b, S* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            out[i * n + j] = acc;
        }
    }
}

template <typename S>
void matmul_nt(const S* a, const S* b, S* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            out[i * n + j] = acc;
        }
    }
}

template <typename S>
void matmul_tn(const S* a, const S* b, S* out, int k, int m, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
            out[i * n + j] = acc;
        }
    }
}

template <typename S>
void bilinear_gather(const S* map, int h, int w, int c, const S* uv,
                     const unsigned char* valid, int p, S* out) {
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j < c; ++j) out[i * c + j] = S(0);
        if (valid && !valid[i]) continue;
        const double u = static_cast<double>(uv[2 * i]);
        const double v = static_cast<double>(uv[2 * i + 1]);
        const int u0 = static_cast<int>(std::floor(u));
        const int v0 = static_cast<int>(std::floor(v));
        for (int dv = 0; dv <= 1; ++dv) {
            for (int du = 0; du <= 1; ++du) {
                const int ui = u0 + du, vi = v0 + dv;
                if (ui < 0 || ui >= w || vi < 0 || vi >= h) continue;
                const S wu = du ? uv[2 * i] - S(u0) : S(1) - (uv[2 * i] - S(u0));
                const S wv = dv ? uv[2 * i + 1] - S(v0) : S(1) - (uv[2 * i + 1] - S(v0));
                for (int j = 0; j < c; ++j) {
                    out[i * c + j] += wu * wv * map[(vi * w + ui) * c + j];
                }
            }
        }
    }
}

template <typename S>
void group_weight_sum(const S* f, const S* wgt, S* out, int rows, int frames,
                      int ns, int c, int g) {
    const int cg = c / g;
    for (int r = 0; r < rows; ++r) {
        for (int t = 0; t < frames; ++t) {
            for (int ch = 0; ch < c; ++ch) {
                S acc = S(0);
                for (int s = 0; s < ns; ++s) {
                    acc += wgt[(r * ns + s) * g + ch / cg] *
                           f[((r * frames + t) * ns + s) * c + ch];
                }
                out[(r * frames + t) * c + ch] = acc;
            }
        }
    }
}

}  // namespace ref

}  // namespace sparseagg::kernels
