#include "kvedit/kernels.hpp"

#include <cmath>

// OpenMP-parallel kernels. Each parallel loop partitions output elements;
// every element is accumulated in the same serial order as the reference
// implementation in kernels_serial.cpp, so results are bit-identical for any
// thread count. Keep the loop bodies in the two files in sync.

namespace kvedit::kernels {

void matmul_nt(double* y, const double* x, const double* w, int R, int I, int O) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int r = 0; r < R; r++) {
        for (int o = 0; o < O; o++) {
            const double* xr = x + static_cast<int64_t>(r) * I;
            const double* wo = w + static_cast<int64_t>(o) * I;
            double acc = 0.0;
            for (int i = 0; i < I; i++) {
                acc += xr[i] * wo[i];
            }
            y[static_cast<int64_t>(r) * O + o] = acc;
        }
    }
}

void matmul_nn_acc(double* dx, const double* dy, const double* w, int R, int I, int O) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int r = 0; r < R; r++) {
        for (int i = 0; i < I; i++) {
            const double* dyr = dy + static_cast<int64_t>(r) * O;
            double acc = 0.0;
            for (int o = 0; o < O; o++) {
                acc += dyr[o] * w[static_cast<int64_t>(o) * I + i];
            }
            dx[static_cast<int64_t>(r) * I + i] += acc;
        }
    }
}

void matmul_tn_acc(double* dw, const double* dy, const double* x, int R, int I, int O) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < O; o++) {
        double* dwo = dw + static_cast<int64_t>(o) * I;
        for (int r = 0; r < R; r++) {
            double d = dy[static_cast<int64_t>(r) * O + o];
            if (d == 0.0) continue;
            const double* xr = x + static_cast<int64_t>(r) * I;
            for (int i = 0; i < I; i++) {
                dwo[i] += d * xr[i];
            }
        }
    }
}

void gemm_nn(double* c, const double* a, const double* b, int M, int K, int N) {
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; m++) {
        double* cm = c + static_cast<int64_t>(m) * N;
        for (int n = 0; n < N; n++) cm[n] = 0.0;
        const double* am = a + static_cast<int64_t>(m) * K;
        for (int k = 0; k < K; k++) {
            double amk = am[k];
            const double* bk = b + static_cast<int64_t>(k) * N;
            for (int n = 0; n < N; n++) {
                cm[n] += amk * bk[n];
            }
        }
    }
}

void gemm_nt(double* c, const double* a, const double* b, int M, int K, int N) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int m = 0; m < M; m++) {
        for (int n = 0; n < N; n++) {
            const double* am = a + static_cast<int64_t>(m) * K;
            const double* bn = b + static_cast<int64_t>(n) * K;
            double acc = 0.0;
            for (int k = 0; k < K; k++) {
                acc += am[k] * bn[k];
            }
            c[static_cast<int64_t>(m) * N + n] = acc;
        }
    }
}

void layernorm_forward(double* out, double* mean, double* rstd, const double* x,
                       const double* gain, const double* bias, int R, int C) {
    const double eps = 1e-5;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; r++) {
        const double* xr = x + static_cast<int64_t>(r) * C;
        double m = 0.0;
        for (int i = 0; i < C; i++) m += xr[i];
        m /= C;
        double v = 0.0;
        for (int i = 0; i < C; i++) {
            double d = xr[i] - m;
            v += d * d;
        }
        v /= C;
        double s = 1.0 / std::sqrt(v + eps);
        double* outr = out + static_cast<int64_t>(r) * C;
        for (int i = 0; i < C; i++) {
            outr[i] = (xr[i] - m) * s * gain[i] + bias[i];
        }
        mean[r] = m;
        rstd[r] = s;
    }
}

void layernorm_backward(double* dx_acc, double* dgain_acc, double* dbias_acc,
                        const double* dout, const double* x, const double* mean,
                        const double* rstd, const double* gain, int R, int C) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; r++) {
        const double* doutr = dout + static_cast<int64_t>(r) * C;
        const double* xr = x + static_cast<int64_t>(r) * C;
        double m = mean[r];
        double s = rstd[r];
        double dnorm_mean = 0.0;
        double dnorm_norm_mean = 0.0;
        for (int i = 0; i < C; i++) {
            double norm = (xr[i] - m) * s;
            double dnorm = gain[i] * doutr[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= C;
        dnorm_norm_mean /= C;
        double* dxr = dx_acc + static_cast<int64_t>(r) * C;
        for (int i = 0; i < C; i++) {
            double norm = (xr[i] - m) * s;
            double dnorm = gain[i] * doutr[i];
            dxr[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * s;
        }
    }
    // gain/bias gradients in a second pass, partitioned over channels
#pragma omp parallel for schedule(static)
    for (int i = 0; i < C; i++) {
        double dg = 0.0;
        double db = 0.0;
        for (int r = 0; r < R; r++) {
            double norm = (x[static_cast<int64_t>(r) * C + i] - mean[r]) * rstd[r];
            double d = dout[static_cast<int64_t>(r) * C + i];
            dg += norm * d;
            db += d;
        }
        dgain_acc[i] += dg;
        dbias_acc[i] += db;
    }
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
} // namespace

void gelu_forward(double* out, const double* x, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; i++) {
        out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
    }
}

void gelu_backward(double* dx_acc, const double* x, const double* dout, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; i++) {
        double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
        dx_acc[i] += dout[i] * (cdf + x[i] * pdf);
    }
}

void attention_forward(double* out, double* probs, const double* q, const double* k,
                       const double* v, int B, int T, const int* len, int H, int hd) {
    const int C = H * hd;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; b++) {
        for (int h = 0; h < H; h++) {
            for (int t = 0; t < len[b]; t++) {
                const double* qt = q + (static_cast<int64_t>(b) * T + t) * C + h * hd;
                double* prow = probs + ((static_cast<int64_t>(b) * H + h) * T + t) * T;
                double maxval = -1e300;
                for (int j = 0; j <= t; j++) {
                    const double* kj = k + (static_cast<int64_t>(b) * T + j) * C + h * hd;
                    double dot = 0.0;
                    for (int c = 0; c < hd; c++) dot += qt[c] * kj[c];
                    dot *= scale;
                    prow[j] = dot;
                    if (dot > maxval) maxval = dot;
                }
                double sum = 0.0;
                for (int j = 0; j <= t; j++) {
                    double e = std::exp(prow[j] - maxval);
                    prow[j] = e;
                    sum += e;
                }
                double inv = 1.0 / sum;
                for (int j = 0; j <= t; j++) prow[j] *= inv;
                double* ot = out + (static_cast<int64_t>(b) * T + t) * C + h * hd;
                for (int c = 0; c < hd; c++) {
                    double acc = 0.0;
                    for (int j = 0; j <= t; j++) {
                        acc += prow[j] * v[(static_cast<int64_t>(b) * T + j) * C + h * hd + c];
                    }
                    ot[c] = acc;
                }
            }
        }
    }
}

void attention_backward(double* dq_acc, double* dk_acc, double* dv_acc, double* dscores,
                        const double* dout, const double* probs, const double* q,
                        const double* k, const double* v, int B, int T, const int* len,
                        int H, int hd) {
    const int C = H * hd;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    // pass 1: softmax backward into dscores rows
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; b++) {
        for (int h = 0; h < H; h++) {
            for (int t = 0; t < len[b]; t++) {
                const double* doutt = dout + (static_cast<int64_t>(b) * T + t) * C + h * hd;
                const double* prow = probs + ((static_cast<int64_t>(b) * H + h) * T + t) * T;
                double* srow = dscores + ((static_cast<int64_t>(b) * H + h) * T + t) * T;
                double rowdot = 0.0;
                for (int j = 0; j <= t; j++) {
                    const double* vj = v + (static_cast<int64_t>(b) * T + j) * C + h * hd;
                    double dp = 0.0;
                    for (int c = 0; c < hd; c++) dp += doutt[c] * vj[c];
                    srow[j] = dp;
                    rowdot += prow[j] * dp;
                }
                for (int j = 0; j <= t; j++) {
                    srow[j] = prow[j] * (srow[j] - rowdot);
                }
            }
        }
    }
    // pass 2: query gradients, one (b,h,t) per task
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; b++) {
        for (int h = 0; h < H; h++) {
            for (int t = 0; t < len[b]; t++) {
                const double* srow = dscores + ((static_cast<int64_t>(b) * H + h) * T + t) * T;
                double* dqt = dq_acc + (static_cast<int64_t>(b) * T + t) * C + h * hd;
                for (int c = 0; c < hd; c++) {
                    double acc = 0.0;
                    for (int j = 0; j <= t; j++) {
                        acc += srow[j] * k[(static_cast<int64_t>(b) * T + j) * C + h * hd + c];
                    }
                    dqt[c] += scale * acc;
                }
            }
        }
    }
    // pass 3: key/value gradients, one (b,h,j) per task
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; b++) {
        for (int h = 0; h < H; h++) {
            for (int j = 0; j < len[b]; j++) {
                double* dkj = dk_acc + (static_cast<int64_t>(b) * T + j) * C + h * hd;
                double* dvj = dv_acc + (static_cast<int64_t>(b) * T + j) * C + h * hd;
                for (int c = 0; c < hd; c++) {
                    double acck = 0.0;
                    double accv = 0.0;
                    for (int t = j; t < len[b]; t++) {
                        const double* srow =
                            dscores + ((static_cast<int64_t>(b) * H + h) * T + t) * T;
                        const double* prow =
                            probs + ((static_cast<int64_t>(b) * H + h) * T + t) * T;
                        acck += srow[j] * q[(static_cast<int64_t>(b) * T + t) * C + h * hd + c];
                        accv += prow[j] * dout[(static_cast<int64_t>(b) * T + t) * C + h * hd + c];
                    }
                    dkj[c] += scale * acck;
                    dvj[c] += accv;
                }
            }
        }
    }
}

void log_softmax_rows(double* out, const double* logits, int R, int C) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; r++) {
        const double* lr = logits + static_cast<int64_t>(r) * C;
        double* outr = out + static_cast<int64_t>(r) * C;
        double maxval = lr[0];
        for (int i = 1; i < C; i++) {
            if (lr[i] > maxval) maxval = lr[i];
        }
        double sum = 0.0;
        for (int i = 0; i < C; i++) sum += std::exp(lr[i] - maxval);
        double lse = maxval + std::log(sum);
        for (int i = 0; i < C; i++) outr[i] = lr[i] - lse;
    }
}

void adam_update(double* p, double* m, double* v, const double* g, int64_t n, double lr,
                 double beta1, double beta2, double eps, double beta1_pow, double beta2_pow) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; i++) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        double mhat = m[i] / (1.0 - beta1_pow);
        double vhat = v[i] / (1.0 - beta2_pow);
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

bool cholesky_factor(double* a, int n) {
    for (int j = 0; j < n; j++) {
        double d = a[static_cast<int64_t>(j) * n + j];
        for (int k = 0; k < j; k++) {
            double l = a[static_cast<int64_t>(j) * n + k];
            d -= l * l;
        }
        if (!(d > 0.0)) return false;
        double diag = std::sqrt(d);
        a[static_cast<int64_t>(j) * n + j] = diag;
        double inv = 1.0 / diag;
#pragma omp parallel for schedule(static)
        for (int i = j + 1; i < n; i++) {
            double s = a[static_cast<int64_t>(i) * n + j];
            const double* li = a + static_cast<int64_t>(i) * n;
            const double* lj = a + static_cast<int64_t>(j) * n;
            for (int k = 0; k < j; k++) s -= li[k] * lj[k];
            a[static_cast<int64_t>(i) * n + j] = s * inv;
        }
    }
    return true;
}

void cholesky_solve(const double* L, double* b, int n, int nrhs) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < nrhs; c++) {
        // forward substitution L y = b
        for (int i = 0; i < n; i++) {
            double s = b[static_cast<int64_t>(i) * nrhs + c];
            const double* li = L + static_cast<int64_t>(i) * n;
            for (int k = 0; k < i; k++) s -= li[k] * b[static_cast<int64_t>(k) * nrhs + c];
            b[static_cast<int64_t>(i) * nrhs + c] = s / li[i];
        }
        // back substitution L^T x = y
        for (int i = n - 1; i >= 0; i--) {
            double s = b[static_cast<int64_t>(i) * nrhs + c];
            for (int k = i + 1; k < n; k++) {
                s -= L[static_cast<int64_t>(k) * n + i] * b[static_cast<int64_t>(k) * nrhs + c];
            }
            b[static_cast<int64_t>(i) * nrhs + c] = s / L[static_cast<int64_t>(i) * n + i];
        }
    }
}

} // namespace kvedit::kernels
