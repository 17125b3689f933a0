#pragma once

#include <cstdint>

namespace kvedit::kernels {

// Dense compute kernels shared by the model, the editor and the covariance
// estimator. The functions in this namespace carry OpenMP pragmas on their
// outer loops; kvedit::kernels::serial holds plain-loop reference versions
// with identical code otherwise. Every parallel loop partitions independent
// output elements and accumulates each of them in a fixed serial order, so
// both namespaces produce bit-identical results for any thread count
// (tests/test_kernels.cpp asserts this, tools/bench_kernels.cpp times it).
//
// Shape conventions: R = rows (usually batch*seq positions), I = input width,
// O = output width. All matrices are dense row-major double.

// y[R,O] = x[R,I] * w[O,I]^T
void matmul_nt(double* y, const double* x, const double* w, int R, int I, int O);
// dx[R,I] += dy[R,O] * w[O,I]
void matmul_nn_acc(double* dx, const double* dy, const double* w, int R, int I, int O);
// dw[O,I] += dy[R,O]^T * x[R,I]
void matmul_tn_acc(double* dw, const double* dy, const double* x, int R, int I, int O);

// General small GEMMs for the editor's matrix algebra.
// c[M,N] = a[M,K] * b[K,N]
void gemm_nn(double* c, const double* a, const double* b, int M, int K, int N);
// c[M,N] = a[M,K] * b[N,K]^T
void gemm_nt(double* c, const double* a, const double* b, int M, int K, int N);

void layernorm_forward(double* out, double* mean, double* rstd, const double* x,
                       const double* gain, const double* bias, int R, int C);
void layernorm_backward(double* dx_acc, double* dgain_acc, double* dbias_acc,
                        const double* dout, const double* x, const double* mean,
                        const double* rstd, const double* gain, int R, int C);

void gelu_forward(double* out, const double* x, int64_t n);
void gelu_backward(double* dx_acc, const double* x, const double* dout, int64_t n);

// Multi-head causal self-attention over padded batches. q/k/v/out are
// [B*T, H*hd]; probs and dscores scratch are [B,H,T,T]; len[b] gives the
// real length of sequence b (pad rows are skipped and left zero).
void attention_forward(double* out, double* probs, const double* q, const double* k,
                       const double* v, int B, int T, const int* len, int H, int hd);
void attention_backward(double* dq_acc, double* dk_acc, double* dv_acc, double* dscores,
                        const double* dout, const double* probs, const double* q,
                        const double* k, const double* v, int B, int T, const int* len,
                        int H, int hd);

// out[r,:] = log_softmax(logits[r,:]) for each row
void log_softmax_rows(double* out, const double* logits, int R, int C);

void adam_update(double* p, double* m, double* v, const double* g, int64_t n, double lr,
                 double beta1, double beta2, double eps, double beta1_pow, double beta2_pow);

// In-place lower Cholesky factorization; returns false on a non-positive pivot.
bool cholesky_factor(double* a, int n);
// Solves A * X = B for X given the factor L (A = L L^T). B is [n, nrhs]
// row-major and is overwritten with X. Columns solved independently.
void cholesky_solve(const double* L, double* b, int n, int nrhs);

namespace serial {
void matmul_nt(double* y, const double* x, const double* w, int R, int I, int O);
void matmul_nn_acc(double* dx, const double* dy, const double* w, int R, int I, int O);
void matmul_tn_acc(double* dw, const double* dy, const double* x, int R, int I, int O);
void gemm_nn(double* c, const double* a, const double* b, int M, int K, int N);
void gemm_nt(double* c, const double* a, const double* b, int M, int K, int N);
void layernorm_forward(double* out, double* mean, double* rstd, const double* x,
                       const double* gain, const double* bias, int R, int C);
void layernorm_backward(double* dx_acc, double* dgain_acc, double* dbias_acc,
                        const double* dout, const double* x, const double* mean,
                        const double* rstd, const double* gain, int R, int C);
void gelu_forward(double* out, const double* x, int64_t n);
void gelu_backward(double* dx_acc, const double* x, const double* dout, int64_t n);
void attention_forward(double* out, double* probs, const double* q, const double* k,
                       const double* v, int B, int T, const int* len, int H, int hd);
void attention_backward(double* dq_acc, double* dk_acc, double* dv_acc, double* dscores,
                        const double* dout, const double* probs, const double* q,
                        const double* k, const double* v, int B, int T, const int* len,
                        int H, int hd);
void log_softmax_rows(double* out, const double* logits, int R, int C);
void adam_update(double* p, double* m, double* v, const double* g, int64_t n, double lr,
                 double beta1, double beta2, double eps, double beta1_pow, double beta2_pow);
bool cholesky_factor(double* a, int n);
void cholesky_solve(const double* L, double* b, int n, int nrhs);
} // namespace serial

} // namespace kvedit::kernels
