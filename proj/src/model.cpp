#include "kvedit/model.hpp"

#include <cmath>
#include <cstring>

#include "kvedit/error.hpp"
#include "kvedit/kernels.hpp"
#include "kvedit/rng.hpp"

namespace kvedit {

// ---------------------------------------------------------------------------
// config / params

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || d_mlp < 1 || n_heads < 1 || max_seq_len < 1) {
        fail(ErrorKind::Config, "all model dimensions must be >= 1");
    }
    if (vocab_size < 1) {
        fail(ErrorKind::Config, "vocab_size must be >= 1");
    }
    if (d_model % n_heads != 0) {
        fail(ErrorKind::Config, "d_model must be divisible by n_heads");
    }
}

Params Params::zeros(const ModelConfig& cfg) {
    Params p;
    p.wte = Array::zeros({cfg.vocab_size, cfg.d_model});
    p.wpe = Array::zeros({cfg.max_seq_len, cfg.d_model});
    p.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
        l.ln1_g = Array::zeros({cfg.d_model});
        l.ln1_b = Array::zeros({cfg.d_model});
        l.wq = Array::zeros({cfg.d_model, cfg.d_model});
        l.wk = Array::zeros({cfg.d_model, cfg.d_model});
        l.wv = Array::zeros({cfg.d_model, cfg.d_model});
        l.wo = Array::zeros({cfg.d_model, cfg.d_model});
        l.ln2_g = Array::zeros({cfg.d_model});
        l.ln2_b = Array::zeros({cfg.d_model});
        l.w_in = Array::zeros({cfg.d_mlp, cfg.d_model});
        l.w_out = Array::zeros({cfg.d_model, cfg.d_mlp});
    }
    p.lnf_g = Array::zeros({cfg.d_model});
    p.lnf_b = Array::zeros({cfg.d_model});
    p.w_lm = Array::zeros({cfg.vocab_size, cfg.d_model});
    return p;
}

void Params::zero_all() {
    for_each_array(*this, [](const std::string&, Array& a) { a.zero(); });
}

void for_each_array(Params& p, const std::function<void(const std::string&, Array&)>& fn) {
    fn("wte", p.wte);
    fn("wpe", p.wpe);
    for (size_t i = 0; i < p.layers.size(); i++) {
        std::string base = "layers." + std::to_string(i) + ".";
        auto& l = p.layers[i];
        fn(base + "ln1.g", l.ln1_g);
        fn(base + "ln1.b", l.ln1_b);
        fn(base + "wq", l.wq);
        fn(base + "wk", l.wk);
        fn(base + "wv", l.wv);
        fn(base + "wo", l.wo);
        fn(base + "ln2.g", l.ln2_g);
        fn(base + "ln2.b", l.ln2_b);
        fn(base + "w_in", l.w_in);
        fn(base + "w_out", l.w_out);
    }
    fn("lnf.g", p.lnf_g);
    fn("lnf.b", p.lnf_b);
    fn("w_lm", p.w_lm);
}

void for_each_array(const Params& p,
                    const std::function<void(const std::string&, const Array&)>& fn) {
    for_each_array(const_cast<Params&>(p),
                   [&fn](const std::string& name, Array& a) { fn(name, a); });
}

Params init_params(const ModelConfig& cfg) {
    cfg.validate();
    Params p = Params::zeros(cfg);
    Rng rng(static_cast<uint64_t>(cfg.rng_seed));
    const double std_w = 0.02;
    const double std_proj = 0.02 / std::sqrt(2.0 * cfg.n_layers);
    auto fill = [&rng](Array& a, double std) {
        for (double& x : a.data) x = rng.normal(0.0, std);
    };
    auto ones = [](Array& a) { std::fill(a.data.begin(), a.data.end(), 1.0); };

    fill(p.wte, std_w);
    fill(p.wpe, std_w);
    for (auto& l : p.layers) {
        ones(l.ln1_g);
        fill(l.wq, std_w);
        fill(l.wk, std_w);
        fill(l.wv, std_w);
        fill(l.wo, std_proj);
        ones(l.ln2_g);
        fill(l.w_in, std_w);
        fill(l.w_out, std_proj);
    }
    ones(p.lnf_g);
    fill(p.w_lm, std_w);
    return p;
}

bool params_equal(const Params& a, const Params& b) {
    std::vector<const Array*> av, bv;
    for_each_array(a, [&](const std::string&, const Array& arr) { av.push_back(&arr); });
    for_each_array(b, [&](const std::string&, const Array& arr) { bv.push_back(&arr); });
    if (av.size() != bv.size()) return false;
    for (size_t i = 0; i < av.size(); i++) {
        if (av[i]->shape != bv[i]->shape) return false;
        if (!av[i]->data.empty() &&
            std::memcmp(av[i]->data.data(), bv[i]->data.data(),
                        av[i]->data.size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// batches

TokenBatch TokenBatch::from_sequences(std::span<const std::vector<int>> seqs, int pad_id) {
    TokenBatch b;
    b.B = static_cast<int>(seqs.size());
    b.T = 0;
    for (const auto& s : seqs) b.T = std::max(b.T, static_cast<int>(s.size()));
    b.ids.assign(static_cast<size_t>(b.B) * b.T, pad_id);
    b.len.resize(static_cast<size_t>(b.B));
    for (int i = 0; i < b.B; i++) {
        b.len[i] = static_cast<int>(seqs[i].size());
        std::copy(seqs[i].begin(), seqs[i].end(), b.ids.begin() + static_cast<size_t>(i) * b.T);
    }
    return b;
}

TokenBatch TokenBatch::single(std::span<const int> seq) {
    TokenBatch b;
    b.B = 1;
    b.T = static_cast<int>(seq.size());
    b.ids.assign(seq.begin(), seq.end());
    b.len = {b.T};
    return b;
}

// ---------------------------------------------------------------------------
// forward

namespace {

void ensure(Array& a, std::initializer_list<int64_t> dims) {
    std::vector<int64_t> shape(dims);
    int64_t n = 1;
    for (auto d : shape) n *= d;
    if (a.shape != shape) {
        a.shape = shape;
        a.data.resize(static_cast<size_t>(n));
    }
}

void ensure_trace(ForwardTrace& tr, const ModelConfig& cfg, int B, int T) {
    const int64_t R = static_cast<int64_t>(B) * T;
    tr.B = B;
    tr.T = T;
    ensure(tr.emb, {R, cfg.d_model});
    tr.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& L : tr.layers) {
        ensure(L.ln1, {R, cfg.d_model});
        ensure(L.ln1_mean, {R});
        ensure(L.ln1_rstd, {R});
        ensure(L.q, {R, cfg.d_model});
        ensure(L.k, {R, cfg.d_model});
        ensure(L.v, {R, cfg.d_model});
        ensure(L.att, {R, cfg.d_model});
        ensure(L.att_probs, {static_cast<int64_t>(B) * cfg.n_heads * T * T});
        ensure(L.att_proj, {R, cfg.d_model});
        ensure(L.res1, {R, cfg.d_model});
        ensure(L.ln2, {R, cfg.d_model});
        ensure(L.ln2_mean, {R});
        ensure(L.ln2_rstd, {R});
        ensure(L.mlp_pre, {R, cfg.d_mlp});
        ensure(L.mlp_act, {R, cfg.d_mlp});
        ensure(L.mlp_out, {R, cfg.d_model});
        ensure(L.res2, {R, cfg.d_model});
    }
    ensure(tr.lnf, {R, cfg.d_model});
    ensure(tr.lnf_mean, {R});
    ensure(tr.lnf_rstd, {R});
    ensure(tr.logits, {R, cfg.vocab_size});
    ensure(tr.logprobs, {R, cfg.vocab_size});
}

void add_rows(double* out, const double* a, const double* b, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; i++) out[i] = a[i] + b[i];
}

void check_injection(const ModelConfig& cfg, const Injection& inj, const TokenBatch& batch) {
    if (inj.layer < 0 || inj.layer >= cfg.n_layers) {
        fail(ErrorKind::Probe, "injection layer " + std::to_string(inj.layer) + " out of range");
    }
    if (static_cast<int>(inj.pos_by_seq.size()) != batch.B) {
        fail(ErrorKind::Shape, "injection position list does not match batch size");
    }
    if (static_cast<int64_t>(inj.value.size()) != cfg.d_model) {
        fail(ErrorKind::Shape, "injected vector length " + std::to_string(inj.value.size()) +
                                   " != d_model " + std::to_string(cfg.d_model));
    }
    for (int b = 0; b < batch.B; b++) {
        int pos = inj.pos_by_seq[b];
        if (pos >= batch.len[b]) {
            fail(ErrorKind::Probe, "injection position " + std::to_string(pos) +
                                       " beyond sequence length " + std::to_string(batch.len[b]));
        }
    }
}

} // namespace

void forward(const Checkpoint& ckpt, const TokenBatch& batch, ForwardTrace& trace,
             const Injection* injection) {
    const ModelConfig& cfg = ckpt.config;
    const int B = batch.B;
    const int T = batch.T;
    if (T > cfg.max_seq_len) {
        fail(ErrorKind::SequenceLength, "sequence length " + std::to_string(T) +
                                            " exceeds max_seq_len " +
                                            std::to_string(cfg.max_seq_len));
    }
    if (injection) check_injection(cfg, *injection, batch);
    ensure_trace(trace, cfg, B, T);
    trace.len = batch.len;
    if (B == 0 || T == 0) return;

    const int64_t R = static_cast<int64_t>(B) * T;
    const int d = cfg.d_model;

    // token + position embeddings
    for (int64_t r = 0; r < R; r++) {
        int id = batch.ids[static_cast<size_t>(r)];
        if (id < 0 || id >= cfg.vocab_size) {
            fail(ErrorKind::Shape, "token id " + std::to_string(id) + " out of vocab range");
        }
        int t = static_cast<int>(r % T);
        const double* te = ckpt.params.wte.ptr() + static_cast<int64_t>(id) * d;
        const double* pe = ckpt.params.wpe.ptr() + static_cast<int64_t>(t) * d;
        double* e = trace.emb.ptr() + r * d;
        for (int i = 0; i < d; i++) e[i] = te[i] + pe[i];
    }

    const Array* x = &trace.emb;
    for (int l = 0; l < cfg.n_layers; l++) {
        auto& A = trace.layers[static_cast<size_t>(l)];
        const LayerParams& P = ckpt.params.layers[static_cast<size_t>(l)];
        kernels::layernorm_forward(A.ln1.ptr(), A.ln1_mean.ptr(), A.ln1_rstd.ptr(), x->ptr(),
                                   P.ln1_g.ptr(), P.ln1_b.ptr(), static_cast<int>(R), d);
        kernels::matmul_nt(A.q.ptr(), A.ln1.ptr(), P.wq.ptr(), static_cast<int>(R), d, d);
        kernels::matmul_nt(A.k.ptr(), A.ln1.ptr(), P.wk.ptr(), static_cast<int>(R), d, d);
        kernels::matmul_nt(A.v.ptr(), A.ln1.ptr(), P.wv.ptr(), static_cast<int>(R), d, d);
        kernels::attention_forward(A.att.ptr(), A.att_probs.ptr(), A.q.ptr(), A.k.ptr(),
                                   A.v.ptr(), B, T, batch.len.data(), cfg.n_heads,
                                   cfg.head_dim());
        kernels::matmul_nt(A.att_proj.ptr(), A.att.ptr(), P.wo.ptr(), static_cast<int>(R), d, d);
        add_rows(A.res1.ptr(), x->ptr(), A.att_proj.ptr(), R * d);
        kernels::layernorm_forward(A.ln2.ptr(), A.ln2_mean.ptr(), A.ln2_rstd.ptr(), A.res1.ptr(),
                                   P.ln2_g.ptr(), P.ln2_b.ptr(), static_cast<int>(R), d);
        kernels::matmul_nt(A.mlp_pre.ptr(), A.ln2.ptr(), P.w_in.ptr(), static_cast<int>(R), d,
                           cfg.d_mlp);
        kernels::gelu_forward(A.mlp_act.ptr(), A.mlp_pre.ptr(), R * cfg.d_mlp);
        kernels::matmul_nt(A.mlp_out.ptr(), A.mlp_act.ptr(), P.w_out.ptr(), static_cast<int>(R),
                           cfg.d_mlp, d);
        if (injection && injection->layer == l) {
            for (int b = 0; b < B; b++) {
                int pos = injection->pos_by_seq[b];
                if (pos < 0) continue;
                double* row = A.mlp_out.ptr() + (static_cast<int64_t>(b) * T + pos) * d;
                std::copy(injection->value.begin(), injection->value.end(), row);
            }
        }
        add_rows(A.res2.ptr(), A.res1.ptr(), A.mlp_out.ptr(), R * d);
        x = &A.res2;
    }
    kernels::layernorm_forward(trace.lnf.ptr(), trace.lnf_mean.ptr(), trace.lnf_rstd.ptr(),
                               x->ptr(), ckpt.params.lnf_g.ptr(), ckpt.params.lnf_b.ptr(),
                               static_cast<int>(R), d);
    kernels::matmul_nt(trace.logits.ptr(), trace.lnf.ptr(), ckpt.params.w_lm.ptr(),
                       static_cast<int>(R), d, cfg.vocab_size);
    kernels::log_softmax_rows(trace.logprobs.ptr(), trace.logits.ptr(), static_cast<int>(R),
                              cfg.vocab_size);
}

Array forward_logprobs(const Checkpoint& ckpt, std::span<const int> ids,
                       const Injection* injection) {
    TokenBatch batch = TokenBatch::single(ids);
    ForwardTrace trace;
    forward(ckpt, batch, trace, injection);
    Array out = Array::zeros({batch.T, ckpt.config.vocab_size});
    out.data = trace.logprobs.data;
    return out;
}

// ---------------------------------------------------------------------------
// loss and backward

namespace {

void check_term(const ForwardTrace& trace, int b, int pos, int vocab, int target) {
    if (b < 0 || b >= trace.B) fail(ErrorKind::Shape, "loss term sequence index out of range");
    if (pos < 1 || pos >= trace.len[static_cast<size_t>(b)]) {
        fail(ErrorKind::Shape, "loss term position " + std::to_string(pos) +
                                   " outside [1, len) for sequence " + std::to_string(b));
    }
    if (target < 0 || target >= vocab) fail(ErrorKind::Shape, "loss target id out of range");
}

} // namespace

double loss_value(const ForwardTrace& trace, const LossSpec& loss) {
    const int V = static_cast<int>(trace.logprobs.cols());
    double total = 0.0;
    for (const auto& t : loss.terms) {
        check_term(trace, t.b, t.pos, V, t.target);
        int64_t row = static_cast<int64_t>(t.b) * trace.T + (t.pos - 1);
        total -= t.weight * trace.logprobs.ptr()[row * V + t.target];
    }
    for (const auto& s : loss.soft_terms) {
        if (static_cast<int>(s.target_probs.size()) != V) {
            fail(ErrorKind::Shape, "soft loss distribution width mismatch");
        }
        int64_t row = static_cast<int64_t>(s.b) * trace.T + s.pos;
        const double* lp = trace.logprobs.ptr() + row * V;
        double ce = 0.0;
        for (int j = 0; j < V; j++) ce -= s.target_probs[static_cast<size_t>(j)] * lp[j];
        total += s.weight * ce;
    }
    return total;
}

void backward(const Checkpoint& ckpt, const TokenBatch& batch, const ForwardTrace& trace,
              const LossSpec& loss, Params* param_grads, const Injection* injection,
              std::vector<double>* injection_grad) {
    const ModelConfig& cfg = ckpt.config;
    const int B = trace.B;
    const int T = trace.T;
    const int d = cfg.d_model;
    const int V = cfg.vocab_size;
    const int64_t R = static_cast<int64_t>(B) * T;
    if (R == 0) return;
    if (injection_grad) {
        if (!injection) fail(ErrorKind::Probe, "injection gradient requested without injection");
        injection_grad->assign(static_cast<size_t>(d), 0.0);
    }

    // dlogits = sum over loss terms of weight * (softmax - target)
    Array dlogits = Array::zeros({R, V});
    for (const auto& t : loss.terms) {
        check_term(trace, t.b, t.pos, V, t.target);
        int64_t row = static_cast<int64_t>(t.b) * trace.T + (t.pos - 1);
        const double* lp = trace.logprobs.ptr() + row * V;
        double* dl = dlogits.ptr() + row * V;
        for (int j = 0; j < V; j++) dl[j] += t.weight * std::exp(lp[j]);
        dl[t.target] -= t.weight;
    }
    for (const auto& s : loss.soft_terms) {
        int64_t row = static_cast<int64_t>(s.b) * trace.T + s.pos;
        const double* lp = trace.logprobs.ptr() + row * V;
        double* dl = dlogits.ptr() + row * V;
        for (int j = 0; j < V; j++) {
            dl[j] += s.weight * (std::exp(lp[j]) - s.target_probs[static_cast<size_t>(j)]);
        }
    }

    Array dlnf = Array::zeros({R, d});
    kernels::matmul_nn_acc(dlnf.ptr(), dlogits.ptr(), ckpt.params.w_lm.ptr(),
                           static_cast<int>(R), d, V);
    if (param_grads) {
        kernels::matmul_tn_acc(param_grads->w_lm.ptr(), dlogits.ptr(), trace.lnf.ptr(),
                               static_cast<int>(R), d, V);
    }

    // scratch gain/bias sinks when parameter gradients are not requested
    Array g_sink = Array::zeros({d});
    Array b_sink = Array::zeros({d});
    auto gain_sink = [&](Array* real) { return param_grads ? real->ptr() : g_sink.ptr(); };
    auto bias_sink = [&](Array* real) { return param_grads ? real->ptr() : b_sink.ptr(); };

    const Array& last_x =
        cfg.n_layers == 0 ? trace.emb : trace.layers[static_cast<size_t>(cfg.n_layers - 1)].res2;
    Array dx = Array::zeros({R, d});
    kernels::layernorm_backward(dx.ptr(), gain_sink(param_grads ? &param_grads->lnf_g : nullptr),
                                bias_sink(param_grads ? &param_grads->lnf_b : nullptr),
                                dlnf.ptr(), last_x.ptr(), trace.lnf_mean.ptr(),
                                trace.lnf_rstd.ptr(), ckpt.params.lnf_g.ptr(),
                                static_cast<int>(R), d);

    Array dmlp_out = Array::zeros({R, d});
    Array dmlp_act = Array::zeros({R, cfg.d_mlp});
    Array dmlp_pre = Array::zeros({R, cfg.d_mlp});
    Array dln2 = Array::zeros({R, d});
    Array dres1 = Array::zeros({R, d});
    Array datt = Array::zeros({R, d});
    Array dq = Array::zeros({R, d});
    Array dk = Array::zeros({R, d});
    Array dv = Array::zeros({R, d});
    Array dln1 = Array::zeros({R, d});
    Array dscores = Array::zeros({static_cast<int64_t>(B) * cfg.n_heads * T * T});

    for (int l = cfg.n_layers - 1; l >= 0; l--) {
        const auto& A = trace.layers[static_cast<size_t>(l)];
        const LayerParams& P = ckpt.params.layers[static_cast<size_t>(l)];
        LayerParams* G = param_grads ? &param_grads->layers[static_cast<size_t>(l)] : nullptr;
        const Array& x_in = (l == 0) ? trace.emb : trace.layers[static_cast<size_t>(l - 1)].res2;

        // res2 = res1 + mlp_out
        dmlp_out.data = dx.data;
        bool injected_here = injection && injection->layer == l;
        if (injected_here) {
            // the injected vector replaced the MLP output: route its gradient
            // to the caller and cut the path into the MLP stack
            for (int b = 0; b < B; b++) {
                int pos = injection->pos_by_seq[b];
                if (pos < 0) continue;
                double* row = dmlp_out.ptr() + (static_cast<int64_t>(b) * T + pos) * d;
                if (injection_grad) {
                    for (int i = 0; i < d; i++) (*injection_grad)[static_cast<size_t>(i)] += row[i];
                }
                std::fill(row, row + d, 0.0);
            }
            // nothing upstream of the injection layer is needed when only the
            // injection gradient was requested
            if (!param_grads && injection_grad) {
                bool any_uninjected = false;
                for (int pos : injection->pos_by_seq) {
                    if (pos < 0) any_uninjected = true;
                }
                if (!any_uninjected) return;
            }
        }

        dmlp_act.zero();
        kernels::matmul_nn_acc(dmlp_act.ptr(), dmlp_out.ptr(), P.w_out.ptr(),
                               static_cast<int>(R), cfg.d_mlp, d);
        if (G) {
            kernels::matmul_tn_acc(G->w_out.ptr(), dmlp_out.ptr(), A.mlp_act.ptr(),
                                   static_cast<int>(R), cfg.d_mlp, d);
        }
        dmlp_pre.zero();
        kernels::gelu_backward(dmlp_pre.ptr(), A.mlp_pre.ptr(), dmlp_act.ptr(), R * cfg.d_mlp);
        dln2.zero();
        kernels::matmul_nn_acc(dln2.ptr(), dmlp_pre.ptr(), P.w_in.ptr(), static_cast<int>(R), d,
                               cfg.d_mlp);
        if (G) {
            kernels::matmul_tn_acc(G->w_in.ptr(), dmlp_pre.ptr(), A.ln2.ptr(),
                                   static_cast<int>(R), d, cfg.d_mlp);
        }
        dres1.data = dx.data; // residual branch of res2
        kernels::layernorm_backward(dres1.ptr(), gain_sink(G ? &G->ln2_g : nullptr),
                                    bias_sink(G ? &G->ln2_b : nullptr), dln2.ptr(), A.res1.ptr(),
                                    A.ln2_mean.ptr(), A.ln2_rstd.ptr(), P.ln2_g.ptr(),
                                    static_cast<int>(R), d);

        // res1 = x_in + att_proj; datt_proj == dres1
        datt.zero();
        kernels::matmul_nn_acc(datt.ptr(), dres1.ptr(), P.wo.ptr(), static_cast<int>(R), d, d);
        if (G) {
            kernels::matmul_tn_acc(G->wo.ptr(), dres1.ptr(), A.att.ptr(), static_cast<int>(R), d,
                                   d);
        }
        dq.zero();
        dk.zero();
        dv.zero();
        kernels::attention_backward(dq.ptr(), dk.ptr(), dv.ptr(), dscores.ptr(), datt.ptr(),
                                    A.att_probs.ptr(), A.q.ptr(), A.k.ptr(), A.v.ptr(), B, T,
                                    trace.len.data(), cfg.n_heads, cfg.head_dim());
        dln1.zero();
        kernels::matmul_nn_acc(dln1.ptr(), dq.ptr(), P.wq.ptr(), static_cast<int>(R), d, d);
        kernels::matmul_nn_acc(dln1.ptr(), dk.ptr(), P.wk.ptr(), static_cast<int>(R), d, d);
        kernels::matmul_nn_acc(dln1.ptr(), dv.ptr(), P.wv.ptr(), static_cast<int>(R), d, d);
        if (G) {
            kernels::matmul_tn_acc(G->wq.ptr(), dq.ptr(), A.ln1.ptr(), static_cast<int>(R), d, d);
            kernels::matmul_tn_acc(G->wk.ptr(), dk.ptr(), A.ln1.ptr(), static_cast<int>(R), d, d);
            kernels::matmul_tn_acc(G->wv.ptr(), dv.ptr(), A.ln1.ptr(), static_cast<int>(R), d, d);
        }
        // dx becomes the gradient w.r.t. this layer's input: residual branch
        // (already in dres1) plus the ln1 path
        dx.data = dres1.data;
        kernels::layernorm_backward(dx.ptr(), gain_sink(G ? &G->ln1_g : nullptr),
                                    bias_sink(G ? &G->ln1_b : nullptr), dln1.ptr(), x_in.ptr(),
                                    A.ln1_mean.ptr(), A.ln1_rstd.ptr(), P.ln1_g.ptr(),
                                    static_cast<int>(R), d);
    }

    if (param_grads) {
        // embedding gradients; serial because token rows collide
        for (int64_t r = 0; r < R; r++) {
            int id = batch.ids[static_cast<size_t>(r)];
            int t = static_cast<int>(r % T);
            const double* src = dx.ptr() + r * d;
            double* gte = param_grads->wte.ptr() + static_cast<int64_t>(id) * d;
            double* gpe = param_grads->wpe.ptr() + static_cast<int64_t>(t) * d;
            for (int i = 0; i < d; i++) {
                gte[i] += src[i];
                gpe[i] += src[i];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// probes and single-sequence helpers

void validate_probe(const ModelConfig& cfg, const ActivationProbe& probe, int seq_len) {
    if (probe.layer < 0 || probe.layer >= cfg.n_layers) {
        fail(ErrorKind::Probe, "probe layer " + std::to_string(probe.layer) + " out of range");
    }
    if (probe.position < 0 || probe.position >= seq_len) {
        fail(ErrorKind::Probe, "probe position " + std::to_string(probe.position) +
                                   " outside sequence of length " + std::to_string(seq_len));
    }
}

std::vector<double> read_activation(const Checkpoint& ckpt, std::span<const int> ids,
                                    const ActivationProbe& probe) {
    validate_probe(ckpt.config, probe, static_cast<int>(ids.size()));
    TokenBatch batch = TokenBatch::single(ids);
    ForwardTrace trace;
    forward(ckpt, batch, trace);
    const auto& A = trace.layers[static_cast<size_t>(probe.layer)];
    const Array* src = nullptr;
    int width = ckpt.config.d_model;
    switch (probe.site) {
        case ProbeSite::MlpIntermediate:
            src = &A.mlp_act;
            width = ckpt.config.d_mlp;
            break;
        case ProbeSite::MlpOutput: src = &A.mlp_out; break;
        case ProbeSite::ResidualStream: src = &A.res2; break;
    }
    const double* row = src->ptr() + static_cast<int64_t>(probe.position) * width;
    return std::vector<double>(row, row + width);
}

std::vector<double> grad_wrt_injection(const Checkpoint& ckpt, std::span<const int> ids,
                                       const ActivationProbe& probe, std::span<const double> v,
                                       std::span<const std::pair<int, int>> targets) {
    validate_probe(ckpt.config, probe, static_cast<int>(ids.size()));
    if (probe.site != ProbeSite::MlpOutput) {
        fail(ErrorKind::Probe, "injection gradients are defined at the MLP output site");
    }
    for (const auto& [pos, id] : targets) {
        (void)id;
        if (pos <= probe.position) {
            fail(ErrorKind::Causality, "target position " + std::to_string(pos) +
                                           " is not downstream of probe position " +
                                           std::to_string(probe.position));
        }
    }
    TokenBatch batch = TokenBatch::single(ids);
    Injection inj{probe.layer, {probe.position}, v};
    ForwardTrace trace;
    forward(ckpt, batch, trace, &inj);
    LossSpec loss;
    for (const auto& [pos, id] : targets) loss.terms.push_back({0, pos, id, 1.0});
    std::vector<double> dv;
    backward(ckpt, batch, trace, loss, nullptr, &inj, &dv);
    return dv;
}

std::vector<int> greedy_continue(const Checkpoint& ckpt, std::span<const int> prompt, int steps) {
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    ForwardTrace trace;
    for (int s = 0; s < steps; s++) {
        TokenBatch batch = TokenBatch::single(seq);
        forward(ckpt, batch, trace);
        const int V = ckpt.config.vocab_size;
        const double* lp = trace.logprobs.ptr() + static_cast<int64_t>(batch.T - 1) * V;
        int best = 0;
        for (int j = 1; j < V; j++) {
            if (lp[j] > lp[best]) best = j;
        }
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

double sequence_logprob(const Checkpoint& ckpt, std::span<const int> prompt,
                        std::span<const int> continuation) {
    std::vector<int> seq(prompt.begin(), prompt.end());
    seq.insert(seq.end(), continuation.begin(), continuation.end());
    Array lp = forward_logprobs(ckpt, seq);
    const int V = ckpt.config.vocab_size;
    double total = 0.0;
    for (size_t j = 0; j < continuation.size(); j++) {
        int64_t row = static_cast<int64_t>(prompt.size()) + static_cast<int64_t>(j) - 1;
        total += lp.ptr()[row * V + continuation[j]];
    }
    return total;
}

double corpus_loss(const Checkpoint& ckpt, std::span<const std::string> sentences) {
    double total = 0.0;
    int64_t count = 0;
    ForwardTrace trace;
    const int chunk = 32;
    std::vector<std::vector<int>> seqs;
    for (size_t start = 0; start < sentences.size(); start += chunk) {
        seqs.clear();
        size_t end = std::min(sentences.size(), start + chunk);
        for (size_t i = start; i < end; i++) {
            std::vector<int> ids = ckpt.tokenizer.encode(sentences[i]);
            std::vector<int> seq;
            seq.reserve(ids.size() + 2);
            seq.push_back(ckpt.tokenizer.bos_id());
            seq.insert(seq.end(), ids.begin(), ids.end());
            seq.push_back(ckpt.tokenizer.eos_id());
            seqs.push_back(std::move(seq));
        }
        TokenBatch batch = TokenBatch::from_sequences(seqs, ckpt.tokenizer.pad_id());
        forward(ckpt, batch, trace);
        const int V = ckpt.config.vocab_size;
        for (int b = 0; b < batch.B; b++) {
            for (int pos = 1; pos < batch.len[b]; pos++) {
                int64_t row = static_cast<int64_t>(b) * batch.T + (pos - 1);
                total -= trace.logprobs.ptr()[row * V + batch.at(b, pos)];
                count++;
            }
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

} // namespace kvedit
