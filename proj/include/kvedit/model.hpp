#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kvedit/array.hpp"
#include "kvedit/tokenizer.hpp"

namespace kvedit {

// ---------------------------------------------------------------------------
// configuration and parameters

struct ModelConfig {
    int n_layers = 4;
    int d_model = 128;
    int d_mlp = 512;
    int n_heads = 4;
    int vocab_size = 0;
    int max_seq_len = 48;
    int64_t rng_seed = 0;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Array ln1_g, ln1_b;
    Array wq, wk, wv, wo; // all [d_model, d_model]
    Array ln2_g, ln2_b;
    Array w_in;  // [d_mlp, d_model]
    Array w_out; // [d_model, d_mlp]
};

struct Params {
    Array wte; // [vocab, d_model]
    Array wpe; // [max_seq_len, d_model]
    std::vector<LayerParams> layers;
    Array lnf_g, lnf_b;
    Array w_lm; // [vocab, d_model]

    static Params zeros(const ModelConfig& cfg);
    void zero_all();
};

// Visits every parameter array in the fixed serialization order.
void for_each_array(Params& p, const std::function<void(const std::string&, Array&)>& fn);
void for_each_array(const Params& p, const std::function<void(const std::string&, const Array&)>& fn);

struct TrainingMeta {
    int64_t steps = 0;
    double final_loss = 0.0;
    bool operator==(const TrainingMeta&) const = default;
};

struct Checkpoint {
    ModelConfig config;
    Tokenizer tokenizer;
    Params params;
    TrainingMeta meta;
};

// Gaussian init: weights N(0, 0.02), residual output projections scaled by
// 1/sqrt(2*n_layers), layernorm gain 1 / bias 0. Deterministic in rng_seed.
Params init_params(const ModelConfig& cfg);

bool params_equal(const Params& a, const Params& b);

// ---------------------------------------------------------------------------
// activation probes and injection

enum class ProbeSite { MlpIntermediate, MlpOutput, ResidualStream };

struct ActivationProbe {
    int layer = 0;
    int position = 0;
    ProbeSite site = ProbeSite::MlpOutput;
};

// Replaces the MLP output (pre residual add) at (layer, position of sequence b)
// with the given vector during the forward pass. pos_by_seq[b] < 0 disables
// injection for that sequence; the same vector is injected everywhere else.
struct Injection {
    int layer = 0;
    std::vector<int> pos_by_seq;
    std::span<const double> value;
};

// ---------------------------------------------------------------------------
// batched sequences

// Padded token batch. Sequences shorter than T are padded with pad_id; pads
// sit at the end, so causal attention never lets a real position read one.
struct TokenBatch {
    int B = 0;
    int T = 0;
    std::vector<int> ids; // B*T
    std::vector<int> len; // per sequence

    static TokenBatch from_sequences(std::span<const std::vector<int>> seqs, int pad_id);
    static TokenBatch single(std::span<const int> seq);
    int at(int b, int t) const { return ids[static_cast<size_t>(b) * T + t]; }
};

// ---------------------------------------------------------------------------
// forward / backward

// Activation buffers for one forward pass, kept for the backward pass.
struct ForwardTrace {
    int B = 0, T = 0;
    std::vector<int> len;
    Array emb; // [B*T, d]
    struct LayerActs {
        Array ln1, q, k, v, att, att_proj, res1;
        Array ln1_mean, ln1_rstd; // [B*T]
        Array att_probs;          // [B,H,T,T]
        Array ln2, mlp_pre, mlp_act, mlp_out, res2;
        Array ln2_mean, ln2_rstd;
    };
    std::vector<LayerActs> layers;
    Array lnf, lnf_mean, lnf_rstd;
    Array logits, logprobs; // [B*T, vocab]
};

// Next-token log-probabilities for every position; rows beyond a sequence's
// length are well-defined but meaningless. Throws SequenceLength if T exceeds
// max_seq_len and Shape on an injection width mismatch.
void forward(const Checkpoint& ckpt, const TokenBatch& batch, ForwardTrace& trace,
             const Injection* injection = nullptr);

// Single-sequence convenience returning the [T, vocab] log-prob matrix.
Array forward_logprobs(const Checkpoint& ckpt, std::span<const int> ids,
                       const Injection* injection = nullptr);

// One loss term: -weight * logprob[b, pos-1][target]. `pos` is the position of
// the target token itself, so it must be >= 1 (predicted from pos-1).
struct LossTerm {
    int b = 0;
    int pos = 0;
    int target = 0;
    double weight = 1.0;
};

// Soft-distribution term: weight * cross_entropy(target_probs, model at (b,pos)).
// `pos` here is the predicting position (logits row). Used by the optional KL
// regularizer of the value optimizer.
struct SoftLossTerm {
    int b = 0;
    int pos = 0;
    std::vector<double> target_probs;
    double weight = 1.0;
};

struct LossSpec {
    std::vector<LossTerm> terms;
    std::vector<SoftLossTerm> soft_terms;
};

double loss_value(const ForwardTrace& trace, const LossSpec& loss);

// Reverse-mode pass. Accumulates parameter gradients into *param_grads when
// given, and the gradient w.r.t. an injected MLP-output vector into
// *injection_grad (length d_model) when both it and `injection` are given.
void backward(const Checkpoint& ckpt, const TokenBatch& batch, const ForwardTrace& trace,
              const LossSpec& loss, Params* param_grads, const Injection* injection,
              std::vector<double>* injection_grad);

// ---------------------------------------------------------------------------
// public single-sequence operations

// Pure activation read at a probe. Vector length is d_mlp for the key site and
// d_model for the value/residual sites.
std::vector<double> read_activation(const Checkpoint& ckpt, std::span<const int> ids,
                                    const ActivationProbe& probe);

// Exact gradient of the summed target NLL w.r.t. the vector injected at the
// probe (site must be MlpOutput). Targets are (position-of-target-token, id)
// pairs; every position must be strictly downstream of the probe position.
std::vector<double> grad_wrt_injection(const Checkpoint& ckpt, std::span<const int> ids,
                                       const ActivationProbe& probe, std::span<const double> v,
                                       std::span<const std::pair<int, int>> targets);

// Greedy decoding: appends argmax tokens (ties to the lowest id).
std::vector<int> greedy_continue(const Checkpoint& ckpt, std::span<const int> prompt, int steps);

// Sum of log P(continuation | prompt) under teacher forcing.
double sequence_logprob(const Checkpoint& ckpt, std::span<const int> prompt,
                        std::span<const int> continuation);

// Mean next-token NLL of the tokenized corpus sentences (BOS/EOS framed).
double corpus_loss(const Checkpoint& ckpt, std::span<const std::string> sentences);

void validate_probe(const ModelConfig& cfg, const ActivationProbe& probe, int seq_len);

} // namespace kvedit
