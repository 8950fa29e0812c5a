// SPDX-License-Identifier: Apache-2.0
#include "evomoe/model.hpp"

#include "evomoe/errors.hpp"
#include "evomoe/ops.hpp"
#include "evomoe/rng.hpp"

#include <cmath>

namespace evomoe {

namespace {

Tensor normal_init(std::uint64_t seed, const std::string& name, Shape shape, double stddev = kInitStddev)
{
    Rng rng(seed, fnv1a(name));
    std::vector<double> v(shape_size(shape));
    for (double& x : v)
        x = rng.normal(0.0, stddev);
    return Tensor::from(std::move(shape), std::move(v));
}

Ffn init_ffn(const ModelConfig& c, std::uint64_t seed, const std::string& prefix)
{
    const std::size_t h = c.ffn_hidden, d = c.d_model;
    return {normal_init(seed, prefix + ".w_in", {d, 2 * h}), Tensor::zeros({2 * h}),
            normal_init(seed, prefix + ".w_out", {h, d}), Tensor::zeros({d})};
}

// Fan-in scaled (hyperfan-in): unit-variance hidden units for a unit-variance
// token, and generated weights with the variance of a fan-in init of the layer
// they parameterize. Theta_down has fan-in C, Theta_up fan-in r/2.
Hypernetwork init_hypernet(const ModelConfig& c, std::uint64_t seed, const std::string& prefix,
                           Modality m)
{
    const std::size_t d = c.d_model, hh = c.hypernet_hidden, half = c.dtr_rank * d;
    const auto w1 = normal_init(seed, prefix + ".w1", {d, hh}, 1.0 / std::sqrt(static_cast<double>(d)));
    auto w2 = normal_init(seed, prefix + ".w2", {hh, 2 * half}, 1.0);
    const double s_down = 1.0 / std::sqrt(static_cast<double>(hh * d));
    const double s_up = 1.0 / std::sqrt(static_cast<double>(hh * (c.dtr_rank / 2)));
    auto v = w2.data();
    for (std::size_t i = 0; i < hh; ++i)
        for (std::size_t j = 0; j < 2 * half; ++j)
            v[i * 2 * half + j] *= j < half ? s_down : s_up;
    return {w1, Tensor::zeros({hh}), w2, Tensor::zeros({2 * half}), m};
}

std::string block_prefix(std::size_t l) { return "blocks." + std::to_string(l); }

void add_ffn(std::vector<ParamRef>& out, const Ffn& f, const std::string& prefix, ParamKind kind,
             int layer, int expert)
{
    out.push_back({prefix + ".w_in", f.w_in, kind, layer, expert});
    out.push_back({prefix + ".b_in", f.b_in, kind, layer, expert});
    out.push_back({prefix + ".w_out", f.w_out, kind, layer, expert});
    out.push_back({prefix + ".b_out", f.b_out, kind, layer, expert});
}

void add_hypernet(std::vector<ParamRef>& out, const Hypernetwork& h, const std::string& prefix, int layer)
{
    out.push_back({prefix + ".w1", h.w1, ParamKind::router, layer, -1});
    out.push_back({prefix + ".b1", h.b1, ParamKind::router, layer, -1});
    out.push_back({prefix + ".w2", h.w2, ParamKind::router, layer, -1});
    out.push_back({prefix + ".b2", h.b2, ParamKind::router, layer, -1});
}

Hypernetwork clone_hypernet(const Hypernetwork& h)
{
    return {h.w1.clone(), h.b1.clone(), h.w2.clone(), h.b2.clone(), h.modality};
}

RoutingOutcome route(const Tensor& x, const ExpertBank& bank, const TokenBatch& batch,
                     const ModelConfig& c, DtrCounters* counters)
{
    if (bank.dtr)
        return dtr_route(x, batch.modality, *bank.dtr, c.top_k, counters);
    if (bank.linear)
        return linear_route(x, bank.linear->w, c.top_k, batch.modality);
    throw ContractError("expert bank has no router");
}

RoutingOutcome force_expert0(RoutingOutcome r)
{
    const std::size_t n = r.tokens(), e = r.experts();
    r.k = 1;
    r.selected.assign(n, 0);
    r.gates = Tensor::full({n, 1}, 1.0);
    std::vector<double> f(e, 0.0);
    f[0] = 1.0;
    r.f = Tensor::from({e}, std::move(f));
    return r;
}

// z + Σ gate · expert(x) (+ shared(x)), with x = LN(z) already computed.
Tensor moe_combine(const Tensor& z, const Tensor& x, const ExpertBank& bank, const RoutingOutcome& r)
{
    const std::size_t n = x.dim(0), k = r.k;
    const std::size_t e_count = bank.experts.size();
    if (r.tokens() != n || r.selected.size() != n * k)
        throw DimensionError("routing covers " + std::to_string(r.tokens()) + " tokens, layer has " +
                             std::to_string(n));
    const auto flat_gates = reshape(r.gates, {n * k, 1});
    Tensor acc = Tensor::zeros({n, x.dim(1)});
    std::vector<std::vector<std::size_t>> rows(e_count), slots(e_count);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < k; ++j) {
            const int e = r.selected[t * k + j];
            if (e < 0 || static_cast<std::size_t>(e) >= e_count)
                throw ContractError("routing selected expert " + std::to_string(e) + " but the bank holds " +
                                    std::to_string(e_count));
            rows[static_cast<std::size_t>(e)].push_back(t);
            slots[static_cast<std::size_t>(e)].push_back(t * k + j);
        }
    for (std::size_t e = 0; e < e_count; ++e) {
        if (rows[e].empty())
            continue;
        const auto ye = ffn_expert_forward(index_select_rows(x, rows[e]), bank.experts[e]);
        const auto ge = reshape(index_select_rows(flat_gates, slots[e]), {rows[e].size()});
        acc = index_add_rows(acc, scale_rows(ye, ge), rows[e]);
    }
    if (bank.shared)
        acc = add(acc, ffn_expert_forward(x, *bank.shared));
    return add(z, acc);
}

}  // namespace

bool Model::is_moe() const
{
    for (const auto& b : blocks)
        if (b.moe)
            return true;
    return false;
}

std::vector<std::size_t> Model::moe_layer_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < blocks.size(); ++l)
        if (blocks[l].moe)
            out.push_back(l);
    return out;
}

std::vector<ParamRef> parameters(const Model& m)
{
    std::vector<ParamRef> out;
    out.push_back({"tok_emb", m.tok_emb});
    out.push_back({"pos_emb", m.pos_emb});
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const auto& b = m.blocks[l];
        const auto p = block_prefix(l);
        const int li = static_cast<int>(l);
        out.push_back({p + ".ln1.g", b.ln1_g, ParamKind::backbone, li});
        out.push_back({p + ".ln1.b", b.ln1_b, ParamKind::backbone, li});
        out.push_back({p + ".attn.w_qkv", b.w_qkv, ParamKind::backbone, li});
        out.push_back({p + ".attn.b_qkv", b.b_qkv, ParamKind::backbone, li});
        out.push_back({p + ".attn.w_o", b.w_o, ParamKind::backbone, li});
        out.push_back({p + ".attn.b_o", b.b_o, ParamKind::backbone, li});
        out.push_back({p + ".ln2.g", b.ln2_g, ParamKind::backbone, li});
        out.push_back({p + ".ln2.b", b.ln2_b, ParamKind::backbone, li});
        if (b.ffn)
            add_ffn(out, *b.ffn, p + ".ffn", ParamKind::dense_ffn, li, -1);
        if (b.moe) {
            const auto& bank = *b.moe;
            for (std::size_t e = 0; e < bank.experts.size(); ++e)
                add_ffn(out, bank.experts[e], p + ".experts." + std::to_string(e), ParamKind::expert, li,
                        static_cast<int>(e));
            if (bank.shared)
                add_ffn(out, *bank.shared, p + ".shared", ParamKind::shared_expert, li, -1);
            if (bank.linear)
                out.push_back({p + ".router.linear.w", bank.linear->w, ParamKind::router, li});
            if (bank.dtr) {
                add_hypernet(out, bank.dtr->hv, p + ".router.dtr.hv", li);
                add_hypernet(out, bank.dtr->ht, p + ".router.dtr.ht", li);
                out.push_back({p + ".router.dtr.phi.w", bank.dtr->phi_w, ParamKind::router, li});
                out.push_back({p + ".router.dtr.phi.b", bank.dtr->phi_b, ParamKind::router, li});
            }
        }
    }
    out.push_back({"lnf.g", m.lnf_g});
    out.push_back({"lnf.b", m.lnf_b});
    return out;
}

Model init_dense_model(const ModelConfig& c, std::uint64_t seed)
{
    c.validate();
    const std::size_t d = c.d_model;
    Model m;
    m.config = c;
    m.tok_emb = normal_init(seed, "tok_emb", {c.vocab_size, d});
    m.pos_emb = normal_init(seed, "pos_emb", {c.max_seq_len, d});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto p = block_prefix(l);
        Block b;
        b.ln1_g = Tensor::full({d}, 1.0);
        b.ln1_b = Tensor::zeros({d});
        b.w_qkv = normal_init(seed, p + ".attn.w_qkv", {d, 3 * d});
        b.b_qkv = Tensor::zeros({3 * d});
        b.w_o = normal_init(seed, p + ".attn.w_o", {d, d});
        b.b_o = Tensor::zeros({d});
        b.ln2_g = Tensor::full({d}, 1.0);
        b.ln2_b = Tensor::zeros({d});
        b.ffn = init_ffn(c, seed, p + ".ffn");
        m.blocks.push_back(std::move(b));
    }
    m.lnf_g = Tensor::full({d}, 1.0);
    m.lnf_b = Tensor::zeros({d});
    return m;
}

void init_router(ExpertBank& bank, const ModelConfig& c, std::uint64_t seed, std::size_t layer)
{
    const auto p = block_prefix(layer) + ".router";
    bank.linear.reset();
    bank.dtr.reset();
    if (c.router_kind == RouterKind::linear) {
        bank.linear = LinearRouter{normal_init(seed, p + ".linear.w", {c.d_model, c.n_experts})};
        return;
    }
    DtrRouter r;
    r.hv = init_hypernet(c, seed, p + ".dtr.hv", Modality::visual);
    r.ht = init_hypernet(c, seed, p + ".dtr.ht", Modality::text);
    r.phi_w = normal_init(seed, p + ".dtr.phi.w", {c.d_model, c.n_experts});
    r.phi_b = Tensor::zeros({c.n_experts});
    r.rank = c.dtr_rank;
    bank.dtr = std::move(r);
}

Ffn clone_ffn(const Ffn& f) { return {f.w_in.clone(), f.b_in.clone(), f.w_out.clone(), f.b_out.clone()}; }

Model clone_model(const Model& m)
{
    Model out;
    out.config = m.config;
    out.tok_emb = m.tok_emb.clone();
    out.pos_emb = m.pos_emb.clone();
    for (const auto& b : m.blocks) {
        Block nb{b.ln1_g.clone(), b.ln1_b.clone(), b.w_qkv.clone(), b.b_qkv.clone(),
                 b.w_o.clone(),   b.b_o.clone(),   b.ln2_g.clone(), b.ln2_b.clone(),
                 std::nullopt,    std::nullopt};
        if (b.ffn)
            nb.ffn = clone_ffn(*b.ffn);
        if (b.moe) {
            ExpertBank bank;
            for (const auto& e : b.moe->experts)
                bank.experts.push_back(clone_ffn(e));
            bank.trainable = b.moe->trainable;
            if (b.moe->shared)
                bank.shared = clone_ffn(*b.moe->shared);
            if (b.moe->linear)
                bank.linear = LinearRouter{b.moe->linear->w.clone()};
            if (b.moe->dtr) {
                const auto& r = *b.moe->dtr;
                bank.dtr = DtrRouter{clone_hypernet(r.hv), clone_hypernet(r.ht), r.phi_w.clone(),
                                     r.phi_b.clone(), r.rank};
            }
            nb.moe = std::move(bank);
        }
        out.blocks.push_back(std::move(nb));
    }
    out.lnf_g = m.lnf_g.clone();
    out.lnf_b = m.lnf_b.clone();
    return out;
}

Tensor ffn_expert_forward(const Tensor& x, const Ffn& f)
{
    return add_bias(matmul(swiglu(add_bias(matmul(x, f.w_in), f.b_in)), f.w_out), f.b_out);
}

Tensor attention_block(const Tensor& z, const Block& b, std::size_t batch, std::size_t seq,
                       std::size_t heads)
{
    const auto h = layer_norm(z, b.ln1_g, b.ln1_b);
    const auto qkv = add_bias(matmul(h, b.w_qkv), b.b_qkv);
    const auto a = causal_self_attention(qkv, batch, seq, heads);
    return add(z, add_bias(matmul(a, b.w_o), b.b_o));
}

Tensor moe_layer_forward(const Tensor& z, const Block& block, const RoutingOutcome& routing)
{
    if (!block.moe)
        throw ContractError("moe_layer_forward called on a dense block");
    return moe_combine(z, layer_norm(z, block.ln2_g, block.ln2_b), *block.moe, routing);
}

ForwardResult model_forward(const Model& m, const TokenBatch& batch, const ForwardOptions& opt)
{
    const auto& c = m.config;
    if (batch.seq == 0 || batch.batch == 0)
        throw ContractError("empty token batch");
    if (batch.seq > c.max_seq_len)
        throw ContractError("sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                            std::to_string(c.max_seq_len));
    if (batch.tokens.size() != batch.size() || batch.modality.size() != batch.size())
        throw DimensionError("token batch arrays do not match " + std::to_string(batch.batch) + "x" +
                             std::to_string(batch.seq));
    std::vector<int> positions(batch.size());
    for (std::size_t i = 0; i < positions.size(); ++i)
        positions[i] = static_cast<int>(i % batch.seq);

    ForwardResult result;
    Tensor h = add(embedding(m.tok_emb, batch.tokens), embedding(m.pos_emb, positions));
    std::size_t moe_index = 0;
    for (const auto& b : m.blocks) {
        const auto z = attention_block(h, b, batch.batch, batch.seq, c.n_heads);
        const auto x = layer_norm(z, b.ln2_g, b.ln2_b);
        if (b.moe) {
            auto r = route(x, *b.moe, batch, c, opt.counters);
            if (opt.force_expert0)
                r = force_expert0(std::move(r));
            if (opt.permutations) {
                if (moe_index >= opt.permutations->size())
                    throw ContractError("no expert permutation supplied for MoE layer " +
                                        std::to_string(moe_index));
                r = shuffle_assignments(r, (*opt.permutations)[moe_index]);
            }
            h = moe_combine(z, x, *b.moe, r);
            result.outcomes.push_back(std::move(r));
            ++moe_index;
        } else {
            h = add(z, ffn_expert_forward(x, *b.ffn));
        }
    }
    const auto logits = matmul_nt(layer_norm(h, m.lnf_g, m.lnf_b), m.tok_emb);
    result.logits = reshape(logits, {batch.batch, batch.seq, c.vocab_size});
    return result;
}

}  // namespace evomoe
