#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lsic/autodiff.hpp"
#include "lsic/rng.hpp"
#include "lsic/tensor.hpp"

namespace lsic {

// A tokenized description with its dependency edges as (head, dependent)
// index pairs. Parsing happens upstream; captions without edges get a linear
// chain via chain_edges().
struct Caption {
    std::vector<std::string> tokens;
    std::vector<std::pair<int, int>> dependency_edges;

    void validate() const; // throws std::invalid_argument on bad captions
    static std::vector<std::pair<int, int>> chain_edges(int n_tokens);
};

// Token nodes with unit-weight symmetric adjacency and self-loops.
struct SemanticGraph {
    Tensor node_features; // (N_v, d)
    Tensor adjacency;     // (N_v, N_v), {0,1} off-diagonal, 1 on diagonal

    int num_nodes() const { return adjacency.rank() == 2 ? adjacency.dim(0) : 0; }

    // D^{-1/2} A D^{-1/2} with D the diagonal degree matrix of A
    Tensor normalized_adjacency() const;
};

// Single graph-convolution weight Theta: (d_in, d_out).
class GcnLayer {
public:
    GcnLayer() = default;
    GcnLayer(const std::string& name, int d_in, int d_out, Rng& rng);

    int d_in() const { return theta_.value.dim(0); }
    int d_out() const { return theta_.value.dim(1); }

    ad::Parameter& theta() { return theta_; }
    const ad::Parameter& theta() const { return theta_; }
    void collect(std::vector<ad::Parameter*>& out) { out.push_back(&theta_); }

private:
    ad::Parameter theta_;
};

constexpr double kGcnLeakySlope = 0.2;

// V' = leaky(D^{-1/2} A D^{-1/2} V Theta); set apply_nonlinearity=false for
// the raw linear propagation.
Tensor gcn_forward(const SemanticGraph& graph, const GcnLayer& layer,
                   bool apply_nonlinearity = true);

// Tape variant used inside the generator blocks. norm_adj is the
// precomputed normalized adjacency (constant w.r.t. training).
ad::Var gcn_forward(ad::Tape& t, const ad::Var& node_features, const Tensor& norm_adj,
                    GcnLayer& layer, bool apply_nonlinearity = true);

// Componentwise arithmetic mean of node feature rows.
Tensor mean_pool(const Tensor& nodes);

// Trainable token embedding table with hash-bucket rows for tokens outside
// the vocabulary. Optionally seeded from a pretrained text table
// (word<space>floats per line).
class Embedder {
public:
    Embedder() = default;
    Embedder(const std::vector<std::string>& vocab, int dim, int hash_buckets, Rng& rng);

    static Embedder from_pretrained_file(const std::string& path, int hash_buckets, Rng& rng);

    int dim() const { return table_.value.rank() == 2 ? table_.value.dim(1) : 0; }
    int row_of(const std::string& token) const;
    std::vector<int> rows(const std::vector<std::string>& tokens) const;

    // snapshot lookup (copies current table rows)
    Tensor embed_tokens(const std::vector<std::string>& tokens) const;

    // differentiable lookup
    ad::Var embed_tokens(ad::Tape& t, const std::vector<std::string>& tokens);

    ad::Parameter& table() { return table_; }
    void collect(std::vector<ad::Parameter*>& out) { out.push_back(&table_); }

private:
    std::unordered_map<std::string, int> vocab_;
    int hash_buckets_ = 0;
    ad::Parameter table_; // (|vocab| + hash_buckets, dim)
};

// build_graph: node i's feature is the embedding of tokens[i]; adjacency is
// the symmetrized dependency edges plus self-loops.
SemanticGraph build_graph(const Caption& caption, const Embedder& embedder);

// adjacency-only variant (no features); used where embeddings come from the
// differentiable lookup instead
Tensor build_adjacency(const Caption& caption);

} // namespace lsic
