#include "lsic/textgraph.hpp"

#include <Eigen/Core>

#include <cmath>
#include <fstream>
#include <sstream>

#include "lsic/nn.hpp"

namespace lsic {

void Caption::validate() const {
    if (tokens.empty()) throw std::invalid_argument("invalid caption: empty token list");
    int n = static_cast<int>(tokens.size());
    for (const auto& [h, d] : dependency_edges) {
        if (h < 0 || h >= n || d < 0 || d >= n)
            throw std::invalid_argument("invalid caption: edge index out of range");
        if (h == d) throw std::invalid_argument("invalid caption: self-edge");
    }
}

std::vector<std::pair<int, int>> Caption::chain_edges(int n_tokens) {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i + 1 < n_tokens; ++i) e.emplace_back(i, i + 1);
    return e;
}

Tensor SemanticGraph::normalized_adjacency() const {
    int n = num_nodes();
    Tensor out({n, n});
    std::vector<double> dinv(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double deg = 0.0;
        for (int j = 0; j < n; ++j) deg += adjacency.at2(i, j);
        dinv[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg); // deg >= 1 via self-loop
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.at2(i, j) = dinv[static_cast<std::size_t>(i)] * adjacency.at2(i, j) *
                            dinv[static_cast<std::size_t>(j)];
    return out;
}

GcnLayer::GcnLayer(const std::string& name, int d_in, int d_out, Rng& rng)
    : theta_(name + ".theta", nn::orthogonal_init({d_in, d_out}, rng)) {}

Tensor gcn_forward(const SemanticGraph& graph, const GcnLayer& layer, bool apply_nonlinearity) {
    const Tensor& v = graph.node_features;
    check_shape(v.rank() == 2 && v.dim(0) == graph.num_nodes(), "gcn_forward node features");
    check_shape(v.dim(1) == layer.d_in(), "gcn_forward: feature dim vs layer d_in");
    Tensor norm = graph.normalized_adjacency();
    int n = v.dim(0), din = v.dim(1), dout = layer.d_out();

    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> a(norm.data.data(), n, n);
    Eigen::Map<const RowMat> vm(v.data.data(), n, din);
    Eigen::Map<const RowMat> th(layer.theta().value.data.data(), din, dout);
    Tensor out({n, dout});
    Eigen::Map<RowMat> om(out.data.data(), n, dout);
    om = a * vm * th;
    if (apply_nonlinearity)
        for (double& x : out.data)
            if (x < 0.0) x *= kGcnLeakySlope;
    return out;
}

ad::Var gcn_forward(ad::Tape& t, const ad::Var& node_features, const Tensor& norm_adj,
                    GcnLayer& layer, bool apply_nonlinearity) {
    ad::Var a = t.constant(norm_adj);
    ad::Var h = ad::matmul(ad::matmul(a, node_features), t.param(layer.theta()));
    return apply_nonlinearity ? ad::leaky_relu(h, kGcnLeakySlope) : h;
}

Tensor mean_pool(const Tensor& nodes) {
    check_shape(nodes.rank() == 2, "mean_pool expects (n,d)");
    if (nodes.dim(0) == 0) throw std::invalid_argument("mean_pool: empty node set");
    int n = nodes.dim(0), d = nodes.dim(1);
    Tensor out({d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.data[static_cast<std::size_t>(j)] += nodes.at2(i, j);
    for (double& x : out.data) x /= n;
    return out;
}

Embedder::Embedder(const std::vector<std::string>& vocab, int dim, int hash_buckets, Rng& rng)
    : hash_buckets_(hash_buckets) {
    if (dim <= 0 || hash_buckets <= 0)
        throw std::invalid_argument("Embedder: dim and hash_buckets must be positive");
    int id = 0;
    for (const auto& tok : vocab)
        if (vocab_.emplace(tok, id).second) ++id;
    Tensor table({id + hash_buckets, dim});
    for (double& x : table.data) x = rng.normal(0.0, 0.1);
    table_ = ad::Parameter("embedder.table", std::move(table));
}

Embedder Embedder::from_pretrained_file(const std::string& path, int hash_buckets, Rng& rng) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("Embedder: cannot open " + path);
    std::vector<std::string> toks;
    std::vector<std::vector<double>> rows;
    std::string line;
    int dim = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string tok;
        is >> tok;
        std::vector<double> row;
        double x;
        while (is >> x) row.push_back(x);
        if (dim == -1) dim = static_cast<int>(row.size());
        if (static_cast<int>(row.size()) != dim || dim == 0)
            throw std::runtime_error("Embedder: inconsistent vector width in " + path);
        toks.push_back(tok);
        rows.push_back(std::move(row));
    }
    if (toks.empty()) throw std::runtime_error("Embedder: empty table " + path);
    Embedder e(toks, dim, hash_buckets, rng);
    for (std::size_t i = 0; i < toks.size(); ++i)
        for (int j = 0; j < dim; ++j)
            e.table_.value.at2(static_cast<int>(i), j) = rows[i][static_cast<std::size_t>(j)];
    return e;
}

int Embedder::row_of(const std::string& token) const {
    auto it = vocab_.find(token);
    if (it != vocab_.end()) return it->second;
    return static_cast<int>(vocab_.size()) +
           static_cast<int>(fnv1a(token) % static_cast<std::uint64_t>(hash_buckets_));
}

std::vector<int> Embedder::rows(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(row_of(t));
    return ids;
}

Tensor Embedder::embed_tokens(const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("embed_tokens: empty token list");
    int n = static_cast<int>(tokens.size()), d = dim();
    Tensor out({n, d});
    for (int i = 0; i < n; ++i) {
        int r = row_of(tokens[static_cast<std::size_t>(i)]);
        for (int j = 0; j < d; ++j) out.at2(i, j) = table_.value.at2(r, j);
    }
    return out;
}

ad::Var Embedder::embed_tokens(ad::Tape& t, const std::vector<std::string>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("embed_tokens: empty token list");
    return ad::gather_rows(t.param(table_), rows(tokens));
}

Tensor build_adjacency(const Caption& caption) {
    caption.validate();
    int n = static_cast<int>(caption.tokens.size());
    Tensor a({n, n});
    for (int i = 0; i < n; ++i) a.at2(i, i) = 1.0;
    for (const auto& [h, d] : caption.dependency_edges) {
        a.at2(h, d) = 1.0;
        a.at2(d, h) = 1.0;
    }
    return a;
}

SemanticGraph build_graph(const Caption& caption, const Embedder& embedder) {
    SemanticGraph g;
    g.adjacency = build_adjacency(caption);
    g.node_features = embedder.embed_tokens(caption.tokens);
    return g;
}

} // namespace lsic
