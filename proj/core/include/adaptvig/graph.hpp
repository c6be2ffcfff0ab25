#pragma once

#include <cstdint>
#include <vector>

#include "adaptvig/gating.hpp"
#include "adaptvig/tensor.hpp"

namespace adaptvig {

/// Symmetric boolean adjacency over the h*w patch grid, no self-loops.
/// Node index = row * w + col.
class AdjacencyMatrix {
public:
    explicit AdjacencyMatrix(int n_nodes);

    int size() const { return n_; }
    bool at(int i, int j) const { return dense_[static_cast<std::size_t>(i) * n_ + j] != 0; }

    /// Adds the undirected edge {i, j}; self-loops are dropped.
    void add_edge(int i, int j);

    int degree(int i) const;
    std::vector<int> neighbors(int i) const;  // ascending
    std::int64_t edge_count() const;          // undirected edges
    int max_degree() const;

private:
    int n_;
    std::vector<std::uint8_t> dense_;
};

struct GraphMetrics {
    double clustering = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double spectral_gap = 0.0;
};

enum class EigenMethod { automatic, dense, iterative };

// Dense eigensolver handles n <= this; larger graphs use power iteration
// with deflation under EigenMethod::automatic.
constexpr int kDenseEigenLimit = 1024;
constexpr double kPowerIterTol = 1e-10;
constexpr int kPowerIterMax = 10000;

/// Toroidal scaffold graph: node (r,c) connects to ((r +- s) mod h, c) and
/// (r, (c +- s) mod w) for every scaffold offset s (local K and gated 2^i).
AdjacencyMatrix build_scaffold_graph(int h, int w, int k);

/// Scaffold restricted by the gate: local-K edges always kept, a gated edge
/// survives iff exp(-d/(|T|+eps)) >= tau, symmetrized by OR. Batch 0 of x.
AdjacencyMatrix build_gated_graph(const Tensor4& x, int k, const GatingParams& params, double tau);

struct KnnBuildStats {
    std::int64_t distance_evals = 0;
};

/// Each node connects to its k_nn nearest nodes by channel-vector L2 distance
/// (ties broken toward the lower node index), symmetrized by OR. Batch 0 of x.
AdjacencyMatrix build_knn_graph(const Tensor4& x, int k_nn, KnnBuildStats* stats = nullptr);

/// Eq.-style average of local clustering coefficients 2*E_i / (k_i (k_i - 1)),
/// with C_i := 0 for degree < 2.
double clustering_coefficient(const AdjacencyMatrix& a);

struct SpectralResult {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    int iterations = 0;  // iterative path only
};

/// Two largest adjacency eigenvalues. The iterative path runs power iteration
/// on A + max_degree*I with deflation; non-convergence within kPowerIterMax
/// iterations throws, reporting the iteration count.
SpectralResult spectral_eigs(const AdjacencyMatrix& a, EigenMethod method = EigenMethod::automatic);

/// Clustering coefficient plus spectral gap S = lambda1 - lambda2.
GraphMetrics graph_metrics(const AdjacencyMatrix& a, EigenMethod method = EigenMethod::automatic);

/// All eigenvalues of a dense symmetric matrix (row-major n x n), descending.
std::vector<double> symmetric_eigenvalues(std::vector<double> m, int n);

}  // namespace adaptvig
