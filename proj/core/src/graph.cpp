#include "adaptvig/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "adaptvig/rng.hpp"

namespace adaptvig {

AdjacencyMatrix::AdjacencyMatrix(int n_nodes) : n_(n_nodes) {
    if (n_nodes < 1) {
        throw std::invalid_argument("AdjacencyMatrix: need at least one node");
    }
    dense_.assign(static_cast<std::size_t>(n_) * n_, 0);
}

void AdjacencyMatrix::add_edge(int i, int j) {
    if (i < 0 || j < 0 || i >= n_ || j >= n_) {
        throw std::invalid_argument("AdjacencyMatrix: node index out of range");
    }
    if (i == j) {
        return;
    }
    dense_[static_cast<std::size_t>(i) * n_ + j] = 1;
    dense_[static_cast<std::size_t>(j) * n_ + i] = 1;
}

int AdjacencyMatrix::degree(int i) const {
    int d = 0;
    const std::uint8_t* row = dense_.data() + static_cast<std::size_t>(i) * n_;
    for (int j = 0; j < n_; ++j) {
        d += row[j];
    }
    return d;
}

std::vector<int> AdjacencyMatrix::neighbors(int i) const {
    std::vector<int> out;
    const std::uint8_t* row = dense_.data() + static_cast<std::size_t>(i) * n_;
    for (int j = 0; j < n_; ++j) {
        if (row[j]) {
            out.push_back(j);
        }
    }
    return out;
}

std::int64_t AdjacencyMatrix::edge_count() const {
    std::int64_t twice = 0;
    for (std::uint8_t v : dense_) {
        twice += v;
    }
    return twice / 2;
}

int AdjacencyMatrix::max_degree() const {
    int m = 0;
    for (int i = 0; i < n_; ++i) {
        m = std::max(m, degree(i));
    }
    return m;
}

// ---- construction policies ------------------------------------------------------

AdjacencyMatrix build_scaffold_graph(int h, int w, int k) {
    const ScaffoldSpec spec = scaffold_shifts(h, w, k);
    AdjacencyMatrix a(h * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int node = r * w + c;
            for (const ShiftSpec& sh : spec.shifts) {
                const int nr = sh.axis == Axis::height ? (r + sh.offset) % h : r;
                const int nc = sh.axis == Axis::width ? (c + sh.offset) % w : c;
                a.add_edge(node, nr * w + nc);  // reverse direction covered by symmetry
            }
        }
    return a;
}

namespace {

double node_l1_distance(const Tensor4& x, int node_a, int node_b) {
    const Shape4 s = x.shape();
    const int ra = node_a / s.w;
    const int ca = node_a % s.w;
    const int rb = node_b / s.w;
    const int cb = node_b % s.w;
    double d = 0.0;
    for (int ch = 0; ch < s.c; ++ch) {
        d += std::abs(x.at(0, ch, ra, ca) - x.at(0, ch, rb, cb));
    }
    return d;
}

}  // namespace

AdjacencyMatrix build_gated_graph(const Tensor4& x, int k, const GatingParams& params,
                                  double tau) {
    if (tau <= 0.0 || tau > 1.0) {
        throw std::invalid_argument("build_gated_graph: tau must lie in (0, 1]");
    }
    const Shape4 s = x.shape();
    const ScaffoldSpec spec = scaffold_shifts(s.h, s.w, k);
    const double t_eff = params.effective();
    AdjacencyMatrix a(s.h * s.w);
    for (int r = 0; r < s.h; ++r)
        for (int c = 0; c < s.w; ++c) {
            const int node = r * s.w + c;
            for (const ShiftSpec& sh : spec.shifts) {
                const int nr = sh.axis == Axis::height ? (r + sh.offset) % s.h : r;
                const int nc = sh.axis == Axis::width ? (c + sh.offset) % s.w : c;
                const int neighbor = nr * s.w + nc;
                if (sh.gated) {
                    const double g =
                        std::exp(-node_l1_distance(x, node, neighbor) / t_eff);
                    if (g < tau) {
                        continue;
                    }
                }
                a.add_edge(node, neighbor);
            }
        }
    return a;
}

AdjacencyMatrix build_knn_graph(const Tensor4& x, int k_nn, KnnBuildStats* stats) {
    const Shape4 s = x.shape();
    const int n = s.h * s.w;
    if (k_nn < 1 || k_nn >= n) {
        throw std::invalid_argument("build_knn_graph: need 1 <= k_nn < n_nodes, got k_nn=" +
                                    std::to_string(k_nn) + " for n=" + std::to_string(n));
    }
    AdjacencyMatrix a(n);
    std::vector<std::pair<double, int>> dist;
    dist.reserve(static_cast<std::size_t>(n) - 1);
    for (int i = 0; i < n; ++i) {
        dist.clear();
        const int ri = i / s.w;
        const int ci = i % s.w;
        for (int j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            const int rj = j / s.w;
            const int cj = j % s.w;
            double d2 = 0.0;
            for (int ch = 0; ch < s.c; ++ch) {
                const double d = x.at(0, ch, ri, ci) - x.at(0, ch, rj, cj);
                d2 += d * d;
            }
            dist.emplace_back(d2, j);
            if (stats) {
                ++stats->distance_evals;
            }
        }
        // ties broken toward the lower node index by the pair ordering
        std::partial_sort(dist.begin(), dist.begin() + k_nn, dist.end());
        for (int t = 0; t < k_nn; ++t) {
            a.add_edge(i, dist[static_cast<std::size_t>(t)].second);
        }
    }
    return a;
}

// ---- metrics ---------------------------------------------------------------------

double clustering_coefficient(const AdjacencyMatrix& a) {
    const int n = a.size();
    std::vector<std::vector<int>> nbr(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        nbr[static_cast<std::size_t>(i)] = a.neighbors(i);
    }
    double total = 0.0;
    std::vector<int> tmp;
    for (int i = 0; i < n; ++i) {
        const auto& ni = nbr[static_cast<std::size_t>(i)];
        const int k = static_cast<int>(ni.size());
        if (k < 2) {
            continue;  // C_i := 0 below degree 2
        }
        // sum over u in N(i) of |N(i) ∩ N(u)| counts each closing edge twice
        std::int64_t closed_twice = 0;
        for (int u : ni) {
            const auto& nu = nbr[static_cast<std::size_t>(u)];
            tmp.clear();
            std::set_intersection(ni.begin(), ni.end(), nu.begin(), nu.end(),
                                  std::back_inserter(tmp));
            closed_twice += static_cast<std::int64_t>(tmp.size());
        }
        total += static_cast<double>(closed_twice) /
                 (static_cast<double>(k) * (k - 1));
    }
    return total / static_cast<double>(n);
}

std::vector<double> symmetric_eigenvalues(std::vector<double> m, int n) {
    if (static_cast<std::int64_t>(m.size()) != static_cast<std::int64_t>(n) * n) {
        throw std::invalid_argument("symmetric_eigenvalues: matrix size mismatch");
    }
    auto at = [&m, n](int i, int j) -> double& {
        return m[static_cast<std::size_t>(i) * n + j];
    };

    // cyclic Jacobi sweeps
    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                off += at(p, q) * at(p, q);
            }
        if (off <= 1e-24) {
            break;
        }
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (std::abs(apq) < 1e-300) {
                    continue;
                }
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = at(i, p);
                    const double aiq = at(i, q);
                    at(i, p) = c * aip - s * aiq;
                    at(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = at(p, i);
                    const double aqi = at(q, i);
                    at(p, i) = c * api - s * aqi;
                    at(q, i) = s * api + c * aqi;
                }
            }
    }
    std::vector<double> eig(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        eig[static_cast<std::size_t>(i)] = at(i, i);
    }
    std::sort(eig.begin(), eig.end(), std::greater<>());
    return eig;
}

namespace {

SpectralResult dense_eigs(const AdjacencyMatrix& a) {
    const int n = a.size();
    std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            m[static_cast<std::size_t>(i) * n + j] = a.at(i, j) ? 1.0 : 0.0;
        }
    const std::vector<double> eig = symmetric_eigenvalues(std::move(m), n);
    SpectralResult r;
    r.lambda1 = eig[0];
    r.lambda2 = n > 1 ? eig[1] : 0.0;
    return r;
}

// y = (A + shift I) x
void apply_shifted(const AdjacencyMatrix& a, double shift, const std::vector<double>& x,
                   std::vector<double>& y) {
    const int n = a.size();
    for (int i = 0; i < n; ++i) {
        double acc = shift * x[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) {
            if (a.at(i, j)) {
                acc += x[static_cast<std::size_t>(j)];
            }
        }
        y[static_cast<std::size_t>(i)] = acc;
    }
}

double norm2(const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Dominant eigenpair of the shifted adjacency restricted to the complement of
// prev (when given). The shift makes the operator positive semidefinite, so
// the dominant eigenvalue is the algebraically largest. The start vector must
// differ between the two runs: power iteration converges to the projection of
// its start onto the dominant eigenspace, so reusing the first run's start
// would leave the second run with no component in a degenerate eigenspace.
std::pair<double, std::vector<double>> power_dominant(const AdjacencyMatrix& a, double shift,
                                                      const std::vector<double>* prev,
                                                      int* iterations, std::uint64_t seed) {
    const int n = a.size();
    Rng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& e : v) {
        e = rng.uniform(-1.0, 1.0);
    }
    if (prev) {
        const double p = dot(*prev, v);
        for (int i = 0; i < n; ++i) {
            v[static_cast<std::size_t>(i)] -= p * (*prev)[static_cast<std::size_t>(i)];
        }
    }
    const double nv = norm2(v);
    for (double& e : v) {
        e /= nv;
    }

    std::vector<double> w(static_cast<std::size_t>(n));
    double lambda = 0.0;
    for (int it = 1; it <= kPowerIterMax; ++it) {
        apply_shifted(a, shift, v, w);
        if (prev) {
            const double p = dot(*prev, w);
            for (int i = 0; i < n; ++i) {
                w[static_cast<std::size_t>(i)] -= p * (*prev)[static_cast<std::size_t>(i)];
            }
        }
        const double next = dot(v, w);  // Rayleigh quotient, v is unit length
        const double nw = norm2(w);
        if (nw < 1e-300) {
            // remaining spectrum of the PSD operator is (numerically) zero
            *iterations = it;
            return {0.0, v};
        }
        for (int i = 0; i < n; ++i) {
            w[static_cast<std::size_t>(i)] /= nw;
        }
        v.swap(w);
        if (it > 1 && std::abs(next - lambda) <= kPowerIterTol * std::max(1.0, std::abs(next))) {
            *iterations = it;
            return {next, v};
        }
        lambda = next;
    }
    throw std::runtime_error("spectral_eigs: power iteration did not converge within " +
                             std::to_string(kPowerIterMax) + " iterations (tol " +
                             std::to_string(kPowerIterTol) + ")");
}

SpectralResult iterative_eigs(const AdjacencyMatrix& a) {
    SpectralResult r;
    const int n = a.size();
    const int md = a.max_degree();
    if (n < 2 || md == 0) {
        return r;
    }
    const double shift = static_cast<double>(md);
    int it1 = 0;
    auto [l1s, v1] = power_dominant(a, shift, nullptr, &it1, 0x9d2c5680u);
    int it2 = 0;
    auto [l2s, v2] = power_dominant(a, shift, &v1, &it2, 0x53a1c0deu);
    r.lambda1 = l1s - shift;
    r.lambda2 = l2s - shift;
    r.iterations = it1 + it2;
    return r;
}

}  // namespace

SpectralResult spectral_eigs(const AdjacencyMatrix& a, EigenMethod method) {
    if (method == EigenMethod::automatic) {
        method = a.size() <= kDenseEigenLimit ? EigenMethod::dense : EigenMethod::iterative;
    }
    return method == EigenMethod::dense ? dense_eigs(a) : iterative_eigs(a);
}

GraphMetrics graph_metrics(const AdjacencyMatrix& a, EigenMethod method) {
    GraphMetrics m;
    m.clustering = clustering_coefficient(a);
    const SpectralResult s = spectral_eigs(a, method);
    m.lambda1 = s.lambda1;
    m.lambda2 = s.lambda2;
    m.spectral_gap = s.lambda1 - s.lambda2;
    return m;
}

}  // namespace adaptvig
