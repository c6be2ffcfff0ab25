#pragma once

// Independent oracles shared by the unit and acceptance suites. These
// deliberately avoid the library's tensor-shift / neighbor-intersection code
// paths: everything is an explicit scalar loop.

#include <cmath>
#include <vector>

#include "adaptvig/gating.hpp"
#include "adaptvig/graph.hpp"
#include "adaptvig/rng.hpp"
#include "adaptvig/tensor.hpp"

namespace oracle {

using adaptvig::AdjacencyMatrix;
using adaptvig::AGCConfig;
using adaptvig::Axis;
using adaptvig::DistanceKind;
using adaptvig::GateKind;
using adaptvig::Rng;
using adaptvig::Shape4;
using adaptvig::Tensor4;

inline int wrap(int i, int l) {
    const int m = i % l;
    return m < 0 ? m + l : m;
}

// Per-pixel re-derivation of the aggregation: for every pixel walk the shift
// list in order, compute the (gated) difference against the toroidal neighbor
// and keep the running elementwise max, starting from zero.
inline Tensor4 agc_aggregate_loop(const Tensor4& x, const AGCConfig& cfg, double temperature,
                                  double eps) {
    const Shape4 s = x.shape();
    const double t_eff = std::abs(temperature) + eps;
    const adaptvig::ScaffoldSpec spec = adaptvig::scaffold_shifts(s.h, s.w, cfg.k);

    Tensor4 out(s, 0.0);
    for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
                for (const adaptvig::ShiftSpec& sh : spec.shifts) {
                    const int ni = sh.axis == Axis::height ? wrap(i + sh.offset, s.h) : i;
                    const int nj = sh.axis == Axis::width ? wrap(j + sh.offset, s.w) : j;
                    double gate = 1.0;
                    if (sh.gated) {
                        double d = 0.0;
                        for (int c = 0; c < s.c; ++c) {
                            const double diff = x.at(n, c, ni, nj) - x.at(n, c, i, j);
                            d += cfg.distance == DistanceKind::l1 ? std::abs(diff) : diff * diff;
                        }
                        if (cfg.distance == DistanceKind::l2) {
                            d = std::sqrt(d);
                        }
                        gate = cfg.gate == GateKind::exp_decay
                                   ? std::exp(-d / t_eff)
                                   : 2.0 / (1.0 + std::exp(d / t_eff));
                    }
                    for (int c = 0; c < s.c; ++c) {
                        const double cand =
                            gate * (x.at(n, c, ni, nj) - x.at(n, c, i, j));
                        double& acc = out.at(n, c, i, j);
                        if (cand > acc) {
                            acc = cand;
                        }
                    }
                }
            }
    return out;
}

// Brute-force Eq.-(2) clustering: enumerate every neighbor pair per node and
// look the closing edge up in the dense matrix.
inline double clustering_loop(const AdjacencyMatrix& a) {
    const int n = a.size();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<int> nbr;
        for (int j = 0; j < n; ++j) {
            if (a.at(i, j)) {
                nbr.push_back(j);
            }
        }
        const int k = static_cast<int>(nbr.size());
        if (k < 2) {
            continue;
        }
        int closed = 0;
        for (int u = 0; u < k; ++u)
            for (int v = u + 1; v < k; ++v) {
                if (a.at(nbr[u], nbr[v])) {
                    ++closed;
                }
            }
        total += 2.0 * closed / (static_cast<double>(k) * (k - 1));
    }
    return total / n;
}

inline AdjacencyMatrix random_graph(Rng& rng, int n, double edge_prob) {
    AdjacencyMatrix a(n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (rng.uniform() < edge_prob) {
                a.add_edge(i, j);
            }
        }
    return a;
}

inline Tensor4 random_tensor(Rng& rng, Shape4 s, double scale = 1.0) {
    Tensor4 t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = rng.normal(0.0, scale);
    }
    return t;
}

}  // namespace oracle
