#pragma once

#include <cstddef>
#include <vector>

#include "stclt/linalg.hpp"

namespace stclt {

/// Contributions E_k(l) in R^q for k = 1..K over the nodes of one lattice.
class ScoreField {
public:
    ScoreField(int K, std::size_t nodes, int q);

    int K() const { return K_; }
    std::size_t nodes() const { return nodes_; }
    int q() const { return q_; }

    double& at(int k, std::size_t node, int comp) { return values_[offset(k, node, comp)]; }
    double at(int k, std::size_t node, int comp) const { return values_[offset(k, node, comp)]; }

    /// sum over nodes of E_k(l), nodes in lattice order.
    Vector step_sum(int k) const;

    const std::vector<double>& values() const { return values_; }
    bool all_finite() const;

private:
    std::size_t offset(int k, std::size_t node, int comp) const {
        return ((static_cast<std::size_t>(k - 1) * nodes_) + node) * static_cast<std::size_t>(q_) +
               static_cast<std::size_t>(comp);
    }

    int K_;
    std::size_t nodes_;
    int q_;
    std::vector<double> values_;
};

/// T = sum_k sum_l E_k(l), accumulated k-major then in lattice order.
Vector score_total(const ScoreField& sf);

}  // namespace stclt
