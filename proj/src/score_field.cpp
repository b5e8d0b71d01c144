#include "stclt/score_field.hpp"

#include <cmath>

#include "stclt/error.hpp"

namespace stclt {

ScoreField::ScoreField(int K, std::size_t nodes, int q) : K_(K), nodes_(nodes), q_(q) {
    if (K < 1 || q < 1) throw DomainError("score field needs K >= 1 and q >= 1");
    values_.assign(static_cast<std::size_t>(K) * nodes * static_cast<std::size_t>(q), 0.0);
}

Vector ScoreField::step_sum(int k) const {
    if (k < 1 || k > K_) throw DomainError("step_sum: time out of range");
    Vector s = Vector::Zero(q_);
    for (std::size_t l = 0; l < nodes_; ++l)
        for (int i = 0; i < q_; ++i) s(i) += at(k, l, i);
    return s;
}

bool ScoreField::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

Vector score_total(const ScoreField& sf) {
    Vector t = Vector::Zero(sf.q());
    for (int k = 1; k <= sf.K(); ++k) t += sf.step_sum(k);
    return t;
}

}  // namespace stclt
