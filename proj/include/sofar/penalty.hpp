#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "sofar/errors.hpp"
#include "sofar/linalg.hpp"

namespace sofar {

enum class PenaltyKind { EntrywiseL1, RowwiseGroup };

inline std::string to_string(PenaltyKind k)
{
    return k == PenaltyKind::EntrywiseL1 ? "l1" : "group";
}

/// Sparsity penalty on a coefficient block. Without weights every entry (or
/// row) carries weight one. Rowwise weights are stored as a full matrix whose
/// rows are constant; the first entry of each row is the row weight.
struct Penalty {
    PenaltyKind kind = PenaltyKind::EntrywiseL1;
    std::optional<Mat> weights;

    static Penalty l1() { return {PenaltyKind::EntrywiseL1, std::nullopt}; }
    static Penalty group() { return {PenaltyKind::RowwiseGroup, std::nullopt}; }

    bool adaptive() const { return weights.has_value(); }

    double entry_weight(Index i, Index j) const { return weights ? (*weights)(i, j) : 1.0; }
    double row_weight(Index i) const { return weights ? (*weights)(i, 0) : 1.0; }

    /// Keep only the listed columns of the weight matrix (layer pruning).
    template <class Cols>
    Penalty select_columns(const Cols& cols) const
    {
        Penalty out{kind, std::nullopt};
        if (weights) out.weights = (*weights)(Eigen::all, cols);
        return out;
    }
};

namespace detail {

inline void check_weights(const Penalty& p, const Mat& m, const char* who)
{
    if (!p.weights) return;
    if (p.weights->rows() != m.rows() || p.weights->cols() != m.cols())
        throw InvalidArgument(std::string(who) + ": weight shape does not match argument");
}

inline double soft_threshold(double x, double t)
{
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

}  // namespace detail

/// rho(m): weighted entrywise L1 norm or weighted sum of row Euclidean norms.
inline double value(const Penalty& p, const Mat& m)
{
    detail::check_weights(p, m, "penalty value");
    double total = 0.0;
    if (p.kind == PenaltyKind::EntrywiseL1) {
        if (p.weights) return p.weights->cwiseProduct(m.cwiseAbs()).sum();
        return m.cwiseAbs().sum();
    }
    for (Index i = 0; i < m.rows(); ++i) total += p.row_weight(i) * m.row(i).norm();
    return total;
}

/// argmin_Z (1/2t)||Z - m||_F^2 + rho(Z): entrywise or rowwise soft-thresholding.
inline Mat prox(const Penalty& p, const Mat& m, double t)
{
    detail::check_weights(p, m, "penalty prox");
    if (!(t > 0.0)) throw InvalidArgument("penalty prox: step must be positive");
    Mat z(m.rows(), m.cols());
    if (p.kind == PenaltyKind::EntrywiseL1) {
        for (Index j = 0; j < m.cols(); ++j)
            for (Index i = 0; i < m.rows(); ++i)
                z(i, j) = detail::soft_threshold(m(i, j), t * p.entry_weight(i, j));
        return z;
    }
    for (Index i = 0; i < m.rows(); ++i) {
        const double nrm = m.row(i).norm();
        const double thr = t * p.row_weight(i);
        if (nrm <= thr || nrm == 0.0) {
            z.row(i).setZero();
        } else {
            z.row(i) = m.row(i) * (1.0 - thr / nrm);
        }
    }
    return z;
}

struct NullThreshold {
    double lambda = 0.0;
    /// The gradient was identically zero.
    bool zero_gradient = false;
};

/// Smallest lambda at which zero is a stationary point of
/// smooth-loss + lambda * rho, given the smooth-loss gradient g at zero.
inline NullThreshold null_threshold(const Penalty& p, const Mat& g)
{
    detail::check_weights(p, g, "null_threshold");
    NullThreshold out;
    if (g.size() == 0 || g.cwiseAbs().maxCoeff() == 0.0) {
        out.zero_gradient = true;
        return out;
    }
    if (p.kind == PenaltyKind::EntrywiseL1) {
        for (Index j = 0; j < g.cols(); ++j)
            for (Index i = 0; i < g.rows(); ++i)
                out.lambda = std::max(out.lambda, std::abs(g(i, j)) / p.entry_weight(i, j));
    } else {
        for (Index i = 0; i < g.rows(); ++i)
            out.lambda = std::max(out.lambda, g.row(i).norm() / p.row_weight(i));
    }
    return out;
}

/// Entrywise reciprocal weights 1 / max(|init_ij|, floor).
inline Mat adaptive_weights(const Mat& init, double floor = 1e-8)
{
    if (!(floor > 0.0)) throw InvalidArgument("adaptive_weights: floor must be positive");
    return init.unaryExpr([floor](double a) { return 1.0 / std::max(std::abs(a), floor); });
}

/// Row weights 1 / max(||init_i.||_2, floor), broadcast across each row.
inline Mat adaptive_row_weights(const Mat& init, double floor = 1e-8)
{
    if (!(floor > 0.0)) throw InvalidArgument("adaptive_row_weights: floor must be positive");
    Mat w(init.rows(), init.cols());
    for (Index i = 0; i < init.rows(); ++i)
        w.row(i).setConstant(1.0 / std::max(init.row(i).norm(), floor));
    return w;
}

/// Adaptive penalty of the given kind built from an initial estimate.
inline Penalty adaptive_penalty(PenaltyKind kind, const Mat& init, double floor = 1e-8)
{
    Penalty p{kind, std::nullopt};
    p.weights = kind == PenaltyKind::EntrywiseL1 ? adaptive_weights(init, floor)
                                                 : adaptive_row_weights(init, floor);
    return p;
}

}  // namespace sofar
