#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"

namespace mbfmri {

// ---------------------------------------------------------------------------
// Experimental block structure: task blocks (A) and control blocks (B) on
// the session timeline. Time between blocks belongs to neither condition
// and is excluded from fitting.
// ---------------------------------------------------------------------------
enum class BlockType : char { kA = 'A', kB = 'B' };

struct Block {
    BlockType type;
    double start;  // s
    double end;    // s
};

struct BlockDesign {
    std::vector<Block> blocks;
    double total_duration = 0.0;  // s

    void validate() const {
        if (blocks.empty()) throw InvalidArgument("BlockDesign: no blocks");
        double prev_end = -1.0;
        for (const auto& b : blocks) {
            if (!(b.end > b.start)) throw InvalidArgument("BlockDesign: block end <= start");
            if (b.start < prev_end) throw InvalidArgument("BlockDesign: blocks overlap");
            if (b.start < 0.0) throw InvalidArgument("BlockDesign: negative block start");
            prev_end = b.end;
        }
        if (total_duration < prev_end)
            throw InvalidArgument("BlockDesign: total_duration shorter than last block");
    }

    std::size_t count(BlockType t) const {
        std::size_t n = 0;
        for (const auto& b : blocks)
            if (b.type == t) ++n;
        return n;
    }

    // Strict alternation A B A B ... with zero gaps.
    static BlockDesign alternating(int per_type, double block_duration) {
        BlockDesign d;
        for (int i = 0; i < 2 * per_type; ++i) {
            const double s = i * block_duration;
            d.blocks.push_back({i % 2 == 0 ? BlockType::kA : BlockType::kB, s,
                                s + block_duration});
        }
        d.total_duration = 2 * per_type * block_duration;
        d.validate();
        return d;
    }

    // Seeded shuffle of per_type A's and per_type B's, zero gaps — the
    // default phantom protocol.
    static BlockDesign pseudo_randomized(int per_type, double block_duration,
                                         std::uint64_t seed) {
        std::vector<BlockType> order;
        for (int i = 0; i < per_type; ++i) {
            order.push_back(BlockType::kA);
            order.push_back(BlockType::kB);
        }
        std::mt19937_64 engine(seed);
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const std::size_t j = engine() % (i + 1);
            std::swap(order[i], order[j]);
        }
        BlockDesign d;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const double s = i * block_duration;
            d.blocks.push_back({order[i], s, s + block_duration});
        }
        d.total_duration = order.size() * block_duration;
        d.validate();
        return d;
    }
};

// Index of the block containing t (blocks are half-open [start, end)).
inline std::optional<std::size_t> block_index(const BlockDesign& design, double t) {
    for (std::size_t i = 0; i < design.blocks.size(); ++i)
        if (t >= design.blocks[i].start && t < design.blocks[i].end) return i;
    return std::nullopt;
}

// 1 in an A block, 0 in a B block, nullopt in a gap (those observations
// never enter a fit).
inline std::optional<int> indicator(const BlockDesign& design, double t) {
    const auto i = block_index(design, t);
    if (!i) return std::nullopt;
    return design.blocks[*i].type == BlockType::kA ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Model variants.
// ---------------------------------------------------------------------------
struct ModelSpec {
    enum class Variant { kNested, kTaskLinearTime, kTaskBspline };
    Variant variant = Variant::kTaskLinearTime;
    int bspline_df = 12;

    static ModelSpec nested() { return {Variant::kNested, 0}; }
    static ModelSpec task_linear_time() { return {Variant::kTaskLinearTime, 0}; }
    static ModelSpec task_bspline(int df) {
        if (df < 4) throw InvalidArgument("ModelSpec: bspline df must be >= 4");
        return {Variant::kTaskBspline, df};
    }

    std::string name() const {
        switch (variant) {
            case Variant::kNested: return "nested";
            case Variant::kTaskLinearTime: return "task_linear_time";
            case Variant::kTaskBspline: return "task_bspline";
        }
        return "?";
    }
};

// ---------------------------------------------------------------------------
// Clamped cubic b-spline basis on [0, total]: n_basis functions over the
// knot vector [0,0,0,0, t_1 .. t_{n_basis-4}, T,T,T,T] with equally spaced
// interior knots. Nonnegative and summing to 1 everywhere on [0, T]
// (Cox–de Boor recursion, evaluated with the standard knot-span algorithm).
// ---------------------------------------------------------------------------
inline std::vector<double> cubic_bspline_basis(double t, double total, int n_basis) {
    constexpr int kDegree = 3;
    if (n_basis < kDegree + 1)
        throw InvalidArgument("cubic_bspline_basis: need at least 4 basis functions");
    if (!(total > 0.0)) throw InvalidArgument("cubic_bspline_basis: total must be > 0");

    const int n_interior = n_basis - kDegree - 1;
    std::vector<double> knots(n_basis + kDegree + 1);
    for (int i = 0; i <= kDegree; ++i) {
        knots[i] = 0.0;
        knots[n_basis + i] = total;
    }
    for (int i = 1; i <= n_interior; ++i)
        knots[kDegree + i] = total * static_cast<double>(i) / (n_interior + 1);

    double u = std::clamp(t, 0.0, total);

    // Knot span containing u: knots[span] <= u < knots[span+1], with the
    // right endpoint folded into the last span.
    int span;
    if (u >= knots[n_basis]) {
        span = n_basis - 1;
    } else {
        int lo = kDegree, hi = n_basis;
        span = (lo + hi) / 2;
        while (u < knots[span] || u >= knots[span + 1]) {
            if (u < knots[span])
                hi = span;
            else
                lo = span;
            span = (lo + hi) / 2;
        }
    }

    // The kDegree+1 basis functions alive on this span.
    std::vector<double> active(kDegree + 1, 0.0);
    std::vector<double> left(kDegree + 1, 0.0), right(kDegree + 1, 0.0);
    active[0] = 1.0;
    for (int j = 1; j <= kDegree; ++j) {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = active[r] / (right[r + 1] + left[j - r]);
            active[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        active[j] = saved;
    }

    std::vector<double> out(n_basis, 0.0);
    for (int j = 0; j <= kDegree; ++j) out[span - kDegree + j] = active[j];
    return out;
}

// ---------------------------------------------------------------------------
// Design rows.
// ---------------------------------------------------------------------------
struct DesignRow {
    std::vector<double> values;
    // Column of the task-effect coefficient; -1 for the nested model, whose
    // task effect only exists through the A-vs-B contrast.
    int beta_index = -1;
};

inline std::size_t design_row_length(const ModelSpec& model, const BlockDesign& design) {
    switch (model.variant) {
        case ModelSpec::Variant::kNested:
            return design.blocks.size();
        case ModelSpec::Variant::kTaskLinearTime:
            return 3;
        case ModelSpec::Variant::kTaskBspline:
            return 2 + static_cast<std::size_t>(model.bspline_df);
    }
    return 0;
}

// Covariate row for an observation at time t.
//
//   nested:            one column per block, 1 for the containing block —
//                      per-block mean intensities, task effect via contrast.
//   task_linear_time:  [1, ind, t].
//   task_bspline(df):  [1, ind, B_1(t) .. B_df(t)], the last df functions
//                      of a (df+1)-function clamped cubic basis on
//                      [0, total_duration]. Dropping the leading basis
//                      function breaks the partition of unity, which is
//                      what keeps these columns independent of the
//                      intercept.
inline DesignRow design_row(const ModelSpec& model, const BlockDesign& design, double t) {
    const auto ind = indicator(design, t);
    if (!ind)
        throw InvalidArgument("design_row: time " + std::to_string(t) +
                              " has undefined task indicator");
    DesignRow row;
    switch (model.variant) {
        case ModelSpec::Variant::kNested: {
            row.values.assign(design.blocks.size(), 0.0);
            row.values[*block_index(design, t)] = 1.0;
            row.beta_index = -1;
            break;
        }
        case ModelSpec::Variant::kTaskLinearTime: {
            row.values = {1.0, static_cast<double>(*ind), t};
            row.beta_index = 1;
            break;
        }
        case ModelSpec::Variant::kTaskBspline: {
            const auto basis = cubic_bspline_basis(t, design.total_duration, model.bspline_df + 1);
            row.values.resize(2 + model.bspline_df);
            row.values[0] = 1.0;
            row.values[1] = static_cast<double>(*ind);
            for (int i = 0; i < model.bspline_df; ++i) row.values[2 + i] = basis[i + 1];
            row.beta_index = 1;
            break;
        }
    }
    return row;
}

// Contrast c with c . theta_hat = task effect. Sums to zero for the nested
// model (A-mean minus B-mean), selects the indicator coefficient otherwise.
inline std::vector<double> task_contrast(const ModelSpec& model, const BlockDesign& design) {
    switch (model.variant) {
        case ModelSpec::Variant::kNested: {
            const double na = static_cast<double>(design.count(BlockType::kA));
            const double nb = static_cast<double>(design.count(BlockType::kB));
            if (na == 0.0 || nb == 0.0)
                throw InvalidArgument("task_contrast: nested design needs blocks of both types");
            std::vector<double> c(design.blocks.size());
            for (std::size_t i = 0; i < design.blocks.size(); ++i)
                c[i] = design.blocks[i].type == BlockType::kA ? 1.0 / na : -1.0 / nb;
            return c;
        }
        case ModelSpec::Variant::kTaskLinearTime: {
            return {0.0, 1.0, 0.0};
        }
        case ModelSpec::Variant::kTaskBspline: {
            std::vector<double> c(2 + model.bspline_df, 0.0);
            c[1] = 1.0;
            return c;
        }
    }
    return {};
}

}  // namespace mbfmri
