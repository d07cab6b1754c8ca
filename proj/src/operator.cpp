#include "wfb/operator.hpp"

#include <cstdlib>

namespace wfb {

Unknowns::Unknowns(const ParamGrid& grid) : g(grid) {
    n_full = g.rows() * g.cols();
    full_to_red.assign(n_full, -1);
    for (int p = 0; p < g.rows(); ++p) {
        if (g.has_pole() && p < g.p(0)) continue;
        for (int j = 0; j < g.cols(); ++j) {
            full_to_red[full(p, j)] = static_cast<int>(red_to_full.size());
            red_to_full.push_back(full(p, j));
        }
    }
    n_red = static_cast<int>(red_to_full.size());
    if (g.has_pole())
        for (int k = 0; k < ParamGrid::kGhost; ++k)
            for (int j = 0; j < g.cols(); ++j) full_to_red[full(g.p(-1 - k), j)] = full_to_red[full(g.p(k), g.mirror(j))];

    std::vector<Eigen::Triplet<double>> tp, tr;
    for (int f = 0; f < n_full; ++f) tp.emplace_back(f, full_to_red[f], 1.0);
    for (int r = 0; r < n_red; ++r) tr.emplace_back(r, red_to_full[r], 1.0);
    P.resize(n_full, n_red);
    P.setFromTriplets(tp.begin(), tp.end());
    R.resize(n_red, n_full);
    R.setFromTriplets(tr.begin(), tr.end());
}

Eigen::VectorXd Unknowns::pack(const Field& u) const {
    Eigen::VectorXd x(n_red);
    for (int r = 0; r < n_red; ++r) {
        const int f = red_to_full[r];
        x[r] = u(f / g.cols(), f % g.cols());
    }
    return x;
}

Field Unknowns::unpack(const Eigen::VectorXd& x) const {
    Field u = g.zeros();
    for (int f = 0; f < n_full; ++f) u(f / g.cols(), f % g.cols()) = x[full_to_red[f]];
    return u;
}

std::vector<int> OperatorAssembly::rows_with(RowTag t) const {
    std::vector<int> out;
    for (int r = 0; r < static_cast<int>(row_tags.size()); ++r)
        if (row_tags[r] == t) out.push_back(r);
    return out;
}

const char* row_tag_name(RowTag t) {
    switch (t) {
        case RowTag::Interior: return "interior";
        case RowTag::B1: return "B1";
        case RowTag::B2: return "B2";
    }
    return "?";
}

std::vector<RowTag> default_row_tags(const Unknowns& U) {
    const ParamGrid& g = U.g;
    std::vector<RowTag> tags(U.n_red, RowTag::Interior);
    for (int r = 0; r < U.n_red; ++r) {
        const int p = U.red_to_full[r] / g.cols();
        const int i = p - ParamGrid::kGhost;
        if (i >= g.n_s) tags[r] = (i == g.n_s) ? RowTag::B1 : RowTag::B2;
        if (i < 0) tags[r] = (i == -1) ? RowTag::B1 : RowTag::B2;
    }
    return tags;
}

std::pair<int, int> boundary_ghost_rows(const Unknowns& U, int i_boundary, int j) {
    const int o = U.g.outward(i_boundary);
    const int p = U.g.p(i_boundary);
    return {U.red(p + o, j), U.red(p + 2 * o, j)};
}

}  // namespace wfb
