#pragma once

#include <Eigen/Sparse>
#include <string>
#include <vector>

#include "wfb/grid.hpp"

namespace wfb {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Independent grid unknowns: every padded node except the disk's pole ghosts,
// which are copies of mirrored nodes.
struct Unknowns {
    ParamGrid g;
    int n_full = 0, n_red = 0;
    std::vector<int> red_to_full, full_to_red;  // full_to_red is the mirror's index on pole ghosts
    SpMat P;  // full x red, prolongation with pole mirroring
    SpMat R;  // red x full, restriction

    explicit Unknowns(const ParamGrid& grid);
    Unknowns() = default;

    int full(int p, int j) const { return p * g.cols() + j; }
    Eigen::VectorXd pack(const Field& u) const;
    Field unpack(const Eigen::VectorXd& x) const;
    // reduced index of the node at padded row p, column j
    int red(int p, int j) const { return full_to_red[full(p, j)]; }
};

enum class RowTag { Interior, B1, B2 };

struct OperatorAssembly {
    ParamGrid grid;
    SpMat matrix;  // over reduced unknowns
    std::vector<RowTag> row_tags;
    std::string chart_id;
    std::string method;

    std::vector<int> rows_with(RowTag t) const;
};

const char* row_tag_name(RowTag t);

// Tags of the reduced unknowns: real rows are interior, the first ghost layer
// past a boundary row carries B1 and the second B2.
std::vector<RowTag> default_row_tags(const Unknowns& U);

// Boundary node k's ghost indices (B1 row, B2 row) in reduced numbering; the
// boundary node order matches boundary_frame.
std::pair<int, int> boundary_ghost_rows(const Unknowns& U, int i_boundary, int j);

}  // namespace wfb
