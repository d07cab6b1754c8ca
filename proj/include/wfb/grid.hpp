#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace wfb {

enum class Topology { Disk, Annulus };

// Scalar fields live on the padded grid: rows are s-indices including two ghost
// layers on each side, columns are phi-indices.
using Field = Eigen::ArrayXXd;
using VField = std::array<Field, 3>;
using Vec3 = Eigen::Vector3d;

struct ParamGrid {
    static constexpr int kGhost = 2;

    Topology topology = Topology::Disk;
    int n_s = 0;
    int n_phi = 0;
    bool axisymmetric = false;

    // Validates the invariants and returns the grid.
    static ParamGrid make(Topology topo, int n_s, int n_phi, bool axisymmetric);

    // Disk rows sit at s_i = (i + 1/2) h so that the pole is never a node and the
    // stencils can reach across it; the last row lands exactly on s = 1.
    double h() const;
    double s(int i) const;
    double phi(int j) const;

    int rows() const { return n_s + 2 * kGhost; }
    int cols() const { return n_phi; }
    int p(int i) const { return i + kGhost; }

    bool has_pole() const { return topology == Topology::Disk; }
    int mirror(int j) const;  // column of phi + pi
    std::vector<int> boundary_rows() const;
    int outward(int i) const;  // +1 at s = 1, -1 at s = 0 (annulus)

    double weight_s(int i) const;
    double weight_phi() const;

    Field zeros() const { return Field::Zero(rows(), cols()); }
    std::string describe() const;
    bool operator==(const ParamGrid& o) const {
        return topology == o.topology && n_s == o.n_s && n_phi == o.n_phi && axisymmetric == o.axisymmetric;
    }
};

// Finite differences in s and Fourier collocation in phi.
class Diff {
public:
    explicit Diff(const ParamGrid& g);

    const ParamGrid& grid() const { return g_; }

    // Central differences on padded rows [lo, hi]; other rows are zero.
    Field ds(const Field& u, int lo, int hi) const;
    Field dss(const Field& u, int lo, int hi) const;
    Field dp(const Field& u) const;
    Field dpp(const Field& u) const;

    const Eigen::MatrixXd& D1() const { return d1_; }
    const Eigen::MatrixXd& D2() const { return d2_; }

private:
    ParamGrid g_;
    Eigen::MatrixXd d1_, d2_;
};

// Periodic spectral differentiation matrix (Nyquist mode dropped for even n).
Eigen::MatrixXd fourier_d1(int n);
// Second-derivative counterpart; unlike D1 * D1 it keeps the Nyquist mode, which
// would otherwise be invisible to every phi-derivative.
Eigen::MatrixXd fourier_d2(int n);

// Pole ghosts are the same surface points seen from the opposite meridian.
void fill_pole_ghosts(const ParamGrid& g, Field& u);
void fill_pole_ghosts_position(const ParamGrid& g, VField& f);

// Per-node vector helpers for VField.
inline Vec3 at(const VField& f, int p, int j) { return {f[0](p, j), f[1](p, j), f[2](p, j)}; }
inline void put(VField& f, int p, int j, const Vec3& v) {
    f[0](p, j) = v.x();
    f[1](p, j) = v.y();
    f[2](p, j) = v.z();
}
VField vzeros(const ParamGrid& g);

// Axisymmetric fields store the phi = 0 meridian; phi derivatives of the
// position field are rotations about e3.
inline Vec3 ez_cross(const Vec3& v) { return {-v.y(), v.x(), 0.0}; }

// Max over the real rows.
double max_abs_real(const ParamGrid& g, const Field& u);

}  // namespace wfb
