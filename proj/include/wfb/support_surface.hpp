#pragma once

#include <functional>
#include <limits>
#include <string>

#include "wfb/grid.hpp"

namespace wfb {

// Level function F with S = {F = 0}; the unoriented normal is grad F / |grad F|.
struct LevelFunction {
    std::function<double(const Vec3&)> value;
    std::function<Vec3(const Vec3&)> gradient;
    std::function<Eigen::Matrix3d(const Vec3&)> hessian;
};

class SupportSurface {
public:
    enum class Kind { Plane, Sphere, Implicit };

    static SupportSurface plane(const Vec3& point, const Vec3& normal, int orientation = 1);
    static SupportSurface sphere(const Vec3& center, double radius, int orientation = 1);
    static SupportSurface implicit(LevelFunction F, double tubular_radius, int orientation = 1, std::string label = "implicit");
    // x^2/a^2 + y^2/b^2 + z^2/c^2 = 1
    static SupportSurface ellipsoid(double a, double b, double c, double tubular_radius, int orientation = 1);

    Kind kind() const { return kind_; }
    int orientation() const { return sign_; }
    void set_orientation(int s) { sign_ = s >= 0 ? 1 : -1; }
    double tubular_radius() const { return eps_; }
    std::string describe() const;

    double signed_distance(const Vec3& y) const;
    Vec3 project(const Vec3& y) const;
    // N^S at the projection of y, so that grad d^S(y) = normal(y)
    Vec3 normal(const Vec3& y) const;
    Eigen::Matrix3d distance_hessian(const Vec3& y) const;
    double shape_operator(const Vec3& y, const Vec3& v, const Vec3& w) const;

    struct Local {
        double d;
        Vec3 proj;
        Vec3 N;
        Eigen::Matrix3d hess;
    };
    // All tubular-coordinate data at once.
    Local local(const Vec3& y, bool with_hessian = true) const;

private:
    Kind kind_ = Kind::Plane;
    int sign_ = 1;
    double eps_ = std::numeric_limits<double>::infinity();
    Vec3 p_ = Vec3::Zero(), n_ = Vec3::UnitZ();
    double R_ = 1.0;
    LevelFunction F_;
    std::string label_;

    void check_tube(double d) const;
    Vec3 newton_project(const Vec3& y) const;
};

}  // namespace wfb
