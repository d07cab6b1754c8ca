#include "wfb/support_surface.hpp"

#include <cmath>
#include <sstream>

#include "wfb/errors.hpp"

namespace wfb {

SupportSurface SupportSurface::plane(const Vec3& point, const Vec3& normal, int orientation) {
    SupportSurface s;
    s.kind_ = Kind::Plane;
    s.p_ = point;
    s.n_ = normal.normalized();
    s.set_orientation(orientation);
    return s;
}

SupportSurface SupportSurface::sphere(const Vec3& center, double radius, int orientation) {
    if (!(radius > 0)) throw Error(ErrorFamily::Input, "InvalidSupport", "sphere radius must be positive");
    SupportSurface s;
    s.kind_ = Kind::Sphere;
    s.p_ = center;
    s.R_ = radius;
    s.eps_ = radius;
    s.set_orientation(orientation);
    return s;
}

SupportSurface SupportSurface::implicit(LevelFunction F, double tubular_radius, int orientation, std::string label) {
    if (!(tubular_radius > 0)) throw Error(ErrorFamily::Input, "InvalidSupport", "tubular radius must be positive");
    SupportSurface s;
    s.kind_ = Kind::Implicit;
    s.F_ = std::move(F);
    s.eps_ = tubular_radius;
    s.label_ = std::move(label);
    s.set_orientation(orientation);
    return s;
}

SupportSurface SupportSurface::ellipsoid(double a, double b, double c, double tubular_radius, int orientation) {
    const Vec3 q(1.0 / (a * a), 1.0 / (b * b), 1.0 / (c * c));
    LevelFunction F;
    F.value = [q](const Vec3& x) { return q.dot(x.cwiseProduct(x)) - 1.0; };
    F.gradient = [q](const Vec3& x) -> Vec3 { return 2.0 * q.cwiseProduct(x); };
    F.hessian = [q](const Vec3&) -> Eigen::Matrix3d { return (2.0 * q).asDiagonal(); };
    std::ostringstream os;
    os << "ellipsoid(" << a << ',' << b << ',' << c << ')';
    return implicit(std::move(F), tubular_radius, orientation, os.str());
}

std::string SupportSurface::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case Kind::Plane: os << "plane point=" << p_.transpose() << " normal=" << n_.transpose(); break;
        case Kind::Sphere: os << "sphere center=" << p_.transpose() << " radius=" << R_; break;
        case Kind::Implicit: os << label_ << " eps=" << eps_; break;
    }
    os << " orientation=" << sign_;
    return os.str();
}

void SupportSurface::check_tube(double d) const {
    if (!(std::abs(d) < eps_))
        throw Error(ErrorFamily::Support, "OutsideTubularNeighborhood",
                    "distance " + std::to_string(d) + " exceeds tubular radius " + std::to_string(eps_));
}

Vec3 SupportSurface::newton_project(const Vec3& y) const {
    // stationarity of |x - y|^2 on {F = 0}: x - y + lambda grad F(x) = 0, F(x) = 0
    Vec3 gy = F_.gradient(y);
    Vec3 x = y - F_.value(y) * gy / gy.squaredNorm();
    double lambda = (y - x).dot(F_.gradient(x)) / F_.gradient(x).squaredNorm();
    double res = 0.0;
    for (int it = 0; it < 50; ++it) {
        const Vec3 gx = F_.gradient(x);
        Eigen::Vector4d G;
        G.head<3>() = x - y + lambda * gx;
        G[3] = F_.value(x) / gx.norm();
        res = G.norm();
        if (res < 1e-12) return x;
        Eigen::Matrix4d J = Eigen::Matrix4d::Zero();
        J.topLeftCorner<3, 3>() = Eigen::Matrix3d::Identity() + lambda * F_.hessian(x);
        J.block<3, 1>(0, 3) = gx;
        J.block<1, 3>(3, 0) = gx.transpose() / gx.norm();
        const Eigen::Vector4d step = J.fullPivLu().solve(G);
        x -= step.head<3>();
        lambda -= step[3];
        if (!x.allFinite()) break;
    }
    std::ostringstream os;
    os << "projection did not converge from " << y.transpose() << "; last iterate " << x.transpose() << ", residual " << res;
    throw Error(ErrorFamily::Support, "NewtonDivergence", os.str());
}

SupportSurface::Local SupportSurface::local(const Vec3& y, bool with_hessian) const {
    Local L;
    switch (kind_) {
        case Kind::Plane: {
            const double dn = (y - p_).dot(n_);
            L.d = sign_ * dn;
            L.proj = y - dn * n_;
            L.N = sign_ * n_;
            L.hess.setZero();
            return L;
        }
        case Kind::Sphere: {
            const Vec3 r = y - p_;
            const double rn = r.norm();
            L.d = sign_ * (rn - R_);
            check_tube(L.d);
            const Vec3 u = r / rn;
            L.proj = p_ + R_ * u;
            L.N = sign_ * u;
            L.hess = sign_ * (Eigen::Matrix3d::Identity() - u * u.transpose()) / rn;
            return L;
        }
        case Kind::Implicit: {
            const Vec3 x = newton_project(y);
            const Vec3 gx = F_.gradient(x);
            const double gn = gx.norm();
            const Vec3 n = gx / gn;
            const double dF = (y - x).dot(n);
            L.d = sign_ * dF;
            check_tube(L.d);
            L.proj = x;
            L.N = sign_ * n;
            L.hess.setZero();
            if (with_hessian) {
                // grad d = N o Pi, so Hess d = dN . dPi restricted to the tangent plane
                Vec3 t1 = n.unitOrthogonal();
                Vec3 t2 = n.cross(t1);
                Eigen::Matrix<double, 3, 2> T;
                T.col(0) = t1;
                T.col(1) = t2;
                const Eigen::Matrix2d S = T.transpose() * F_.hessian(x) * T / gn;
                const Eigen::Matrix2d M = S * (Eigen::Matrix2d::Identity() + dF * S).inverse();
                L.hess = sign_ * T * M * T.transpose();
                L.hess = 0.5 * (L.hess + L.hess.transpose()).eval();
            }
            return L;
        }
    }
    return L;
}

double SupportSurface::signed_distance(const Vec3& y) const { return local(y, false).d; }
Vec3 SupportSurface::project(const Vec3& y) const { return local(y, false).proj; }
Vec3 SupportSurface::normal(const Vec3& y) const { return local(y, false).N; }
Eigen::Matrix3d SupportSurface::distance_hessian(const Vec3& y) const { return local(y, true).hess; }

double SupportSurface::shape_operator(const Vec3& y, const Vec3& v, const Vec3& w) const {
    return -v.dot(distance_hessian(y) * w);
}

}  // namespace wfb
