// dual.hpp
//
// Forward-mode dual numbers. Nesting Dual<Dual<double>> gives second-order
// directional derivatives, which is how Hessian-vector products are formed
// (forward pass over the reverse-mode gradient code).

#pragma once

#include <cmath>
#include <type_traits>

#include <Eigen/Core>

namespace nbv {

template <typename T>
struct Dual {
  T v{};  // value
  T d{};  // tangent

  constexpr Dual() = default;
  constexpr Dual(const T& value) : v(value), d(T(0)) {}
  constexpr Dual(const T& value, const T& tangent) : v(value), d(tangent) {}
  template <typename U,
            std::enable_if_t<std::is_arithmetic_v<U> && !std::is_same_v<U, T>, int> = 0>
  constexpr Dual(U value) : v(T(value)), d(T(0)) {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  Dual& operator/=(const Dual& o) {
    const T inv = T(1) / o.v;
    d = (d - v * inv * o.d) * inv;
    v *= inv;
    return *this;
  }
};

template <typename T> struct is_dual : std::false_type {};
template <typename T> struct is_dual<Dual<T>> : std::true_type {};

// Primal value of a possibly nested dual, for control flow (sorting, culling).
inline double value_of(double x) { return x; }
template <typename T>
double value_of(const Dual<T>& x) { return value_of(x.v); }

template <typename T> Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <typename T> Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <typename T> Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <typename T> Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <typename T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <typename T> Dual<T> operator+(const Dual<T>& a) { return a; }

#define NBV_DUAL_MIXED_OP(OP)                                                   \
  template <typename T, typename U,                                             \
            std::enable_if_t<std::is_arithmetic_v<U>, int> = 0>                 \
  Dual<T> operator OP(const Dual<T>& a, U b) { return a OP Dual<T>(T(b)); }     \
  template <typename T, typename U,                                             \
            std::enable_if_t<std::is_arithmetic_v<U>, int> = 0>                 \
  Dual<T> operator OP(U a, const Dual<T>& b) { return Dual<T>(T(a)) OP b; }
NBV_DUAL_MIXED_OP(+)
NBV_DUAL_MIXED_OP(-)
NBV_DUAL_MIXED_OP(*)
NBV_DUAL_MIXED_OP(/)
#undef NBV_DUAL_MIXED_OP

#define NBV_DUAL_CMP(OP)                                                                 \
  template <typename T>                                                                  \
  bool operator OP(const Dual<T>& a, const Dual<T>& b) { return value_of(a) OP value_of(b); } \
  template <typename T, typename U, std::enable_if_t<std::is_arithmetic_v<U>, int> = 0>  \
  bool operator OP(const Dual<T>& a, U b) { return value_of(a) OP double(b); }           \
  template <typename T, typename U, std::enable_if_t<std::is_arithmetic_v<U>, int> = 0>  \
  bool operator OP(U a, const Dual<T>& b) { return double(a) OP value_of(b); }
NBV_DUAL_CMP(<)
NBV_DUAL_CMP(>)
NBV_DUAL_CMP(<=)
NBV_DUAL_CMP(>=)
NBV_DUAL_CMP(==)
NBV_DUAL_CMP(!=)
#undef NBV_DUAL_CMP

template <typename T>
Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  const T e = exp(a.v);
  return {e, e * a.d};
}
template <typename T>
Dual<T> log(const Dual<T>& a) {
  using std::log;
  return {log(a.v), a.d / a.v};
}
template <typename T>
Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.v);
  return {s, a.d / (T(2) * s)};
}
template <typename T>
Dual<T> tanh(const Dual<T>& a) {
  using std::tanh;
  const T th = tanh(a.v);
  return {th, (T(1) - th * th) * a.d};
}
template <typename T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {sin(a.v), cos(a.v) * a.d};
}
template <typename T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {cos(a.v), -sin(a.v) * a.d};
}
template <typename T>
Dual<T> abs(const Dual<T>& a) {
  return value_of(a) < 0.0 ? -a : a;
}
template <typename T>
bool isfinite(const Dual<T>& a) {
  using std::isfinite;
  return isfinite(a.v) && isfinite(a.d);
}

// Sign with sign(0) = 0, usable for both plain and dual scalars.
template <typename T>
T sign_of(const T& x) {
  const double v = value_of(x);
  return T(v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
}

template <typename T>
T logistic(const T& x) {
  using std::exp;
  return T(1) / (T(1) + exp(-x));
}

}  // namespace nbv

namespace Eigen {
template <typename T>
struct NumTraits<nbv::Dual<T>> : NumTraits<double> {
  using Real = nbv::Dual<T>;
  using NonInteger = nbv::Dual<T>;
  using Nested = nbv::Dual<T>;
  using Literal = nbv::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2,
    AddCost = 4,
    MulCost = 6
  };
};
}  // namespace Eigen
