#pragma once

namespace obsflow::ad {

/// Forward-mode dual number over scalar S. Nesting (Dual<Dual<...>>) yields
/// higher directional derivatives; arithmetic covers the polynomial fields
/// used by the observability analysis.
template <class S>
struct Dual {
  S v{};
  S d{};

  Dual() = default;
  Dual(double x) : v(x), d() {}  // NOLINT: implicit lift of constants
  Dual(const S& value, const S& deriv) : v(value), d(deriv) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
};

template <class S>
Dual<S> operator+(const Dual<S>& a, const Dual<S>& b) {
  return {a.v + b.v, a.d + b.d};
}
template <class S>
Dual<S> operator-(const Dual<S>& a, const Dual<S>& b) {
  return {a.v - b.v, a.d - b.d};
}
template <class S>
Dual<S> operator-(const Dual<S>& a) {
  return {-a.v, -a.d};
}
template <class S>
Dual<S> operator*(const Dual<S>& a, const Dual<S>& b) {
  return {a.v * b.v, a.v * b.d + a.d * b.v};
}

template <class S>
Dual<S> operator+(double a, const Dual<S>& b) {
  return Dual<S>(a) + b;
}
template <class S>
Dual<S> operator+(const Dual<S>& a, double b) {
  return a + Dual<S>(b);
}
template <class S>
Dual<S> operator-(double a, const Dual<S>& b) {
  return Dual<S>(a) - b;
}
template <class S>
Dual<S> operator-(const Dual<S>& a, double b) {
  return a - Dual<S>(b);
}
template <class S>
Dual<S> operator*(double a, const Dual<S>& b) {
  return {a * b.v, a * b.d};
}
template <class S>
Dual<S> operator*(const Dual<S>& a, double b) {
  return b * a;
}
template <class S>
Dual<S> operator/(const Dual<S>& a, double b) {
  return {a.v * (1.0 / b), a.d * (1.0 / b)};
}

inline double value_of(double x) { return x; }
template <class S>
double value_of(const Dual<S>& x) {
  return value_of(x.v);
}

}  // namespace obsflow::ad
