//! One-dimensional searches on unimodal functions.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Minimizer of a unimodal `f` on `[lo, hi]`, to absolute width `tol`.
pub fn golden_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // Compare the bracket ends too so a monotone f returns the boundary.
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    let (flo, fhi) = (f(lo), f(hi));
    if flo < fm && flo <= fhi {
        lo
    } else if fhi < fm {
        hi
    } else {
        mid
    }
}

/// Maximizer of a concave `f` on `[lo, hi]`.
pub fn golden_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    golden_min(|x| -f(x), lo, hi, tol)
}

/// Root of a nondecreasing `f` on `[lo, hi]` by bisection: the returned `x`
/// brackets the sign change to width `tol`. Returns `lo` if `f(lo) >= 0`
/// and `hi` if `f(hi) <= 0`.
pub fn bisect_increasing(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    if f(lo) >= 0.0 {
        return lo;
    }
    if f(hi) <= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Sign change of `f` inside `[lo, hi]` given `f(lo)` and `f(hi)` of
/// opposite signs, by Illinois-modified regula falsi with a bisection step
/// whenever the bracket fails to halve. Works for monotone `f` with jumps.
pub fn illinois_root(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    f_lo: f64,
    f_hi: f64,
    xtol: f64,
) -> f64 {
    let (mut a, mut b, mut fa, mut fb) = (lo, hi, f_lo, f_hi);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    let mut width = b - a;
    for it in 0..300 {
        if b - a <= xtol {
            break;
        }
        let mut x = (a * fb - b * fa) / (fb - fa);
        let force_bisect = it % 3 == 2 && (b - a) > 0.5 * width;
        if force_bisect || !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        if it % 3 == 2 {
            width = b - a;
        }
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx > 0.0) == (fa > 0.0) {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let x = golden_min(|x| (x - 1.25).powi(2), -3.0, 7.0, 1e-10);
        assert!((x - 1.25).abs() < 1e-8);
    }

    #[test]
    fn monotone_returns_boundary() {
        assert_eq!(golden_min(|x| x, 0.0, 1.0, 1e-9), 0.0);
        assert_eq!(golden_max(|x| x, 0.0, 1.0, 1e-9), 1.0);
    }

    #[test]
    fn bisection_root() {
        let r = bisect_increasing(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
        assert_eq!(bisect_increasing(|x| x + 1.0, 0.0, 1.0, 1e-9), 0.0);
    }

    #[test]
    fn illinois_smooth_and_jump() {
        let f = |x: f64| x * x * x - 2.0;
        let r = illinois_root(f, 0.0, 2.0, f(0.0), f(2.0), 1e-15);
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
        let g = |x: f64| if x < 0.3 { 1.0 - x } else { -0.1 - x };
        let r = illinois_root(g, 0.0, 1.0, g(0.0), g(1.0), 1e-13);
        assert!((r - 0.3).abs() < 1e-12);
        let mut count = 0;
        let h = |x: f64| {
            count += 1;
            (1.0 - x).exp() - 1.0
        };
        illinois_root(h, 0.0, 5.0, 1.718281828459045, (-4f64).exp() - 1.0, 1e-14);
        assert!(count < 40, "{count} evaluations");
    }
}
