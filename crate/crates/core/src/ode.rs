//! Fixed-step integration and exact flows for `ẋ = Ax + Bu(t)`.

use crate::subspace::{Matrix, Vector};

/// One classical Runge–Kutta step.
pub fn rk4_step<F>(a: &Matrix, b: &Matrix, x: &Vector, t: f64, dt: f64, u: &F) -> Vector
where
    F: Fn(f64) -> Vector,
{
    let f = |t: f64, x: &Vector| -> Vector {
        if b.ncols() == 0 {
            a * x
        } else {
            a * x + b * u(t)
        }
    };
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)));
    let k3 = f(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)));
    let k4 = f(t + dt, &(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// `e^{Aτ}` by scaling and squaring with a Padé approximant.
pub fn flow_map(a: &Matrix, tau: f64) -> Matrix {
    assert!(tau >= 0.0, "flow_map needs a nonnegative time");
    if a.nrows() == 0 {
        return Matrix::zeros(0, 0);
    }
    (a * tau).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flow_map_at_zero_is_identity() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(flow_map(&a, 0.0), Matrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn flow_map_of_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0]));
        let f = flow_map(&a, 2f64.ln());
        assert_relative_eq!(f[(0, 0)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(f[(1, 1)], 0.25, max_relative = 1e-12);
        assert_eq!(f[(0, 1)], 0.0);
    }

    #[test]
    fn flow_map_of_nilpotent() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let f = flow_map(&a, 1.0);
        assert_relative_eq!(f, Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn rk4_matches_flow_map_with_fourth_order_error() {
        let a = Matrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -2.0, -1.0, 1.0, 0.0, 0.5, -0.3]);
        let b = Matrix::zeros(3, 0);
        let x0 = Vector::from_vec(vec![1.0, -1.0, 0.5]);
        let exact = flow_map(&a, 1.0) * &x0;
        let err = |steps: usize| {
            let dt = 1.0 / steps as f64;
            let mut x = x0.clone();
            for k in 0..steps {
                x = rk4_step(&a, &b, &x, k as f64 * dt, dt, &|_| Vector::zeros(0));
            }
            (x - &exact).norm()
        };
        let ratio = err(20) / err(40);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }
}
