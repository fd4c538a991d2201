use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Linear corridor bound `b_min ≤ A p ≤ b_max` with `A = I − r̂ r̂ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorRows {
    pub a: Matrix3<f64>,
    pub b_min: Vector3<f64>,
    pub b_max: Vector3<f64>,
    pub origin: Vector3<f64>,
}

/// Bounds the offset of `p` from the axis through `start → end` to `±delta` per axis.
pub fn corridor_rows(start: &Vector3<f64>, end: &Vector3<f64>, delta: f64) -> Result<CorridorRows> {
    let d = end - start;
    let len = d.norm();
    if !(len > 1e-12) {
        return Err(Error::DegenerateSegment);
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidBounds(format!("corridor half-width must be positive, got {delta}")));
    }
    let r = d / len;
    let a = Matrix3::identity() - r * r.transpose();
    let center = a * start;
    let half = Vector3::repeat(delta);
    Ok(CorridorRows { a, b_min: center - half, b_max: center + half, origin: *start })
}

impl CorridorRows {
    /// `r_n`: offset of `p` from the corridor axis.
    pub fn offset(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.a * (p - self.origin)
    }

    /// Largest bound violation at `p` (0 when inside).
    pub fn violation(&self, p: &Vector3<f64>) -> f64 {
        let ap = self.a * p;
        (0..3)
            .map(|i| (ap[i] - self.b_max[i]).max(self.b_min[i] - ap[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Rows of `A` that carry a constraint (an axis-aligned segment leaves one row empty).
    pub fn active_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..3).filter(|&i| self.a.row(i).amax() > 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn axis_point_is_interior() {
        let c = corridor_rows(&Vector3::new(1.0, 2.0, 3.0), &Vector3::new(2.0, 3.0, 3.0), 0.8).unwrap();
        let p = Vector3::new(1.5, 2.5, 3.0);
        assert!(c.offset(&p).amax() < 1e-15);
        assert_eq!(c.violation(&p), 0.0);
        let ap = c.a * p;
        assert!((0..3).all(|i| ap[i] > c.b_min[i] && ap[i] < c.b_max[i]));
    }

    #[test]
    fn offset_along_x_axis() {
        let c = corridor_rows(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0), 0.8).unwrap();
        assert_relative_eq!(c.offset(&Vector3::new(0.5, 0.3, 0.0)), Vector3::new(0.0, 0.3, 0.0));
        // only y and z rows constrain
        assert_eq!(c.active_rows().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(c.b_max, Vector3::new(0.8, 0.8, 0.8));
        assert_relative_eq!(c.violation(&Vector3::new(7.0, 1.0, 0.0)), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn shifted_corridor_bounds() {
        let c = corridor_rows(&Vector3::new(3.0, 0.0, 1.0), &Vector3::new(3.0, 3.0, 1.0), 0.8).unwrap();
        assert_relative_eq!(c.b_min, Vector3::new(2.2, -0.8, 0.2), epsilon = 1e-15);
        assert_relative_eq!(c.b_max, Vector3::new(3.8, 0.8, 1.8), epsilon = 1e-15);
        assert_eq!(c.violation(&Vector3::new(3.7, 10.0, 1.5)), 0.0);
    }

    #[test]
    fn degenerate_segment() {
        let p = Vector3::new(1.0, 1.0, 1.0);
        assert!(matches!(corridor_rows(&p, &p, 0.8), Err(Error::DegenerateSegment)));
        assert!(corridor_rows(&p, &Vector3::zeros(), 0.0).is_err());
    }
}
