//! Uniform minibatch draws over a space-time or time-only domain.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// `[x_lo, x_hi] × [0, T]`, or `[0, T]` alone for ordinary differential
/// and integral equations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainBox {
    space: Option<(f64, f64)>,
    t_max: f64,
}

impl DomainBox {
    pub fn space_time(x_lo: f64, x_hi: f64, t_max: f64) -> Result<Self> {
        if !(x_lo < x_hi) {
            return Err(Error::Domain(format!("empty spatial interval [{x_lo}, {x_hi}]")));
        }
        Self::check_t(t_max)?;
        Ok(Self {
            space: Some((x_lo, x_hi)),
            t_max,
        })
    }

    pub fn time_only(t_max: f64) -> Result<Self> {
        Self::check_t(t_max)?;
        Ok(Self { space: None, t_max })
    }

    fn check_t(t_max: f64) -> Result<()> {
        if t_max > 0.0 && t_max.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("time horizon must be positive, got {t_max}")))
        }
    }

    pub fn space(&self) -> Option<(f64, f64)> {
        self.space
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Columns of a sample: 2 for space-time, 1 for time-only.
    pub fn dim(&self) -> usize {
        if self.space.is_some() {
            2
        } else {
            1
        }
    }

    fn spatial(&self) -> Result<(f64, f64)> {
        self.space
            .ok_or_else(|| Error::Usage("time-only domain has no spatial boundary".into()))
    }

    /// `(x, t)` rows uniform on the box, or `t` rows for a time-only box.
    pub fn sample_interior(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        check_n(n)?;
        let t = Tensor::uniform(rng, n, 1, 0.0, self.t_max)?;
        match self.space {
            Some((lo, hi)) => {
                let x = Tensor::uniform(rng, n, 1, lo, hi)?;
                Tensor::concat_cols(&[&x, &t])
            }
            None => Ok(t),
        }
    }

    /// Rows on the left and right walls with uniform times.
    pub fn sample_boundary(&self, rng: &mut Rng, n: usize) -> Result<(Tensor, Tensor)> {
        check_n(n)?;
        let (lo, hi) = self.spatial()?;
        let wall = |rng: &mut Rng, x: f64| -> Result<Tensor> {
            let t = Tensor::uniform(rng, n, 1, 0.0, self.t_max)?;
            Tensor::concat_cols(&[&Tensor::full(n, 1, x), &t])
        };
        let left = wall(rng, lo)?;
        let right = wall(rng, hi)?;
        Ok((left, right))
    }

    /// Rows at `t = 0`; a time-only box yields a column of zeros without
    /// consuming randomness.
    pub fn sample_initial(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        check_n(n)?;
        match self.space {
            Some((lo, hi)) => {
                let x = Tensor::uniform(rng, n, 1, lo, hi)?;
                Tensor::concat_cols(&[&x, &Tensor::zeros(n, 1)])
            }
            None => Ok(Tensor::zeros(n, 1)),
        }
    }

    pub fn contains(&self, row: &[f64]) -> bool {
        let t = *row.last().unwrap_or(&f64::NAN);
        let t_ok = (0.0..=self.t_max).contains(&t);
        match self.space {
            Some((lo, hi)) => row.len() == 2 && t_ok && (lo..=hi).contains(&row[0]),
            None => row.len() == 1 && t_ok,
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::Usage("sample size must be at least 1".into()))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    use super::Rng;

    fn heat() -> DomainBox {
        DomainBox::space_time(0.0, PI, 3.0).unwrap()
    }

    #[test]
    fn invalid_boxes() {
        assert!(DomainBox::space_time(1.0, 1.0, 1.0).is_err());
        assert!(DomainBox::space_time(0.0, 1.0, 0.0).is_err());
        assert!(DomainBox::time_only(-1.0).is_err());
        assert!(heat().sample_interior(&mut Rng::new(0), 0).is_err());
    }

    #[test]
    fn interior_inside_and_centered() {
        let mut rng = Rng::new(3);
        let s = heat().sample_interior(&mut rng, 100_000).unwrap();
        assert_eq!(s.shape(), (100_000, 2));
        for r in 0..s.rows() {
            assert!(heat().contains(&[s.get(r, 0), s.get(r, 1)]));
        }
        assert!((s.col(0).unwrap().mean() - PI / 2.0).abs() < 0.02);
        assert_eq!(heat().sample_interior(&mut rng, 1).unwrap().shape(), (1, 2));
    }

    #[test]
    fn boundary_walls_pinned() {
        let mut rng = Rng::new(5);
        let (l, r) = heat().sample_boundary(&mut rng, 32).unwrap();
        for i in 0..32 {
            assert_eq!(l.get(i, 0), 0.0);
            assert_eq!(r.get(i, 0), PI);
        }
        assert_ne!(l.col(1).unwrap(), r.col(1).unwrap());
        assert!(DomainBox::time_only(1.0).unwrap().sample_boundary(&mut rng, 2).is_err());
    }

    #[test]
    fn initial_rows_at_time_zero() {
        let mut rng = Rng::new(9);
        let s = heat().sample_initial(&mut rng, 64).unwrap();
        for r in 0..64 {
            assert_eq!(s.get(r, 1), 0.0);
            assert!((0.0..=PI).contains(&s.get(r, 0)));
        }
        let ode = DomainBox::time_only(1.0).unwrap().sample_initial(&mut rng, 4).unwrap();
        assert_eq!(ode, Tensor::zeros(4, 1));
    }

    #[test]
    fn time_only_interior_is_a_column() {
        let b = DomainBox::time_only(30.0).unwrap();
        let s = b.sample_interior(&mut Rng::new(1), 10).unwrap();
        assert_eq!(s.shape(), (10, 1));
        assert!(s.data().iter().all(|&t| (0.0..=30.0).contains(&t)));
    }

    proptest! {
        #[test]
        fn consecutive_draws_differ(seed in any::<u64>(), n in 16usize..64) {
            let mut rng = Rng::new(seed);
            let a = heat().sample_interior(&mut rng, n).unwrap();
            let b = heat().sample_interior(&mut rng, n).unwrap();
            prop_assert_ne!(a, b);
        }

        #[test]
        fn samples_stay_in_box(seed in any::<u64>(), lo in -5.0f64..0.0, w in 0.1f64..5.0, t in 0.1f64..10.0) {
            let b = DomainBox::space_time(lo, lo + w, t).unwrap();
            let mut rng = Rng::new(seed);
            let i = b.sample_interior(&mut rng, 20).unwrap();
            let (l, r) = b.sample_boundary(&mut rng, 20).unwrap();
            let init = b.sample_initial(&mut rng, 20).unwrap();
            for s in [&i, &l, &r, &init] {
                for row in 0..20 {
                    prop_assert!(b.contains(&[s.get(row, 0), s.get(row, 1)]));
                }
            }
        }
    }
}
