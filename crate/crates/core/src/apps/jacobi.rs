//! 2D Jacobi heat diffusion with a fixed Dirichlet boundary ring.
//!
//! The copy variant runs two loops per iteration (stencil into `v`, copy
//! back into `u`); the non-copy variant swaps the roles of `u` and `v` on
//! alternate iterations.

use crate::error::{Error, Result};
use crate::mesh::{ArgSpec, DatasetId, Kernel, Range, Stencil};
use crate::queue::Runtime;

pub const CENTER_WEIGHT: f64 = 0.5;
pub const NEIGHBOR_WEIGHT: f64 = 0.125;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobiVariant {
    Copy,
    NonCopy,
}

/// Initial condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JacobiInit {
    /// Constant interior and boundary values.
    Constant { interior: f64, boundary: f64 },
    /// Deterministic non-smooth pattern, useful for catching ordering bugs.
    Pattern,
}

#[derive(Clone, Debug)]
pub struct Jacobi {
    pub variant: JacobiVariant,
    pub u: DatasetId,
    pub v: DatasetId,
    pub interior: Range,
    stencil: Stencil,
    iterations_enqueued: usize,
}

impl Jacobi {
    /// Declares the stencil and both fields on `rt` and initialises them.
    pub fn setup(rt: &mut Runtime, variant: JacobiVariant, init: JacobiInit) -> Result<Self> {
        let domain = *rt.domain();
        if domain.dim() != 2 || domain.extent(0) < 3 || domain.extent(1) < 3 {
            return Err(Error::InvalidRange(format!(
                "jacobi needs a 2D domain of at least 3x3, got {domain}"
            )));
        }
        let stencil = rt.declare_stencil(&[&[0, 0], &[1, 0], &[-1, 0], &[0, 1], &[0, -1]])?;
        let u = rt.declare_field("u", 8);
        let v = rt.declare_field("v", 8);
        let interior = domain.grow(&[-1, -1, 0], &[-1, -1, 0]);
        for id in [u, v] {
            rt.field_mut(id)?.fill_with(|p| {
                let inside = interior.contains(p);
                match init {
                    JacobiInit::Constant { interior, boundary } => {
                        if inside {
                            interior
                        } else {
                            boundary
                        }
                    }
                    JacobiInit::Pattern => {
                        let h = (p[0] * 7919 + p[1] * 104_729).rem_euclid(1009);
                        if inside {
                            h as f64 / 1009.0
                        } else {
                            1.0 + (p[0] + p[1]).rem_euclid(3) as f64
                        }
                    }
                }
            });
        }
        Ok(Self {
            variant,
            u,
            v,
            interior,
            stencil,
            iterations_enqueued: 0,
        })
    }

    fn stencil_kernel() -> Kernel {
        Kernel::new("jacobi_stencil", |c| {
            let s = CENTER_WEIGHT * c.get(0)
                + NEIGHBOR_WEIGHT
                    * (c.read(0, &[1, 0]) + c.read(0, &[-1, 0]) + c.read(0, &[0, 1]) + c.read(0, &[0, -1]));
            c.write(1, s);
        })
    }

    /// Queues `iters` iterations.
    pub fn enqueue(&mut self, rt: &mut Runtime, iters: usize) -> Result<()> {
        let id = Stencil::identity(2);
        for _ in 0..iters {
            match self.variant {
                JacobiVariant::Copy => {
                    rt.par_loop(
                        Self::stencil_kernel(),
                        self.interior,
                        vec![ArgSpec::read(self.u, &self.stencil), ArgSpec::write(self.v, 2)],
                        None,
                    )?;
                    rt.par_loop(
                        Kernel::new("jacobi_copy", |c| {
                            let x = c.get(0);
                            c.write(1, x);
                        }),
                        self.interior,
                        vec![ArgSpec::read(self.v, &id), ArgSpec::write(self.u, 2)],
                        None,
                    )?;
                }
                JacobiVariant::NonCopy => {
                    let (src, dst) = if self.iterations_enqueued % 2 == 0 {
                        (self.u, self.v)
                    } else {
                        (self.v, self.u)
                    };
                    rt.par_loop(
                        Self::stencil_kernel(),
                        self.interior,
                        vec![ArgSpec::read(src, &self.stencil), ArgSpec::write(dst, 2)],
                        None,
                    )?;
                }
            }
            self.iterations_enqueued += 1;
        }
        Ok(())
    }

    /// Dataset holding the newest solution after the iterations enqueued
    /// so far.
    pub fn solution(&self) -> DatasetId {
        match self.variant {
            JacobiVariant::NonCopy if self.iterations_enqueued % 2 == 1 => self.v,
            _ => self.u,
        }
    }

    /// Loops queued per iteration.
    pub fn loops_per_iteration(&self) -> usize {
        match self.variant {
            JacobiVariant::Copy => 2,
            JacobiVariant::NonCopy => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Block;
    use crate::queue::{ExecMode, RuntimeConfig};

    fn rt(n: usize, mode: ExecMode) -> Runtime {
        Runtime::new(
            Block::new("grid", 2).unwrap(),
            Range::zero_based(&[n, n]).unwrap(),
            RuntimeConfig {
                mode,
                ..RuntimeConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn constant_interior_is_stationary_away_from_boundary() {
        let mut r = rt(16, ExecMode::Untiled);
        let init = JacobiInit::Constant {
            interior: 1.0,
            boundary: 0.0,
        };
        let mut app = Jacobi::setup(&mut r, JacobiVariant::Copy, init).unwrap();
        app.enqueue(&mut r, 1).unwrap();
        assert_eq!(r.pending_len(), 2);
        r.flush().unwrap();
        let u = r.field(app.solution()).unwrap();
        assert_eq!(u.get(&[8, 8, 0]), Some(1.0));
        // next to the boundary one neighbour is 0
        assert_eq!(u.get(&[1, 8, 0]), Some(0.875));
        assert_eq!(u.get(&[0, 8, 0]), Some(0.0));
    }

    #[test]
    fn noncopy_enqueues_one_loop_per_iteration() {
        let mut r = rt(8, ExecMode::Untiled);
        let mut app = Jacobi::setup(&mut r, JacobiVariant::NonCopy, JacobiInit::Pattern).unwrap();
        app.enqueue(&mut r, 5).unwrap();
        assert_eq!(r.pending_len(), 5);
        assert_eq!(app.solution(), app.v);
    }

    #[test]
    fn tiled_matches_untiled() {
        for variant in [JacobiVariant::Copy, JacobiVariant::NonCopy] {
            let mut a = rt(24, ExecMode::Untiled);
            let mut b = rt(24, ExecMode::Tiled(vec![8, 4]));
            let mut ja = Jacobi::setup(&mut a, variant, JacobiInit::Pattern).unwrap();
            let mut jb = Jacobi::setup(&mut b, variant, JacobiInit::Pattern).unwrap();
            ja.enqueue(&mut a, 4).unwrap();
            jb.enqueue(&mut b, 4).unwrap();
            a.flush().unwrap();
            b.flush().unwrap();
            assert!(a.fields().bit_identical(b.fields()), "{variant:?}");
        }
    }

    #[test]
    fn tiny_domain_rejected() {
        let mut r = rt(2, ExecMode::Untiled);
        assert!(Jacobi::setup(&mut r, JacobiVariant::Copy, JacobiInit::Pattern).is_err());
    }
}
