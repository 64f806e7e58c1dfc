//! A synthetic multi-loop hydro-style chain.
//!
//! One iteration is sixteen loops over nine datasets: an equation of state,
//! four one-point-wide boundary loops, an artificial viscosity, staggered
//! fluxes read through one-sided stencils, acceleration and energy
//! updates, two directional advection sweep pairs, and a closing sum
//! reduction. The physics is not meant to be meaningful; the point is a
//! varied chain for the planner.

use crate::error::{Error, Result};
use crate::mesh::{ArgSpec, DatasetId, Kernel, Range, ReductionHandle, ReductionOp, Stencil};
use crate::queue::Runtime;

const GAMMA_M1: f64 = 0.4;
const DT: f64 = 0.01;

pub const LOOPS_PER_ITERATION: usize = 16;

#[derive(Clone, Debug)]
pub struct MiniHydro {
    pub rho: DatasetId,
    pub e: DatasetId,
    pub p: DatasetId,
    pub q: DatasetId,
    pub u: DatasetId,
    pub v: DatasetId,
    pub fx: DatasetId,
    pub fy: DatasetId,
    pub w: DatasetId,
    n: [i64; 2],
    st: Stencils,
}

#[derive(Clone, Debug)]
struct Stencils {
    id: Stencil,
    star: Stencil,
    east: Stencil,
    west: Stencil,
    north: Stencil,
    south: Stencil,
    x3: Stencil,
    y3: Stencil,
}

impl MiniHydro {
    pub fn setup(rt: &mut Runtime) -> Result<Self> {
        let domain = *rt.domain();
        if domain.dim() != 2 || domain.extent(0) < 4 || domain.extent(1) < 4 {
            return Err(Error::InvalidRange(format!(
                "mini-hydro needs a 2D domain of at least 4x4, got {domain}"
            )));
        }
        let st = Stencils {
            id: rt.declare_stencil(&[&[0, 0]])?,
            star: rt.declare_stencil(&[&[0, 0], &[1, 0], &[-1, 0], &[0, 1], &[0, -1]])?,
            east: rt.declare_stencil(&[&[0, 0], &[1, 0]])?,
            west: rt.declare_stencil(&[&[0, 0], &[-1, 0]])?,
            north: rt.declare_stencil(&[&[0, 0], &[0, 1]])?,
            south: rt.declare_stencil(&[&[0, 0], &[0, -1]])?,
            x3: rt.declare_stencil(&[&[-1, 0], &[0, 0], &[1, 0]])?,
            y3: rt.declare_stencil(&[&[0, -1], &[0, 0], &[0, 1]])?,
        };
        let mut decl = |name| rt.declare_field(name, 8);
        let (rho, e, p, q, u, v, fx, fy, w) = (
            decl("density"),
            decl("energy"),
            decl("pressure"),
            decl("viscosity"),
            decl("xvel"),
            decl("yvel"),
            decl("xflux"),
            decl("yflux"),
            decl("work"),
        );
        let hash = |p: &[i64; 3], salt: i64| {
            ((p[0] * 7919 + p[1] * 104_729 + salt * 31).rem_euclid(997)) as f64 / 997.0
        };
        rt.field_mut(rho)?.fill_with(|x| 1.0 + hash(x, 1));
        rt.field_mut(e)?.fill_with(|x| 2.0 + hash(x, 2));
        rt.field_mut(u)?.fill_with(|x| 0.2 * hash(x, 3) - 0.1);
        rt.field_mut(v)?.fill_with(|x| 0.2 * hash(x, 4) - 0.1);
        rt.field_mut(q)?.fill_with(|x| 0.01 * hash(x, 5));
        Ok(Self {
            rho,
            e,
            p,
            q,
            u,
            v,
            fx,
            fy,
            w,
            n: [domain.extent(0), domain.extent(1)],
            st,
        })
    }

    fn r(&self, x: (i64, i64), y: (i64, i64)) -> Range {
        Range::new(&[x, y]).expect("valid range")
    }

    /// Queues one iteration and returns the handle of its closing sum.
    pub fn enqueue_iteration(&self, rt: &mut Runtime) -> Result<ReductionHandle> {
        let [nx, ny] = self.n;
        let st = &self.st;
        let inner = self.r((1, nx - 1), (1, ny - 1));
        let read = |ds, s: &Stencil| ArgSpec::read(ds, s);
        let write = |ds| ArgSpec::write(ds, 2);

        rt.par_loop(
            Kernel::new("ideal_gas", |c| {
                let v = GAMMA_M1 * c.get(0) * c.get(1);
                c.write(2, v);
            }),
            inner,
            vec![read(self.rho, &st.id), read(self.e, &st.id), write(self.p)],
            None,
        )?;

        // Boundary pressure, extrapolated from the adjacent interior cell.
        let sides: [(&str, Range, &Stencil, [i64; 2]); 4] = [
            ("update_halo_left", self.r((0, 1), (1, ny - 1)), &st.east, [1, 0]),
            ("update_halo_right", self.r((nx - 1, nx), (1, ny - 1)), &st.west, [-1, 0]),
            ("update_halo_bottom", self.r((0, nx), (0, 1)), &st.north, [0, 1]),
            ("update_halo_top", self.r((0, nx), (ny - 1, ny)), &st.south, [0, -1]),
        ];
        for (name, range, s, off) in sides {
            rt.par_loop(
                Kernel::new(name, move |c| {
                    let v = GAMMA_M1 * c.read(0, &off) * c.read(1, &off);
                    c.write(2, v);
                }),
                range,
                vec![read(self.rho, s), read(self.e, s), write(self.p)],
                None,
            )?;
        }

        rt.par_loop(
            Kernel::new("viscosity", |c| {
                let gx = c.read(0, &[1, 0]) - c.read(0, &[-1, 0]);
                let gy = c.read(0, &[0, 1]) - c.read(0, &[0, -1]);
                let v = 0.05 * c.get(1) * (gx.abs() + gy.abs());
                c.write(2, v);
            }),
            inner,
            vec![read(self.p, &st.star), read(self.rho, &st.id), write(self.q)],
            None,
        )?;

        rt.par_loop(
            Kernel::new("flux_x", |c| {
                let v = 0.5 * (c.get(0) + c.get(1) + c.read(0, &[-1, 0]) + c.read(1, &[-1, 0]));
                c.write(2, v);
            }),
            self.r((1, nx), (1, ny - 1)),
            vec![read(self.p, &st.west), read(self.q, &st.west), write(self.fx)],
            None,
        )?;
        rt.par_loop(
            Kernel::new("flux_y", |c| {
                let v = 0.5 * (c.get(0) + c.get(1) + c.read(0, &[0, -1]) + c.read(1, &[0, -1]));
                c.write(2, v);
            }),
            self.r((1, nx - 1), (1, ny)),
            vec![read(self.p, &st.south), read(self.q, &st.south), write(self.fy)],
            None,
        )?;

        rt.par_loop(
            Kernel::new("accel_x", |c| {
                let dv = DT * (c.read(0, &[1, 0]) - c.get(0)) / c.get(1);
                let u = c.get(2);
                c.write(2, u - dv);
            }),
            inner,
            vec![read(self.fx, &st.east), read(self.rho, &st.id), ArgSpec::read_write(self.u, 2)],
            None,
        )?;
        rt.par_loop(
            Kernel::new("accel_y", |c| {
                let dv = DT * (c.read(0, &[0, 1]) - c.get(0)) / c.get(1);
                let v = c.get(2);
                c.write(2, v - dv);
            }),
            inner,
            vec![read(self.fy, &st.north), read(self.rho, &st.id), ArgSpec::read_write(self.v, 2)],
            None,
        )?;

        rt.par_loop(
            Kernel::new("pdv", |c| {
                let div = 0.5 * (c.read(0, &[1, 0]) - c.read(0, &[-1, 0]))
                    + 0.5 * (c.read(1, &[0, 1]) - c.read(1, &[0, -1]));
                let de = -DT * c.get(2) * div / c.get(3);
                c.inc(4, de);
            }),
            inner,
            vec![
                read(self.u, &st.x3),
                read(self.v, &st.y3),
                read(self.p, &st.id),
                read(self.rho, &st.id),
                ArgSpec::increment(self.e, 2),
            ],
            None,
        )?;

        for (dir, s, vel, off) in [
            ("x", &st.x3, self.u, [1i64, 0]),
            ("y", &st.y3, self.v, [0, 1]),
        ] {
            let back = [-off[0], -off[1]];
            rt.par_loop(
                Kernel::new(&format!("advec_{dir}_flux"), move |c| {
                    let r = c.get(0);
                    let vel = c.get(1);
                    let grad = if vel > 0.0 {
                        r - c.read(0, &back)
                    } else {
                        c.read(0, &off) - r
                    };
                    c.write(2, r - DT * vel * grad);
                }),
                inner,
                vec![read(self.rho, s), read(vel, &st.id), write(self.w)],
                None,
            )?;
            rt.par_loop(
                Kernel::new(&format!("advec_{dir}_update"), |c| {
                    let v = 0.5 * (c.get(0) + c.get(1));
                    c.write(1, v);
                }),
                inner,
                vec![read(self.w, &st.id), ArgSpec::read_write(self.rho, 2)],
                None,
            )?;
        }

        let h = rt.par_loop(
            Kernel::new("field_summary", |c| {
                let m = c.get(0) * c.get(1);
                c.reduce(m)
            }),
            inner,
            vec![read(self.rho, &st.id), read(self.e, &st.id)],
            Some(ReductionOp::Sum),
        )?;
        Ok(h.expect("sum reduction requested"))
    }
}
