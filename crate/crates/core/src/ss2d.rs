//! Four-route 2-D selective scan (SS2D).
//!
//! Feature maps are channel-last `[h, w, c]`. A route flattens the grid
//! into a sequence of `h·w` positions:
//!
//! | route | order                          |
//! |-------|--------------------------------|
//! | 1     | row-major from the top-left    |
//! | 2     | column-major from the top-left |
//! | 3     | reverse of route 2             |
//! | 4     | reverse of route 1             |
//!
//! Each route runs its own S6 scan; the four outputs are mapped back to
//! the grid and summed.

use std::sync::Arc;

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::params::{Bound, ParamBuilder};
use crate::scan::{ProjectedInputs, ScanMode, ScanParams, ScanProjections};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// One scan route over an `h x w` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteOrder {
    route: u8,
    h: usize,
    w: usize,
    /// sequence index -> flat grid position
    perm: Vec<usize>,
    /// flat grid position -> sequence index
    inv: Vec<usize>,
}

impl RouteOrder {
    /// `route` is 1..=4.
    pub fn new(route: u8, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(dim_err!("route grid must be non-empty, got {h}x{w}"));
        }
        let row_major: Vec<usize> = (0..h * w).collect();
        let col_major: Vec<usize> = (0..w)
            .flat_map(|c| (0..h).map(move |r| r * w + c))
            .collect();
        let perm = match route {
            1 => row_major,
            2 => col_major,
            3 => col_major.into_iter().rev().collect(),
            4 => row_major.into_iter().rev().collect(),
            r => return Err(dim_err!("route id must be 1..=4, got {r}")),
        };
        let mut inv = vec![0; h * w];
        for (s, &p) in perm.iter().enumerate() {
            inv[p] = s;
        }
        Ok(Self {
            route,
            h,
            w,
            perm,
            inv,
        })
    }

    /// The four routes, in route-id order.
    pub fn all(h: usize, w: usize) -> Result<[Self; 4]> {
        Ok([
            Self::new(1, h, w)?,
            Self::new(2, h, w)?,
            Self::new(3, h, w)?,
            Self::new(4, h, w)?,
        ])
    }

    pub fn route(&self) -> u8 {
        self.route
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Grid position visited at sequence step `s`.
    pub fn position(&self, s: usize) -> usize {
        self.perm[s]
    }

    /// Sequence step at which grid position `p` is visited.
    pub fn step(&self, p: usize) -> usize {
        self.inv[p]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inv
    }

    /// Element gather index reading an `[h, w, c]` buffer in route order.
    fn expand_index(&self, c: usize) -> Arc<[usize]> {
        expand_rows(&self.perm, c)
    }

    /// Element gather index writing a route-ordered `[L, c]` buffer back to
    /// grid order.
    fn merge_index(&self, c: usize) -> Arc<[usize]> {
        expand_rows(&self.inv, c)
    }
}

fn expand_rows(rows: &[usize], c: usize) -> Arc<[usize]> {
    rows.iter()
        .flat_map(|&r| (0..c).map(move |k| r * c + k))
        .collect()
}

fn grid_dims<T: Scalar>(fm: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match fm.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        s => Err(dim_err!("feature map must be [h, w, c], got {s:?}")),
    }
}

/// Reads `fm: [h, w, c]` along each route, giving four `[h·w, c]` sequences.
pub fn scan_expand<T: Scalar>(fm: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let (h, w, c) = grid_dims(fm)?;
    let orders = RouteOrder::all(h, w)?;
    let one = |o: &RouteOrder| -> Result<Tensor<T>> {
        let data = o.expand_index(c).iter().map(|&i| fm.data()[i]).collect();
        Tensor::new(vec![h * w, c], data)
    };
    Ok([
        one(&orders[0])?,
        one(&orders[1])?,
        one(&orders[2])?,
        one(&orders[3])?,
    ])
}

/// Maps each route output back to the grid and sums them.
pub fn scan_merge<T: Scalar>(outputs: &[Tensor<T>], orders: &[RouteOrder]) -> Result<Tensor<T>> {
    let first = orders
        .first()
        .ok_or_else(|| dim_err!("scan_merge needs at least one route"))?;
    if outputs.len() != orders.len() {
        return Err(dim_err!(
            "{} route outputs for {} orders",
            outputs.len(),
            orders.len()
        ));
    }
    let (h, w) = first.grid();
    let c = match outputs[0].shape() {
        [_, c] => *c,
        s => return Err(dim_err!("route output must be [L, c], got {s:?}")),
    };
    let mut acc = vec![T::zero(); h * w * c];
    for (out, order) in outputs.iter().zip(orders) {
        if order.grid() != (h, w) || out.shape() != [h * w, c] {
            return Err(dim_err!(
                "route {} output {:?} does not match a {h}x{w}x{c} grid",
                order.route(),
                out.shape()
            ));
        }
        for (p, a) in acc.chunks_mut(c).enumerate() {
            let s = order.step(p);
            for (k, v) in a.iter_mut().enumerate() {
                *v = *v + out.data()[s * c + k];
            }
        }
    }
    Tensor::new(vec![h, w, c], acc)
}

/// Graph counterpart of [`scan_expand`] for a single route.
pub fn expand_route<T: Scalar>(g: &mut Graph<T>, x: Var, order: &RouteOrder) -> Result<Var> {
    let (h, w, c) = match g.shape(x) {
        [h, w, c] => (*h, *w, *c),
        s => return Err(dim_err!("feature map must be [h, w, c], got {s:?}")),
    };
    if order.grid() != (h, w) {
        return Err(dim_err!(
            "route grid {:?} does not match map {h}x{w}",
            order.grid()
        ));
    }
    g.gather(x, order.expand_index(c), vec![h * w, c])
}

/// Graph counterpart of [`scan_merge`].
pub fn merge_routes<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &[Var],
    orders: &[RouteOrder],
) -> Result<Var> {
    if outputs.is_empty() || outputs.len() != orders.len() {
        return Err(dim_err!(
            "{} route outputs for {} orders",
            outputs.len(),
            orders.len()
        ));
    }
    let (h, w) = orders[0].grid();
    let mut acc: Option<Var> = None;
    for (&y, order) in outputs.iter().zip(orders) {
        let c = match g.shape(y) {
            [l, c] if *l == h * w => *c,
            s => return Err(dim_err!("route output must be [{}, c], got {s:?}", h * w)),
        };
        let back = g.gather(y, order.merge_index(c), vec![h, w, c])?;
        acc = Some(match acc {
            None => back,
            Some(a) => g.add(a, back)?,
        });
    }
    Ok(acc.expect("non-empty"))
}

/// Whether the four routes share the Δ/B/C input projections.
/// `A` and `D` are always per route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionSharing {
    #[default]
    PerRoute,
    Shared,
}

impl ProjectionSharing {
    pub fn name(self) -> &'static str {
        match self {
            Self::PerRoute => "per-route",
            Self::Shared => "shared",
        }
    }
}

impl std::str::FromStr for ProjectionSharing {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-route" => Ok(Self::PerRoute),
            "shared" => Ok(Self::Shared),
            _ => Err(crate::Error::Config(format!(
                "unknown projection sharing '{s}' (per-route | shared)"
            ))),
        }
    }
}

/// Parameters of one SS2D layer over `d` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ss2dParams {
    pub routes: [ScanParams; 4],
    pub sharing: ProjectionSharing,
}

impl Ss2dParams {
    pub fn init<T: Scalar, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        d: usize,
        h: usize,
        sharing: ProjectionSharing,
    ) -> Result<Self> {
        let shared = match sharing {
            ProjectionSharing::Shared => {
                Some(pb.scoped("proj", |pb| ScanProjections::init(pb, d, h))?)
            }
            ProjectionSharing::PerRoute => None,
        };
        let mut routes = Vec::with_capacity(4);
        for r in 1..=4 {
            routes.push(pb.scoped(&format!("route{r}"), |pb| {
                ScanParams::init(pb, d, h, shared)
            })?);
        }
        Ok(Self {
            routes: routes.try_into().expect("four routes"),
            sharing,
        })
    }

    pub fn channels(&self) -> usize {
        self.routes[0].d
    }

    pub fn state_size(&self) -> usize {
        self.routes[0].h
    }

    /// The same parameters with route roles 1↔4 and 2↔3 exchanged.
    pub fn swapped(&self) -> Self {
        let [r1, r2, r3, r4] = self.routes;
        Self {
            routes: [r4, r3, r2, r1],
            sharing: self.sharing,
        }
    }

    /// Expand → project and scan each route → merge, on `x: [h, w, d]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        mode: ScanMode,
    ) -> Result<Var> {
        let (h, w, c) = match g.shape(x) {
            [h, w, c] => (*h, *w, *c),
            s => return Err(dim_err!("SS2D input must be [h, w, c], got {s:?}")),
        };
        if c != self.channels() {
            return Err(dim_err!(
                "SS2D built for {} channels, input has {c}",
                self.channels()
            ));
        }
        let orders = RouteOrder::all(h, w)?;
        // Shared projections act per token, so they commute with the route
        // reordering: project the map once and reorder the results.
        let shared = match self.sharing {
            ProjectionSharing::Shared => Some(self.routes[0].proj.project(g, p, x)?),
            ProjectionSharing::PerRoute => None,
        };
        let mut outs = Vec::with_capacity(4);
        for (params, order) in self.routes.iter().zip(&orders) {
            let seq = expand_route(g, x, order)?;
            let y = match shared {
                Some(pr) => {
                    let proj = ProjectedInputs {
                        delta: expand_route(g, pr.delta, order)?,
                        b: expand_route(g, pr.b, order)?,
                        c: expand_route(g, pr.c, order)?,
                    };
                    params.scan_projected(g, p, seq, proj, mode)?
                }
                None => params.forward(g, p, seq, mode)?,
            };
            outs.push(y);
        }
        merge_routes(g, &outs, &orders)
    }
}
