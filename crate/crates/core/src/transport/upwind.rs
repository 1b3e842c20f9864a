//! First-order upwind finite-volume update and junction mixing.

use serde::{Deserialize, Serialize};

use crate::error::TransportError;

/// Cell-averaged hydrogen mass fraction on a uniform grid over `[0, length_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionField {
    pub pipe_id: String,
    pub length_m: f64,
    pub values: Vec<f64>,
}

impl FractionField {
    pub fn new(pipe_id: impl Into<String>, length_m: f64, values: Vec<f64>) -> Self {
        Self {
            pipe_id: pipe_id.into(),
            length_m,
            values,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        self.length_m / self.values.len() as f64
    }

    /// Index of the cell containing position `x` (meters); the right edge maps to the last cell.
    pub fn cell_of(&self, x: f64) -> usize {
        cell_index(x / self.length_m, self.values.len())
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    pub fn outlet(&self) -> f64 {
        *self.values.last().expect("field has cells")
    }
}

/// Cell containing relative position `x_rel` on a grid of `cells` cells.
pub fn cell_index(x_rel: f64, cells: usize) -> usize {
    ((x_rel * cells as f64).floor().max(0.0) as usize).min(cells - 1)
}

/// Courant numbers this far above one are treated as rounding noise.
const COURANT_SLACK: f64 = 1e-9;

pub(crate) fn courant(v: f64, dt: f64, dx: f64, context: &str) -> Result<f64, TransportError> {
    if !(v >= 0.0) {
        return Err(TransportError::NegativeVelocity(v));
    }
    let c = v * dt / dx;
    if c > 1.0 + COURANT_SLACK {
        return Err(TransportError::Cfl {
            context: context.to_string(),
            courant: c,
        });
    }
    Ok(c.min(1.0))
}

/// Advance `values` by one upwind step at Courant number `c` in place.
///
/// Each update is a convex combination of the cell and its upstream
/// neighbour; the result is clamped to that pair's range so rounding never
/// leaves it.
pub(crate) fn upwind_in_place(values: &mut [f64], c: f64, inlet: f64) {
    if c == 0.0 {
        return;
    }
    let mut upstream = inlet;
    for w in values.iter_mut() {
        let old = *w;
        let (lo, hi) = if old < upstream { (old, upstream) } else { (upstream, old) };
        *w = (old - c * (old - upstream)).clamp(lo, hi);
        upstream = old;
    }
}

/// One explicit upwind step of `dw/dt + v dw/dx = 0` with inlet value at `x = 0`.
pub fn step_upwind(
    field: &FractionField,
    v: f64,
    dt: f64,
    inlet_fraction: f64,
) -> Result<FractionField, TransportError> {
    if !(0.0..=1.0).contains(&inlet_fraction) {
        return Err(TransportError::FractionOutOfRange(inlet_fraction));
    }
    let c = courant(v, dt, field.dx(), &format!("pipe `{}`", field.pipe_id))?;
    let mut next = field.clone();
    upwind_in_place(&mut next.values, c, inlet_fraction);
    Ok(next)
}

/// Mass-weighted mixing of incoming streams at a node.
///
/// Each stream is `(mass_flow_rate_kg_s, fraction)`. Returns
/// `sum(m_i w_i) / sum(m_i)` over inflows plus the optional injection.
pub fn mix_at_node(inflows: &[(f64, f64)], injection: Option<(f64, f64)>) -> Result<f64, TransportError> {
    let streams = inflows.iter().chain(injection.as_ref());
    let mut mass = 0.0;
    let mut hydrogen = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut any = false;
    for &(m, w) in streams {
        if !(m > 0.0) || !m.is_finite() {
            return Err(TransportError::NonPositiveFlow(m));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(TransportError::FractionOutOfRange(w));
        }
        any = true;
        mass += m;
        hydrogen += m * w;
        lo = lo.min(w);
        hi = hi.max(w);
    }
    if !any {
        return Err(TransportError::EmptyMix);
    }
    Ok((hydrogen / mass).clamp(lo, hi))
}
