//! Bounded derivative-free scalar minimization: a log-spaced grid scan
//! followed by golden-section refinement around the best grid point.

use crate::error::{GpError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSearch {
    pub grid_points: usize,
    pub tol: f64,
    pub max_refine: usize,
}

impl Default for ScalarSearch {
    fn default() -> Self {
        ScalarSearch {
            grid_points: 20,
            tol: 1e-3,
            max_refine: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    /// Every evaluated `(x, value)` pair, in evaluation order.
    pub trace: Vec<(f64, f64)>,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

impl ScalarSearch {
    /// Minimizes `f` over `[lo, hi]` (`0 < lo <= hi`). Errors from `f` and
    /// non-finite values count as `+inf`.
    pub fn minimize<F>(&self, mut f: F, lo: f64, hi: f64) -> Result<Minimum>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(GpError::invalid(format!(
                "invalid search interval [{lo}, {hi}]"
            )));
        }
        if self.grid_points == 0 || !(self.tol > 0.0) {
            return Err(GpError::invalid(
                "search needs at least one grid point and a positive tolerance",
            ));
        }
        let mut trace = Vec::new();
        let mut eval = |x: f64, trace: &mut Vec<(f64, f64)>| {
            let v = match f(x) {
                Ok(v) if v.is_finite() => v,
                Ok(_) => f64::INFINITY,
                Err(e) => {
                    log::debug!("objective failed at {x}: {e}");
                    f64::INFINITY
                }
            };
            trace.push((x, v));
            v
        };

        let grid = if lo == hi {
            vec![lo]
        } else {
            log_grid(lo, hi, self.grid_points)
        };
        let values: Vec<f64> = grid.iter().map(|&x| eval(x, &mut trace)).collect();
        let best = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .ok_or_else(|| {
                GpError::OptimizationFailed(format!(
                    "objective is non-finite at every grid point in [{lo}, {hi}]"
                ))
            })?;

        let mut best_x = grid[best];
        let mut best_v = values[best];
        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(grid.len() - 1)];
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = eval(c, &mut trace);
        let mut fd = eval(d, &mut trace);
        let mut steps = 0;
        while b - a > self.tol && steps < self.max_refine {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = eval(c, &mut trace);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = eval(d, &mut trace);
            }
            steps += 1;
        }
        for &(x, v) in &trace[grid.len()..] {
            if v < best_v {
                best_x = x;
                best_v = v;
            }
        }
        Ok(Minimum {
            x: best_x.clamp(lo, hi),
            value: best_v,
            trace,
        })
    }
}
