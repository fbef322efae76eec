//! Population-level analytics: per-worm and population mean velocities,
//! percent response against control, and 4-parameter logistic (Hill)
//! fitting to estimate EC50.
//!
//! The dose-response model is R(c) = bottom + (top - bottom) / (1 + (c/ec50)^h),
//! so R(ec50) = (top + bottom) / 2 by construction. The fit is a damped
//! Gauss-Newton (Levenberg-style adaptive damping) on an internal
//! parameterization using log(ec50) and log(h) to enforce positivity.
//! Control points (c = 0) enter as direct observations of `top`.

use thiserror::Error;

use crate::tracker::TrackedWorm;

#[derive(Debug, Error)]
pub enum AssayError {
    #[error("no tracks to summarize")]
    EmptyTracks,
    #[error("track {id} has fewer than 2 points; no velocity available")]
    TrackTooShort { id: u64 },
    #[error("control population mean must be > 0, got {0}")]
    NonPositiveControl(f64),
    #[error("need >= 4 dose points with >= 3 distinct nonzero concentrations, got {points} points / {distinct} distinct")]
    InsufficientPoints { points: usize, distinct: usize },
    #[error("all responses identical; ec50 is unidentifiable")]
    FlatData,
}

/// Per-worm mean velocities and their population statistics (um/s).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySummary {
    pub per_worm_means: Vec<f64>,
    pub population_mean: f64,
    /// Sample standard deviation (n - 1); 0 when n = 1.
    pub population_std: f64,
    pub n: usize,
}

pub fn summarize_velocities(worms: &[TrackedWorm]) -> Result<VelocitySummary, AssayError> {
    if worms.is_empty() {
        return Err(AssayError::EmptyTracks);
    }
    let mut per_worm_means = Vec::with_capacity(worms.len());
    for w in worms {
        match &w.velocity {
            Some(v) => per_worm_means.push(v.mean_um_s),
            None => return Err(AssayError::TrackTooShort { id: w.track.id }),
        }
    }
    Ok(summary_from_means(per_worm_means))
}

pub fn summary_from_means(per_worm_means: Vec<f64>) -> VelocitySummary {
    let n = per_worm_means.len();
    let population_mean = per_worm_means.iter().sum::<f64>() / n as f64;
    let population_std = if n > 1 {
        let var = per_worm_means
            .iter()
            .map(|m| (m - population_mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    VelocitySummary {
        per_worm_means,
        population_mean,
        population_std,
        n,
    }
}

/// 100 * dose mean / control mean.
pub fn percent_response(dose: &VelocitySummary, control: &VelocitySummary) -> Result<f64, AssayError> {
    if !(control.population_mean > 0.0) {
        return Err(AssayError::NonPositiveControl(control.population_mean));
    }
    Ok(100.0 * dose.population_mean / control.population_mean)
}

/// One (concentration, percent response) observation; concentration 0
/// encodes the control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DosePoint {
    pub concentration_um: f64,
    pub percent_response: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HillFit {
    pub ec50: f64,
    pub hill_slope: f64,
    pub top: f64,
    pub bottom: f64,
    pub sse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when ec50 falls outside the tested concentration range x [0.1, 10].
    pub range_warning: bool,
    /// SSE after each accepted optimizer step, starting from the initial
    /// guess; non-increasing by construction.
    pub sse_trace: Vec<f64>,
}

impl HillFit {
    /// Model response at concentration c.
    pub fn response(&self, c: f64) -> f64 {
        hill_model(self.top, self.bottom, self.ec50, self.hill_slope, c)
    }
}

#[inline]
pub fn hill_model(top: f64, bottom: f64, ec50: f64, h: f64, c: f64) -> f64 {
    if c <= 0.0 {
        return top;
    }
    bottom + (top - bottom) / (1.0 + (c / ec50).powf(h))
}

fn sse_for(points: &[DosePoint], p: &[f64; 4]) -> f64 {
    let (top, bottom, ec50, h) = (p[0], p[1], p[2].exp(), p[3].exp());
    points
        .iter()
        .map(|d| {
            let r = hill_model(top, bottom, ec50, h, d.concentration_um) - d.percent_response;
            r * r
        })
        .sum()
}

/// Solve the 4x4 normal equations by Gaussian elimination with partial
/// pivoting. Returns None for a singular system.
#[allow(clippy::needless_range_loop)] // index form mirrors the math
fn solve4(a: &mut [[f64; 4]; 4], b: &mut [f64; 4]) -> Option<[f64; 4]> {
    for k in 0..4 {
        let mut p = k;
        for i in k + 1..4 {
            if a[i][k].abs() > a[p][k].abs() {
                p = i;
            }
        }
        if a[p][k].abs() < 1e-300 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..4 {
            let f = a[i][k] / a[k][k];
            for j in k..4 {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let mut s = b[i];
        for j in i + 1..4 {
            s -= a[i][j] * x[j];
        }
        x[i] = s / a[i][i];
    }
    Some(x)
}

/// Fit the 4-parameter logistic by damped Gauss-Newton.
///
/// Initialization when `init` is absent: top = max response, bottom = min
/// response, ec50 = concentration whose response is nearest (top+bottom)/2,
/// h = 1. Convergence: relative SSE change < 1e-9 or parameter step norm
/// < 1e-8, capped at 200 iterations.
#[allow(clippy::needless_range_loop)] // index form mirrors the math
pub fn fit_hill(points: &[DosePoint], init: Option<&HillFit>) -> Result<HillFit, AssayError> {
    let mut nonzero: Vec<f64> = points
        .iter()
        .filter(|d| d.concentration_um > 0.0)
        .map(|d| d.concentration_um)
        .collect();
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nonzero.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * a.abs().max(1.0));
    if points.len() < 4 || nonzero.len() < 3 {
        return Err(AssayError::InsufficientPoints {
            points: points.len(),
            distinct: nonzero.len(),
        });
    }
    let responses: Vec<f64> = points.iter().map(|d| d.percent_response).collect();
    let r_min = responses.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_max = responses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let flat = (r_max - r_min).abs() < 1e-12 * r_max.abs().max(1.0);

    // Parameter vector: [top, bottom, log(ec50), log(h)].
    let mut p = match init {
        Some(f) => [f.top, f.bottom, f.ec50.max(1e-12).ln(), f.hill_slope.max(1e-12).ln()],
        None => {
            let mid = (r_max + r_min) / 2.0;
            let ec50_guess = points
                .iter()
                .filter(|d| d.concentration_um > 0.0)
                .min_by(|a, b| {
                    (a.percent_response - mid)
                        .abs()
                        .partial_cmp(&(b.percent_response - mid).abs())
                        .unwrap()
                })
                .map(|d| d.concentration_um)
                .unwrap();
            [r_max, r_min, ec50_guess.ln(), 0.0]
        }
    };
    if flat {
        return Ok(HillFit {
            ec50: p[2].exp(),
            hill_slope: p[3].exp(),
            top: p[0],
            bottom: p[1],
            sse: sse_for(points, &p),
            converged: false,
            iterations: 0,
            range_warning: true,
            sse_trace: vec![sse_for(points, &p)],
        });
    }

    let mut sse = sse_for(points, &p);
    let mut sse_trace = vec![sse];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..200 {
        iterations = iter + 1;
        let (top, bottom, ec50, h) = (p[0], p[1], p[2].exp(), p[3].exp());
        // Normal equations J^T J and J^T r with analytic jacobian.
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for d in points {
            let c = d.concentration_um;
            let (u, dln) = if c > 0.0 {
                ((c / ec50).powf(h), (c / ec50).ln())
            } else {
                (0.0, 0.0)
            };
            let denom = 1.0 + u;
            let model = bottom + (top - bottom) / denom;
            let resid = model - d.percent_response;
            let j = [
                1.0 / denom,
                1.0 - 1.0 / denom,
                (top - bottom) * h * u / (denom * denom),
                -(top - bottom) * u * dln * h / (denom * denom),
            ];
            for a in 0..4 {
                jtr[a] += j[a] * resid;
                for b in a..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        for a in 0..4 {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }

        // Damped step; increase damping until SSE decreases.
        let mut stepped = false;
        for _ in 0..25 {
            let mut a = jtj;
            for k in 0..4 {
                a[k][k] += lambda * jtj[k][k].max(1e-12);
            }
            let mut b = [-jtr[0], -jtr[1], -jtr[2], -jtr[3]];
            let Some(step) = solve4(&mut a, &mut b) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            let trial_sse = sse_for(points, &trial);
            if trial_sse <= sse {
                let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                let rel_change = (sse - trial_sse) / sse.max(1e-300);
                p = trial;
                sse = trial_sse;
                sse_trace.push(sse);
                lambda = (lambda * 0.3).max(1e-12);
                stepped = true;
                if rel_change < 1e-9 || step_norm < 1e-8 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !stepped {
            converged = converged || stepped;
            break;
        }
    }

    let ec50 = p[2].exp();
    let c_min = nonzero.first().copied().unwrap();
    let c_max = nonzero.last().copied().unwrap();
    Ok(HillFit {
        ec50,
        hill_slope: p[3].exp(),
        top: p[0],
        bottom: p[1],
        sse,
        converged,
        iterations,
        range_warning: !(ec50 >= 0.1 * c_min && ec50 <= 10.0 * c_max),
        sse_trace,
    })
}

/// One fitted condition in a report.
#[derive(Debug, Clone)]
pub struct ConditionFit {
    pub condition: String,
    pub points: Vec<DosePoint>,
    pub fit: HillFit,
}

/// Fit-parameter CSV:
/// `condition,ec50_uM,hill_slope,top,bottom,sse,converged,n_points`.
pub fn fits_csv(fits: &[ConditionFit]) -> String {
    let mut out = String::from("condition,ec50_uM,hill_slope,top,bottom,sse,converged,n_points\n");
    for c in fits {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.3},{:.3},{:.6},{},{}\n",
            c.condition,
            c.fit.ec50,
            c.fit.hill_slope,
            c.fit.top,
            c.fit.bottom,
            c.fit.sse,
            c.fit.converged,
            c.points.len()
        ));
    }
    out
}

/// Dose-point CSV: `condition,concentration_uM,percent_response`.
pub fn dose_points_csv(fits: &[ConditionFit]) -> String {
    let mut out = String::from("condition,concentration_uM,percent_response\n");
    for c in fits {
        for p in &c.points {
            out.push_str(&format!(
                "{},{:.6},{:.4}\n",
                c.condition, p.concentration_um, p.percent_response
            ));
        }
    }
    out
}

/// Plot-data CSV: observed and fitted response at every dose point:
/// `condition,concentration_uM,observed_pct,fitted_pct`.
pub fn plot_data_csv(fits: &[ConditionFit]) -> String {
    let mut out = String::from("condition,concentration_uM,observed_pct,fitted_pct\n");
    for c in fits {
        for p in &c.points {
            out.push_str(&format!(
                "{},{:.6},{:.4},{:.4}\n",
                c.condition,
                p.concentration_um,
                p.percent_response,
                c.fit.response(p.concentration_um)
            ));
        }
    }
    out
}

/// Velocity-summary CSV for a set of conditions:
/// `condition,n_worms,mean_um_s,std_um_s,percent_response`.
pub fn summary_csv(rows: &[(String, VelocitySummary, Option<f64>)]) -> String {
    let mut out = String::from("condition,n_worms,mean_um_s,std_um_s,percent_response\n");
    for (condition, s, pct) in rows {
        let pct_str = match pct {
            Some(p) => format!("{p:.4}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{}\n",
            condition, s.n, s.population_mean, s.population_std, pct_str
        ));
    }
    out
}
