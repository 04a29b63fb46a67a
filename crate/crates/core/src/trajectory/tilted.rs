//! Draws of the shared stay probability `p` at a block-pair event.
//!
//! Given that at least one unit moves, `p` has density proportional to
//! `(1 - p^S) p^(rho-1) (1 - p)^(-1)` on `(0, 1)`, where `S` is the pair
//! load. For integer `S` this is the finite mixture of `Beta(rho + j, 1)`,
//! `j < S`, with weights proportional to `1 / (rho + j)`. Otherwise the
//! density is tabulated in the coordinate `v = p^rho`, where it becomes the
//! bounded function `(1 - v^(S/rho)) / (1 - v^(1/rho))`, and inverted.

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_TILTED_RESOLUTION: usize = 4096;

/// Largest `S` handled by the exact mixture.
const MAX_MIXTURE: f64 = 1e6;

/// A sampler for one `(S, rho)` pair.
#[derive(Debug, Clone)]
pub enum TiltedSampler {
    Mixture { rho: f64, components: usize, total_weight: f64 },
    Grid { rho: f64, density: Vec<f64>, cdf: Vec<f64> },
}

fn as_integer(s: f64) -> Option<usize> {
    let r = s.round();
    if (s - r).abs() <= 1e-9 * s.max(1.0) && r >= 1.0 && r <= MAX_MIXTURE {
        Some(r as usize)
    } else {
        None
    }
}

impl TiltedSampler {
    pub fn new(s: f64, rho: f64, resolution: usize) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Domain(format!("tilted draw needs S > 0, got {s}")));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        if let Some(components) = as_integer(s) {
            let total_weight = (0..components).map(|j| 1.0 / (rho + j as f64)).sum();
            return Ok(TiltedSampler::Mixture { rho, components, total_weight });
        }
        let cells = resolution.max(16);
        let h = 1.0 / cells as f64;
        let density: Vec<f64> = (0..=cells)
            .map(|k| {
                let v = k as f64 * h;
                if k == cells {
                    s
                } else if k == 0 {
                    1.0
                } else {
                    let l = v.ln() / rho;
                    (s * l).exp_m1() / l.exp_m1()
                }
            })
            .collect();
        let mut cdf = Vec::with_capacity(cells + 1);
        cdf.push(0.0);
        for k in 0..cells {
            let prev = cdf[k];
            cdf.push(prev + 0.5 * h * (density[k] + density[k + 1]));
        }
        Ok(TiltedSampler::Grid { rho, density, cdf })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            TiltedSampler::Mixture { rho, components, total_weight } => {
                let mut target = rng.random::<f64>() * total_weight;
                let mut j = 0;
                while j + 1 < *components {
                    let w = 1.0 / (rho + j as f64);
                    if target < w {
                        break;
                    }
                    target -= w;
                    j += 1;
                }
                let u: f64 = rng.random();
                u.powf(1.0 / (rho + j as f64))
            }
            TiltedSampler::Grid { rho, density, cdf } => {
                let cells = density.len() - 1;
                let h = 1.0 / cells as f64;
                let target = rng.random::<f64>() * cdf[cells];
                let k = match cdf.binary_search_by(|c| c.total_cmp(&target)) {
                    Ok(k) => k.min(cells - 1),
                    Err(k) => k.saturating_sub(1).min(cells - 1),
                };
                let r = target - cdf[k];
                let f0 = density[k];
                let slope = (density[k + 1] - f0) / h;
                let tau = if slope.abs() < 1e-12 * f0.max(1e-300) {
                    r / f0
                } else {
                    2.0 * r / (f0 + (f0 * f0 + 2.0 * slope * r).max(0.0).sqrt())
                };
                let v = (k as f64 * h + tau.clamp(0.0, h)).clamp(0.0, 1.0);
                v.powf(1.0 / rho)
            }
        }
    }
}

/// One draw of `p` from the tilted density with load `s` and shape `rho`.
pub fn sample_tilted_p<R: Rng + ?Sized>(
    s: f64,
    rho: f64,
    resolution: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(TiltedSampler::new(s, rho, resolution)?.sample(rng))
}
