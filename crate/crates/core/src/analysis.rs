//! Diagnostics: the soft-assignment patch energy and the probability that a
//! random textured patch is closer to a constant patch than to another
//! patch of the same texture.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, TAG_AMBIGUITY};
use crate::volume::{BoolVolume, PatchShape, Shift, ShiftMap, VideoVolume};

/// Per-voxel probability vectors over candidate source centres.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftWeights {
    /// `(p, [(r, w(p, r))])`; every vector sums to one.
    entries: Vec<(usize, Vec<(usize, f64)>)>,
    pub gamma: f64,
}

impl SoftWeights {
    pub fn new(entries: Vec<(usize, Vec<(usize, f64)>)>, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be nonnegative, got {gamma}")));
        }
        for (p, w) in &entries {
            let total: f64 = w.iter().map(|e| e.1).sum();
            if w.iter().any(|e| !(e.1 >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::UnnormalisedWeights(*p));
            }
        }
        Ok(Self { entries, gamma })
    }

    /// All mass on `p + φ(p)` for every `p` in `h`.
    pub fn dirac(phi: &ShiftMap, h: &BoolVolume, gamma: f64) -> Result<Self> {
        let entries = h
            .indices()
            .into_iter()
            .map(|p| {
                let r = phi.target(p).ok_or(Error::UnnormalisedWeights(p))?;
                Ok((p, vec![(r, 1.0)]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries, gamma)
    }

    pub fn entries(&self) -> &[(usize, Vec<(usize, f64)>)] {
        &self.entries
    }
}

/// `d²` with uniform intra-patch weights: mean squared colour difference
/// over the in-bounds part of the patch at `p`.
fn uniform_distance(u: &VideoVolume, p: usize, r: usize, shape: PatchShape) -> f64 {
    let d = u.dims();
    let (vp, vr) = (d.coords(p), d.coords(r));
    let [hx, hy, ht] = shape.half().map(|h| h as i64);
    let mut sum = 0.0;
    let mut n = 0usize;
    for dt in -ht..=ht {
        for dy in -hy..=hy {
            for dx in -hx..=hx {
                let a = [vp.x as i64 + dx, vp.y as i64 + dy, vp.t as i64 + dt];
                let b = [vr.x as i64 + dx, vr.y as i64 + dy, vr.t as i64 + dt];
                if !d.contains(a[0], a[1], a[2]) {
                    continue;
                }
                assert!(d.contains(b[0], b[1], b[2]), "source patch leaves the volume");
                let ca = u.at(a[0] as usize, a[1] as usize, a[2] as usize);
                let cb = u.at(b[0] as usize, b[1] as usize, b[2] as usize);
                sum += (0..3).map(|k| (ca[k] - cb[k]).powi(2)).sum::<f64>();
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// `Σ_p [Σ_r w(p,r) d²(W_p, W_r) + γ Σ_r w(p,r) log w(p,r)]` over the voxels
/// of `h`, with `0 log 0 = 0`.
pub fn arias_energy(u: &VideoVolume, weights: &SoftWeights, h: &BoolVolume, shape: PatchShape) -> Result<f64> {
    let keyed: std::collections::HashMap<usize, &Vec<(usize, f64)>> =
        weights.entries.iter().map(|(p, w)| (*p, w)).collect();
    let mut total = 0.0;
    for p in h.indices() {
        let w = keyed.get(&p).ok_or(Error::UnnormalisedWeights(p))?;
        for &(r, wr) in w.iter() {
            if wr > 0.0 {
                total += wr * uniform_distance(u, p, r, shape);
                total += weights.gamma * wr * wr.ln();
            }
        }
    }
    Ok(total)
}

/// Writes `u(p) = u(p + φ(p))` for every `p` in `h`.
pub fn copy_reconstruct(u: &VideoVolume, phi: &ShiftMap, h: &BoolVolume) -> VideoVolume {
    let mut out = u.clone();
    for p in h.indices() {
        if let Some(q) = phi.target(p) {
            out[p] = u[q];
        }
    }
    out
}

/// `Σ_{p∈H} Σ_{q∈N_p} ‖u(q + φ(q)) − u(q + φ(p))‖²`, with `φ` taken as zero
/// where it is undefined. Neighbourhoods are clipped to the volume.
pub fn shift_map_energy(u: &VideoVolume, phi: &ShiftMap, h: &BoolVolume, shape: PatchShape) -> f64 {
    let d = u.dims();
    let [hx, hy, ht] = shape.half().map(|h| h as i64);
    let mut total = 0.0;
    for p in h.indices() {
        let sp = phi.get(p).unwrap_or(Shift::ZERO);
        let v = d.coords(p);
        for dt in -ht..=ht {
            for dy in -hy..=hy {
                for dx in -hx..=hx {
                    let (x, y, t) = (v.x as i64 + dx, v.y as i64 + dy, v.t as i64 + dt);
                    if !d.contains(x, y, t) {
                        continue;
                    }
                    let q = d.index(x as usize, y as usize, t as usize);
                    let sq = phi.get(q).unwrap_or(Shift::ZERO);
                    let a = d.offset(q, sq.as_offset()).expect("shift leaves the volume");
                    let b = d.offset(q, sp.as_offset()).expect("shift leaves the volume");
                    total += (0..3).map(|k| (u[a][k] - u[b][k]).powi(2)).sum::<f64>();
                }
            }
        }
    }
    total
}

/// A 2D or 3D patch size for the ambiguity experiment, e.g. `5x5` or `3x3x3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmbiguityShape(pub Vec<usize>);

impl AmbiguityShape {
    pub fn parse(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad patch shape {s:?}")))?;
        if dims.is_empty() || dims.len() > 3 || dims.contains(&0) {
            return Err(Error::Config(format!("bad patch shape {s:?}")));
        }
        Ok(Self(dims))
    }

    pub fn components(&self) -> usize {
        self.0.iter().product()
    }
}

impl std::fmt::Display for AmbiguityShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Published probabilities for the seven standard shapes, in table order.
pub const AMBIGUITY_TABLE: [(&str, f64); 7] = [
    ("3x3", 8e-2),
    ("5x5", 1e-2),
    ("3x3x3", 6e-3),
    ("7x7", 4.1e-4),
    ("9x9", 5.5e-6),
    ("11x11", 3e-7),
    ("5x5x5", 2e-7),
];

/// Monte Carlo estimate with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbiguityEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub hits: u64,
    pub trials: u64,
}

const CHUNK: u64 = 1 << 15;

/// Estimates `P(‖W − V‖² < ‖W − Z‖²)` for i.i.d. `Normal(mu, sigma²)`
/// patches `W`, `V` of `components` values and the constant patch `Z = mu`.
///
/// Trials are split into fixed chunks with their own random streams, so the
/// estimate does not depend on the number of threads.
pub fn simulate_patch_ambiguity(components: usize, mu: f64, sigma: f64, trials: u64, seed: u64) -> AmbiguityEstimate {
    assert!(components >= 1 && trials >= 1 && sigma >= 0.0);
    let chunks = trials.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[TAG_AMBIGUITY, components as u64, c]);
            let n = CHUNK.min(trials - c * CHUNK);
            let mut hits = 0u64;
            for _ in 0..n {
                let mut to_v = 0.0;
                let mut to_z = 0.0;
                for _ in 0..components {
                    let gw: f64 = StandardNormal.sample(&mut rng);
                    let gv: f64 = StandardNormal.sample(&mut rng);
                    let w = mu + sigma * gw;
                    let v = mu + sigma * gv;
                    to_v += (w - v) * (w - v);
                    to_z += (w - mu) * (w - mu);
                }
                hits += (to_v < to_z) as u64;
            }
            hits
        })
        .sum();
    let p = hits as f64 / trials as f64;
    AmbiguityEstimate {
        probability: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
        hits,
        trials,
    }
}
