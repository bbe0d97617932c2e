//! ADASYN oversampling of the minority class.
//!
//! Each minority sample `x_i` gets a share of the `G` synthetic samples
//! proportional to the fraction of majority points among its `k` nearest
//! neighbors. Every synthetic sample lies on the segment from `x_i` to one
//! of its `k` nearest minority neighbors.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::window::LabeledWindow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdasynConfig {
    pub k: usize,
    /// Desired balance level in `(0, 1]`; 1 means fully balanced.
    pub beta: f64,
    pub seed: u64,
}

impl Default for AdasynConfig {
    fn default() -> Self {
        AdasynConfig { k: 5, beta: 1.0, seed: 0 }
    }
}

impl AdasynConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k` nearest candidates by Euclidean distance, ties broken by lower index.
fn nearest<'a>(query: &[f64], candidates: impl Iterator<Item = (usize, &'a [f64])>, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = candidates.map(|(i, p)| (sq_dist(query, p), i)).collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, by);
        d.truncate(k);
    }
    d.sort_unstable_by(by);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Indices of the `k` points nearest to `query`.
pub fn knn<P: AsRef<[f64]>>(query: &[f64], points: &[P], k: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::Argument(format!("k = {k} exceeds the {} available points", points.len())));
    }
    Ok(nearest(query, points.iter().map(|p| p.as_ref()).enumerate(), k))
}

/// `a + lambda * (b - a)`.
pub fn interpolate(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| x + lambda * (y - x)).collect()
}

/// Splits `total` into integer shares proportional to `weights` (which sum
/// to 1) by largest remainder; ties go to the lower index.
pub fn allocate(weights: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut alloc: Vec<usize> = raw.iter().map(|x| libm::floor(*x) as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - libm::floor(raw[a]);
        let rb = raw[b] - libm::floor(raw[b]);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Where a synthetic sample came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    /// Index (into the input) of the minority sample `x_i`.
    pub base: usize,
    /// Index (into the input) of the minority neighbor `x_z`.
    pub neighbor: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    /// The input windows, unchanged, followed by the synthetic ones.
    pub windows: Vec<LabeledWindow>,
    pub minority_label: bool,
    pub n_minority: usize,
    pub n_majority: usize,
    /// Ratios `r_i` of majority neighbors, per minority sample.
    pub ratios: Vec<f64>,
    /// Synthetic count per minority sample.
    pub allocation: Vec<usize>,
    /// One entry per synthetic window, in output order.
    pub provenance: Vec<Provenance>,
}

impl Balanced {
    pub fn n_synthetic(&self) -> usize {
        self.provenance.len()
    }
}

/// Oversamples the minority class of `windows`.
pub fn adasyn(windows: &[LabeledWindow], cfg: &AdasynConfig) -> Result<Balanced> {
    cfg.validate()?;
    let Some(first) = windows.first() else {
        return Err(Error::Balance("no windows to balance".into()));
    };
    if let Some(w) = windows.iter().find(|w| w.spec != first.spec || w.rows != first.rows) {
        return Err(Error::shape(
            format!("{} x {}", first.rows, first.spec),
            format!("{} x {}", w.rows, w.spec),
        ));
    }
    let n_pos = windows.iter().filter(|w| w.label).count();
    let n_neg = windows.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Balance(format!("single-class input ({n_pos} positive, {n_neg} negative)")));
    }
    let minority_label = n_pos < n_neg;
    let (m_s, m_l) = if minority_label { (n_pos, n_neg) } else { (n_neg, n_pos) };
    let total = libm::round((m_l - m_s) as f64 * cfg.beta) as usize;
    let minority: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].label == minority_label).collect();
    if total == 0 {
        return Ok(Balanced {
            windows: windows.to_vec(),
            minority_label,
            n_minority: m_s,
            n_majority: m_l,
            ratios: alloc::vec![0.0; m_s],
            allocation: alloc::vec![0; m_s],
            provenance: Vec::new(),
        });
    }
    if m_s < cfg.k + 1 {
        return Err(Error::MinorityTooSmall { minority: m_s, k: cfg.k });
    }
    let k = cfg.k;
    let data = |i: usize| windows[i].data.as_slice();

    let ratios: Vec<f64> = minority
        .iter()
        .map(|&i| {
            let nn = nearest(data(i), (0..windows.len()).filter(|&j| j != i).map(|j| (j, data(j))), k);
            nn.iter().filter(|&&j| windows[j].label != minority_label).count() as f64 / k as f64
        })
        .collect();
    let sum: f64 = ratios.iter().sum();
    let density: Vec<f64> = if sum > 0.0 {
        ratios.iter().map(|r| r / sum).collect()
    } else {
        alloc::vec![1.0 / m_s as f64; m_s]
    };
    let allocation = allocate(&density, total);

    let mut out = windows.to_vec();
    let mut provenance = Vec::with_capacity(total);
    for (mi, &i) in minority.iter().enumerate() {
        if allocation[mi] == 0 {
            continue;
        }
        let nn = nearest(data(i), minority.iter().filter(|&&j| j != i).map(|&j| (j, data(j))), k);
        for j in 0..allocation[mi] {
            let mut r = rng::rng(cfg.seed, &[i as u64, j as u64]);
            let neighbor = nn[r.random_range(0..nn.len())];
            let lambda: f64 = r.random();
            let base = &windows[i];
            out.push(LabeledWindow {
                participant_id: base.participant_id,
                start_ts: base.start_ts,
                end_ts: base.end_ts,
                label: minority_label,
                synthetic: true,
                spec: base.spec,
                rows: base.rows,
                data: interpolate(data(i), data(neighbor), lambda),
            });
            provenance.push(Provenance { base: i, neighbor, lambda });
        }
    }
    Ok(Balanced { windows: out, minority_label, n_minority: m_s, n_majority: m_l, ratios, allocation, provenance })
}
