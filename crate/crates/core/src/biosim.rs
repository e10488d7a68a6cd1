//! Synthetic biometric source and FMR/FNMR evaluation over the basis length.
//!
//! Templates and reading noise are isotropic Gaussians. A reading matches a
//! template when it falls in the template's acceptance region, i.e. the
//! translated Voronoi cell of the lattice at basis length `d`.
//!
//! Rate evaluation draws every pair from its own ChaCha20 stream keyed by a
//! base seed and the pair index. A sweep reuses one base seed for every grid
//! point, so each `d` sees the same pairs and the rate curves are monotone
//! exactly rather than only up to sampling noise.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::lattice::{LatticeBasis, LatticeError};
use crate::par::{stream_rng, Execution};

#[derive(Debug, thiserror::Error)]
pub enum BiosimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    n: usize,
    templates: Vec<Vec<f64>>,
    inter_sigma: f64,
    noise_sigma: f64,
}

impl SyntheticPopulation {
    /// Draws `num_identities` templates with i.i.d. `N(0, inter_sigma^2)` coordinates.
    /// `noise_sigma` may be zero (noiseless readings).
    pub fn sample<R: RngCore + ?Sized>(
        n: usize,
        num_identities: usize,
        inter_sigma: f64,
        noise_sigma: f64,
        rng: &mut R,
    ) -> Result<Self, BiosimError> {
        if n == 0 || num_identities == 0 {
            return Err(BiosimError::InvalidConfig(
                "dimension and identity count must be positive".into(),
            ));
        }
        if !(inter_sigma > 0.0 && inter_sigma.is_finite()) {
            return Err(BiosimError::InvalidConfig(format!(
                "inter_sigma must be positive, got {inter_sigma}"
            )));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(BiosimError::InvalidConfig(format!(
                "noise_sigma must be non-negative, got {noise_sigma}"
            )));
        }
        let dist = Normal::new(0.0, inter_sigma).expect("sigma checked");
        let templates = (0..num_identities)
            .map(|_| (0..n).map(|_| dist.sample(rng)).collect())
            .collect();
        Ok(Self {
            n,
            templates,
            inter_sigma,
            noise_sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_identities(&self) -> usize {
        self.templates.len()
    }

    pub fn inter_sigma(&self) -> f64 {
        self.inter_sigma
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn template(&self, identity: usize) -> &[f64] {
        &self.templates[identity]
    }

    /// Template plus `N(0, noise_sigma^2)` noise per coordinate.
    pub fn sample_reading<R: RngCore + ?Sized>(&self, identity: usize, rng: &mut R) -> Vec<f64> {
        let template = &self.templates[identity];
        if self.noise_sigma == 0.0 {
            return template.clone();
        }
        let noise = Normal::new(0.0, self.noise_sigma).expect("sigma checked");
        template.iter().map(|t| t + noise.sample(rng)).collect()
    }

    /// Shifts every template by `offset`.
    pub fn translate(&mut self, offset: &[f64]) {
        assert_eq!(offset.len(), self.n, "offset dimension");
        for t in &mut self.templates {
            t.iter_mut().zip(offset).for_each(|(a, b)| *a += b);
        }
    }
}

pub fn sample_population<R: RngCore + ?Sized>(
    n: usize,
    num_identities: usize,
    inter_sigma: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<SyntheticPopulation, BiosimError> {
    SyntheticPopulation::sample(n, num_identities, inter_sigma, noise_sigma, rng)
}

pub fn sample_reading<R: RngCore + ?Sized>(
    pop: &SyntheticPopulation,
    identity: usize,
    rng: &mut R,
) -> Vec<f64> {
    pop.sample_reading(identity, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub d: f64,
    pub fmr: f64,
    pub fnmr: f64,
    pub genuine_pairs: u64,
    pub impostor_pairs: u64,
}

impl RateReport {
    /// Binomial standard deviation of the FMR estimate.
    pub fn fmr_sigma(&self) -> f64 {
        binomial_sigma(self.fmr, self.impostor_pairs)
    }

    pub fn fnmr_sigma(&self) -> f64 {
        binomial_sigma(self.fnmr, self.genuine_pairs)
    }
}

pub fn binomial_sigma(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Rates at basis length `d` with a fresh base seed drawn from `rng`.
pub fn evaluate_rates<R: RngCore + ?Sized>(
    pop: &SyntheticPopulation,
    d: f64,
    genuine_pairs: u64,
    impostor_pairs: u64,
    rng: &mut R,
    exec: Execution,
) -> Result<RateReport, BiosimError> {
    let basis = LatticeBasis::triangular(pop.n, d)?;
    evaluate_rates_seeded(
        pop,
        &basis,
        genuine_pairs,
        impostor_pairs,
        rng.next_u64(),
        exec,
    )
}

/// Rates for an explicit base seed. Genuine pair `k` uses stream `2k`,
/// impostor pair `k` uses stream `2k + 1`.
pub fn evaluate_rates_seeded(
    pop: &SyntheticPopulation,
    basis: &LatticeBasis,
    genuine_pairs: u64,
    impostor_pairs: u64,
    base_seed: u64,
    exec: Execution,
) -> Result<RateReport, BiosimError> {
    if genuine_pairs == 0 || impostor_pairs == 0 {
        return Err(BiosimError::InvalidConfig(
            "need at least one genuine and one impostor pair".into(),
        ));
    }
    if pop.num_identities() < 2 {
        return Err(BiosimError::InvalidConfig(
            "impostor pairs need at least two identities".into(),
        ));
    }
    if basis.dim() != pop.n {
        return Err(LatticeError::DimensionMismatch {
            expected: basis.dim(),
            found: pop.n,
        }
        .into());
    }
    let ids = pop.num_identities();

    let rejected = exec
        .map(genuine_pairs as usize, |k| {
            let mut rng = stream_rng(base_seed, 2 * k as u64);
            let i = rng.gen_range(0..ids);
            let reading = pop.sample_reading(i, &mut rng);
            !basis
                .in_acceptance_region(pop.template(i), &reading)
                .expect("dimensions checked")
        })
        .into_iter()
        .filter(|r| *r)
        .count();

    let accepted = exec
        .map(impostor_pairs as usize, |k| {
            let mut rng = stream_rng(base_seed, 2 * k as u64 + 1);
            let i = rng.gen_range(0..ids);
            let mut j = rng.gen_range(0..ids - 1);
            if j >= i {
                j += 1;
            }
            let reading = pop.sample_reading(j, &mut rng);
            basis
                .in_acceptance_region(pop.template(i), &reading)
                .expect("dimensions checked")
        })
        .into_iter()
        .filter(|a| *a)
        .count();

    Ok(RateReport {
        d: basis.basis_length(),
        fmr: accepted as f64 / impostor_pairs as f64,
        fnmr: rejected as f64 / genuine_pairs as f64,
        genuine_pairs,
        impostor_pairs,
    })
}

/// Rates over labelled feature vectors: every unordered pair with equal labels
/// is genuine, every pair with distinct labels is an impostor pair.
pub fn evaluate_labeled_rates(
    samples: &[(String, Vec<f64>)],
    d: f64,
    exec: Execution,
) -> Result<RateReport, BiosimError> {
    let n = samples
        .first()
        .map(|s| s.1.len())
        .ok_or_else(|| BiosimError::InvalidConfig("no samples".into()))?;
    let basis = LatticeBasis::triangular(n, d)?;
    let counts = exec.map(samples.len(), |i| {
        let (mut g, mut g_rej, mut imp, mut imp_acc) = (0u64, 0u64, 0u64, 0u64);
        for j in i + 1..samples.len() {
            let accepted = basis.in_acceptance_region(&samples[i].1, &samples[j].1)?;
            if samples[i].0 == samples[j].0 {
                g += 1;
                g_rej += u64::from(!accepted);
            } else {
                imp += 1;
                imp_acc += u64::from(accepted);
            }
        }
        Ok::<_, LatticeError>((g, g_rej, imp, imp_acc))
    });
    let (mut g, mut g_rej, mut imp, mut imp_acc) = (0, 0, 0, 0);
    for c in counts {
        let c = c?;
        g += c.0;
        g_rej += c.1;
        imp += c.2;
        imp_acc += c.3;
    }
    if g == 0 || imp == 0 {
        return Err(BiosimError::InvalidConfig(
            "labels yield no genuine or no impostor pairs".into(),
        ));
    }
    Ok(RateReport {
        d,
        fmr: imp_acc as f64 / imp as f64,
        fnmr: g_rej as f64 / g as f64,
        genuine_pairs: g,
        impostor_pairs: imp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EerEstimate {
    Crossing { d: f64, rate: f64 },
    NoCrossing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub reports: Vec<RateReport>,
    pub eer: EerEstimate,
}

/// Evaluates every grid point on the same pairs (one base seed from `rng`).
pub fn sweep_eer<R: RngCore + ?Sized>(
    pop: &SyntheticPopulation,
    d_grid: &[f64],
    pairs_per_point: u64,
    rng: &mut R,
    exec: Execution,
) -> Result<SweepResult, BiosimError> {
    let base = rng.next_u64();
    let reports = d_grid
        .iter()
        .map(|&d| {
            let basis = LatticeBasis::triangular(pop.n, d)?;
            evaluate_rates_seeded(pop, &basis, pairs_per_point, pairs_per_point, base, exec)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let eer = estimate_eer(&reports);
    Ok(SweepResult { reports, eer })
}

/// Crossing of the piecewise-linear FMR and FNMR curves, scanning in grid
/// order. A single-point grid never crosses.
pub fn estimate_eer(reports: &[RateReport]) -> EerEstimate {
    for w in reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let da = a.fnmr - a.fmr;
        let db = b.fnmr - b.fmr;
        if da == 0.0 {
            return EerEstimate::Crossing {
                d: a.d,
                rate: a.fmr,
            };
        }
        if da.signum() != db.signum() {
            let t = da / (da - db);
            return EerEstimate::Crossing {
                d: a.d + t * (b.d - a.d),
                rate: a.fmr + t * (b.fmr - a.fmr),
            };
        }
    }
    EerEstimate::NoCrossing
}

pub fn linear_grid(d_min: f64, d_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![d_min],
        _ => (0..points)
            .map(|i| d_min + (d_max - d_min) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

pub fn geometric_grid(d_min: f64, d_max: f64, points: usize) -> Vec<f64> {
    linear_grid(d_min.ln(), d_max.ln(), points)
        .into_iter()
        .map(f64::exp)
        .collect()
}

pub const SWEEP_HEADER: [&str; 5] = ["d", "fmr", "fnmr", "genuine_pairs", "impostor_pairs"];

pub fn write_sweep_csv<W: Write>(reports: &[RateReport], out: W) -> Result<(), BiosimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in reports {
        w.write_record([
            r.d.to_string(),
            r.fmr.to_string(),
            r.fnmr.to_string(),
            r.genuine_pairs.to_string(),
            r.impostor_pairs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<RateReport>, BiosimError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(SWEEP_HEADER) {
        return Err(BiosimError::Parse {
            line: 1,
            reason: format!("expected header {}", SWEEP_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| BiosimError::Parse {
            line,
            reason: format!("bad {what}"),
        };
        out.push(RateReport {
            d: rec[0].parse().map_err(|_| bad("d"))?,
            fmr: rec[1].parse().map_err(|_| bad("fmr"))?,
            fnmr: rec[2].parse().map_err(|_| bad("fnmr"))?,
            genuine_pairs: rec[3].parse().map_err(|_| bad("genuine_pairs"))?,
            impostor_pairs: rec[4].parse().map_err(|_| bad("impostor_pairs"))?,
        });
    }
    Ok(out)
}

/// Parses `label,v1,...,vn` rows. All rows must share one dimension.
pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<(String, Vec<f64>)>, BiosimError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 2 {
            return Err(BiosimError::Parse {
                line,
                reason: "row needs a label and at least one value".into(),
            });
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| BiosimError::Parse {
                line,
                reason: e.to_string(),
            })?;
        if let Some(first) = out.first() {
            if first.1.len() != values.len() {
                return Err(BiosimError::Parse {
                    line,
                    reason: format!(
                        "ragged row: {} values, expected {}",
                        values.len(),
                        first.1.len()
                    ),
                });
            }
        }
        out.push((rec[0].to_string(), values));
    }
    Ok(out)
}

pub fn load_features_csv(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>, BiosimError> {
    read_features_csv(File::open(path)?)
}

pub fn write_features_csv<W: Write>(
    rows: &[(String, Vec<f64>)],
    out: W,
) -> Result<(), BiosimError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    for (label, values) in rows {
        let mut rec = vec![label.clone()];
        rec.extend(values.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
