//! Drive cycles: CSV ingestion, acceleration previews, a synthetic
//! similar-cycle generator and the trained/untrained envelope rule.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_TOL: f64 = 1e-6;

/// Fraction of samples that must sit inside the band for a cycle to count as
/// trained-like. Members of a ten-cycle synthesized family score 0.76 to 0.98
/// against their own envelope (persistent noise keeps some of them off the
/// mean for long stretches); a rescaled or time-shifted route scores ~0.15.
pub const INSIDE_FRACTION: f64 = 0.75;
/// Band half-width in per-step standard deviations.
pub const BAND_SIGMAS: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveCycle {
    pub name: String,
    pub timestamps: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl DriveCycle {
    pub fn from_speeds(name: impl Into<String>, dt: f64, speeds: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        let timestamps = (0..speeds.len()).map(|i| i as f64 * dt).collect();
        Self::new(name, timestamps, speeds)
    }

    pub fn new(name: impl Into<String>, timestamps: Vec<f64>, speeds: Vec<f64>) -> Result<Self> {
        if timestamps.len() != speeds.len() {
            return Err(Error::ShapeMismatch {
                expected: timestamps.len(),
                found: speeds.len(),
            });
        }
        if speeds.len() < 2 {
            return Err(Error::CycleTooShort(speeds.len()));
        }
        if let Some(index) = speeds.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::NegativeSpeed { index });
        }
        let dt = timestamps[1] - timestamps[0];
        if !(dt > 0.0) {
            return Err(Error::NonuniformGrid { index: 1 });
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > GRID_TOL {
                return Err(Error::NonuniformGrid { index: i + 1 });
            }
        }
        Ok(Self {
            name: name.into(),
            timestamps,
            speeds,
        })
    }

    pub fn dt(&self) -> f64 {
        self.timestamps[1] - self.timestamps[0]
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Number of control steps (one per forward-difference interval).
    pub fn steps(&self) -> usize {
        self.speeds.len() - 1
    }

    /// Forward-difference accelerations, one per step.
    pub fn accelerations(&self) -> Vec<f64> {
        let dt = self.dt();
        self.speeds.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
    }

    /// Acceleration at step `k`, zero past the end of the cycle.
    pub fn acceleration(&self, k: usize) -> f64 {
        if k + 1 < self.speeds.len() {
            (self.speeds[k + 1] - self.speeds[k]) / self.dt()
        } else {
            0.0
        }
    }

    pub fn distance(&self) -> f64 {
        let dt = self.dt();
        self.speeds.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cycle".into());
        Self::parse_csv(&name, &path.display().to_string(), &text)
    }

    /// Parses `time_s,speed_mps` rows. A non-numeric first row is taken as a header.
    pub fn parse_csv(name: &str, origin: &str, text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut times = Vec::new();
        let mut speeds = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                path: origin.into(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
            let parse_err = |msg: String| Error::Parse {
                path: origin.into(),
                line,
                msg,
            };
            if rec.len() != 2 {
                return Err(parse_err(format!("expected 2 columns, found {}", rec.len())));
            }
            let t = rec[0].parse::<f64>();
            let v = rec[1].parse::<f64>();
            match (t, v) {
                (Ok(t), Ok(v)) => {
                    times.push(t);
                    speeds.push(v);
                }
                _ if i == 0 => continue,
                _ => {
                    return Err(parse_err(format!(
                        "non-numeric row {:?}",
                        rec.iter().collect::<Vec<_>>()
                    )))
                }
            }
        }
        Self::new(name, times, speeds)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,speed_mps\n");
        for (t, v) in self.timestamps.iter().zip(&self.speeds) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Speeds zero-padded (or truncated) to `len` samples.
    fn padded(&self, len: usize) -> impl Iterator<Item = f64> + '_ {
        self.speeds.iter().copied().chain(std::iter::repeat(0.0)).take(len)
    }
}

/// SOC plus the next `N` accelerations: the inputs the distilled policy sees.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewWindow {
    pub soc: f64,
    pub accels: Vec<f64>,
}

impl PreviewWindow {
    pub fn horizon(&self) -> usize {
        self.accels.len()
    }

    /// `[soc, a(k), ..., a(k+N-1)]`
    pub fn features(&self) -> Vec<f64> {
        std::iter::once(self.soc).chain(self.accels.iter().copied()).collect()
    }
}

/// Preview of `n` accelerations starting at step `k`; steps past the end of
/// the cycle read as zero (vehicle stopped).
pub fn preview(cycle: &DriveCycle, k: usize, n: usize, soc: f64) -> PreviewWindow {
    PreviewWindow {
        soc,
        accels: (k..k + n).map(|j| cycle.acceleration(j)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub count: usize,
    pub seed: u64,
    /// Standard deviation of the additive speed noise (m/s).
    pub noise_scale: f64,
    /// Per-variant speed scaling is drawn uniformly in `[-spread, spread]`.
    pub scale_spread: f64,
    /// AR(1) coefficient of the noise; closer to 1 is smoother.
    pub noise_corr: f64,
    /// Below this base speed the noise is tapered linearly to zero so stops stay stops.
    pub taper_speed: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 7,
            noise_scale: 0.5,
            scale_spread: 0.05,
            noise_corr: 0.95,
            taper_speed: 5.0,
        }
    }
}

/// Generates `count` variants of `base`: scaled by `1 + s_i` and perturbed by
/// low-pass filtered zero-mean noise, clamped at zero. A pure function of its
/// inputs.
pub fn synthesize_family(base: &DriveCycle, params: &FamilyParams) -> Result<Vec<DriveCycle>> {
    if params.count == 0 {
        return Err(Error::InvalidConfig("family count must be at least 1".into()));
    }
    if !(params.noise_scale >= 0.0 && params.scale_spread >= 0.0) {
        return Err(Error::InvalidConfig(
            "noise_scale and scale_spread must be nonnegative".into(),
        ));
    }
    if !(0.0..1.0).contains(&params.noise_corr) {
        return Err(Error::InvalidConfig("noise_corr must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let innovation = Normal::new(0.0, 1.0).expect("unit normal");
    let gain = (1.0 - params.noise_corr * params.noise_corr).sqrt();
    let mut family = Vec::with_capacity(params.count);
    for i in 0..params.count {
        let scale = if params.scale_spread > 0.0 {
            rng.random_range(-params.scale_spread..=params.scale_spread)
        } else {
            0.0
        };
        // stationary AR(1) with unit variance
        let mut state: f64 = innovation.sample(&mut rng);
        let speeds = base
            .speeds
            .iter()
            .map(|&v| {
                let taper = if params.taper_speed > 0.0 {
                    (v / params.taper_speed).min(1.0)
                } else {
                    1.0
                };
                let out = v * (1.0 + scale) + params.noise_scale * taper * state;
                state = params.noise_corr * state + gain * innovation.sample(&mut rng);
                out.max(0.0)
            })
            .collect();
        family.push(DriveCycle {
            name: format!("{}-v{:02}", base.name, i),
            timestamps: base.timestamps.clone(),
            speeds,
        });
    }
    Ok(family)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleEnvelope {
    pub dt: f64,
    pub mean_speed: Vec<f64>,
    pub band_halfwidth: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    TrainedLike,
    Untrained,
}

fn common_dt(cycles: &[DriveCycle]) -> Result<f64> {
    let dt = cycles[0].dt();
    for c in &cycles[1..] {
        if (c.dt() - dt).abs() > GRID_TOL {
            return Err(Error::GridMismatch {
                expected: dt,
                found: c.dt(),
            });
        }
    }
    Ok(dt)
}

/// Per-step mean speed of a set of cycles, shorter ones zero-padded.
pub fn mean_cycle(cycles: &[DriveCycle], name: &str) -> Result<DriveCycle> {
    if cycles.is_empty() {
        return Err(Error::Empty("mean of zero cycles"));
    }
    let dt = common_dt(cycles)?;
    let len = cycles.iter().map(DriveCycle::len).max().unwrap_or(0);
    let mut sum = vec![0.0; len];
    for c in cycles {
        for (s, v) in sum.iter_mut().zip(c.padded(len)) {
            *s += v;
        }
    }
    let n = cycles.len() as f64;
    DriveCycle::from_speeds(name, dt, sum.into_iter().map(|s| s / n).collect())
}

/// Per-step mean and `1.5 * std` band of the trained set (population standard
/// deviation, shorter cycles zero-padded).
pub fn build_envelope(trained: &[DriveCycle]) -> Result<CycleEnvelope> {
    if trained.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "envelope needs at least 2 trained cycles, got {}",
            trained.len()
        )));
    }
    let dt = common_dt(trained)?;
    let len = trained.iter().map(DriveCycle::len).max().unwrap_or(0);
    let n = trained.len() as f64;
    let rows: Vec<Vec<f64>> = trained.iter().map(|c| c.padded(len).collect()).collect();
    let mut mean_speed = vec![0.0; len];
    let mut band_halfwidth = vec![0.0; len];
    for t in 0..len {
        let mean = rows.iter().map(|r| r[t]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[t] - mean).powi(2)).sum::<f64>() / n;
        mean_speed[t] = mean;
        band_halfwidth[t] = BAND_SIGMAS * var.sqrt();
    }
    Ok(CycleEnvelope {
        dt,
        mean_speed,
        band_halfwidth,
    })
}

impl CycleEnvelope {
    /// Share of the cycle's samples inside the band.
    pub fn inside_fraction(&self, cycle: &DriveCycle) -> Result<f64> {
        if (cycle.dt() - self.dt).abs() > GRID_TOL {
            return Err(Error::GridMismatch {
                expected: self.dt,
                found: cycle.dt(),
            });
        }
        let len = self.mean_speed.len().max(cycle.len());
        let band = |t: usize| -> (f64, f64) {
            (
                self.mean_speed.get(t).copied().unwrap_or(0.0),
                self.band_halfwidth.get(t).copied().unwrap_or(0.0),
            )
        };
        let inside = cycle
            .padded(len)
            .enumerate()
            .filter(|&(t, v)| {
                let (m, h) = band(t);
                (v - m).abs() <= h + 1e-12
            })
            .count();
        Ok(inside as f64 / len as f64)
    }

    pub fn classify(&self, cycle: &DriveCycle) -> Result<Similarity> {
        Ok(if self.inside_fraction(cycle)? >= INSIDE_FRACTION {
            Similarity::TrainedLike
        } else {
            Similarity::Untrained
        })
    }
}

pub fn classify(cycle: &DriveCycle, envelope: &CycleEnvelope) -> Result<Similarity> {
    envelope.classify(cycle)
}

/// Built-in 1 Hz route of roughly 9.5 km mixing urban stop-and-go with
/// arterial cruising. Speed changes follow half-cosine ramps.
pub fn reference_route() -> DriveCycle {
    // (target m/s, ramp s, hold s)
    const SEGMENTS: &[(f64, usize, usize)] = &[
        (0.0, 1, 5),
        (11.0, 14, 38),
        (14.0, 6, 55),
        (0.0, 14, 20),
        (17.0, 20, 85),
        (12.0, 8, 40),
        (0.0, 12, 25),
        (9.0, 10, 35),
        (13.0, 8, 50),
        (0.0, 12, 15),
        (19.0, 24, 110),
        (15.0, 8, 40),
        (0.0, 15, 20),
        (10.0, 10, 45),
        (0.0, 10, 10),
    ];
    let mut speeds = vec![0.0];
    let mut current = 0.0;
    for &(target, ramp, hold) in SEGMENTS {
        for i in 1..=ramp {
            let frac = 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / ramp as f64).cos());
            speeds.push(current + (target - current) * frac);
        }
        current = target;
        for i in 0..hold {
            // gentle undulation so cruising still carries preview information
            let wobble = if target > 0.0 {
                0.25 * (2.0 * std::f64::consts::PI * i as f64 / 23.0).sin()
            } else {
                0.0
            };
            speeds.push(target + wobble);
        }
    }
    DriveCycle::from_speeds("route", 1.0, speeds).expect("reference route is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyc(v: &[f64]) -> DriveCycle {
        DriveCycle::from_speeds("t", 1.0, v.to_vec()).unwrap()
    }

    #[test]
    fn parse_minimal_csv() {
        let c = DriveCycle::parse_csv("x", "mem", "0,0\n1,1\n2,2").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dt(), 1.0);
        let h = DriveCycle::parse_csv("x", "mem", "time_s,speed_mps\n0,0\n1,1\n").unwrap();
        assert_eq!(h.speeds, vec![0.0, 1.0]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            DriveCycle::parse_csv("x", "mem", "0,0\n1,-1"),
            Err(Error::NegativeSpeed { index: 1 })
        ));
        assert!(matches!(
            DriveCycle::parse_csv("x", "mem", "0,0\n1,1\n2.5,2"),
            Err(Error::NonuniformGrid { index: 2 })
        ));
        assert!(matches!(
            DriveCycle::parse_csv("x", "mem", "0,0\n1,abc\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            DriveCycle::parse_csv("x", "mem", "0,0,3\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn accelerations_examples() {
        assert_eq!(cyc(&[4.0, 4.0, 4.0]).accelerations(), vec![0.0, 0.0]);
        assert_eq!(cyc(&[0.0, 1.0, 3.0]).accelerations(), vec![1.0, 2.0]);
        assert_eq!(cyc(&[5.0, 5.0, 0.0]).accelerations(), vec![0.0, -5.0]);
    }

    #[test]
    fn preview_examples() {
        let c = cyc(&[0.0, 1.0, 3.0]);
        assert_eq!(preview(&c, 0, 2, 0.6).accels, vec![1.0, 2.0]);
        assert_eq!(preview(&c, 1, 3, 0.6).accels, vec![2.0, 0.0, 0.0]);
        let p = preview(&c, 0, 2, 0.55);
        assert_eq!(p.features(), vec![0.55, 1.0, 2.0]);
        assert_eq!(c, cyc(&[0.0, 1.0, 3.0]));
    }

    #[test]
    fn family_identity_and_determinism() {
        let base = reference_route();
        let same = synthesize_family(
            &base,
            &FamilyParams {
                count: 1,
                noise_scale: 0.0,
                scale_spread: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(same[0].speeds, base.speeds);

        let p = FamilyParams {
            count: 5,
            seed: 7,
            ..Default::default()
        };
        assert_eq!(
            synthesize_family(&base, &p).unwrap(),
            synthesize_family(&base, &p).unwrap()
        );
    }

    #[test]
    fn family_has_spread() {
        let base = reference_route();
        let fam = synthesize_family(&base, &FamilyParams::default()).unwrap();
        let env = build_envelope(&fam).unwrap();
        assert!(env.band_halfwidth.iter().any(|&h| h > 0.0));
        assert!(fam.iter().all(|c| c.speeds.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn envelope_examples() {
        let a = cyc(&[1.0, 2.0, 3.0, 2.0]);
        let env = build_envelope(&[a.clone(), a.clone()]).unwrap();
        assert!(env.band_halfwidth.iter().all(|&h| h == 0.0));
        assert_eq!(env.classify(&a).unwrap(), Similarity::TrainedLike);

        let b = cyc(&[2.0, 3.0, 5.0, 2.0]);
        let env = build_envelope(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(classify(&a, &env).unwrap(), Similarity::TrainedLike);
        assert_eq!(classify(&b, &env).unwrap(), Similarity::TrainedLike);
        let std: Vec<f64> = env.band_halfwidth.iter().map(|h| h / BAND_SIGMAS).collect();
        let far = cyc(&env
            .mean_speed
            .iter()
            .zip(&std)
            .map(|(m, s)| m + 10.0 * s + 1.0)
            .collect::<Vec<_>>());
        assert_eq!(classify(&far, &env).unwrap(), Similarity::Untrained);
    }

    #[test]
    fn route_family_sits_inside_its_envelope() {
        let base = reference_route();
        let fam = synthesize_family(
            &base,
            &FamilyParams {
                count: 12,
                ..FamilyParams::default()
            },
        )
        .unwrap();
        let env = build_envelope(&fam[..10]).unwrap();
        for c in &fam {
            assert_eq!(env.classify(c).unwrap(), Similarity::TrainedLike, "{}", c.name);
        }
        let faster = DriveCycle::from_speeds("faster", 1.0, base.speeds.iter().map(|v| 1.15 * v).collect()).unwrap();
        assert_eq!(env.classify(&faster).unwrap(), Similarity::Untrained);
    }

    #[test]
    fn envelope_rejects_mismatched_grids() {
        let a = cyc(&[1.0, 2.0]);
        let b = DriveCycle::from_speeds("b", 0.5, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            build_envelope(&[a.clone(), b]),
            Err(Error::GridMismatch { .. })
        ));
        assert!(build_envelope(&[a]).is_err());
    }

    #[test]
    fn shorter_cycles_are_zero_padded() {
        let a = cyc(&[2.0, 2.0, 2.0]);
        let b = cyc(&[2.0, 2.0]);
        let m = mean_cycle(&[a, b], "m").unwrap();
        assert_eq!(m.speeds, vec![2.0, 2.0, 1.0]);
    }

    #[test]
    fn reference_route_is_plausible() {
        let r = reference_route();
        let km = r.distance() / 1000.0;
        assert!((8.0..11.0).contains(&km), "{km} km");
        let amax = r.accelerations().iter().fold(0.0f64, |m, a| m.max(a.abs()));
        assert!(amax < 2.0, "{amax}");
        assert_eq!(*r.speeds.last().unwrap(), 0.0);
    }
}
