//! Finite atomic design measures on (0,1].
//!
//! A design measure encodes an experiment plan: each atom is a dose volume
//! (location) together with the number of times that dose is repeated
//! (mass). Masses are real during optimization and rounded to integers
//! before an actual experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Locations closer than this are treated as the same dose and merged.
pub const LOCATION_MERGE_TOL: f64 = 1e-10;

/// Default mass below which an atom is dropped by [`DesignMeasure::normalize`].
pub const DEFAULT_DROP_TOL: f64 = 1e-9;

/// One atom of a design measure: a dose volume and its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Dose volume, strictly in (0, 1].
    #[serde(rename = "x")]
    pub location: f64,
    /// Dose multiplicity, nonnegative.
    #[serde(rename = "m")]
    pub mass: f64,
}

/// A finite nonnegative atomic measure on (0,1].
///
/// Atoms are kept sorted by location with near-duplicate locations merged,
/// so `atoms()` is always strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "RawMeasure")]
pub struct DesignMeasure {
    atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
struct RawMeasure {
    atoms: Vec<Atom>,
}

impl From<DesignMeasure> for RawMeasure {
    fn from(m: DesignMeasure) -> Self {
        RawMeasure { atoms: m.atoms }
    }
}

impl<'de> Deserialize<'de> for DesignMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawMeasure::deserialize(d)?;
        let pairs: Vec<(f64, f64)> = raw.atoms.iter().map(|a| (a.location, a.mass)).collect();
        DesignMeasure::new(&pairs).map_err(serde::de::Error::custom)
    }
}

impl DesignMeasure {
    /// Build a measure from `(location, mass)` pairs.
    ///
    /// Atoms are sorted, locations within [`LOCATION_MERGE_TOL`] merged by
    /// summing masses. Rejects locations outside (0,1], negative masses and
    /// non-finite values.
    pub fn new(pairs: &[(f64, f64)]) -> Result<Self> {
        for &(x, m) in pairs {
            if !x.is_finite() || x <= 0.0 || x > 1.0 {
                return Err(Error::InvalidMeasure(format!(
                    "location {x} outside (0, 1]"
                )));
            }
            if !m.is_finite() || m < 0.0 {
                return Err(Error::InvalidMeasure(format!("mass {m} is negative")));
            }
        }
        let mut sorted: Vec<(f64, f64)> = pairs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<Atom> = Vec::with_capacity(sorted.len());
        for (x, m) in sorted {
            match atoms.last_mut() {
                Some(last) if x - last.location <= LOCATION_MERGE_TOL => last.mass += m,
                _ => atoms.push(Atom {
                    location: x,
                    mass: m,
                }),
            }
        }
        Ok(DesignMeasure { atoms })
    }

    /// The zero measure.
    pub fn empty() -> Self {
        DesignMeasure { atoms: Vec::new() }
    }

    /// `mass * delta_{location}`.
    pub fn single(location: f64, mass: f64) -> Result<Self> {
        Self::new(&[(location, mass)])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    /// Total mass: sum of all multiplicities.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Total volume of substrate used: sum of mass times location.
    pub fn total_volume(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.location).sum()
    }

    /// Smallest atom location, if any.
    pub fn min_location(&self) -> Option<f64> {
        self.atoms.first().map(|a| a.location)
    }

    /// Drop atoms with mass below `drop_tol` (duplicates are already merged
    /// and order maintained by construction). Idempotent.
    pub fn normalize(&self, drop_tol: f64) -> Result<Self> {
        if !(drop_tol >= 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "drop tolerance {drop_tol} must be nonnegative"
            )));
        }
        let kept: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .filter(|a| a.mass >= drop_tol && a.mass > 0.0)
            .map(|a| (a.location, a.mass))
            .collect();
        DesignMeasure::new(&kept)
    }

    /// Nearest measure with integer multiplicities and the same total mass.
    ///
    /// Requires the total mass to be integral within 1e-6. Among all
    /// floor/ceil assignments preserving the total, picks the one with the
    /// smallest Euclidean distance in the mass vector; when the input
    /// satisfies the volume budget (total volume <= 1) only candidates that
    /// also satisfy it are considered. Zero-mass atoms are dropped.
    pub fn round_to_integer_design(&self) -> Result<Self> {
        let total = self.total_mass();
        let n = total.round();
        if (total - n).abs() > 1e-6 {
            return Err(Error::NonIntegralMass(total));
        }
        let k = self.atoms.len();
        if k == 0 {
            return Ok(Self::empty());
        }
        let floors: Vec<f64> = self.atoms.iter().map(|a| a.mass.floor()).collect();
        let units = (n - floors.iter().sum::<f64>()).round() as i64;
        let units = units.clamp(0, k as i64) as usize;

        let feasible_required = self.total_volume() <= 1.0 + 1e-12;
        let mut best: Option<(f64, Vec<f64>)> = None;
        // Choose which `units` atoms get the extra unit. Exhaustive when
        // cheap, otherwise greedy by fractional part.
        let combos: Vec<Vec<usize>> = if binomial(k, units) <= 20_000 {
            combinations(k, units)
        } else {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.sort_by(|&i, &j| {
                let fi = self.atoms[i].mass - floors[i];
                let fj = self.atoms[j].mass - floors[j];
                fj.total_cmp(&fi)
            });
            vec![idx[..units].to_vec()]
        };
        for combo in &combos {
            let mut masses = floors.clone();
            for &i in combo {
                masses[i] += 1.0;
            }
            let volume: f64 = masses
                .iter()
                .zip(&self.atoms)
                .map(|(m, a)| m * a.location)
                .sum();
            if feasible_required && volume > 1.0 + 1e-12 {
                continue;
            }
            let dist: f64 = masses
                .iter()
                .zip(&self.atoms)
                .map(|(m, a)| (m - a.mass).powi(2))
                .sum();
            if best.as_ref().map_or(true, |(d, _)| dist < *d) {
                best = Some((dist, masses));
            }
        }
        let (_, masses) = best.ok_or_else(|| {
            Error::Infeasible("no integer rounding preserves total mass within the volume budget".into())
        })?;
        let pairs: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .zip(&masses)
            .filter(|(_, &m)| m > 0.0)
            .map(|(a, &m)| (a.location, m))
            .collect();
        DesignMeasure::new(&pairs)
    }

    /// Write the measure as CSV with an `x,m` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,m\n");
        for a in &self.atoms {
            out.push_str(&format!("{},{}\n", a.location, a.mass));
        }
        out
    }

    /// Parse the two-column CSV form produced by [`Self::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with('x')) {
                continue;
            }
            let mut parts = line.split(',');
            let x: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidMeasure(format!("bad CSV line {:?}", line)))?;
            let m: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidMeasure(format!("bad CSV line {:?}", line)))?;
            pairs.push((x, m));
        }
        DesignMeasure::new(&pairs)
    }
}

/// The two linear constraints of the design problem: fixed total mass
/// (number of mice) and a volume budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstraintSpec {
    /// Number of mice n; the equality `total_mass == n` is enforced.
    pub total_mass: f64,
    /// Right-hand side of the volume inequality, in (0, 1].
    pub volume_budget: f64,
}

impl ConstraintSpec {
    pub fn new(total_mass: f64, volume_budget: f64) -> Result<Self> {
        if !(total_mass > 0.0) {
            return Err(Error::Infeasible(format!(
                "total mass {total_mass} must be positive"
            )));
        }
        if !(volume_budget > 0.0 && volume_budget <= 1.0) {
            return Err(Error::Infeasible(format!(
                "volume budget {volume_budget} outside (0, 1]"
            )));
        }
        Ok(ConstraintSpec {
            total_mass,
            volume_budget,
        })
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..k).collect();
    if k == 0 {
        return vec![Vec::new()];
    }
    if k > n {
        return out;
    }
    loop {
        out.push(combo.clone());
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if combo[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_mass_examples() {
        let m = DesignMeasure::single(1.0 / 30.0, 30.0).unwrap();
        assert_eq!(m.total_mass(), 30.0);
        assert_eq!(DesignMeasure::empty().total_mass(), 0.0);
        let two = DesignMeasure::new(&[(0.019, 18.98), (0.058, 11.02)]).unwrap();
        assert!((two.total_mass() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn total_volume_examples() {
        let m = DesignMeasure::single(1.0 / 30.0, 30.0).unwrap();
        assert!((m.total_volume() - 1.0).abs() < 1e-12);
        let m = DesignMeasure::single(0.0159362, 30.0).unwrap();
        assert!((m.total_volume() - 0.478086).abs() < 1e-9);
        assert_eq!(DesignMeasure::empty().total_volume(), 0.0);
    }

    #[test]
    fn normalize_merges_sorts_drops() {
        let m = DesignMeasure::new(&[(0.5, 2.0), (0.5, 3.0)]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.atoms()[0].mass, 5.0);

        let m = DesignMeasure::new(&[(0.3, 1e-12), (0.4, 30.0)])
            .unwrap()
            .normalize(1e-9)
            .unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.atoms()[0].location, 0.4);

        let m = DesignMeasure::new(&[(0.7, 1.0), (0.2, 2.0)]).unwrap();
        assert_eq!(m.atoms()[0].location, 0.2);
        assert_eq!(m.atoms()[1].location, 0.7);
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(DesignMeasure::new(&[(0.0, 1.0)]).is_err());
        assert!(DesignMeasure::new(&[(-0.1, 1.0)]).is_err());
        assert!(DesignMeasure::new(&[(1.5, 1.0)]).is_err());
        assert!(DesignMeasure::new(&[(0.5, -1.0)]).is_err());
        assert!(DesignMeasure::new(&[(0.5, f64::NAN)]).is_err());
    }

    #[test]
    fn rounding_matches_examples() {
        let m = DesignMeasure::new(&[(0.019, 18.98), (0.058, 11.02)]).unwrap();
        let r = m.round_to_integer_design().unwrap();
        assert_eq!(r.atoms()[0].mass, 19.0);
        assert_eq!(r.atoms()[1].mass, 11.0);

        let m = DesignMeasure::single(1.0 / 30.0, 30.0).unwrap();
        let r = m.round_to_integer_design().unwrap();
        assert_eq!(r, m);

        let m = DesignMeasure::new(&[(0.025, 29.97), (0.026, 0.03)]).unwrap();
        let r = m.round_to_integer_design().unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.atoms()[0].location, 0.025);
        assert_eq!(r.atoms()[0].mass, 30.0);
    }

    #[test]
    fn rounding_rejects_non_integral_total() {
        let m = DesignMeasure::single(0.5, 29.5).unwrap();
        assert!(matches!(
            m.round_to_integer_design(),
            Err(Error::NonIntegralMass(_))
        ));
    }

    #[test]
    fn rounding_preserves_mass_and_respects_volume() {
        // Ties in distance are broken toward the rounding that keeps the
        // volume inside the budget.
        let m = DesignMeasure::new(&[(0.02, 10.5), (0.0405, 19.5)]).unwrap();
        assert!(m.total_volume() <= 1.0);
        let r = m.round_to_integer_design().unwrap();
        assert_eq!(r.total_mass(), 30.0);
        assert!(r.total_volume() <= 1.0 + 1e-12);
        assert_eq!(r.atoms()[0].mass, 11.0);
        assert_eq!(r.atoms()[1].mass, 19.0);
    }

    #[test]
    fn json_round_trip() {
        let m = DesignMeasure::new(&[(0.019, 18.98), (0.058, 11.02)]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"x\":0.019"));
        let back: DesignMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn csv_round_trip() {
        let m = DesignMeasure::new(&[(0.019, 18.98), (0.058, 11.02)]).unwrap();
        let back = DesignMeasure::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn constraint_spec_validation() {
        assert!(ConstraintSpec::new(30.0, 1.0).is_ok());
        assert!(ConstraintSpec::new(0.0, 1.0).is_err());
        assert!(ConstraintSpec::new(30.0, 0.0).is_err());
        assert!(ConstraintSpec::new(30.0, 1.5).is_err());
    }
}
