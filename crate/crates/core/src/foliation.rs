//! Foliation specifications: built-in families and specification files.

use crate::chart::{fs_distance, ChartPoint};
use crate::error::{Error, Result};
use crate::poly::{HomogeneousField, PolyVectorField};
use crate::singular::{find_singularities, Singularity};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoliationSpec {
    pub field: PolyVectorField,
    pub singularities: Vec<Singularity>,
    pub family_tag: String,
    /// Assumptions that were not verified numerically.
    pub assumptions: Vec<String>,
}

impl FoliationSpec {
    pub fn from_field(field: PolyVectorField, family_tag: impl Into<String>) -> Result<Self> {
        let singularities = find_singularities(&field)?;
        Ok(Self {
            field,
            singularities,
            family_tag: family_tag.into(),
            assumptions: Vec::new(),
        })
    }

    pub fn degree(&self) -> usize {
        self.field.degree
    }

    /// Runs refuse foliations with non-hyperbolic singular points.
    pub fn validate_for_runs(&self) -> Result<()> {
        for s in &self.singularities {
            if !s.hyperbolic {
                return Err(Error::NonHyperbolic(format!(
                    "chart {} ({:.6}, {:.6}), ratio {:.6}",
                    s.location.chart, s.location.u, s.location.v, s.ratio
                )));
            }
        }
        Ok(())
    }

    /// Index of and Fubini–Study distance to the nearest singular point.
    pub fn nearest_singularity(&self, p: &ChartPoint) -> Option<(usize, f64)> {
        self.singularities
            .iter()
            .enumerate()
            .map(|(i, s)| (i, fs_distance(p, &s.location)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn dist_to_singular_set(&self, p: &ChartPoint) -> f64 {
        self.nearest_singularity(p).map_or(f64::INFINITY, |(_, d)| d)
    }
}

/// The Jouanolou foliation of degree `d`, `X = y^d d/dx + z^d d/dy + x^d d/dz`.
pub fn jouanolou(d: usize) -> Result<FoliationSpec> {
    if d < 2 {
        return Err(Error::Config(format!("Jouanolou family needs degree >= 2, got {d}")));
    }
    let one = C64::new(1.0, 0.0);
    let mut comps: [Vec<([usize; 3], C64)>; 3] = Default::default();
    comps[0].push(([0, d, 0], one));
    comps[1].push(([0, 0, d], one));
    comps[2].push(([d, 0, 0], one));
    let field = PolyVectorField::from_homogeneous(HomogeneousField {
        degree: d,
        components: comps,
    });
    let mut spec = FoliationSpec::from_field(field, format!("jouanolou-{d}"))?;
    spec.assumptions
        .push("Brody hyperbolicity and absence of invariant algebraic curves taken from the literature".into());
    Ok(spec)
}

/// Degree-one fixture `X = x d/dx + lambda y d/dy`: in chart 2 the field is `(u, lambda v)`.
pub fn linear_model(lambda: C64) -> Result<FoliationSpec> {
    let one = C64::new(1.0, 0.0);
    let mut comps: [Vec<([usize; 3], C64)>; 3] = Default::default();
    comps[0].push(([1, 0, 0], one));
    comps[1].push(([0, 1, 0], lambda));
    let field = PolyVectorField::from_homogeneous(HomogeneousField {
        degree: 1,
        components: comps,
    });
    FoliationSpec::from_field(field, format!("linear({:.4}{:+.4}i)", lambda.re, lambda.im))
}

/// Foliation with i.i.d. standard complex Gaussian homogeneous coefficients.
///
/// Redraws (up to 16 times) until all `d^2 + d + 1` singular points are found
/// and hyperbolic. Absence of invariant curves is not certified.
pub fn random_foliation(d: usize, seed: u64) -> Result<FoliationSpec> {
    if d < 1 {
        return Err(Error::Config("degree must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for attempt in 0..16 {
        let mut comps: [Vec<([usize; 3], C64)>; 3] = Default::default();
        for comp in comps.iter_mut() {
            for a in 0..=d {
                for b in 0..=(d - a) {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    comp.push(([a, b, d - a - b], C64::new(re, im) / 2f64.sqrt()));
                }
            }
        }
        let field = PolyVectorField::from_homogeneous(HomogeneousField {
            degree: d,
            components: comps,
        });
        match FoliationSpec::from_field(field, format!("random-{d}-{seed}")) {
            Ok(mut spec) if spec.validate_for_runs().is_ok() => {
                spec.assumptions.push(format!(
                    "generic: absence of invariant algebraic curves not verified (draw {attempt})"
                ));
                return Ok(spec);
            }
            Ok(_) => last_err = Some(Error::NonHyperbolic(format!("draw {attempt}"))),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Config("random foliation failed".into())))
}

/// On-disk specification (TOML).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub family: Option<String>,
    pub degree: Option<usize>,
    pub chart: Option<usize>,
    /// Monomials of `P` as `[i, j, re, im]` meaning `(re + i im) u^i v^j`.
    pub p: Option<Vec<[f64; 4]>>,
    pub q: Option<Vec<[f64; 4]>>,
    /// Eigenvalue ratio `[re, im]` for the `linear` family.
    pub lambda: Option<[f64; 2]>,
    pub seed: Option<u64>,
}

fn terms(list: &[[f64; 4]]) -> Result<Vec<(usize, usize, C64)>> {
    list.iter()
        .map(|t| {
            if t[0] < 0.0 || t[1] < 0.0 || t[0].fract() != 0.0 || t[1].fract() != 0.0 {
                return Err(Error::Config(format!("bad exponents in monomial {t:?}")));
            }
            Ok((t[0] as usize, t[1] as usize, C64::new(t[2], t[3])))
        })
        .collect()
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("foliation spec: {e}")))
    }

    pub fn build(&self) -> Result<FoliationSpec> {
        match self.family.as_deref() {
            Some("jouanolou") => jouanolou(
                self.degree
                    .ok_or_else(|| Error::Config("jouanolou needs a degree".into()))?,
            ),
            Some("linear") => {
                let l = self.lambda.unwrap_or([0.0, 1.0]);
                linear_model(C64::new(l[0], l[1]))
            }
            Some("random") => random_foliation(
                self.degree
                    .ok_or_else(|| Error::Config("random needs a degree".into()))?,
                self.seed.unwrap_or(0),
            ),
            Some(other) => Err(Error::Config(format!("unknown family '{other}'"))),
            None => {
                let degree = self
                    .degree
                    .ok_or_else(|| Error::Config("explicit spec needs a degree".into()))?;
                let chart = self.chart.unwrap_or(2);
                let p = terms(self.p.as_deref().unwrap_or(&[]))?;
                let q = terms(self.q.as_deref().unwrap_or(&[]))?;
                let field = PolyVectorField::from_chart_terms(degree, chart, &p, &q)?;
                FoliationSpec::from_field(field, format!("explicit-{degree}"))
            }
        }
    }
}

pub fn load_spec(path: &Path) -> Result<FoliationSpec> {
    let text = std::fs::read_to_string(path)?;
    SpecFile::parse(&text)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_low_degree() {
        assert!(matches!(jouanolou(1), Err(Error::Config(_))));
    }

    #[test]
    fn parse_family_file() {
        let f = SpecFile::parse("family = \"jouanolou\"\ndegree = 2\n").unwrap();
        assert_eq!(f.degree, Some(2));
        assert!(SpecFile::parse("famly = 1").is_err());
    }
}
