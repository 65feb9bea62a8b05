//! Deterministic synthetic data generator used for desk-scale validation.
//!
//! Leaves are Gaussian feature clusters. Each signal modality splits its
//! features into a formation subspace (means drawn per formation) and a leaf
//! subspace (means drawn per leaf), with the formation signal at twice the
//! standard deviation of the leaf signal so the hierarchy is learnable.
//! Same-leaf samples cluster spatially, and every spatial cluster carries its
//! own feature offset, which plants the autocorrelation that random-split CV
//! exploits and spatial-block CV does not.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Modality, SampleTable};
use crate::error::{Error, Result};
use crate::taxonomy::{FormationRule, Taxonomy};

fn default_formation_signal() -> f64 {
    2.0
}
fn default_leaf_signal() -> f64 {
    1.0
}
fn default_clusters_per_leaf() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub formations: usize,
    pub leaves_per_formation: usize,
    /// Sample count for the head leaf; later leaves decay geometrically.
    pub base_samples_per_leaf: usize,
    /// Geometric decay ratio in (0, 1]; 1.0 = balanced classes.
    #[serde(default = "one")]
    pub decay: f64,
    /// Feature count per signal modality.
    pub features_per_modality: BTreeMap<Modality, usize>,
    /// Modalities whose features are pure noise (no class signal planted).
    #[serde(default)]
    pub noise_modalities: Vec<Modality>,
    /// Side length of the square spatial domain (meters).
    pub domain_size: f64,
    #[serde(default = "default_clusters_per_leaf")]
    pub clusters_per_leaf: usize,
    /// Spatial spread of samples around their cluster center (meters).
    pub cluster_radius: f64,
    /// Std of the per-spatial-cluster feature offset (the autocorrelated
    /// component shared by nearby samples).
    #[serde(default)]
    pub autocorr_noise: f64,
    /// Std of iid per-sample feature noise.
    pub noise: f64,
    #[serde(default = "default_formation_signal")]
    pub formation_signal: f64,
    #[serde(default = "default_leaf_signal")]
    pub leaf_signal: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let mut features = BTreeMap::new();
        features.insert(Modality::Abio, 6);
        features.insert(Modality::Rsbio, 4);
        features.insert(Modality::Msi, 4);
        features.insert(Modality::Sar, 4);
        SyntheticSpec {
            formations: 3,
            leaves_per_formation: 4,
            base_samples_per_leaf: 60,
            decay: 1.0,
            features_per_modality: features,
            noise_modalities: Vec::new(),
            domain_size: 10_000.0,
            clusters_per_leaf: default_clusters_per_leaf(),
            cluster_radius: 200.0,
            autocorr_noise: 0.0,
            noise: 1.0,
            formation_signal: default_formation_signal(),
            leaf_signal: default_leaf_signal(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.formations == 0 || self.leaves_per_formation == 0 {
            return Err(Error::InvalidSpec("counts must be >= 1".into()));
        }
        if self.formations > 26 {
            return Err(Error::InvalidSpec("at most 26 formations (A..Z codes)".into()));
        }
        if self.formations * self.leaves_per_formation < 2 {
            return Err(Error::InvalidSpec("need at least 2 leaves".into()));
        }
        if self.base_samples_per_leaf == 0 || self.clusters_per_leaf == 0 {
            return Err(Error::InvalidSpec("counts must be >= 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidSpec("decay must be in (0, 1]".into()));
        }
        if self.domain_size <= 0.0 || self.cluster_radius < 0.0 || self.noise < 0.0 {
            return Err(Error::InvalidSpec("spatial/noise parameters out of range".into()));
        }
        if self.features_per_modality.values().all(|&d| d == 0) {
            return Err(Error::InvalidSpec("no feature columns requested".into()));
        }
        Ok(())
    }

    /// Per-leaf sample counts in taxonomy index order.
    pub fn leaf_counts(&self) -> Vec<usize> {
        let k = self.formations * self.leaves_per_formation;
        (0..k)
            .map(|i| {
                let c = (self.base_samples_per_leaf as f64 * self.decay.powi(i as i32)).round();
                (c as usize).max(1)
            })
            .collect()
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates a dataset and its taxonomy from the spec. Identical spec+seed
/// yields a bit-identical table.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(SampleTable, Taxonomy)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let f = spec.formations;
    let lpf = spec.leaves_per_formation;
    let k = f * lpf;
    let mut leaf_codes = Vec::with_capacity(k);
    for fi in 0..f {
        let fc = (b'A' + fi as u8) as char;
        for li in 0..lpf {
            leaf_codes.push(format!("{fc}{li:02}"));
        }
    }
    let taxonomy = Taxonomy::build(&leaf_codes, &FormationRule::PrefixLength(1))?;

    // Feature schema: signal modalities in a fixed order, bioreg one-hot last.
    let mut feature_names = Vec::new();
    let mut modalities = Vec::new();
    // (modality, feature-within-modality, is_formation_subspace)
    let mut signal_plan: Vec<(Modality, usize, bool)> = Vec::new();
    for m in Modality::ALL {
        let Some(&d) = spec.features_per_modality.get(&m) else {
            continue;
        };
        let is_noise = spec.noise_modalities.contains(&m);
        for j in 0..d {
            feature_names.push(format!("{m}__f{j}"));
            modalities.push(m);
            // First half of each signal modality carries the formation signal.
            let formation_sub = !is_noise && j < d.div_ceil(2);
            signal_plan.push(if is_noise {
                (m, j, false)
            } else {
                (m, j, formation_sub)
            });
        }
    }
    let p_signal = feature_names.len();
    let noise_col: Vec<bool> = modalities
        .iter()
        .map(|m| spec.noise_modalities.contains(m))
        .collect();

    // Class means. Drawn in a fixed order: formation means, then leaf means.
    let mut formation_mean = vec![vec![0.0; p_signal]; f];
    for fm in formation_mean.iter_mut() {
        for (j, cell) in fm.iter_mut().enumerate() {
            if !noise_col[j] && signal_plan[j].2 {
                *cell = spec.formation_signal * normal(&mut rng);
            }
        }
    }
    let mut leaf_mean = vec![vec![0.0; p_signal]; k];
    for lm in leaf_mean.iter_mut() {
        for (j, cell) in lm.iter_mut().enumerate() {
            if !noise_col[j] && !signal_plan[j].2 {
                *cell = spec.leaf_signal * normal(&mut rng);
            }
        }
    }

    // Spatial clusters per leaf: center plus a private feature offset.
    let counts = spec.leaf_counts();
    struct Cluster {
        cx: f64,
        cy: f64,
        offset: Vec<f64>,
    }
    let mut clusters: Vec<Vec<Cluster>> = Vec::with_capacity(k);
    for _leaf in 0..k {
        let mut cs = Vec::with_capacity(spec.clusters_per_leaf);
        for _ in 0..spec.clusters_per_leaf {
            let cx = rng.gen_range(0.0..spec.domain_size);
            let cy = rng.gen_range(0.0..spec.domain_size);
            let offset = (0..p_signal)
                .map(|j| {
                    if noise_col[j] {
                        0.0
                    } else {
                        spec.autocorr_noise * normal(&mut rng)
                    }
                })
                .collect();
            cs.push(Cluster { cx, cy, offset });
        }
        clusters.push(cs);
    }

    let n: usize = counts.iter().sum();
    let mut ids = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut bioregion = Vec::with_capacity(n);
    let mut leaf_of = Vec::with_capacity(n);
    let mut features = Array2::zeros((n, p_signal));

    let mut row = 0usize;
    for leaf in 0..k {
        let fm = taxonomy.parent_of(leaf);
        for s in 0..counts[leaf] {
            let c = &clusters[leaf][s % spec.clusters_per_leaf];
            let x = (c.cx + spec.cluster_radius * normal(&mut rng))
                .clamp(0.0, spec.domain_size - 1e-9);
            let y = (c.cy + spec.cluster_radius * normal(&mut rng))
                .clamp(0.0, spec.domain_size - 1e-9);
            for j in 0..p_signal {
                let base = if noise_col[j] {
                    0.0
                } else {
                    formation_mean[fm][j] + leaf_mean[leaf][j] + c.offset[j]
                };
                features[[row, j]] = base + spec.noise * normal(&mut rng);
            }
            ids.push(format!("s{row:06}"));
            xs.push(x);
            ys.push(y);
            // 2x2 spatial partition stands in for biogeographic regions.
            let bx = if x < spec.domain_size / 2.0 { 0 } else { 1 };
            let by = if y < spec.domain_size / 2.0 { 0 } else { 1 };
            bioregion.push(format!("bg{bx}{by}"));
            leaf_of.push(Some(leaf));
            let _ = s;
            row += 1;
        }
    }

    // One-hot bioregion columns, matching ingestion behaviour.
    let mut codes: Vec<String> = bioregion.clone();
    codes.sort();
    codes.dedup();
    let mut full = Array2::zeros((n, p_signal + codes.len()));
    full.slice_mut(ndarray::s![.., ..p_signal]).assign(&features);
    for r in 0..n {
        let j = codes.binary_search(&bioregion[r]).unwrap();
        full[[r, p_signal + j]] = 1.0;
    }
    for c in &codes {
        feature_names.push(format!("bioreg__{c}"));
        modalities.push(Modality::Bioreg);
    }

    Ok((
        SampleTable {
            ids,
            x: xs,
            y: ys,
            bioregion,
            leaf: leaf_of,
            feature_names,
            modalities,
            features: full,
        },
        taxonomy,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        let mut fpm = BTreeMap::new();
        fpm.insert(Modality::Abio, 4);
        fpm.insert(Modality::Msi, 2);
        SyntheticSpec {
            formations: 2,
            leaves_per_formation: 2,
            base_samples_per_leaf: 50,
            decay: 1.0,
            features_per_modality: fpm,
            noise_modalities: vec![],
            domain_size: 100.0,
            clusters_per_leaf: 3,
            cluster_radius: 2.0,
            autocorr_noise: 0.0,
            noise: 0.5,
            formation_signal: 2.0,
            leaf_signal: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn balanced_counts() {
        let (t, tax) = generate_synthetic(&small_spec()).unwrap();
        assert_eq!(t.n_rows(), 200);
        let rows: Vec<usize> = (0..t.n_rows()).collect();
        assert_eq!(t.class_counts(&rows, tax.n_leaves()), vec![50, 50, 50, 50]);
    }

    #[test]
    fn geometric_decay_counts() {
        let mut s = small_spec();
        s.formations = 1;
        s.leaves_per_formation = 4;
        s.base_samples_per_leaf = 64;
        s.decay = 0.5;
        assert_eq!(s.leaf_counts(), vec![64, 32, 16, 8]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let s = small_spec();
        let (a, _) = generate_synthetic(&s).unwrap();
        let (b, _) = generate_synthetic(&s).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = small_spec();
        s.decay = 0.0;
        assert!(matches!(generate_synthetic(&s), Err(Error::InvalidSpec(_))));
        let mut s = small_spec();
        s.formations = 0;
        assert!(matches!(generate_synthetic(&s), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn noise_modality_carries_no_signal() {
        let mut s = small_spec();
        s.noise_modalities = vec![Modality::Msi];
        let (t, tax) = generate_synthetic(&s).unwrap();
        // Per-class means of noise columns stay near zero.
        let cols = t.columns_for(&[Modality::Msi]);
        for leaf in 0..tax.n_leaves() {
            for &j in &cols {
                let vals: Vec<f64> = (0..t.n_rows())
                    .filter(|&r| t.leaf[r] == Some(leaf))
                    .map(|r| t.features[[r, j]])
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                assert!(m.abs() < 0.5, "leaf {leaf} col {j} mean {m}");
            }
        }
    }
}
