//! Diagonal-covariance Gaussian mixtures over latent representations.
//!
//! All densities are handled as logarithms; with a few hundred latent
//! dimensions the normalizer alone underflows `f64`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{argmax, logsumexp, Tensor};

/// Smallest variance a component may carry.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Responsibility mass below which a component counts as empty.
const EMPTY_MASS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Diagonal of the covariance.
    pub variances: Vec<f64>,
    pub weight: f64,
}

/// `ln g(x | μ, diag σ²)`.
pub fn component_log_density(c: &GaussianComponent, x: &[f64]) -> Result<f64> {
    if x.len() != c.mean.len() || c.variances.len() != c.mean.len() {
        return Err(Error::Shape {
            op: "component_log_density",
            lhs: vec![c.mean.len()],
            rhs: vec![x.len()],
        });
    }
    if let Some(v) = c
        .variances
        .iter()
        .find(|&&v| v.is_nan() || v < VARIANCE_FLOOR)
    {
        return Err(Error::contract(format!(
            "variance {v} below floor {VARIANCE_FLOOR}"
        )));
    }
    Ok(log_density_unchecked(c, x))
}

fn log_density_unchecked(c: &GaussianComponent, x: &[f64]) -> f64 {
    let mut log_det = 0.0;
    let mut maha = 0.0;
    for ((xj, mj), vj) in x.iter().zip(&c.mean).zip(&c.variances) {
        let d = xj - mj;
        log_det += vj.ln();
        maha += d * d / vj;
    }
    -0.5 * (x.len() as f64 * (2.0 * PI).ln() + log_det + maha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
    dim: usize,
}

impl GmmModel {
    /// Validates and wraps `components`: at least one, equal dimensions,
    /// variances at or above the floor, weights in (0, 1] summing to 1.
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::contract("a mixture needs at least one component"));
        };
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::contract("latent dimension must be positive"));
        }
        for c in &components {
            if c.mean.len() != dim || c.variances.len() != dim {
                return Err(Error::Shape {
                    op: "gmm component",
                    lhs: vec![dim],
                    rhs: vec![c.mean.len(), c.variances.len()],
                });
            }
            if c.variances
                .iter()
                .any(|&v| !v.is_finite() || v < VARIANCE_FLOOR)
            {
                return Err(Error::contract("component variance below floor"));
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::contract(format!(
                    "component weight {} outside (0, 1]",
                    c.weight
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("mixture weights sum to {total}")));
        }
        Ok(GmmModel { components, dim })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Number of components M.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Latent dimension L.
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(Error::Shape {
                op: "gmm point",
                lhs: vec![self.dim],
                rhs: vec![x.len()],
            })
        }
    }

    /// `ln wᵢ + ln g(x | λᵢ)` for every component.
    pub fn log_joint(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self
            .components
            .iter()
            .map(|c| c.weight.ln() + log_density_unchecked(c, x))
            .collect())
    }

    /// `ln p(x | λ)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(logsumexp(&self.log_joint(x)?))
    }

    /// `Pr(i | x)` for every component.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let lj = self.log_joint(x)?;
        let z = logsumexp(&lj);
        Ok(lj.iter().map(|l| (l - z).exp()).collect())
    }

    /// Most probable component; ties go to the lowest index.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.log_joint(x)?))
    }

    /// Mean of `ln p(x | λ)` over the rows of `data`.
    pub fn mean_log_likelihood(&self, data: &Tensor) -> Result<f64> {
        let n = check_data(data)?;
        let mut total = 0.0;
        for i in 0..n {
            total += self.log_density(data.row(i))?;
        }
        Ok(total / n as f64)
    }
}

/// `ln p(x | λ)` under `m`.
pub fn mixture_log_density(m: &GmmModel, x: &[f64]) -> Result<f64> {
    m.log_density(x)
}

fn check_data(data: &Tensor) -> Result<usize> {
    if data.ndim() != 2 {
        return Err(Error::Shape {
            op: "gmm data",
            lhs: vec![0, 0],
            rhs: data.shape().to_vec(),
        });
    }
    Ok(data.rows())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
}

impl EmConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        EmConfig {
            components,
            seed,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub model: GmmModel,
    /// Mean log-likelihood of the parameters entering each E-step, plus the
    /// final parameters when the loop ran out of iterations.
    pub log_likelihood_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// History indices `t` at which a component was re-seeded between
    /// entries `t - 1` and `t` (the likelihood may drop there).
    pub reseeds: Vec<usize>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn global_variances(data: &Tensor) -> Vec<f64> {
    let (n, l) = (data.rows(), data.cols());
    let mut mean = vec![0.0; l];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; l];
    for i in 0..n {
        for ((v, x), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter()
        .map(|v| (v / n as f64).max(VARIANCE_FLOOR))
        .collect()
}

/// Greedy k-means++ seeding: the first mean is a uniformly drawn point;
/// for each further mean, `2 + ln k` candidates are drawn with probability
/// proportional to their squared distance from the nearest mean so far, and
/// the one leaving the smallest total squared distance is kept.
fn kmeans_pp(data: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.rows();
    let trials = 2 + (k as f64).ln() as usize;
    let mut means = vec![data.row(rng.gen_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| squared_distance(data.row(i), &means[0]))
        .collect();
    while means.len() < k {
        let total: f64 = nearest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut chosen = n - 1;
                for (i, d) in nearest.iter().enumerate() {
                    if u < *d {
                        chosen = i;
                        break;
                    }
                    u -= d;
                }
                chosen
            } else {
                rng.gen_range(0..n)
            };
            let updated: Vec<f64> = (0..n)
                .map(|i| nearest[i].min(squared_distance(data.row(i), data.row(pick))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one trial");
        nearest = updated;
        means.push(data.row(pick).to_vec());
    }
    means
}

/// Maximum Lloyd iterations applied to the seeded means before EM.
const LLOYD_MAX_ITER: usize = 100;

/// Lloyd k-means refinement: alternate nearest-mean assignment (ties to the
/// lowest index) and centroid updates until assignments stop changing. A
/// mean that loses all its points stays where it is.
fn lloyd(data: &Tensor, mut means: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let (n, l) = (data.rows(), data.cols());
    let mut assign = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITER {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let x = data.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, m) in means.iter().enumerate() {
                let d = squared_distance(x, m);
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            changed |= *a != best;
            *a = best;
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; l]; means.len()];
        let mut counts = vec![0usize; means.len()];
        for (i, &k) in assign.iter().enumerate() {
            counts[k] += 1;
            for (s, x) in sums[k].iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        for ((m, s), &c) in means.iter_mut().zip(sums).zip(&counts) {
            if c > 0 {
                *m = s.into_iter().map(|v| v / c as f64).collect();
            }
        }
    }
    means
}

/// Fits an M-component diagonal mixture by expectation-maximization.
pub fn fit_em(data: &Tensor, cfg: &EmConfig) -> Result<EmFit> {
    let n = check_data(data)?;
    let m = cfg.components;
    if m == 0 {
        return Err(Error::Config(
            "number of mixture components must be at least 1".into(),
        ));
    }
    if n < m {
        return Err(Error::Config(format!(
            "{n} samples cannot support {m} components"
        )));
    }
    if !data.is_finite() {
        return Err(Error::contract("mixture data contains non-finite values"));
    }
    let l = data.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let global = global_variances(data);
    let mut comps: Vec<GaussianComponent> = lloyd(data, kmeans_pp(data, m, &mut rng))
        .into_iter()
        .map(|mean| GaussianComponent {
            mean,
            variances: global.clone(),
            weight: 1.0 / m as f64,
        })
        .collect();

    let mut history = Vec::new();
    let mut reseeds = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resp = vec![0.0; n * m];
    let mut point_ll = vec![0.0; n];
    loop {
        // E-step
        let mut total = 0.0;
        for i in 0..n {
            let x = data.row(i);
            let r = &mut resp[i * m..(i + 1) * m];
            for (rk, c) in r.iter_mut().zip(&comps) {
                *rk = c.weight.ln() + log_density_unchecked(c, x);
            }
            let z = logsumexp(r);
            r.iter_mut().for_each(|v| *v = (*v - z).exp());
            point_ll[i] = z;
            total += z;
        }
        let ll = total / n as f64;
        if let Some(&prev) = history.last() {
            let reseeded = reseeds.last() == Some(&history.len());
            if !reseeded && ll - prev < cfg.tol {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;

        // M-step
        let mut reseeded = false;
        for k in 0..m {
            let mass: f64 = (0..n).map(|i| resp[i * m + k]).sum();
            let c = &mut comps[k];
            if mass < EMPTY_MASS {
                let worst = argmax(&point_ll.iter().map(|v| -v).collect::<Vec<_>>());
                log::warn!("mixture component {k} emptied; re-seeded at sample {worst}");
                c.mean = data.row(worst).to_vec();
                c.variances = global.clone();
                c.weight = 1.0 / n as f64;
                // a second empty component must not land on the same point
                point_ll[worst] = f64::INFINITY;
                reseeded = true;
                continue;
            }
            let mut mean = vec![0.0; l];
            for i in 0..n {
                let r = resp[i * m + k];
                for (mj, x) in mean.iter_mut().zip(data.row(i)) {
                    *mj += r * x;
                }
            }
            mean.iter_mut().for_each(|v| *v /= mass);
            let mut var = vec![0.0; l];
            for i in 0..n {
                let r = resp[i * m + k];
                for ((vj, x), mj) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                    *vj += r * (x - mj) * (x - mj);
                }
            }
            var.iter_mut()
                .for_each(|v| *v = (*v / mass).max(VARIANCE_FLOOR));
            c.mean = mean;
            c.variances = var;
            c.weight = mass / n as f64;
        }
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        comps.iter_mut().for_each(|c| c.weight /= wsum);
        if reseeded {
            reseeds.push(history.len());
        }
    }
    Ok(EmFit {
        model: GmmModel::new(comps)?,
        log_likelihood_history: history,
        iterations,
        converged,
        reseeds,
    })
}

/// Mean silhouette coefficient of `labels` over the rows of `data`
/// (Euclidean distance). Points alone in their cluster contribute 0.
pub fn silhouette(data: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = check_data(data)?;
    if labels.len() != n {
        return Err(Error::contract(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        clusters.entry(c).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(Error::contract("silhouette needs at least two clusters"));
    }
    let index: BTreeMap<usize, usize> = clusters.keys().enumerate().map(|(k, &c)| (c, k)).collect();
    let sizes: Vec<usize> = clusters.values().map(Vec::len).collect();
    let c = sizes.len();
    let lab: Vec<usize> = labels.iter().map(|l| index[l]).collect();
    // sums[i * c + k]: total distance from point i to the members of cluster k
    let mut sums = vec![0.0; n * c];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(data.row(i), data.row(j)).sqrt();
            sums[i * c + lab[j]] += d;
            sums[j * c + lab[i]] += d;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = lab[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[i * c + own] / (sizes[own] - 1) as f64;
        let b = (0..c)
            .filter(|&k| k != own)
            .map(|k| sums[i * c + k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Box-Muller standard normal.
    fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    fn comp(mean: Vec<f64>, variances: Vec<f64>, weight: f64) -> GaussianComponent {
        GaussianComponent {
            mean,
            variances,
            weight,
        }
    }

    /// Density straight from the product formula, no logarithms.
    fn direct_density(c: &GaussianComponent, x: &[f64]) -> f64 {
        let mut p = 1.0;
        for j in 0..x.len() {
            let v = c.variances[j];
            let d = x[j] - c.mean[j];
            p *= (-d * d / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        }
        p
    }

    fn random_comp(rng: &mut ChaCha8Rng, l: usize, w: f64) -> GaussianComponent {
        comp(
            (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..l).map(|_| rng.gen_range(0.2..3.0)).collect(),
            w,
        )
    }

    fn blobs(
        rng: &mut ChaCha8Rng,
        centers: &[Vec<f64>],
        per: usize,
        sigma: f64,
    ) -> (Tensor, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(c.iter().map(|m| m + sigma * normal(rng)).collect());
                labels.push(k);
            }
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn standard_normal_mode() {
        let c = comp(vec![0.0], vec![1.0], 1.0);
        let g = component_log_density(&c, &[0.0]).unwrap().exp();
        assert!((g - 0.398942280401).abs() < 1e-10);
    }

    #[test]
    fn density_at_mean_has_no_distance_term() {
        let c = comp(vec![1.0, -2.0, 0.5], vec![0.5, 2.0, 3.0], 1.0);
        let expected = -1.5 * (2.0 * PI).ln() - 0.5 * (0.5f64.ln() + 2f64.ln() + 3f64.ln());
        assert!((component_log_density(&c, &c.mean).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn log_density_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = random_comp(&mut rng, 3, 1.0);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let got = component_log_density(&c, &x).unwrap();
            assert!((got - direct_density(&c, &x).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_below_floor_is_rejected() {
        let c = comp(vec![0.0], vec![1e-7], 1.0);
        assert!(matches!(
            component_log_density(&c, &[0.0]),
            Err(Error::Contract(_))
        ));
        assert!(GmmModel::new(vec![c]).is_err());
    }

    #[test]
    fn mixture_density_cases() {
        let c = comp(vec![0.3, -0.1], vec![1.5, 0.7], 1.0);
        let single = GmmModel::new(vec![c.clone()]).unwrap();
        let x = [0.9, 0.4];
        assert_eq!(
            mixture_log_density(&single, &x).unwrap(),
            component_log_density(&c, &x).unwrap()
        );
        let twin = GmmModel::new(vec![comp(c.mean.clone(), c.variances.clone(), 0.5); 2]).unwrap();
        assert!(
            (twin.log_density(&x).unwrap() - component_log_density(&c, &x).unwrap()).abs() < 1e-12
        );

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = GmmModel::new(vec![
            random_comp(&mut rng, 3, 0.2),
            random_comp(&mut rng, 3, 0.5),
            random_comp(&mut rng, 3, 0.3),
        ])
        .unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let direct: f64 = m
                .components()
                .iter()
                .map(|c| c.weight * direct_density(c, &x))
                .sum();
            assert!((m.log_density(&x).unwrap() - direct.ln()).abs() < 1e-12);
            let post = m.posterior(&x).unwrap();
            for (p, c) in post.iter().zip(m.components()) {
                assert!((p - c.weight * direct_density(c, &x) / direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_trivial_cases() {
        let one = GmmModel::new(vec![comp(vec![0.0], vec![1.0], 1.0)]).unwrap();
        assert_eq!(one.posterior(&[5.0]).unwrap(), vec![1.0]);
        assert_eq!(one.assign(&[5.0]).unwrap(), 0);
        let sym = GmmModel::new(vec![
            comp(vec![-1.0, 0.0], vec![1.0, 1.0], 0.5),
            comp(vec![1.0, 0.0], vec![1.0, 1.0], 0.5),
        ])
        .unwrap();
        let p = sym.posterior(&[0.0, 3.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9);
        // exact tie goes to the lower index
        assert_eq!(sym.assign(&[0.0, 3.0]).unwrap(), 0);
        assert_eq!(sym.assign(&[-1.0, 0.0]).unwrap(), 0);
        assert_eq!(sym.assign(&[1.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn assign_agrees_with_posterior_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = GmmModel::new(vec![
            random_comp(&mut rng, 4, 0.25),
            random_comp(&mut rng, 4, 0.25),
            random_comp(&mut rng, 4, 0.5),
        ])
        .unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect();
            assert_eq!(m.assign(&x).unwrap(), argmax(&m.posterior(&x).unwrap()));
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                (0..3)
                    .map(|j| j as f64 + normal(&mut rng) * (j + 1) as f64)
                    .collect()
            })
            .collect();
        let data = Tensor::from_rows(&rows).unwrap();
        let fit = fit_em(&data, &EmConfig::new(1, 0)).unwrap();
        let c = &fit.model.components()[0];
        for j in 0..3 {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / 50.0;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 50.0;
            assert!((c.mean[j] - mean).abs() < 1e-9);
            assert!((c.variances[j] - var).abs() < 1e-9);
        }
        assert!(fit.converged);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (data, labels) = blobs(&mut rng, &[vec![0.0, 0.0], vec![10.0, 0.0]], 60, 1.0);
        let fit = fit_em(&data, &EmConfig::new(2, 4)).unwrap();
        let assigned: Vec<usize> = (0..data.rows())
            .map(|i| fit.model.assign(data.row(i)).unwrap())
            .collect();
        let flip = assigned[0] != labels[0];
        for (a, l) in assigned.iter().zip(&labels) {
            assert_eq!(*a, if flip { 1 - l } else { *l });
        }
    }

    #[test]
    fn blobs_separated_on_one_axis_only_are_recovered() {
        // the global variance is large on axis 0 and small elsewhere, so
        // unrefined seeds let within-blob noise dominate the responsibilities
        let mut rng = ChaCha8Rng::seed_from_u64(507);
        let centers = [
            vec![0.0, 0.0, 0.0, 0.0],
            vec![5.0, 0.0, 0.0, 0.0],
            vec![10.0, 0.0, 0.0, 0.0],
        ];
        let (data, labels) = blobs(&mut rng, &centers, 60, 0.5);
        for seed in 0..10 {
            let fit = fit_em(&data, &EmConfig::new(3, seed)).unwrap();
            let assigned: Vec<usize> = (0..data.rows())
                .map(|i| fit.model.assign(data.row(i)).unwrap())
                .collect();
            let map: Vec<usize> = (0..3).map(|k| assigned[k * 60]).collect();
            assert_ne!(map[0], map[1]);
            assert_ne!(map[1], map[2]);
            assert_ne!(map[0], map[2]);
            for (a, l) in assigned.iter().zip(&labels) {
                assert_eq!(*a, map[*l], "seed {seed}");
            }
        }
    }

    #[test]
    fn lloyd_moves_seeds_to_centroids() {
        let data = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![12.0]]).unwrap();
        let means = lloyd(&data, vec![vec![0.0], vec![1.0]]);
        assert_eq!(means, vec![vec![0.5], vec![11.0]]);
    }

    #[test]
    fn too_few_samples_is_config_error() {
        let data = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            fit_em(&data, &EmConfig::new(3, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn duplicate_points_trigger_reseed_without_panic() {
        let mut rows = vec![vec![0.0, 0.0]; 10];
        rows.push(vec![5.0, 5.0]);
        let data = Tensor::from_rows(&rows).unwrap();
        let fit = fit_em(&data, &EmConfig::new(3, 1)).unwrap();
        assert_eq!(fit.model.len(), 3);
        let w: f64 = fit.model.components().iter().map(|c| c.weight).sum();
        assert!((w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn silhouette_perfect_separation() {
        let data = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![50.0, 50.0],
            vec![50.0, 50.0],
        ])
        .unwrap();
        let s = silhouette(&data, &[0, 0, 1, 1]).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn silhouette_four_point_hand_value() {
        let data = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ])
        .unwrap();
        // every point: a = 1, b = (10 + sqrt(101)) / 2
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        let s = silhouette(&data, &[0, 0, 1, 1]).unwrap();
        assert!((s - (b - 1.0) / b).abs() < 1e-12);
    }

    #[test]
    fn silhouette_singletons_and_errors() {
        let data = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![5.0]]).unwrap();
        // point 2 is alone; points 0 and 1: a = 1, b = 5 and 4
        let s = silhouette(&data, &[0, 0, 1]).unwrap();
        assert!((s - (0.8 + 0.75) / 3.0).abs() < 1e-12);
        assert!(silhouette(&data, &[0, 0, 0]).is_err());
        assert!(silhouette(&data, &[0, 1]).is_err());
    }

    #[test]
    fn silhouette_of_random_labels_is_near_zero() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (data, _) = blobs(&mut rng, &[vec![0.0, 0.0, 0.0]], 200, 1.0);
            let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..3)).collect();
            assert!(silhouette(&data, &labels).unwrap().abs() < 0.2);
        }
    }

    fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, u64)> {
        (1usize..5, 1usize..4, any::<u64>()).prop_flat_map(|(l, m, seed)| {
            (
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, l), (m + 1)..60),
                Just(m),
                Just(seed),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn em_likelihood_never_decreases((rows, m, seed) in dataset()) {
            let data = Tensor::from_rows(&rows).unwrap();
            let fit = fit_em(&data, &EmConfig::new(m, seed)).unwrap();
            let h = &fit.log_likelihood_history;
            for t in 1..h.len() {
                if !fit.reseeds.contains(&t) {
                    prop_assert!(h[t] >= h[t - 1] - 1e-9, "step {t}: {} -> {}", h[t - 1], h[t]);
                }
            }
        }

        #[test]
        fn em_is_deterministic((rows, m, seed) in dataset()) {
            let data = Tensor::from_rows(&rows).unwrap();
            let a = fit_em(&data, &EmConfig::new(m, seed)).unwrap();
            let b = fit_em(&data, &EmConfig::new(m, seed)).unwrap();
            prop_assert_eq!(a.model, b.model);
        }

        #[test]
        fn posteriors_are_distributions((rows, m, seed) in dataset()) {
            let data = Tensor::from_rows(&rows).unwrap();
            let fit = fit_em(&data, &EmConfig::new(m, seed)).unwrap();
            for r in &rows {
                let p = fit.model.posterior(r).unwrap();
                prop_assert!(p.iter().all(|&v| v >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn assign_ignores_weight_scale((rows, m, seed) in dataset(), scale in 1e-3f64..1e3) {
            let data = Tensor::from_rows(&rows).unwrap();
            let fit = fit_em(&data, &EmConfig::new(m, seed)).unwrap();
            for r in &rows {
                let shifted: Vec<f64> = fit.model.log_joint(r).unwrap().iter().map(|v| v + scale.ln()).collect();
                prop_assert_eq!(fit.model.assign(r).unwrap(), argmax(&shifted));
            }
        }

        #[test]
        fn silhouette_is_bounded(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 3..30), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<usize> = (0..rows.len()).map(|_| rng.gen_range(0..3)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let s = silhouette(&Tensor::from_rows(&rows).unwrap(), &labels).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
