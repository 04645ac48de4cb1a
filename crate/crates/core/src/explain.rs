//! Gradient-based feature attribution: integrated gradients with a midpoint
//! grid, expected gradients over a background baseline distribution, optional
//! input-noise smoothing, and ranked importance summaries.
//!
//! Attributions target the pre-sigmoid logit, which gives a tight
//! completeness identity: the attributions of one sample sum to
//! logit(x) − logit(baseline) up to the reported residual.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logit_and_input_grads, LogisticModel, ModelArtifact};
use crate::preprocess::ModelInputLayout;

/// A scalar logit differentiable with respect to a flat feature vector.
pub trait LogitModel {
    fn input_dim(&self) -> usize;
    fn logit(&self, x: &[f64]) -> f64;
    /// Returns (logit, d logit / d x).
    fn logit_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// The hybrid network viewed through its selected-feature layout: flat rows
/// are split into the dynamic tensor and static vector, and input gradients
/// are merged back into flat order.
pub struct HybridLogit<'a> {
    pub params: &'a crate::model::ModelParams,
    pub layout: &'a ModelInputLayout,
}

impl<'a> HybridLogit<'a> {
    pub fn from_artifact(artifact: &'a ModelArtifact) -> Self {
        HybridLogit { params: &artifact.params, layout: &artifact.layout }
    }
}

impl LogitModel for HybridLogit<'_> {
    fn input_dim(&self) -> usize {
        self.layout.dynamic_len() + self.layout.static_names.len()
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.logit_and_grad(x).0
    }

    fn logit_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (dynamic, stat) = self.layout.split_row(x);
        let (logit, d_dyn, d_stat) = logit_and_input_grads(self.params, &dynamic, &stat)
            .expect("layout-split row must match model shapes");
        (logit, self.layout.merge_grad(&d_dyn, &d_stat))
    }
}

impl LogitModel for LogisticModel {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn logit(&self, x: &[f64]) -> f64 {
        LogisticModel::logit(self, x)
    }

    fn logit_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (LogisticModel::logit(self, x), self.w.clone())
    }
}

/// Attribution method settings recorded alongside the values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionMeta {
    pub steps: usize,
    pub n_baselines: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Per-feature signed contributions for one sample, with the completeness
/// residual always reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Vec<f64>,
    /// |Σ values − (logit(x) − logit(baseline))| (mean over baselines for
    /// expected gradients).
    pub residual: f64,
    pub meta: AttributionMeta,
}

/// Optional SmoothGrad-style input noise: each gradient evaluation point is
/// perturbed with N(0, σ²) noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

fn check_dims(model: &dyn LogitModel, x: &[f64], baseline: &[f64]) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::shape(format!(
            "input has {} features, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    if baseline.len() != x.len() {
        return Err(Error::shape(format!(
            "baseline has {} features, input has {}",
            baseline.len(),
            x.len()
        )));
    }
    Ok(())
}

/// Integrated gradients on a midpoint grid:
/// attribution_i = (x_i − x'_i) · mean over α of ∂f/∂x_i at x' + α(x − x').
pub fn integrated_gradients(
    model: &dyn LogitModel,
    x: &[f64],
    baseline: &[f64],
    steps: usize,
    noise: Option<NoiseSpec>,
) -> Result<Attribution> {
    check_dims(model, x, baseline)?;
    if steps == 0 {
        return Err(Error::config("integrated_gradients needs at least one step"));
    }
    let dim = x.len();
    let mut grad_mean = vec![0.0; dim];
    let mut noise_rng = noise.map(|n| {
        (ChaCha8Rng::seed_from_u64(n.seed), Normal::new(0.0, n.sigma).expect("σ must be finite"))
    });
    for step in 0..steps {
        let alpha = (step as f64 + 0.5) / steps as f64;
        let mut point: Vec<f64> = x
            .iter()
            .zip(baseline)
            .map(|(xv, bv)| bv + alpha * (xv - bv))
            .collect();
        if let Some((rng, normal)) = noise_rng.as_mut() {
            for v in point.iter_mut() {
                *v += normal.sample(rng);
            }
        }
        let (_, grad) = model.logit_and_grad(&point);
        for (m, g) in grad_mean.iter_mut().zip(&grad) {
            *m += g / steps as f64;
        }
    }
    let values: Vec<f64> = x
        .iter()
        .zip(baseline)
        .zip(&grad_mean)
        .map(|((xv, bv), g)| (xv - bv) * g)
        .collect();
    let delta = model.logit(x) - model.logit(baseline);
    let residual = (values.iter().sum::<f64>() - delta).abs();
    Ok(Attribution {
        values,
        residual,
        meta: AttributionMeta {
            steps,
            n_baselines: 1,
            noise_sigma: noise.map_or(0.0, |n| n.sigma),
            seed: noise.map_or(0, |n| n.seed),
        },
    })
}

/// Expected gradients: baselines are drawn with replacement from the
/// background set, with one uniform α per draw;
/// attribution_i = mean over draws of (x_i − b_i) · ∂f/∂x_i at b + α(x − b).
pub fn expected_gradients(
    model: &dyn LogitModel,
    x: &[f64],
    background: &[Vec<f64>],
    n_baselines: usize,
    seed: u64,
    noise: Option<NoiseSpec>,
) -> Result<Attribution> {
    if background.is_empty() {
        return Err(Error::data("expected_gradients: empty background set"));
    }
    if n_baselines == 0 {
        return Err(Error::config("expected_gradients needs at least one baseline draw"));
    }
    for b in background {
        check_dims(model, x, b)?;
    }
    let dim = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = noise.map(|n| {
        (
            ChaCha8Rng::seed_from_u64(crate::derive_seed(n.seed, &[0x401e])),
            Normal::new(0.0, n.sigma).expect("σ must be finite"),
        )
    });
    let fx = model.logit(x);
    let mut values = vec![0.0; dim];
    let mut delta_mean = 0.0;
    for _ in 0..n_baselines {
        let b = &background[rng.random_range(0..background.len())];
        let alpha: f64 = rng.random();
        let mut point: Vec<f64> =
            x.iter().zip(b).map(|(xv, bv)| bv + alpha * (xv - bv)).collect();
        if let Some((nrng, normal)) = noise_rng.as_mut() {
            for v in point.iter_mut() {
                *v += normal.sample(nrng);
            }
        }
        let (_, grad) = model.logit_and_grad(&point);
        for ((v, g), (xv, bv)) in values.iter_mut().zip(&grad).zip(x.iter().zip(b)) {
            *v += (xv - bv) * g / n_baselines as f64;
        }
        delta_mean += (fx - model.logit(b)) / n_baselines as f64;
    }
    let residual = (values.iter().sum::<f64>() - delta_mean).abs();
    Ok(Attribution {
        values,
        residual,
        meta: AttributionMeta {
            steps: 1,
            n_baselines,
            noise_sigma: noise.map_or(0.0, |n| n.sigma),
            seed,
        },
    })
}

/// One row of an importance summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_signed: f64,
    pub mean_abs: f64,
    /// 1-based rank by descending mean absolute attribution.
    pub rank: usize,
}

/// Per-feature attribution summary over a sample set, ranked by mean
/// absolute attribution (ties broken by feature name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub features: Vec<FeatureImportance>,
    pub n_samples: usize,
    pub meta: Option<AttributionMeta>,
}

pub fn summarize(names: &[String], attributions: &[Attribution]) -> Result<ImportanceSummary> {
    if attributions.is_empty() {
        return Err(Error::data("summarize: no attributions"));
    }
    let dim = names.len();
    for a in attributions {
        if a.values.len() != dim {
            return Err(Error::shape(format!(
                "attribution has {} values, feature map has {dim}",
                a.values.len()
            )));
        }
    }
    let n = attributions.len() as f64;
    let mut rows: Vec<FeatureImportance> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mean_signed = attributions.iter().map(|a| a.values[j]).sum::<f64>() / n;
            let mean_abs = attributions.iter().map(|a| a.values[j].abs()).sum::<f64>() / n;
            FeatureImportance { feature: name.clone(), mean_signed, mean_abs, rank: 0 }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean_abs
            .partial_cmp(&a.mean_abs)
            .unwrap()
            .then_with(|| a.feature.cmp(&b.feature))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(ImportanceSummary {
        features: rows,
        n_samples: attributions.len(),
        meta: attributions.first().map(|a| a.meta),
    })
}

impl ImportanceSummary {
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.features.iter().find(|f| f.feature == feature).map(|f| f.rank)
    }

    pub fn top(&self, k: usize) -> &[FeatureImportance] {
        &self.features[..k.min(self.features.len())]
    }

    /// `feature,mean_signed,mean_abs,rank` rows, rank ascending.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "mean_signed", "mean_abs", "rank"])?;
        for f in &self.features {
            w.write_record(&[
                f.feature.clone(),
                format!("{}", f.mean_signed),
                format!("{}", f.mean_abs),
                f.rank.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// A minimal horizontal bar chart of the top-k ranking.
    pub fn to_svg(&self, top_k: usize) -> String {
        let rows = self.top(top_k);
        let bar_h = 18;
        let gap = 6;
        let label_w = 220;
        let chart_w = 420;
        let height = rows.len() * (bar_h + gap) + gap + 20;
        let max_abs = rows.iter().map(|r| r.mean_abs).fold(f64::MIN_POSITIVE, f64::max);
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" \
             font-family=\"monospace\" font-size=\"12\">\n",
            label_w + chart_w + 80
        ));
        for (i, r) in rows.iter().enumerate() {
            let y = gap + i * (bar_h + gap);
            let w = (r.mean_abs / max_abs * chart_w as f64).round() as usize;
            let fill = if r.mean_signed >= 0.0 { "#2c7fb8" } else { "#d95f0e" };
            svg.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                label_w - 6,
                y + bar_h - 4,
                xml_escape(&r.feature)
            ));
            svg.push_str(&format!(
                "  <rect x=\"{label_w}\" y=\"{y}\" width=\"{w}\" height=\"{bar_h}\" fill=\"{fill}\"/>\n"
            ));
            svg.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\">{:.4}</text>\n",
                label_w + w + 6,
                y + bar_h - 4,
                r.mean_abs
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    struct QuadModel {
        dim: usize,
    }

    // f(x) = Σ x_i² + Σ x_i (a smooth nonlinear logit)
    impl LogitModel for QuadModel {
        fn input_dim(&self) -> usize {
            self.dim
        }
        fn logit(&self, x: &[f64]) -> f64 {
            x.iter().map(|v| v * v + v).sum()
        }
        fn logit_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
            (self.logit(x), x.iter().map(|v| 2.0 * v + 1.0).collect())
        }
    }

    #[test]
    fn linear_model_attributions_are_exact() {
        let model = LogisticModel { w: vec![2.0, -1.0, 0.5], b: 0.7 };
        let x = vec![1.0, 2.0, 3.0];
        let baseline = vec![0.5, 0.0, -1.0];
        let attr = integrated_gradients(&model, &x, &baseline, 64, None).unwrap();
        let expected = [2.0 * 0.5, -1.0 * 2.0, 0.5 * 4.0];
        for (a, e) in attr.values.iter().zip(expected) {
            assert!((a - e).abs() < 1e-10, "attribution {a} vs w_i(x_i − x'_i) = {e}");
        }
        assert!(attr.residual < 1e-12);
    }

    #[test]
    fn zero_path_gives_zero_attributions() {
        let model = QuadModel { dim: 3 };
        let x = vec![0.4, -0.2, 0.9];
        let attr = integrated_gradients(&model, &x, &x.clone(), 32, None).unwrap();
        assert!(attr.values.iter().all(|v| *v == 0.0));
        assert_eq!(attr.residual, 0.0);
    }

    #[test]
    fn residual_shrinks_with_more_steps() {
        // cubic term defeats the midpoint rule at low resolution
        struct Cubic;
        impl LogitModel for Cubic {
            fn input_dim(&self) -> usize {
                1
            }
            fn logit(&self, x: &[f64]) -> f64 {
                x[0].powi(4)
            }
            fn logit_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
                (self.logit(x), vec![4.0 * x[0].powi(3)])
            }
        }
        let coarse = integrated_gradients(&Cubic, &[2.0], &[0.0], 8, None).unwrap();
        let fine = integrated_gradients(&Cubic, &[2.0], &[0.0], 32, None).unwrap();
        assert!(fine.residual < coarse.residual);
        // midpoint rule is second order: 4× steps → ~16× smaller residual
        assert!(fine.residual < coarse.residual / 8.0);
    }

    #[test]
    fn baseline_shape_mismatch_is_an_error() {
        let model = QuadModel { dim: 3 };
        assert!(integrated_gradients(&model, &[1.0, 2.0, 3.0], &[0.0], 8, None).is_err());
    }

    #[test]
    fn expected_gradients_with_self_background_is_zero() {
        let model = QuadModel { dim: 2 };
        let x = vec![0.3, 0.8];
        let attr = expected_gradients(&model, &x, &[x.clone()], 16, 5, None).unwrap();
        assert!(attr.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn expected_gradients_is_deterministic() {
        let model = QuadModel { dim: 2 };
        let x = vec![0.3, 0.8];
        let bg = vec![vec![0.0, 0.0], vec![1.0, -1.0]];
        let a = expected_gradients(&model, &x, &bg, 32, 9, None).unwrap();
        let b = expected_gradients(&model, &x, &bg, 32, 9, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expected_gradients_converges_to_integrated_gradients() {
        // single background point: EG is a Monte-Carlo estimate of IG
        let model = QuadModel { dim: 2 };
        let x = vec![1.5, -0.7];
        let baseline = vec![0.2, 0.4];
        let ig = integrated_gradients(&model, &x, &baseline, 4096, None).unwrap();
        let eg = expected_gradients(&model, &x, &[baseline.clone()], 10_000, 11, None).unwrap();
        // per-coordinate tolerance: 3 standard errors of the α average.
        // f' is quadratic in α along the path, so Var over α is bounded by
        // the squared gradient range on the segment.
        for j in 0..2 {
            let d = x[j] - baseline[j];
            let g0 = 2.0 * baseline[j] + 1.0;
            let g1 = 2.0 * x[j] + 1.0;
            let spread = (g1 - g0).abs() * d.abs();
            let se = spread / (10_000f64).sqrt();
            assert!(
                (eg.values[j] - ig.values[j]).abs() <= 3.0 * se + 1e-9,
                "coordinate {j}: eg {} vs ig {} (3se = {})",
                eg.values[j],
                ig.values[j],
                3.0 * se
            );
        }
    }

    #[test]
    fn attributions_are_additive_across_summed_models() {
        struct Sum<'a>(&'a dyn LogitModel, &'a dyn LogitModel);
        impl LogitModel for Sum<'_> {
            fn input_dim(&self) -> usize {
                self.0.input_dim()
            }
            fn logit(&self, x: &[f64]) -> f64 {
                self.0.logit(x) + self.1.logit(x)
            }
            fn logit_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
                let (l0, g0) = self.0.logit_and_grad(x);
                let (l1, g1) = self.1.logit_and_grad(x);
                (l0 + l1, g0.iter().zip(&g1).map(|(a, b)| a + b).collect())
            }
        }
        let m1 = QuadModel { dim: 2 };
        let m2 = LogisticModel { w: vec![0.5, -2.0], b: 0.0 };
        let sum = Sum(&m1, &m2);
        let x = vec![0.9, -0.4];
        let baseline = vec![0.1, 0.2];
        let a1 = integrated_gradients(&m1, &x, &baseline, 64, None).unwrap();
        let a2 = integrated_gradients(&m2, &x, &baseline, 64, None).unwrap();
        let asum = integrated_gradients(&sum, &x, &baseline, 64, None).unwrap();
        for j in 0..2 {
            assert!((asum.values[j] - (a1.values[j] + a2.values[j])).abs() < 1e-9);
        }
    }

    #[test]
    fn summary_ranks_by_mean_abs_with_name_ties() {
        let names = vec!["b".to_string(), "a".to_string(), "c".to_string()];
        let meta = AttributionMeta { steps: 1, n_baselines: 1, noise_sigma: 0.0, seed: 0 };
        let attrs = vec![
            Attribution { values: vec![1.0, -1.0, 0.2], residual: 0.0, meta },
            Attribution { values: vec![-1.0, 1.0, 0.4], residual: 0.0, meta },
        ];
        let summary = summarize(&names, &attrs).unwrap();
        // b and a tie at mean_abs 1.0 → name order a < b
        assert_eq!(summary.features[0].feature, "a");
        assert_eq!(summary.features[1].feature, "b");
        assert_eq!(summary.features[0].mean_signed, 0.0);
        assert_eq!(summary.features[0].mean_abs, 1.0);
        assert_eq!(summary.features[2].feature, "c");
        assert!((summary.features[2].mean_abs - 0.3).abs() < 1e-12);
        assert_eq!(summary.rank_of("c"), Some(3));
    }

    #[test]
    fn single_attribution_summary_is_identity() {
        let names = vec!["x".to_string(), "y".to_string()];
        let meta = AttributionMeta { steps: 1, n_baselines: 1, noise_sigma: 0.0, seed: 0 };
        let attrs =
            vec![Attribution { values: vec![0.25, -0.5], residual: 0.0, meta }];
        let summary = summarize(&names, &attrs).unwrap();
        assert_eq!(summary.rank_of("y"), Some(1));
        let y = &summary.features[0];
        assert_eq!(y.mean_signed, -0.5);
        assert_eq!(y.mean_abs, 0.5);
    }
}
