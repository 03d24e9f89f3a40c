//! Evaluation protocol and analysis emissions.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::encoder::{encode, Mode};
use crate::error::{Error, Result};
use crate::heads::predict;
use crate::model::ModelState;
use crate::rng::RngStream;
use crate::task::{sample_episode, Domain, DEFAULT_QUERY};
use crate::tensor::{Graph, Tensor};

pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub domain: String,
    pub n_way: usize,
    pub n_shot: usize,
    pub n_query: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

impl EvalReport {
    /// Aggregates per-trial accuracies: mean and 1.96 * sample std / sqrt(n).
    pub fn from_accuracies(domain: impl Into<String>, n_way: usize, n_shot: usize, n_query: usize, accuracies: Vec<f64>) -> Self {
        let (mean, ci95) = mean_ci95(&accuracies);
        Self {
            domain: domain.into(),
            n_way,
            n_shot,
            n_query,
            accuracies,
            mean,
            ci95,
        }
    }

    pub fn trials(&self) -> usize {
        self.accuracies.len()
    }

    /// `trial,accuracy` rows then `# mean=M ci95=C`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trial,accuracy")?;
        for (t, a) in self.accuracies.iter().enumerate() {
            writeln!(w, "{t},{a:.6}")?;
        }
        writeln!(w, "# mean={:.6} ci95={:.6}", self.mean, self.ci95)?;
        Ok(())
    }
}

pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // shifted by the first value so constant inputs give exact results
    let shift = xs[0];
    let mean = shift + xs.iter().map(|x| x - shift).sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Evaluation stream for the domain at position `domain_index`; trial `t`
/// uses `eval_stream(seed, i).derive("trial", t)`.
pub fn eval_stream(seed: u64, domain_index: usize) -> RngStream {
    RngStream::substream(seed, "eval", domain_index as u64)
}

/// Accuracy of one episode with feature-wise transformations removed.
pub fn trial_accuracy(model: &ModelState, domain: &Domain, n_way: usize, n_shot: usize, n_query: usize, rng: &mut RngStream) -> Result<f64> {
    let ep = sample_episode(domain, domain.evaluation_pool(), n_way, n_shot, n_query, rng)?;
    let g = Graph::new();
    let logits = model.episode_logits(&g, &ep, Mode::Eval, false, rng)?;
    let pred = predict(&logits);
    let correct = pred.iter().zip(&ep.query_y).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / ep.query_y.len() as f64)
}

/// Runs the listed trial indices of the evaluation at `domain_index`.
pub fn evaluate_trials(
    model: &ModelState,
    domain: &Domain,
    domain_index: usize,
    n_way: usize,
    n_shot: usize,
    trials: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    let base = eval_stream(seed, domain_index);
    trials
        .par_iter()
        .map(|&t| trial_accuracy(model, domain, n_way, n_shot, DEFAULT_QUERY, &mut base.derive("trial", t as u64)))
        .collect()
}

pub fn evaluate_at(
    model: &ModelState,
    domain: &Domain,
    domain_index: usize,
    n_way: usize,
    n_shot: usize,
    trials: usize,
    seed: u64,
) -> Result<EvalReport> {
    let idx: Vec<usize> = (0..trials).collect();
    let acc = evaluate_trials(model, domain, domain_index, n_way, n_shot, &idx, seed)?;
    Ok(EvalReport::from_accuracies(domain.name.clone(), n_way, n_shot, DEFAULT_QUERY, acc))
}

/// Mean accuracy over `trials` episodes from the domain's evaluation pool.
pub fn evaluate(model: &ModelState, domain: &Domain, n_way: usize, n_shot: usize, trials: usize, seed: u64) -> Result<EvalReport> {
    evaluate_at(model, domain, 0, n_way, n_shot, trials, seed)
}

/// Position of the first domain equal to `domains[i]`; duplicates share streams.
fn canonical_index(domains: &[Domain], i: usize) -> usize {
    domains.iter().position(|d| d.same_content(&domains[i])).unwrap_or(i)
}

/// One report per domain, domain `i` evaluated with `eval_stream(seed, i)`.
/// A domain identical to an earlier entry reuses that entry's stream.
pub fn cross_domain_matrix(model: &ModelState, domains: &[Domain], n_way: usize, n_shot: usize, trials: usize, seed: u64) -> Result<Vec<EvalReport>> {
    let mut out: Vec<EvalReport> = Vec::with_capacity(domains.len());
    for i in 0..domains.len() {
        let c = canonical_index(domains, i);
        let report = if c < i {
            EvalReport {
                domain: domains[i].name.clone(),
                ..out[c].clone()
            }
        } else {
            evaluate_at(model, &domains[i], i, n_way, n_shot, trials, seed)?
        };
        out.push(report);
    }
    Ok(out)
}

pub fn write_matrix_csv<W: Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    writeln!(w, "domain,way,shot,trials,mean,ci95")?;
    for r in reports {
        writeln!(w, "{},{},{},{},{:.6},{:.6}", r.domain, r.n_way, r.n_shot, r.trials(), r.mean, r.ci95)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRow {
    pub domain: String,
    pub class_id: u32,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub rows: Vec<ProjectionRow>,
    /// Eigenvalues of the pooled covariance, descending.
    pub eigenvalues: Vec<f64>,
}

impl Projection {
    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn captured_variance(&self) -> f64 {
        self.eigenvalues.iter().take(2).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "domain,class_id,pc1,pc2")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:.9},{:.9}", r.domain, r.class_id, r.pc1, r.pc2)?;
        }
        Ok(())
    }
}

/// Two leading principal components of a row-major `n x c` matrix.
/// Each component's sign makes its largest-magnitude loading positive.
pub fn pca2(data: &[f64], n: usize, c: usize) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    if n < 3 {
        return Err(Error::Contract(format!("projection needs at least 3 samples, got {n}")));
    }
    let x = DMatrix::from_row_slice(n, c, data);
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut axes = Vec::with_capacity(2);
    for &i in order.iter().take(2) {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        if lead < 0.0 {
            v = -v;
        }
        axes.push(v);
    }
    let coords = centered
        .row_iter()
        .map(|row| {
            let mut p = [0.0; 2];
            for (k, a) in axes.iter().enumerate() {
                p[k] = row.dot(&a.transpose());
            }
            p
        })
        .collect();
    Ok((coords, eigenvalues))
}

/// Encodes `samples_per_domain` random items of each domain (one batch per
/// domain, eval mode) and projects the pooled embeddings onto two
/// principal components.
pub fn feature_projection(model: &ModelState, domains: &[Domain], samples_per_domain: usize, seed: u64) -> Result<Projection> {
    let c = model.encoder_config().output_dim();
    let mut pooled = Vec::new();
    let mut labels = Vec::new();
    for (i, d) in domains.iter().enumerate() {
        let items: Vec<(usize, usize)> = (0..d.num_classes())
            .flat_map(|ci| (0..d.class_len(ci)).map(move |it| (ci, it)))
            .collect();
        if items.len() < samples_per_domain {
            return Err(Error::Capacity(format!(
                "domain `{}` has {} samples, {} requested",
                d.name,
                items.len(),
                samples_per_domain
            )));
        }
        let mut rng = RngStream::substream(seed, "projection", canonical_index(domains, i) as u64);
        let chosen = rng.choose_indices(items.len(), samples_per_domain);
        let mut x = Vec::with_capacity(samples_per_domain * d.dim());
        for &k in &chosen {
            let (ci, it) = items[k];
            x.extend_from_slice(d.sample(ci, it));
            labels.push((d.name.clone(), d.classes()[ci].id));
        }
        if samples_per_domain == 0 {
            continue;
        }
        let batch = Tensor::new(&[samples_per_domain, d.dim()], x)?;
        let emb = encode(&Graph::new(), &model.encoder, None, &batch, Mode::Eval, &mut rng)?;
        pooled.extend_from_slice(emb.data());
    }
    let (coords, eigenvalues) = pca2(&pooled, labels.len(), c)?;
    let rows = labels
        .into_iter()
        .zip(coords)
        .map(|((domain, class_id), p)| ProjectionRow {
            domain,
            class_id,
            pc1: p[0],
            pc2: p[1],
        })
        .collect();
    Ok(Projection { rows, eigenvalues })
}

pub fn emit_feature_projection(model: &ModelState, domains: &[Domain], samples_per_domain: usize, out_path: &std::path::Path, seed: u64) -> Result<Projection> {
    let proj = feature_projection(model, domains, samples_per_domain, seed)?;
    let f = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    proj.write_csv(f)?;
    Ok(proj)
}
