//! Self-checks behind `fedgraph-cp verify`.
//!
//! Each check exercises one property end to end against a brute-force
//! reference and reports a one-line verdict. The quick set runs in seconds in
//! release builds; `full` adds the multi-minute pipeline comparison.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand::seq::SliceRandom;

use crate::conformal::{
    build_sets, conformal_rank, coverage_bound_check, federated_quantile, local_quantile, QuantileMethod, ScoreKind,
    ScoreSet, Scorer, TDigestSketch, DEFAULT_COMPRESSION,
};
use crate::error::Result;
use crate::federation::{dp_sgd_step, l2_norm, CommsLedger, DpConfig};
use crate::graph::Graph;
use crate::harness::{run_experiment, ExperimentConfig, Pipeline};
use crate::kernel::gradcheck::{central_difference, max_relative_error, DEFAULT_FLOOR, DEFAULT_STEP};
use crate::kernel::Matrix;
use crate::models::{Architecture, Reconstruction, VaeModel, VgaeModel};
use crate::partition::{missing_edge_report, partition_graph, DEFAULT_IMBALANCE};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub full: bool,
    /// Dataset directory for the edge-cut and pipeline checks; the built-in
    /// synthetic graph otherwise.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} {}: {} ({:.1}s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(id: u8, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let t = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        id,
        name,
        passed,
        detail,
        elapsed: t.elapsed(),
    }
}

pub fn run_all(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = vec![
        timed(1, "coverage bound", coverage_bound),
        timed(2, "gradients", gradients),
        timed(3, "quantile oracles", quantile_oracles),
        timed(4, "edge-cut accounting", || edge_cut(opts)),
    ];
    if opts.full {
        out.push(timed(5, "set-size trend", || set_size_trend(opts)));
    }
    out.extend([
        timed(6, "nesting", nesting),
        timed(7, "comms ledger", comms_ledger),
        timed(8, "dp mechanics", dp_mechanics),
        timed(9, "permutation invariance", permutation_invariance),
    ]);
    out
}

fn dataset(opts: &VerifyOptions) -> Result<(Graph, String)> {
    match &opts.data_dir {
        Some(d) => Ok((crate::graph::load_graph(d)?, d.display().to_string())),
        None => Ok((crate::synth::cora_like(0)?, crate::harness::BUILTIN_CORA_LIKE.to_string())),
    }
}

fn coverage_bound() -> Result<(bool, String)> {
    let mut rng = rng::stream(0, &[rng::tag::SCORE_U, 1]);
    let mut worst = String::new();
    let mut ok = true;
    for k in [1, 3, 5, 10] {
        for alpha in [0.05, 0.1, 0.2] {
            let c = coverage_bound_check(&vec![50; k], alpha, 10_000, QuantileMethod::Exact, |_, r| r.random(), &mut rng)?;
            if !c.within {
                ok = false;
                worst = format!("K={k} α={alpha}: {:.4} outside [{:.4}, {:.4}]", c.empirical, c.lower, c.upper);
            }
        }
    }
    Ok((ok, if ok { "12 configurations within bounds".into() } else { worst }))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_edges(n: usize, count: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    while set.len() < count {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v {
            set.insert((u.min(v), u.max(v)));
        }
    }
    set.into_iter().collect()
}

fn min_abs(m: &Matrix) -> f64 {
    m.as_slice().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()))
}

/// Worst relative error of each model over `seeds` random tiny instances.
/// Instances with a ReLU input within 1e-3 of the kink are redrawn.
pub fn gradient_errors(seeds: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut worst = vec![("gcn", 0.0f64), ("sage", 0.0), ("vae", 0.0), ("vgae", 0.0)];
    for seed in 0..seeds {
        let mut rng = rng::stream(seed, &[rng::tag::INIT, 99]);
        for (slot, arch) in [Architecture::Gcn, Architecture::Sage].into_iter().enumerate() {
            let model = arch.build(4, 5, 3);
            let (p, op, x, targets) = loop {
                let n = 6;
                let edges = random_edges(n, 7, &mut rng);
                let op = model.operator(n, &edges)?;
                let x = random_matrix(n, 4, &mut rng);
                let p = model.init_params(&mut rng);
                if min_abs(&model.hidden_preactivation(&p, &op, &x)?) > 1e-3 {
                    let targets: Vec<_> = (0..n).map(|v| (v, rng.random_range(0..3))).collect();
                    break (p, op, x, targets);
                }
            };
            let (_, g) = model.loss_and_grad(&p, &op, &x, &targets, 0.01)?;
            let num = central_difference(
                |v| {
                    let mut q = p.clone();
                    q.as_mut_slice().copy_from_slice(v);
                    model.loss_and_grad(&q, &op, &x, &targets, 0.01).unwrap().0
                },
                p.as_slice(),
                DEFAULT_STEP,
            );
            worst[slot].1 = worst[slot].1.max(max_relative_error(g.as_slice(), &num, DEFAULT_FLOOR));
        }

        let vae = VaeModel::new(5, 2, Reconstruction::Gaussian)?.with_sparsity(0.2, 0.5)?;
        let (p, x, eps) = loop {
            let x = random_matrix(3, 5, &mut rng);
            let eps = random_matrix(3, 2, &mut rng);
            let p = vae.init_params(&mut rng);
            if vae.min_abs_preactivation(&p, &x, &eps)? > 1e-3 {
                break (p, x, eps);
            }
        };
        let g = vae.loss(&p, &x, &eps)?.grad;
        let num = central_difference(
            |v| {
                let mut q = p.clone();
                q.as_mut_slice().copy_from_slice(v);
                vae.loss(&q, &x, &eps).unwrap().total
            },
            p.as_slice(),
            DEFAULT_STEP,
        );
        worst[2].1 = worst[2].1.max(max_relative_error(g.as_slice(), &num, DEFAULT_FLOOR));

        let vgae = VgaeModel {
            in_dim: 3,
            hidden: 4,
            latent: 2,
        };
        let n = 6;
        let (p, op, x, pos, eps) = loop {
            let edges = random_edges(n, 6, &mut rng);
            let op = vgae.operator(n, &edges)?;
            let x = random_matrix(n, 3, &mut rng);
            let p = vgae.init_params(&mut rng);
            if min_abs(&vgae.hidden_preactivation(&p, &op, &x)?) > 1e-3 {
                break (p, op, x, edges, random_matrix(n, 2, &mut rng));
            }
        };
        let set: BTreeSet<_> = pos.iter().copied().collect();
        let neg = crate::models::sample_negatives(n, &set, pos.len(), &mut rng);
        let g = vgae.loss(&p, &op, &x, &pos, &neg, &eps)?.grad;
        let num = central_difference(
            |v| {
                let mut q = p.clone();
                q.as_mut_slice().copy_from_slice(v);
                vgae.loss(&q, &op, &x, &pos, &neg, &eps).unwrap().total
            },
            p.as_slice(),
            DEFAULT_STEP,
        );
        worst[3].1 = worst[3].1.max(max_relative_error(g.as_slice(), &num, DEFAULT_FLOOR));
    }
    Ok(worst)
}

fn gradients() -> Result<(bool, String)> {
    let worst = gradient_errors(100)?;
    let ok = worst.iter().all(|(_, e)| *e <= 1e-4);
    let detail = worst.iter().map(|(m, e)| format!("{m} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((ok, format!("max relative error over 100 seeds: {detail}")))
}

fn quantile_oracles() -> Result<(bool, String)> {
    let mut rng = rng::stream(3, &[rng::tag::SCORE_U]);
    for _ in 0..200 {
        let k = rng.random_range(1..6);
        let scores: Vec<Vec<f64>> = (0..k).map(|_| (0..rng.random_range(1..40)).map(|_| rng.random()).collect()).collect();
        let alpha = rng.random_range(0.01..0.5);
        let set = ScoreSet::from_client_scores(scores.clone())?;
        let mut all: Vec<f64> = scores.concat();
        all.sort_by(f64::total_cmp);
        let r = conformal_rank(all.len(), k, alpha);
        let want = if r > all.len() { f64::INFINITY } else { all[r - 1] };
        if federated_quantile(&set, alpha, QuantileMethod::Exact)? != want {
            return Ok((false, "pooled-exact disagrees with sort".into()));
        }
    }
    let values: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>().powi(3)).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let sketch = TDigestSketch::from_values(&values, DEFAULT_COMPRESSION)?;
    let mut rank_err = 0.0f64;
    for i in 1..100 {
        let q = i as f64 / 100.0;
        let est = sketch.quantile(q)?;
        let rank = sorted.partition_point(|&v| v <= est) as f64 / sorted.len() as f64;
        rank_err = rank_err.max((rank - q).abs());
    }
    let client: Vec<f64> = (0..37).map(|_| rng.random()).collect();
    let avg = federated_quantile(&ScoreSet::from_client_scores(vec![client.clone(); 4])?, 0.1, QuantileMethod::Averaging)?;
    let local = local_quantile(&client, 0.1)?;
    let ok = rank_err <= 0.01 && avg == local;
    Ok((ok, format!("200 pooled sets exact; t-digest rank error {rank_err:.4}; averaging {avg} vs local {local}")))
}

fn edge_cut(opts: &VerifyOptions) -> Result<(bool, String)> {
    let (g, source) = dataset(opts)?;
    let mut means = Vec::new();
    for k in [5, 10, 20] {
        let mut sum = 0.0;
        for seed in 0..5 {
            sum += 100.0 * missing_edge_report(&partition_graph(&g, k, seed, DEFAULT_IMBALANCE)?).fraction;
        }
        means.push(sum / 5.0);
    }
    let ok = (3.0..=12.0).contains(&means[0]) && means.windows(2).all(|w| w[0] <= w[1]);
    Ok((
        ok,
        format!("{source}: mean ΔE% K=5 {:.2}, K=10 {:.2}, K=20 {:.2}", means[0], means[1], means[2]),
    ))
}

fn set_size_trend(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::default();
    if let Some(d) = &opts.data_dir {
        cfg.dataset = d.display().to_string();
    }
    cfg.clients = vec![3, 5];
    cfg.pipelines = vec![Pipeline::Loc, Pipeline::Fed, Pipeline::Gen];
    cfg.quantiles = vec![QuantileMethod::Exact];
    cfg.omit_wall_time = true;
    let recs = run_experiment(&cfg)?;
    let mean = |p: Pipeline| {
        let v: Vec<f64> = recs.iter().filter(|r| r.pipeline == p).map(|r| r.inefficiency).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let min_cov = recs.iter().map(|r| r.coverage).fold(1.0, f64::min);
    let (loc, fed, gen) = (mean(Pipeline::Loc), mean(Pipeline::Fed), mean(Pipeline::Gen));
    let ok = min_cov >= 0.92 && fed <= loc && gen <= fed + 0.1;
    Ok((
        ok,
        format!("{}: min coverage {min_cov:.3}; inefficiency loc {loc:.3}, fed {fed:.3}, gen {gen:.3}", cfg.dataset_name()),
    ))
}

fn random_probs(rows: usize, classes: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, classes);
    for r in 0..rows {
        let row: Vec<f64> = (0..classes).map(|_| rng.random::<f64>().powi(2) + 1e-3).collect();
        let s: f64 = row.iter().sum();
        for (c, v) in row.into_iter().enumerate() {
            m.set(r, c, v / s);
        }
    }
    m
}

fn nesting() -> Result<(bool, String)> {
    let mut rng = rng::stream(6, &[rng::tag::SCORE_U]);
    let scorer = Scorer::new(ScoreKind::Aps);
    let cal = random_probs(300, 7, &mut rng);
    let labels: Vec<usize> = (0..300).map(|_| rng.random_range(0..7)).collect();
    let rows: Vec<usize> = (0..300).collect();
    let s = scorer.true_label_scores(&cal, &rows, &labels, &vec![0.0; 300])?;
    let set = ScoreSet::from_client_scores(vec![s[..100].to_vec(), s[100..].to_vec()])?;
    let test = random_probs(500, 7, &mut rng);
    let u = vec![0.0; 500];
    let sets: Vec<_> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&a| build_sets(&test, federated_quantile(&set, a, QuantileMethod::Exact)?, &scorer, &u))
        .collect::<Result<_>>()?;
    let ok = (0..500).all(|i| {
        let (a, b, c) = (&sets[0].sets[i], &sets[1].sets[i], &sets[2].sets[i]);
        a.iter().all(|y| b.contains(y)) && b.iter().all(|y| c.contains(y))
    });
    Ok((ok, "C(0.2) ⊆ C(0.1) ⊆ C(0.05) on 500 rows".into()))
}

fn comms_ledger() -> Result<(bool, String)> {
    let mut rng = rng::stream(7, &[rng::tag::SCORE_U]);
    let mut ok = true;
    for _ in 0..3 {
        let (k, m, d, r, theta) = (
            rng.random_range(1..20usize),
            rng.random_range(1..30usize),
            rng.random_range(1..500usize),
            rng.random_range(1..50usize),
            rng.random_range(10..10_000usize),
        );
        let mut ledger = CommsLedger::default();
        ledger.record_prototypes(&vec![m; k], d);
        for _ in 0..r {
            ledger.record_model_round(k, theta);
        }
        ok &= ledger.proto_total() == (2 * k * m * d) as u64 && ledger.model_total() == (2 * k * theta * r) as u64;
    }
    Ok((ok, "3 random configurations match 2KMd and 2K|Θ|R".into()))
}

fn dp_mechanics() -> Result<(bool, String)> {
    let mut rng = rng::stream(8, &[rng::tag::DP_NOISE]);
    let c = 1.0;
    let grads: Vec<Vec<f64>> = (0..8).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let mut clipped_ok = true;
    for g in &grads {
        let mut g = g.clone();
        crate::federation::clip_to_norm(&mut g, c);
        clipped_ok &= l2_norm(&g) <= c;
    }
    let noiseless = DpConfig::new(100.0, 0.0, 1e-5)?;
    let mean: Vec<f64> = (0..5).map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / 8.0).collect();
    let bitwise = dp_sgd_step(&grads, &noiseless, &mut rng)? == mean;

    let sigma = 1.3;
    let dp = DpConfig::new(c, sigma, 1e-5)?;
    let zero = vec![vec![0.0; 1]; 4];
    let draws: Vec<f64> = (0..10_000).map(|_| dp_sgd_step(&zero, &dp, &mut rng).map(|v| v[0])).collect::<Result<_>>()?;
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let sd = (draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
    let target = sigma * c / 4.0;
    let ok = clipped_ok && bitwise && (sd / target - 1.0).abs() <= 0.05;
    Ok((ok, format!("clip ok {clipped_ok}; σ=0 bitwise {bitwise}; noise std {sd:.4} vs {target:.4}")))
}

fn permutation_invariance() -> Result<(bool, String)> {
    let mut rng = rng::stream(9, &[rng::tag::SCORE_U]);
    let scores: Vec<Vec<f64>> = (0..4).map(|k| (0..20 + 7 * k).map(|_| rng.random()).collect()).collect();
    let base = ScoreSet::from_client_scores(scores)?;
    let methods = [QuantileMethod::Exact, QuantileMethod::Averaging, QuantileMethod::TDigest];
    let want: Vec<f64> = methods.iter().map(|&m| federated_quantile(&base, 0.1, m)).collect::<Result<_>>()?;
    for _ in 0..100 {
        let mut set = base.clone();
        for k in 0..set.num_clients() {
            let mut perm: Vec<usize> = (0..set.counts()[k]).collect();
            perm.shuffle(&mut rng);
            set.permute_client(k, &perm)?;
        }
        for (&m, &w) in methods.iter().zip(&want) {
            if federated_quantile(&set, 0.1, m)? != w {
                return Ok((false, format!("{} changed under permutation", m.name())));
            }
        }
    }
    Ok((true, "100 permutations, all quantile methods unchanged".into()))
}
