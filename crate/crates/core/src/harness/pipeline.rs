use std::time::Instant;

use rayon::prelude::*;

use crate::conformal::{
    build_sets, federated_quantile, local_quantile, metrics, uniform_draws, ScoreSet, Scorer,
};
use crate::error::{Error, Result};
use crate::federation::{run_federated_training, CommsLedger, FedSchedule, LocalTrainer, Weighting};
use crate::generator::{aggregate_and_broadcast, make_prototypes, predict_and_augment, train_vae, train_vgae_federated};
use crate::graph::{split_roles, Graph, Role, RoleMask, SplitFractions};
use crate::harness::{ExperimentConfig, Pipeline, RunRecord};
use crate::kernel::layers::softmax_rows;
use crate::kernel::{AdamState, Matrix, ParamVector, SparseMatrix};
use crate::models::{fit_temperature, train_classifier, NodeClassifier};
use crate::partition::{missing_edge_report, partition_graph, Partition};
use crate::rng::{self, Rng};

/// A seeded split and partition of one graph into `k` clients.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub k: usize,
    pub roles: RoleMask,
    pub partition: Partition,
}

impl Scenario {
    pub fn new(g: &Graph, cfg: &ExperimentConfig, seed: u64, k: usize) -> Result<Self> {
        let roles = split_roles(g, SplitFractions::default(), seed).map_err(|e| e.in_stage("split"))?;
        let partition = partition_graph(g, k, seed, cfg.imbalance).map_err(|e| e.in_stage("partition"))?;
        Ok(Scenario {
            seed,
            k,
            roles,
            partition,
        })
    }

    pub fn delta_e_pct(&self) -> f64 {
        100.0 * missing_edge_report(&self.partition).fraction
    }

    pub fn views(&self, g: &Graph) -> Vec<ClientView> {
        self.partition
            .clients
            .iter()
            .map(|c| ClientView {
                x: g.features().select_rows(&c.nodes),
                edges: c.edges.clone(),
                labels: c.nodes.iter().map(|&v| g.labels()[v]).collect(),
                roles: self.roles.restrict(&c.nodes).roles().to_vec(),
                nodes: c.nodes.clone(),
            })
            .collect()
    }
}

/// A client's subgraph. Rows past `labels.len()` are generated prototype
/// nodes, which carry no label and no role.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientView {
    pub nodes: Vec<usize>,
    pub x: Matrix,
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub roles: Vec<Role>,
}

impl ClientView {
    pub fn n_local(&self) -> usize {
        self.labels.len()
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.roles.len()).filter(|&v| self.roles[v] == role).collect()
    }

    fn train_targets(&self) -> Vec<(usize, usize)> {
        self.indices(Role::Train).into_iter().map(|v| (v, self.labels[v])).collect()
    }
}

struct Prepared {
    op: SparseMatrix,
    targets: Vec<(usize, usize)>,
}

fn prepare(model: &dyn NodeClassifier, views: &[ClientView]) -> Result<Vec<Prepared>> {
    views
        .iter()
        .map(|v| {
            Ok(Prepared {
                op: model.operator(v.x.rows(), &v.edges)?,
                targets: v.train_targets(),
            })
        })
        .collect()
}

struct ClassifierFederation<'a> {
    model: &'a dyn NodeClassifier,
    views: &'a [ClientView],
    prepared: &'a [Prepared],
    cfg: &'a ExperimentConfig,
}

impl LocalTrainer for ClassifierFederation<'_> {
    type State = AdamState;

    fn num_clients(&self) -> usize {
        self.views.len()
    }

    fn samples(&self, client: usize) -> usize {
        self.prepared[client].targets.len()
    }

    fn init_state(&self, _client: usize, global: &ParamVector) -> AdamState {
        AdamState::new(global.len(), self.cfg.lr)
    }

    fn train_round(&self, client: usize, params: &mut ParamVector, adam: &mut AdamState, _rng: &mut Rng) -> Result<()> {
        let p = &self.prepared[client];
        train_classifier(
            self.model,
            params,
            adam,
            &p.op,
            &self.views[client].x,
            &p.targets,
            self.cfg.local_epochs,
            self.cfg.weight_decay,
        )?;
        Ok(())
    }
}

fn init_params(model: &dyn NodeClassifier, seed: u64) -> ParamVector {
    model.init_params(&mut rng::stream(seed, &[rng::tag::INIT, 0]))
}

/// Logits of a client's own (labelled) nodes.
fn local_logits(model: &dyn NodeClassifier, params: &ParamVector, view: &ClientView, p: &Prepared) -> Result<Matrix> {
    let logits = model.logits(params, &p.op, &view.x)?;
    Ok(logits.row_block(0, view.n_local()))
}

fn client_temperature(logits: &Matrix, view: &ClientView) -> Result<Option<f64>> {
    let valid = view.indices(Role::Valid);
    if valid.is_empty() {
        return Ok(None);
    }
    let labels: Vec<usize> = valid.iter().map(|&v| view.labels[v]).collect();
    fit_temperature(&logits.select_rows(&valid), &labels).map(Some)
}

fn scaled_probs(logits: &Matrix, t: f64) -> Matrix {
    softmax_rows(&logits.map(|v| v / t))
}

fn correct(probs: &Matrix, rows: &[usize], labels: &[usize]) -> usize {
    rows.iter()
        .filter(|&&r| {
            let row = probs.row(r);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == labels[r]
        })
        .count()
}

/// Calibration and test scores for one client under one scorer; the draws
/// for randomised scores come from a per-client stream.
struct ClientScores {
    calib: Vec<f64>,
    test_probs: Matrix,
    test_labels: Vec<usize>,
    test_u: Vec<f64>,
}

fn client_scores(probs: &Matrix, view: &ClientView, scorer: &Scorer, seed: u64, client: usize) -> Result<ClientScores> {
    let calib = view.indices(Role::Calib);
    let test = view.indices(Role::Test);
    let mut r = rng::stream(seed, &[rng::tag::SCORE_U, client as u64]);
    let cal_u = uniform_draws(scorer, calib.len(), &mut r);
    let test_u = uniform_draws(scorer, test.len(), &mut r);
    Ok(ClientScores {
        calib: scorer.true_label_scores(probs, &calib, &view.labels, &cal_u)?,
        test_probs: probs.select_rows(&test),
        test_labels: test.iter().map(|&v| view.labels[v]).collect(),
        test_u,
    })
}

struct Common<'a> {
    cfg: &'a ExperimentConfig,
    dataset: &'a str,
    scenario: &'a Scenario,
    pipeline: Pipeline,
}

impl Common<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record(&self, scorer: &Scorer, alpha: f64, qmethod: &str, coverage: f64, inefficiency: f64, accuracy: f64, qhat: f64, comm: u64) -> RunRecord {
        RunRecord {
            dataset: self.dataset.to_string(),
            seed: self.scenario.seed,
            k: self.scenario.k,
            pipeline: self.pipeline,
            model: self.cfg.model.name().to_string(),
            score: scorer.kind.name().to_string(),
            alpha,
            qmethod: qmethod.to_string(),
            coverage,
            inefficiency,
            accuracy,
            qhat,
            delta_e_pct: self.scenario.delta_e_pct(),
            scalars_comm: comm,
            wall_ms: 0,
        }
    }
}

fn run_loc(c: &Common, model: &dyn NodeClassifier, views: &[ClientView]) -> Result<Vec<RunRecord>> {
    let prepared = prepare(model, views)?;
    let steps = c.cfg.rounds * c.cfg.local_epochs;
    let train_one = |(view, p): (&ClientView, &Prepared)| -> Result<Option<Matrix>> {
        if p.targets.is_empty() {
            log::warn!("loc: client without training nodes left out");
            return Ok(None);
        }
        let mut params = init_params(model, c.scenario.seed);
        let mut adam = AdamState::new(params.len(), c.cfg.lr);
        train_classifier(model, &mut params, &mut adam, &p.op, &view.x, &p.targets, steps, c.cfg.weight_decay)?;
        local_logits(model, &params, view, p).map(Some)
    };
    let logits: Vec<Option<Matrix>> = if c.cfg.concurrent {
        views.par_iter().zip(prepared.par_iter()).map(train_one).collect::<Result<_>>()?
    } else {
        views.iter().zip(prepared.iter()).map(train_one).collect::<Result<_>>()?
    };

    let mut per_client = Vec::new();
    for (k, (view, l)) in views.iter().zip(&logits).enumerate() {
        let Some(l) = l else { continue };
        if view.indices(Role::Calib).is_empty() || view.indices(Role::Test).is_empty() {
            log::warn!("loc: client {k} has no calibration or test nodes; left out of the average");
            continue;
        }
        let t = if c.cfg.temperature_scaling {
            client_temperature(l, view)?.unwrap_or(1.0)
        } else {
            1.0
        };
        per_client.push((k, view, scaled_probs(l, t)));
    }
    if per_client.is_empty() {
        return Err(Error::Metrics("no client can be evaluated".into()));
    }

    let mut out = Vec::new();
    for &kind in &c.cfg.scores {
        let scorer = c.cfg.scorer(kind);
        let scores: Vec<ClientScores> = per_client
            .iter()
            .map(|(k, view, probs)| client_scores(probs, view, &scorer, c.scenario.seed, *k))
            .collect::<Result<_>>()?;
        for &alpha in &c.cfg.alphas {
            let (mut cov, mut ineff, mut acc, mut qsum) = (0.0, 0.0, 0.0, 0.0);
            for s in &scores {
                let q = local_quantile(&s.calib, alpha)?;
                let sets = build_sets(&s.test_probs, q, &scorer, &s.test_u)?;
                let m = metrics(&sets, &s.test_labels)?;
                let rows: Vec<usize> = (0..s.test_labels.len()).collect();
                cov += m.coverage;
                ineff += m.inefficiency;
                acc += correct(&s.test_probs, &rows, &s.test_labels) as f64 / rows.len() as f64;
                qsum += q;
            }
            let n = scores.len() as f64;
            out.push(c.record(&scorer, alpha, "local", cov / n, ineff / n, acc / n, qsum / n, 0));
        }
    }
    Ok(out)
}

/// FedAvg classifier plus federated calibration on the given client views.
fn run_fed(c: &Common, model: &dyn NodeClassifier, views: &[ClientView], mut ledger: CommsLedger) -> Result<Vec<RunRecord>> {
    let prepared = prepare(model, views)?;
    let fed = ClassifierFederation {
        model,
        views,
        prepared: &prepared,
        cfg: c.cfg,
    };
    let outcome = run_federated_training(
        &fed,
        init_params(model, c.scenario.seed),
        FedSchedule {
            rounds: c.cfg.rounds,
            weighting: Weighting::Samples,
            concurrent: c.cfg.concurrent,
            seed: c.scenario.seed,
        },
    )
    .map_err(|e| e.in_stage("federated-training"))?;
    ledger.merge(&outcome.ledger);

    let logits: Vec<Matrix> = views
        .iter()
        .zip(&prepared)
        .map(|(v, p)| local_logits(model, &outcome.params, v, p))
        .collect::<Result<_>>()?;
    let t = if c.cfg.temperature_scaling {
        let ts: Vec<f64> = views
            .iter()
            .zip(&logits)
            .filter_map(|(v, l)| client_temperature(l, v).transpose())
            .collect::<Result<_>>()?;
        if ts.is_empty() {
            1.0
        } else {
            ts.iter().sum::<f64>() / ts.len() as f64
        }
    } else {
        1.0
    };
    let probs: Vec<Matrix> = logits.iter().map(|l| scaled_probs(l, t)).collect();

    let mut out = Vec::new();
    for &kind in &c.cfg.scores {
        let scorer = c.cfg.scorer(kind);
        let scores: Vec<ClientScores> = views
            .iter()
            .zip(&probs)
            .enumerate()
            .map(|(k, (v, p))| client_scores(p, v, &scorer, c.scenario.seed, k))
            .collect::<Result<_>>()?;
        let calib: Vec<Vec<f64>> = scores.iter().filter(|s| !s.calib.is_empty()).map(|s| s.calib.clone()).collect();
        let score_set = ScoreSet::from_client_scores(calib)?;
        let test_labels: Vec<usize> = scores.iter().flat_map(|s| s.test_labels.iter().copied()).collect();
        if test_labels.is_empty() {
            return Err(Error::Metrics("no test nodes".into()));
        }
        let rows: Vec<usize> = (0..test_labels.len()).collect();
        let mut test_probs = scores[0].test_probs.clone();
        let mut test_u = scores[0].test_u.clone();
        for s in &scores[1..] {
            test_probs = test_probs.vstack(&s.test_probs)?;
            test_u.extend_from_slice(&s.test_u);
        }
        let accuracy = correct(&test_probs, &rows, &test_labels) as f64 / rows.len() as f64;
        for &alpha in &c.cfg.alphas {
            for &qm in &c.cfg.quantiles {
                let q = federated_quantile(&score_set, alpha, qm).map_err(|e| e.in_stage("quantile"))?;
                let sets = build_sets(&test_probs, q, &scorer, &test_u)?;
                let m = metrics(&sets, &test_labels)?;
                out.push(c.record(&scorer, alpha, qm.name(), m.coverage, m.inefficiency, accuracy, q, ledger.total()));
            }
        }
    }
    Ok(out)
}

/// Summary of the neighbour-generation stage of one gen run.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub views: Vec<ClientView>,
    pub ledger: CommsLedger,
    pub edges_added: usize,
    pub epsilon: Option<f64>,
}

/// Prototype generation, federated VGAE training and top-p edge selection.
pub fn augment_clients(cfg: &ExperimentConfig, views: &[ClientView], seed: u64) -> Result<Augmentation> {
    let vae_cfg = cfg.vae_training()?;
    let d = views.first().map(|v| v.x.cols()).unwrap_or(0);
    let make = |(k, v): (usize, &ClientView)| -> Result<(Matrix, Option<f64>)> {
        let train = v.indices(Role::Train);
        if train.is_empty() {
            log::warn!("gen: client {k} has no training nodes and contributes no prototypes");
            return Ok((Matrix::zeros(0, d), None));
        }
        let x_train = v.x.select_rows(&train);
        let vae = train_vae(&x_train, &vae_cfg, rng::derive_seed(seed, &[rng::tag::VAE, k as u64]))?;
        let m = cfg.protos_per_client.min(train.len());
        let protos = make_prototypes(&x_train, &vae, m, rng::derive_seed(seed, &[rng::tag::KMEANS, k as u64]))?;
        Ok((protos, vae.epsilon))
    };
    let made: Vec<(Matrix, Option<f64>)> = if cfg.concurrent {
        views.par_iter().enumerate().map(make).collect::<Result<_>>()
    } else {
        views.iter().enumerate().map(make).collect::<Result<_>>()
    }
    .map_err(|e| e.in_stage("prototypes"))?;
    let epsilon = made.iter().filter_map(|m| m.1).reduce(f64::max);
    let protos: Vec<Matrix> = made.into_iter().map(|m| m.0).collect();

    let mut ledger = CommsLedger::default();
    let shared = aggregate_and_broadcast(&protos, &mut ledger)?;
    let graphs: Vec<(Matrix, Vec<(usize, usize)>)> = views.iter().map(|v| (v.x.clone(), v.edges.clone())).collect();
    let (vgae, outcome) = train_vgae_federated(&graphs, &cfg.vgae_training(), seed, cfg.concurrent)
        .map_err(|e| e.in_stage("vgae"))?;
    ledger.merge(&outcome.ledger);

    let mut out = Vec::with_capacity(views.len());
    let mut edges_added = 0;
    for (k, v) in views.iter().enumerate() {
        let aug = predict_and_augment(&v.x, &v.edges, &shared, k, &vgae, &outcome.params, cfg.edge_top_p)
            .map_err(|e| e.in_stage("augment"))?;
        edges_added += aug.added.len();
        out.push(ClientView {
            nodes: v.nodes.clone(),
            x: aug.features,
            edges: aug.edges,
            labels: v.labels.clone(),
            roles: v.roles.clone(),
        });
    }
    Ok(Augmentation {
        views: out,
        ledger,
        edges_added,
        epsilon,
    })
}

/// Runs one pipeline on a prepared scenario.
pub fn run_pipeline(cfg: &ExperimentConfig, g: &Graph, scenario: &Scenario, pipeline: Pipeline) -> Result<Vec<RunRecord>> {
    let start = Instant::now();
    let dataset = cfg.dataset_name();
    let common = Common {
        cfg,
        dataset: &dataset,
        scenario,
        pipeline,
    };
    let model = cfg.model.build(g.feature_dim(), cfg.hidden, g.num_classes());
    let views = scenario.views(g);
    let mut records = match pipeline {
        Pipeline::Loc => run_loc(&common, model.as_ref(), &views).map_err(|e| e.in_stage("loc"))?,
        Pipeline::Fed => run_fed(&common, model.as_ref(), &views, CommsLedger::default()).map_err(|e| e.in_stage("fed"))?,
        Pipeline::Gen => {
            let aug = augment_clients(cfg, &views, scenario.seed).map_err(|e| e.in_stage("gen"))?;
            log::info!(
                "gen: seed {} K={} added {} edges{}",
                scenario.seed,
                scenario.k,
                aug.edges_added,
                aug.epsilon
                    .map(|e| format!(", DP epsilon {e:.3} (loose bound, basic composition)"))
                    .unwrap_or_default()
            );
            run_fed(&common, model.as_ref(), &aug.views, aug.ledger).map_err(|e| e.in_stage("gen"))?
        }
    };
    if !cfg.omit_wall_time {
        let ms = start.elapsed().as_millis() as u64;
        records.iter_mut().for_each(|r| r.wall_ms = ms);
    }
    Ok(records)
}

/// Every (seed, K, pipeline) of the configuration, in that nesting order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let g = cfg.load_dataset().map_err(|e| e.in_stage("load"))?;
    log::info!(
        "dataset {}: n={} |E|={} d={} L={}",
        cfg.dataset_name(),
        g.n(),
        g.edges().len(),
        g.feature_dim(),
        g.num_classes()
    );
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        for &k in &cfg.clients {
            let scenario = Scenario::new(&g, cfg, seed, k)?;
            for &p in &cfg.pipelines {
                records.extend(run_pipeline(cfg, &g, &scenario, p)?);
                log::info!("finished seed {seed} K={k} {}", p.name());
            }
        }
    }
    Ok(records)
}
