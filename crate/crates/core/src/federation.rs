//! Round-based federated training: local updates, signal pooling, global
//! clustering and size-weighted parameter averaging.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adversarial::{adversarial_total_loss, evaluate_under_attack, AttackConfig};
use crate::contrast::{total_loss, Ablation, ContrastContext, TotalLoss};
use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::finch::LevelChoice;
use crate::numerics::{forward, predict, sgd_step, Architecture, ModelParams, Tensor2, TrainConfig};
use crate::scalar::Scalar;
use crate::signals::{
    embeddings_by_class, global_signals_of_kind, local_signals_of_kind, pool_signals, ClassSignalPool,
    GlobalSignalTable, LocalSignalSet, SignalKind,
};

const INIT_SALT: u64 = 0x1f2e_3d4c_5b6a_7988;
const TRAIN_SALT: u64 = 0x243f_6a88_85a3_08d3;
const EVAL_SALT: u64 = 0x1319_8a2e_0370_7344;

/// Independent random stream for one (seed, round, client) triple.
pub fn stream_rng(seed: u64, salt: u64, round: usize, client: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(((round as u64) << 32) | client as u64);
    rng
}

/// Stream used by client `client` for local training in round `round`.
pub fn client_rng(seed: u64, round: usize, client: usize) -> ChaCha8Rng {
    stream_rng(seed, TRAIN_SALT, round, client)
}

/// Stream the initial global model is drawn from.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, INIT_SALT, 0, 0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// Clients of a round run on the rayon pool; results are gathered in
    /// client order, so numerics match the sequential mode.
    #[default]
    Parallel,
    Sequential,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederationConfig<S> {
    pub train: TrainConfig<S>,
    pub ablation: Ablation<S>,
    pub rounds: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub local_signals: SignalKind,
    pub global_signals: SignalKind,
    pub level: LevelChoice,
    /// Train on adversarial inputs generated by this attack.
    pub adversarial: Option<AttackConfig<S>>,
    /// After the last round, evaluate every local model under FGSM and PGD
    /// with this radius.
    pub robust_eval: Option<S>,
    pub pgd_eval_steps: usize,
    pub execution: Execution,
    /// Keep per-round inputs and outputs for replay.
    pub record_history: bool,
}

impl<S: Scalar> Default for FederationConfig<S> {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            ablation: Ablation::both(),
            rounds: 10,
            hidden: vec![64],
            embedding_dim: 32,
            local_signals: SignalKind::Clustered,
            global_signals: SignalKind::Clustered,
            level: LevelChoice::Final,
            adversarial: None,
            robust_eval: None,
            pgd_eval_steps: 20,
            execution: Execution::Parallel,
            record_history: false,
        }
    }
}

impl<S: Scalar> FederationConfig<S> {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be >= 1"));
        }
        if let Some(atk) = &self.adversarial {
            atk.validate()?;
        }
        if let Some(eps) = self.robust_eval {
            if !(eps >= S::zero()) {
                return Err(Error::invalid("eval_eps", "must be >= 0"));
            }
        }
        if self.pgd_eval_steps == 0 {
            return Err(Error::invalid("pgd_eval_steps", "must be >= 1"));
        }
        Ok(())
    }

    /// Whether any contrast term can be active, i.e. signals are worth computing.
    pub fn uses_signals(&self) -> bool {
        let a = &self.ablation;
        (a.use_local && a.local_weight != S::zero()) || (a.use_global && a.global_weight != S::zero())
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            embedding_dim: self.embedding_dim,
            num_classes,
        }
    }
}

/// A client's view at the start of a round.
#[derive(Clone, Debug)]
pub struct ClientState<'a, S> {
    pub id: usize,
    pub data: &'a ClientDataset<S>,
    pub params: ModelParams<S>,
    pub rng: ChaCha8Rng,
}

/// Mean training losses over every batch of a local update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalTrainStats {
    pub loss_ce: f64,
    pub loss_local: f64,
    pub loss_global: f64,
    pub skipped_samples: usize,
    pub batches: usize,
}

impl LocalTrainStats {
    fn add<S: Scalar>(&mut self, l: &TotalLoss<S>) {
        self.loss_ce += l.cross_entropy.as_f64();
        self.loss_local += l.local.as_f64();
        self.loss_global += l.global.as_f64();
        self.skipped_samples += l.skipped_local + l.skipped_global;
        self.batches += 1;
    }

    fn finish(mut self) -> Self {
        if self.batches > 0 {
            let n = self.batches as f64;
            self.loss_ce /= n;
            self.loss_local /= n;
            self.loss_global /= n;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate<S> {
    pub params: ModelParams<S>,
    /// `None` when the configuration uses no contrast terms.
    pub signals: Option<LocalSignalSet<S>>,
    pub stats: LocalTrainStats,
}

/// Local epochs of mini-batch SGD from the global parameters, followed by the
/// client's signals computed under the updated model.
pub fn client_local_update<S: Scalar>(
    mut state: ClientState<'_, S>,
    ctx: &ContrastContext<S>,
    cfg: &FederationConfig<S>,
) -> Result<LocalUpdate<S>> {
    let train = &state.data.train;
    if train.is_empty() {
        return Err(Error::EmptyInput("client has no training data"));
    }
    let mut params = state.params;
    let mut stats = LocalTrainStats::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let rng = &mut state.rng;
    for _ in 0..cfg.train.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch = train.features.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (loss, grads) = match &cfg.adversarial {
                Some(atk) => {
                    let (l, g, _) = adversarial_total_loss(&params, &batch, &labels, ctx, &cfg.ablation, atk, rng)?;
                    (l, g)
                }
                None => total_loss(&params, &batch, &labels, ctx, &cfg.ablation)?,
            };
            stats.add(&loss);
            params = sgd_step(&params, &grads, cfg.train.learning_rate)?;
        }
    }
    let signals = if cfg.uses_signals() {
        let (features, _) = forward(&params, &train.features)?;
        let by_class = embeddings_by_class(&features, &train.labels, train.num_classes)?;
        Some(local_signals_of_kind(state.id, &by_class, cfg.local_signals, cfg.level)?)
    } else {
        None
    };
    Ok(LocalUpdate {
        params,
        signals,
        stats: stats.finish(),
    })
}

/// Size-weighted average `Σ_i (n_i / Σ n) ω_i`, accumulated in input order.
pub fn server_aggregate_params<S: Scalar>(contributions: &[(&ModelParams<S>, usize)]) -> Result<ModelParams<S>> {
    let (first, _) = contributions
        .first()
        .ok_or(Error::EmptyInput("server_aggregate_params needs a contribution"))?;
    let total: usize = contributions.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::ZeroTotalSize);
    }
    let mut out = (*first).clone();
    out.iter_mut().for_each(|v| *v = S::zero());
    let total = S::of_usize(total);
    for (params, n) in contributions {
        if !params.same_shape(first.layers()) {
            return Err(Error::shape("server_aggregate_params", "congruent params", "mismatch"));
        }
        let w = S::of_usize(*n) / total;
        for (o, &p) in out.iter_mut().zip(params.iter()) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Fraction of rows whose argmax prediction matches the label.
pub fn accuracy<S: Scalar>(params: &ModelParams<S>, features: &Tensor2<S>, labels: &[usize]) -> Result<Option<f64>> {
    if labels.is_empty() {
        return Ok(None);
    }
    let (_, logits) = forward(params, features)?;
    let correct = predict(&logits).iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(Some(correct as f64 / labels.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientRoundMetrics {
    pub client: usize,
    pub train_size: usize,
    /// `false` when the client had no training data and sat the round out.
    pub participated: bool,
    pub stats: LocalTrainStats,
    /// Test accuracy of the client's updated local model on its own test split.
    pub acc: Option<f64>,
    /// Test accuracy of the aggregated model on the same split.
    pub global_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub clients: Vec<ClientRoundMetrics>,
    /// Unweighted mean of the per-client local-model accuracies.
    pub mean_acc: f64,
    pub mean_global_acc: f64,
    /// Pooled local signals per class produced this round.
    pub signal_counts: Vec<usize>,
    pub wall_time_ms: f64,
}

impl RoundMetrics {
    pub fn mean_loss_ce(&self) -> f64 {
        mean(self.active().map(|c| c.stats.loss_ce))
    }

    pub fn mean_loss_local(&self) -> f64 {
        mean(self.active().map(|c| c.stats.loss_local))
    }

    pub fn mean_loss_global(&self) -> f64 {
        mean(self.active().map(|c| c.stats.loss_global))
    }

    pub fn skipped_samples(&self) -> usize {
        self.clients.iter().map(|c| c.stats.skipped_samples).sum()
    }

    fn active(&self) -> impl Iterator<Item = &ClientRoundMetrics> {
        self.clients.iter().filter(|c| c.participated)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Inputs and outputs of one round, kept for replay checks.
#[derive(Clone, Debug)]
pub struct RoundRecord<S> {
    pub start_params: ModelParams<S>,
    pub client_params: Vec<ModelParams<S>>,
    pub pool: Option<ClassSignalPool<S>>,
    pub table: Option<GlobalSignalTable<S>>,
}

/// Accuracy of one model under clean, FGSM and PGD evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RobustAccuracy {
    pub clean: f64,
    pub fgsm: f64,
    pub pgd: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome<S> {
    pub rounds: Vec<RoundMetrics>,
    pub global_params: ModelParams<S>,
    pub local_params: Vec<ModelParams<S>>,
    /// Per-client robust accuracy of the final local models.
    pub robust: Option<Vec<RobustAccuracy>>,
    pub history: Vec<RoundRecord<S>>,
}

impl<S> TrainingOutcome<S> {
    /// Client mean of the robust accuracies.
    pub fn mean_robust(&self) -> Option<RobustAccuracy> {
        let r = self.robust.as_ref()?;
        let n = r.len().max(1) as f64;
        Some(RobustAccuracy {
            clean: r.iter().map(|a| a.clean).sum::<f64>() / n,
            fgsm: r.iter().map(|a| a.fgsm).sum::<f64>() / n,
            pgd: r.iter().map(|a| a.pgd).sum::<f64>() / n,
        })
    }
}

/// Builds the context for the next round from this round's signals.
pub fn next_context<S: Scalar>(
    sets: &[LocalSignalSet<S>],
    cfg: &FederationConfig<S>,
) -> Result<(ContrastContext<S>, Option<ClassSignalPool<S>>, Option<GlobalSignalTable<S>>)> {
    if sets.is_empty() {
        return Ok((ContrastContext::empty(cfg.train.temperature), None, None));
    }
    let pool = pool_signals(sets)?;
    let table = global_signals_of_kind(&pool, cfg.global_signals, cfg.level)?;
    let ctx = ContrastContext::new(Some(pool.clone()), Some(table.clone()), cfg.train.temperature)?;
    Ok((ctx, Some(pool), Some(table)))
}

/// Runs `cfg.rounds` communication rounds over `clients`.
///
/// Every client of a round starts from the same global parameters and the
/// context built from the previous round's signals (empty in round 0).
pub fn run_training<S: Scalar>(clients: &[ClientDataset<S>], cfg: &FederationConfig<S>) -> Result<TrainingOutcome<S>> {
    cfg.validate()?;
    let first = clients.first().ok_or(Error::EmptyInput("run_training needs clients"))?;
    let num_classes = clients.iter().map(|c| c.train.num_classes).max().unwrap_or(0);
    let arch = cfg.architecture(first.train.input_dim(), num_classes);
    let seed = cfg.train.seed;
    let mut global = ModelParams::init(&arch, &mut init_rng(seed));
    let mut local_params = vec![global.clone(); clients.len()];
    let mut ctx = ContrastContext::empty(cfg.train.temperature);
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut history = Vec::new();

    for t in 0..cfg.rounds {
        let started = Instant::now();
        let update = |c: &ClientDataset<S>| -> Result<Option<LocalUpdate<S>>> {
            if c.train.is_empty() {
                log::warn!("client {} has no training data; skipped in round {t}", c.id);
                return Ok(None);
            }
            let state = ClientState {
                id: c.id,
                data: c,
                params: global.clone(),
                rng: client_rng(seed, t, c.id),
            };
            client_local_update(state, &ctx, cfg).map(Some)
        };
        let updates: Vec<Option<LocalUpdate<S>>> = match cfg.execution {
            Execution::Sequential => clients.iter().map(update).collect::<Result<_>>()?,
            Execution::Parallel => clients.par_iter().map(update).collect::<Result<_>>()?,
        };

        let mut contributions = Vec::new();
        let mut sets = Vec::new();
        for (c, u) in clients.iter().zip(&updates) {
            if let Some(u) = u {
                contributions.push((&u.params, c.train.len()));
                sets.extend(u.signals.clone());
            }
        }
        let next_global = if contributions.is_empty() {
            global.clone()
        } else {
            server_aggregate_params(&contributions)?
        };
        for (slot, u) in local_params.iter_mut().zip(&updates) {
            *slot = match u {
                Some(u) => u.params.clone(),
                None => next_global.clone(),
            };
        }
        let (next_ctx, pool, table) = next_context(&sets, cfg)?;

        let evaluate = |(c, u): (&ClientDataset<S>, &Option<LocalUpdate<S>>)| -> Result<ClientRoundMetrics> {
            let local = u.as_ref().map_or(&next_global, |u| &u.params);
            Ok(ClientRoundMetrics {
                client: c.id,
                train_size: c.train.len(),
                participated: u.is_some(),
                stats: u.as_ref().map(|u| u.stats).unwrap_or_default(),
                acc: accuracy(local, &c.test.features, &c.test.labels)?,
                global_acc: accuracy(&next_global, &c.test.features, &c.test.labels)?,
            })
        };
        let client_metrics: Vec<ClientRoundMetrics> = match cfg.execution {
            Execution::Sequential => clients.iter().zip(&updates).map(evaluate).collect::<Result<_>>()?,
            Execution::Parallel => clients
                .par_iter()
                .zip(updates.par_iter())
                .map(evaluate)
                .collect::<Result<_>>()?,
        };

        let metrics = RoundMetrics {
            round: t,
            mean_acc: mean(client_metrics.iter().filter_map(|c| c.acc)),
            mean_global_acc: mean(client_metrics.iter().filter_map(|c| c.global_acc)),
            clients: client_metrics,
            signal_counts: pool.as_ref().map(ClassSignalPool::counts).unwrap_or_default(),
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        log::info!(
            "round {t}: mean acc {:.4}, global acc {:.4}",
            metrics.mean_acc,
            metrics.mean_global_acc
        );
        rounds.push(metrics);
        if cfg.record_history {
            history.push(RoundRecord {
                start_params: global.clone(),
                client_params: local_params.clone(),
                pool,
                table,
            });
        }
        global = next_global;
        ctx = next_ctx;
    }

    let robust = match cfg.robust_eval {
        Some(eps) => Some(robust_evaluation(clients, &local_params, eps, cfg)?),
        None => None,
    };
    Ok(TrainingOutcome {
        rounds,
        global_params: global,
        local_params,
        robust,
        history,
    })
}

/// Clean, FGSM(ε) and PGD(ε) accuracy of each client's model on its test split.
pub fn robust_evaluation<S: Scalar>(
    clients: &[ClientDataset<S>],
    models: &[ModelParams<S>],
    epsilon: S,
    cfg: &FederationConfig<S>,
) -> Result<Vec<RobustAccuracy>> {
    let fgsm = AttackConfig::fgsm(epsilon);
    let pgd = AttackConfig::pgd_eval(epsilon, cfg.pgd_eval_steps);
    let eval = |(c, params): (&ClientDataset<S>, &ModelParams<S>)| -> Result<RobustAccuracy> {
        let mut rng = stream_rng(cfg.train.seed, EVAL_SALT, cfg.rounds, c.id);
        let (x, y) = (&c.test.features, &c.test.labels);
        Ok(RobustAccuracy {
            clean: accuracy(params, x, y)?.unwrap_or(0.0),
            fgsm: evaluate_under_attack(params, x, y, &fgsm, 256, &mut rng)?,
            pgd: evaluate_under_attack(params, x, y, &pgd, 256, &mut rng)?,
        })
    };
    match cfg.execution {
        Execution::Sequential => clients.iter().zip(models).map(eval).collect(),
        Execution::Parallel => clients.par_iter().zip(models.par_iter()).map(eval).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Layer;

    fn params(values: &[f64]) -> ModelParams<f64> {
        let mut a = Layer::zeros(1, 1);
        a.weight.set(0, 0, values[0]);
        a.bias[0] = values[1];
        let mut b = Layer::zeros(1, 1);
        b.weight.set(0, 0, values[2]);
        b.bias[0] = values[3];
        ModelParams::from_layers(vec![a, b]).unwrap()
    }

    #[test]
    fn equal_sizes_average() {
        let p = params(&[1.0, 2.0, 3.0, 4.0]);
        let q = params(&[3.0, 4.0, 5.0, 6.0]);
        let avg = server_aggregate_params(&[(&p, 5), (&q, 5)]).unwrap();
        assert_eq!(avg.iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn sizes_one_and_three() {
        let p = params(&[4.0, 0.0, 8.0, -4.0]);
        let q = params(&[0.0, 4.0, 0.0, 4.0]);
        let avg = server_aggregate_params(&[(&p, 1), (&q, 3)]).unwrap();
        assert_eq!(avg.iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn single_client_unchanged() {
        let p = params(&[0.1, -0.7, 1e-9, 3.3]);
        assert_eq!(server_aggregate_params(&[(&p, 17)]).unwrap(), p);
    }

    #[test]
    fn zero_total_size_is_error() {
        let p = params(&[0.0; 4]);
        assert!(matches!(
            server_aggregate_params(&[(&p, 0), (&p, 0)]),
            Err(Error::ZeroTotalSize)
        ));
    }

    #[test]
    fn streams_differ_by_round_and_client() {
        use rand::Rng;
        let a: u64 = client_rng(1, 0, 0).random();
        let b: u64 = client_rng(1, 1, 0).random();
        let c: u64 = client_rng(1, 0, 1).random();
        let d: u64 = client_rng(1, 0, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, d);
    }
}
