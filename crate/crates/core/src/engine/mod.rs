//! Round and local-step simulation of DP-SCAFFOLD, DP-FedAvg and their
//! non-private and warm-started variants.
//!
//! Each selected user runs `K` noisy clipped mini-batch steps from the
//! current global model, optionally corrected by the control-variate drift
//! `c - c_i`, then the server averages the model and control increments.

mod config;

pub use config::{Algorithm, ClipMode, SensitivityMode, TrainConfig};

use rayon::prelude::*;

use crate::accountant::{MechanismParams, RoundAccountant};
use crate::data::{FederatedDataset, Shard};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, tail_start, RoundMetrics};
use crate::models::Model;
use crate::rng::{sample_without_replacement, Phase, Purpose, Streams};
use crate::scalar::{norm_sq, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState<S> {
    pub x: Vec<S>,
    pub c: Vec<S>,
    pub round: u64,
}

/// Control variates of every user, persisted between selections.
#[derive(Clone, Debug, PartialEq)]
pub struct UserState<S> {
    pub controls: Vec<Vec<S>>,
}

impl<S: Real> UserState<S> {
    pub fn zeros(users: usize, dim: usize) -> Self {
        Self {
            controls: vec![vec![S::zero(); dim]; users],
        }
    }

    /// `(1/M) Σ_i c_i`.
    pub fn mean(&self) -> Vec<S> {
        let m = S::of(self.controls.len() as f64);
        let mut out = vec![S::zero(); self.controls[0].len()];
        for c in &self.controls {
            for (o, v) in out.iter_mut().zip(c) {
                *o += *v;
            }
        }
        out.iter_mut().for_each(|v| *v /= m);
        out
    }
}

/// What a selected user sends back after its local steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundDelta<S> {
    /// `y^K - x`.
    pub dy: Vec<S>,
    /// `c̃_i - c_i`.
    pub dc: Vec<S>,
}

/// A local round's result together with quantities used for checks.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOutcome<S> {
    pub delta: RoundDelta<S>,
    /// Updated control `c̃_i`, from the telescoped model difference.
    pub control: Vec<S>,
    /// Running mean of the noisy gradients over the local steps.
    pub mean_noisy_grad: Vec<S>,
    /// Unclipped per-example gradient norms seen in this round.
    pub norms: Vec<S>,
}

/// Rescales `g` to norm at most `c`. `c = ∞` is the identity.
pub fn clip<S: Real>(g: &[S], c: S) -> Vec<S> {
    let scale = S::one() / S::one().max(norm_sq(g).sqrt() / c);
    g.iter().map(|v| *v * scale).collect()
}

/// Noise calibration of one local step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Privatizer {
    pub clip: f64,
    pub sigma_g: f64,
    pub sensitivity: SensitivityMode,
    pub data_ratio: f64,
}

impl Privatizer {
    /// Per-coordinate standard deviation `S σ_g` for a batch of `batch`
    /// records, with `S = 2C/batch` or `S = 2C/s`.
    pub fn noise_std(&self, batch: usize) -> f64 {
        if self.sigma_g == 0.0 {
            return 0.0;
        }
        let sensitivity = match self.sensitivity {
            SensitivityMode::Record => 2.0 * self.clip / batch as f64,
            SensitivityMode::User => 2.0 * self.clip / self.data_ratio,
        };
        sensitivity * self.sigma_g
    }
}

/// Mean of clipped per-example gradients over `batch`, plus Gaussian noise,
/// plus the regularizer gradient at `params`.
pub fn noisy_batch_gradient<S: Real, M: Model<S> + ?Sized, R: rand::Rng + ?Sized>(
    model: &M,
    params: &[S],
    shard: &Shard<S>,
    batch: &[usize],
    privatizer: &Privatizer,
    rng: &mut R,
    norms: &mut Vec<S>,
) -> Result<Vec<S>> {
    if batch.is_empty() {
        return Err(crate::error::config("empty batch"));
    }
    let mut h = vec![S::zero(); model.num_params()];
    model.clipped_grad_sum(params, shard, batch, S::of(privatizer.clip), &mut h, norms);
    let n = S::of(batch.len() as f64);
    h.iter_mut().for_each(|v| *v /= n);
    let std = privatizer.noise_std(batch.len());
    if std > 0.0 {
        let std = S::of(std);
        for v in h.iter_mut() {
            *v += std * S::standard_normal(rng);
        }
    }
    model.add_reg_grad(params, &mut h);
    Ok(h)
}

fn privatizer(cfg: &TrainConfig, clip: f64) -> Privatizer {
    Privatizer {
        clip,
        sigma_g: cfg.sigma_g,
        sensitivity: cfg.sensitivity,
        data_ratio: cfg.data_ratio,
    }
}

/// `K` local steps of one user starting from the server model.
#[allow(clippy::too_many_arguments)]
pub fn local_round<S: Real, M: Model<S> + ?Sized>(
    model: &M,
    cfg: &TrainConfig,
    server: &ServerState<S>,
    control: &[S],
    shard: &Shard<S>,
    clip: f64,
    streams: &Streams,
    round: u64,
    user: usize,
) -> Result<LocalOutcome<S>> {
    let d = server.x.len();
    let drift: Vec<S> = if cfg.algorithm.uses_controls() {
        server.c.iter().zip(control).map(|(c, ci)| *c - *ci).collect()
    } else {
        vec![S::zero(); d]
    };
    let eta = S::of(cfg.local_lr());
    let k = cfg.local_steps;
    let b = cfg.batch_size(shard.len());
    let priv_ = privatizer(cfg, clip);
    let mut y = server.x.clone();
    let mut h_sum = vec![S::zero(); d];
    let mut norms = Vec::with_capacity(b * k as usize);
    for step in 0..k {
        let mut batch_rng = streams.get(Phase::Train, round, user as u64, step, Purpose::Batch);
        let batch = sample_without_replacement(&mut batch_rng, shard.len(), b);
        let mut noise_rng = streams.get(Phase::Train, round, user as u64, step, Purpose::Noise);
        let h = noisy_batch_gradient(model, &y, shard, &batch, &priv_, &mut noise_rng, &mut norms)?;
        for j in 0..d {
            y[j] -= eta * (h[j] + drift[j]);
            h_sum[j] += h[j];
        }
    }
    let k_s = S::of(k as f64);
    let scale = S::one() / (k_s * eta);
    let mut dy = vec![S::zero(); d];
    let mut new_control = vec![S::zero(); d];
    let mut dc = vec![S::zero(); d];
    for j in 0..d {
        dy[j] = y[j] - server.x[j];
        new_control[j] = control[j] - server.c[j] + (server.x[j] - y[j]) * scale;
        dc[j] = new_control[j] - control[j];
    }
    h_sum.iter_mut().for_each(|v| *v /= k_s);
    Ok(LocalOutcome {
        delta: RoundDelta { dy, dc },
        control: new_control,
        mean_noisy_grad: h_sum,
        norms,
    })
}

/// Averages the selected users' increments and applies
/// `x += η_g Δx` and, when controls are used, `c += (|C|/M) Δc`.
/// The control factor equals `l` whenever `lM` is an integer.
pub fn aggregate<S: Real>(
    server: &mut ServerState<S>,
    deltas: &[&RoundDelta<S>],
    users: usize,
    eta_g: f64,
    update_controls: bool,
) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::Empty("round deltas"));
    }
    let d = server.x.len();
    for delta in deltas {
        for len in [delta.dy.len(), delta.dc.len()] {
            if len != d {
                return Err(Error::Dimension { expected: d, got: len });
            }
        }
    }
    let n = S::of(deltas.len() as f64);
    let mut dx = vec![S::zero(); d];
    let mut dc = vec![S::zero(); d];
    for delta in deltas {
        for j in 0..d {
            dx[j] += delta.dy[j];
            dc[j] += delta.dc[j];
        }
    }
    let eta_g = S::of(eta_g);
    let ratio = n / S::of(users as f64);
    for j in 0..d {
        server.x[j] += eta_g * (dx[j] / n);
        if update_controls {
            server.c[j] += ratio * (dc[j] / n);
        }
    }
    server.round += 1;
    Ok(())
}

fn median<S: Real>(values: &mut [S]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mid = n / 2;
    let (lower, m, _) = values.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let upper = m.to_f64_lossy();
    if n % 2 == 1 {
        return Some(upper);
    }
    let below = lower.iter().copied().fold(S::neg_infinity(), S::max).to_f64_lossy();
    Some(0.5 * (below + upper))
}

/// Evaluation schedule and test hooks of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Evaluate every `eval_every` rounds; 0 evaluates the final round only.
    pub eval_every: u64,
    /// Additionally evaluate every round in this trailing fraction of the run.
    pub tail_fraction: f64,
    /// `F*` for the train-loss gap of convex models.
    pub reference: Option<f64>,
    /// Defaults to `1/(M R)` with `R` the training shard size.
    pub delta: Option<f64>,
    /// Run selected users concurrently. Results do not depend on it.
    pub parallel: bool,
    /// Reset every control variate to zero before each round.
    pub zero_controls: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            eval_every: 1,
            tail_fraction: 0.1,
            reference: None,
            delta: None,
            parallel: true,
            zero_controls: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTrace<S> {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub warm_rounds: u64,
    pub rows: Vec<RoundMetrics>,
    pub final_params: Vec<S>,
}

/// Users selected in one round, with their local outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord<S> {
    pub selected: Vec<usize>,
    pub outcomes: Vec<LocalOutcome<S>>,
}

/// Stateful driver of one training run.
pub struct Trainer<'a, S: Real, M: Model<S> + ?Sized> {
    cfg: TrainConfig,
    opts: RunOptions,
    data: &'a FederatedDataset<S>,
    model: &'a M,
    streams: Streams,
    server: ServerState<S>,
    users: UserState<S>,
    clip: f64,
    accountant: Option<RoundAccountant>,
    warm_rounds: u64,
    delta: f64,
}

impl<'a, S: Real, M: Model<S> + ?Sized> Trainer<'a, S, M> {
    pub fn new(cfg: &TrainConfig, data: &'a FederatedDataset<S>, model: &'a M, opts: RunOptions) -> Result<Self> {
        let cfg = cfg.effective();
        let records = data.train_records();
        cfg.validate(data.num_users(), records)?;
        if model.input_dim() != data.dim() || model.num_classes() != data.num_classes() {
            return Err(Error::Dimension {
                expected: model.input_dim(),
                got: data.dim(),
            });
        }
        let delta = opts
            .delta
            .unwrap_or_else(|| MechanismParams::default_delta(data.num_users() as u64, records as u64));
        let accountant = if cfg.algorithm.is_private() && cfg.sigma_g > 0.0 {
            Some(RoundAccountant::new(&MechanismParams {
                sigma_g: cfg.sigma_g,
                local_steps: cfg.local_steps,
                rounds: cfg.rounds,
                user_ratio: cfg.user_ratio,
                data_ratio: cfg.data_ratio,
                users: data.num_users() as u64,
                records: records as u64,
                delta,
            })?)
        } else {
            None
        };
        let streams = Streams::new(cfg.seed);
        let x = model.init_params(&mut streams.get(Phase::Init, 0, 0, 0, Purpose::Params));
        let d = x.len();
        Ok(Self {
            clip: cfg.clip.initial(),
            warm_rounds: 0,
            server: ServerState {
                c: vec![S::zero(); d],
                x,
                round: 0,
            },
            users: UserState::zeros(data.num_users(), d),
            cfg,
            opts,
            data,
            model,
            streams,
            accountant,
            delta,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn server(&self) -> &ServerState<S> {
        &self.server
    }

    pub fn users(&self) -> &UserState<S> {
        &self.users
    }

    pub fn clip_threshold(&self) -> f64 {
        self.clip
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn warm_rounds_used(&self) -> u64 {
        self.warm_rounds
    }

    fn select_users(&self, phase: Phase, round: u64) -> Vec<usize> {
        let m = self.data.num_users();
        let mut rng = self.streams.get(phase, round, 0, 0, Purpose::UserSampling);
        sample_without_replacement(&mut rng, m, self.cfg.users_per_round(m))
    }

    fn for_selected<T: Send>(&self, selected: &[usize], f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        if self.opts.parallel {
            selected.par_iter().map(|&u| f(u)).collect()
        } else {
            selected.iter().map(|&u| f(u)).collect()
        }
    }

    fn update_clip(&mut self, norms: impl Iterator<Item = S>) {
        if let ClipMode::Median(_) = self.cfg.clip {
            let mut all: Vec<S> = norms.collect();
            if let Some(m) = median(&mut all) {
                if m > 0.0 {
                    self.clip = m;
                }
            }
        }
    }

    /// Initializes the controls from noisy gradients at the frozen initial
    /// model over `⌈4/l⌉` rounds of user sampling. Returns the number of
    /// warm rounds, which count towards the privacy budget.
    pub fn warm_start(&mut self) -> Result<u64> {
        let rounds = self.cfg.warm_rounds();
        let k = self.cfg.local_steps;
        for w in 0..rounds {
            let selected = self.select_users(Phase::Warm, w);
            let priv_ = privatizer(&self.cfg, self.clip);
            let x0 = &self.server.x;
            let results = self.for_selected(&selected, |u| {
                let shard = &self.data.user(u).train;
                let b = self.cfg.batch_size(shard.len());
                let mut mean = vec![S::zero(); x0.len()];
                let mut norms = Vec::new();
                for step in 0..k {
                    let mut batch_rng = self.streams.get(Phase::Warm, w, u as u64, step, Purpose::Batch);
                    let batch = sample_without_replacement(&mut batch_rng, shard.len(), b);
                    let mut noise_rng = self.streams.get(Phase::Warm, w, u as u64, step, Purpose::Noise);
                    let h = noisy_batch_gradient(self.model, x0, shard, &batch, &priv_, &mut noise_rng, &mut norms)?;
                    for (m, v) in mean.iter_mut().zip(&h) {
                        *m += *v;
                    }
                }
                let k_s = S::of(k as f64);
                mean.iter_mut().for_each(|v| *v /= k_s);
                Ok((mean, norms))
            })?;
            let mut norms = Vec::new();
            for (&u, (control, n)) in selected.iter().zip(results) {
                self.users.controls[u] = control;
                norms.extend(n);
            }
            self.update_clip(norms.into_iter());
        }
        self.server.c = self.users.mean();
        self.warm_rounds = rounds;
        Ok(rounds)
    }

    /// One communication round.
    pub fn step(&mut self) -> Result<RoundRecord<S>> {
        if self.opts.zero_controls {
            self.server.c.iter_mut().for_each(|v| *v = S::zero());
            for c in self.users.controls.iter_mut() {
                c.iter_mut().for_each(|v| *v = S::zero());
            }
        }
        let round = self.server.round;
        let selected = self.select_users(Phase::Train, round);
        let outcomes = self.for_selected(&selected, |u| {
            local_round(
                self.model,
                &self.cfg,
                &self.server,
                &self.users.controls[u],
                &self.data.user(u).train,
                self.clip,
                &self.streams,
                round,
                u,
            )
        })?;
        let deltas: Vec<&RoundDelta<S>> = outcomes.iter().map(|o| &o.delta).collect();
        let controls = self.cfg.algorithm.uses_controls();
        aggregate(&mut self.server, &deltas, self.data.num_users(), self.cfg.eta_g, controls)?;
        if controls {
            for (&u, o) in selected.iter().zip(&outcomes) {
                self.users.controls[u].clone_from(&o.control);
            }
        }
        self.update_clip(outcomes.iter().flat_map(|o| o.norms.iter().copied()));
        Ok(RoundRecord { selected, outcomes })
    }

    /// Third-party ε after the warm rounds and `rounds` training rounds;
    /// infinite for runs without noise.
    pub fn epsilon_after(&self, rounds: u64) -> Result<f64> {
        match &self.accountant {
            Some(acc) => acc.epsilon_after(self.warm_rounds + rounds),
            None => Ok(f64::INFINITY),
        }
    }

    pub fn evaluate(&self) -> Result<RoundMetrics> {
        let e = evaluate(self.data, self.model, &self.server.x, self.opts.reference)?;
        Ok(RoundMetrics {
            round: self.server.round,
            train_loss: e.train_metric,
            metric_kind: e.metric_kind,
            gap_floored: e.gap_floored,
            accuracy: e.accuracy,
            grad_dissim: e.grad_dissim,
            grad_log_dissim: e.grad_log_dissim,
            eps_so_far: self.epsilon_after(self.server.round)?,
            clip_c: self.clip,
        })
    }

    fn should_evaluate(&self, round: u64) -> bool {
        let total = self.cfg.rounds;
        round == total
            || (self.opts.eval_every > 0 && round % self.opts.eval_every == 0)
            || (self.opts.tail_fraction > 0.0 && round >= tail_start(total, self.opts.tail_fraction))
    }

    /// Warm start if configured, then all rounds.
    pub fn run(mut self) -> Result<TrainingTrace<S>> {
        if self.cfg.algorithm.warm_start() {
            self.warm_start()?;
        }
        let mut rows = Vec::new();
        for _ in 0..self.cfg.rounds {
            self.step()?;
            if self.should_evaluate(self.server.round) {
                rows.push(self.evaluate()?);
            }
        }
        Ok(TrainingTrace {
            algorithm: self.cfg.algorithm,
            seed: self.cfg.seed,
            warm_rounds: self.warm_rounds,
            rows,
            final_params: self.server.x,
        })
    }
}

/// Runs one configuration end to end.
pub fn run<S: Real, M: Model<S> + ?Sized>(
    cfg: &TrainConfig,
    data: &FederatedDataset<S>,
    model: &M,
    opts: RunOptions,
) -> Result<TrainingTrace<S>> {
    Trainer::new(cfg, data, model, opts)?.run()
}
