//! In-process simulation of the device/recommender training protocol.
//!
//! Private state (ratings, weights, the user vector `u_i`, the Gaussian
//! draws behind each noise share) lives in [`UserDevice`]. The
//! [`Recommender`] holds only the item factors `V` and the rater registry
//! `R_j`. The two sides talk exclusively through [`Envelope`]s passed over a
//! [`Channel`]; there is no device-to-device variant.
//!
//! Trust assumption: the recommender learns which users rated which items
//! (it must route `h_j` and collect one gradient per rater), but never a
//! rating value or a privacy weight.
//!
//! Round structure per epoch:
//! 1. for every rated item `j`, each rater sends
//!    `2 (u_i·v_j − W_ij R_ij) u_i + x_j^i`; the recommender sums the
//!    payloads, adds `2λ v_j` and steps `v_j`;
//! 2. the recommender broadcasts `V`; every device steps `u_i` on its local
//!    gradient against that snapshot and projects it onto the unit ball.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{
    self, descend, local_user_gradient, project_unit_ball_in_place, residual_term, FactorModel,
    RatingDataset, RatingScale, TrainConfig,
};
use crate::privacy::{
    draw_exp_vector, draw_gaussian_vector, rescale_prediction, share_vector, ItemNoise, NoisePlan,
    WeightAssignment,
};

/// Noisy local item gradient sent by one device.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    pub item: usize,
    pub sender: usize,
    pub payload: Vec<f64>,
}

/// Everything that crosses the device/recommender boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    /// Device → recommender: the items this user rated (membership only).
    Register { user: usize, items: Vec<usize> },
    /// Device → recommender.
    Gradient(GradientMessage),
    /// Recommender → device: the shared exponential vector `h_j` and `|R_j|`.
    ExpVector {
        item: usize,
        to_user: usize,
        raters: usize,
        exp: Vec<f64>,
    },
    /// Recommender → all devices: `V` after the item phase of `epoch`.
    ItemFactors { epoch: usize, factors: Vec<f64> },
}

impl Envelope {
    pub fn is_upstream(&self) -> bool {
        matches!(self, Envelope::Register { .. } | Envelope::Gradient(_))
    }
}

/// Message transport. Counts every envelope; keeps a copy when instrumented.
#[derive(Debug, Default)]
pub struct Channel {
    log: Option<Vec<Envelope>>,
    upstream: usize,
    downstream: usize,
}

impl Channel {
    pub fn new(instrumented: bool) -> Self {
        Self {
            log: instrumented.then(Vec::new),
            upstream: 0,
            downstream: 0,
        }
    }

    fn record(&mut self, envelope: &Envelope) {
        if envelope.is_upstream() {
            self.upstream += 1;
        } else {
            self.downstream += 1;
        }
        if let Some(log) = &mut self.log {
            log.push(envelope.clone());
        }
    }

    pub fn upstream_count(&self) -> usize {
        self.upstream
    }

    pub fn downstream_count(&self) -> usize {
        self.downstream
    }

    pub fn log(&self) -> Option<&[Envelope]> {
        self.log.as_deref()
    }

    pub fn into_log(self) -> Option<Vec<Envelope>> {
        self.log
    }
}

/// How the item-gradient noise is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSetting {
    /// All shares zero.
    Zero,
    /// Shares that sum to `Laplace(2√K Δ / ε)` per coordinate.
    Laplace { epsilon: f64 },
}

#[derive(Debug, Clone)]
struct RatedItem {
    item: usize,
    target: f64,
    exp: Vec<f64>,
    gaussian: Vec<f64>,
    share: Vec<f64>,
}

/// One user's device: private ratings, weights, `u_i` and noise shares.
#[derive(Debug, Clone)]
pub struct UserDevice {
    user: usize,
    rated: Vec<RatedItem>,
    u: Vec<f64>,
    seed: u64,
    delta: f64,
}

impl UserDevice {
    /// `ratings` are `(item, R_ij, W_ij)`; with `stretch` off the device
    /// trains on `R_ij` itself.
    pub fn new(
        user: usize,
        mut ratings: Vec<(usize, f64, f64)>,
        u: Vec<f64>,
        stretch: bool,
        seed: u64,
        delta: f64,
    ) -> Self {
        ratings.sort_by_key(|&(j, _, _)| j);
        let k = u.len();
        let rated = ratings
            .into_iter()
            .map(|(item, r, w)| RatedItem {
                item,
                target: if stretch { crate::privacy::stretch(r, w) } else { r },
                exp: vec![0.0; k],
                gaussian: vec![0.0; k],
                share: vec![0.0; k],
            })
            .collect();
        Self {
            user,
            rated,
            u,
            seed,
            delta,
        }
    }

    pub fn user(&self) -> usize {
        self.user
    }

    pub fn registration(&self) -> Envelope {
        Envelope::Register {
            user: self.user,
            items: self.rated.iter().map(|r| r.item).collect(),
        }
    }

    fn rated_mut(&mut self, j: usize) -> Result<&mut RatedItem> {
        let user = self.user;
        match self.rated.binary_search_by_key(&j, |r| r.item) {
            Ok(pos) => Ok(&mut self.rated[pos]),
            Err(_) => Err(Error::Protocol(format!("user {user} did not rate item {j}"))),
        }
    }

    fn rated(&self, j: usize) -> Result<&RatedItem> {
        self.rated
            .binary_search_by_key(&j, |r| r.item)
            .map(|pos| &self.rated[pos])
            .map_err(|_| Error::Protocol(format!("user {} did not rate item {j}", self.user)))
    }

    /// Draws this device's Gaussian vector for `j` and fixes its share.
    pub fn receive_exp_vector(
        &mut self,
        j: usize,
        raters: usize,
        exp: &[f64],
        epsilon: f64,
    ) -> Result<()> {
        let (seed, user, delta) = (self.seed, self.user, self.delta);
        let k = self.u.len();
        if exp.len() != k || raters == 0 {
            return Err(Error::Protocol(format!(
                "malformed exponential vector for item {j}"
            )));
        }
        let slot = self.rated_mut(j)?;
        let c = draw_gaussian_vector(seed, j, user, raters, k);
        slot.share = share_vector(exp, &c, delta, epsilon);
        slot.exp = exp.to_vec();
        slot.gaussian = c;
        Ok(())
    }

    /// `2 (u_i·v_j − W_ij R_ij) u_i + x_j^i`.
    pub fn emit_gradient(&self, j: usize, v_j: &[f64]) -> Result<GradientMessage> {
        let slot = self.rated(j)?;
        if v_j.len() != self.u.len() {
            return Err(Error::usage("item vector length differs from K"));
        }
        let mut payload = vec![0.0; self.u.len()];
        residual_term(v_j, &self.u, slot.target, &mut payload);
        for (p, x) in payload.iter_mut().zip(&slot.share) {
            *p += x;
        }
        Ok(GradientMessage {
            item: j,
            sender: self.user,
            payload,
        })
    }

    /// Local gradient step against the broadcast `V`, then projection.
    /// Returns the gradient norm.
    pub fn update_user(&mut self, item_factors: &[f64], lambda: f64, eta: f64) -> f64 {
        let k = self.u.len();
        let grad = local_user_gradient(
            &self.u,
            self.rated
                .iter()
                .map(|r| (&item_factors[r.item * k..(r.item + 1) * k], r.target)),
            lambda,
        );
        descend(&mut self.u, &grad, eta);
        project_unit_ball_in_place(&mut self.u);
        model::norm(&grad)
    }

    fn is_finite(&self) -> bool {
        self.u.iter().all(|x| x.is_finite())
    }
}

/// The untrusted aggregator. Holds `V` and `R_j` membership, nothing else.
#[derive(Debug, Clone)]
pub struct Recommender {
    k: usize,
    items: Vec<f64>,
    registry: Vec<Vec<usize>>,
}

impl Recommender {
    pub fn new(k: usize, items: Vec<f64>) -> Self {
        let n_items = items.len() / k;
        Self {
            k,
            items,
            registry: vec![Vec::new(); n_items],
        }
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.items[j * self.k..(j + 1) * self.k]
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.items
    }

    pub fn raters(&self, j: usize) -> &[usize] {
        &self.registry[j]
    }

    pub fn receive(&mut self, envelope: &Envelope) -> Result<()> {
        match envelope {
            Envelope::Register { user, items } => {
                for &j in items {
                    let raters = self
                        .registry
                        .get_mut(j)
                        .ok_or_else(|| Error::Protocol(format!("unknown item {j}")))?;
                    if let Err(pos) = raters.binary_search(user) {
                        raters.insert(pos, *user);
                    }
                }
                Ok(())
            }
            other => Err(Error::Protocol(format!(
                "recommender cannot accept {other:?} outside an item phase"
            ))),
        }
    }

    /// `v_j ← v_j − η (Σ payloads + 2λ v_j)`. Expects exactly one message
    /// per registered rater, in registry order for reproducible sums.
    /// Returns the aggregated gradient.
    pub fn update_item(
        &mut self,
        j: usize,
        messages: &[GradientMessage],
        lambda: f64,
        eta: f64,
    ) -> Result<Vec<f64>> {
        let registered = &self.registry[j];
        let mut senders: Vec<usize> = Vec::with_capacity(messages.len());
        for m in messages {
            if m.item != j {
                return Err(Error::Protocol(format!(
                    "message for item {} delivered to item {j}",
                    m.item
                )));
            }
            if m.payload.len() != self.k || !m.payload.iter().all(|x| x.is_finite()) {
                return Err(Error::Protocol(format!(
                    "malformed payload from user {}",
                    m.sender
                )));
            }
            senders.push(m.sender);
        }
        senders.sort_unstable();
        if senders.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Protocol(format!("duplicate rater message for item {j}")));
        }
        if senders != *registered {
            return Err(Error::Protocol(format!(
                "item {j} expected messages from {} raters, got {}",
                registered.len(),
                senders.len()
            )));
        }
        let mut grad = vec![0.0; self.k];
        for m in messages {
            for (g, p) in grad.iter_mut().zip(&m.payload) {
                *g += p;
            }
        }
        let k = self.k;
        let v = &mut self.items[j * k..(j + 1) * k];
        for (g, vk) in grad.iter_mut().zip(v.iter()) {
            *g += 2.0 * lambda * vk;
        }
        descend(v, &grad, eta);
        Ok(grad)
    }
}

/// Options for one simulated training run.
pub struct ProtocolOptions<'a> {
    /// Train on `W_ij R_ij` instead of `R_ij`.
    pub stretch: bool,
    pub noise: NoiseSetting,
    /// Keep a copy of every envelope.
    pub instrument: bool,
    /// Optional per-update trace (see [`TRACE_HEADER`]).
    pub trace: Option<&'a mut dyn Write>,
}

impl Default for ProtocolOptions<'_> {
    fn default() -> Self {
        Self {
            stretch: true,
            noise: NoiseSetting::Zero,
            instrument: false,
            trace: None,
        }
    }
}

/// Header of the run-trace: one tab-separated record per item or user
/// update. `phase` is `item` or `user`; `messages` is the number of
/// gradient messages aggregated (0 for local user steps).
pub const TRACE_HEADER: &str = "epoch\tphase\tindex\tmessages\tgrad_norm";

#[derive(Debug)]
pub struct ProtocolOutcome {
    pub model: FactorModel,
    pub noise: NoisePlan,
    pub channel: Channel,
}

fn trace_err(e: std::io::Error) -> Error {
    Error::io("<trace>", e)
}

/// Runs the full protocol for `cfg.epochs` epochs.
pub fn run_protocol(
    dataset: &RatingDataset,
    weights: &WeightAssignment,
    cfg: &TrainConfig,
    mut opts: ProtocolOptions<'_>,
) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    if weights.beta().len() != dataset.n_users() || weights.gamma().len() != dataset.n_items() {
        return Err(Error::usage("weights do not cover every user and item"));
    }
    let k = cfg.k;
    let delta = dataset.scale().range();
    let init = FactorModel::init(dataset.n_users(), dataset.n_items(), k, cfg.lambda, cfg.seed);

    let mut devices: Vec<UserDevice> = dataset
        .items_by_user()
        .into_iter()
        .enumerate()
        .map(|(i, items)| {
            let ratings = items
                .into_iter()
                .map(|(j, r)| (j, r, weights.weight(i, j)))
                .collect();
            UserDevice::new(i, ratings, init.user(i).to_vec(), opts.stretch, cfg.seed, delta)
        })
        .collect();
    let mut recommender = Recommender::new(k, init.item_factors().to_vec());
    let mut channel = Channel::new(opts.instrument);

    for device in &devices {
        let env = device.registration();
        channel.record(&env);
        recommender.receive(&env)?;
    }

    let epsilon = match opts.noise {
        NoiseSetting::Zero => f64::INFINITY,
        NoiseSetting::Laplace { epsilon } => {
            if !(epsilon > 0.0) {
                return Err(Error::usage("epsilon must be positive"));
            }
            for j in 0..dataset.n_items() {
                let raters = recommender.raters(j).to_vec();
                if raters.is_empty() {
                    continue;
                }
                let exp = draw_exp_vector(cfg.seed, j, k);
                for &i in &raters {
                    let env = Envelope::ExpVector {
                        item: j,
                        to_user: i,
                        raters: raters.len(),
                        exp: exp.clone(),
                    };
                    channel.record(&env);
                    devices[i].receive_exp_vector(j, raters.len(), &exp, epsilon)?;
                }
            }
            epsilon
        }
    };

    if let Some(w) = opts.trace.as_mut() {
        writeln!(w, "{TRACE_HEADER}").map_err(trace_err)?;
    }

    let mut messages = Vec::new();
    for epoch in 0..cfg.epochs {
        let eta = model::learning_rate(epoch, cfg.epochs, cfg.learning_rate);
        for j in 0..dataset.n_items() {
            if recommender.raters(j).is_empty() {
                continue;
            }
            messages.clear();
            for &i in recommender.raters(j) {
                let msg = devices[i].emit_gradient(j, recommender.item(j))?;
                if channel.log.is_some() {
                    channel.record(&Envelope::Gradient(msg.clone()));
                } else {
                    channel.upstream += 1;
                }
                messages.push(msg);
            }
            let grad = recommender.update_item(j, &messages, cfg.lambda, eta)?;
            if let Some(w) = opts.trace.as_mut() {
                writeln!(w, "{epoch}\titem\t{j}\t{}\t{}", messages.len(), model::norm(&grad))
                    .map_err(trace_err)?;
            }
        }
        if channel.log.is_some() {
            channel.record(&Envelope::ItemFactors {
                epoch,
                factors: recommender.item_factors().to_vec(),
            });
        } else {
            channel.downstream += 1;
        }
        for device in devices.iter_mut() {
            let g = device.update_user(recommender.item_factors(), cfg.lambda, eta);
            if let Some(w) = opts.trace.as_mut() {
                writeln!(w, "{epoch}\tuser\t{}\t0\t{g}", device.user).map_err(trace_err)?;
            }
        }
        if !recommender.items.iter().all(|x| x.is_finite())
            || !devices.iter().all(UserDevice::is_finite)
        {
            return Err(Error::Diverged {
                epoch,
                what: "non-finite latent factor".into(),
            });
        }
    }

    let users: Vec<f64> = devices.iter().flat_map(|d| d.u.iter().copied()).collect();
    let model = FactorModel::from_parts(k, cfg.lambda, users, recommender.items)?;
    let noise = match opts.noise {
        NoiseSetting::Zero => NoisePlan::zeros(dataset, k),
        NoiseSetting::Laplace { .. } => collect_noise_plan(&devices, dataset.n_items(), k, delta, epsilon),
    };
    Ok(ProtocolOutcome {
        model,
        noise,
        channel,
    })
}

fn collect_noise_plan(
    devices: &[UserDevice],
    n_items: usize,
    k: usize,
    delta: f64,
    epsilon: f64,
) -> NoisePlan {
    let mut items: Vec<Option<ItemNoise>> = vec![None; n_items];
    for d in devices {
        for r in &d.rated {
            let entry = items[r.item].get_or_insert_with(|| ItemNoise {
                exp: r.exp.clone(),
                shares: Vec::new(),
            });
            entry
                .shares
                .push((d.user, r.gaussian.clone(), r.share.clone()));
        }
    }
    NoisePlan::from_items(k, delta, epsilon, items)
}

/// Stretched training with distributed Laplace noise at budget `epsilon`.
pub fn run_hdpmf(
    dataset: &RatingDataset,
    weights: &WeightAssignment,
    epsilon: f64,
    cfg: &TrainConfig,
) -> Result<(FactorModel, NoisePlan)> {
    let out = run_protocol(
        dataset,
        weights,
        cfg,
        ProtocolOptions {
            stretch: true,
            noise: NoiseSetting::Laplace { epsilon },
            ..Default::default()
        },
    )?;
    Ok((out.model, out.noise))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictOptions {
    /// Divide by `W_ij` (off for the ablation variant).
    pub rescale: bool,
    /// Clamp onto the rating scale.
    pub clamp: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            rescale: true,
            clamp: true,
        }
    }
}

/// Predictions for `pairs`, as computed on each user's device.
pub fn predict_all(
    model: &FactorModel,
    weights: &WeightAssignment,
    pairs: &[(usize, usize)],
    scale: RatingScale,
    opts: PredictOptions,
) -> Result<Vec<(usize, usize, f64)>> {
    pairs
        .iter()
        .map(|&(i, j)| {
            let raw = model::predict_raw(model, i, j)?;
            let w = if opts.rescale { weights.weight(i, j) } else { 1.0 };
            let r = rescale_prediction(raw, w, scale.min, scale.max, opts.clamp)?;
            Ok((i, j, r))
        })
        .collect()
}
