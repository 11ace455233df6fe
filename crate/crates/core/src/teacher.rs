//! Graph-convolutional teacher: two spectral convolutions around two cross
//! layers, layer concatenation, and BPR training.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{build_laplacian, sample_bpr_epoch, BprTriple, SplitDataset};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::numerics::{AdamState, BatchNormState, DenseMatrix, Gradients, SparseOperand, Tape, Var};

/// Pointwise nonlinearity of the spectral convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        })
    }
}

/// Every training knob for both phases.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    /// Latent width `D` of the teacher; the student code length is `3D`.
    pub dim: usize,
    /// Regularisation `λ` on the teacher's output embeddings.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Triples per Adam step; 0 means one full-batch step per epoch.
    pub batch_size: usize,
    /// Teacher only: stop once the loss moved by less than this fraction over 10 epochs; 0 disables.
    pub convergence_tol: f64,
    pub activation: Activation,
    /// When false, the cross weights stay at zero (plain two-layer spectral model).
    pub cross_layers: bool,
    /// Distillation weight `α`.
    pub alpha: f64,
    /// Distillation temperature `T`.
    pub temperature: f64,
    /// Bernoulli noise temperature `τ`.
    pub tau: f64,
    /// Corner penalty weight `β`.
    pub beta: f64,
    /// Noise penalty weight `ν`.
    pub nu: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            dim: 64,
            lambda: 0.001,
            lr: AdamState::DEFAULT_LR,
            epochs: 200,
            seed: 1,
            batch_size: 0,
            convergence_tol: 1e-4,
            activation: Activation::Sigmoid,
            cross_layers: true,
            alpha: 10.0,
            temperature: 1.0,
            tau: 0.2,
            beta: 0.001,
            nu: 0.001,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("nu", self.nu),
            ("convergence_tol", self.convergence_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        for (name, v) in [("temperature", self.temperature), ("tau", self.tau), ("lr", self.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 14] = [
        "dim",
        "lambda",
        "lr",
        "epochs",
        "seed",
        "batch_size",
        "convergence_tol",
        "activation",
        "cross_layers",
        "alpha",
        "temperature",
        "tau",
        "beta",
        "nu",
    ];

    /// Sets one field from its textual form. Unknown keys are a config error.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
        }
        match key {
            "dim" => self.dim = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "convergence_tol" => self.convergence_tol = parse(key, value)?,
            "activation" => self.activation = value.parse()?,
            "cross_layers" => self.cross_layers = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "nu" => self.nu = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown hyperparameter `{other}`"))),
        }
        Ok(())
    }

    /// All fields in [`Hyperparams::KEYS`] order. Floats use the shortest
    /// round-tripping form, so `from_kv(to_kv())` is exact.
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("dim", self.dim)
            .set("lambda", self.lambda)
            .set("lr", self.lr)
            .set("epochs", self.epochs)
            .set("seed", self.seed)
            .set("batch_size", self.batch_size)
            .set("convergence_tol", self.convergence_tol)
            .set("activation", self.activation)
            .set("cross_layers", self.cross_layers)
            .set("alpha", self.alpha)
            .set("temperature", self.temperature)
            .set("tau", self.tau)
            .set("beta", self.beta)
            .set("nu", self.nu);
        kv
    }

    /// Defaults overridden by every key in `kv`; rejects unknown keys and invalid values.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut h = Self::default();
        for (k, v) in kv.iter() {
            h.set_key(k, v)?;
        }
        h.validate()?;
        Ok(h)
    }
}

/// Trainable state of the teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherParams {
    pub u0: DenseMatrix,
    pub v0: DenseMatrix,
    pub theta0: DenseMatrix,
    pub theta1: DenseMatrix,
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub bn1: BatchNormState,
    pub bn2: BatchNormState,
    pub activation: Activation,
}

/// Concatenated layer outputs: `U` is `M x 3D`, `V` is `N x 3D`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherEmbeddings {
    pub users: DenseMatrix,
    pub items: DenseMatrix,
}

impl TeacherParams {
    /// Uniform `±sqrt(6 / (rows + cols))` for every matrix; identity batch norm.
    pub fn init(num_users: usize, num_items: usize, dim: usize, activation: Activation, cross: bool, rng: &mut ChaCha8Rng) -> Self {
        let n = num_users + num_items;
        let u0 = DenseMatrix::glorot(num_users, dim, rng);
        let v0 = DenseMatrix::glorot(num_items, dim, rng);
        let theta0 = DenseMatrix::glorot(dim, dim, rng);
        let theta1 = DenseMatrix::glorot(dim, dim, rng);
        let (w1, w2) = if cross {
            (DenseMatrix::glorot(n, dim, rng), DenseMatrix::glorot(n, dim, rng))
        } else {
            (DenseMatrix::zeros(n, dim), DenseMatrix::zeros(n, dim))
        };
        Self {
            u0,
            v0,
            theta0,
            theta1,
            w1,
            w2,
            bn1: BatchNormState::new(dim),
            bn2: BatchNormState::new(dim),
            activation,
        }
    }

    pub fn num_users(&self) -> usize {
        self.u0.rows()
    }

    pub fn num_items(&self) -> usize {
        self.v0.rows()
    }

    pub fn dim(&self) -> usize {
        self.u0.cols()
    }

    /// Trainable matrices in canonical order; the cross weights are left out when frozen.
    fn trainables_mut(&mut self, cross: bool) -> Vec<&mut DenseMatrix> {
        let mut out = vec![&mut self.u0, &mut self.v0, &mut self.theta0, &mut self.theta1];
        if cross {
            out.push(&mut self.w1);
            out.push(&mut self.w2);
        }
        out.extend([
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ]);
        out
    }
}

/// Tape handles for every teacher matrix.
#[derive(Clone, Copy, Debug)]
pub struct TeacherVars {
    pub u0: Var,
    pub v0: Var,
    pub theta0: Var,
    pub theta1: Var,
    pub w1: Var,
    pub w2: Var,
    pub gamma1: Var,
    pub beta1: Var,
    pub gamma2: Var,
    pub beta2: Var,
}

impl TeacherVars {
    /// Registers the parameters; frozen cross weights become constants.
    pub fn register(tape: &mut Tape, p: &TeacherParams, cross_trainable: bool) -> Self {
        let w = |tape: &mut Tape, m: &DenseMatrix| {
            if cross_trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        Self {
            u0: tape.param(p.u0.clone()),
            v0: tape.param(p.v0.clone()),
            theta0: tape.param(p.theta0.clone()),
            theta1: tape.param(p.theta1.clone()),
            w1: w(tape, &p.w1),
            w2: w(tape, &p.w2),
            gamma1: tape.param(p.bn1.gamma.clone()),
            beta1: tape.param(p.bn1.beta.clone()),
            gamma2: tape.param(p.bn2.gamma.clone()),
            beta2: tape.param(p.bn2.beta.clone()),
        }
    }

    fn grads(&self, g: &Gradients, p: &TeacherParams, cross: bool) -> Vec<DenseMatrix> {
        let mut out = vec![
            g.get_or_zeros(self.u0, p.u0.shape()),
            g.get_or_zeros(self.v0, p.v0.shape()),
            g.get_or_zeros(self.theta0, p.theta0.shape()),
            g.get_or_zeros(self.theta1, p.theta1.shape()),
        ];
        if cross {
            out.push(g.get_or_zeros(self.w1, p.w1.shape()));
            out.push(g.get_or_zeros(self.w2, p.w2.shape()));
        }
        out.extend([
            g.get_or_zeros(self.gamma1, p.bn1.gamma.shape()),
            g.get_or_zeros(self.beta1, p.bn1.beta.shape()),
            g.get_or_zeros(self.gamma2, p.bn2.gamma.shape()),
            g.get_or_zeros(self.beta2, p.bn2.beta.shape()),
        ]);
        out
    }
}

/// `ρ((X + L·X)·Θ)`, i.e. `ρ((I + L) X Θ)` without forming `I + L`.
pub fn spectral_conv(tape: &mut Tape, x: Var, laplacian: &SparseOperand, theta: Var, activation: Activation) -> Result<Var> {
    let lx = tape.sparse_dense_matmul(laplacian, x)?;
    let mixed = tape.add(x, lx)?;
    let z = tape.matmul(mixed, theta)?;
    Ok(activation.apply(tape, z))
}

/// Row-wise `x ← (w·x) x + x`, i.e. `diag((X ∘ W) 1) X + X`.
pub fn cross_layer(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    let xw = tape.hadamard(x, w)?;
    let s = tape.row_sum(xw);
    let scaled = tape.scale_rows(x, s)?;
    tape.add(scaled, x)
}

/// Records the full forward pass and returns `(U, V)` handles.
///
/// Batch-norm blocks in train mode update their running statistics.
pub fn teacher_forward_taped(
    tape: &mut Tape,
    vars: &TeacherVars,
    bn1: &mut BatchNormState,
    bn2: &mut BatchNormState,
    activation: Activation,
    laplacian: &SparseOperand,
) -> Result<(Var, Var)> {
    let m = tape.shape(vars.u0).0;
    let n = tape.shape(vars.v0).0;
    if laplacian.matrix().shape() != (m + n, m + n) {
        return Err(Error::shape("teacher_forward", laplacian.matrix().shape(), (m + n, m + n)));
    }
    let x0 = tape.concat_rows(vars.u0, vars.v0)?;
    let z0 = bn1.forward(tape, x0, vars.gamma1, vars.beta1)?;
    let h1 = spectral_conv(tape, z0, laplacian, vars.theta0, activation)?;
    let h2 = cross_layer(tape, h1, vars.w1)?;
    let h3 = cross_layer(tape, h2, vars.w2)?;
    let z3 = bn2.forward(tape, h3, vars.gamma2, vars.beta2)?;
    let h4 = spectral_conv(tape, z3, laplacian, vars.theta1, activation)?;

    let u1 = tape.slice_rows(h1, 0, m)?;
    let v1 = tape.slice_rows(h1, m, m + n)?;
    let u4 = tape.slice_rows(h4, 0, m)?;
    let v4 = tape.slice_rows(h4, m, m + n)?;
    let u = tape.concat_cols(&[vars.u0, u1, u4])?;
    let v = tape.concat_cols(&[vars.v0, v1, v4])?;
    Ok((u, v))
}

/// Untaped forward pass; the parameters (including running statistics) are not modified.
pub fn teacher_forward(params: &TeacherParams, laplacian: &SparseOperand) -> Result<TeacherEmbeddings> {
    let mut tape = Tape::new();
    let vars = TeacherVars::register(&mut tape, params, false);
    let (mut bn1, mut bn2) = (params.bn1.clone(), params.bn2.clone());
    let (u, v) = teacher_forward_taped(&mut tape, &vars, &mut bn1, &mut bn2, params.activation, laplacian)?;
    Ok(TeacherEmbeddings {
        users: tape.value(u).clone(),
        items: tape.value(v).clone(),
    })
}

/// `Σ −ln σ(u_i·(v_j − v_j')) + λ (‖U‖² + ‖V‖²)`, summed over `triples`.
pub fn bpr_loss(tape: &mut Tape, u: Var, v: Var, triples: &[BprTriple], lambda: f64) -> Result<Var> {
    if triples.is_empty() {
        return Err(Error::Data("bpr_loss needs at least one triple".into()));
    }
    let users: Arc<[u32]> = triples.iter().map(|t| t.user).collect();
    let pos: Arc<[u32]> = triples.iter().map(|t| t.pos).collect();
    let neg: Arc<[u32]> = triples.iter().map(|t| t.neg).collect();
    let sp = tape.pair_dot(u, v, users.clone(), pos)?;
    let sn = tape.pair_dot(u, v, users, neg)?;
    let diff = tape.sub(sp, sn)?;
    let ls = tape.log_sigmoid(diff);
    let total = tape.reduce_sum(ls);
    let data = tape.scale(total, -1.0);
    if lambda == 0.0 {
        return Ok(data);
    }
    let su = tape.square(u);
    let su = tape.reduce_sum(su);
    let sv = tape.square(v);
    let sv = tape.reduce_sum(sv);
    let reg = tape.add(su, sv)?;
    let reg = tape.scale(reg, lambda);
    tape.add(data, reg)
}

/// Output of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherCheckpoint {
    pub params: TeacherParams,
    pub embeddings: TeacherEmbeddings,
    pub hyper: Hyperparams,
}

#[derive(Clone, Debug)]
pub struct TeacherRun {
    pub checkpoint: TeacherCheckpoint,
    /// Objective summed over each epoch's minibatches.
    pub losses: Vec<f64>,
}

pub(crate) fn converged(losses: &[f64], tol: f64) -> bool {
    if tol <= 0.0 || losses.len() <= 10 {
        return false;
    }
    let now = losses[losses.len() - 1];
    let then = losses[losses.len() - 11];
    ((now - then) / then.abs().max(f64::MIN_POSITIVE)).abs() < tol
}

pub(crate) fn grad_norms(grads: &[DenseMatrix]) -> String {
    grads
        .iter()
        .map(|g| format!("{:.3e}", g.frobenius_sq().sqrt()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Trains the teacher on the split's training graph.
///
/// Each epoch resamples one negative per training positive, shuffles the
/// triples, and takes one Adam step per minibatch on a full-graph forward
/// pass. The regulariser is spread over minibatches in proportion to their
/// size so an epoch's summed loss is exactly the BPR objective.
pub fn train_teacher(split: &SplitDataset, hyper: &Hyperparams) -> Result<TeacherRun> {
    hyper.validate()?;
    let graph = &split.train;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = TeacherParams::init(
        graph.num_users(),
        graph.num_items(),
        hyper.dim,
        hyper.activation,
        hyper.cross_layers,
        &mut rng,
    );
    let laplacian = SparseOperand::new(build_laplacian(graph)?);
    let mut adam = AdamState::new(hyper.lr);
    let mut losses = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let mut triples = sample_bpr_epoch(graph, &mut rng);
        if triples.is_empty() {
            return Err(Error::Data("training graph yields no BPR triples".into()));
        }
        triples.shuffle(&mut rng);
        let batch = if hyper.batch_size == 0 { triples.len() } else { hyper.batch_size };
        let total = triples.len() as f64;
        let mut epoch_loss = 0.0;
        for chunk in triples.chunks(batch) {
            let mut tape = Tape::new();
            let vars = TeacherVars::register(&mut tape, &params, hyper.cross_layers);
            let (u, v) = teacher_forward_taped(
                &mut tape,
                &vars,
                &mut params.bn1,
                &mut params.bn2,
                params.activation,
                &laplacian,
            )?;
            let lambda = hyper.lambda * chunk.len() as f64 / total;
            let loss = bpr_loss(&mut tape, u, v, chunk, lambda)?;
            let value = tape.scalar(loss);
            let grads = vars.grads(&tape.backward(loss)?, &params, hyper.cross_layers);
            if !value.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite(format!(
                    "teacher epoch {}: loss {value}, gradient norms [{}]",
                    epoch + 1,
                    grad_norms(&grads)
                )));
            }
            adam.step(&mut params.trainables_mut(hyper.cross_layers), &grads)?;
            epoch_loss += value;
        }
        log::debug!("teacher epoch {} loss {epoch_loss:.6}", epoch + 1);
        losses.push(epoch_loss);
        if converged(&losses, hyper.convergence_tol) {
            log::info!("teacher converged after {} epochs", epoch + 1);
            break;
        }
    }

    let embeddings = teacher_forward(&params, &laplacian)?;
    Ok(TeacherRun {
        checkpoint: TeacherCheckpoint {
            params,
            embeddings,
            hyper: hyper.clone(),
        },
        losses,
    })
}
