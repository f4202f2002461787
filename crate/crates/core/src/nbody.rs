//! Spring-system simulator and the symmetry-breaking experiment: particles
//! joined pairwise by springs and tied to the XY plane by vertical strings.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::equivariant_nn::{multiplicity_rep, Adam, Ctx, FieldBatch, Mode, ParamStore};
use crate::error::{Error, Result};
use crate::groups::GroupId;
use crate::reps::{harmonic_rep, standard_rep, Rep};
use crate::steerable_conv::{fully_connected, Aggregation, Batch, Graph, Model, ModelConfig, Readout};
use crate::tensor::{Tape, Tensor};

pub const FORMAT_VERSION: u32 = 1;

type V3 = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpringSystem {
    pub n_particles: usize,
    pub pair_stiffness: f64,
    pub plane_stiffness: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl Default for SpringSystem {
    fn default() -> Self {
        Self { n_particles: 5, pair_stiffness: 0.1, plane_stiffness: 0.0, dt: 1e-3, n_steps: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub pos0: Vec<V3>,
    pub vel0: Vec<V3>,
    pub ell: Vec<f64>,
    pub pos1: Vec<V3>,
}

impl SpringSystem {
    pub fn with_stiffness(plane_stiffness: f64) -> Self {
        Self { plane_stiffness, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.plane_stiffness >= 0.0 && self.pair_stiffness > 0.0 && self.dt > 0.0) {
            return Err(Error::config("need plane stiffness >= 0, pair stiffness > 0, dt > 0"));
        }
        if self.n_particles == 0 {
            return Err(Error::config("no particles"));
        }
        Ok(())
    }

    /// Accelerations (unit masses).
    pub fn forces(&self, pos: &[V3], ell: &[f64]) -> Vec<V3> {
        let n = pos.len();
        let mut sum = [0.0; 3];
        for p in pos {
            for c in 0..3 {
                sum[c] += p[c];
            }
        }
        (0..n)
            .map(|i| {
                // sum_j (x_i - x_j) = n x_i - sum_j x_j
                let mut f = [0.0; 3];
                for c in 0..3 {
                    f[c] = -self.pair_stiffness * (n as f64 * pos[i][c] - sum[c]);
                }
                f[2] -= self.plane_stiffness * (pos[i][2] - ell[i]);
                f
            })
            .collect()
    }

    /// Kinetic plus spring potential energy.
    pub fn energy(&self, pos: &[V3], vel: &[V3], ell: &[f64]) -> f64 {
        let n = pos.len();
        let mut e = 0.0;
        for i in 0..n {
            e += 0.5 * vel[i].iter().map(|v| v * v).sum::<f64>();
            e += 0.5 * self.plane_stiffness * (pos[i][2] - ell[i]).powi(2);
            for j in i + 1..n {
                let d2: f64 = (0..3).map(|c| (pos[i][c] - pos[j][c]).powi(2)).sum();
                e += 0.5 * self.pair_stiffness * d2;
            }
        }
        e
    }

    /// Velocity Verlet; returns final positions and velocities.
    pub fn simulate(&self, pos0: &[V3], vel0: &[V3], ell: &[f64]) -> Result<(Vec<V3>, Vec<V3>)> {
        self.validate()?;
        if pos0.len() != vel0.len() || pos0.len() != ell.len() {
            return Err(Error::dim("positions, velocities and lengths disagree in count"));
        }
        let h = self.dt;
        let mut pos = pos0.to_vec();
        let mut vel = vel0.to_vec();
        let mut acc = self.forces(&pos, ell);
        for step in 0..self.n_steps {
            for i in 0..pos.len() {
                for c in 0..3 {
                    vel[i][c] += 0.5 * h * acc[i][c];
                    pos[i][c] += h * vel[i][c];
                }
            }
            acc = self.forces(&pos, ell);
            for i in 0..pos.len() {
                for c in 0..3 {
                    vel[i][c] += 0.5 * h * acc[i][c];
                }
            }
            if pos.iter().chain(&vel).flatten().any(|x| !x.is_finite()) {
                return Err(Error::Divergence { step: step + 1 });
            }
        }
        Ok((pos, vel))
    }

    pub fn integrate(&self, pos0: &[V3], vel0: &[V3], ell: &[f64]) -> Result<Trajectory> {
        let (pos1, _) = self.simulate(pos0, vel0, ell)?;
        Ok(Trajectory { pos0: pos0.to_vec(), vel0: vel0.to_vec(), ell: ell.to_vec(), pos1 })
    }

    /// Positions N(0, 1), velocities N(0, 0.5), lengths U(0.5, 1.5).
    pub fn random_trajectory(&self, rng: &mut impl Rng) -> Result<Trajectory> {
        let n = self.n_particles;
        let pos_d = Normal::new(0.0, 1.0).expect("valid");
        let vel_d = Normal::new(0.0, 0.5).expect("valid");
        let ell_d = Uniform::new(0.5, 1.5);
        let pos0: Vec<V3> = (0..n).map(|_| [(); 3].map(|_| pos_d.sample(rng))).collect();
        let vel0: Vec<V3> = (0..n).map(|_| [(); 3].map(|_| vel_d.sample(rng))).collect();
        let ell: Vec<f64> = (0..n).map(|_| ell_d.sample(rng)).collect();
        self.integrate(&pos0, &vel0, &ell)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

impl Dataset {
    pub fn generate(system: &SpringSystem, n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Result<Self> {
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::config("split sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut take = |k: usize| (0..k).map(|_| system.random_trajectory(&mut rng)).collect::<Result<Vec<_>>>();
        Ok(Self { train: take(n_train)?, val: take(n_val)?, test: take(n_test)? })
    }

    pub fn splits(&self) -> [&[Trajectory]; 3] {
        [&self.train, &self.val, &self.test]
    }

    /// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, split) in SPLITS.iter().zip(self.splits()) {
            write_jsonl(&dir.join(format!("{name}.jsonl")), split)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let r = |name: &str| read_jsonl(&dir.join(format!("{name}.jsonl")));
        Ok(Self { train: r("train")?, val: r("val")?, test: r("test")? })
    }
}

pub fn write_jsonl(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trajs {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Trajectory>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), k + 1)))?;
        let n = t.pos0.len();
        if t.vel0.len() != n || t.ell.len() != n || t.pos1.len() != n {
            return Err(Error::Data(format!("{}:{}: inconsistent particle counts", path.display(), k + 1)));
        }
        if t.pos0.iter().chain(&t.vel0).chain(&t.pos1).flatten().chain(&t.ell).any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("{}:{}: non-finite value", path.display(), k + 1)));
        }
        out.push(t);
    }
    Ok(out)
}

/// Mean squared displacement, i.e. the error of predicting no motion.
pub fn zero_motion_mse(trajs: &[Trajectory]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for t in trajs {
        for (a, b) in t.pos0.iter().zip(&t.pos1) {
            for c in 0..3 {
                s += (a[c] - b[c]).powi(2);
                n += 1;
            }
        }
    }
    s / n.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    /// Sphere-function fields per hidden layer, see [`sphere_fields`].
    pub hidden_fields: usize,
    pub band_limit: u32,
    pub depth: usize,
    pub kernel_layers: usize,
    pub kernel_fields: usize,
    pub kernel_degree: u32,
    pub sigma_init: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-2,
            lr_halve_every: 25,
            hidden_fields: 8,
            band_limit: 1,
            depth: 1,
            kernel_layers: 1,
            kernel_fields: 4,
            kernel_degree: 1,
            sigma_init: 2.0,
            seed: 0,
        }
    }
}

/// Node input rep: position, velocity (both standard) and the string length.
pub fn input_rep(group: GroupId) -> Result<Rep<f64>> {
    let st = standard_rep(group)?;
    st.direct_sum(&st)?.direct_sum(&Rep::trivial(group, 1))
}

/// `copies` fields of band-limited functions on the sphere, `Y_0 ⊕ ... ⊕ Y_band`,
/// split into irreps of `group`. Every group gets the same field width.
pub fn sphere_fields(group: GroupId, band: u32, copies: usize) -> Result<Rep<f64>> {
    let mut ids = Vec::new();
    for l in 0..=band {
        ids.extend_from_slice(harmonic_rep(group, l)?.irreps());
    }
    ids.sort();
    multiplicity_rep(group, &ids, copies)
}

pub fn model_config(group: GroupId, cfg: &TrainConfig) -> Result<ModelConfig> {
    let hidden = sphere_fields(group, cfg.band_limit, cfg.hidden_fields)?;
    Ok(ModelConfig {
        group,
        node_in: input_rep(group)?,
        node_attr: None,
        edge_attr: None,
        hidden: hidden.clone(),
        blocks: vec![hidden; cfg.depth],
        residual: true,
        kernel_degree: cfg.kernel_degree,
        kernel_hidden: vec![sphere_fields(group, cfg.band_limit, cfg.kernel_fields)?; cfg.kernel_layers],
        band_limit: cfg.band_limit,
        sigma_init: cfg.sigma_init,
        aggregation: Aggregation::Sum,
        self_interaction: false,
        readout: Readout::Node { rep: standard_rep(group)? },
    })
}

/// Fully connected graph with node features `pos ⊕ vel ⊕ ell`.
pub fn to_graph(group: GroupId, t: &Trajectory) -> Result<Graph> {
    let n = t.pos0.len();
    let data = Tensor::from_fn(n, 7, |i, c| match c {
        0..=2 => t.pos0[i][c],
        3..=5 => t.vel0[i][c - 3],
        _ => t.ell[i],
    });
    Ok(Graph {
        positions: t.pos0.clone(),
        node_features: FieldBatch::new(input_rep(group)?, data)?,
        node_attributes: None,
        edges: fully_connected(n),
        edge_features: None,
    })
}

fn displacement(trajs: &[&Trajectory]) -> Tensor {
    let rows: Vec<f64> = trajs
        .iter()
        .flat_map(|t| t.pos0.iter().zip(&t.pos1).flat_map(|(a, b)| (0..3).map(move |c| b[c] - a[c])))
        .collect();
    let n = rows.len() / 3;
    Tensor::from_vec(n, 3, rows).expect("three columns")
}

/// Trained model with everything needed to rebuild it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedModel {
    pub format_version: u32,
    pub group: GroupId,
    pub system: SpringSystem,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub params: ParamStore,
}

impl SavedModel {
    pub fn build(&self) -> Result<(Model, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Model::new(&mut store, self.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        store.load(&self.params)?;
        Ok((model, store))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub format_version: u32,
    pub group: GroupId,
    pub stiffness: f64,
    pub test_mse: f64,
    pub val_mse: f64,
    pub zero_motion_mse: f64,
    /// Mean training loss per epoch.
    pub train_curve: Vec<f64>,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Mean squared error of predicted final positions, in eval mode.
pub fn evaluate(model: &Model, store: &ParamStore, group: GroupId, trajs: &[Trajectory], batch_size: usize) -> Result<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for chunk in trajs.chunks(batch_size.max(1)) {
        let refs: Vec<&Trajectory> = chunk.iter().collect();
        let graphs = chunk.iter().map(|t| to_graph(group, t)).collect::<Result<Vec<_>>>()?;
        let batch = Batch::new(&graphs.iter().collect::<Vec<_>>())?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store, Mode::Eval);
        let y = model.forward(&mut ctx, &batch)?;
        let pred = ctx.tape.value(y);
        let target = displacement(&refs);
        for (p, t) in pred.data().iter().zip(target.data()) {
            s += (p - t).powi(2);
        }
        n += target.len();
    }
    Ok(s / n.max(1) as f64)
}

pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
    pub metrics: Metrics,
}

impl Trained {
    pub fn saved(&self, system: &SpringSystem) -> SavedModel {
        SavedModel {
            format_version: FORMAT_VERSION,
            group: self.metrics.group,
            system: system.clone(),
            train: self.metrics.config.clone(),
            model: self.model.config().clone(),
            params: self.store.clone(),
        }
    }
}

/// Adam on MSE of the residual displacement. `lr` halves every
/// `lr_halve_every` epochs.
pub fn train(group: GroupId, system: &SpringSystem, data: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(Error::config("batch size and learning rate must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, model_config(group, cfg)?, &mut rng)?;
    model.zero_readout(&mut store);
    let graphs = data.train.iter().map(|t| to_graph(group, t)).collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        if cfg.lr_halve_every > 0 {
            adam.lr = cfg.lr * 0.5f64.powi((epoch / cfg.lr_halve_every) as i32);
        }
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let fail = |reason: String| Error::Training { seed: cfg.seed, step, reason };
            let batch = Batch::new(&idx.iter().map(|&i| &graphs[i]).collect::<Vec<_>>())?;
            let target = displacement(&idx.iter().map(|&i| &data.train[i]).collect::<Vec<_>>());
            let n = target.len() as f64;
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, &store, Mode::Train);
            let (loss, grads, updates) = (|| {
                let y = model.forward(&mut ctx, &batch)?;
                let t = ctx.constant(target);
                let d = ctx.tape.sub(y, t)?;
                let sq = ctx.tape.mul(d, d)?;
                let s = ctx.tape.sum(sq)?;
                let loss = ctx.tape.scale(s, 1.0 / n)?;
                let g = ctx.tape.backward(loss)?;
                let grads = ctx.param_grads(&g);
                Ok::<_, Error>((ctx.tape.value(loss).item()?, grads, ctx.take_updates()))
            })()
            .map_err(|e| fail(e.to_string()))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(fail("non-finite loss or gradient".into()));
            }
            adam.step(&mut store, &grads)?;
            for (id, v) in updates {
                store.set_buffer(id, &v)?;
            }
            total += loss * idx.len() as f64;
            count += idx.len();
            step += 1;
        }
        curve.push(total / count as f64);
    }
    let metrics = Metrics {
        format_version: FORMAT_VERSION,
        group,
        stiffness: system.plane_stiffness,
        test_mse: evaluate(&model, &store, group, &data.test, cfg.batch_size)?,
        val_mse: evaluate(&model, &store, group, &data.val, cfg.batch_size)?,
        zero_motion_mse: zero_motion_mse(&data.test),
        train_curve: curve,
        seed: cfg.seed,
        config: cfg.clone(),
    };
    Ok(Trained { model, store, metrics })
}

/// One model per (stiffness, group, seed), each stiffness with its own dataset.
pub fn run_experiment(
    groups: &[GroupId],
    stiffnesses: &[f64],
    seeds: &[u64],
    sizes: [usize; 3],
    data_seed: u64,
    cfg: &TrainConfig,
) -> Result<Vec<Metrics>> {
    let mut out = Vec::new();
    for &k in stiffnesses {
        let system = SpringSystem::with_stiffness(k);
        let data = Dataset::generate(&system, sizes[0], sizes[1], sizes[2], data_seed)?;
        for &group in groups {
            for &seed in seeds {
                let cfg = TrainConfig { seed, ..cfg.clone() };
                out.push(train(group, &system, &data, &cfg)?.metrics);
            }
        }
    }
    Ok(out)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forces_vanish_at_rest() {
        let s = SpringSystem::default();
        let f = s.forces(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]], &[0.0, 0.0]);
        assert!(f.iter().flatten().all(|&x| x == 0.0));
        let s = SpringSystem::with_stiffness(5.0);
        assert_eq!(s.forces(&[[0.3, -0.2, 0.7]], &[0.7]), vec![[0.0; 3]]);
    }

    #[test]
    fn fixed_point_stays_put() {
        let s = SpringSystem { n_particles: 1, ..SpringSystem::with_stiffness(10.0) };
        let (p, _) = s.simulate(&[[0.4, -1.0, 0.9]], &[[0.0; 3]], &[0.9]).unwrap();
        assert!((p[0][0] - 0.4).abs() < 1e-10 && (p[0][2] - 0.9).abs() < 1e-10);
    }

    #[test]
    fn divergence_names_step() {
        let s = SpringSystem { dt: 1.0, n_steps: 5000, ..SpringSystem::with_stiffness(1e6) };
        match s.simulate(&[[0.0, 0.0, 1.0]], &[[0.0; 3]], &[0.0]) {
            Err(Error::Divergence { step }) => assert!(step > 0 && step <= 5000),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn dataset_is_seeded() {
        let s = SpringSystem { n_steps: 10, ..SpringSystem::default() };
        let a = Dataset::generate(&s, 3, 1, 1, 7).unwrap();
        let b = Dataset::generate(&s, 3, 1, 1, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Dataset::generate(&s, 3, 1, 1, 8).unwrap());
        assert!(Dataset::generate(&s, 0, 1, 1, 7).is_err());
    }

    #[test]
    fn median_of_three() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
    }
}
