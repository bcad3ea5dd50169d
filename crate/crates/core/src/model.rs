//! Action spaces, bandit instances and the two reward-generation mechanisms.
//!
//! A [`RewardModel`] maps an action index and a [`BanditInstance`] to an
//! expected reward. The linear-canonical model uses `mu_a = <a, theta>` with
//! `theta ~ N(0, I)`. The kernel-sampled model stores a Cholesky factor `L` of
//! a kernel matrix over a 1-D grid; an instance carries a latent standard
//! normal vector `z` and the outcome function is `f = L z`, so
//! `f ~ N(0, K + jitter I)`.
//!
//! Instances are drawn from an [`InstanceDistribution`], which is a standard
//! normal by default and a weighted finite support for hand-built fixtures.

use std::io::Write;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Metric, Partition};

/// Seed of the dedicated RNG that fixes the sphere-cluster center directions.
///
/// Centers are `normalize(g_k)` for `g_k` the k-th standard normal vector
/// drawn from `ChaCha8Rng::seed_from_u64(SPHERE_CENTER_SEED)`.
pub const SPHERE_CENTER_SEED: u64 = 20_250_501;

/// Where an action space came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Grid { lo: f64, hi: f64, count: usize },
    SphereClusters { centers: Vec<Vec<f64>>, spread: f64 },
    Orthonormal(usize),
    Explicit,
}

/// A finite, indexed set of action vectors in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    actions: Vec<Vec<f64>>,
    dim: usize,
    labels: Option<Vec<String>>,
    provenance: Provenance,
}

impl ActionSpace {
    pub fn new(actions: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        let dim = actions
            .first()
            .map(Vec::len)
            .ok_or_else(|| invalid("action space must contain at least one action"))?;
        if dim == 0 {
            return Err(invalid("action dimension must be at least 1"));
        }
        if let Some(bad) = actions.iter().find(|a| a.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if actions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("action coordinates must be finite"));
        }
        Ok(Self {
            actions,
            dim,
            labels: None,
            provenance,
        })
    }

    pub fn explicit(actions: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(actions, Provenance::Explicit)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.actions.len() {
            return Err(invalid(format!(
                "{} labels for {} actions",
                labels.len(),
                self.actions.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn action(&self, index: usize) -> Result<&[f64]> {
        self.actions
            .get(index)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index,
                len: self.actions.len(),
            })
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Returns a copy with every action translated by `shift`.
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: shift.len(),
            });
        }
        let actions = self
            .actions
            .iter()
            .map(|a| a.iter().zip(shift).map(|(x, s)| x + s).collect())
            .collect();
        Ok(Self {
            actions,
            dim: self.dim,
            labels: self.labels.clone(),
            provenance: Provenance::Explicit,
        })
    }

    /// Writes `idx,x0,x1,...` followed by one row per action.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write_matrix_csv(&mut out, self.dim, self.actions.iter().map(Vec::as_slice))
    }
}

impl Metric for ActionSpace {
    fn len(&self) -> usize {
        self.actions.len()
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean(&self.actions[i], &self.actions[j])
    }
}

fn write_matrix_csv<'a, W: Write>(
    out: &mut W,
    cols: usize,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let mut header = String::from("idx");
    for c in 0..cols {
        header.push_str(&format!(",x{c}"));
    }
    writeln!(out, "{header}")?;
    for (i, row) in rows.enumerate() {
        write!(out, "{i}")?;
        for x in row {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One bandit instance. For linear models this is `theta`; for kernel models
/// it is the latent standard-normal vector `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditInstance {
    pub theta: Vec<f64>,
}

impl BanditInstance {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Draws `theta ~ N(0, I_n)`.
pub fn sample_theta<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> BanditInstance {
    let theta = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    BanditInstance { theta }
}

/// Covariance kernel over grid inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Rbf { length_scale: f64 },
    /// Non-stationary kernel with `l(a) = 0.1 + 0.9 exp(-|a|^2)`.
    Gibbs,
}

impl KernelSpec {
    pub const GIBBS_BASE: f64 = 0.1;
    pub const GIBBS_AMP: f64 = 0.9;

    pub fn rbf(length_scale: f64) -> Result<Self> {
        let spec = KernelSpec::Rbf { length_scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { length_scale } if !(length_scale > 0.0 && length_scale.is_finite()) => {
                Err(Error::NonPositiveLengthScale(length_scale))
            }
            _ => Ok(()),
        }
    }

    pub fn gibbs_length_scale(a: &[f64]) -> f64 {
        let sq: f64 = a.iter().map(|x| x * x).sum();
        Self::GIBBS_BASE + Self::GIBBS_AMP * (-sq).exp()
    }

    pub fn value(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.validate()?;
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        Ok(self.value_unchecked(a, b))
    }

    fn value_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq = {
            let d = euclidean(a, b);
            d * d
        };
        match *self {
            KernelSpec::Rbf { length_scale } => (-sq / (2.0 * length_scale * length_scale)).exp(),
            KernelSpec::Gibbs => {
                let la = Self::gibbs_length_scale(a);
                let lb = Self::gibbs_length_scale(b);
                let denom = la * la + lb * lb;
                (2.0 * la * lb / denom).sqrt() * (-sq / denom).exp()
            }
        }
    }
}

/// Packed row-major lower-triangular matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[Self::offset(i) + j]
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[Self::offset(i)..Self::offset(i + 1)]
    }

    /// `out = L z`.
    pub fn mul_vec_into(&self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.n).map(|i| dot(self.row(i), &z[..=i])));
    }

    /// `(L Lᵀ)[i][j]`.
    pub fn gram(&self, i: usize, j: usize) -> f64 {
        let k = i.min(j);
        dot(&self.row(i)[..=k], &self.row(j)[..=k])
    }
}

/// Outcome functions sampled from a Gaussian process on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    grid: ActionSpace,
    kernel: KernelSpec,
    factor: LowerTriangular,
    jitter: f64,
}

impl KernelModel {
    pub const MAX_JITTER_ESCALATIONS: usize = 8;
    pub const INITIAL_RELATIVE_JITTER: f64 = 1e-10;

    pub fn grid(&self) -> &ActionSpace {
        &self.grid
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn factor(&self) -> &LowerTriangular {
        &self.factor
    }

    /// Diagonal jitter that was added before factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn kernel_entry(&self, i: usize, j: usize) -> f64 {
        let g = self.grid.actions();
        self.kernel.value_unchecked(&g[i], &g[j])
    }

    /// The un-jittered kernel matrix, row-major.
    pub fn kernel_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.kernel_entry(i, j)).collect())
            .collect()
    }

    pub fn write_kernel_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let matrix = self.kernel_matrix();
        write_matrix_csv(&mut out, matrix.len(), matrix.iter().map(Vec::as_slice))
    }
}

/// Assembles the kernel matrix on `grid` and stores a jittered Cholesky factor.
pub fn build_kernel_model(grid: ActionSpace, kernel: KernelSpec) -> Result<KernelModel> {
    kernel.validate()?;
    let pts = grid.actions();
    for i in 0..pts.len() {
        for j in 0..i {
            if pts[i] == pts[j] {
                return Err(invalid(format!("grid points {j} and {i} coincide")));
            }
        }
    }
    let n = pts.len();
    let base = DMatrix::from_fn(n, n, |i, j| kernel.value_unchecked(&pts[i], &pts[j]));
    let mean_diag = base.diagonal().mean();
    let mut jitter = KernelModel::INITIAL_RELATIVE_JITTER * mean_diag;
    for escalation in 0..=KernelModel::MAX_JITTER_ESCALATIONS {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            let l = chol.l();
            let mut data = Vec::with_capacity(n * (n + 1) / 2);
            for i in 0..n {
                data.extend((0..=i).map(|j| l[(i, j)]));
            }
            if data.iter().all(|x| x.is_finite()) {
                return Ok(KernelModel {
                    grid,
                    kernel,
                    factor: LowerTriangular { n, data },
                    jitter,
                });
            }
        }
        if escalation < KernelModel::MAX_JITTER_ESCALATIONS {
            jitter *= 10.0;
        }
    }
    Err(Error::Factorization {
        escalations: KernelModel::MAX_JITTER_ESCALATIONS,
        jitter,
    })
}

/// Maps `(action, instance)` to an expected reward.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    LinearCanonical(ActionSpace),
    KernelSampled(KernelModel),
}

impl RewardModel {
    pub fn space(&self) -> &ActionSpace {
        match self {
            RewardModel::LinearCanonical(space) => space,
            RewardModel::KernelSampled(model) => model.grid(),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.space().len()
    }

    /// Dimension of the instance vector: `n` for linear models, the grid size
    /// for kernel models.
    pub fn latent_dim(&self) -> usize {
        match self {
            RewardModel::LinearCanonical(space) => space.dim(),
            RewardModel::KernelSampled(model) => model.grid().len(),
        }
    }

    fn check_instance(&self, instance: &BanditInstance) -> Result<()> {
        if instance.dim() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                got: instance.dim(),
            });
        }
        Ok(())
    }

    pub fn expected_reward(&self, index: usize, instance: &BanditInstance) -> Result<f64> {
        self.check_instance(instance)?;
        let len = self.num_actions();
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        Ok(self.reward_at(index, instance))
    }

    /// Single reward without bounds or dimension checks.
    pub(crate) fn reward_at(&self, index: usize, instance: &BanditInstance) -> f64 {
        match self {
            RewardModel::LinearCanonical(space) => dot(&space.actions()[index], &instance.theta),
            RewardModel::KernelSampled(model) => {
                dot(model.factor().row(index), &instance.theta[..=index])
            }
        }
    }

    /// Fills `out` with the expected reward of every action.
    ///
    /// # Panics
    /// If the instance dimension does not match [`Self::latent_dim`].
    pub fn rewards_into(&self, instance: &BanditInstance, out: &mut Vec<f64>) {
        assert_eq!(instance.dim(), self.latent_dim(), "instance dimension");
        match self {
            RewardModel::LinearCanonical(space) => {
                out.clear();
                out.extend(space.actions().iter().map(|a| dot(a, &instance.theta)));
            }
            RewardModel::KernelSampled(model) => model.factor().mul_vec_into(&instance.theta, out),
        }
    }

    pub fn rewards(&self, instance: &BanditInstance) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_actions());
        self.rewards_into(instance, &mut out);
        out
    }
}

/// The L2 distance induced by the reward process: Euclidean for linear models,
/// `sqrt(k(a,a) + k(b,b) - 2 k(a,b))` for kernel models.
impl Metric for RewardModel {
    fn len(&self) -> usize {
        self.num_actions()
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            RewardModel::LinearCanonical(space) => space.distance(i, j),
            RewardModel::KernelSampled(model) => {
                let v = model.kernel_entry(i, i) + model.kernel_entry(j, j)
                    - 2.0 * model.kernel_entry(i, j);
                v.max(0.0).sqrt()
            }
        }
    }
}

/// Distribution `P` over bandit instances.
#[derive(Debug, Clone)]
pub enum InstanceDistribution {
    StandardNormal { dim: usize },
    Discrete(DiscreteInstances),
}

/// Weighted finite support of instances.
#[derive(Debug, Clone)]
pub struct DiscreteInstances {
    atoms: Vec<BanditInstance>,
    probabilities: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl DiscreteInstances {
    pub fn new(atoms: Vec<BanditInstance>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(invalid("discrete distribution needs one weight per atom"));
        }
        let dim = atoms[0].dim();
        if let Some(bad) = atoms.iter().find(|a| a.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        let index = WeightedIndex::new(&weights).map_err(|e| invalid(e.to_string()))?;
        let total: f64 = weights.iter().sum();
        let probabilities = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            atoms,
            probabilities,
            index,
        })
    }

    pub fn uniform(atoms: Vec<BanditInstance>) -> Result<Self> {
        let weights = vec![1.0; atoms.len()];
        Self::new(atoms, weights)
    }

    pub fn atoms(&self) -> &[BanditInstance] {
        &self.atoms
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

impl InstanceDistribution {
    pub fn dim(&self) -> usize {
        match self {
            InstanceDistribution::StandardNormal { dim } => *dim,
            InstanceDistribution::Discrete(d) => d.atoms[0].dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BanditInstance {
        match self {
            InstanceDistribution::StandardNormal { dim } => sample_theta(*dim, rng),
            InstanceDistribution::Discrete(d) => d.atoms[d.index.sample(rng)].clone(),
        }
    }

    /// Atoms and probabilities when the support is finite.
    pub fn finite_support(&self) -> Option<(&[BanditInstance], &[f64])> {
        match self {
            InstanceDistribution::StandardNormal { .. } => None,
            InstanceDistribution::Discrete(d) => Some((&d.atoms, &d.probabilities)),
        }
    }
}

/// A reward model paired with the distribution its instances are drawn from.
#[derive(Debug, Clone)]
pub struct BanditFamily {
    pub model: RewardModel,
    pub instances: InstanceDistribution,
}

impl BanditFamily {
    /// Standard-normal instances of the model's latent dimension.
    pub fn gaussian(model: RewardModel) -> Self {
        let dim = model.latent_dim();
        Self {
            model,
            instances: InstanceDistribution::StandardNormal { dim },
        }
    }

    pub fn with_instances(model: RewardModel, instances: InstanceDistribution) -> Result<Self> {
        if instances.dim() != model.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.latent_dim(),
                got: instances.dim(),
            });
        }
        Ok(Self { model, instances })
    }

    pub fn num_actions(&self) -> usize {
        self.model.num_actions()
    }

    pub fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> BanditInstance {
        self.instances.sample(rng)
    }

    /// Draws a fresh instance and writes every action's expected reward.
    pub fn sample_rewards_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        let instance = self.instances.sample(rng);
        self.model.rewards_into(&instance, out);
    }
}

/// The three-action fixture with two equally likely instances
/// `theta_1 = [1, 0]` and `theta_2 = [0, 1]`.
pub fn example1_family() -> BanditFamily {
    let space = ActionSpace::explicit(vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![-0.1, 1.0]])
        .expect("valid fixture")
        .with_labels(vec!["a1".into(), "a2".into(), "a3".into()])
        .expect("three labels");
    let atoms = vec![
        BanditInstance::new(vec![1.0, 0.0]),
        BanditInstance::new(vec![0.0, 1.0]),
    ];
    let instances =
        InstanceDistribution::Discrete(DiscreteInstances::uniform(atoms).expect("valid atoms"));
    BanditFamily::with_instances(RewardModel::LinearCanonical(space), instances)
        .expect("matching dimension")
}

/// Evenly spaced 1-D grid including both endpoints.
pub fn make_grid_space(lo: f64, hi: f64, count: usize) -> Result<ActionSpace> {
    if count < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(invalid(format!(
            "degenerate grid range [{lo}, {hi}] with {count} points"
        )));
    }
    let step = (hi - lo) / (count - 1) as f64;
    let actions = (0..count)
        .map(|i| {
            if i == count - 1 {
                vec![hi]
            } else {
                vec![lo + step * i as f64]
            }
        })
        .collect();
    ActionSpace::new(actions, Provenance::Grid { lo, hi, count })
}

/// The `n` standard basis vectors of `R^n`.
pub fn make_orthonormal_space(n: usize) -> Result<ActionSpace> {
    if n == 0 {
        return Err(invalid("orthonormal space needs n >= 1"));
    }
    let actions = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    ActionSpace::new(actions, Provenance::Orthonormal(n))
}

/// Fixed unit-norm center directions derived from [`SPHERE_CENTER_SEED`].
pub fn sphere_centers(num_centers: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(SPHERE_CENTER_SEED);
    (0..num_centers)
        .map(|_| normalized(sample_theta(dim, &mut rng).theta))
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Points on the unit sphere clustered around fixed centers: each point is
/// `normalize(center + spread * g)` with `g ~ N(0, I)`.
///
/// The returned partition holds the true labels; each cluster's reference
/// point is the member nearest its center.
pub fn make_sphere_clusters<R: Rng + ?Sized>(
    num_centers: usize,
    points_per: usize,
    spread: f64,
    dim: usize,
    rng: &mut R,
) -> Result<(ActionSpace, Partition)> {
    if !(spread > 0.0) || num_centers == 0 || points_per == 0 || dim == 0 {
        return Err(invalid(
            "sphere clusters need spread > 0 and positive sizes",
        ));
    }
    let centers = sphere_centers(num_centers, dim);
    let mut actions = Vec::with_capacity(num_centers * points_per);
    let mut clusters = Vec::with_capacity(num_centers);
    let mut references = Vec::with_capacity(num_centers);
    for center in &centers {
        let start = actions.len();
        let mut nearest = (start, f64::INFINITY);
        for _ in 0..points_per {
            let noise = sample_theta(dim, rng).theta;
            let p = normalized(center.iter().zip(&noise).map(|(c, g)| c + spread * g).collect());
            let d = euclidean(&p, center);
            if d < nearest.1 {
                nearest = (actions.len(), d);
            }
            actions.push(p);
        }
        clusters.push((start..actions.len()).collect::<Vec<_>>());
        references.push(nearest.0);
    }
    let space = ActionSpace::new(
        actions,
        Provenance::SphereClusters {
            centers,
            spread,
        },
    )?;
    let partition = Partition::new(clusters, Some(references), &space)?;
    Ok((space, partition))
}
