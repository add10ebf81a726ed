//! Rectified-flow paths, the velocity-matching objective and explicit Euler
//! integration.
//!
//! Time runs from `t = 0` (prior noise) to `t = 1` (data). Generation
//! integrates forward; inversion integrates the same ODE backwards with
//! negative steps.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::solver::{self, SolverConfig};

/// A latent point: `tokens × channels`, row-major.
pub type Latent = Array2<f64>;

/// Slack allowed when a step lands marginally outside `[0, 1]`.
pub const TIME_TOLERANCE: f64 = 1e-9;

/// Something that produces `dz/dt` at `(z, t)` under a conditioning signal.
///
/// Implementations must be pure: the same inputs give the same output.
pub trait VelocityField {
    type Cond: ?Sized;

    fn velocity(&self, z: &Latent, t: f64, cond: &Self::Cond) -> Result<Latent>;
}

/// Adapts a closure `(z, t) -> v` into an unconditioned [`VelocityField`].
pub struct FnField<F>(pub F);

impl<F> VelocityField for FnField<F>
where
    F: Fn(&Latent, f64) -> Latent,
{
    type Cond = ();

    fn velocity(&self, z: &Latent, t: f64, _cond: &()) -> Result<Latent> {
        Ok((self.0)(z, t))
    }
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    type Cond = T::Cond;

    fn velocity(&self, z: &Latent, t: f64, cond: &Self::Cond) -> Result<Latent> {
        (**self).velocity(z, t, cond)
    }
}

/// Scalar coefficient pair `(alpha_t, beta_t)` defining `z_t = alpha_t z0 + beta_t z1`.
#[derive(Clone, Copy, Debug)]
pub enum Schedule {
    /// `alpha = 1 - t`, `beta = t`.
    Linear,
    Custom(CustomSchedule),
}

#[derive(Clone, Copy, Debug)]
pub struct CustomSchedule {
    alpha: fn(f64) -> f64,
    beta: fn(f64) -> f64,
    alpha_dot: fn(f64) -> f64,
    beta_dot: fn(f64) -> f64,
}

impl Schedule {
    /// Builds a custom schedule from its coefficient functions and their time
    /// derivatives. Endpoint constraints are checked to `1e-12`.
    pub fn custom(
        alpha: fn(f64) -> f64,
        beta: fn(f64) -> f64,
        alpha_dot: fn(f64) -> f64,
        beta_dot: fn(f64) -> f64,
    ) -> Result<Self> {
        let ok = |x: f64, want: f64| (x - want).abs() <= 1e-12;
        if !(ok(alpha(0.0), 1.0) && ok(beta(0.0), 0.0) && ok(alpha(1.0), 0.0) && ok(beta(1.0), 1.0))
        {
            return Err(Error::arg(
                "schedule must satisfy alpha(0)=1, beta(0)=0, alpha(1)=0, beta(1)=1",
            ));
        }
        Ok(Schedule::Custom(CustomSchedule {
            alpha,
            beta,
            alpha_dot,
            beta_dot,
        }))
    }

    pub fn coefficients(&self, t: f64) -> (f64, f64) {
        match self {
            Schedule::Linear => (1.0 - t, t),
            Schedule::Custom(c) => (
                if t == 0.0 { 1.0 } else if t == 1.0 { 0.0 } else { (c.alpha)(t) },
                if t == 0.0 { 0.0 } else if t == 1.0 { 1.0 } else { (c.beta)(t) },
            ),
        }
    }

    pub fn derivatives(&self, t: f64) -> (f64, f64) {
        match self {
            Schedule::Linear => (-1.0, 1.0),
            Schedule::Custom(c) => ((c.alpha_dot)(t), (c.beta_dot)(t)),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Schedule::Linear)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub z: Latent,
    pub t: f64,
}

impl FlowState {
    pub fn new(z: Latent, t: f64) -> Result<Self> {
        check_time(t)?;
        if !all_finite(&z) {
            return Err(Error::Numeric { step: 0 });
        }
        Ok(Self { z, t })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Noise to data, `0 -> 1`.
    Forward,
    /// Data to noise, `1 -> 0`.
    Reverse,
}

/// Strictly monotone partition of `[0, 1]`, traversed in either direction.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(steps: usize, direction: Direction) -> Result<Self> {
        if steps == 0 {
            return Err(Error::arg("time grid needs at least one step"));
        }
        let k = steps as f64;
        let times = (0..=steps)
            .map(|i| match direction {
                Direction::Forward => i as f64 / k,
                Direction::Reverse => (steps - i) as f64 / k,
            })
            .collect();
        Ok(Self { times })
    }

    /// Custom partition. Must start and end at `0`/`1` (either order) and be
    /// strictly monotone.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::arg("time grid needs at least one step"));
        }
        let (first, last) = (times[0], times[times.len() - 1]);
        let endpoints_ok = (first == 0.0 && last == 1.0) || (first == 1.0 && last == 0.0);
        if !endpoints_ok {
            return Err(Error::arg("time grid must span exactly [0, 1]"));
        }
        let increasing = first < last;
        let monotone = times
            .windows(2)
            .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
        if !monotone {
            return Err(Error::arg("time grid must be strictly monotone"));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn direction(&self) -> Direction {
        if self.times[0] < self.times[1] {
            Direction::Forward
        } else {
            Direction::Reverse
        }
    }

    /// Signed step sizes `t_{i+1} - t_i`.
    pub fn step_sizes(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    /// Same partition traversed in the opposite direction.
    pub fn mirrored(&self) -> Self {
        let mut times = self.times.clone();
        times.reverse();
        Self { times }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(-TIME_TOLERANCE..=1.0 + TIME_TOLERANCE).contains(&t) {
        return Err(Error::Range(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Validates `t` and snaps values within tolerance onto `[0, 1]`.
pub(crate) fn clamp_time(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(t.clamp(0.0, 1.0))
}

pub(crate) fn all_finite(z: &Latent) -> bool {
    z.iter().all(|x| x.is_finite())
}

fn same_shape(a: &Latent, b: &Latent) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `z_t = alpha_t z0 + beta_t z1`. Exact at both endpoints.
pub fn interpolate(z0: &Latent, z1: &Latent, t: f64, schedule: &Schedule) -> Result<Latent> {
    same_shape(z0, z1)?;
    check_time(t)?;
    if t == 0.0 {
        return Ok(z0.clone());
    }
    if t == 1.0 {
        return Ok(z1.clone());
    }
    let (a, b) = schedule.coefficients(t);
    Ok(z0 * a + z1 * b)
}

/// Target velocity `d z_t / dt = alpha'_t z0 + beta'_t z1`.
pub fn path_velocity(z0: &Latent, z1: &Latent, t: f64, schedule: &Schedule) -> Result<Latent> {
    same_shape(z0, z1)?;
    check_time(t)?;
    if schedule.is_linear() {
        return Ok(z1 - z0);
    }
    let (da, db) = schedule.derivatives(t);
    Ok(z0 * da + z1 * db)
}

/// One training example for the velocity-matching objective.
#[derive(Clone, Debug)]
pub struct PathSample {
    pub z0: Latent,
    pub z1: Latent,
    pub t: f64,
}

/// Mean over the batch of the per-element squared error between the field's
/// velocity at `z_t` and the path velocity.
pub fn velocity_matching_loss<F: VelocityField>(
    field: &F,
    batch: &[PathSample],
    schedule: &Schedule,
    cond: &F::Cond,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::arg("velocity-matching loss needs a nonempty batch"));
    }
    let per_item = batch
        .iter()
        .map(|s| {
            let zt = interpolate(&s.z0, &s.z1, s.t, schedule)?;
            let target = path_velocity(&s.z0, &s.z1, s.t, schedule)?;
            let v = field.velocity(&zt, s.t, cond)?;
            same_shape(&v, &target)?;
            let sq: Vec<f64> = v
                .iter()
                .zip(target.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .collect();
            Ok(pairwise_sum(&sq) / sq.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&per_item) / per_item.len() as f64)
}

/// Summation with a fixed binary-tree order, so results do not depend on how
/// work was split.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// `z' = z + h v(z, t)`, `t' = t + h`.
pub fn euler_step<F: VelocityField>(
    field: &F,
    state: &FlowState,
    h: f64,
    cond: &F::Cond,
) -> Result<FlowState> {
    let t_next = clamp_time(state.t + h)?;
    if h == 0.0 {
        return Ok(state.clone());
    }
    let v = field.velocity(&state.z, state.t, cond)?;
    same_shape(&v, &state.z)?;
    Ok(FlowState {
        z: euler_update(&state.z, &v, h),
        t: t_next,
    })
}

pub(crate) fn euler_update(z: &Latent, v: &Latent, h: f64) -> Latent {
    let mut out = z.clone();
    out.zip_mut_with(v, |a, &b| *a += h * b);
    out
}

/// Integrates over every interval of `grid`, returning `K + 1` states.
pub fn integrate<F: VelocityField>(
    field: &F,
    initial: &FlowState,
    grid: &TimeGrid,
    stepper: &SolverConfig,
    cond: &F::Cond,
) -> Result<Vec<FlowState>> {
    if (initial.t - grid.times()[0]).abs() > TIME_TOLERANCE {
        return Err(Error::arg(format!(
            "initial time {} does not match grid start {}",
            initial.t,
            grid.times()[0]
        )));
    }
    let mut trajectory = Vec::with_capacity(grid.steps() + 1);
    trajectory.push(initial.clone());
    for (i, w) in grid.times().windows(2).enumerate() {
        let current = &trajectory[i];
        let mut next = solver::step(field, current, w[1] - w[0], stepper, cond)?;
        if !all_finite(&next.z) {
            return Err(Error::Numeric { step: i });
        }
        // Land exactly on the grid node rather than on an accumulated sum.
        next.t = w[1];
        trajectory.push(next);
    }
    Ok(trajectory)
}
