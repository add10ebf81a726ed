//! Second-order Taylor stepping for rectified-flow ODEs, inversion,
//! reconstruction and empirical convergence-order measurement.
//!
//! The second-order step is
//!
//! ```text
//! z' = z + h v(z, t) + h²/2 · dv/dt(z, t)
//! ```
//!
//! where `dv/dt` is a finite difference of two field evaluations. The
//! perturbed state for the difference is one Euler microstep of size `Δt`.
//! Inversion and generation use the same update with the sign of `h`
//! selecting the direction.

use crate::error::{Error, Result};
use crate::flow::{
    self, all_finite, clamp_time, euler_update, Direction, FlowState, Latent, TimeGrid,
    VelocityField, TIME_TOLERANCE,
};

/// Default finite-difference perturbation.
pub const DEFAULT_DELTA_T: f64 = 0.01;

/// Largest perturbation the solver accepts.
pub const MAX_DELTA_T: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Euler,
    Rf2,
}

impl std::str::FromStr for Order {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Order::Euler),
            "rf2" => Ok(Order::Rf2),
            other => Err(Error::arg(format!("unknown solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Order::Euler => "euler",
            Order::Rf2 => "rf2",
        })
    }
}

/// How the finite-difference perturbation is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FdStep {
    Fixed(f64),
    /// `Δt = ratio · |h|`; keeps the difference error below the truncation
    /// error when measuring convergence order.
    Relative(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub order: Order,
    pub fd_step: FdStep,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::rf2()
    }
}

impl SolverConfig {
    pub fn euler() -> Self {
        Self {
            order: Order::Euler,
            fd_step: FdStep::Fixed(DEFAULT_DELTA_T),
        }
    }

    pub fn rf2() -> Self {
        Self {
            order: Order::Rf2,
            fd_step: FdStep::Fixed(DEFAULT_DELTA_T),
        }
    }

    pub fn with_order(order: Order) -> Self {
        Self {
            order,
            ..Self::rf2()
        }
    }

    pub fn with_fd_step(mut self, fd_step: FdStep) -> Self {
        self.fd_step = fd_step;
        self
    }

    /// Perturbation used for a step of size `h`.
    pub fn delta_t(&self, h: f64) -> Result<f64> {
        let dt = match self.fd_step {
            FdStep::Fixed(dt) => dt,
            FdStep::Relative(r) => r * h.abs(),
        };
        if !(dt > 0.0 && dt <= MAX_DELTA_T) {
            return Err(Error::arg(format!(
                "finite-difference step {dt} outside (0, {MAX_DELTA_T}]"
            )));
        }
        Ok(dt)
    }

    /// Field evaluations per step.
    pub fn evaluations_per_step(&self) -> usize {
        match self.order {
            Order::Euler => 1,
            Order::Rf2 => 2,
        }
    }
}

/// Finite-difference estimate of `d/dt v(z(t), t)` along the flow.
pub fn estimate_time_derivative<F: VelocityField>(
    field: &F,
    state: &FlowState,
    dt: f64,
    cond: &F::Cond,
) -> Result<Latent> {
    let v0 = field.velocity(&state.z, state.t, cond)?;
    derivative_from(field, state, &v0, dt, cond)
}

/// As [`estimate_time_derivative`], reusing an already computed `v(z, t)`.
///
/// Uses a forward difference unless `t + dt` would leave `[0, 1]`, in which
/// case the backward difference is taken instead.
pub fn derivative_from<F: VelocityField>(
    field: &F,
    state: &FlowState,
    v0: &Latent,
    dt: f64,
    cond: &F::Cond,
) -> Result<Latent> {
    if !(dt > 0.0) {
        return Err(Error::arg(format!("finite-difference step must be positive, got {dt}")));
    }
    let forward = state.t + dt <= 1.0 + TIME_TOLERANCE;
    let signed = if forward { dt } else { -dt };
    let z_probe = euler_update(&state.z, v0, signed);
    let v1 = field.velocity(&z_probe, state.t + signed, cond)?;
    let mut d = if forward { v1 - v0 } else { v0 - &v1 };
    d.mapv_inplace(|x| x / dt);
    Ok(d)
}

/// One second-order step of signed size `h`.
pub fn rf_solver_step<F: VelocityField>(
    field: &F,
    state: &FlowState,
    h: f64,
    cfg: &SolverConfig,
    cond: &F::Cond,
) -> Result<FlowState> {
    let t_next = clamp_time(state.t + h)?;
    if h == 0.0 {
        return Ok(state.clone());
    }
    let dt = cfg.delta_t(h)?;
    let v0 = field.velocity(&state.z, state.t, cond)?;
    let d = derivative_from(field, state, &v0, dt, cond)?;
    Ok(FlowState {
        z: taylor_update(&state.z, &v0, &d, h),
        t: t_next,
    })
}

/// `z + h v + h²/2 d`, written so that `d = 0` reproduces the Euler update
/// bit for bit.
pub(crate) fn taylor_update(z: &Latent, v: &Latent, d: &Latent, h: f64) -> Latent {
    let mut out = euler_update(z, v, h);
    let c = 0.5 * h * h;
    out.zip_mut_with(d, |a, &b| *a += c * b);
    out
}

/// Dispatches to the stepper named by `cfg.order`.
pub fn step<F: VelocityField>(
    field: &F,
    state: &FlowState,
    h: f64,
    cfg: &SolverConfig,
    cond: &F::Cond,
) -> Result<FlowState> {
    match cfg.order {
        Order::Euler => flow::euler_step(field, state, h, cond),
        Order::Rf2 => rf_solver_step(field, state, h, cfg, cond),
    }
}

#[derive(Clone, Debug)]
pub struct InversionResult {
    /// Latent at `t = 0`.
    pub noise_latent: Latent,
    /// States from `t = 1` down to `t = 0`.
    pub trajectory: Vec<FlowState>,
    pub reconstruction_error: Option<f64>,
}

/// Integrates from the data latent at `t = 1` back to `t = 0`.
pub fn invert<F: VelocityField>(
    field: &F,
    data_latent: &Latent,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    cond: &F::Cond,
) -> Result<InversionResult> {
    if grid.direction() != Direction::Reverse {
        return Err(Error::arg("inversion needs a reverse (1 -> 0) time grid"));
    }
    let start = FlowState::new(data_latent.clone(), 1.0)?;
    let trajectory = flow::integrate(field, &start, grid, cfg, cond)?;
    Ok(InversionResult {
        noise_latent: trajectory.last().expect("nonempty trajectory").z.clone(),
        trajectory,
        reconstruction_error: None,
    })
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub latent: Latent,
    /// `‖recon − data‖₂ / ‖data‖₂`, or the absolute error when `relative` is false.
    pub error: f64,
    /// False when the data latent had zero norm.
    pub relative: bool,
    pub inversion: InversionResult,
}

/// Inverts and regenerates on the mirrored grid.
pub fn reconstruct<F: VelocityField>(
    field: &F,
    data_latent: &Latent,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    cond: &F::Cond,
) -> Result<Reconstruction> {
    let mut inversion = invert(field, data_latent, grid, cfg, cond)?;
    let start = FlowState::new(inversion.noise_latent.clone(), 0.0)?;
    let forward = flow::integrate(field, &start, &grid.mirrored(), cfg, cond)?;
    let latent = forward.last().expect("nonempty trajectory").z.clone();
    let (error, relative) = relative_l2(&latent, data_latent);
    inversion.reconstruction_error = Some(error);
    Ok(Reconstruction {
        latent,
        error,
        relative,
        inversion,
    })
}

/// `(‖a − b‖ / ‖b‖, true)`, or `(‖a − b‖, false)` when `b` is zero.
pub fn relative_l2(a: &Latent, b: &Latent) -> (f64, bool) {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        (diff, false)
    } else {
        (diff / norm, true)
    }
}

/// Errors below this are treated as round-off.
pub const SATURATION_ERROR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OrderEstimate {
    /// Least-squares slope of `ln(error)` against `ln(K)`, sign flipped.
    Slope(f64),
    /// Every error was at round-off level; no slope is meaningful.
    Saturated,
}

impl OrderEstimate {
    pub fn slope(&self) -> Option<f64> {
        match self {
            OrderEstimate::Slope(s) => Some(*s),
            OrderEstimate::Saturated => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub step_counts: Vec<usize>,
    pub euler_errors: Vec<f64>,
    pub rf2_errors: Vec<f64>,
    pub euler: OrderEstimate,
    pub rf2: OrderEstimate,
}

/// Measures global convergence order of both steppers on `[0, 1]`.
///
/// The global error for a given `K` is the largest max-norm deviation from
/// `exact(t)` over the grid nodes. On periodic fields the end-point error alone
/// can superconverge, so the whole trajectory is compared.
pub fn convergence_order<F: VelocityField>(
    field: &F,
    initial: &Latent,
    exact: &dyn Fn(f64) -> Latent,
    step_counts: &[usize],
    fd_step: FdStep,
    cond: &F::Cond,
) -> Result<ConvergenceReport> {
    if step_counts.len() < 3 {
        return Err(Error::arg("convergence order needs at least three step counts"));
    }
    if step_counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg("step counts must be strictly increasing"));
    }
    let global_error = |k: usize, cfg: &SolverConfig| -> Result<f64> {
        let grid = TimeGrid::uniform(k, Direction::Forward)?;
        let start = FlowState::new(initial.clone(), 0.0)?;
        let traj = flow::integrate(field, &start, &grid, cfg, cond)?;
        Ok(traj
            .iter()
            .map(|s| {
                let e = exact(s.t);
                s.z.iter()
                    .zip(e.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max))
    };
    let euler_cfg = SolverConfig::euler();
    let rf2_cfg = SolverConfig::rf2().with_fd_step(fd_step);
    let euler_errors = step_counts
        .iter()
        .map(|&k| global_error(k, &euler_cfg))
        .collect::<Result<Vec<_>>>()?;
    let rf2_errors = step_counts
        .iter()
        .map(|&k| global_error(k, &rf2_cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        euler: fit_order(step_counts, &euler_errors),
        rf2: fit_order(step_counts, &rf2_errors),
        step_counts: step_counts.to_vec(),
        euler_errors,
        rf2_errors,
    })
}

fn fit_order(step_counts: &[usize], errors: &[f64]) -> OrderEstimate {
    if errors.iter().all(|&e| e <= SATURATION_ERROR) {
        return OrderEstimate::Saturated;
    }
    let xs: Vec<f64> = step_counts.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|&e| e.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    OrderEstimate::Slope(-sxy / sxx)
}

/// Checks that a trajectory is finite, reporting the first bad step.
pub fn check_trajectory(trajectory: &[FlowState]) -> Result<()> {
    match trajectory.iter().position(|s| !all_finite(&s.z)) {
        Some(i) => Err(Error::Numeric { step: i.saturating_sub(1) }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{euler_step, integrate, FnField};
    use ndarray::array;
    use proptest::prelude::*;

    fn scalar(x: f64) -> Latent {
        array![[x]]
    }

    fn state(z: f64, t: f64) -> FlowState {
        FlowState::new(scalar(z), t).unwrap()
    }

    #[test]
    fn derivative_of_linear_in_time_field_is_exact() {
        let field = FnField(|_: &Latent, t: f64| scalar(t));
        for dt in [0.001, 0.01, 0.05] {
            let d = estimate_time_derivative(&field, &state(0.3, 0.2), dt, &()).unwrap();
            assert!((d[[0, 0]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_field_is_zero() {
        let field = FnField(|_: &Latent, _| array![[2.0, -1.0]]);
        let s = FlowState::new(array![[0.0, 0.0]], 0.5).unwrap();
        let d = estimate_time_derivative(&field, &s, 0.01, &()).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_difference_of_quadratic() {
        // (0.51² − 0.5²) / 0.01 = 1.01
        let field = FnField(|_: &Latent, t: f64| scalar(t * t));
        let d = estimate_time_derivative(&field, &state(0.0, 0.5), 0.01, &()).unwrap();
        assert!((d[[0, 0]] - 1.01).abs() < 1e-12);
    }

    #[test]
    fn backward_difference_at_upper_boundary() {
        // At t = 1 the probe goes to 0.99: (1 − 0.99²) / 0.01 = 1.99
        let field = FnField(|_: &Latent, t: f64| scalar(t * t));
        let d = estimate_time_derivative(&field, &state(0.0, 1.0), 0.01, &()).unwrap();
        assert!((d[[0, 0]] - 1.99).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_delta_is_rejected() {
        let field = FnField(|_: &Latent, t: f64| scalar(t));
        assert!(matches!(
            estimate_time_derivative(&field, &state(0.0, 0.0), 0.0, &()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn single_step_is_exact_for_linear_in_time_field() {
        // v = t from z = 0: 0 + 1·0 + ½·1²·1 = 0.5 = t²/2 at t = 1.
        let field = FnField(|_: &Latent, t: f64| scalar(t));
        let s = rf_solver_step(&field, &state(0.0, 0.0), 1.0, &SolverConfig::rf2(), &()).unwrap();
        assert!((s.z[[0, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(s.t, 1.0);
    }

    #[test]
    fn constant_field_matches_euler() {
        let field = FnField(|_: &Latent, _| array![[0.7, -2.0]]);
        let s = FlowState::new(array![[0.1, 0.2]], 0.25).unwrap();
        let a = rf_solver_step(&field, &s, 0.5, &SolverConfig::rf2(), &()).unwrap();
        let b = euler_step(&field, &s, 0.5, &()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_step_is_identity() {
        let field = FnField(|z: &Latent, t: f64| z.mapv(|x| x.sin() + t));
        let s = state(0.4, 0.6);
        assert_eq!(rf_solver_step(&field, &s, 0.0, &SolverConfig::rf2(), &()).unwrap(), s);
    }

    #[test]
    fn relative_fd_step_is_bounded() {
        let cfg = SolverConfig::rf2().with_fd_step(FdStep::Relative(0.5));
        assert!(cfg.delta_t(0.5).is_err());
        assert!((cfg.delta_t(-0.1).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn frozen_flow_inverts_to_itself() {
        let field = FnField(|z: &Latent, _| z.mapv(|_| 0.0));
        let data = array![[0.3, -1.0], [2.0, 0.5]];
        let grid = TimeGrid::uniform(7, Direction::Reverse).unwrap();
        for cfg in [SolverConfig::euler(), SolverConfig::rf2()] {
            let inv = invert(&field, &data, &grid, &cfg, &()).unwrap();
            assert_eq!(inv.noise_latent, data);
            let rec = reconstruct(&field, &data, &grid, &cfg, &()).unwrap();
            assert_eq!(rec.error, 0.0);
            assert!(rec.relative);
        }
    }

    #[test]
    fn invert_needs_reverse_grid() {
        let field = FnField(|z: &Latent, _| z.clone());
        let grid = TimeGrid::uniform(3, Direction::Forward).unwrap();
        assert!(invert(&field, &scalar(1.0), &grid, &SolverConfig::rf2(), &()).is_err());
    }

    #[test]
    fn inversion_trajectory_runs_from_one_to_zero() {
        let field = FnField(|z: &Latent, t: f64| z.mapv(|x| 0.1 * x * t));
        let grid = TimeGrid::uniform(5, Direction::Reverse).unwrap();
        let inv = invert(&field, &scalar(1.0), &grid, &SolverConfig::rf2(), &()).unwrap();
        let ts: Vec<f64> = inv.trajectory.iter().map(|s| s.t).collect();
        assert_eq!(ts.first(), Some(&1.0));
        assert_eq!(ts.last(), Some(&0.0));
        assert!(ts.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_norm_data_reports_absolute_error() {
        let field = FnField(|z: &Latent, t: f64| z.mapv(|_| t * t));
        let grid = TimeGrid::uniform(4, Direction::Reverse).unwrap();
        let rec = reconstruct(&field, &scalar(0.0), &grid, &SolverConfig::euler(), &()).unwrap();
        assert!(!rec.relative);
        assert!(rec.error > 0.0);
    }

    #[test]
    fn euler_round_trip_error_telescopes() {
        // For a z-independent field, inverting evaluates right nodes and
        // regenerating evaluates left nodes, so the round trip is off by
        // exactly h (v(1) − v(0)).
        let field = FnField(|_: &Latent, t: f64| scalar(t * t * 3.0));
        let k = 8;
        let grid = TimeGrid::uniform(k, Direction::Reverse).unwrap();
        let rec = reconstruct(&field, &scalar(2.0), &grid, &SolverConfig::euler(), &()).unwrap();
        let expected = (1.0 / k as f64) * 3.0 / 2.0;
        assert!((rec.error - expected).abs() < 1e-12);
    }

    #[test]
    fn convergence_needs_three_points() {
        let field = FnField(|z: &Latent, _| z.clone());
        let exact = |t: f64| scalar(t.exp());
        assert!(matches!(
            convergence_order(&field, &scalar(1.0), &exact, &[4, 8], FdStep::Relative(0.1), &()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn constant_field_saturates() {
        let field = FnField(|_: &Latent, _| scalar(0.5));
        let exact = |t: f64| scalar(1.0 + 0.5 * t);
        let r = convergence_order(&field, &scalar(1.0), &exact, &[4, 8, 16], FdStep::Relative(0.1), &())
            .unwrap();
        assert_eq!(r.euler, OrderEstimate::Saturated);
        assert_eq!(r.rf2, OrderEstimate::Saturated);
    }

    #[test]
    fn linear_in_time_field_is_exact_for_rf2_only() {
        let field = FnField(|_: &Latent, t: f64| scalar(2.0 - 3.0 * t));
        let exact = |t: f64| scalar(2.0 * t - 1.5 * t * t);
        let r = convergence_order(&field, &scalar(0.0), &exact, &[4, 8, 16, 32], FdStep::Fixed(0.01), &())
            .unwrap();
        assert_eq!(r.rf2, OrderEstimate::Saturated);
        let s = r.euler.slope().unwrap();
        assert!((s - 1.0).abs() < 0.05, "euler slope {s}");
    }

    #[test]
    fn orders_on_exponential_growth() {
        // dz/dt = z, exact e^t: smooth and z-dependent.
        let field = FnField(|z: &Latent, _| z.clone());
        let exact = |t: f64| scalar(t.exp());
        let r = convergence_order(
            &field,
            &scalar(1.0),
            &exact,
            &[8, 16, 32, 64, 128],
            FdStep::Relative(0.1),
            &(),
        )
        .unwrap();
        let (e, q) = (r.euler.slope().unwrap(), r.rf2.slope().unwrap());
        assert!((0.8..=1.2).contains(&e), "euler {e}");
        assert!((1.7..=2.3).contains(&q), "rf2 {q}");
    }

    proptest! {
        #[test]
        fn zero_derivative_reproduces_euler_bitwise(
            zs in prop::collection::vec(-10f64..10.0, 4),
            vs in prop::collection::vec(-10f64..10.0, 4),
            h in -1f64..1.0,
        ) {
            let z = Latent::from_shape_vec((2, 2), zs).unwrap();
            let v = Latent::from_shape_vec((2, 2), vs).unwrap();
            let zero = Latent::zeros((2, 2));
            let a = taylor_update(&z, &v, &zero, h);
            let b = euler_update(&z, &v, h);
            // Equal as floats; bit patterns can only differ in the sign of zero.
            prop_assert_eq!(a, b);
        }

        #[test]
        fn affine_in_time_flow_map_is_exact(a in -3f64..3.0, b in -3f64..3.0,
                                            z0 in -5f64..5.0, k in 1usize..20) {
            let field = FnField(move |_: &Latent, t: f64| scalar(a + b * t));
            let grid = TimeGrid::uniform(k, Direction::Forward).unwrap();
            let traj = integrate(&field, &state(z0, 0.0), &grid, &SolverConfig::rf2(), &()).unwrap();
            for s in &traj {
                let exact = z0 + a * s.t + 0.5 * b * s.t * s.t;
                prop_assert!((s.z[[0, 0]] - exact).abs() <= 1e-12);
            }
        }

        #[test]
        fn affine_in_time_round_trip_is_identity(a in -3f64..3.0, b in -3f64..3.0,
                                                 z in -5f64..5.0, k in 1usize..30) {
            let field = FnField(move |_: &Latent, t: f64| scalar(a + b * t));
            let grid = TimeGrid::uniform(k, Direction::Reverse).unwrap();
            let rec = reconstruct(&field, &scalar(z), &grid, &SolverConfig::rf2(), &()).unwrap();
            prop_assert!((rec.latent[[0, 0]] - z).abs() <= 1e-10);
        }

        #[test]
        fn constant_field_round_trip_is_identity_for_both(c in -3f64..3.0, z in -5f64..5.0,
                                                          k in 1usize..30) {
            let field = FnField(move |_: &Latent, _| scalar(c));
            let grid = TimeGrid::uniform(k, Direction::Reverse).unwrap();
            for cfg in [SolverConfig::euler(), SolverConfig::rf2()] {
                let rec = reconstruct(&field, &scalar(z), &grid, &cfg, &()).unwrap();
                prop_assert!((rec.latent[[0, 0]] - z).abs() <= 1e-10);
            }
        }
    }
}
