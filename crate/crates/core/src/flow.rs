//! Semi-implicit gradient flow with linearized nodal arclength constraints.
//!
//! One step computes the velocity `w = d_t u` from
//!
//! ```text
//! (M + τκK + (τ/ε) C) w + Bᵀλ = −κK u − (1/ε) C (u − c) − (1/(2ε)) g(u),   B w = 0
//! ```
//!
//! where `M` is the Hermite mass matrix, `K` the bending stiffness, `C` the
//! lumped quadratic confinement operator, `g` the lumped gradient of the
//! concave penalty part and `B` holds the nodal tangents. The update is
//! `u ← u + τ w`. Because the concave part is taken explicitly and the
//! convex part implicitly, the discrete energy
//! `κ/2 uᵀKu + (1/ε) Σ β_i V(u_i)` decays for every `τ`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::confinement::CompositeConfinement;
use crate::curve_model::{dof_map, BoundaryCondition, DofMap};
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::saddle::{node_sequence, ConstraintRow, SaddleOperator, SaddleSolution, SolveMethod};
use crate::spline::{apply_componentwise, assemble, componentwise_quad_form, Assembly, DiscreteCurve, Mesh, DOFS_PER_NODE};

pub const DEFAULT_KAPPA: f64 = 10.0;
pub const DEFAULT_TAU_FACTOR: f64 = 0.1;
pub const DEFAULT_STOP_TOL: f64 = 1e-5;
pub const DEFAULT_SNAPSHOT_EVERY: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Bending rigidity.
    pub kappa: f64,
    /// Penalty scale.
    pub epsilon: f64,
    /// Time step.
    pub tau: f64,
    pub max_steps: usize,
    /// Stop once `‖d_t u‖_⋆ ≤ stop_tol`.
    pub stop_tol: f64,
    pub snapshot_every: usize,
    pub method: SolveMethod,
}

impl FlowParams {
    /// `κ = 10`, `ε = 1/(10κ)`, `τ = 0.1 h`.
    pub fn defaults_for(h: f64) -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            epsilon: 1.0 / (10.0 * DEFAULT_KAPPA),
            tau: DEFAULT_TAU_FACTOR * h,
            max_steps: 100_000,
            stop_tol: DEFAULT_STOP_TOL,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            method: SolveMethod::Direct,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("epsilon", self.epsilon), ("tau", self.tau), ("stop_tol", self.stop_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, msg: format!("must be positive, got {v}") });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub step: usize,
    pub time: f64,
    pub e_bend: f64,
    pub e_conf: f64,
    pub e_total: f64,
    pub dtu_norm: f64,
    pub arclen_violation: f64,
    pub max_penetration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stationary,
    StepBudget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub bend: f64,
    pub conf: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.bend + self.conf
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub curve: DiscreteCurve,
    pub k: usize,
    pub history: Vec<EnergyRecord>,
    /// Per node `Σ_k τ² |[d_t u^k]'(x_i)|²`.
    pub accumulated: Vec<f64>,
    /// Velocity of the last step (global DOFs).
    pub last_velocity: Option<Vec<f64>>,
    pub last_multipliers: Vec<f64>,
    pub termination: Option<Termination>,
}

impl FlowState {
    pub fn last_record(&self) -> &EnergyRecord {
        self.history.last().expect("history starts with the initial record")
    }

    /// `τ Σ_k ‖d_t u^k‖²_⋆` over the recorded steps.
    pub fn dissipated(&self, tau: f64) -> f64 {
        self.history.iter().skip(1).map(|r| tau * r.dtu_norm * r.dtu_norm).sum()
    }
}

/// Saddle-point system of one step.
#[derive(Debug)]
pub struct StepSystem<'a> {
    pub operator: &'a SaddleOperator,
    pub rows: Vec<ConstraintRow>,
    pub rhs: Vec<f64>,
}

impl StepSystem<'_> {
    pub fn solve(&self, method: SolveMethod) -> Result<SaddleSolution> {
        self.operator.solve(&self.rows, &self.rhs, method)
    }

    pub fn residuals(&self, sol: &SaddleSolution) -> (f64, f64) {
        self.operator.residuals(&self.rows, &self.rhs, sol)
    }
}

/// `M + τκK + (τ/ε) Σ_r C_r` on the free DOFs.
pub fn build_constant_operator(assembly: &Assembly, dofs: &DofMap, conf: &CompositeConfinement, params: &FlowParams) -> CsrMatrix {
    let scale = params.tau * params.kappa;
    let mut triplets = Vec::new();
    let mut push = |r: usize, c: usize, v: f64| {
        if let (Some(r), Some(c)) = (dofs.free(r), dofs.free(c)) {
            triplets.push((r, c, v));
        }
    };
    for s in 0..assembly.mass.nrows() {
        let stiff = assembly.stiffness.row(s);
        for (t, v) in assembly.mass.row(s) {
            for c in 0..3 {
                push(3 * s + c, 3 * t + c, v);
            }
        }
        for (t, v) in stiff {
            for c in 0..3 {
                push(3 * s + c, 3 * t + c, scale * v);
            }
        }
    }
    let penalty = params.tau / params.epsilon;
    for (i, beta) in assembly.lumped.iter().enumerate() {
        for part in conf.parts() {
            let g = part.metric();
            for a in 0..3 {
                for b in 0..3 {
                    if g[(a, b)] != 0.0 {
                        push(DOFS_PER_NODE * i + a, DOFS_PER_NODE * i + b, penalty * beta * g[(a, b)]);
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(dofs.n_free(), dofs.n_free(), triplets)
}

/// Everything that stays fixed during a flow: operators, DOF map and the
/// cached step matrix.
#[derive(Debug)]
pub struct FlowSolver {
    mesh: Mesh,
    assembly: Assembly,
    dofs: DofMap,
    conf: CompositeConfinement,
    params: FlowParams,
    operator: SaddleOperator,
    constrained: Vec<usize>,
}

impl FlowSolver {
    pub fn new(mesh: &Mesh, bc: &BoundaryCondition, conf: CompositeConfinement, params: FlowParams) -> Result<Self> {
        params.validate()?;
        let assembly = assemble(mesh)?;
        let dofs = dof_map(mesh, bc)?;
        let matrix = build_constant_operator(&assembly, &dofs, &conf, &params);
        let node_of = dofs.free_indices().iter().map(|g| g / DOFS_PER_NODE).collect();
        let operator = SaddleOperator::new(matrix, node_of, node_sequence(mesh.n_nodes(), mesh.closed()));
        let constrained = (0..mesh.n_nodes()).filter(|&i| dofs.tangent_free(i)).collect();
        Ok(Self { mesh: mesh.clone(), assembly, dofs, conf, params, operator, constrained })
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    pub fn assembly(&self) -> &Assembly {
        &self.assembly
    }

    pub fn dof_map(&self) -> &DofMap {
        &self.dofs
    }

    pub fn confinement(&self) -> &CompositeConfinement {
        &self.conf
    }

    pub fn operator(&self) -> &SaddleOperator {
        &self.operator
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn energies(&self, curve: &DiscreteCurve) -> Energies {
        let bend = curve.bending_energy(self.params.kappa);
        let conf = self
            .assembly
            .lumped
            .iter()
            .enumerate()
            .map(|(i, beta)| beta * self.conf.potential(&curve.position(i)))
            .sum::<f64>()
            / self.params.epsilon;
        Energies { bend, conf }
    }

    pub fn max_penetration(&self, curve: &DiscreteCurve) -> f64 {
        (0..curve.n_nodes()).map(|i| self.conf.penetration(&curve.position(i))).fold(0.0, f64::max)
    }

    /// Lumped confinement force `(1/ε) C (u − c) + (1/(2ε)) g(u)` on global DOFs.
    fn confinement_load(&self, curve: &DiscreteCurve) -> Vec<f64> {
        let eps = self.params.epsilon;
        let mut load = vec![0.0; curve.dofs().len()];
        for (i, beta) in self.assembly.lumped.iter().enumerate() {
            let y = curve.position(i);
            let mut f = Vector3::zeros();
            for part in self.conf.parts() {
                f += part.metric() * (y - part.center()) / eps + part.grad_concave_part(&y) / (2.0 * eps);
            }
            load[DOFS_PER_NODE * i..DOFS_PER_NODE * i + 3].copy_from_slice((f * *beta).as_slice());
        }
        load
    }

    /// Gradient of the discrete energy with respect to the global DOFs.
    pub fn energy_gradient(&self, curve: &DiscreteCurve) -> Vec<f64> {
        let mut grad = apply_componentwise(&self.assembly.stiffness, curve.dofs());
        let load = self.confinement_load(curve);
        for (g, l) in grad.iter_mut().zip(load) {
            *g = self.params.kappa * *g + l;
        }
        grad
    }

    fn record(&self, state: &FlowState, dtu_norm: f64) -> EnergyRecord {
        let e = self.energies(&state.curve);
        EnergyRecord {
            step: state.k,
            time: state.k as f64 * self.params.tau,
            e_bend: e.bend,
            e_conf: e.conf,
            e_total: e.total(),
            dtu_norm,
            arclen_violation: state.curve.arclength_violation(),
            max_penetration: self.max_penetration(&state.curve),
        }
    }

    /// Wraps an initial curve; prescribed boundary values are imposed.
    pub fn start(&self, mut curve: DiscreteCurve) -> Result<FlowState> {
        if curve.mesh() != &self.mesh {
            return Err(Error::InvalidCurve("curve mesh differs from the solver mesh".into()));
        }
        self.dofs.impose(&mut curve);
        let n = curve.n_nodes();
        let mut state = FlowState {
            curve,
            k: 0,
            history: Vec::new(),
            accumulated: vec![0.0; n],
            last_velocity: None,
            last_multipliers: Vec::new(),
            termination: None,
        };
        let rec = self.record(&state, 0.0);
        state.history.push(rec);
        Ok(state)
    }

    pub fn build_step(&self, state: &FlowState) -> Result<StepSystem<'_>> {
        let curve = &state.curve;
        let mut rows = Vec::with_capacity(self.constrained.len());
        for &i in &self.constrained {
            let d = curve.tangent(i);
            let norm = d.norm();
            if !(norm >= 0.5) {
                return Err(Error::DegenerateConstraint { node: i, norm });
            }
            let cols = std::array::from_fn(|c| self.dofs.free(DOFS_PER_NODE * i + 3 + c).expect("tangent DOF is free"));
            rows.push(ConstraintRow { node: i, cols, coeffs: [d.x, d.y, d.z] });
        }
        let grad = self.energy_gradient(curve);
        let rhs = self.dofs.restrict(&grad).into_iter().map(|g| -g).collect();
        Ok(StepSystem { operator: &self.operator, rows, rhs })
    }

    /// Performs one step and appends its energy record.
    pub fn advance(&self, state: &mut FlowState) -> Result<()> {
        let system = self.build_step(state)?;
        let sol = system.solve(self.params.method)?;
        let w = self.dofs.extend(&sol.w);
        let tau = self.params.tau;
        for (u, v) in state.curve.dofs_mut().iter_mut().zip(&w) {
            *u += tau * v;
        }
        for (i, acc) in state.accumulated.iter_mut().enumerate() {
            let dw = Vector3::from_column_slice(&w[DOFS_PER_NODE * i + 3..DOFS_PER_NODE * i + 6]);
            *acc += tau * tau * dw.norm_squared();
        }
        state.k += 1;
        let dtu_norm = componentwise_quad_form(&self.assembly.mass, &w).max(0.0).sqrt();
        let rec = self.record(state, dtu_norm);
        let before = state.last_record().e_total;
        let initial = state.history[0].e_total;
        state.history.push(rec);
        state.last_velocity = Some(w);
        state.last_multipliers = sol.lambda;
        if rec.e_total > before + 1e-12 * (1.0 + initial) {
            return Err(Error::StabilityFailure { step: state.k, before, after: rec.e_total });
        }
        Ok(())
    }

    /// Iterates until the velocity norm drops below `stop_tol` or the step
    /// budget is exhausted. `observer` sees the state after every step.
    pub fn run(&self, mut state: FlowState, mut observer: impl FnMut(&FlowState) -> Result<()>) -> Result<FlowState> {
        loop {
            if state.k >= self.params.max_steps {
                state.termination = Some(Termination::StepBudget);
                return Ok(state);
            }
            self.advance(&mut state)?;
            observer(&state)?;
            if state.last_record().dtu_norm <= self.params.stop_tol {
                state.termination = Some(Termination::Stationary);
                return Ok(state);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confinement::{build, ConfinementKind, SimpleConfinement};
    use crate::curve_model::{discrete_circle, generate, perturb_positions, AnalyticCurve, CurveFamily};
    use nalgebra::Matrix3;
    use std::f64::consts::TAU;

    fn circle(length: f64, n: usize) -> DiscreteCurve {
        generate(&AnalyticCurve { family: CurveFamily::Circle { radius: 1.0, turns: 1 }, length }, n).unwrap()
    }

    fn ball(r: f64) -> CompositeConfinement {
        build(&ConfinementKind::Ball { radius: r }, None).unwrap()
    }

    #[test]
    fn inactive_confinement_leaves_mass_plus_stiffness() {
        let curve = circle(TAU, 12);
        let params = FlowParams::defaults_for(curve.mesh().max_element_length());
        let zero = CompositeConfinement::new(vec![SimpleConfinement::quadratic(Matrix3::zeros()).unwrap()]).unwrap();
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, zero, params.clone()).unwrap();
        let a = solver.operator().matrix().to_dense();
        let asm = solver.assembly();
        for s in 0..asm.mass.nrows() {
            for t in 0..asm.mass.ncols() {
                let expected = asm.mass.get(s, t) + params.tau * params.kappa * asm.stiffness.get(s, t);
                for c in 0..3 {
                    assert_eq!(a[(3 * s + c, 3 * t + c)], expected);
                }
            }
        }
    }

    #[test]
    fn inside_confinement_exerts_no_force() {
        let curve = circle(TAU, 20);
        let params = FlowParams::defaults_for(curve.mesh().max_element_length());
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(2.0), params).unwrap();
        let load = solver.confinement_load(&curve);
        assert!(load.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stationary_circle() {
        let curve = discrete_circle(60, TAU, 1).unwrap();
        let params = FlowParams::defaults_for(curve.mesh().max_element_length());
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(3.0), params).unwrap();
        let mut state = solver.start(curve.clone()).unwrap();
        let system = solver.build_step(&state).unwrap();
        let sol = system.solve(SolveMethod::Direct).unwrap();
        let (primal, constraint) = system.residuals(&sol);
        assert!(primal < 1e-10 && constraint < 1e-10);
        solver.advance(&mut state).unwrap();
        assert!(state.last_record().dtu_norm < 1e-8, "{}", state.last_record().dtu_norm);
        let diff = state.curve.dofs().iter().zip(curve.dofs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8);
    }

    #[test]
    fn run_budget_and_stationary() {
        let curve = circle(TAU, 30);
        let mut params = FlowParams::defaults_for(curve.mesh().max_element_length());
        params.max_steps = 0;
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(5.0), params.clone()).unwrap();
        let state = solver.run(solver.start(curve.clone()).unwrap(), |_| Ok(())).unwrap();
        assert_eq!(state.termination, Some(Termination::StepBudget));
        assert_eq!(state.k, 0);
        assert_eq!(state.curve, curve);

        params.max_steps = 10;
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(5.0), params).unwrap();
        let state = solver.run(solver.start(discrete_circle(30, TAU, 1).unwrap()).unwrap(), |_| Ok(())).unwrap();
        assert_eq!(state.termination, Some(Termination::Stationary));
        assert_eq!(state.k, 1);
    }

    #[test]
    fn degenerate_tangent_rejected() {
        let mut curve = circle(TAU, 16);
        let d = curve.tangent(5);
        curve.set_tangent(5, d * 0.25);
        let params = FlowParams::defaults_for(curve.mesh().max_element_length());
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(5.0), params).unwrap();
        let state = solver.start(curve).unwrap();
        assert!(matches!(solver.build_step(&state), Err(Error::DegenerateConstraint { node: 5, .. })));
    }

    #[test]
    fn invalid_params_rejected() {
        let curve = circle(TAU, 16);
        let mut params = FlowParams::defaults_for(0.1);
        params.epsilon = 0.0;
        assert!(FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(1.0), params).is_err());
    }

    #[test]
    fn operator_is_step_invariant() {
        let curve = generate(&AnalyticCurve { family: CurveFamily::torus_knot(2, 3), length: 31.9 }, 40).unwrap();
        let mut params = FlowParams::defaults_for(curve.mesh().max_element_length());
        params.max_steps = 100;
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(4.6), params).unwrap();
        let before = solver.operator().matrix().clone();
        let _ = solver.run(solver.start(curve).unwrap(), |_| Ok(())).unwrap();
        assert_eq!(&before, solver.operator().matrix());
    }

    #[test]
    fn clamped_segment_flow_keeps_endpoints() {
        // a bent open arc clamped at its ends relaxes without moving them
        let n = 20;
        let mesh = Mesh::uniform(n, 3.0, false).unwrap();
        let samples: Vec<_> = (0..=n)
            .map(|i| {
                let s = mesh.node(i) / 2.0;
                (nalgebra::Vector3::new(2.0 * s.sin(), 2.0 * (1.0 - s.cos()), 0.0), Vector3::new(s.cos(), s.sin(), 0.0))
            })
            .collect();
        let curve = crate::spline::interpolate(&mesh, &samples).unwrap();
        let bc = BoundaryCondition::clamped_at(&curve);
        let mut params = FlowParams::defaults_for(mesh.max_element_length());
        params.max_steps = 20;
        let solver = FlowSolver::new(&mesh, &bc, ball(10.0), params).unwrap();
        let state = solver.run(solver.start(curve.clone()).unwrap(), |_| Ok(())).unwrap();
        for node in [0, n] {
            assert_eq!(state.curve.position(node), curve.position(node));
            assert_eq!(state.curve.tangent(node), curve.tangent(node));
        }
        let energies: Vec<f64> = state.history.iter().map(|r| r.e_total).collect();
        assert!(energies.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + energies[0])));
    }

    #[test]
    fn interpolated_circle_relaxes_onto_discrete_circle() {
        let n = 60;
        let curve = circle(TAU, n);
        let params = FlowParams { max_steps: 20, stop_tol: 1e-9, ..FlowParams::defaults_for(TAU / n as f64) };
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(3.0), params).unwrap();
        let state = solver.run(solver.start(curve).unwrap(), |_| Ok(())).unwrap();
        assert_eq!(state.termination, Some(Termination::Stationary));
        assert!(state.k <= 8, "took {} steps", state.k);
        let target = discrete_circle(n, TAU, 1).unwrap();
        for i in 0..n {
            assert!((state.curve.position(i).norm() - target.position(0).norm()).abs() < 1e-8);
            assert!(state.curve.position(i).z.abs() < 1e-12);
        }
    }

    fn trefoil_solver(n: usize, radius: f64) -> (DiscreteCurve, FlowSolver) {
        let length = 31.9;
        let curve = generate(&AnalyticCurve { family: CurveFamily::torus_knot(2, 3), length }, n).unwrap();
        let params = FlowParams { epsilon: 0.01, ..FlowParams::defaults_for(length / n as f64) };
        let solver = FlowSolver::new(curve.mesh(), &BoundaryCondition::Periodic, ball(radius), params).unwrap();
        (curve, solver)
    }

    #[test]
    fn trefoil_step_schur_matches_direct() {
        let (curve, solver) = trefoil_solver(107, 2.5);
        assert!(solver.operator().min_pivot().unwrap() > 0.0);
        let state = solver.start(curve).unwrap();
        assert!(state.history[0].max_penetration > 0.0);
        let system = solver.build_step(&state).unwrap();
        let direct = system.solve(SolveMethod::Direct).unwrap();
        let schur = system.solve(SolveMethod::Schur).unwrap();
        let scale = direct.w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = direct.w.iter().zip(&schur.w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-10 * scale, "diff {diff} scale {scale}");
        for sol in [&direct, &schur] {
            let (primal, constraint) = system.residuals(sol);
            assert!(primal < 1e-9 && constraint < 1e-12, "{primal} {constraint}");
        }
    }

    #[test]
    fn energy_gradient_matches_central_differences() {
        let (mut curve, solver) = trefoil_solver(24, 2.0);
        perturb_positions(&mut curve, solver.dof_map(), 0.2, 3);
        assert!(solver.max_penetration(&curve) > 0.0);
        let grad = solver.energy_gradient(&curve);
        let step = 1e-6;
        for (j, g) in grad.iter().enumerate() {
            let mut plus = curve.clone();
            plus.dofs_mut()[j] += step;
            let mut minus = curve.clone();
            minus.dofs_mut()[j] -= step;
            let fd = (solver.energies(&plus).total() - solver.energies(&minus).total()) / (2.0 * step);
            assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "dof {j}: {g} vs {fd}");
        }
    }
}
