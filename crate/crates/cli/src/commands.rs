//! Subcommand implementations. Each one computes, writes CSV artifacts into
//! the run directory and records reported numbers and checks.

use std::io::Write;

use stochabs_core::abstraction::validate_mdp;
use stochabs_core::barrier::{check_cbc, kushner_bound};
use stochabs_core::bounds::{
    grid_abstraction_ssf, lambda1, lambda2, lipschitz_constants, verify_quadratic_ssf, BoundKind, PowerForm,
};
use stochabs_core::linalg::{Mat, Vector};
use stochabs_core::network::{
    abstract_subsystems, compose_error_max, compose_error_sum, small_gain_max, small_gain_sum, subsystem_grid_ssf,
    OutputNorm, SubsystemSsf,
};
use stochabs_core::sim::{
    empirical_probability, simulate, validate_kushner, validate_pro2, validate_pro4, BoundValidation, Controller,
    CoupledAbstraction, InitialState,
};
use stochabs_core::synthesis::{refine_policy, value_iterate, SynthesisOptions};
use stochabs_core::{
    abstract_system, BarrierCertificate, ClosenessReport, ConcreteController, Error, FiniteMdp, Grid, HorizonSpec,
    HyperRect, InputSet, Interconnection, LinearDtScs, Polynomial, ProductPolicy, QuadraticSsf, Result, SsfParams,
    Subsystem, ValueFunction,
};

use crate::config::{matrix, region, BarrierBlock, GridBlock, NetworkBlock, RunConfig, SimBlock};
use crate::output::{Artifacts, Provenance};

pub(crate) fn io_err(e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("writing artifacts: {e}"))
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Parse(format!("missing [{what}] block")))
}

fn model(cfg: &RunConfig) -> Result<LinearDtScs> {
    need(&cfg.model, "model")?.build()
}

fn output_map(m: &LinearDtScs) -> Option<Mat> {
    let c = m.c();
    (!(c.is_square() && *c == Mat::identity(c.nrows(), c.ncols()))).then(|| c.clone())
}

pub fn build_abstraction(m: &LinearDtScs, g: &GridBlock) -> Result<(FiniteMdp, Grid, InputSet)> {
    let grid = g.state_grid()?;
    let inputs = g.inputs()?;
    let mdp = abstract_system(m, &grid, &inputs, &g.options()?)?;
    Ok((mdp, grid, inputs))
}

pub fn run_abstract(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let m = model(cfg)?;
    let (mdp, _, _) = build_abstraction(&m, need(&cfg.grid, "grid")?)?;
    let rep = validate_mdp(&mdp);
    art.write_with("mdp.csv", |w| mdp.write_csv(w)).map_err(io_err)?;
    art.report("states", mdp.num_states() as f64, Provenance::Derived);
    art.report("inputs", mdp.num_inputs() as f64, Provenance::Derived);
    art.report("entries", mdp.num_entries() as f64, Provenance::Derived);
    art.report("max_row_deviation", rep.max_deviation, Provenance::Derived);
    art.check("rows_stochastic", rep.is_valid(), format!("max |row sum - 1| = {:e}", rep.max_deviation));
    Ok(())
}

pub struct Synthesized {
    pub model: LinearDtScs,
    pub mdp: FiniteMdp,
    pub grid: Grid,
    pub inputs: InputSet,
    pub spec: HorizonSpec,
    pub values: ValueFunction,
    pub policy: ProductPolicy,
}

pub fn synthesize(cfg: &RunConfig) -> Result<Synthesized> {
    let m = model(cfg)?;
    let spec_block = need(&cfg.spec, "spec")?;
    let spec = spec_block.build()?;
    let (mdp, grid, inputs) = build_abstraction(&m, need(&cfg.grid, "grid")?)?;
    let opts = SynthesisOptions {
        output: output_map(&m),
        grid: Some(grid.clone()),
        strict: spec_block.strict,
    };
    let (values, policy) = value_iterate(&mdp, &spec, &opts)?;
    Ok(Synthesized {
        model: m,
        mdp,
        grid,
        inputs,
        spec,
        values,
        policy,
    })
}

impl Synthesized {
    pub fn controller(&self, fallback: Option<Vec<f64>>) -> Result<ConcreteController> {
        let reps = self.inputs.representatives();
        let fallback = fallback.unwrap_or_else(|| reps[0].clone());
        refine_policy(
            self.policy.clone(),
            self.grid.clone(),
            reps,
            self.spec.automaton()?,
            output_map(&self.model),
            stochabs_core::bounds::Interface::Identity,
            fallback,
        )
    }

    /// Abstract value of the cell containing `x0` (0 outside the grid).
    pub fn value_at(&self, x0: &[f64]) -> f64 {
        self.grid.cell_of(x0).map_or(0.0, |c| self.values.initial(c))
    }
}

pub fn run_synthesize(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let s = synthesize(cfg)?;
    art.write_with("values.csv", |w| s.values.write_csv(w)).map_err(io_err)?;
    let mut buf = Vec::new();
    s.policy.write_csv(&mut buf, &s.mdp, &s.values)?;
    art.write_with("policy.csv", |w| w.write_all(&buf)).map_err(io_err)?;
    let init = s.values.initial_values();
    art.note(crate::config::spec_summary(&s.spec));
    art.report("value_max", init.iter().copied().fold(0.0, f64::max), Provenance::Derived);
    art.report("value_min", init.iter().copied().fold(1.0, f64::min), Provenance::Derived);
    art.report("policy_slices", s.policy.stored_slices() as f64, Provenance::Derived);
    if let Some(x0) = cfg.sim.as_ref().and_then(|b| b.x0.as_ref()) {
        art.report("value_at_x0", s.value_at(x0), Provenance::Derived);
    }
    art.check(
        "value_invariants",
        s.values.check_invariants(1e-12).is_ok(),
        "values in [0,1], monotone in the horizon where required",
    );
    Ok(())
}

fn write_reports(art: &mut Artifacts, reports: &[ClosenessReport]) -> Result<()> {
    let mut main = String::from("kind,value,epsilon,horizon,branch\n");
    let mut consts = String::from("kind,name,value\n");
    for r in reports {
        main.push_str(&format!(
            "{},{:.16e},{},{},{}\n",
            r.kind.name(),
            r.value,
            r.epsilon.map(|e| format!("{e:.16e}")).unwrap_or_default(),
            r.horizon.map(|t| t.to_string()).unwrap_or_default(),
            r.branch.clone().unwrap_or_default()
        ));
        for (k, v) in &r.constants {
            consts.push_str(&format!("{},{k},{v:.16e}\n", r.kind.name()));
        }
    }
    art.write_text("bounds.csv", &main).map_err(io_err)?;
    art.write_text("bound_constants.csv", &consts).map_err(io_err)
}

pub fn run_bounds(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let b = need(&cfg.bounds, "bounds")?;
    let mut reports = Vec::new();
    if let Some(l1) = &b.lambda1 {
        let kind = match l1.kind.as_str() {
            "lambda1" => BoundKind::Lambda1,
            "lambda1_bar" => BoundKind::Lambda1Bar,
            "two_lambda1_bar" => BoundKind::TwoLambda1Bar,
            other => return Err(Error::Parse(format!("unknown lambda1 kind '{other}'"))),
        };
        let (constant, prov) = match l1.constant {
            Some(c) => (c, Provenance::Input),
            None => {
                let lip = lipschitz_constants(&model(cfg)?, l1.input.as_deref())?;
                (if kind == BoundKind::Lambda1 { lip.h } else { lip.h_bar }, Provenance::Derived)
            }
        };
        let delta = match l1.delta {
            Some(d) => d,
            None => need(&cfg.grid, "grid")?.state_grid()?.delta(),
        };
        let measure = cfg.grid.as_ref().map(|g| g.state_grid().map(|g| g.domain().volume())).transpose()?;
        let l_b = l1.l_b.or(measure).unwrap_or(1.0);
        let r = lambda1(kind, constant, delta, l1.horizon, l_b)?;
        art.report(if kind == BoundKind::Lambda1 { "H" } else { "H_bar" }, constant, prov);
        art.report("L_b", l_b, if l1.l_b.is_some() { Provenance::Input } else { Provenance::Derived });
        art.report(kind.name(), r.value, Provenance::Derived);
        // the other normalization of the domain measure, for comparison
        let alt = if l_b == 1.0 { measure } else { Some(1.0) };
        if let Some(alt) = alt.filter(|a| *a != l_b) {
            let name = format!("{}_at_L_b_{}", kind.name(), crate::output::human(alt));
            art.report(&name, lambda1(kind, constant, delta, l1.horizon, alt)?.value, Provenance::Derived);
        }
        reports.push(r);
    }
    if let Some(l2) = &b.lambda2 {
        let params = SsfParams::new(
            PowerForm {
                coef: l2.k_alpha,
                exp: l2.alpha_exp,
            },
            l2.kappa,
            l2.rho_coef.map(|coef| PowerForm { coef, exp: l2.rho_exp }),
            l2.psi,
        )?;
        let r = lambda2(&params, l2.v0, l2.u_sup, l2.epsilon, l2.horizon)?;
        art.report("lambda2", r.value, Provenance::Derived);
        reports.push(r);
    }
    if let Some(q) = &b.quadratic {
        let concrete = model(cfg)?;
        let abs = q.abstraction.build()?;
        let cand = QuadraticSsf {
            m: matrix(&q.M, "M")?,
            p: matrix(&q.P, "P")?,
            k: matrix(&q.K, "K")?,
            q: matrix(&q.Q, "Q")?,
            pi: q.pi,
            kappa_hat: q.kappa_hat,
        };
        let v = verify_quadratic_ssf(&concrete, &abs, &cand)?;
        let mut csv = String::from("condition,holds,margin\n");
        for c in &v.conditions {
            csv.push_str(&format!("{},{},{:.16e}\n", c.name, c.holds, c.margin));
            art.check(c.name, c.holds, format!("margin {:e}", c.margin));
        }
        art.write_text("ssf_conditions.csv", &csv).map_err(io_err)?;
        if let Some(p) = &v.params {
            art.report("ssf_kappa", p.kappa, Provenance::Derived);
            art.report("ssf_psi", p.psi, Provenance::Derived);
            art.report("ssf_k_alpha", p.alpha.coef, Provenance::Derived);
            if let (Some(eps), Some(t)) = (q.epsilon, q.horizon) {
                let r = lambda2(p, 0.0, q.u_sup, eps, t)?;
                art.report("lambda2", r.value, Provenance::Derived);
                reports.push(r);
            }
        }
    }
    if let Some(g) = &b.grid_ssf {
        let m = model(cfg)?;
        let gb = need(&cfg.grid, "grid")?;
        let grid = gb.state_grid()?;
        let params = grid_abstraction_ssf(&m, &grid, &gb.inputs()?.representatives(), g.pi)?;
        // initial quantization error |x0 - x̂0|² ≤ Σ w²/4
        let v0: f64 = (0..grid.dim()).map(|d| grid.width(d).powi(2) / 4.0).sum();
        art.report("grid_ssf_kappa", params.kappa, Provenance::Derived);
        art.report("grid_ssf_psi", params.psi, Provenance::Derived);
        let r = lambda2(&params, v0, 0.0, g.epsilon, g.horizon)?;
        art.report("lambda2_grid", r.value, Provenance::Derived);
        reports.push(r);
    }
    if reports.is_empty() && b.quadratic.is_none() {
        return Err(Error::Parse("[bounds] needs at least one of lambda1, lambda2, quadratic, grid_ssf".into()));
    }
    write_reports(art, &reports)
}

pub fn barrier_certificate(b: &BarrierBlock, m: &LinearDtScs) -> Result<BarrierCertificate> {
    let poly = match (&b.coefficients, &b.terms) {
        (Some(c), None) => Polynomial::univariate(c)?,
        (None, Some(t)) => Polynomial::new(m.state_dim(), t.iter().map(|t| (t.powers.clone(), t.coef)).collect())?,
        _ => return Err(Error::Parse("[barrier] needs exactly one of coefficients, terms".into())),
    };
    let controller = match (&b.controller_gain, &b.controller_offset) {
        (Some(g), Some(o)) => Some((matrix(g, "controller_gain")?, Vector::from_vec(o.clone()))),
        (None, None) => None,
        _ => return Err(Error::Parse("controller_gain and controller_offset go together".into())),
    };
    BarrierCertificate::new(poly, controller, b.eta, b.beta, b.kappa, b.c)
}

pub fn run_verify_barrier(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let m = model(cfg)?;
    let b = need(&cfg.barrier, "barrier")?;
    let cert = barrier_certificate(b, &m)?;
    let rep = check_cbc(
        &cert,
        &m,
        &region(&b.initial)?,
        &region(&b.unsafe_set)?,
        &region(&b.domain)?,
        b.spacing,
        b.lipschitz,
    )?;
    let mut csv = String::from("condition,holds,worst_margin,points,worst_point\n");
    for c in &rep.conditions {
        let pt: Vec<String> = c.worst_point.iter().map(|v| format!("{v:.16e}")).collect();
        csv.push_str(&format!("{},{},{:.16e},{},{}\n", c.name, c.holds, c.worst_margin, c.points, pt.join(" ")));
        art.check(c.name, c.holds, format!("worst margin {:e} over {} points", c.worst_margin, c.points));
    }
    art.write_text("barrier_conditions.csv", &csv).map_err(io_err)?;
    let kb = kushner_bound(b.eta, b.beta, b.kappa, b.c, b.horizon)?;
    let mut kcsv = String::from("branch,value,selected\n");
    for (name, v) in &kb.candidates {
        kcsv.push_str(&format!("{name},{v:.16e},{}\n", *name == kb.branch));
    }
    art.write_text("kushner.csv", &kcsv).map_err(io_err)?;
    art.report("delta_bar", kb.value, Provenance::Derived);
    art.report("safety_lower_bound", 1.0 - kb.value, Provenance::Derived);
    if !rep.continuum_certified {
        art.note("grid check only; pass lipschitz constants to certify the continuum");
    }
    Ok(())
}

pub struct Composed {
    pub net: Interconnection,
    pub ssfs: Vec<SubsystemSsf>,
}

pub fn build_network(n: &NetworkBlock) -> Result<Interconnection> {
    let r = n.room;
    match n.topology.as_str() {
        "ring" => Interconnection::ring(Subsystem::room(r.theta, r.gamma, r.t_heater, r.t_ext, r.sigma, r.noise, 2)?, n.subsystems),
        "explicit" => {
            let m = matrix(n.coupling.as_ref().ok_or_else(|| Error::Parse("explicit topology needs a coupling matrix".into()))?, "coupling")?;
            if n.subsystems == 0 || m.nrows() % n.subsystems != 0 {
                return Err(Error::Parse("coupling rows must be a multiple of the subsystem count".into()));
            }
            let ports = m.nrows() / n.subsystems;
            let sub = Subsystem::room(r.theta, r.gamma, r.t_heater, r.t_ext, r.sigma, r.noise, ports)?;
            Interconnection::from_matrix(vec![sub; n.subsystems], &m)
        }
        other => Err(Error::Parse(format!("unknown topology '{other}'"))),
    }
}

fn network_grids(n: &NetworkBlock, sub: &Subsystem) -> Result<(Grid, Grid, InputSet)> {
    let sg = Grid::new(HyperRect::interval(n.state_lower, n.state_upper)?, vec![n.state_cells])?;
    let p = sub.internal_inputs();
    let ig = Grid::new(
        HyperRect::new(vec![n.state_lower; p], vec![n.state_upper; p])?,
        vec![n.internal_cells; p],
    )?;
    Ok((sg, ig, InputSet::linspace(n.input_lower, n.input_upper, n.input_count)?))
}

pub fn run_compose(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let n = need(&cfg.network, "network")?;
    let net = build_network(n)?;
    let composed = net.interconnect()?;
    let mut a_csv = String::from("row,col,value\n");
    let a = composed.a();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if a[(i, j)] != 0.0 {
                a_csv.push_str(&format!("{i},{j},{:.16e}\n", a[(i, j)]));
            }
        }
    }
    art.write_text("composed_a.csv", &a_csv).map_err(io_err)?;

    let mut ssfs = Vec::with_capacity(net.len());
    let mut grids = Vec::with_capacity(net.len());
    for sub in net.subsystems() {
        let (sg, ig, ext) = network_grids(n, sub)?;
        let ssf = match n.ssf {
            Some(s) => SubsystemSsf {
                params: SsfParams::quadratic(s.k_alpha, s.kappa, s.psi)?,
                rho_int: s.rho_int,
            },
            None => subsystem_grid_ssf(sub, &sg, Some(&ig), &ext.representatives(), n.pi1, n.pi2)?,
        };
        ssfs.push(ssf);
        grids.push((sg, ig, ext));
    }
    let prov = if n.ssf.is_some() { Provenance::Input } else { Provenance::Derived };
    art.report("subsystem_kappa_max", ssfs.iter().map(|s| s.params.kappa).fold(0.0, f64::max), prov);
    art.report("subsystem_psi_max", ssfs.iter().map(|s| s.params.psi).fold(0.0, f64::max), prov);
    let gains = net.gains(&ssfs)?;
    let max = small_gain_max(&gains);
    let sum = small_gain_sum(&gains.g)?;
    art.report("max_cycle_gain_product", max.max_cycle_product, Provenance::Derived);
    art.report("gain_spectral_radius", sum.rho, Provenance::Derived);
    art.note(format!("cycle check method: {}", max.method));
    let witness: Vec<String> = max.witness.iter().map(|w| w.to_string()).collect();
    art.check(
        "small_gain_max",
        max.holds,
        format!("largest cycle product {} on cycle [{}]", max.max_cycle_product, witness.join(" ")),
    );
    art.check("small_gain_sum", sum.holds, format!("spectral radius {}", sum.rho));
    let mut gcsv = String::from("i,j,gain\n");
    for i in 0..gains.len() {
        for j in 0..gains.len() {
            if gains.g[(i, j)] != 0.0 {
                gcsv.push_str(&format!("{i},{j},{:.16e}\n", gains.g[(i, j)]));
            }
        }
    }
    art.write_text("gains.csv", &gcsv).map_err(io_err)?;

    let params = match n.composition.as_str() {
        "max" => {
            let norm = match n.norm.as_str() {
                "max" => OutputNorm::Max,
                "euclidean" => OutputNorm::Euclidean,
                other => return Err(Error::Parse(format!("unknown norm '{other}'"))),
            };
            compose_error_max(&ssfs, &gains, norm)?
        }
        "sum" => compose_error_sum(&ssfs, &gains, &vec![1.0; net.len()])?,
        other => return Err(Error::Parse(format!("unknown composition '{other}'"))),
    };
    let l2 = lambda2(&params, 0.0, 0.0, n.epsilon, n.horizon)?;
    art.report("network_kappa", params.kappa, Provenance::Derived);
    art.report("network_psi", params.psi, Provenance::Derived);
    art.report("network_lambda2", l2.value, Provenance::Derived);
    art.report("network_guarantee", 1.0 - l2.value, Provenance::Derived);
    art.write_text(
        "network.csv",
        &format!(
            "subsystems,composition,kappa,psi,k_alpha,epsilon,horizon,lambda2,branch\n{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}\n",
            net.len(),
            n.composition,
            params.kappa,
            params.psi,
            params.alpha.coef,
            n.epsilon,
            n.horizon,
            l2.value,
            l2.branch.clone().unwrap_or_default()
        ),
    )
    .map_err(io_err)?;

    if n.build_abstractions {
        let (sg, ig, ext): (Vec<_>, Vec<_>, Vec<_>) = grids.into_iter().fold((vec![], vec![], vec![]), |mut acc, g| {
            acc.0.push(g.0);
            acc.1.push(g.1);
            acc.2.push(g.2);
            acc
        });
        let summaries = abstract_subsystems(&net, &sg, &ext, &ig, &Default::default())?;
        let mut csv = String::from("subsystem,key,states,inputs,entries,max_row_deviation\n");
        for (i, s) in summaries.iter().enumerate() {
            csv.push_str(&format!("{i},{},{},{},{},{:.16e}\n", s.digest, s.states, s.inputs, s.entries, s.max_deviation));
        }
        art.write_text("subsystem_abstractions.csv", &csv).map_err(io_err)?;
        let distinct = {
            let mut d: Vec<&str> = summaries.iter().map(|s| s.digest.as_str()).collect();
            d.sort_unstable();
            d.dedup();
            d.len()
        };
        art.report("distinct_abstractions", distinct as f64, Provenance::Derived);
        let worst = summaries.iter().map(|s| s.max_deviation).fold(0.0, f64::max);
        art.check("subsystem_rows_stochastic", worst <= 1e-9, format!("max |row sum - 1| = {worst:e}"));
    }
    Ok(())
}

fn initial_state(sim: &SimBlock, fallback: Option<&HyperRect>) -> Result<InitialState> {
    match (&sim.x0, &sim.x0_box, fallback) {
        (Some(x), None, _) => Ok(InitialState::Point(x.clone())),
        (None, Some(b), _) => Ok(InitialState::Uniform(b.build()?)),
        (None, None, Some(b)) => Ok(InitialState::Uniform(b.clone())),
        _ => Err(Error::Parse("[sim] needs exactly one of x0, x0_box".into())),
    }
}

fn sim_controller(cfg: &RunConfig, sim: &SimBlock, m: &LinearDtScs) -> Result<(Controller, Option<HorizonSpec>)> {
    Ok(match sim.controller.as_str() {
        "constant" => (
            Controller::Constant(sim.input.clone().ok_or_else(|| Error::Parse("constant controller needs 'input'".into()))?),
            None,
        ),
        "affine" => (
            Controller::Affine {
                gain: matrix(sim.gain.as_ref().ok_or_else(|| Error::Parse("affine controller needs 'gain'".into()))?, "gain")?,
                offset: Vector::from_vec(sim.offset.clone().ok_or_else(|| Error::Parse("affine controller needs 'offset'".into()))?),
            },
            None,
        ),
        "barrier" => {
            let cert = barrier_certificate(need(&cfg.barrier, "barrier")?, m)?;
            let (gain, offset) = cert
                .controller
                .ok_or_else(|| Error::Parse("barrier block has no controller".into()))?;
            (Controller::Affine { gain, offset }, None)
        }
        "policy" => {
            let s = synthesize(cfg)?;
            let ctl = s.controller(sim.fallback.clone())?;
            (Controller::Refined(Box::new(ctl)), Some(s.spec))
        }
        other => return Err(Error::Parse(format!("unknown controller '{other}'"))),
    })
}

pub fn run_simulate(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let m = model(cfg)?;
    let sim = need(&cfg.sim, "sim")?;
    let (controller, synthesized_spec) = sim_controller(cfg, sim, &m)?;
    let spec = match synthesized_spec {
        Some(s) => Some(s),
        None => cfg.spec.as_ref().map(|s| s.build()).transpose()?,
    };
    let horizon = sim
        .horizon
        .or(spec.as_ref().map(|s| s.horizon))
        .or(cfg.barrier.as_ref().and_then(|b| b.horizon))
        .ok_or_else(|| Error::Parse("[sim] needs a horizon (or a [spec] block)".into()))?;
    let init = cfg.barrier.as_ref().map(|b| region(&b.initial)).transpose()?;
    let x0 = initial_state(sim, init.as_ref().and_then(|r| r.boxes().first()))?;
    let batch = simulate(&m, &controller, &x0, horizon, sim.n_traj, sim.seed)?;
    if sim.dump {
        art.write_with("trajectories.csv", |w| batch.write_csv(w)).map_err(io_err)?;
    }
    art.note(format!("controller: {}", controller.describe()));
    art.report("outside_steps", batch.outside_steps as f64, Provenance::Derived);
    if let Some(spec) = spec {
        let est = empirical_probability(&batch, &spec, output_map(&m).as_ref())?;
        art.write_text("estimate.txt", &est.to_key_value()).map_err(io_err)?;
        art.report("p_hat", est.p_hat, Provenance::Derived);
        art.report("ci_lower", est.lower, Provenance::Derived);
        art.report("ci_upper", est.upper, Provenance::Derived);
    }
    Ok(())
}

fn record_validation(art: &mut Artifacts, v: &BoundValidation) -> Result<()> {
    art.write_text("validation.txt", &v.to_key_value()).map_err(io_err)?;
    art.report("bound", v.bound, Provenance::Derived);
    art.report("empirical", v.empirical.p_hat, Provenance::Derived);
    art.report("slack", v.slack, Provenance::Derived);
    art.check(
        v.kind,
        v.passed,
        format!("empirical {} vs bound {} (slack {})", v.empirical.p_hat, v.bound, v.slack),
    );
    Ok(())
}

pub fn run_validate(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let m = model(cfg)?;
    let sim = need(&cfg.sim, "sim")?;
    let val = need(&sim.validate, "sim.validate")?;
    let v = match val.kind.as_str() {
        "kushner" => {
            let b = need(&cfg.barrier, "barrier")?;
            let cert = barrier_certificate(b, &m)?;
            let horizon = sim
                .horizon
                .or(b.horizon)
                .ok_or_else(|| Error::Parse("kushner validation needs a finite horizon".into()))?;
            let kb = kushner_bound(b.eta, b.beta, b.kappa, b.c, Some(horizon))?;
            let controller = match cert.controller {
                Some((gain, offset)) => Controller::Affine { gain, offset },
                None => Controller::Constant(sim.input.clone().ok_or_else(|| Error::Parse("need 'input' without a barrier controller".into()))?),
            };
            let init = region(&b.initial)?;
            let x0 = initial_state(sim, init.boxes().first())?;
            validate_kushner(&m, &controller, &x0, &region(&b.unsafe_set)?, kb.value, horizon, sim.n_traj, sim.seed, val.resolution)?
        }
        "pro4" => {
            let s = synthesize(cfg)?;
            let x0 = sim.x0.clone().ok_or_else(|| Error::Parse("pro4 validation needs a point x0".into()))?;
            let value = s.value_at(&x0);
            let ctl = s.controller(sim.fallback.clone())?;
            validate_pro4(&s.model, ctl, &s.spec, &x0, value, sim.n_traj, sim.seed, val.resolution)?
        }
        "pro2" => {
            let x0 = sim.x0.clone().ok_or_else(|| Error::Parse("pro2 validation needs a point x0".into()))?;
            let u = sim.input.clone().ok_or_else(|| Error::Parse("pro2 validation needs a constant 'input'".into()))?;
            let bounds = need(&cfg.bounds, "bounds")?;
            if let Some(q) = &bounds.quadratic {
                let abs = q.abstraction.build()?;
                let cand = QuadraticSsf {
                    m: matrix(&q.M, "M")?,
                    p: matrix(&q.P, "P")?,
                    k: matrix(&q.K, "K")?,
                    q: matrix(&q.Q, "Q")?,
                    pi: q.pi,
                    kappa_hat: q.kappa_hat,
                };
                let ver = verify_quadratic_ssf(&m, &abs, &cand)?;
                let params = ver
                    .params
                    .ok_or_else(|| Error::VerificationFailed("SSF conditions fail; no bound to validate".into()))?;
                let xh0 = val.x_hat0.clone().ok_or_else(|| Error::Parse("reduced-order pro2 needs x_hat0".into()))?;
                let (eps, horizon) = (
                    q.epsilon.ok_or_else(|| Error::Parse("quadratic block needs epsilon".into()))?,
                    q.horizon.ok_or_else(|| Error::Parse("quadratic block needs horizon".into()))?,
                );
                let u_sup = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                let l2 = lambda2(&params, cand.value(&x0, &xh0)?, u_sup, eps, horizon)?;
                let coupled = CoupledAbstraction::ReducedOrder {
                    model: abs,
                    interface: cand.interface(),
                };
                validate_pro2(&m, &coupled, |_, _| u.clone(), &x0, &xh0, eps, l2.value, horizon, sim.n_traj, sim.seed, val.resolution)?
            } else {
                let g = need(&bounds.grid_ssf, "bounds.grid_ssf")?;
                let gb = need(&cfg.grid, "grid")?;
                let grid = gb.state_grid()?;
                let params = grid_abstraction_ssf(&m, &grid, &gb.inputs()?.representatives(), g.pi)?;
                let cell = grid.cell_of(&x0).ok_or_else(|| Error::InvalidArgument("x0 lies outside the grid".into()))?;
                let xh0 = grid.representative(cell);
                let v0: f64 = x0.iter().zip(&xh0).map(|(a, b)| (a - b).powi(2)).sum();
                let l2 = lambda2(&params, v0, 0.0, g.epsilon, g.horizon)?;
                let coupled = CoupledAbstraction::Grid { grid };
                validate_pro2(&m, &coupled, |_, _| u.clone(), &x0, &xh0, g.epsilon, l2.value, g.horizon, sim.n_traj, sim.seed, val.resolution)?
            }
        }
        other => return Err(Error::Parse(format!("unknown validation kind '{other}'"))),
    };
    record_validation(art, &v)
}
